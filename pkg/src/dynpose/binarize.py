"""Binary pole-support codes derived from sparse coefficients.

Each pole of the dictionary gets one bit, so the code length is fixed
by the dictionary alone, never by the number of frames encoded.  A
conjugate pair's cosine/sine atoms are merged into a single bit through
their joint energy: the response phase must not affect which pole is
reported.  Gates come in a deterministic threshold flavor and a seeded
Gumbel-sigmoid flavor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary import KIND_PAIR, PoleDictionary
from .solver import SparseCode

ZERO_ONE = "zero_one"
PLUS_MINUS_ONE = "plus_minus_one"

DEFAULT_TAU_REL = 0.05
DEFAULT_FLOOR = 1e-4
DEFAULT_TEMPERATURE = 0.1
GUMBEL_ALPHA = 0.51
GUMBEL_ALPHA_TWO_STREAM = 0.505
_LOG_EPS = 1e-12


@dataclass(frozen=True)
class BinaryCode:
    """Fixed-length pole indicator vector with its pre-threshold gates.

    bits are {0,1} or {-1,+1} depending on the convention; the two are
    related by the bijection b_pm = 2 b_01 - 1.  gate_values live in
    [0, 1].  unit_index marks the constant pole's bit so comparisons
    can ignore it (a pure translation legitimately toggles only that
    bit).
    """

    bits: np.ndarray
    gate_values: np.ndarray
    convention: str
    dictionary_hash: str = ""
    unit_index: int | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.int8)
        gates = np.asarray(self.gate_values, dtype=np.float64)
        if bits.shape != gates.shape or bits.ndim != 1:
            raise ValueError("bits and gate_values must be equal-length vectors")
        allowed = (0, 1) if self.convention == ZERO_ONE else (-1, 1)
        if self.convention not in (ZERO_ONE, PLUS_MINUS_ONE):
            raise ValueError(f"unknown convention {self.convention!r}")
        if not np.isin(bits, allowed).all():
            raise ValueError(f"bits must be in {allowed} for convention {self.convention}")
        if np.any(gates < 0.0) or np.any(gates > 1.0):
            raise ValueError("gate_values must lie in [0, 1]")
        bits.setflags(write=False)
        gates.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "gate_values", gates)

    def __len__(self) -> int:
        return self.bits.shape[0]

    def zero_one_bits(self) -> np.ndarray:
        if self.convention == ZERO_ONE:
            return self.bits
        return ((self.bits + 1) // 2).astype(np.int8)

    def to_convention(self, convention: str) -> "BinaryCode":
        if convention == self.convention:
            return self
        if convention == PLUS_MINUS_ONE:
            bits = (2 * self.zero_one_bits() - 1).astype(np.int8)
        else:
            bits = self.zero_one_bits()
        return BinaryCode(bits, self.gate_values, convention, self.dictionary_hash, self.unit_index)

    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.zero_one_bits() == 1))


def pole_energy_matrix(C, dictionary: PoleDictionary) -> np.ndarray:
    """Per-pole, per-column coefficient energy, shape (pole_count, d).

    Unit/real poles report |c|; pairs report the norm over their
    cosine/sine coefficients, column by column.
    """
    coeff = getattr(C, "coefficients", C)
    coeff = np.asarray(coeff, dtype=np.float64)
    if coeff.ndim == 1:
        coeff = coeff[:, None]
    if coeff.shape[0] != dictionary.atom_count:
        raise ValueError(
            f"code has {coeff.shape[0]} atoms, dictionary has {dictionary.atom_count}"
        )
    out = np.empty((dictionary.pole_count, coeff.shape[1]))
    for i, (start, width) in enumerate(dictionary.atom_layout()):
        if width == 1:
            out[i] = np.abs(coeff[start])
        else:
            out[i] = np.hypot(coeff[start], coeff[start + 1])
    return out


def pair_energy(C, dictionary: PoleDictionary) -> np.ndarray:
    """Per-pole energy, maximized across the coordinate columns of C."""
    return pole_energy_matrix(C, dictionary).max(axis=1)


def binarize_threshold(
    energy,
    tau_rel: float = DEFAULT_TAU_REL,
    floor: float = DEFAULT_FLOOR,
    dictionary: PoleDictionary | None = None,
) -> BinaryCode:
    """Set a bit when its energy reaches tau_rel of the peak (or floor).

    Scale invariant by construction: gates are energies over the peak.
    """
    energy = np.asarray(energy, dtype=np.float64)
    if np.any(energy < 0.0):
        raise ValueError("energies must be nonnegative")
    peak = float(energy.max()) if energy.size else 0.0
    cut = max(tau_rel * peak, floor)
    bits = (energy >= cut).astype(np.int8)
    gates = energy / (peak if peak > 0.0 else 1.0)
    return BinaryCode(bits, gates, ZERO_ONE, *_dict_fields(dictionary))


def binarize_gumbel(
    energy,
    temperature: float = DEFAULT_TEMPERATURE,
    alpha: float = GUMBEL_ALPHA,
    rng_seed: int = 0,
    dictionary: PoleDictionary | None = None,
) -> BinaryCode:
    """Stochastic gate: sigmoid((log energy + Gumbel noise) / temperature).

    Deterministic for a fixed seed.  As temperature shrinks the gate
    saturates and expected bits approach a hard threshold rule.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly in (0, 1)")
    energy = np.asarray(energy, dtype=np.float64)
    if np.any(energy < 0.0):
        raise ValueError("energies must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    noise = rng.gumbel(size=energy.shape)
    gates = _sigmoid((np.log(energy + _LOG_EPS) + noise) / temperature)
    bits = (gates > alpha).astype(np.int8)
    return BinaryCode(bits, gates, ZERO_ONE, *_dict_fields(dictionary))


def _dict_fields(dictionary: PoleDictionary | None) -> tuple[str, int | None]:
    if dictionary is None:
        return "", None
    return dictionary.content_hash, dictionary.unit_index


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def binarization_losses(code: BinaryCode) -> dict[str, float]:
    """Metric losses of a code.

    saturation: L1 distance of the gates, mapped to [-1, 1] via 2g - 1,
    from full saturation at +-1.  sparsity: number of set bits in the
    zero/one convention.
    """
    mapped = 2.0 * code.gate_values - 1.0
    saturation = float(np.sum(np.abs(np.abs(mapped) - 1.0)))
    sparsity = float(np.sum(code.zero_one_bits()))
    return {"saturation": saturation, "sparsity": sparsity}


def _check_comparable(a: BinaryCode, b: BinaryCode) -> None:
    if len(a) != len(b):
        raise ValueError(f"code lengths differ: {len(a)} vs {len(b)}")
    if a.dictionary_hash != b.dictionary_hash:
        raise ValueError(
            f"dictionary hash mismatch: {a.dictionary_hash!r} vs {b.dictionary_hash!r}"
        )


def hamming(a: BinaryCode, b: BinaryCode) -> int:
    """Number of differing bits (convention-independent)."""
    _check_comparable(a, b)
    return int(np.count_nonzero(a.zero_one_bits() != b.zero_one_bits()))


def jaccard(a: BinaryCode, b: BinaryCode, ignore_unit_pole: bool = True) -> float:
    """Intersection over union of the set bits; 1.0 for two empty sets."""
    _check_comparable(a, b)
    xa = a.zero_one_bits() == 1
    xb = b.zero_one_bits() == 1
    if ignore_unit_pole:
        if a.unit_index is None or b.unit_index is None:
            raise ValueError("unit pole index unknown; build codes with a dictionary")
        keep = np.ones(len(a), dtype=bool)
        keep[a.unit_index] = False
        keep2 = np.ones(len(b), dtype=bool)
        keep2[b.unit_index] = False
        xa, xb = xa[keep], xb[keep2]
    union = np.count_nonzero(xa | xb)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(xa & xb) / union)
