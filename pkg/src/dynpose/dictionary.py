"""Pole dictionaries and their Vandermonde measurement matrices.

A dictionary holds candidate poles near the unit circle: exactly one
constant (unit) pole, optional real poles, and conjugate pairs.  A unit
or real pole contributes one matrix column (1, p, p^2, ...); a pair with
magnitude rho and phase theta contributes a damped cosine column
rho^k * cos(k*theta) and the matching sine column, so short bounded
motions can be written as sparse combinations of a few columns.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

KIND_UNIT = "unit"
KIND_REAL = "real"
KIND_PAIR = "conjugate_pair"
_KINDS = (KIND_UNIT, KIND_REAL, KIND_PAIR)

DEFAULT_PAIR_COUNT = 80
DEFAULT_REAL_POLE_COUNT = 4
DEFAULT_MAGNITUDE_RANGE = (0.85, 1.15)
MAGNITUDE_CAP = 1.2
_MIN_MAGNITUDE = 1e-6
_MIN_PAIR_PHASE = 1e-9
# exp() overflows float64 just above this, so raw columns magnitude**k
# cannot be materialized once (T-1)*log(magnitude) crosses it.
_LOG_FLOAT_MAX = math.log(np.finfo(np.float64).max)

DICT_FORMAT_VERSION = "dynpose-dict v1"


@dataclass(frozen=True)
class Pole:
    """One candidate pole.

    A passive record; structural rules (exactly one unit pole, pair
    phases strictly inside (0, pi), ...) are enforced by PoleDictionary
    so that raw column formulas stay testable on loose inputs.
    """

    magnitude: float
    phase: float
    kind: str

    @property
    def atom_count(self) -> int:
        return 2 if self.kind == KIND_PAIR else 1

    def sort_key(self) -> tuple:
        return (self.magnitude, self.phase, self.kind)


def _validate_poles(poles: tuple[Pole, ...]) -> None:
    if not poles:
        raise ValueError("dictionary must contain at least one pole")
    unit_count = 0
    seen: set[tuple[float, float]] = set()
    for p in poles:
        if p.kind not in _KINDS:
            raise ValueError(f"unknown pole kind {p.kind!r}")
        if not (p.magnitude > 0.0 and math.isfinite(p.magnitude)):
            raise ValueError(f"pole magnitude must be positive, got {p.magnitude}")
        if not math.isfinite(p.phase):
            raise ValueError(f"pole phase must be finite, got {p.phase}")
        if p.kind == KIND_UNIT:
            unit_count += 1
            if p.magnitude != 1.0 or p.phase != 0.0:
                raise ValueError("unit pole must have magnitude 1 and phase 0")
        elif p.kind == KIND_REAL:
            if p.phase not in (0.0, math.pi):
                raise ValueError("real pole phase must be 0 or pi")
        else:
            if not (0.0 < p.phase < math.pi):
                raise ValueError("conjugate pair phase must lie strictly in (0, pi)")
        key = (p.magnitude, p.phase)
        if key in seen:
            raise ValueError(f"duplicate pole at magnitude={p.magnitude}, phase={p.phase}")
        seen.add(key)
    if unit_count != 1:
        raise ValueError(f"dictionary must contain exactly one unit pole, got {unit_count}")


def _hash_poles(poles: tuple[Pole, ...], normalize_columns: bool) -> str:
    h = hashlib.sha256()
    h.update(f"normalize={normalize_columns}\n".encode())
    for p in poles:
        h.update(f"{p.kind}|{float(p.magnitude).hex()}|{float(p.phase).hex()}\n".encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class PoleDictionary:
    """Ordered, validated pole set with a content-derived hash.

    Poles are canonically sorted by (magnitude, phase, kind), so atom
    ordering and the hash are pure functions of the dictionary content.
    Instances are immutable and safe to share across workers.
    """

    poles: tuple[Pole, ...]
    normalize_columns: bool = True
    content_hash: str = field(init=False, default="")

    def __post_init__(self):
        poles = tuple(sorted(self.poles, key=Pole.sort_key))
        _validate_poles(poles)
        object.__setattr__(self, "poles", poles)
        object.__setattr__(self, "content_hash", _hash_poles(poles, self.normalize_columns))

    @property
    def pole_count(self) -> int:
        return len(self.poles)

    @property
    def atom_count(self) -> int:
        return sum(p.atom_count for p in self.poles)

    @property
    def unit_index(self) -> int:
        for i, p in enumerate(self.poles):
            if p.kind == KIND_UNIT:
                return i
        raise AssertionError("validated dictionary lost its unit pole")

    def atom_layout(self) -> tuple[tuple[int, int], ...]:
        """(first atom column, column count) for each pole, in pole order."""
        layout = []
        start = 0
        for p in self.poles:
            layout.append((start, p.atom_count))
            start += p.atom_count
        return tuple(layout)

    def with_poles(self, poles) -> "PoleDictionary":
        return PoleDictionary(tuple(poles), normalize_columns=self.normalize_columns)


@dataclass(frozen=True)
class VandermondeMatrix:
    """Measurement matrix built from a pole dictionary for T frames.

    ``entries`` holds the matrix as consumed by the solver (column
    normalized when requested).  ``column_scales`` are the removed L2
    norms (ones when no normalization), so ``entries * column_scales``
    reproduces the raw matrix.  For magnitudes above one the raw scale
    grows like magnitude**(T-1) and can saturate to inf near T ~ 4000;
    the normalized entries themselves stay finite for any T.
    """

    entries: np.ndarray
    column_scales: np.ndarray
    T: int

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        scales = np.asarray(self.column_scales, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != self.T:
            raise ValueError("entries must be a T x N matrix")
        if scales.shape != (entries.shape[1],):
            raise ValueError("column_scales must have one entry per column")
        entries.setflags(write=False)
        scales.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "column_scales", scales)

    @property
    def atom_count(self) -> int:
        return self.entries.shape[1]

    def raw(self) -> np.ndarray:
        """Unnormalized matrix; errors if scales overflowed float64."""
        if not np.isfinite(self.column_scales).all():
            raise OverflowError("column scales overflowed float64; reduce T or pole magnitudes")
        return self.entries * self.column_scales[None, :]


def pole_columns(pole: Pole, T: int) -> np.ndarray:
    """Raw column(s) generated by one pole over T frames.

    Returns a (T, 1) array for unit/real poles and (T, 2) with the
    cosine and sine columns for a conjugate pair.
    """
    rel, log_scale = _column_block(pole, T)
    if log_scale > _LOG_FLOAT_MAX:
        raise OverflowError(
            f"magnitude {pole.magnitude} over {T} frames overflows float64; "
            "use a normalized matrix or reduce T"
        )
    return rel * math.exp(log_scale)


def _column_block(pole: Pole, T: int) -> tuple[np.ndarray, float]:
    """Column block split as (relative entries, log of a shared factor).

    The raw block equals entries * exp(log_scale).  For magnitude > 1
    the common factor magnitude**(T-1) is pulled out so the stored
    entries never exceed one in magnitude.
    """
    k = np.arange(T, dtype=np.float64)
    if pole.kind == KIND_UNIT:
        return np.ones((T, 1)), 0.0
    if pole.magnitude <= 1.0:
        powers = pole.magnitude ** k
        log_scale = 0.0
    else:
        log_mag = math.log(pole.magnitude)
        powers = np.exp((k - (T - 1)) * log_mag)
        log_scale = (T - 1) * log_mag
    if pole.kind == KIND_REAL:
        block = (powers * np.cos(k * pole.phase))[:, None]
    else:
        ang = k * pole.phase
        block = np.stack([powers * np.cos(ang), powers * np.sin(ang)], axis=1)
    return block, log_scale


def build_vandermonde(dictionary: PoleDictionary, T: int) -> VandermondeMatrix:
    """Build the T x N measurement matrix for a dictionary.

    Column order follows the canonical pole order; pairs contribute
    their cosine column then sine column.  Zero columns (a sine column
    at T=1) keep scale 1 so reconstruction stays exact.
    """
    if T < 1:
        raise ValueError(f"frame count must be >= 1, got {T}")
    blocks = []
    scales = []
    normalize = dictionary.normalize_columns
    with np.errstate(over="ignore"):
        for pole in dictionary.poles:
            rel, log_scale = _column_block(pole, T)
            if normalize:
                norms = np.linalg.norm(rel, axis=0)
                safe = np.where(norms > 0.0, norms, 1.0)
                blocks.append(rel / safe)
                scales.append(np.where(norms > 0.0, norms * np.exp(log_scale), 1.0))
            else:
                if log_scale > _LOG_FLOAT_MAX:
                    raise OverflowError(
                        f"magnitude {pole.magnitude} over {T} frames overflows float64 "
                        "without column normalization"
                    )
                blocks.append(rel * math.exp(log_scale))
                scales.append(np.ones(rel.shape[1]))
    return VandermondeMatrix(np.hstack(blocks), np.concatenate(scales), T)


def _largest_divisor_at_most(n: int, cap: int) -> int:
    for d in range(min(cap, n), 0, -1):
        if n % d == 0:
            return d
    return 1


def generate_dictionary(
    pair_count: int = DEFAULT_PAIR_COUNT,
    magnitude_range: tuple[float, float] = DEFAULT_MAGNITUDE_RANGE,
    real_pole_count: int = DEFAULT_REAL_POLE_COUNT,
    scheme: str = "grid",
    seed: int = 0,
    rings: int | None = None,
    normalize_columns: bool = True,
) -> PoleDictionary:
    """Construct an overcomplete candidate-pole dictionary.

    The grid scheme lays pairs on ``rings`` magnitude rings (default:
    the largest divisor of pair_count at most 5) with phases at ring
    midpoints of (0, pi); seeded_random draws magnitudes and phases
    uniformly.  Real poles span the magnitude range at phase 0.  The
    unit pole is always included.  Deterministic for fixed arguments.
    """
    lo, hi = float(magnitude_range[0]), float(magnitude_range[1])
    if lo <= 0.0 or lo > hi:
        raise ValueError(f"invalid magnitude range [{lo}, {hi}]")
    if pair_count < 0 or real_pole_count < 0:
        raise ValueError("pole counts must be nonnegative")
    if scheme not in ("grid", "seeded_random"):
        raise ValueError(f"unknown scheme {scheme!r}")

    poles = [Pole(1.0, 0.0, KIND_UNIT)]
    rng = np.random.default_rng(seed)

    if scheme == "grid":
        if pair_count > 0:
            n_rings = rings if rings is not None else _largest_divisor_at_most(pair_count, 5)
            if pair_count % n_rings != 0:
                raise ValueError(f"pair_count {pair_count} not divisible by rings {n_rings}")
            per_ring = pair_count // n_rings
            mags = [0.5 * (lo + hi)] if n_rings == 1 else list(np.linspace(lo, hi, n_rings))
            for mag in mags:
                for j in range(per_ring):
                    phase = (j + 0.5) * math.pi / per_ring
                    poles.append(Pole(float(mag), phase, KIND_PAIR))
        real_mags = _spanning_magnitudes(lo, hi, real_pole_count)
    else:
        pair_mags = rng.uniform(lo, hi, size=pair_count)
        pair_phases = rng.uniform(np.nextafter(0.0, 1.0), math.pi, size=pair_count)
        for mag, phase in zip(pair_mags, pair_phases):
            poles.append(Pole(float(mag), float(phase), KIND_PAIR))
        real_mags = list(rng.uniform(lo, hi, size=real_pole_count))

    for mag in real_mags:
        mag = float(mag)
        if mag == 1.0:
            # would duplicate the unit pole's column; nudge deterministically
            mag += max(hi - lo, 1.0) * 1e-6
        poles.append(Pole(mag, 0.0, KIND_REAL))

    return PoleDictionary(tuple(poles), normalize_columns=normalize_columns)


def _spanning_magnitudes(lo: float, hi: float, count: int) -> list[float]:
    if count == 0:
        return []
    if count == 1:
        return [0.5 * (lo + hi)]
    return list(np.linspace(lo, hi, count))


def default_dictionary() -> PoleDictionary:
    """80 grid pairs on 5 rings, 4 real poles, the unit pole: 165 atoms."""
    return generate_dictionary()


# ---------------------------------------------------------------------------
# dictionary learning: analytic pole gradients of the reconstruction loss
# ---------------------------------------------------------------------------


def _as_batches(Y, C) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if isinstance(Y, np.ndarray):
        Y = [Y]
    if not isinstance(C, (list, tuple)):
        C = [C]
    ys = [np.atleast_2d(np.asarray(y, dtype=np.float64)) for y in Y]
    cs = []
    for c in C:
        coeff = getattr(c, "coefficients", c)
        cs.append(np.atleast_2d(np.asarray(coeff, dtype=np.float64)))
    if len(ys) != len(cs):
        raise ValueError(f"batch size mismatch: {len(ys)} trajectories vs {len(cs)} codes")
    return ys, cs


def dictionary_loss_and_gradient(
    dictionary: PoleDictionary, Y, C, lam: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss sum ||Y - P C||^2 + lam * ||C||_1 and its pole gradients.

    The loss is taken on the raw (unnormalized) matrix; codes solved
    against a normalized dictionary are rescaled by the column norms
    first, which leaves the reconstruction unchanged at the current
    point.  Returns (loss, d/d magnitude, d/d phase), one entry per
    pole; the unit pole is fixed by definition so its gradient is 0.
    Real-pole phase gradients vanish identically at phase 0 or pi.
    """
    ys, cs = _as_batches(Y, C)
    N = dictionary.atom_count
    layout = dictionary.atom_layout()
    grad_mag = np.zeros(dictionary.pole_count)
    grad_phase = np.zeros(dictionary.pole_count)
    loss = 0.0

    for Yb, Cb in zip(ys, cs):
        if Cb.shape[0] != N:
            raise ValueError(f"code has {Cb.shape[0]} rows, dictionary has {N} atoms")
        if Yb.shape[1] != Cb.shape[1]:
            raise ValueError(
                f"trajectory has {Yb.shape[1]} columns, code has {Cb.shape[1]}"
            )
        T = Yb.shape[0]
        P = np.hstack([pole_columns(p, T) for p in dictionary.poles])
        if dictionary.normalize_columns:
            scales = build_vandermonde(dictionary, T).column_scales
            Cb = Cb / scales[:, None]
        R = Yb - P @ Cb
        loss += float(np.sum(R * R)) + lam * float(np.sum(np.abs(Cb)))
        # dL/dP = -2 R C^t, then chain through each column's pole parameters
        G = -2.0 * (R @ Cb.T)
        k = np.arange(T, dtype=np.float64)
        for pi, (pole, (start, width)) in enumerate(zip(dictionary.poles, layout)):
            if pole.kind == KIND_UNIT:
                continue
            rho, theta = pole.magnitude, pole.phase
            powers = rho ** k
            kpow = k * rho ** np.maximum(k - 1.0, 0.0)
            cos_t, sin_t = np.cos(k * theta), np.sin(k * theta)
            g_cos = G[:, start]
            grad_mag[pi] += float(np.dot(g_cos, kpow * cos_t))
            grad_phase[pi] += float(np.dot(g_cos, -k * powers * sin_t))
            if width == 2:
                g_sin = G[:, start + 1]
                grad_mag[pi] += float(np.dot(g_sin, kpow * sin_t))
                grad_phase[pi] += float(np.dot(g_sin, k * powers * cos_t))
    return loss, grad_mag, grad_phase


def dictionary_gradient_step(
    dictionary: PoleDictionary,
    Y,
    C,
    lam: float,
    learning_rate: float,
    magnitude_cap: float = MAGNITUDE_CAP,
) -> PoleDictionary:
    """One gradient-descent step on the pole parameters, codes held fixed.

    Magnitudes are clamped to (0, magnitude_cap]; pair phases stay
    strictly inside (0, pi).  Returns a new dictionary (re-sorted and
    re-hashed); the unit pole never moves.
    """
    if learning_rate <= 0.0:
        raise ValueError("learning_rate must be positive")
    _, grad_mag, grad_phase = dictionary_loss_and_gradient(dictionary, Y, C, lam)
    new_poles = []
    for pole, gm, gp in zip(dictionary.poles, grad_mag, grad_phase):
        if pole.kind == KIND_UNIT:
            new_poles.append(pole)
            continue
        mag = float(np.clip(pole.magnitude - learning_rate * gm, _MIN_MAGNITUDE, magnitude_cap))
        if pole.kind == KIND_PAIR:
            phase = float(
                np.clip(pole.phase - learning_rate * gp, _MIN_PAIR_PHASE, math.pi - _MIN_PAIR_PHASE)
            )
        else:
            phase = pole.phase
        new_poles.append(Pole(mag, phase, pole.kind))
    return dictionary.with_poles(new_poles)


# ---------------------------------------------------------------------------
# text serialization
# ---------------------------------------------------------------------------


def dictionary_to_text(dictionary: PoleDictionary, header: dict | None = None) -> str:
    """Versioned text record: header lines, pole rows, content hash."""
    lines = [DICT_FORMAT_VERSION]
    for key, value in (header or {}).items():
        lines.append(f"{key} {value}")
    lines.append(f"normalize_columns {'true' if dictionary.normalize_columns else 'false'}")
    for p in dictionary.poles:
        lines.append(f"pole {p.kind} {p.magnitude:.17g} {p.phase:.17g}")
    lines.append(f"hash {dictionary.content_hash}")
    return "\n".join(lines) + "\n"


def dictionary_from_text(text: str) -> PoleDictionary:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != DICT_FORMAT_VERSION:
        raise ValueError(f"not a {DICT_FORMAT_VERSION} file")
    poles = []
    normalize = True
    stored_hash = None
    for line in lines[1:]:
        parts = line.split()
        if parts[0] == "pole":
            if len(parts) != 4:
                raise ValueError(f"malformed pole row: {line!r}")
            poles.append(Pole(float(parts[2]), float(parts[3]), parts[1]))
        elif parts[0] == "normalize_columns":
            normalize = parts[1] == "true"
        elif parts[0] == "hash":
            stored_hash = parts[1]
        # other header keys (config hashes etc.) are carried, not parsed
    dictionary = PoleDictionary(tuple(poles), normalize_columns=normalize)
    if stored_hash is None:
        raise ValueError("dictionary file is missing its hash line")
    if stored_hash != dictionary.content_hash:
        raise ValueError(
            f"dictionary hash mismatch: file says {stored_hash}, "
            f"content hashes to {dictionary.content_hash}"
        )
    return dictionary


def save_dictionary(dictionary: PoleDictionary, path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dictionary_to_text(dictionary, header))


def load_dictionary(path) -> PoleDictionary:
    with open(path, "r", encoding="utf-8") as fh:
        return dictionary_from_text(fh.read())
