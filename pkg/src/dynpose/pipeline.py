"""End-to-end plumbing: sequences to codes, features, learned poles.

One skeleton sequence becomes a set of clips; each clip's coordinate
tracks are solved jointly (one reweighting group per joint, so a
joint's x/y/z share pole penalties) and binarized per coordinate into
a fixed-length feature.  The learning loop alternates code solves with
backtracked gradient steps on the pole parameters, keeping the
dictionary loss non-increasing round over round.
"""

from __future__ import annotations

import numpy as np

from .binarize import DEFAULT_FLOOR, DEFAULT_TAU_REL, binarize_threshold, pole_energy_matrix
from .classify import FeatureLayout, PoleSupportFeature, assemble_feature
from .clips import DEFAULT_CLIP_COUNT, DEFAULT_CLIP_LENGTH, sample_multi_clips, sample_single_clip
from .dictionary import (
    KIND_PAIR,
    KIND_UNIT,
    Pole,
    PoleDictionary,
    build_vandermonde,
    dictionary_loss_and_gradient,
    pole_columns,
)
from .invariance import _EncoderCache
from .solver import SolverConfig, SparseCode, fista, reweighted_fista
from .trajectory import SkeletonSequence

_BACKTRACK_LIMIT = 40


def joint_column_groups(joints: int, dims: int) -> list[list[int]]:
    """Column groups tying a joint's coordinate tracks together."""
    return [list(range(j * dims, (j + 1) * dims)) for j in range(joints)]


def encode_sequence(
    seq: SkeletonSequence,
    dictionary: PoleDictionary,
    config: SolverConfig,
    cache: _EncoderCache | None = None,
) -> list[SparseCode]:
    """Whole-sequence codes, one per joint (its dims solved jointly)."""
    cache = cache or _EncoderCache(dictionary)
    P, L = cache.get(seq.frames)
    return [
        reweighted_fista(P, seq.data[:, j, :], config, L=L) for j in range(seq.joints)
    ]


def featurize_sequence(
    seq: SkeletonSequence,
    dictionary: PoleDictionary,
    config: SolverConfig,
    mode: str = "multi",
    clip_count: int = DEFAULT_CLIP_COUNT,
    clip_length: int = DEFAULT_CLIP_LENGTH,
    tau_rel: float = DEFAULT_TAU_REL,
    floor: float = DEFAULT_FLOOR,
    cache: _EncoderCache | None = None,
    clip_prefix: str = "",
) -> list[PoleSupportFeature]:
    """Per-clip binary pole-support features for one sequence.

    multi mode yields ``clip_count`` features from windows of
    ``clip_length`` frames; single mode yields one feature from the
    ``clip_count`` anchor frames.  Feature blocks are joint-major,
    coordinate-minor.
    """
    cache = cache or _EncoderCache(dictionary)
    if mode == "multi":
        clipset = sample_multi_clips(seq.frames, clip_count, clip_length)
    elif mode == "single":
        clipset = sample_single_clip(seq.frames, clip_count)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    J, D = seq.joints, seq.dims
    layout = FeatureLayout(J, D, dictionary.pole_count, dictionary.content_hash)
    groups = joint_column_groups(J, D)
    features = []
    for ci, clip in enumerate(clipset.clips):
        block = seq.data[list(clip)].reshape(len(clip), J * D)
        P, L = cache.get(len(clip))
        code = reweighted_fista(P, block, config, column_groups=groups, L=L)
        energies = pole_energy_matrix(code.coefficients, dictionary)
        codes = [
            binarize_threshold(energies[:, col], tau_rel, floor, dictionary=dictionary)
            for col in range(J * D)
        ]
        features.append(assemble_feature(codes, layout, clip_id=f"{clip_prefix}clip{ci}"))
    return features


# ---------------------------------------------------------------------------
# alternating dictionary learning
# ---------------------------------------------------------------------------


def _raw_pole_loss(poles, batches, lam: float) -> float:
    """sum ||Y - P C||^2 + lam ||C||_1 for an explicit pole ordering."""
    loss = 0.0
    for Y, C in batches:
        P = np.hstack([pole_columns(p, Y.shape[0]) for p in poles])
        R = Y - P @ C
        loss += float(np.sum(R * R)) + lam * float(np.sum(np.abs(C)))
    return loss


def _atom_permutation(old_poles, new_order) -> np.ndarray:
    """Atom index map after re-sorting poles (pairs carry two atoms)."""
    starts = []
    pos = 0
    for p in old_poles:
        starts.append(pos)
        pos += p.atom_count
    perm = []
    for old_idx in new_order:
        start = starts[old_idx]
        perm.extend(range(start, start + old_poles[old_idx].atom_count))
    return np.asarray(perm, dtype=np.intp)


def learn_dictionary(
    dictionary: PoleDictionary,
    sequences: list[SkeletonSequence],
    rounds: int,
    lam: float,
    learning_rate: float = 1e-4,
    solver_config: SolverConfig | None = None,
    magnitude_cap: float = 1.2,
) -> tuple[PoleDictionary, list[float]]:
    """Alternate code solves and backtracked pole steps on a fixed batch.

    Works on the raw (unnormalized) atoms so both steps descend the
    same loss; the solve warm-starts from the previous round's
    coefficients (permuted to the re-sorted atom order), which makes
    the returned per-round loss sequence non-increasing.  Returns the
    updated dictionary with the original normalization setting plus
    the loss after each round's code solve.
    """
    if rounds < 0:
        raise ValueError("rounds must be nonnegative")
    if not sequences:
        raise ValueError("no training sequences")
    base_config = solver_config or SolverConfig(lam=lam)
    config = SolverConfig(
        lam=lam,
        max_iterations=base_config.max_iterations,
        convergence_tol=base_config.convergence_tol,
        reweight_rounds=0,
        reweight_epsilon=base_config.reweight_epsilon,
        support_floor=base_config.support_floor,
    )
    work = PoleDictionary(dictionary.poles, normalize_columns=False)
    blocks = [s.data.reshape(s.frames, s.joints * s.dims) for s in sequences]
    losses: list[float] = []
    warm: list[np.ndarray] | None = None

    for _ in range(rounds):
        cache = _EncoderCache(work)
        codes = []
        total = 0.0
        for i, Y in enumerate(blocks):
            P, L = cache.get(Y.shape[0])
            init = warm[i] if warm is not None else None
            code = fista(P, Y, np.ones(work.atom_count), config, init=init, L=L)
            codes.append(code.coefficients)
            total += code.objective_value
        losses.append(total)

        batches = list(zip(blocks, codes))
        _, grad_mag, grad_phase = dictionary_loss_and_gradient(work, blocks, codes, lam)
        lr = learning_rate
        stepped = work.poles
        for _try in range(_BACKTRACK_LIMIT):
            candidate = _step_poles(work.poles, grad_mag, grad_phase, lr, magnitude_cap)
            if _raw_pole_loss(candidate, batches, lam) <= total + 1e-12 * (1.0 + abs(total)):
                stepped = candidate
                break
            lr *= 0.5
        new_order = sorted(range(len(stepped)), key=lambda i: stepped[i].sort_key())
        perm = _atom_permutation(stepped, new_order)
        warm = [C[perm] for C in codes]
        work = work.with_poles(stepped)

    final = PoleDictionary(work.poles, normalize_columns=dictionary.normalize_columns)
    return final, losses


def _step_poles(poles, grad_mag, grad_phase, lr: float, cap: float):
    import math

    stepped = []
    for pole, gm, gp in zip(poles, grad_mag, grad_phase):
        if pole.kind == KIND_UNIT:
            stepped.append(pole)
            continue
        mag = float(np.clip(pole.magnitude - lr * gm, 1e-6, cap))
        if pole.kind == KIND_PAIR:
            phase = float(np.clip(pole.phase - lr * gp, 1e-9, math.pi - 1e-9))
        else:
            phase = pole.phase
        stepped.append(Pole(mag, phase, pole.kind))
    return tuple(stepped)
