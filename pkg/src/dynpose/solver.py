"""Weighted L1 least-squares solver for pole-dictionary codes.

Minimizes ||Y - P C||_F^2 + lam * ||W o C||_1 with an accelerated
proximal-gradient iteration (step 1/L, L the top eigenvalue of P^t P)
plus a monotone restart so the recorded objective never increases.
Repeated solves with penalties set to inverse coefficient magnitudes
push small-but-nonzero coefficients to exact zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dictionary import PoleDictionary, VandermondeMatrix, build_vandermonde

_RESTART_SLACK = 1e-10
_POWER_MIN_ITER = 50
_POWER_MAX_ITER = 20000
_POWER_TOL = 1e-13


@dataclass
class SolverConfig:
    """Knobs for one encode: penalty, budget, reweighting schedule.

    lam defaults to 0.2 for pose-only pipelines (0.1 is the usual
    choice when the encoder feeds a joint two-stream setup).  With
    reweight_per_atom all coordinate columns solved together share one
    weight per atom, taken from the largest coefficient magnitude.
    """

    lam: float = 0.2
    max_iterations: int = 300
    convergence_tol: float = 1e-7
    reweight_rounds: int = 2
    reweight_epsilon: float = 1e-4
    support_floor: float = 1e-4
    reweight_per_atom: bool = True

    def __post_init__(self):
        if self.lam <= 0.0:
            raise ValueError("lam must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.reweight_epsilon <= 0.0:
            raise ValueError("reweight_epsilon must be positive")
        if self.reweight_rounds < 0:
            raise ValueError("reweight_rounds must be >= 0")
        if self.support_floor <= 0.0:
            raise ValueError("support_floor must be positive")


@dataclass(frozen=True)
class SparseCode:
    """Solver output: coefficients plus enough context to recheck them.

    ``objective_value`` is ||Y - P C||^2 + lam * ||W o C||_1 for the
    stored coefficients and weights; ``objective_trace`` records it
    after every proximal step of the final solve.  ``support`` holds
    atom indices whose largest coefficient magnitude across columns
    exceeds the support floor.
    """

    coefficients: np.ndarray
    objective_value: float
    iterations_used: int
    support: tuple[int, ...]
    lam: float
    weights: np.ndarray
    objective_trace: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


def _matrix(P) -> np.ndarray:
    if isinstance(P, VandermondeMatrix):
        return P.entries
    return np.asarray(P, dtype=np.float64)


class EncoderCache:
    """Per-dictionary cache of measurement matrices and step sizes.

    Solving many sequences against one dictionary rebuilds the same
    T-frame matrix and its spectral bound over and over; this memoizes
    both per frame count.  Read-only after warmup, safe to share.
    """

    def __init__(self, dictionary: PoleDictionary):
        self.dictionary = dictionary
        self._matrices: dict[int, VandermondeMatrix] = {}
        self._lipschitz: dict[int, float] = {}

    def get(self, T: int) -> tuple[VandermondeMatrix, float]:
        if T not in self._matrices:
            P = build_vandermonde(self.dictionary, T)
            self._matrices[T] = P
            self._lipschitz[T] = lipschitz_constant(P)
        return self._matrices[T], self._lipschitz[T]


def lipschitz_constant(P) -> float:
    """Largest eigenvalue of P^t P by power iteration.

    Iterates at least 50 times and until the Rayleigh quotient is
    stationary, which lands within 1e-6 relative of a dense
    eigensolver on the matrices used here.
    """
    A = _matrix(P)
    if A.size == 0:
        raise ValueError("empty matrix")
    if not np.isfinite(A).all():
        raise ValueError("matrix has non-finite entries")
    G = A.T @ A
    rng = np.random.default_rng(0)
    x = rng.standard_normal(G.shape[0])
    x /= np.linalg.norm(x)
    lam_prev = 0.0
    lam = 0.0
    for it in range(_POWER_MAX_ITER):
        y = G @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            raise ValueError("degenerate dictionary: P^t P annihilated the iterate")
        lam = float(x @ y)
        x = y / ny
        if it >= _POWER_MIN_ITER and abs(lam - lam_prev) <= _POWER_TOL * max(abs(lam), 1.0):
            break
        lam_prev = lam
    if lam <= 0.0:
        raise ValueError("degenerate dictionary: nonpositive spectral estimate")
    return lam


def soft_threshold(v: np.ndarray, thresholds) -> np.ndarray:
    """Elementwise shrink: sign(v) * max(|v| - threshold, 0)."""
    v = np.asarray(v, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    if t.shape != v.shape and t.ndim == v.ndim:
        raise ValueError(f"threshold shape {t.shape} does not match {v.shape}")
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def objective(P, Y, C, lam: float, weights) -> float:
    """||Y - P C||^2 + lam * ||W o C||_1, exactly as the solver sees it."""
    A = _matrix(P)
    Y2 = _as_columns(Y)
    C2 = _as_columns(C)
    W = _expand_weights(weights, A.shape[1], C2.shape[1])
    if Y2.shape[0] != A.shape[0] or C2.shape[0] != A.shape[1] or Y2.shape[1] != C2.shape[1]:
        raise ValueError(
            f"dimension mismatch: P {A.shape}, Y {Y2.shape}, C {C2.shape}"
        )
    R = Y2 - A @ C2
    return float(np.sum(R * R) + lam * np.sum(np.abs(W * C2)))


def _expand_weights(weights, N: int, d: int) -> np.ndarray:
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim == 1:
        if W.shape[0] != N:
            raise ValueError(f"expected {N} weights, got {W.shape[0]}")
        return np.broadcast_to(W[:, None], (N, d))
    if W.shape != (N, d):
        raise ValueError(f"weight matrix shape {W.shape} does not match ({N}, {d})")
    return W


def _as_columns(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2:
        raise ValueError("Y must be a vector or a T x d matrix")
    return Y


def fista(P, Y, weights, config: SolverConfig, init=None, L: float | None = None) -> SparseCode:
    """Accelerated proximal gradient for the weighted lasso objective.

    Momentum follows t_next = (1 + sqrt(1 + 4 t^2)) / 2 with step 1/L;
    whenever an extrapolated step would raise the objective the
    momentum is dropped and the step retaken from the last iterate, so
    the recorded objective sequence is non-increasing.  Stops on
    max_iterations or relative objective change below convergence_tol.
    """
    A = _matrix(P)
    Y2 = _as_columns(Y)
    T, N = A.shape
    if Y2.shape[0] != T:
        raise ValueError(f"Y has {Y2.shape[0]} rows, P has {T}")
    if not np.isfinite(Y2).all():
        raise ValueError("Y has non-finite entries")
    d = Y2.shape[1]
    W = _expand_weights(weights, N, d)
    if np.any(W <= 0.0):
        raise ValueError("weights must be strictly positive")

    if L is None:
        L = lipschitz_constant(A)
    thresh = (config.lam / (2.0 * L)) * W

    if init is None:
        C = np.zeros((N, d))
    else:
        C = np.array(init, dtype=np.float64)
        if C.ndim == 1:
            C = C[:, None]
        if C.shape != (N, d):
            raise ValueError(f"init shape {C.shape} does not match ({N}, {d})")
    C_prev = C
    t = 1.0

    def full_objective(M: np.ndarray) -> float:
        R = Y2 - A @ M
        return float(np.sum(R * R) + config.lam * np.sum(np.abs(W * M)))

    obj = full_objective(C)
    trace = [obj]
    iterations = 0
    for _ in range(config.max_iterations):
        iterations += 1
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        Z = C + ((t - 1.0) / t_next) * (C - C_prev)
        grad = A.T @ (A @ Z - Y2)
        C_new = soft_threshold(Z - grad / L, thresh)
        obj_new = full_objective(C_new)
        if obj_new > obj + _RESTART_SLACK * max(1.0, abs(obj)):
            # momentum overshot: plain proximal step from the last iterate
            grad = A.T @ (A @ C - Y2)
            C_new = soft_threshold(C - grad / L, thresh)
            obj_new = full_objective(C_new)
            t_next = 1.0
            if obj_new > obj:
                C_new, obj_new = C, obj
        trace.append(obj_new)
        converged = abs(obj - obj_new) <= config.convergence_tol * max(1.0, abs(obj))
        C_prev, C, t, obj = C, C_new, t_next, obj_new
        if converged:
            break

    magnitudes = np.max(np.abs(C), axis=1)
    support = tuple(int(i) for i in np.flatnonzero(magnitudes > config.support_floor))
    return SparseCode(
        coefficients=C,
        objective_value=obj,
        iterations_used=iterations,
        support=support,
        lam=config.lam,
        weights=np.asarray(weights, dtype=np.float64),
        objective_trace=np.asarray(trace),
    )


def reweighted_fista(
    P, Y, config: SolverConfig, column_groups=None, L: float | None = None
) -> SparseCode:
    """Solve, then re-solve with penalties 1/(|c| + eps), warm started.

    Round zero uses uniform weights and equals a plain fista call
    bit for bit.  Each extra round sets an atom's weight from its
    largest coefficient magnitude within a column group (all columns
    by default; per-column when reweight_per_atom is off), rescales
    the group's weights to mean one, and restarts from the previous
    coefficients.
    """
    A = _matrix(P)
    Y2 = _as_columns(Y)
    N, d = A.shape[1], Y2.shape[1]
    if column_groups is None:
        if config.reweight_per_atom:
            groups = [list(range(d))]
        else:
            groups = [[j] for j in range(d)]
    else:
        groups = [list(g) for g in column_groups]
        covered = sorted(j for g in groups for j in g)
        if covered != list(range(d)):
            raise ValueError("column_groups must partition the columns of Y")

    if L is None:
        L = lipschitz_constant(A)
    code = fista(A, Y2, np.ones(N), config, L=L)
    for _ in range(config.reweight_rounds):
        W = np.empty((N, d))
        for g in groups:
            mags = np.max(np.abs(code.coefficients[:, g]), axis=1)
            w = 1.0 / (mags + config.reweight_epsilon)
            w /= np.mean(w)
            W[:, g] = w[:, None]
        code = fista(A, Y2, W, config, init=code.coefficients, L=L)
    return code
