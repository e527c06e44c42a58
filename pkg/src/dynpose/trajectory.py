"""Skeleton trajectory data: loading, normalization, geometry, simulation.

Sequences are T x J x D arrays of joint coordinates (D = 2 or 3).  A
second camera's recording of the same motion is modeled as an affine
map of homogeneous coordinates plus an integer frame delay; midpoints
of configured limb pairs can be appended as extra joints; and scalar
coordinate tracks can be synthesized directly as impulse responses of
a chosen pole set.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .dictionary import KIND_PAIR, KIND_REAL, KIND_UNIT, Pole

# limb midpoints for 25-joint skeletons: upper arms, forearms, thighs,
# shins (left/right), indexed in the usual base-of-spine-first order
DEFAULT_LIMB_PAIRS = ((4, 5), (8, 9), (5, 6), (9, 10), (12, 13), (16, 17), (13, 14), (17, 18))

_RIGID_TOL = 1e-9


@dataclass(frozen=True)
class SkeletonSequence:
    """T frames of J joints in D coordinates, immutable after load."""

    data: np.ndarray
    joint_names: tuple[str, ...] | None = None
    label: int | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"data must be T x J x D, got shape {data.shape}")
        T, J, D = data.shape
        if T < 1 or J < 1:
            raise ValueError(f"empty sequence: T={T}, J={J}")
        if D not in (2, 3):
            raise ValueError(f"coordinate dimension must be 2 or 3, got {D}")
        if not np.isfinite(data).all():
            raise ValueError("sequence contains non-finite coordinates")
        if self.joint_names is not None and len(self.joint_names) != J:
            raise ValueError("joint_names length does not match joint count")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joints(self) -> int:
        return self.data.shape[1]

    @property
    def dims(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class AffineTransform:
    """Homogeneous-coordinate map between views plus a frame delay.

    Accepted shapes: 3x3 (2D to 2D affine), 3x4 (3D to 2D affine
    projection), 4x4 (rigid 3D, rotation block orthonormal).  The last
    row must be (0, ..., 0, 1) so outputs dehomogenize trivially.
    """

    matrix: np.ndarray
    delay: int = 0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape not in ((3, 3), (3, 4), (4, 4)):
            raise ValueError(f"unsupported transform shape {m.shape}")
        expected_last = np.zeros(m.shape[1])
        expected_last[-1] = 1.0
        if not np.array_equal(m[-1], expected_last):
            raise ValueError("last transform row must be (0, ..., 0, 1)")
        if m.shape == (4, 4):
            R = m[:3, :3]
            if np.max(np.abs(R.T @ R - np.eye(3))) > _RIGID_TOL:
                raise ValueError("4x4 transforms must have an orthonormal rotation block")
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def in_dims(self) -> int:
        return self.matrix.shape[1] - 1

    @property
    def out_dims(self) -> int:
        return self.matrix.shape[0] - 1


def identity_transform(dims: int, delay: int = 0) -> AffineTransform:
    return AffineTransform(np.eye(dims + 1), delay=delay)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-(joint, dim) mean and variance from a training split."""

    mean: np.ndarray
    variance: np.ndarray
    computed_over: str

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.variance, dtype=np.float64)
        if mean.shape != var.shape or mean.ndim != 2:
            raise ValueError("mean and variance must be matching (J, D) arrays")
        if np.any(var <= 0.0):
            raise ValueError("variance entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)


@dataclass(frozen=True)
class LimbSpec:
    """Joint index pairs whose midpoints become appended joints."""

    pairs: tuple[tuple[int, int], ...] = DEFAULT_LIMB_PAIRS

    def __post_init__(self):
        seen = set()
        for a, b in self.pairs:
            if a == b:
                raise ValueError(f"limb pair ({a}, {b}) joins a joint with itself")
            if (a, b) in seen:
                raise ValueError(f"duplicate limb pair ({a}, {b})")
            seen.add((a, b))
        object.__setattr__(self, "pairs", tuple((int(a), int(b)) for a, b in self.pairs))


def compute_stats(train: list[SkeletonSequence], identifier: str | None = None) -> NormalizationStats:
    """Mean/variance per (joint, dim) over all frames of the training set."""
    if not train:
        raise ValueError("training list is empty")
    J, D = train[0].joints, train[0].dims
    for s in train:
        if s.joints != J or s.dims != D:
            raise ValueError("all training sequences must share joint count and dims")
    stacked = np.concatenate([s.data for s in train], axis=0)
    mean = stacked.mean(axis=0)
    var = stacked.var(axis=0)
    zero = np.argwhere(var <= 0.0)
    if zero.size:
        j, k = (int(v) for v in zero[0])
        name = train[0].joint_names[j] if train[0].joint_names else f"joint {j}"
        raise ValueError(f"zero variance channel: {name}, dim {k}")
    if identifier is None:
        digest = hashlib.sha256(stacked.tobytes()).hexdigest()[:12]
        identifier = f"train-{len(train)}seq-{digest}"
    return NormalizationStats(mean, var, identifier)


def normalize(seq: SkeletonSequence, stats: NormalizationStats) -> SkeletonSequence:
    if stats.mean.shape != (seq.joints, seq.dims):
        raise ValueError(
            f"stats shape {stats.mean.shape} does not match sequence ({seq.joints}, {seq.dims})"
        )
    data = (seq.data - stats.mean) / np.sqrt(stats.variance)
    return replace(seq, data=data)


def add_limb_midpoints(seq: SkeletonSequence, spec: LimbSpec) -> SkeletonSequence:
    """Append one joint per limb pair at the pair's midpoint, in spec order."""
    if not spec.pairs:
        return seq
    for a, b in spec.pairs:
        if not (0 <= a < seq.joints and 0 <= b < seq.joints):
            raise ValueError(f"limb pair ({a}, {b}) outside joint range 0..{seq.joints - 1}")
    mids = [0.5 * (seq.data[:, a, :] + seq.data[:, b, :]) for a, b in spec.pairs]
    data = np.concatenate([seq.data, np.stack(mids, axis=1)], axis=1)
    names = seq.joint_names
    if names is not None:
        names = names + tuple(f"mid:{names[a]}+{names[b]}" for a, b in spec.pairs)
    return SkeletonSequence(data, joint_names=names, label=seq.label)


def apply_affine(seq: SkeletonSequence, transform: AffineTransform) -> SkeletonSequence:
    """Map frame k of the output to transform @ frame (k + delay) of the input."""
    if transform.in_dims != seq.dims:
        raise ValueError(
            f"transform expects {transform.in_dims}D input, sequence is {seq.dims}D"
        )
    if transform.delay >= seq.frames:
        raise ValueError(f"delay {transform.delay} leaves no frames of {seq.frames}")
    frames = seq.data[transform.delay :]
    hom = np.concatenate([frames, np.ones(frames.shape[:2] + (1,))], axis=2)
    out = hom @ transform.matrix.T
    names = seq.joint_names
    return SkeletonSequence(out[..., : transform.out_dims], joint_names=names, label=seq.label)


def _quaternion_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix from the normalized quaternion of an axis-angle."""
    n = np.linalg.norm(axis)
    axis = axis / n if n > 1e-12 else np.array([1.0, 0.0, 0.0])
    w = math.cos(0.5 * angle)
    x, y, z = math.sin(0.5 * angle) * axis
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_affine(
    rng_seed,
    kind: str = "rigid3d",
    rotation_range: float = math.pi,
    scale_range: float = 0.2,
    translation_range: float = 0.5,
    delay: int = 0,
) -> AffineTransform:
    """Seeded-deterministic transform with parameters inside the ranges.

    Kinds: rigid3d (4x4 rotation + translation, scale ignored),
    affine2d (3x3 rotation * per-axis scale + translation), project3to2
    (3x4 scaled orthographic view after a rigid motion).  All ranges at
    zero give an identity (for project3to2, the plain xy projection).
    """
    if rotation_range < 0 or scale_range < 0 or translation_range < 0:
        raise ValueError("ranges must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    if kind == "rigid3d":
        R = _quaternion_rotation(rng.standard_normal(3), rng.uniform(-rotation_range, rotation_range))
        t = rng.uniform(-translation_range, translation_range, size=3)
        m = np.eye(4)
        m[:3, :3] = R
        m[:3, 3] = t
    elif kind == "affine2d":
        theta = rng.uniform(-rotation_range, rotation_range)
        scales = rng.uniform(max(1.0 - scale_range, 1e-3), 1.0 + scale_range, size=2)
        t = rng.uniform(-translation_range, translation_range, size=2)
        c, s = math.cos(theta), math.sin(theta)
        m = np.eye(3)
        m[:2, :2] = np.array([[c, -s], [s, c]]) * scales[None, :]
        m[:2, 2] = t
    elif kind == "project3to2":
        R = _quaternion_rotation(rng.standard_normal(3), rng.uniform(-rotation_range, rotation_range))
        t = rng.uniform(-translation_range, translation_range, size=2)
        scale = rng.uniform(max(1.0 - scale_range, 1e-3), 1.0 + scale_range)
        m = np.zeros((3, 4))
        m[0, :3] = scale * R[0]
        m[1, :3] = scale * R[1]
        m[:2, 3] = t
        m[2, 3] = 1.0
    else:
        raise ValueError(f"unknown transform kind {kind!r}")
    return AffineTransform(m, delay=delay)


def simulate_lti(poles, coeffs, T: int, delay: int = 0) -> np.ndarray:
    """Impulse-response track y_k = sum of per-pole damped (co)sinusoids.

    coeffs pairs each pole with (amplitude, phase); phase is only used
    by conjugate pairs.  With exponent m = k - 1 + delay (k = 1..T):
    unit/real poles add a * rho^m * cos(m * pole_phase) and pairs add
    a * rho^m * cos(m * theta + phase).  A delayed track therefore has
    the same pole support with amplitudes rescaled by rho^delay.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if delay < 0:
        raise ValueError("delay must be nonnegative")
    if len(poles) != len(coeffs):
        raise ValueError("one (amplitude, phase) pair is required per pole")
    m = np.arange(T, dtype=np.float64) + delay
    y = np.zeros(T)
    for pole, (amp, phase) in zip(poles, coeffs):
        if pole.kind == KIND_UNIT:
            y += amp
        elif pole.kind == KIND_REAL:
            y += amp * pole.magnitude ** m * np.cos(m * pole.phase)
        elif pole.kind == KIND_PAIR:
            y += amp * pole.magnitude ** m * np.cos(m * pole.phase + phase)
        else:
            raise ValueError(f"unknown pole kind {pole.kind!r}")
    return y


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def load_skeletons(path, format: str = "json") -> list[SkeletonSequence]:
    """Read sequences from a JSON or CSV skeleton file.

    JSON: a list of records {label, fps?, joints?: [names], frames:
    [[[x, y(, z)], ...], ...]}.  CSV: header sequence,frame,joint,x,y
    (,z)(,label), one row per (sequence, frame, joint).
    """
    if format == "json":
        return _load_json(path)
    if format == "csv":
        return _load_csv(path)
    raise ValueError(f"unknown skeleton format {format!r}")


def save_skeletons(sequences: list[SkeletonSequence], path, format: str = "json") -> None:
    if format == "json":
        _save_json(sequences, path)
    elif format == "csv":
        _save_csv(sequences, path)
    else:
        raise ValueError(f"unknown skeleton format {format!r}")


def _sequence_from_record(record: dict, where: str) -> SkeletonSequence:
    try:
        frames = np.asarray(record["frames"], dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{where}: malformed frames: {exc}") from None
    if frames.ndim != 3:
        raise ValueError(f"{where}: frames must nest as [frame][joint][coord]")
    if not np.isfinite(frames).all():
        raise ValueError(f"{where}: NaN or infinite coordinates")
    names = record.get("joints")
    label = record.get("label")
    return SkeletonSequence(
        frames,
        joint_names=tuple(names) if names else None,
        label=int(label) if label is not None else None,
    )


def _load_json(path) -> list[SkeletonSequence]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise ValueError(f"{path}: empty skeleton file")
    records = json.loads(text)
    if not isinstance(records, list) or not records:
        raise ValueError(f"{path}: expected a non-empty list of sequence records")
    return [_sequence_from_record(r, f"{path}[{i}]") for i, r in enumerate(records)]


def _save_json(sequences, path) -> None:
    records = []
    for s in sequences:
        rec = {"frames": s.data.tolist()}
        if s.label is not None:
            rec["label"] = s.label
        if s.joint_names is not None:
            rec["joints"] = list(s.joint_names)
        records.append(rec)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, sort_keys=True)
        fh.write("\n")


_CSV_BASE = ["sequence", "frame", "joint", "x", "y"]


def _load_csv(path) -> list[SkeletonSequence]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: empty skeleton file")
    header = rows[0]
    if header[: len(_CSV_BASE)] != _CSV_BASE:
        raise ValueError(f"{path}: header must start with {','.join(_CSV_BASE)}")
    has_z = "z" in header
    has_label = "label" in header
    dims = 3 if has_z else 2
    label_col = header.index("label") if has_label else None

    by_seq: dict[str, dict] = {}
    order: list[str] = []
    for row in rows[1:]:
        sid = row[0]
        if sid not in by_seq:
            by_seq[sid] = {"points": {}, "label": None}
            order.append(sid)
        entry = by_seq[sid]
        frame, joint = int(row[1]), int(row[2])
        coords = [float(v) for v in row[3 : 3 + dims]]
        entry["points"][(frame, joint)] = coords
        if label_col is not None and row[label_col] != "":
            label = int(row[label_col])
            if entry["label"] is not None and entry["label"] != label:
                raise ValueError(f"{path}: sequence {sid} has conflicting labels")
            entry["label"] = label

    sequences = []
    for sid in order:
        points = by_seq[sid]["points"]
        T = max(k[0] for k in points) + 1
        J = max(k[1] for k in points) + 1
        if len(points) != T * J:
            raise ValueError(f"{path}: sequence {sid} has an incomplete frame/joint grid")
        data = np.empty((T, J, dims))
        for (frame, joint), coords in points.items():
            data[frame, joint] = coords
        if not np.isfinite(data).all():
            raise ValueError(f"{path}: sequence {sid} has NaN coordinates")
        sequences.append(SkeletonSequence(data, label=by_seq[sid]["label"]))
    return sequences


def _save_csv(sequences, path) -> None:
    dims = sequences[0].dims if sequences else 2
    header = list(_CSV_BASE) + (["z"] if dims == 3 else []) + ["label"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, s in enumerate(sequences):
            label = "" if s.label is None else s.label
            for frame in range(s.frames):
                for joint in range(s.joints):
                    coords = [repr(float(v)) for v in s.data[frame, joint]]
                    writer.writerow([i, frame, joint, *coords, label])
