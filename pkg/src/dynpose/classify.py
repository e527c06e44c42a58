"""Classifiers over concatenated binary pole-support features.

Binary supports are designed to be directly comparable, so a Hamming
k-nearest-neighbor index or a linear softmax head trained with
cross-entropy is enough at this scale.  Aggregation of per-clip votes
follows the clip sampler's mean-then-argmax rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .binarize import BinaryCode
from .clips import aggregate_predictions

DEFAULT_KNN_K = 5
# headline loss mix (classification : binarization : reconstruction)
# carried as provenance metadata; only cross-entropy is optimized here
DEFAULT_LOSS_WEIGHT_RATIOS = (2.0, 1.0, 0.1)

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(axis=1)


@dataclass(frozen=True)
class FeatureLayout:
    """Expected block structure of one feature: joint-major, dim-minor."""

    joints: int
    dims: int
    code_length: int
    dictionary_hash: str

    @property
    def feature_length(self) -> int:
        return self.joints * self.dims * self.code_length


@dataclass(frozen=True)
class PoleSupportFeature:
    """Concatenated per-coordinate binary codes for one clip."""

    bits: np.ndarray
    dictionary_hash: str
    clip_id: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise ValueError("feature bits must be a flat vector")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("feature bits must be 0/1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return self.bits.shape[0]


def assemble_feature(
    codes: list[BinaryCode], layout: FeatureLayout, clip_id: str = ""
) -> PoleSupportFeature:
    """Concatenate per-coordinate codes in layout order (joint-major)."""
    if len(codes) != layout.joints * layout.dims:
        raise ValueError(
            f"layout expects {layout.joints * layout.dims} codes, got {len(codes)}"
        )
    for code in codes:
        if code.dictionary_hash != layout.dictionary_hash:
            raise ValueError(
                f"dictionary hash mismatch: code {code.dictionary_hash!r} vs "
                f"layout {layout.dictionary_hash!r}"
            )
        if len(code) != layout.code_length:
            raise ValueError(f"code length {len(code)} does not match layout {layout.code_length}")
    bits = np.concatenate([c.zero_one_bits().astype(np.uint8) for c in codes])
    return PoleSupportFeature(bits, layout.dictionary_hash, clip_id)


# ---------------------------------------------------------------------------
# Hamming k-NN
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnnIndex:
    """Packed-bit training features; distances via XOR popcount."""

    packed: np.ndarray
    labels: np.ndarray
    class_labels: tuple[int, ...]
    feature_length: int
    dictionary_hash: str


def knn_fit(features: list[PoleSupportFeature], labels) -> KnnIndex:
    if not features:
        raise ValueError("empty training set")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(features),):
        raise ValueError("one label per training feature is required")
    length = len(features[0])
    dhash = features[0].dictionary_hash
    for f in features:
        if len(f) != length or f.dictionary_hash != dhash:
            raise ValueError("training features disagree in length or dictionary")
    matrix = np.stack([f.bits for f in features])
    return KnnIndex(
        packed=np.packbits(matrix, axis=1),
        labels=labels,
        class_labels=tuple(int(c) for c in np.unique(labels)),
        feature_length=length,
        dictionary_hash=dhash,
    )


def knn_predict(index: KnnIndex, query: PoleSupportFeature, k: int = DEFAULT_KNN_K) -> np.ndarray:
    """Vote fractions of the k Hamming-nearest training features.

    Equal distances are broken by training-sample insertion order.
    """
    n = index.packed.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if len(query) != index.feature_length or query.dictionary_hash != index.dictionary_hash:
        raise ValueError("query feature does not match the index")
    qp = np.packbits(query.bits)
    distances = _POPCOUNT[index.packed ^ qp[None, :]].sum(axis=1)
    nearest = np.argsort(distances, kind="stable")[:k]
    probs = np.zeros(len(index.class_labels))
    for pos, cls in enumerate(index.class_labels):
        probs[pos] = np.count_nonzero(index.labels[nearest] == cls)
    return probs / k


# ---------------------------------------------------------------------------
# linear softmax head
# ---------------------------------------------------------------------------


@dataclass
class ClassifierConfig:
    lr: float = 0.1
    epochs: int = 500
    l2: float = 1e-4


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: np.ndarray
    class_labels: tuple[int, ...]
    metadata: dict = field(default_factory=dict)
    loss_history: tuple[float, ...] = ()

    def __post_init__(self):
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("model parameters must be finite")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss_and_grad(W, b, X, label_idx, l2: float):
    """Mean cross-entropy + (l2/2)||W||^2 with analytic gradients."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = X.shape[0]
    probs = _softmax_rows(X @ W.T + b[None, :])
    picked = probs[np.arange(n), label_idx]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300)))) + 0.5 * l2 * float(np.sum(W * W))
    delta = probs
    delta[np.arange(n), label_idx] -= 1.0
    delta /= n
    grad_W = delta.T @ X + l2 * W
    grad_b = delta.sum(axis=0)
    return loss, grad_W, grad_b


def softmax_train(
    features: list[PoleSupportFeature], labels, config: ClassifierConfig | None = None
) -> LinearModel:
    """Full-batch gradient descent with a halve-on-increase safeguard.

    The recorded training loss is non-increasing across epochs: any
    step that would raise it is retried at half the learning rate.
    """
    config = config or ClassifierConfig()
    labels = np.asarray(labels, dtype=np.int64)
    classes = tuple(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise ValueError("softmax training requires at least 2 classes")
    X = np.stack([f.bits for f in features]).astype(np.float64)
    label_idx = np.searchsorted(np.asarray(classes), labels)
    c, F = len(classes), X.shape[1]
    W = np.zeros((c, F))
    b = np.zeros(c)
    lr = config.lr
    history = []
    for _ in range(config.epochs):
        loss, gW, gb = softmax_loss_and_grad(W, b, X, label_idx, config.l2)
        history.append(loss)
        while True:
            W2, b2 = W - lr * gW, b - lr * gb
            loss2, _, _ = softmax_loss_and_grad(W2, b2, X, label_idx, config.l2)
            if loss2 <= loss + 1e-12 * (1.0 + abs(loss)) or lr < 1e-12:
                break
            lr *= 0.5
        W, b = W2, b2
    final_loss, _, _ = softmax_loss_and_grad(W, b, X, label_idx, config.l2)
    history.append(final_loss)
    return LinearModel(
        weights=W,
        bias=b,
        class_labels=classes,
        metadata={"loss_weight_ratios": DEFAULT_LOSS_WEIGHT_RATIOS},
        loss_history=tuple(history),
    )


def softmax_predict(model: LinearModel, feature: PoleSupportFeature) -> np.ndarray:
    x = feature.bits.astype(np.float64)
    logits = model.weights @ x + model.bias
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def model_to_json(model: LinearModel) -> str:
    return json.dumps(
        {
            "bias": model.bias.tolist(),
            "class_labels": list(model.class_labels),
            "metadata": {k: list(v) if isinstance(v, tuple) else v for k, v in model.metadata.items()},
            "weights": model.weights.tolist(),
        },
        sort_keys=True,
    )


def model_from_json(text: str) -> LinearModel:
    obj = json.loads(text)
    return LinearModel(
        weights=np.asarray(obj["weights"], dtype=np.float64),
        bias=np.asarray(obj["bias"], dtype=np.float64),
        class_labels=tuple(int(c) for c in obj["class_labels"]),
        metadata=obj.get("metadata", {}),
    )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    per_class_accuracy: np.ndarray
    class_labels: tuple[int, ...]


def evaluate(predict, samples, class_labels) -> EvalResult:
    """Score (label, per-clip features) samples with a probability fn.

    ``predict`` maps one feature to a probability vector over
    ``class_labels``; per-clip probabilities are averaged before the
    argmax.  Confusion rows are true classes, columns predictions.
    """
    if not samples:
        raise ValueError("empty test set")
    class_labels = tuple(int(c) for c in class_labels)
    pos = {c: i for i, c in enumerate(class_labels)}
    c = len(class_labels)
    confusion = np.zeros((c, c), dtype=np.int64)
    correct = 0
    for label, clip_features in samples:
        if label not in pos:
            raise ValueError(f"test label {label} missing from the class label space")
        probs = np.stack([predict(f) for f in clip_features])
        winner, _ = aggregate_predictions(probs)
        confusion[pos[label], winner] += 1
        if class_labels[winner] == label:
            correct += 1
    row_sums = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(row_sums > 0, np.diag(confusion) / np.maximum(row_sums, 1), np.nan)
    return EvalResult(
        accuracy=correct / len(samples),
        confusion=confusion,
        per_class_accuracy=per_class,
        class_labels=class_labels,
    )
