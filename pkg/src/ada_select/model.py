"""Small softmax classifiers trained by minibatch gradient descent.

Two architectures: a bare linear softmax layer, and a one-hidden-layer
tanh network. The hidden activations double as the feature space the
density estimators work in, mirroring how a segmentation backbone's
penultimate features would be reused. Gradients are analytic and are
validated against finite differences in the test suite.

Checkpoint format (documented in the README): a 16-byte header of four
little-endian uint32 values — magic, format version, feature_dim,
class_count — followed by the flattened float64 parameter vector. The
version doubles as the architecture tag (1 = linear, 2 = one-hidden);
the hidden width is recovered from the payload length.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .pool import DomainPool, labeled_training_set
from .util import derive_rng

CHECKPOINT_MAGIC = 0xADA5E1EC
ARCH_VERSIONS = {"linear": 1, "one_hidden": 2}
INIT_SCALE = 0.1


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise InvalidInput(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise InvalidInput(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInput(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class Classifier:
    arch: str
    feature_dim: int
    class_count: int
    hidden_units: int
    w1: np.ndarray | None  # (d, h), None for linear
    b1: np.ndarray | None  # (h,)
    w2: np.ndarray  # (d or h, C)
    b2: np.ndarray  # (C,)

    def clone(self) -> "Classifier":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class EvalReport:
    per_class_iou: np.ndarray  # (C,), NaN where the class never occurs
    miou: float
    accuracy: float
    confusion: np.ndarray = field(repr=False, default=None)


def init_classifier(
    feature_dim: int,
    class_count: int,
    arch: str = "one_hidden",
    hidden_units: int = 16,
    seed: int = 0,
) -> Classifier:
    if arch not in ARCH_VERSIONS:
        raise InvalidInput(f"unknown architecture: {arch!r}")
    if feature_dim < 1 or class_count < 2:
        raise InvalidInput("need feature_dim >= 1 and class_count >= 2")
    if arch == "one_hidden" and hidden_units < 1:
        raise InvalidInput(f"hidden_units must be >= 1, got {hidden_units}")
    rng = derive_rng(seed, "model-init")
    if arch == "linear":
        return Classifier(
            arch=arch,
            feature_dim=feature_dim,
            class_count=class_count,
            hidden_units=0,
            w1=None,
            b1=None,
            w2=INIT_SCALE * rng.standard_normal((feature_dim, class_count)),
            b2=np.zeros(class_count),
        )
    return Classifier(
        arch=arch,
        feature_dim=feature_dim,
        class_count=class_count,
        hidden_units=hidden_units,
        w1=INIT_SCALE * rng.standard_normal((feature_dim, hidden_units)),
        b1=np.zeros(hidden_units),
        w2=INIT_SCALE * rng.standard_normal((hidden_units, class_count)),
        b2=np.zeros(class_count),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward(clf: Classifier, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (hidden activations or x itself, logits)."""
    if clf.arch == "linear":
        return x, x @ clf.w2 + clf.b2
    h = np.tanh(x @ clf.w1 + clf.b1)
    return h, h @ clf.w2 + clf.b2


def predict_proba(clf: Classifier, x: np.ndarray) -> np.ndarray:
    """Class probabilities; accepts one vector (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != clf.feature_dim:
        raise InvalidInput(f"expected (*, {clf.feature_dim}) inputs, got {x.shape}")
    probs = _softmax(_forward(clf, x)[1])
    return probs[0] if single else probs


def extract_feature(clf: Classifier, x: np.ndarray) -> np.ndarray:
    """The representation density estimation runs in: hidden activations
    for the one-hidden network, the raw input for the linear model."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != clf.feature_dim:
        raise InvalidInput(f"expected (*, {clf.feature_dim}) inputs, got {x.shape}")
    rep = _forward(clf, x)[0]
    return rep[0] if single else rep


def loss_and_grad(
    clf: Classifier, x: np.ndarray, y: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its analytic gradients."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise InvalidInput("need a non-empty aligned batch")
    if np.any(y < 0) or np.any(y >= clf.class_count):
        raise InvalidInput("labels out of range")
    n = x.shape[0]
    rep, logits = _forward(clf, x)
    probs = _softmax(logits)
    true_probs = probs[np.arange(n), y]
    loss = float(-np.mean(np.log(np.maximum(true_probs, 1e-300))))

    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n  # (n, C)
    grads = {"w2": rep.T @ delta, "b2": delta.sum(axis=0)}
    if clf.arch == "one_hidden":
        dh = (delta @ clf.w2.T) * (1.0 - rep * rep)  # tanh'
        grads["w1"] = x.T @ dh
        grads["b1"] = dh.sum(axis=0)
    return loss, grads


def _sgd_epochs(clf: Classifier, x: np.ndarray, y: np.ndarray, spec: TrainSpec) -> None:
    rng = derive_rng(spec.seed, "train-order")
    n = x.shape[0]
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            rows = order[start : start + spec.batch_size]
            _, grads = loss_and_grad(clf, x[rows], y[rows])
            for name, g in grads.items():
                arr = getattr(clf, name)
                arr -= spec.learning_rate * g


def warmup(
    pool: DomainPool,
    spec: TrainSpec,
    arch: str = "one_hidden",
    hidden_units: int = 16,
) -> Classifier:
    """Train a fresh classifier on a (fully labeled) source pool."""
    x, y = labeled_training_set(pool)
    if x.shape[0] == 0:
        raise InvalidInput("warmup needs at least one labeled sample")
    clf = init_classifier(
        pool.feature_dim, pool.class_count, arch=arch, hidden_units=hidden_units, seed=spec.seed
    )
    _sgd_epochs(clf, x, y, spec)
    return clf


def finetune(clf: Classifier, pools: list[DomainPool], spec: TrainSpec) -> Classifier:
    """Continue training on the union of the pools' labeled samples.

    The input classifier is left untouched; a trained copy is returned.
    """
    parts = [labeled_training_set(p) for p in pools]
    xs = [x for x, _ in parts if x.shape[0] > 0]
    ys = [y for _, y in parts if y.shape[0] > 0]
    if not xs:
        raise InvalidInput("finetune needs at least one labeled sample")
    x, y = np.concatenate(xs), np.concatenate(ys)
    tuned = clf.clone()
    _sgd_epochs(tuned, x, y, spec)
    return tuned


def evaluate(clf: Classifier, pool: DomainPool) -> EvalReport:
    """Accuracy, per-class IoU, and mean IoU over a pool's true labels.

    A class absent from both predictions and ground truth has undefined
    IoU (NaN) and is skipped by the mean.
    """
    x = pool.feature_matrix()
    y = pool.true_classes()
    pred = np.argmax(predict_proba(clf, x), axis=1)
    c = pool.class_count
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / np.maximum(denom, 1.0), np.nan)
    return EvalReport(
        per_class_iou=iou,
        miou=float(np.nanmean(iou)),
        accuracy=float(np.mean(pred == y)),
        confusion=confusion,
    )


def _param_fields(clf: Classifier) -> list[str]:
    return ["w2", "b2"] if clf.arch == "linear" else ["w1", "b1", "w2", "b2"]


def get_flat_params(clf: Classifier) -> np.ndarray:
    return np.concatenate([getattr(clf, f).ravel() for f in _param_fields(clf)])


def set_flat_params(clf: Classifier, flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=np.float64)
    offset = 0
    for f in _param_fields(clf):
        arr = getattr(clf, f)
        size = arr.size
        if offset + size > flat.size:
            raise InvalidInput("parameter vector too short for this classifier")
        setattr(clf, f, flat[offset : offset + size].reshape(arr.shape).copy())
        offset += size
    if offset != flat.size:
        raise InvalidInput("parameter vector too long for this classifier")


def save_checkpoint(clf: Classifier, path) -> None:
    header = struct.pack(
        "<4I", CHECKPOINT_MAGIC, ARCH_VERSIONS[clf.arch], clf.feature_dim, clf.class_count
    )
    payload = get_flat_params(clf).astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def load_checkpoint(path) -> Classifier:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise InvalidInput(f"checkpoint {path} is truncated")
    magic, version, d, c = struct.unpack("<4I", raw[:16])
    if magic != CHECKPOINT_MAGIC:
        raise InvalidInput(f"checkpoint {path} has wrong magic number")
    payload = np.frombuffer(raw[16:], dtype="<f8")
    if version == ARCH_VERSIONS["linear"]:
        clf = init_classifier(d, c, arch="linear", seed=0)
        expected = d * c + c
        if payload.size != expected:
            raise InvalidInput(
                f"checkpoint payload has {payload.size} values, expected {expected}"
            )
    elif version == ARCH_VERSIONS["one_hidden"]:
        # total = d*h + h + h*c + c  =>  h = (total - c) / (d + 1 + c)
        rem = payload.size - c
        if rem <= 0 or rem % (d + 1 + c) != 0:
            raise InvalidInput("checkpoint payload length matches no hidden width")
        clf = init_classifier(d, c, arch="one_hidden", hidden_units=rem // (d + 1 + c), seed=0)
    else:
        raise InvalidInput(f"checkpoint {path} has unknown format version {version}")
    set_flat_params(clf, payload)
    return clf
