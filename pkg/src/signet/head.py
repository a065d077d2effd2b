"""Classification-head training on cached backbone features.

The head is dense(1024, relu) -> dense(num_classes) -> softmax, trained
with categorical cross-entropy and Adam on mini-batches, with early
stopping on validation loss and best-epoch weight restore. The backbone
never appears here: training sees only cached feature vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from signet import bundle
from signet.errors import ConfigError, DataError, FormatError, NumericError, ShapeError
from signet.nnops.kernels import as_f32, dense, require_finite, softmax
from signet.rng import derive_rng

PROB_FLOOR = 1e-12  # cross-entropy clamp; the loss is undefined at p = 0

_FIELDS = ("w1", "b1", "w2", "b2")


@dataclass
class HeadTensors:
    """Four arrays shaped like the head's parameters (params, grads, moments)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def astuple(self):
        return (self.w1, self.b1, self.w2, self.b2)

    def copy(self):
        return type(self)(*(a.copy() for a in self.astuple()))


class HeadGrads(HeadTensors):
    pass


@dataclass
class HeadParams(HeadTensors):
    """Trainable head parameters: w1 (features, hidden), w2 (hidden, classes)."""

    def __post_init__(self):
        for name in _FIELDS:
            setattr(self, name, as_f32(getattr(self, name)))
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ShapeError("head weight matrices must be rank 2")
        if self.b1.shape != (self.w1.shape[1],) or self.b2.shape != (self.w2.shape[1],):
            raise ShapeError(
                f"head bias shapes {self.b1.shape}/{self.b2.shape} do not match "
                f"weights {self.w1.shape}/{self.w2.shape}"
            )
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ShapeError(
                f"head hidden dims differ: {self.w1.shape[1]} vs {self.w2.shape[0]}"
            )
        for name in _FIELDS:
            require_finite(getattr(self, name), f"head parameter {name}")

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the step counter."""

    m: HeadTensors
    v: HeadTensors
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: HeadParams) -> "AdamState":
        zeros = lambda: HeadTensors(*(np.zeros_like(a) for a in params.astuple()))
        return cls(m=zeros(), v=zeros(), step_count=0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-7
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ConfigError(f"{name} must be in [0, 1), got {b}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainHistory:
    """Per-epoch metrics; best_epoch is the argmin of validation loss (1-based)."""

    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def init_head(
    num_classes: int,
    seed: int = 0,
    feature_dim: int = 1280,
    hidden_dim: int = 1024,
) -> HeadParams:
    """Seeded Glorot-uniform kernels, zero biases."""
    if num_classes < 1:
        raise ConfigError(f"num_classes must be >= 1, got {num_classes}")

    def glorot(rng, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)

    w1 = glorot(derive_rng(seed, "head-init", "fc1"), feature_dim, hidden_dim)
    w2 = glorot(derive_rng(seed, "head-init", "fc2"), hidden_dim, num_classes)
    return HeadParams(
        w1=w1,
        b1=np.zeros(hidden_dim, np.float32),
        w2=w2,
        b2=np.zeros(num_classes, np.float32),
    )


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be rank 1, got shape {labels.shape}")
    labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise DataError(f"class index {bad} out of range [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes), np.float32)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def head_logits(params: HeadParams, features: np.ndarray) -> np.ndarray:
    hidden = dense(features, params.w1, params.b1, activation="relu")
    return dense(hidden, params.w2, params.b2, activation="none")


def cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Batch mean of -sum_i y_i * log(max(p_i, 1e-12)). Always >= 0."""
    probs = as_f32(probs)
    onehot = as_f32(onehot)
    if probs.shape != onehot.shape:
        raise ShapeError(
            f"cross_entropy shapes differ: probs {probs.shape} vs onehot {onehot.shape}"
        )
    logp = np.log(np.maximum(probs, np.float32(PROB_FLOOR)))
    per_sample = -(onehot * logp).sum(axis=1)
    return float(per_sample.mean(dtype=np.float64))


def loss_grad_logits(logits: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. raw logits: (softmax - y) / batch."""
    logits = as_f32(logits)
    onehot = as_f32(onehot)
    if logits.shape != onehot.shape:
        raise ShapeError(
            f"loss_grad_logits shapes differ: logits {logits.shape} vs onehot {onehot.shape}"
        )
    probs = softmax(logits)
    return (probs - onehot) / np.float32(logits.shape[0])


def _loss_and_grads(features, onehot, params):
    """One fused forward/backward pass; returns (loss, probs, grads)."""
    z1 = features @ params.w1 + params.b1
    a1 = np.maximum(z1, np.float32(0))
    logits = a1 @ params.w2 + params.b2
    probs = softmax(logits)
    loss = cross_entropy(probs, onehot)

    dz2 = (probs - onehot) / np.float32(features.shape[0])
    gw2 = a1.T @ dz2
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ params.w2.T
    dz1 = da1 * (z1 > 0)
    gw1 = features.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, probs, HeadGrads(gw1, gb1, gw2, gb2)


def head_backward(features, onehot, params: HeadParams) -> HeadGrads:
    """Exact backprop through dense -> relu -> dense -> softmax -> cross-entropy."""
    features = as_f32(features)
    onehot = as_f32(onehot)
    if features.ndim != 2 or features.shape[1] != params.feature_dim:
        raise ShapeError(
            f"features shape {features.shape} does not match head feature dim "
            f"{params.feature_dim}"
        )
    if onehot.shape != (features.shape[0], params.num_classes):
        raise ShapeError(
            f"onehot shape {onehot.shape} does not match batch {features.shape[0]} "
            f"x {params.num_classes} classes"
        )
    _, _, grads = _loss_and_grads(features, onehot, params)
    return grads


def adam_step(
    params: HeadParams,
    grads: HeadTensors,
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[HeadParams, AdamState]:
    """One Adam update with bias correction. Returns fresh params and state."""
    for name, g in zip(_FIELDS, grads.astuple()):
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}; aborting the step")

    t = state.step_count + 1
    lr = np.float32(cfg.learning_rate)
    b1 = np.float32(cfg.beta1)
    b2 = np.float32(cfg.beta2)
    eps = np.float32(cfg.eps_adam)
    corr1 = np.float32(1.0 - cfg.beta1**t)
    corr2 = np.float32(1.0 - cfg.beta2**t)

    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(
        params.astuple(), grads.astuple(), state.m.astuple(), state.v.astuple()
    ):
        g = as_f32(g)
        m = b1 * m + (np.float32(1) - b1) * g
        v = b2 * v + (np.float32(1) - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return (
        HeadParams(*new_p),
        AdamState(m=HeadTensors(*new_m), v=HeadTensors(*new_v), step_count=t),
    )


def predict(params: HeadParams, features) -> tuple[np.ndarray, np.ndarray]:
    """Class indices (ties broken toward the lowest index) and probability rows."""
    features = as_f32(features)
    probs = softmax(head_logits(params, features))
    return probs.argmax(axis=1), probs


def train_head(
    train_features,
    train_labels,
    val_features,
    val_labels,
    cfg: TrainConfig,
    num_classes: int | None = None,
) -> tuple[HeadParams, TrainHistory]:
    """Train the head on cached features; returns best-epoch params and history.

    Runs at most cfg.epochs epochs of seeded shuffled mini-batches, evaluates
    on the validation set after each epoch, and stops early once validation
    loss has failed to improve for more than cfg.patience consecutive epochs.
    The returned parameters are the best-validation-loss snapshot, not the
    last epoch's.
    """
    train_features = as_f32(train_features)
    val_features = as_f32(val_features)
    if train_features.ndim != 2 or val_features.ndim != 2:
        raise ShapeError("features must be rank-2 (samples, feature_dim)")
    n_train = train_features.shape[0]
    if n_train == 0:
        raise ConfigError("training set is empty")
    if val_features.shape[0] == 0:
        raise ConfigError("validation set is empty; early stopping needs one")

    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(train_labels.max(), val_labels.max())) + 1
    train_onehot = one_hot(train_labels, num_classes)
    val_onehot = one_hot(val_labels, num_classes)

    params = init_head(num_classes, seed=cfg.seed, feature_dim=train_features.shape[1])
    state = AdamState.zeros_like(params)

    history = TrainHistory()
    best_loss = np.inf
    best_params = params
    bad_streak = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = derive_rng(cfg.seed, "shuffle", epoch).permutation(n_train)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n_train, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, probs, grads = _loss_and_grads(
                train_features[idx], train_onehot[idx], params
            )
            loss_sum += loss * idx.size
            correct += int((probs.argmax(axis=1) == train_labels[idx]).sum())
            params, state = adam_step(params, grads, state, cfg)

        val_idx, val_probs = predict(params, val_features)
        val_loss = cross_entropy(val_probs, val_onehot)
        val_acc = float((val_idx == val_labels).mean())
        history.epochs.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / n_train,
                train_accuracy=correct / n_train,
                val_loss=val_loss,
                val_accuracy=val_acc,
            )
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = params.copy()
            history.best_epoch = epoch
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak > cfg.patience:
                break
    return best_params, history


def save_checkpoint(
    path,
    params: HeadParams,
    class_names: list[str],
    cfg: TrainConfig | None = None,
    extra_metadata: dict[str, str] | None = None,
) -> None:
    """Write head parameters as a .slrw bundle with class/config metadata."""
    if len(class_names) != params.num_classes:
        raise ConfigError(
            f"{len(class_names)} class names for a {params.num_classes}-class head"
        )
    metadata = {
        "kind": "head-checkpoint",
        "num_classes": str(params.num_classes),
        "class_names": json.dumps(class_names),
    }
    if cfg is not None:
        metadata["train_config"] = cfg.to_json()
    metadata.update(extra_metadata or {})
    entries = {
        "head.fc1.kernel": params.w1,
        "head.fc1.bias": params.b1,
        "head.fc2.kernel": params.w2,
        "head.fc2.bias": params.b2,
    }
    bundle.save_bundle(path, entries, metadata)


def load_checkpoint(path) -> tuple[HeadParams, list[str], dict[str, str]]:
    b = bundle.load_bundle(path)
    required = ["head.fc1.kernel", "head.fc1.bias", "head.fc2.kernel", "head.fc2.bias"]
    missing = [n for n in required if n not in b.entries]
    if missing:
        raise FormatError(f"checkpoint missing entries: {', '.join(missing)}")
    params = HeadParams(*(b.entries[n] for n in required))
    try:
        class_names = json.loads(b.metadata.get("class_names", "[]"))
    except json.JSONDecodeError as e:
        raise FormatError(f"checkpoint class_names metadata malformed: {e}")
    if class_names and len(class_names) != params.num_classes:
        raise FormatError(
            f"checkpoint lists {len(class_names)} class names for a "
            f"{params.num_classes}-class head"
        )
    if not class_names:
        class_names = [str(i) for i in range(params.num_classes)]
    return params, class_names, b.metadata
