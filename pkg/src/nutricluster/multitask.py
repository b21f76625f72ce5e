"""Desk-scale multi-task classifier over hand-crafted image features.

A single shared hidden layer feeds two softmax heads: one predicts the
food category, the other the category's cluster. Both heads are trained
jointly on a weighted sum of cross-entropies, so the cluster head acts
as a coarse auxiliary signal for the fine-grained category head.

Everything is plain numpy; the model is small enough that mini-batch
gradient descent with a step-decay schedule converges in seconds.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .clustering import Hierarchy
from .errors import (
    ConfigurationError,
    ConsistencyError,
    ShapeError,
    TrainingError,
    ValidationError,
)

PARAM_NAMES = ("W0", "b0", "W1", "b1", "W2", "b2")

ACTIVATIONS = ("relu", "identity")


def derive_cluster_labels(hierarchy: Hierarchy) -> dict[str, int]:
    """Map every category to its cluster id, the coarse training target."""
    return {label: cluster.id for cluster in hierarchy.clusters for label in cluster.members}


@dataclass
class MultiTaskModel:
    """Shared trunk with a category head and a cluster head.

    W0/b0 form the shared layer (ReLU by default, or a plain affine map
    when ``activation`` is "identity"); W1/b1 produce category logits
    and W2/b2 cluster logits.
    """

    W0: np.ndarray
    b0: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}"
            )
        d, h = self.W0.shape
        if self.b0.shape != (h,):
            raise ShapeError(f"b0 must have shape ({h},), got {self.b0.shape}")
        if self.W1.shape[0] != h or self.b1.shape != (self.W1.shape[1],):
            raise ShapeError("category head does not match the hidden width")
        if self.W2.shape[0] != h or self.b2.shape != (self.W2.shape[1],):
            raise ShapeError("cluster head does not match the hidden width")

    @classmethod
    def init(cls, d: int, h: int, n_categories: int, n_clusters: int, seed: int = 0,
             activation: str = "relu") -> "MultiTaskModel":
        """Small random weights, zero biases."""
        if min(d, h, n_categories, n_clusters) < 1:
            raise ConfigurationError("all model dimensions must be positive")
        rng = np.random.default_rng(seed)
        scale0 = 1.0 / np.sqrt(d)
        scale1 = 1.0 / np.sqrt(h)
        return cls(
            W0=rng.normal(0.0, scale0, size=(d, h)),
            b0=np.zeros(h),
            W1=rng.normal(0.0, scale1, size=(h, n_categories)),
            b1=np.zeros(n_categories),
            W2=rng.normal(0.0, scale1, size=(h, n_clusters)),
            b2=np.zeros(n_clusters),
            activation=activation,
        )

    @property
    def dims(self) -> dict[str, int]:
        return {
            "d": self.W0.shape[0],
            "h": self.W0.shape[1],
            "K": self.W1.shape[1],
            "M": self.W2.shape[1],
        }

    def copy(self) -> "MultiTaskModel":
        return dataclasses.replace(
            self, **{name: getattr(self, name).copy() for name in PARAM_NAMES}
        )

    def hidden(self, X: np.ndarray) -> np.ndarray:
        pre = X @ self.W0 + self.b0
        if self.activation == "relu":
            return np.maximum(pre, 0.0)
        return pre

    def logits(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        hidden = self.hidden(X)
        return hidden @ self.W1 + self.b1, hidden @ self.W2 + self.b2

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Argmax of each head; exact ties resolve to the lowest index."""
        cat_logits, clu_logits = self.logits(X)
        return np.argmax(cat_logits, axis=1), np.argmax(clu_logits, axis=1)

    def to_json_obj(self) -> dict:
        return {
            "activation": self.activation,
            "w0": {"weight": self.W0.tolist(), "bias": self.b0.tolist()},
            "w1": {"weight": self.W1.tolist(), "bias": self.b1.tolist()},
            "w2": {"weight": self.W2.tolist(), "bias": self.b2.tolist()},
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "MultiTaskModel":
        def pair(key):
            layer = obj[key]
            return np.asarray(layer["weight"], dtype=float), np.asarray(layer["bias"], dtype=float)

        W0, b0 = pair("w0")
        W1, b1 = pair("w1")
        W2, b2 = pair("w2")
        return cls(W0=W0, b0=b0, W1=W1, b1=b1, W2=W2, b2=b2,
                   activation=obj.get("activation", "relu"))


@dataclass(frozen=True)
class TrainingConfig:
    """Hyper-parameters for joint training.

    lambda_category and lambda_cluster weight the two cross-entropy
    terms. The learning rate is divided by decay_factor every
    decay_interval epochs.
    """

    lambda_category: float = 1.0
    lambda_cluster: float = 1.0
    hidden_dim: int = 64
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 0.05
    decay_factor: float = 2.0
    decay_interval: int = 5
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        if self.lambda_category < 0 or self.lambda_cluster < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.lambda_category == 0 and self.lambda_cluster == 0:
            raise ConfigurationError("at least one loss lambda must be positive")
        if self.hidden_dim < 1:
            raise ConfigurationError("hidden_dim must be at least 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be finite and non-negative")
        if self.decay_factor < 1.0:
            raise ConfigurationError("decay_factor must be at least 1")
        if self.decay_interval < 1:
            raise ConfigurationError("decay_interval must be at least 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}"
            )

    @property
    def lambdas(self) -> tuple[float, float]:
        return (self.lambda_category, self.lambda_cluster)

    def rate_at(self, epoch: int) -> float:
        """Step-decay schedule: halved (by decay_factor) every interval."""
        return self.learning_rate / self.decay_factor ** (epoch // self.decay_interval)

    def to_json_obj(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrainingConfig":
        return cls(**obj)


def _check_labels(labels: np.ndarray, n_classes: int, head: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"{head} labels must be one-dimensional")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(
            f"{head} label out of range: expected integers in [0, {n_classes})"
        )
    return labels.astype(int)


def _check_batch(model: MultiTaskModel, X, y_cat, y_clu, lambdas):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.W0.shape[0]:
        raise ShapeError(
            f"feature matrix must have shape (n, {model.W0.shape[0]}), got {X.shape}"
        )
    if X.shape[0] == 0:
        raise ValidationError("feature matrix is empty")
    if not np.all(np.isfinite(X)):
        raise ValidationError("feature matrix contains non-finite values")
    y_cat = _check_labels(y_cat, model.W1.shape[1], "category")
    y_clu = _check_labels(y_clu, model.W2.shape[1], "cluster")
    if len(y_cat) != len(X) or len(y_clu) != len(X):
        raise ShapeError("labels must have one entry per feature row")
    lam1, lam2 = float(lambdas[0]), float(lambdas[1])
    if lam1 < 0 or lam2 < 0:
        raise ConfigurationError("loss lambdas must be non-negative")
    if lam1 == 0 and lam2 == 0:
        raise ConfigurationError("at least one loss lambda must be positive")
    return X, y_cat, y_clu, lam1, lam2


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def multitask_loss(model: MultiTaskModel, X, y_cat, y_clu, lambdas=(1.0, 1.0)) -> float:
    """Summed cross-entropy of both heads over the batch.

    loss = lambda_category * CE(category head) + lambda_cluster * CE(cluster head),
    each CE being a sum (not a mean) of per-sample negative log-likelihoods.
    With zeroed parameters both heads are uniform and each sample
    contributes ln K + ln M.
    """
    X, y_cat, y_clu, lam1, lam2 = _check_batch(model, X, y_cat, y_clu, lambdas)
    cat_logits, clu_logits = model.logits(X)
    rows = np.arange(len(X))
    loss = 0.0
    if lam1 > 0:
        loss += lam1 * float(-_log_softmax(cat_logits)[rows, y_cat].sum())
    if lam2 > 0:
        loss += lam2 * float(-_log_softmax(clu_logits)[rows, y_clu].sum())
    return loss


def loss_gradients(model: MultiTaskModel, X, y_cat, y_clu, lambdas=(1.0, 1.0)) -> dict[str, np.ndarray]:
    """Analytic gradients of multitask_loss for every parameter."""
    X, y_cat, y_clu, lam1, lam2 = _check_batch(model, X, y_cat, y_clu, lambdas)
    pre = X @ model.W0 + model.b0
    hidden = np.maximum(pre, 0.0) if model.activation == "relu" else pre
    rows = np.arange(len(X))

    def head_delta(W, b, labels, lam):
        if lam == 0:
            return np.zeros((len(X), W.shape[1]))
        logits = hidden @ W + b
        probs = np.exp(_log_softmax(logits))
        probs[rows, labels] -= 1.0
        return lam * probs

    delta_cat = head_delta(model.W1, model.b1, y_cat, lam1)
    delta_clu = head_delta(model.W2, model.b2, y_clu, lam2)
    back = delta_cat @ model.W1.T + delta_clu @ model.W2.T
    if model.activation == "relu":
        back = back * (pre > 0)
    return {
        "W0": X.T @ back,
        "b0": back.sum(axis=0),
        "W1": hidden.T @ delta_cat,
        "b1": delta_cat.sum(axis=0),
        "W2": hidden.T @ delta_clu,
        "b2": delta_clu.sum(axis=0),
    }


@dataclass(frozen=True)
class TrainResult:
    model: MultiTaskModel
    trace: list[float] = field(default_factory=list)


def train(model: MultiTaskModel, X, y_cat, y_clu, config: TrainingConfig) -> TrainResult:
    """Mini-batch gradient descent on the joint loss.

    The input model is left untouched; a trained copy is returned along
    with the full-data loss recorded after every epoch. Non-finite
    losses or parameters abort with a TrainingError carrying the trace
    collected so far.
    """
    X, y_cat, y_clu, _, _ = _check_batch(model, X, y_cat, y_clu, config.lambdas)
    model = model.copy()
    n = len(X)
    rng = np.random.default_rng(config.seed)
    trace: list[float] = []
    for epoch in range(config.epochs):
        rate = config.rate_at(epoch)
        order = rng.permutation(n)
        # overflow in an exploding run is expected and surfaces as a
        # TrainingError below, so the numpy warnings are just noise
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                batch = order[start : start + config.batch_size]
                grads = loss_gradients(model, X[batch], y_cat[batch], y_clu[batch], config.lambdas)
                for name in PARAM_NAMES:
                    getattr(model, name)[:] -= rate * grads[name]
            epoch_loss = float("nan")
            params_finite = all(np.all(np.isfinite(getattr(model, name))) for name in PARAM_NAMES)
            if params_finite:
                epoch_loss = multitask_loss(model, X, y_cat, y_clu, config.lambdas)
        trace.append(epoch_loss)
        if not np.isfinite(epoch_loss):
            raise TrainingError(
                f"training diverged at epoch {epoch}: loss is not finite "
                "(reduce the learning rate)",
                trace=trace,
            )
    return TrainResult(model=model, trace=trace)


def samples_from_features(rows, hierarchy: Hierarchy):
    """Turn (category, feature_vector) rows into training arrays.

    Returns (X, y_cat, y_clu, labels) where labels is the sorted
    category vocabulary, y_cat indexes into it and y_clu holds the
    cluster id of each row's category. Every category present in the
    rows must be covered by the hierarchy.
    """
    if not rows:
        raise ValidationError("no feature rows supplied")
    cluster_of = derive_cluster_labels(hierarchy)
    labels = tuple(sorted({category for category, _ in rows}))
    missing = [label for label in labels if label not in cluster_of]
    if missing:
        raise ConsistencyError(
            f"categories absent from the hierarchy: {', '.join(missing)}"
        )
    index = {label: i for i, label in enumerate(labels)}
    X = np.asarray([vector for _, vector in rows], dtype=float)
    if X.ndim != 2:
        raise ShapeError("feature rows must all have the same dimension")
    y_cat = np.array([index[category] for category, _ in rows])
    y_clu = np.array([cluster_of[category] for category, _ in rows])
    return X, y_cat, y_clu, labels


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test split; the test part is the tail of a permutation."""
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigurationError("test fraction must lie in [0, 1)")
    if n < 1:
        raise ValidationError("cannot split an empty dataset")
    n_test = int(round(n * test_fraction))
    n_test = min(n_test, n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return order[: n - n_test], order[n - n_test :]


def standardize_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std (floored to keep the transform finite)."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return mean, np.maximum(std, 1e-6)


def standardize_apply(X: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (X - mean) / std


@dataclass(frozen=True)
class Checkpoint:
    """A trained model plus everything needed to reuse it.

    categories gives the label vocabulary the category head indexes
    into; feature_mean/feature_std record the standardization applied
    to inputs before training (None when features were used raw).
    """

    model: MultiTaskModel
    config: TrainingConfig
    categories: tuple[str, ...]
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None

    def to_json_obj(self) -> dict:
        obj = self.model.to_json_obj()
        obj["dims"] = self.model.dims
        obj["config"] = self.config.to_json_obj()
        obj["seed"] = self.config.seed
        obj["categories"] = list(self.categories)
        if self.feature_mean is not None:
            obj["feature_scaling"] = {
                "mean": self.feature_mean.tolist(),
                "std": self.feature_std.tolist(),
            }
        else:
            obj["feature_scaling"] = None
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Checkpoint":
        scaling = obj.get("feature_scaling")
        return cls(
            model=MultiTaskModel.from_json_obj(obj),
            config=TrainingConfig.from_json_obj(obj["config"]),
            categories=tuple(obj["categories"]),
            feature_mean=None if scaling is None else np.asarray(scaling["mean"], dtype=float),
            feature_std=None if scaling is None else np.asarray(scaling["std"], dtype=float),
        )

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.feature_mean is None:
            return np.asarray(X, dtype=float)
        return standardize_apply(np.asarray(X, dtype=float), self.feature_mean, self.feature_std)
