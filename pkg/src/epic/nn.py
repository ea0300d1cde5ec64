"""Feed-forward classifier written directly in NumPy.

Architecture: for every hidden width ``h`` a block ``dense -> batchnorm ->
relu -> dropout``, followed by a dense output layer and a softmax.  Training
minimises categorical cross-entropy with Adam.

All functions here are pure: parameters travel as immutable :class:`WeightSet`
values and optimizer/RNG state is passed explicitly, so independent models can
be trained side by side without sharing anything.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import (
    CheckpointFormatError,
    EmptyDataset,
    IncompatibleShapes,
    InvalidSpec,
    NumericFailure,
    ShapeMismatch,
)
from .seeding import derive_seed

TRAIN_DTYPE = np.float32
LOG_PROB_FLOOR = 1e-12
_NON_TRAINABLE = ("moving_mean", "moving_var")
_EVAL_CHUNK = 4096


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = (128, 64)
    dropout_rate: float = 0.3
    use_batchnorm: bool = True
    activation: str = "relu"
    seed: int = 0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.num_classes < 1 or any(h < 1 for h in self.hidden_dims):
            raise InvalidSpec(f"all layer dimensions must be positive: {self}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidSpec(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.activation != "relu":
            raise InvalidSpec(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.bn_momentum < 1.0 or self.bn_eps <= 0:
            raise InvalidSpec("bad batchnorm momentum/epsilon")

    def fingerprint(self) -> bytes:
        """SHA-256 over everything that determines parameter layout and semantics.

        The init seed is excluded: models that differ only by initialization
        remain aggregation-compatible.
        """
        d = asdict(self)
        d.pop("seed")
        d["hidden_dims"] = list(d["hidden_dims"])
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(**{**asdict(self), "seed": int(seed)})


@dataclass(frozen=True)
class WeightSet:
    """Ordered, named parameter tensors; the only thing clients export."""

    names: tuple[str, ...]
    values: tuple[np.ndarray, ...]
    fingerprint: bytes

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("names and values differ in length")
        frozen = []
        for v in self.values:
            a = np.array(v, copy=True)
            a.setflags(write=False)
            frozen.append(a)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", tuple(frozen))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[self.names.index(name)]

    def __len__(self) -> int:
        return len(self.names)

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(v.shape for v in self.values)

    @property
    def dtype(self):
        return self.values[0].dtype

    @property
    def nbytes(self) -> int:
        return sum(v.nbytes for v in self.values)

    def compatible_with(self, other: "WeightSet") -> bool:
        return (
            self.names == other.names
            and self.shapes == other.shapes
            and self.fingerprint == other.fingerprint
        )

    def replace(self, values) -> "WeightSet":
        return WeightSet(self.names, tuple(values), self.fingerprint)

    def _with_fresh(self, values) -> "WeightSet":
        # values are arrays nobody else holds a writable reference to; skip the defensive copy
        out = object.__new__(WeightSet)
        vals = tuple(values)
        for v in vals:
            v.setflags(write=False)
        object.__setattr__(out, "names", self.names)
        object.__setattr__(out, "values", vals)
        object.__setattr__(out, "fingerprint", self.fingerprint)
        return out

    def astype(self, dtype) -> "WeightSet":
        return self.replace(v.astype(dtype) for v in self.values)

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.values)

    def bitwise_equal(self, other: "WeightSet") -> bool:
        return (
            self.compatible_with(other)
            and all(a.dtype == b.dtype for a, b in zip(self.values, other.values))
            and all(a.tobytes() == b.tobytes() for a, b in zip(self.values, other.values))
        )


def is_trainable(name: str) -> bool:
    return not name.endswith(_NON_TRAINABLE)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid training configuration: {self}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1) or self.adam_epsilon <= 0:
            raise ValueError("Adam betas must lie in (0, 1) and epsilon must be positive")


@dataclass
class TrainHistory:
    accuracy: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def extend(self, other: "TrainHistory") -> None:
        self.accuracy.extend(other.accuracy)
        self.loss.extend(other.loss)


@dataclass(frozen=True)
class AdamState:
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]

    @classmethod
    def zeros_like(cls, weights: WeightSet) -> "AdamState":
        return cls(
            tuple(np.zeros_like(w) for w in weights.values),
            tuple(np.zeros_like(w) for w in weights.values),
        )


# --- parameters -----------------------------------------------------------------


def layer_layout(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    layout = []
    fan_in = spec.input_dim
    for i, h in enumerate(spec.hidden_dims):
        layout += [(f"dense{i}/kernel", (fan_in, h)), (f"dense{i}/bias", (h,))]
        if spec.use_batchnorm:
            layout += [
                (f"bn{i}/gamma", (h,)),
                (f"bn{i}/beta", (h,)),
                (f"bn{i}/moving_mean", (h,)),
                (f"bn{i}/moving_var", (h,)),
            ]
        fan_in = h
    out = len(spec.hidden_dims)
    layout += [(f"dense{out}/kernel", (fan_in, spec.num_classes)), (f"dense{out}/bias", (spec.num_classes,))]
    return layout


def init_model(spec: ModelSpec, dtype=TRAIN_DTYPE) -> WeightSet:
    """He-uniform kernels, zero biases, unit/zero batchnorm scale/shift, unit running variance."""
    rng = np.random.default_rng(spec.seed)
    names, values = [], []
    for name, shape in layer_layout(spec):
        if name.endswith("kernel"):
            limit = np.sqrt(6.0 / shape[0])
            v = rng.uniform(-limit, limit, size=shape)
        elif name.endswith(("gamma", "moving_var")):
            v = np.ones(shape)
        else:
            v = np.zeros(shape)
        names.append(name)
        values.append(v.astype(dtype))
    return WeightSet(tuple(names), tuple(values), spec.fingerprint())


def _check_weights(weights: WeightSet, spec: ModelSpec) -> None:
    expected = layer_layout(spec)
    if weights.fingerprint != spec.fingerprint() or [
        (n, s) for n, s in zip(weights.names, weights.shapes)
    ] != expected:
        raise ShapeMismatch("weights do not match the model spec")


# --- forward / backward -----------------------------------------------------------


def forward(weights: WeightSet, spec: ModelSpec, batch, mode: str = "eval", rng=None):
    """Run the network on ``batch``.

    Returns ``(probabilities, cache)``. In train mode, batchnorm uses the batch
    statistics (reported in ``cache["batch_stats"]``) and inverted dropout is
    applied with masks drawn from ``rng``; in eval mode batchnorm uses the
    running statistics and dropout is the identity.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    _check_weights(weights, spec)
    dtype = weights.dtype
    x = np.asarray(batch, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"batch shape {x.shape} does not match input_dim {spec.input_dim}")
    train = mode == "train"
    if train and spec.dropout_rate > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")

    p = dict(zip(weights.names, weights.values))
    layers = []
    batch_stats = {}
    h = x
    for i in range(len(spec.hidden_dims)):
        lc = {"x": h}
        z = h @ p[f"dense{i}/kernel"] + p[f"dense{i}/bias"]
        if spec.use_batchnorm:
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                batch_stats[i] = (mu, var)
            else:
                mu, var = p[f"bn{i}/moving_mean"], p[f"bn{i}/moving_var"]
            inv_std = 1.0 / np.sqrt(var + dtype.type(spec.bn_eps))
            xhat = (z - mu) * inv_std
            lc.update(xhat=xhat, inv_std=inv_std)
            z = xhat * p[f"bn{i}/gamma"] + p[f"bn{i}/beta"]
        lc["pre_relu"] = z
        a = np.maximum(z, 0)
        if train and spec.dropout_rate > 0:
            keep = 1.0 - spec.dropout_rate
            mask = (rng.random(a.shape) < keep).astype(dtype) / dtype.type(keep)
            lc["mask"] = mask
            a = a * mask
        layers.append(lc)
        h = a
    out = len(spec.hidden_dims)
    logits = h @ p[f"dense{out}/kernel"] + p[f"dense{out}/bias"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    log_probs = shifted - np.log(denom)
    cache = {
        "layers": layers,
        "last_hidden": h,
        "log_probs": log_probs,
        "batch_stats": batch_stats,
        "mode": mode,
    }
    return probs, cache


def cross_entropy(log_probs: np.ndarray, labels: np.ndarray) -> float:
    true_lp = (log_probs * labels).sum(axis=1)
    floor = np.log(LOG_PROB_FLOOR)
    return float(-np.maximum(true_lp, floor).mean())


def backward(weights: WeightSet, spec: ModelSpec, probs, labels, cache) -> WeightSet:
    """Gradients of mean cross-entropy w.r.t. every parameter (zeros for running statistics)."""
    p = dict(zip(weights.names, weights.values))
    grads = {name: np.zeros_like(v) for name, v in p.items()}
    n = probs.shape[0]
    dz = (probs - labels) / probs.dtype.type(n)
    out = len(spec.hidden_dims)
    h = cache["last_hidden"]
    grads[f"dense{out}/kernel"] = h.T @ dz
    grads[f"dense{out}/bias"] = dz.sum(axis=0)
    da = dz @ p[f"dense{out}/kernel"].T
    train = cache["mode"] == "train"
    for i in reversed(range(len(spec.hidden_dims))):
        lc = cache["layers"][i]
        if "mask" in lc:
            da = da * lc["mask"]
        dz = da * (lc["pre_relu"] > 0)
        if spec.use_batchnorm:
            xhat, inv_std = lc["xhat"], lc["inv_std"]
            grads[f"bn{i}/gamma"] = (dz * xhat).sum(axis=0)
            grads[f"bn{i}/beta"] = dz.sum(axis=0)
            dxhat = dz * p[f"bn{i}/gamma"]
            if train:
                m = dxhat.shape[0]
                dz = (inv_std / m) * (
                    m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                dz = dxhat * inv_std
        grads[f"dense{i}/kernel"] = lc["x"].T @ dz
        grads[f"dense{i}/bias"] = dz.sum(axis=0)
        if i > 0:
            da = dz @ p[f"dense{i}/kernel"].T
    return weights._with_fresh(grads[name].astype(weights.dtype, copy=False) for name in weights.names)


def loss_and_grad(weights: WeightSet, spec: ModelSpec, batch, labels, rng=None, mode: str = "train"):
    """Cross-entropy loss and its gradient for one batch.

    ``rng`` seeds the dropout masks; the same generator state gives the same
    masks, which is what finite-difference checks rely on.
    """
    labels = np.asarray(labels, dtype=weights.dtype)
    batch = np.asarray(batch)
    if labels.ndim != 2 or labels.shape[0] != batch.shape[0] or labels.shape[1] != spec.num_classes:
        raise ShapeMismatch(f"labels shape {labels.shape} does not match batch/classes")
    probs, cache = forward(weights, spec, batch, mode, rng)
    loss = cross_entropy(cache["log_probs"], labels)
    return loss, backward(weights, spec, probs, labels, cache)


# --- optimisation ----------------------------------------------------------------


def adam_step(weights: WeightSet, grads: WeightSet, state: AdamState, config: TrainConfig, t: int):
    """One bias-corrected Adam update. Running statistics are left untouched."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    if grads.shapes != weights.shapes or len(state.m) != len(weights):
        raise ShapeMismatch("gradient/optimizer state shapes do not match weights")
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_w, new_m, new_v = [], [], []
    for name, w, g, m_old, v_old in zip(weights.names, weights.values, grads.values, state.m, state.v):
        if not is_trainable(name):
            new_w.append(w)
            new_m.append(m_old)
            new_v.append(v_old)
            continue
        dt = w.dtype.type
        m = m_old * dt(b1)
        m += dt(1.0 - b1) * g
        v = g * g
        v *= dt(1.0 - b2)
        v += dt(b2) * v_old
        # w - lr * (m / c1) / (sqrt(v / c2) + eps)
        denom = v / dt(c2)
        np.sqrt(denom, out=denom)
        denom += dt(config.adam_epsilon)
        step = m / dt(c1)
        step *= dt(config.learning_rate)
        step /= denom
        new_w.append(w - step)
        new_m.append(m)
        new_v.append(v)
    return weights._with_fresh(new_w), AdamState(tuple(new_m), tuple(new_v))


def _update_running_stats(weights: WeightSet, spec: ModelSpec, batch_stats) -> WeightSet:
    if not batch_stats:
        return weights
    mom = weights.dtype.type(spec.bn_momentum)
    one = weights.dtype.type(1.0)
    values = dict(zip(weights.names, weights.values))
    for i, (mu, var) in batch_stats.items():
        values[f"bn{i}/moving_mean"] = mom * values[f"bn{i}/moving_mean"] + (one - mom) * mu
        values[f"bn{i}/moving_var"] = mom * values[f"bn{i}/moving_var"] + (one - mom) * var
    return weights._with_fresh(values[n] for n in weights.names)


def _unpack(dataset):
    if isinstance(dataset, tuple):
        return dataset
    return dataset.features, dataset.labels


def train(weights: WeightSet, spec: ModelSpec, dataset, config: TrainConfig):
    """Mini-batch Adam training.

    ``dataset`` is an :class:`~epic.encoding.EncodedDataset` or a
    ``(features, one_hot_labels)`` pair. Optimizer state starts fresh on every
    call. History records, per epoch, the size-weighted mean of the train-mode
    batch loss and accuracy seen during that epoch.
    """
    X, Y = _unpack(dataset)
    X = np.asarray(X)
    Y = np.asarray(Y, dtype=weights.dtype)
    if X.shape[0] == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if X.shape[0] != Y.shape[0]:
        raise ShapeMismatch("features and labels differ in row count")
    _check_weights(weights, spec)
    history = TrainHistory()
    if config.epochs == 0:
        return weights, history

    shuffle_rng = np.random.default_rng(config.shuffle_seed)
    dropout_rng = np.random.default_rng(derive_seed(config.shuffle_seed, "dropout"))
    state = AdamState.zeros_like(weights)
    n = X.shape[0]
    t = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = X[idx], Y[idx]
            probs, cache = forward(weights, spec, xb, "train", dropout_rng)
            loss = cross_entropy(cache["log_probs"], yb)
            if not np.isfinite(loss):
                raise NumericFailure(f"non-finite training loss at step {t + 1}")
            grads = backward(weights, spec, probs, yb, cache)
            t += 1
            weights, state = adam_step(weights, grads, state, config, t)
            weights = _update_running_stats(weights, spec, cache["batch_stats"])
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == yb.argmax(axis=1)).sum())
        if not weights.is_finite():
            raise NumericFailure("non-finite weights after training epoch")
        history.loss.append(loss_sum / n)
        history.accuracy.append(correct / n)
    return weights, history


def predict(weights: WeightSet, spec: ModelSpec, dataset):
    """Eval-mode class probabilities and argmax predictions (ties go to the lowest index)."""
    X = dataset.features if hasattr(dataset, "features") else np.asarray(dataset)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"feature shape {X.shape} does not match input_dim {spec.input_dim}")
    chunks = [forward(weights, spec, X[s : s + _EVAL_CHUNK], "eval")[0] for s in range(0, X.shape[0], _EVAL_CHUNK)]
    probs = np.concatenate(chunks) if chunks else np.zeros((0, spec.num_classes), weights.dtype)
    return probs.argmax(axis=1), probs


# --- checkpoint format ---------------------------------------------------------------

MAGIC = b"EPICW001"


def checkpoint_bytes(weights: WeightSet) -> bytes:
    if len(weights.fingerprint) != 32:
        raise CheckpointFormatError("fingerprint must be 32 bytes")
    parts = [MAGIC, weights.fingerprint, struct.pack("<I", len(weights))]
    for name, v in zip(weights.names, weights.values):
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{v.ndim}I", v.ndim, *v.shape))
        parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return b"".join(parts)


def weights_from_bytes(blob: bytes) -> WeightSet:
    if blob[:8] != MAGIC:
        raise CheckpointFormatError("bad magic bytes")
    fingerprint = blob[8:40]
    pos = 40
    try:
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        names, values = [], []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            names.append(blob[pos : pos + nlen].decode("utf-8"))
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            values.append(arr.astype(np.float32))
    except (struct.error, ValueError) as exc:
        raise CheckpointFormatError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointFormatError("trailing bytes after last layer")
    return WeightSet(tuple(names), tuple(values), fingerprint)


def save_checkpoint(path, weights: WeightSet) -> None:
    Path(path).write_bytes(checkpoint_bytes(weights))


def load_checkpoint(path) -> WeightSet:
    return weights_from_bytes(Path(path).read_bytes())


# --- estimator ----------------------------------------------------------------------


class FeedForwardClassifier(ClassifierMixin, BaseEstimator):
    """Dense/batchnorm/dropout network trained with Adam on cross-entropy.

    Parameters mirror :class:`ModelSpec` and :class:`TrainConfig`. ``fit``
    accepts ``init_weights`` to continue from an existing :class:`WeightSet`
    (the federated rounds use this to start from merged weights).

    Attributes
    ----------
    classes_ : ndarray
    weights_ : WeightSet
    spec_ : ModelSpec
    history_ : TrainHistory
    """

    def __init__(
        self,
        hidden_dims=(128, 64),
        dropout_rate=0.3,
        use_batchnorm=True,
        activation="relu",
        epochs=10,
        batch_size=32,
        learning_rate=1e-3,
        beta_1=0.9,
        beta_2=0.999,
        epsilon=1e-8,
        random_state=0,
    ):
        self.hidden_dims = hidden_dims
        self.dropout_rate = dropout_rate
        self.use_batchnorm = use_batchnorm
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.random_state = random_state

    def _model_spec(self, n_features, n_classes):
        seed = 0 if self.random_state is None else int(self.random_state)
        return ModelSpec(
            input_dim=n_features,
            num_classes=n_classes,
            hidden_dims=tuple(self.hidden_dims),
            dropout_rate=self.dropout_rate,
            use_batchnorm=self.use_batchnorm,
            activation=self.activation,
            seed=derive_seed(seed, "init"),
        )

    def _train_config(self):
        seed = 0 if self.random_state is None else int(self.random_state)
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.beta_1,
            adam_beta2=self.beta_2,
            adam_epsilon=self.epsilon,
            shuffle_seed=derive_seed(seed, "shuffle"),
        )

    def fit(self, X, y, init_weights=None, classes=None):
        X, y = check_X_y(X, y, dtype=[np.float32, np.float64])
        check_classification_targets(y)
        enc = LabelEncoder()
        if classes is not None:
            enc.fit(classes)
            unknown = set(np.unique(y)) - set(enc.classes_)
            if unknown:
                raise ValueError(f"labels {sorted(unknown)} not in classes")
        else:
            enc.fit(y)
        self.classes_ = enc.classes_
        y_idx = enc.transform(y)
        self.n_features_in_ = X.shape[1]
        self.spec_ = self._model_spec(X.shape[1], len(self.classes_))
        weights = init_weights if init_weights is not None else init_model(self.spec_)
        if not weights.compatible_with(init_model(self.spec_)):
            raise IncompatibleShapes("init_weights do not match this estimator's architecture")
        onehot = np.eye(len(self.classes_), dtype=TRAIN_DTYPE)[y_idx]
        self.weights_, self.history_ = train(
            weights.astype(TRAIN_DTYPE), self.spec_, (X.astype(TRAIN_DTYPE), onehot), self._train_config()
        )
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=[np.float32, np.float64])
        if X.shape[1] != self.n_features_in_:
            raise ShapeMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return predict(self.weights_, self.spec_, X.astype(TRAIN_DTYPE))[1]

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
