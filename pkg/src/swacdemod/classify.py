"""Feature-image classifiers: a sigmoid MLP and a LeNet-style CNN.

Both nets expose the same small surface used by the training loop:
``params`` (list of arrays, fixed order), ``forward_batch`` and
``loss_and_grads``.  Gradients are hand-derived backprop; the test suite
audits them against central finite differences.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from swacdemod.errors import ConfigError, NumericalError

PROB_EPS = 1e-12


@dataclass(frozen=True)
class Prediction:
    class_probs: np.ndarray
    label: int


@dataclass(frozen=True)
class ClassifierTrainConfig:
    learning_rate: float = 0.5
    epochs: int = 40
    batch_size: int = 32
    rng_seed: int = 0
    early_stop_patience: int = 6

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("classifier training hyperparameters must be positive")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax needs finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(y_true, y_pred) -> float:
    """Categorical cross-entropy, averaged over the batch when inputs are 2-D."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred shapes differ")
    if np.any(y_pred < -PROB_EPS) or np.any(y_pred > 1 + PROB_EPS) or not np.all(np.isfinite(y_pred)):
        raise ValueError("y_pred is not a probability vector")
    p = np.clip(y_pred, PROB_EPS, 1.0 - PROB_EPS)
    per_sample = -np.sum(y_true * np.log(p), axis=-1)
    return float(np.mean(per_sample))


def binary_cross_entropy(y, y_hat) -> float:
    """-mean[y log y_hat + (1 - y) log(1 - y_hat)] for scalar class-1 probabilities."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if np.any(y_hat < 0) or np.any(y_hat > 1):
        raise ValueError("y_hat must be a probability")
    p = np.clip(y_hat, PROB_EPS, 1.0 - PROB_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def predict_label(net, img) -> int:
    """Argmax of the class probabilities; ties resolve to the lower index."""
    return _prediction(net.forward_batch(net.as_batch(img))[0]).label


def _prediction(probs) -> Prediction:
    return Prediction(probs, int(np.argmax(probs)))


def _glorot(rng, fan_in, fan_out, shape, gain=1.0):
    # Sigmoid units are ~4x flatter than tanh at the origin; gain compensates.
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _dense_backward(acts, weights, dlogits):
    """Backprop through sigmoid-hidden affine layers; returns (grads, d_input)."""
    grads = []
    delta = dlogits
    for i in range(len(weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[i].T @ delta)
        delta = delta @ weights[i].T
        if i > 0:
            delta = delta * acts[i] * (1.0 - acts[i])
    grads.reverse()
    return grads, delta


def _dense_forward(x, weights, biases):
    acts = [x]
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        if i < len(weights) - 1:
            h = expit(z)
            acts.append(h)
        else:
            return acts, z
    raise ConfigError("network has no layers")


class _Net:
    """Shared checks, prediction helpers and loss for both architectures."""

    params: list

    @property
    def n_classes(self) -> int:
        return self.params[-1].shape[-1]

    def copy(self):
        return copy.deepcopy(self)

    def with_params(self, params):
        net = self.copy()
        for dst, src in zip(net.params, params):
            dst[...] = src
        return net

    def forward_batch(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.forward_batch(x), axis=1)

    def loss_and_grads(self, x, labels):
        logits, cache = self._forward_cache(x)
        if not np.all(np.isfinite(logits)):
            raise NumericalError("network produced non-finite logits")
        probs = softmax(logits)
        y = one_hot(labels, self.n_classes)
        loss = cross_entropy(y, probs)
        grads = self._backward(cache, (probs - y) / x.shape[0])
        return loss, grads

    def loss(self, x, labels) -> float:
        return cross_entropy(one_hot(labels, self.n_classes), self.forward_batch(x))

    def logits(self, x) -> np.ndarray:
        return self._forward_cache(x)[0]


@dataclass(eq=False)
class DenseNet(_Net):
    """Sigmoid MLP over flattened feature images, softmax output."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("one bias per weight matrix required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigError(f"layer {i} has inconsistent shapes")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ConfigError(f"layer {i} input does not match previous output")

    @classmethod
    def create(cls, n_classes: int, sizes=(784, 300, 50), rng=None, zero=False, init_gain=1.0) -> DenseNet:
        dims = list(sizes) + [n_classes]
        rng = rng if rng is not None else np.random.default_rng(0)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims, dims[1:]):
            if zero:
                weights.append(np.zeros((fan_in, fan_out)))
            else:
                weights.append(_glorot(rng, fan_in, fan_out, (fan_in, fan_out), init_gain))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def sizes(self) -> tuple:
        return tuple(w.shape[0] for w in self.weights) + (self.weights[-1].shape[1],)

    def as_batch(self, img) -> np.ndarray:
        x = np.asarray(img, dtype=np.float64)
        if x.size != self.sizes[0]:
            raise ValueError(f"input has {x.size} values, net expects {self.sizes[0]}")
        return x.reshape(1, -1)

    def _flatten(self, x):
        x = np.asarray(x, dtype=np.float64)
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[1]} does not match net input {self.sizes[0]}")
        return x

    def _forward_cache(self, x):
        acts, logits = _dense_forward(self._flatten(x), self.weights, self.biases)
        return logits, acts

    def _backward(self, acts, dlogits):
        return _dense_backward(acts, self.weights, dlogits)[0]


def dense_forward(net: DenseNet, img) -> Prediction:
    """Row-major flatten, sigmoid hidden layers, softmax output."""
    return _prediction(net.forward_batch(net.as_batch(img))[0])


# -- convolution primitives ---------------------------------------------------


def _im2col(x, k):
    """(N, C, H, W) -> (N*Ho*Wo, C*k*k) patch matrix, patch-major in (c, i, j) order."""
    n, c, h, w = x.shape
    windows = np.lib.stride_tricks.sliding_window_view(x.transpose(0, 2, 3, 1), (k, k), axis=(1, 2))
    return windows.reshape(n * (h - k + 1) * (w - k + 1), c * k * k)


def conv2d(x, w, b, cols=None):
    """Valid cross-correlation. x: (N, C, H, W), w: (F, C, k, k) -> (N, F, H-k+1, W-k+1)."""
    n, _, h, wd = x.shape
    f, _, k, _ = w.shape
    if cols is None:
        cols = _im2col(x, k)
    out = cols @ w.reshape(f, -1).T + b
    return out.reshape(n, h - k + 1, wd - k + 1, f).transpose(0, 3, 1, 2)


def conv2d_backward(x, w, dout, cols=None, need_dx=True):
    f, c, k, _ = w.shape
    if cols is None:
        cols = _im2col(x, k)
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    padded = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    flipped = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx = conv2d(padded, flipped, np.zeros(c))
    return dx, dw, db


def max_pool(x, window: int = 2):
    """Non-overlapping max pooling over the last two axes.

    Returns ``(pooled, argmax)``; argmax indexes the flattened window in
    row-major order and picks the first maximum on ties.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if h % window or w % window:
        raise ValueError(f"spatial dims {h}x{w} not divisible by pooling window {window}")
    lead = x.shape[:-2]
    blocks = x.reshape(*lead, h // window, window, w // window, window)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, h // window, w // window, window * window)
    arg = np.argmax(blocks, axis=-1)
    return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], arg


def max_pool_backward(dout, arg, window: int = 2):
    lead = dout.shape[:-2]
    ho, wo = dout.shape[-2:]
    blocks = np.zeros((*lead, ho, wo, window * window))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(*lead, ho, wo, window, window)
    return np.moveaxis(blocks, -2, -3).reshape(*lead, ho * window, wo * window)


@dataclass(frozen=True)
class ConvGeometry:
    """conv -> pool -> conv -> pool -> conv -> dense... -> softmax(n_classes)."""

    n_classes: int
    input_size: int = 28
    padded_size: int = 32
    kernels: tuple = (5, 5, 5)
    maps: tuple = (6, 16, 120)
    dense: tuple = (84,)
    pool: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        object.__setattr__(self, "maps", tuple(int(m) for m in self.maps))
        object.__setattr__(self, "dense", tuple(int(d) for d in self.dense))
        if len(self.kernels) != 3 or len(self.maps) != 3:
            raise ConfigError("exactly three convolution stages are required")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if self.padded_size < self.input_size or (self.padded_size - self.input_size) % 2:
            raise ConfigError("padding must be non-negative and symmetric")
        self.spatial_chain()

    def spatial_chain(self) -> tuple:
        sizes = [self.padded_size]
        s = self.padded_size
        for stage, k in enumerate(self.kernels):
            if s < k:
                raise ConfigError(f"stage {stage + 1}: {s}x{s} input is smaller than {k}x{k} kernel")
            s = s - k + 1
            sizes.append(s)
            if stage < 2:
                if s % self.pool:
                    raise ConfigError(f"stage {stage + 1}: {s}x{s} map not divisible by pool {self.pool}")
                s //= self.pool
                sizes.append(s)
        return tuple(sizes)

    @property
    def flat_dim(self) -> int:
        return self.maps[-1] * self.spatial_chain()[-1] ** 2


@dataclass(eq=False)
class ConvNet(_Net):
    geometry: ConvGeometry
    conv_weights: list
    conv_biases: list
    dense_weights: list
    dense_biases: list

    def __post_init__(self):
        g = self.geometry
        channels = (1,) + g.maps
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases)):
            expected = (g.maps[i], channels[i], g.kernels[i], g.kernels[i])
            if w.shape != expected or b.shape != (g.maps[i],):
                raise ConfigError(f"conv stage {i + 1} expects weights {expected}")
        dims = (g.flat_dim,) + g.dense + (g.n_classes,)
        if len(self.dense_weights) != len(dims) - 1:
            raise ConfigError("dense layer count does not match geometry")
        for i, (w, b) in enumerate(zip(self.dense_weights, self.dense_biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ConfigError(f"dense layer {i} expects {(dims[i], dims[i + 1])}")

    @classmethod
    def create(cls, geometry: ConvGeometry, rng=None, zero=False, init_gain=1.0) -> ConvNet:
        rng = rng if rng is not None else np.random.default_rng(0)
        channels = (1,) + geometry.maps
        conv_w, conv_b = [], []
        for i, k in enumerate(geometry.kernels):
            shape = (geometry.maps[i], channels[i], k, k)
            fan_in, fan_out = channels[i] * k * k, geometry.maps[i] * k * k
            conv_w.append(np.zeros(shape) if zero else _glorot(rng, fan_in, fan_out, shape, init_gain))
            conv_b.append(np.zeros(geometry.maps[i]))
        dims = (geometry.flat_dim,) + geometry.dense + (geometry.n_classes,)
        dense_w, dense_b = [], []
        for fan_in, fan_out in zip(dims, dims[1:]):
            dense_w.append(np.zeros((fan_in, fan_out)) if zero else _glorot(rng, fan_in, fan_out, (fan_in, fan_out), init_gain))
            dense_b.append(np.zeros(fan_out))
        return cls(geometry, conv_w, conv_b, dense_w, dense_b)

    @property
    def params(self) -> list:
        out = []
        for w, b in zip(self.conv_weights, self.conv_biases):
            out += [w, b]
        for w, b in zip(self.dense_weights, self.dense_biases):
            out += [w, b]
        return out

    def as_batch(self, img) -> np.ndarray:
        x = np.asarray(img, dtype=np.float64)
        n = self.geometry.input_size
        if x.size != n * n:
            raise ValueError(f"input has {x.size} values, net expects {n}x{n}")
        return x.reshape(1, n, n)

    def _images(self, x):
        g = self.geometry
        x = np.asarray(x, dtype=np.float64)
        x = x.reshape(x.shape[0], g.input_size, g.input_size)
        p = (g.padded_size - g.input_size) // 2
        return np.pad(x, ((0, 0), (p, p), (p, p)))[:, None, :, :]

    def _forward_cache(self, x):
        h = self._images(x)
        cache = []
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases)):
            cols = _im2col(h, w.shape[-1])
            a = expit(conv2d(h, w, b, cols))
            entry = {"input": h, "cols": cols, "act": a}
            if i < 2:
                h, entry["arg"] = max_pool(a, self.geometry.pool)
            else:
                h = a
            cache.append(entry)
        flat = h.reshape(h.shape[0], -1)
        acts, logits = _dense_forward(flat, self.dense_weights, self.dense_biases)
        return logits, (cache, acts)

    def _backward(self, cache, dlogits):
        conv_cache, acts = cache
        dense_grads, dflat = _dense_backward(acts, self.dense_weights, dlogits)
        last = conv_cache[-1]["act"]
        # flat input of the dense stack is the sigmoid output of the last conv
        dh = dflat.reshape(last.shape)
        conv_grads = []
        for i in range(len(conv_cache) - 1, -1, -1):
            entry = conv_cache[i]
            if i < 2:
                dh = max_pool_backward(dh, entry["arg"], self.geometry.pool)
            a = entry["act"]
            dz = dh * a * (1.0 - a)
            dh, dw, db = conv2d_backward(entry["input"], self.conv_weights[i], dz, entry["cols"], need_dx=i > 0)
            conv_grads = [dw, db] + conv_grads
        return conv_grads + dense_grads


def conv_forward(net: ConvNet, img) -> Prediction:
    return _prediction(net.forward_batch(net.as_batch(img))[0])


# -- training -------------------------------------------------------------------


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def final_val_loss(self) -> float:
        return self.val_loss[self.best_epoch] if self.val_loss else float("nan")


def train_classifier(net, train_x, train_y, val_x, val_y, cfg: ClassifierTrainConfig):
    """Mini-batch gradient descent on cross-entropy with early stopping on validation loss.

    Returns ``(best_net, history)``; the input ``net`` is left untouched.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_y = np.asarray(val_y, dtype=np.int64)
    if len(train_x) == 0 or len(val_x) == 0:
        raise ValueError("training and validation splits must be non-empty")
    if len(train_x) != len(train_y) or len(val_x) != len(val_y):
        raise ValueError("one label per sample required")
    n_classes = net.n_classes
    if max(train_y.max(), val_y.max()) >= n_classes or min(train_y.min(), val_y.min()) < 0:
        raise ValueError(f"labels must lie in [0, {n_classes})")

    rng = np.random.default_rng(cfg.rng_seed)
    work = net.copy()
    best = net.copy()
    history = TrainHistory()
    history.val_loss.append(work.loss(val_x, val_y))
    history.val_accuracy.append(float(np.mean(work.predict(val_x) == val_y)))
    history.train_loss.append(float("nan"))
    best_loss = history.val_loss[0]
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_x))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                loss, grads = work.loss_and_grads(train_x[idx], train_y[idx])
            except NumericalError as exc:
                raise NumericalError(
                    f"training diverged at epoch {epoch}: {exc}",
                    checkpoint=best,
                    diagnostics={"epoch": epoch, "learning_rate": cfg.learning_rate},
                ) from exc
            losses.append(loss * len(idx))
            for p, g in zip(work.params, grads):
                p -= cfg.learning_rate * g
        if not all(np.all(np.isfinite(p)) for p in work.params):
            raise NumericalError(
                f"parameters became non-finite at epoch {epoch}",
                checkpoint=best,
                diagnostics={"epoch": epoch, "learning_rate": cfg.learning_rate},
            )
        val_loss = work.loss(val_x, val_y)
        history.train_loss.append(float(np.sum(losses) / len(train_x)))
        history.val_loss.append(val_loss)
        history.val_accuracy.append(float(np.mean(work.predict(val_x) == val_y)))
        if val_loss < best_loss:
            best_loss = val_loss
            best = work.copy()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                history.stopped_early = True
                break
    return best, history


def train_dense(net: DenseNet, train_x, train_y, val_x, val_y, cfg: ClassifierTrainConfig):
    if not isinstance(net, DenseNet):
        raise TypeError("train_dense expects a DenseNet")
    return train_classifier(net, train_x, train_y, val_x, val_y, cfg)


def train_conv(net: ConvNet, train_x, train_y, val_x, val_y, cfg: ClassifierTrainConfig):
    if not isinstance(net, ConvNet):
        raise TypeError("train_conv expects a ConvNet")
    return train_classifier(net, train_x, train_y, val_x, val_y, cfg)
