"""Bernoulli RBMs, greedy DBN pre-training and feature-image extraction."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logsumexp

from swacdemod.errors import ConfigError, NumericalError

FRAME_DIM = 120
IMAGE_SIDE = 28
FEATURE_DIM = IMAGE_SIDE * IMAGE_SIDE
DEFAULT_GEOMETRY = (FRAME_DIM, 500, FEATURE_DIM)
MAX_EXACT_UNITS = 24
INIT_STD = 0.01


@dataclass(frozen=True)
class RbmLayer:
    """Weights are stored hidden-major, shape (n_hidden, n_visible)."""

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.visible_bias, dtype=np.float64)
        c = np.asarray(self.hidden_bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError("weights must be a non-empty (n_hidden, n_visible) matrix")
        if b.shape != (w.shape[1],) or c.shape != (w.shape[0],):
            raise ValueError("bias shapes do not match the weight matrix")
        for name, arr in (("weights", w), ("visible_bias", b), ("hidden_bias", c)):
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"RBM {name} contains non-finite values")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "visible_bias", b)
        object.__setattr__(self, "hidden_bias", c)

    @property
    def n_visible(self) -> int:
        return self.weights.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> RbmLayer:
        return cls(np.zeros((n_hidden, n_visible)), np.zeros(n_visible), np.zeros(n_hidden))

    @classmethod
    def random(cls, n_visible: int, n_hidden: int, rng, std: float = INIT_STD) -> RbmLayer:
        w = rng.normal(0.0, std, size=(n_hidden, n_visible))
        return cls(w, np.zeros(n_visible), np.zeros(n_hidden))


@dataclass(frozen=True)
class NormStats:
    """Affine [0, 1] scaling fitted on the training split."""

    lo: float
    hi: float
    source_hash: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("normalization bounds must be finite")
        if self.hi <= self.lo:
            raise ValueError("degenerate signal: max equals min, cannot normalize")


@dataclass(frozen=True)
class DbnModel:
    layers: tuple
    norm: NormStats | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ConfigError("a DBN needs at least one RBM layer")
        for below, above in zip(layers, layers[1:]):
            if below.n_hidden != above.n_visible:
                raise ConfigError(
                    f"layer output {below.n_hidden} does not feed next input {above.n_visible}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_visible

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_hidden

    @property
    def geometry(self) -> tuple:
        return (self.input_dim,) + tuple(layer.n_hidden for layer in self.layers)


@dataclass(frozen=True)
class DbnTrainSpec:
    cd_steps: int = 1
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    rng_seed: int = 0

    def __post_init__(self):
        if self.cd_steps < 1 or self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise ConfigError("DBN training hyperparameters must be positive")


def _check_pair(layer: RbmLayer, v, h):
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape[-1] != layer.n_visible or h.shape[-1] != layer.n_hidden:
        raise ValueError(
            f"expected visible dim {layer.n_visible} and hidden dim {layer.n_hidden}, "
            f"got {v.shape[-1]} and {h.shape[-1]}"
        )
    return v, h


def rbm_energy(layer: RbmLayer, v, h):
    """E(v, h) = -h.W.v - b.v - c.h; broadcasts over leading batch axes."""
    v, h = _check_pair(layer, v, h)
    interaction = np.einsum("...j,jk,...k->...", h, layer.weights, v)
    return -interaction - v @ layer.visible_bias - h @ layer.hidden_bias


def _binary_states(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def _check_enumerable(layer: RbmLayer):
    total = layer.n_visible + layer.n_hidden
    if total > MAX_EXACT_UNITS:
        raise ValueError(
            f"exact enumeration limited to {MAX_EXACT_UNITS} units, RBM has {total}"
        )


def free_energy(layer: RbmLayer, v) -> np.ndarray:
    """-log sum_h exp(-E(v, h)), with the hidden layer summed out analytically."""
    v = np.asarray(v, dtype=np.float64)
    pre = v @ layer.weights.T + layer.hidden_bias
    return -(v @ layer.visible_bias) - np.sum(np.logaddexp(0.0, pre), axis=-1)


def rbm_log_partition_exact(layer: RbmLayer) -> float:
    """log Z by enumerating every visible state and summing hidden units in closed form.

    Enumerates whichever side is smaller; the closed-form sum over the other
    side is exact because units within a layer are conditionally independent.
    """
    _check_enumerable(layer)
    if layer.n_visible <= layer.n_hidden:
        return float(logsumexp(-free_energy(layer, _binary_states(layer.n_visible))))
    flipped = RbmLayer(layer.weights.T, layer.hidden_bias, layer.visible_bias)
    return float(logsumexp(-free_energy(flipped, _binary_states(flipped.n_visible))))


def rbm_partition_exact(layer: RbmLayer) -> float:
    return float(np.exp(rbm_log_partition_exact(layer)))


def rbm_joint_prob(layer: RbmLayer, v, h):
    return np.exp(-rbm_energy(layer, v, h) - rbm_log_partition_exact(layer))


def hidden_activation(layer: RbmLayer, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != layer.n_visible:
        raise ValueError(f"visible input has dim {v.shape[-1]}, layer expects {layer.n_visible}")
    return expit(v @ layer.weights.T + layer.hidden_bias)


def visible_activation(layer: RbmLayer, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != layer.n_hidden:
        raise ValueError(f"hidden input has dim {h.shape[-1]}, layer expects {layer.n_hidden}")
    return expit(h @ layer.weights + layer.visible_bias)


def rbm_nll_exact(layer: RbmLayer, data) -> float:
    """Mean negative log marginal likelihood -log p(v) of binary rows in ``data``."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    return float(np.mean(free_energy(layer, data)) + rbm_log_partition_exact(layer))


def rbm_nll_gradient_exact(layer: RbmLayer, data) -> RbmLayer:
    """Gradient of :func:`rbm_nll_exact` as (model expectation - data expectation).

    Returned as an ``RbmLayer`` whose fields hold dW, db, dc.
    """
    _check_enumerable(layer)
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    ph = hidden_activation(layer, data)
    pos_w = ph.T @ data / data.shape[0]
    pos_b = data.mean(axis=0)
    pos_c = ph.mean(axis=0)

    states = _binary_states(layer.n_visible)
    log_pv = -free_energy(layer, states)
    pv = np.exp(log_pv - logsumexp(log_pv))
    ph_model = hidden_activation(layer, states)
    neg_w = (ph_model * pv[:, None]).T @ states
    neg_b = pv @ states
    neg_c = pv @ ph_model
    return RbmLayer(neg_w - pos_w, neg_b - pos_b, neg_c - pos_c)


def _check_unit_interval(x, what="input", tol=1e-9):
    x = np.asarray(x, dtype=np.float64)
    if x.size and (np.nanmin(x) < -tol or np.nanmax(x) > 1.0 + tol or not np.all(np.isfinite(x))):
        raise ValueError(f"{what} must lie in [0, 1]; normalize frames first")
    return np.clip(x, 0.0, 1.0)


def cd_update(layer: RbmLayer, batch, spec: DbnTrainSpec, rng=None) -> RbmLayer:
    """One CD-k step on a mini-batch.

    Hidden states are sampled along the Gibbs chain; visible reconstructions
    use mean-field probabilities, as usual for real-valued [0, 1] inputs.
    """
    v0 = _check_unit_interval(np.atleast_2d(batch), "training batch")
    if v0.shape[0] == 0:
        raise ValueError("empty training batch")
    if rng is None:
        rng = np.random.default_rng(spec.rng_seed)
    h0 = hidden_activation(layer, v0)
    hk = h0
    for _ in range(spec.cd_steps):
        h_sample = (rng.random(hk.shape) < hk).astype(np.float64)
        vk = visible_activation(layer, h_sample)
        hk = hidden_activation(layer, vk)

    n = v0.shape[0]
    lr = spec.learning_rate
    dw = (h0.T @ v0 - hk.T @ vk) / n
    db = np.mean(v0 - vk, axis=0)
    dc = np.mean(h0 - hk, axis=0)
    w = layer.weights + lr * dw
    b = layer.visible_bias + lr * db
    c = layer.hidden_bias + lr * dc
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise NumericalError(
            "CD update produced non-finite parameters",
            checkpoint=layer,
            diagnostics={
                "max_abs_weight": float(np.max(np.abs(layer.weights))),
                "max_abs_grad": float(np.nanmax(np.abs(dw))),
                "learning_rate": lr,
            },
        )
    return RbmLayer(w, b, c)


def reconstruction_error(layer: RbmLayer, data) -> float:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    recon = visible_activation(layer, hidden_activation(layer, data))
    return float(np.mean((data - recon) ** 2))


def train_rbm(layer: RbmLayer, data, spec: DbnTrainSpec, rng) -> RbmLayer:
    n = data.shape[0]
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            layer = cd_update(layer, data[order[start : start + spec.batch_size]], spec, rng)
    return layer


def train_dbn_greedy(
    frames,
    geometry=DEFAULT_GEOMETRY,
    spec: DbnTrainSpec | None = None,
    norm: NormStats | None = None,
) -> DbnModel:
    """Greedy layer-wise CD training; layer k sees the activation probabilities of layer k-1."""
    spec = spec or DbnTrainSpec()
    data = _check_unit_interval(np.atleast_2d(frames), "training frames")
    geometry = tuple(int(g) for g in geometry)
    if len(geometry) < 2:
        raise ConfigError("geometry needs an input size and at least one hidden size")
    if data.shape[1] != geometry[0]:
        raise ConfigError(f"frames have width {data.shape[1]}, geometry expects {geometry[0]}")
    rng = np.random.default_rng(spec.rng_seed)
    init = [RbmLayer.random(nv, nh, rng) for nv, nh in zip(geometry, geometry[1:])]
    trained = []
    for layer in init:
        layer = train_rbm(layer, data, spec, rng)
        trained.append(layer)
        data = hidden_activation(layer, data)
    return DbnModel(tuple(trained), norm)


def fit_normalization(frames, source_hash: str = "") -> NormStats:
    frames = np.asarray(frames, dtype=np.float64)
    if not np.all(np.isfinite(frames)):
        raise ValueError("frames contain non-finite amplitudes")
    return NormStats(float(frames.min()), float(frames.max()), source_hash)


def normalize_frames(frames, stats: NormStats | None = None):
    """Map amplitudes to [0, 1] with train-split min/max; values outside are clamped.

    With ``stats`` omitted the bounds are fitted on ``frames`` themselves and
    ``(normalized, stats)`` is returned.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if stats is None:
        stats = fit_normalization(frames)
        return normalize_frames(frames, stats), stats
    return np.clip((frames - stats.lo) / (stats.hi - stats.lo), 0.0, 1.0)


def extract_features_batch(model: DbnModel, frames) -> np.ndarray:
    """Deterministic probability pass; returns (n, 28, 28) for the default geometry."""
    x = _check_unit_interval(np.atleast_2d(frames), "frame")
    if x.shape[1] != model.input_dim:
        raise ValueError(f"frame width {x.shape[1]} does not match DBN input {model.input_dim}")
    for layer in model.layers:
        x = hidden_activation(layer, x)
    side = int(round(np.sqrt(model.output_dim)))
    if side * side == model.output_dim:
        return x.reshape(-1, side, side)
    return x


def extract_features(model: DbnModel, frame) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise ValueError("extract_features takes a single frame; use extract_features_batch")
    return extract_features_batch(model, frame[None, :])[0]


def latent_features(model: DbnModel, frames, count: int = 3) -> np.ndarray:
    """Leading final-layer activations in index order, for scatter exports."""
    feats = extract_features_batch(model, frames).reshape(np.atleast_2d(frames).shape[0], -1)
    return feats[:, :count]


def with_norm(model: DbnModel, norm: NormStats) -> DbnModel:
    return replace(model, norm=norm)
