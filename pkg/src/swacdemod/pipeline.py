"""DBN feature extractor chained with a classifier into one demodulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from swacdemod.classify import ConvNet, DenseNet, TrainHistory, train_conv, train_dense
from swacdemod.config import ExperimentConfig, derive_seed
from swacdemod.datasets import DatasetSplit
from swacdemod.dbn import DbnModel, extract_features_batch, normalize_frames, train_dbn_greedy
from swacdemod.errors import ConfigError

METHODS = ("DBN-NN", "DBN-CNN")


@dataclass(frozen=True)
class FeatureScaler:
    """Per-pixel standardization of feature images with training statistics.

    Final-layer DBN activations sit in a narrow band around the same value
    for every frame; centering and scaling each pixel restores a usable
    dynamic range for sigmoid classifiers.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, feats, floor: float = 1e-12) -> FeatureScaler:
        feats = np.asarray(feats, dtype=np.float64)
        std = feats.std(axis=0)
        return cls(feats.mean(axis=0), np.where(std > floor, std, 1.0))

    def __call__(self, feats):
        return (np.asarray(feats, dtype=np.float64) - self.mean) / self.std


@dataclass
class Demodulator:
    method: str
    order: int
    dbn: DbnModel
    scaler: FeatureScaler
    classifier: DenseNet | ConvNet
    history: TrainHistory | None = None
    meta: dict = field(default_factory=dict)

    def features(self, frames) -> np.ndarray:
        if self.dbn.norm is None:
            raise ConfigError("DBN carries no normalization stats")
        return dbn_features(self.dbn, self.scaler, frames)

    def predict(self, frames) -> np.ndarray:
        return self.classifier.predict(self.features(frames))


def dbn_features(model: DbnModel, scaler: FeatureScaler, frames) -> np.ndarray:
    return scaler(extract_features_batch(model, normalize_frames(frames, model.norm)))


@dataclass
class FeatureStage:
    """Trained DBN and scaler plus standardized features of the train and val splits."""

    dbn: DbnModel
    scaler: FeatureScaler
    train_x: np.ndarray
    val_x: np.ndarray


def fit_features(ds: DatasetSplit, cfg: ExperimentConfig, tag=()) -> FeatureStage:
    seed = derive_seed(cfg.seed, "dbn", ds.order, *tag)
    frames = normalize_frames(ds.train.batch.frames, ds.norm)
    model = train_dbn_greedy(frames, cfg.dbn.geometry, cfg.dbn_spec(seed), ds.norm)
    raw = extract_features_batch(model, frames)
    scaler = FeatureScaler.fit(raw)
    val_x = dbn_features(model, scaler, ds.val.batch.frames)
    return FeatureStage(model, scaler, scaler(raw), val_x)


def fit_classifier(stage: FeatureStage, ds: DatasetSplit, method: str, cfg: ExperimentConfig, tag=()) -> Demodulator:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    kind = "dense" if method == "DBN-NN" else "conv"
    section = getattr(cfg, kind)
    init_rng = np.random.default_rng(derive_seed(cfg.seed, "init", method, ds.order, *tag))
    train_cfg = cfg.classifier_config(kind, derive_seed(cfg.seed, "sgd", method, ds.order, *tag))
    tx, ty = stage.train_x, ds.train.batch.labels
    vx, vy = stage.val_x, ds.val.batch.labels
    if kind == "dense":
        net = DenseNet.create(ds.order, sizes=(cfg.dbn.geometry[-1], 300, 50), rng=init_rng, init_gain=section.init_gain)
        net, history = train_dense(net, tx.reshape(len(tx), -1), ty, vx.reshape(len(vx), -1), vy, train_cfg)
    else:
        net = ConvNet.create(cfg.conv_geometry(ds.order), rng=init_rng, init_gain=section.init_gain)
        net, history = train_conv(net, tx, ty, vx, vy, train_cfg)
    meta = {
        "method": method,
        "train_frames": len(ds.train),
        "best_epoch": history.best_epoch,
        "final_val_loss": history.final_val_loss,
        "norm_source_hash": ds.norm.source_hash,
    }
    return Demodulator(method, ds.order, stage.dbn, stage.scaler, net, history, meta)


def train_pipelines(ds: DatasetSplit, cfg: ExperimentConfig, methods=None, tag=()) -> dict[str, Demodulator]:
    """Train one shared DBN and one classifier per requested method."""
    methods = list(cfg.methods if methods is None else methods)
    stage = fit_features(ds, cfg, tag)
    return {m: fit_classifier(stage, ds, m, cfg, tag) for m in methods}
