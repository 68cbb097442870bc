"""Labeled frame datasets: symbol streams through the channel, framed and split."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

from swacdemod.baseline import ebn0_to_snr_db
from swacdemod.config import ExperimentConfig, derive_seed
from swacdemod.dbn import NormStats, fit_normalization
from swacdemod.errors import ArtifactFormatError, ConfigError
from swacdemod.sigproc import (
    FrameBatch,
    PskScheme,
    add_awgn,
    doppler_periods,
    frame_signal,
    label_frames,
)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class Part:
    """One split: frames with labels, the carrier of each frame's period and its Eb/N0 tag."""

    batch: FrameBatch
    carrier_hz: np.ndarray
    ebn0_db: np.ndarray

    def __len__(self):
        return len(self.batch)

    def subset(self, index) -> Part:
        return Part(self.batch.subset(index), self.carrier_hz[index], self.ebn0_db[index])

    def at_ebn0(self, ebn0_db: float) -> Part:
        return self.subset(np.flatnonzero(self.ebn0_db == ebn0_db))


@dataclass(frozen=True)
class DatasetSplit:
    train: Part
    val: Part
    test: Part
    norm: NormStats
    order: int
    randomized_carrier: bool

    def parts(self):
        return dict(zip(SPLIT_NAMES, (self.train, self.val, self.test)))


def frames_hash(frames) -> str:
    return hashlib.sha256(np.ascontiguousarray(frames, dtype="<f8").tobytes()).hexdigest()


def train_normalization(frames) -> NormStats:
    """Min/max stats from training frames, tagged with the hash of exactly those frames."""
    return fit_normalization(frames, frames_hash(frames))


def split_sizes(n_periods: int, fractions) -> tuple[int, int, int]:
    n_train = int(round(n_periods * fractions[0]))
    n_val = int(round(n_periods * fractions[1]))
    return n_train, n_val, n_periods - n_train - n_val


def draw_carriers(cfg: ExperimentConfig, n: int, seed: int) -> np.ndarray:
    d = cfg.doppler
    if d.carrier_std_hz == 0:
        return np.full(n, float(d.carrier_mean_hz))
    a = (d.carrier_min_hz - d.carrier_mean_hz) / d.carrier_std_hz
    b = (d.carrier_max_hz - d.carrier_mean_hz) / d.carrier_std_hz
    rng = np.random.default_rng(seed)
    return truncnorm.rvs(a, b, loc=d.carrier_mean_hz, scale=d.carrier_std_hz, size=n, random_state=rng)


def generate_point(
    cfg: ExperimentConfig, order: int, ebn0_db: float, randomized_carrier: bool = False
) -> DatasetSplit:
    """Dataset for one scheme at one Eb/N0 point.

    The stream is laid out as [train | guard | val | guard | test | guard]:
    each block is framed on its own, and the guard period supplies the tail of
    the block's last frame, so no sample is shared between splits.
    """
    scheme = PskScheme(order)
    mod = cfg.modulation_config()
    sizes = split_sizes(cfg.dataset_size_periods, cfg.split)
    total = sum(sizes) + len(sizes)
    tag = f"{float(ebn0_db):.6g}"
    rng = np.random.default_rng(derive_seed(cfg.seed, "symbols", order, tag))
    symbols = rng.integers(0, order, total)
    if randomized_carrier:
        carriers = draw_carriers(cfg, total, derive_seed(cfg.seed, "carriers", order, tag))
    else:
        carriers = np.full(total, float(mod.carrier_hz))
    wave = doppler_periods(symbols, scheme, mod, carriers / mod.carrier_hz)
    snr_db = float(ebn0_to_snr_db(ebn0_db, scheme, mod))
    wave = add_awgn(wave, snr_db, derive_seed(cfg.seed, "noise", order, tag))

    sps = mod.samples_per_symbol
    parts = []
    start = 0
    for n in sizes:
        stop = start + n + 1
        seg = wave.samples[start * sps : stop * sps]
        frames = frame_signal(seg, cfg.framing.frame_len, cfg.framing.overlap_frac)
        batch = label_frames(frames, symbols[start:stop], mod, cfg.framing.overlap_frac)
        parts.append(Part(batch, carriers[start : start + n].copy(), np.full(n, float(ebn0_db))))
        start = stop
    train, val, test = parts
    return DatasetSplit(train, val, test, train_normalization(train.batch.frames), order, randomized_carrier)


def concat_parts(parts) -> Part:
    parts = list(parts)
    first = parts[0].batch
    batch = FrameBatch(
        np.concatenate([p.batch.frames for p in parts]),
        np.concatenate([p.batch.labels for p in parts]),
        first.frame_len,
        first.hop,
    )
    return Part(batch, np.concatenate([p.carrier_hz for p in parts]), np.concatenate([p.ebn0_db for p in parts]))


def merge(splits) -> DatasetSplit:
    """Pool several points into one dataset; normalization is refitted on the pooled train split."""
    splits = list(splits)
    if not splits:
        raise ConfigError("nothing to merge")
    if len({(s.order, s.randomized_carrier) for s in splits}) != 1:
        raise ConfigError("cannot merge datasets of different schemes or channels")
    train, val, test = (concat_parts(getattr(s, name) for s in splits) for name in SPLIT_NAMES)
    return DatasetSplit(
        train, val, test, train_normalization(train.batch.frames), splits[0].order, splits[0].randomized_carrier
    )


def generate_dataset(cfg: ExperimentConfig, order: int | None = None, randomized_carrier: bool = False) -> DatasetSplit:
    """All Eb/N0 points of the grid for one scheme, pooled into one dataset."""
    order = int(cfg.schemes[0] if order is None else order)
    return merge(generate_point(cfg, order, e, randomized_carrier) for e in cfg.ebn0_db)


def save_dataset(ds: DatasetSplit, path) -> None:
    arrays = {}
    for name, part in ds.parts().items():
        arrays[f"{name}_frames"] = part.batch.frames
        arrays[f"{name}_labels"] = part.batch.labels
        arrays[f"{name}_carrier_hz"] = part.carrier_hz
        arrays[f"{name}_ebn0_db"] = part.ebn0_db
    meta = {
        "order": ds.order,
        "randomized_carrier": ds.randomized_carrier,
        "frame_len": ds.train.batch.frame_len,
        "hop": ds.train.batch.hop,
        "norm": [ds.norm.lo, ds.norm.hi, ds.norm.source_hash],
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_dataset(path) -> DatasetSplit:
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            parts = []
            for name in SPLIT_NAMES:
                batch = FrameBatch(z[f"{name}_frames"], z[f"{name}_labels"], meta["frame_len"], meta["hop"])
                parts.append(Part(batch, z[f"{name}_carrier_hz"], z[f"{name}_ebn0_db"]))
    except (KeyError, ValueError) as exc:
        raise ArtifactFormatError(f"{path} is not a dataset file: {exc}") from exc
    lo, hi, digest = meta["norm"]
    return DatasetSplit(*parts, NormStats(lo, hi, digest), meta["order"], meta["randomized_carrier"])
