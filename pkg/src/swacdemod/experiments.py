"""The three experiments: BER sweep, randomized-carrier sweep and accuracy against training size."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from swacdemod.baseline import MleConfig, ebn0_to_snr_db, mle_demodulate
from swacdemod.config import ExperimentConfig
from swacdemod.datasets import DatasetSplit, Part, generate_point, merge, train_normalization
from swacdemod.dbn import latent_features, normalize_frames
from swacdemod.errors import ConfigError, NumericalError
from swacdemod.pipeline import Demodulator, train_pipelines
from swacdemod.sigproc import PskScheme, bit_errors

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("scheme", "method", "ebn0_db", "snr_db", "bit_errors", "bits_tested", "ber")
ACCURACY_COLUMNS = ("scheme", "method", "train_periods", "correct", "tested", "accuracy")
SCATTER_COLUMNS = ("feature1", "feature2", "feature3", "symbol_label", "carrier_hz")


@dataclass(frozen=True)
class BerPoint:
    ebn0_db: float
    snr_db: float
    bit_errors: int
    bits_tested: int

    def __post_init__(self):
        if self.bits_tested <= 0:
            raise ValueError("bits_tested must be positive")
        if not 0 <= self.bit_errors <= self.bits_tested:
            raise ValueError("bit_errors out of range")

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_tested


@dataclass
class BerCurve:
    scheme: int
    method: str
    points: list = field(default_factory=list)

    def add(self, point: BerPoint) -> None:
        self.points.append(point)
        self.points.sort(key=lambda p: p.ebn0_db)

    @property
    def ebn0_db(self) -> np.ndarray:
        return np.array([p.ebn0_db for p in self.points])

    @property
    def ber(self) -> np.ndarray:
        return np.array([p.ber for p in self.points])

    def ber_at(self, ebn0_db: float) -> float:
        for p in self.points:
            if p.ebn0_db == ebn0_db:
                return p.ber
        raise KeyError(ebn0_db)


def ebn0_for_ber(curve: BerCurve, target: float) -> float:
    """Eb/N0 at which ``curve`` reaches ``target``, interpolating log10(BER) linearly.

    Outside the measured range the nearest segment is extrapolated; zero-error
    points are dropped since their log is undefined.
    """
    x, y = curve.ebn0_db, curve.ber
    keep = y > 0
    x, y = x[keep], np.log10(y[keep])
    if x.size == 0:
        return -np.inf
    if x.size == 1:
        return float(x[0])
    t = np.log10(target)
    for i in range(x.size - 1):
        lo, hi = sorted((y[i], y[i + 1]))
        if lo <= t <= hi and y[i] != y[i + 1]:
            return float(x[i] + (t - y[i]) * (x[i + 1] - x[i]) / (y[i + 1] - y[i]))
    i = 0 if t > y[0] else x.size - 2
    if y[i] == y[i + 1]:
        return float(x[i] if t > y[0] else x[i + 1])
    return float(x[i] + (t - y[i]) * (x[i + 1] - x[i]) / (y[i + 1] - y[i]))


def horizontal_offset_db(curve: BerCurve, reference: BerCurve, ebn0_db: float) -> float:
    """Extra Eb/N0 (dB) ``curve`` needs at ``ebn0_db`` relative to ``reference``.

    Zero or negative when ``curve`` is at least as good; ``-inf`` when
    ``curve`` is error-free there.
    """
    ber = curve.ber_at(ebn0_db)
    if ber == 0:
        return -np.inf
    return float(ebn0_db - ebn0_for_ber(reference, ber))


def write_curves(curves, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for c in curves:
            for p in c.points:
                w.writerow([c.scheme, c.method, repr(p.ebn0_db), repr(p.snr_db), p.bit_errors, p.bits_tested, repr(p.ber)])


def read_curves(path) -> list[BerCurve]:
    curves: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_COLUMNS:
            raise ConfigError(f"{path} does not have the BER curve header")
        for row in reader:
            key = (int(row["scheme"]), row["method"])
            curve = curves.setdefault(key, BerCurve(*key))
            curve.add(BerPoint(float(row["ebn0_db"]), float(row["snr_db"]), int(row["bit_errors"]), int(row["bits_tested"])))
    return list(curves.values())


def _point(order, cfg, ebn0_db, decided, sent) -> BerPoint:
    scheme = PskScheme(order)
    snr = float(ebn0_to_snr_db(ebn0_db, scheme, cfg.modulation_config()))
    return BerPoint(float(ebn0_db), snr, bit_errors(sent, decided, scheme), len(sent) * scheme.bits_per_symbol)


def mle_decisions(part: Part, order: int, cfg: ExperimentConfig) -> np.ndarray:
    """Coherent ML decisions from the first symbol period of every frame."""
    mod = cfg.modulation_config()
    window = part.batch.frames[:, : mod.samples_per_symbol]
    return mle_demodulate(window.ravel(), MleConfig(PskScheme(order), mod))


def evaluate(demod, part: Part, order: int, cfg: ExperimentConfig, method: str) -> BerCurve:
    """BER per Eb/N0 tag on ``part``; ``demod`` None means the MLE baseline."""
    curve = BerCurve(order, method)
    for e in sorted(set(part.ebn0_db.tolist())):
        sub = part.at_ebn0(e)
        decided = mle_decisions(sub, order, cfg) if demod is None else demod.predict(sub.batch.frames)
        curve.add(_point(order, cfg, e, decided, sub.batch.labels))
    return curve


def _train_with_context(ds, cfg, tag):
    try:
        return train_pipelines(ds, cfg, tag=tag)
    except NumericalError as exc:
        raise NumericalError(
            f"training diverged for {ds.order}-PSK {tag}: {exc}",
            checkpoint=exc.checkpoint,
            diagnostics={**exc.diagnostics, "scheme": ds.order, "tag": list(tag)},
        ) from exc


def _ml_curves(cfg, order, points) -> list[BerCurve]:
    # Seeds do not depend on the channel, so a degenerate carrier
    # distribution reproduces the fixed-carrier models exactly.
    curves = {m: BerCurve(order, m) for m in cfg.methods}
    if not curves:
        return []
    if cfg.train_snr_policy == "mixture":
        ds = merge(points)
        models = _train_with_context(ds, cfg, ("mixture",))
        for m, demod in models.items():
            curves[m] = evaluate(demod, ds.test, order, cfg, m)
    else:
        for ds in points:
            e = float(ds.test.ebn0_db[0])
            models = _train_with_context(ds, cfg, (f"{e:.6g}",))
            for m, demod in models.items():
                curves[m].add(evaluate(demod, ds.test, order, cfg, m).points[0])
    return [curves[m] for m in cfg.methods]


def _ber_job(cfg: ExperimentConfig, order: int) -> list[BerCurve]:
    points = [generate_point(cfg, order, e) for e in cfg.ebn0_db]
    mle = evaluate(None, merge(points).test, order, cfg, "MLE")
    return _ml_curves(cfg, order, points) + [mle]


def _doppler_job(cfg: ExperimentConfig, order: int) -> list[BerCurve]:
    shifted = [generate_point(cfg, order, e, randomized_carrier=True) for e in cfg.ebn0_db]
    nominal = [generate_point(cfg, order, e) for e in cfg.ebn0_db]
    mle = evaluate(None, merge(nominal).test, order, cfg, "MLE")
    mle_doppler = evaluate(None, merge(shifted).test, order, cfg, "MLE-Doppler")
    return _ml_curves(cfg, order, shifted) + [mle, mle_doppler]


def _run_jobs(job, cfg: ExperimentConfig, jobs: int) -> list[BerCurve]:
    orders = [int(o) for o in cfg.schemes]
    if jobs > 1 and len(orders) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(orders))) as pool:
            results = list(pool.map(job, [cfg] * len(orders), orders))
    else:
        results = [job(cfg, o) for o in orders]
    return [c for curves in results for c in curves]


def run_ber_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[BerCurve]:
    """Fixed-carrier AWGN channel: DBN pipelines and MLE for each scheme over the Eb/N0 grid.

    Schemes run as independent jobs with derived seeds, so the result does
    not depend on ``jobs``.
    """
    return _run_jobs(_ber_job, cfg, jobs)


def run_doppler_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[BerCurve]:
    """Randomized-carrier channel.

    The DBN pipelines are trained and tested on signals whose per-period
    carrier is drawn from the configured distribution.  "MLE" is measured on
    the nominal-carrier test split built from the same seeds; "MLE-Doppler"
    applies the same detector to the randomized-carrier test split.
    """
    return _run_jobs(_doppler_job, cfg, jobs)


@dataclass(frozen=True)
class AccuracyPoint:
    scheme: int
    method: str
    train_periods: int
    correct: int
    tested: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.tested


def size_ladder(n_train: int, base: int) -> list[int]:
    """base * 2^k below ``n_train``, then ``n_train`` itself."""
    if base < 1:
        raise ConfigError("ladder base must be positive")
    if base > n_train:
        raise ConfigError(f"smallest training subset {base} exceeds the train split ({n_train})")
    sizes = []
    n = base
    while n < n_train:
        sizes.append(n)
        n *= 2
    return sizes + [n_train]


def _prefix(ds: DatasetSplit, n: int) -> DatasetSplit:
    train = ds.train.subset(slice(0, n))
    return replace(ds, train=train, norm=train_normalization(train.batch.frames))


def run_accuracy_vs_trainsize(cfg: ExperimentConfig, sizes=None) -> list[AccuracyPoint]:
    """Test accuracy of both pipelines trained on nested prefixes of the train split.

    Validation and test splits are shared by all sizes.  Runs at the single
    Eb/N0 point ``cfg.accuracy.ebn0_db``.
    """
    out = []
    for order in (int(o) for o in cfg.schemes):
        ds = generate_point(cfg, order, cfg.accuracy.ebn0_db)
        ladder = size_ladder(len(ds.train), cfg.accuracy.base_periods) if sizes is None else list(sizes)
        if max(ladder) > len(ds.train):
            raise ConfigError(f"subset of {max(ladder)} periods exceeds the train split ({len(ds.train)})")
        for n in ladder:
            models = _train_with_context(_prefix(ds, n), cfg, ("accuracy", n))
            for m, demod in models.items():
                correct = int(np.sum(demod.predict(ds.test.batch.frames) == ds.test.batch.labels))
                out.append(AccuracyPoint(order, m, n, correct, len(ds.test)))
                log.info("%d-PSK %s n=%d accuracy %.4f", order, m, n, out[-1].accuracy)
    return out


def write_accuracy(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCURACY_COLUMNS)
        for p in points:
            w.writerow([p.scheme, p.method, p.train_periods, p.correct, p.tested, repr(p.accuracy)])


def plateau_size(points, method: str, scheme: int, tol: float = 0.01) -> int:
    """Smallest training size whose accuracy is within ``tol`` of the best for that method."""
    rows = sorted((p for p in points if p.method == method and p.scheme == scheme), key=lambda p: p.train_periods)
    best = max(p.accuracy for p in rows)
    return next(p.train_periods for p in rows if p.accuracy >= best - tol)


def export_feature_scatter(demod_or_dbn, part: Part, path) -> int:
    """Write the first three latent DBN features of every frame in ``part``; returns the row count."""
    model = demod_or_dbn.dbn if isinstance(demod_or_dbn, Demodulator) else demod_or_dbn
    if model.norm is None:
        raise ConfigError("DBN carries no normalization stats")
    feats = latent_features(model, normalize_frames(part.batch.frames, model.norm), 3)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCATTER_COLUMNS)
        for f, label, carrier in zip(feats, part.batch.labels, part.carrier_hz):
            w.writerow([repr(float(f[0])), repr(float(f[1])), repr(float(f[2])), int(label), repr(float(carrier))])
    return len(feats)
