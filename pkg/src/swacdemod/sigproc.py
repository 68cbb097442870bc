"""PSK waveform synthesis, Doppler/AWGN channel and framing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from swacdemod.errors import ConfigError

SUPPORTED_ORDERS = (2, 4, 8, 16)

# Half-width of the windowed-sinc interpolation kernel, in input samples.
DOPPLER_TAPS = 16
ALPHA_MIN, ALPHA_MAX = 0.25, 4.0


@dataclass(frozen=True)
class PskScheme:
    order: int

    def __post_init__(self):
        if self.order not in SUPPORTED_ORDERS:
            raise ConfigError(f"PSK order must be one of {SUPPORTED_ORDERS}, got {self.order}")

    @property
    def bits_per_symbol(self) -> int:
        return int(self.order).bit_length() - 1

    def phases(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.order) / self.order


@dataclass(frozen=True)
class ModulationConfig:
    carrier_hz: float = 1000.0
    sample_rate_hz: float = 8000.0
    samples_per_symbol: int = 96

    def __post_init__(self):
        if self.sample_rate_hz <= 0 or self.carrier_hz <= 0:
            raise ConfigError("frequencies must be positive")
        if self.carrier_hz >= self.sample_rate_hz / 2:
            raise ConfigError(
                f"carrier {self.carrier_hz} Hz violates Nyquist for fs={self.sample_rate_hz} Hz"
            )
        if self.samples_per_symbol < 2:
            raise ConfigError("samples_per_symbol must be >= 2")
        if self.carrier_hz * self.symbol_duration < 1.0:
            raise ConfigError("symbol must contain at least one full carrier cycle")

    @property
    def symbol_duration(self) -> float:
        return self.samples_per_symbol / self.sample_rate_hz


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains NaN or Inf")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def power(self) -> float:
        return float(np.mean(self.samples**2)) if len(self) else 0.0


@dataclass(frozen=True)
class ChannelConfig:
    doppler_alpha: float = 1.0
    snr_db: float = math.inf
    rng_seed: int = 0

    def __post_init__(self):
        check_alpha(self.doppler_alpha)


@dataclass(frozen=True)
class FrameBatch:
    frames: np.ndarray
    labels: np.ndarray
    frame_len: int
    hop: int

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.frame_len:
            raise ValueError(f"frames must have shape (n, {self.frame_len})")
        if self.labels.shape != (self.frames.shape[0],):
            raise ValueError("one label per frame required")

    def __len__(self):
        return self.frames.shape[0]

    def subset(self, index) -> FrameBatch:
        return FrameBatch(self.frames[index], self.labels[index], self.frame_len, self.hop)


def check_alpha(alpha: float) -> None:
    if not (ALPHA_MIN <= alpha <= ALPHA_MAX):
        raise ConfigError(f"Doppler factor {alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]")


def map_bits_to_symbols(bits, scheme: PskScheme) -> np.ndarray:
    """Group bits MSB-first into natural-binary symbol indices."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = scheme.bits_per_symbol
    if bits.size % k:
        pad = k - bits.size % k
        raise ValueError(
            f"{bits.size} bits is not a multiple of {k} bits/symbol; pad with {pad} bit(s)"
        )
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    weights = 1 << np.arange(k - 1, -1, -1)
    return bits.reshape(-1, k) @ weights


def symbols_to_bits(symbols, scheme: PskScheme) -> np.ndarray:
    symbols = _check_symbols(symbols, scheme)
    k = scheme.bits_per_symbol
    shifts = np.arange(k - 1, -1, -1)
    return ((symbols[:, None] >> shifts) & 1).ravel()


def bit_errors(sent, received, scheme: PskScheme) -> int:
    """Bit differences between two symbol streams under the natural binary map."""
    sent = _check_symbols(sent, scheme)
    received = _check_symbols(received, scheme)
    if sent.shape != received.shape:
        raise ValueError("symbol streams differ in length")
    return int(np.sum(_popcount(np.bitwise_xor(sent, received))))


def _popcount(x: np.ndarray) -> np.ndarray:
    count = np.zeros_like(x)
    x = x.copy()
    while np.any(x):
        count += x & 1
        x >>= 1
    return count


def _check_symbols(symbols, scheme: PskScheme) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    if symbols.size and (symbols.min() < 0 or symbols.max() >= scheme.order):
        raise ValueError(f"symbol index out of range for {scheme.order}-PSK")
    return symbols


def _synthesize(symbols, scheme, cfg, time_scale) -> Waveform:
    symbols = _check_symbols(symbols, scheme)
    k = np.arange(cfg.samples_per_symbol) / cfg.sample_rate_hz
    theta = scheme.phases()[symbols]
    omega = 2.0 * np.pi * cfg.carrier_hz * time_scale
    samples = np.cos(np.outer(omega, k) + theta[:, None])
    return Waveform(samples.ravel(), cfg.sample_rate_hz)


def modulate_psk(symbols, scheme: PskScheme, cfg: ModulationConfig) -> Waveform:
    """cos(2*pi*fc*t + 2*pi*m/M) per symbol, t restarting at each symbol boundary."""
    return _synthesize(symbols, scheme, cfg, np.ones(np.size(symbols)))


def doppler_periods(symbols, scheme: PskScheme, cfg: ModulationConfig, alphas) -> Waveform:
    """Per-period Doppler: period i is x_i(alpha_i * t) over a symbol-synchronous window.

    Each period keeps its own time scale, so the apparent carrier of period i
    is alpha_i * fc while the receiver's symbol clock stays at T.  Evaluated
    in closed form rather than by resampling, since x is analytic.
    """
    alphas = np.asarray(alphas, dtype=np.float64).ravel()
    if alphas.shape != (np.size(symbols),):
        raise ValueError("need exactly one Doppler factor per symbol")
    for a in (alphas.min(), alphas.max()) if alphas.size else ():
        check_alpha(float(a))
    return _synthesize(symbols, scheme, cfg, alphas)


def _doppler_kernel(lag: np.ndarray, cutoff: float) -> np.ndarray:
    window = np.where(
        np.abs(lag) < DOPPLER_TAPS, 0.5 * (1.0 + np.cos(np.pi * lag / DOPPLER_TAPS)), 0.0
    )
    return cutoff * np.sinc(cutoff * lag) * window


def apply_doppler(w: Waveform, alpha: float) -> Waveform:
    """Resample ``w`` to x(alpha * t) with Hann-windowed sinc interpolation.

    For alpha > 1 the kernel cutoff drops to fs / (2 * alpha) so content that
    would fold past Nyquist is attenuated instead of aliased.
    """
    check_alpha(alpha)
    x = w.samples
    n_out = int(math.floor(len(x) / alpha))
    if alpha == 1.0:
        return Waveform(x.copy(), w.sample_rate_hz)
    cutoff = min(1.0, 1.0 / alpha)
    pos = alpha * np.arange(n_out)
    base = np.floor(pos).astype(np.int64)
    offsets = np.arange(-DOPPLER_TAPS + 1, DOPPLER_TAPS + 1)
    idx = base[:, None] + offsets[None, :]
    weights = _doppler_kernel(pos[:, None] - idx, cutoff)
    valid = (idx >= 0) & (idx < len(x))
    taps = np.where(valid, x[np.clip(idx, 0, max(len(x) - 1, 0))], 0.0)
    return Waveform(np.sum(weights * taps, axis=1), w.sample_rate_hz)


def noise_std(signal_power: float, snr_db: float) -> float:
    return math.sqrt(signal_power / 10.0 ** (snr_db / 10.0))


def add_awgn(w: Waveform, snr_db: float, seed: int) -> Waveform:
    """Add white Gaussian noise at a per-sample SNR (mean-square signal power / variance)."""
    if math.isinf(snr_db) and snr_db > 0:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    if math.isnan(snr_db):
        raise ValueError("SNR must not be NaN")
    power = w.power
    if power == 0.0:
        raise ValueError("cannot set an SNR on a zero-power (or empty) waveform")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_std(power, snr_db), size=len(w))
    return Waveform(w.samples + noise, w.sample_rate_hz)


def hop_length(frame_len: int, overlap_frac: float) -> int:
    hop = frame_len - int(round(overlap_frac * frame_len))
    if hop < 1:
        raise ConfigError("overlap leaves no hop between frames")
    return hop


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def frame_signal(w, frame_len: int = 120, overlap_frac: float = 0.2) -> np.ndarray:
    """Slice into overlapping frames; a trailing remainder shorter than a frame is dropped."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if len(x) < frame_len:
        raise ValueError(f"signal of {len(x)} samples is shorter than one frame ({frame_len})")
    hop = hop_length(frame_len, overlap_frac)
    n = frame_count(len(x), frame_len, hop)
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_len)
    return np.ascontiguousarray(windows[: (n - 1) * hop + 1 : hop])


def label_frames(
    frames: np.ndarray,
    symbols,
    cfg: ModulationConfig,
    overlap_frac: float = 0.2,
    hop: int | None = None,
) -> FrameBatch:
    """Label frame i with symbol i; requires one hop per symbol period."""
    frames = np.asarray(frames, dtype=np.float64)
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    frame_len = frames.shape[1]
    if hop is None:
        hop = hop_length(frame_len, overlap_frac)
    if hop != cfg.samples_per_symbol:
        raise ConfigError(
            f"frame hop {hop} must equal samples_per_symbol {cfg.samples_per_symbol}"
        )
    expected = frame_count(symbols.size * cfg.samples_per_symbol, frame_len, hop)
    if frames.shape[0] != expected:
        raise ConfigError(
            f"{frames.shape[0]} frames do not match {symbols.size} symbols (expected {expected})"
        )
    return FrameBatch(frames, symbols[:expected].copy(), frame_len, hop)
