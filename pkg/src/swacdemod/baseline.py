"""Coherent maximum-likelihood PSK detector and the analytic BPSK BER curve."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from swacdemod.sigproc import ModulationConfig, PskScheme, Waveform, modulate_psk


@dataclass(frozen=True)
class MleConfig:
    scheme: PskScheme
    mod_cfg: ModulationConfig


def templates(cfg: MleConfig) -> np.ndarray:
    """One symbol-long reference waveform per constellation point, shape (M, spS)."""
    symbols = np.arange(cfg.scheme.order)
    return modulate_psk(symbols, cfg.scheme, cfg.mod_cfg).samples.reshape(cfg.scheme.order, -1)


def mle_demodulate(received, cfg: MleConfig) -> np.ndarray:
    """Symbol-synchronous correlation detector assuming the nominal carrier.

    With equal-energy templates and white Gaussian noise, the largest
    correlation is the maximum-likelihood decision.  Ties go to the lower
    symbol index.
    """
    x = received.samples if isinstance(received, Waveform) else np.asarray(received, dtype=np.float64)
    sps = cfg.mod_cfg.samples_per_symbol
    if x.ndim != 1 or x.size % sps:
        raise ValueError(f"received length {x.size} is not a multiple of {sps} samples per symbol")
    corr = x.reshape(-1, sps) @ templates(cfg).T
    return np.argmax(corr, axis=1)


def qfunc(x):
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def theoretical_ber_bpsk(ebn0_db):
    """Q(sqrt(2 Eb/N0)); -inf dB gives 0.5."""
    ebn0 = 10.0 ** (np.asarray(ebn0_db, dtype=np.float64) / 10.0)
    out = qfunc(np.sqrt(2.0 * ebn0))
    return float(out) if np.ndim(out) == 0 else out


def ebn0_offset_db(scheme: PskScheme, cfg: ModulationConfig) -> float:
    """Eb/N0 minus per-sample SNR, in dB.

    Es = P * spS per symbol and N0 = 2 * sigma^2 for real samples, so
    Eb/N0 = (P / sigma^2) * spS / (2 * bits_per_symbol).
    """
    return 10.0 * math.log10(cfg.samples_per_symbol / (2.0 * scheme.bits_per_symbol))


def ebn0_to_snr_db(ebn0_db, scheme: PskScheme, cfg: ModulationConfig):
    return np.asarray(ebn0_db, dtype=np.float64) - ebn0_offset_db(scheme, cfg)


def snr_to_ebn0_db(snr_db, scheme: PskScheme, cfg: ModulationConfig):
    return np.asarray(snr_db, dtype=np.float64) + ebn0_offset_db(scheme, cfg)
