import math

import numpy as np
import pytest

from swacdemod.baseline import (
    MleConfig,
    ebn0_to_snr_db,
    mle_demodulate,
    snr_to_ebn0_db,
    theoretical_ber_bpsk,
)
from swacdemod.sigproc import ModulationConfig, PskScheme, Waveform, add_awgn, doppler_periods, modulate_psk

CFG = ModulationConfig()


def mle_ber(order, ebn0_db, n_symbols, seed, alpha=1.0, chunk=50_000):
    scheme = PskScheme(order)
    cfg = MleConfig(scheme, CFG)
    snr = float(ebn0_to_snr_db(ebn0_db, scheme, CFG))
    rng = np.random.default_rng(seed)
    errors = 0
    for i, start in enumerate(range(0, n_symbols, chunk)):
        symbols = rng.integers(0, order, min(chunk, n_symbols - start))
        w = doppler_periods(symbols, scheme, CFG, np.full(symbols.size, alpha))
        rx = add_awgn(w, snr, seed * 1000 + i)
        errors += int(np.sum(mle_demodulate(rx, cfg) != symbols))
    return errors / n_symbols


class TestTheory:
    def test_minus_infinity_limit(self):
        assert theoretical_ber_bpsk(-np.inf) == 0.5

    def test_zero_db(self):
        # Q(sqrt(2)) = erfc(1) / 2
        assert theoretical_ber_bpsk(0.0) == pytest.approx(0.5 * math.erfc(1.0), rel=1e-12)
        assert theoretical_ber_bpsk(0.0) == pytest.approx(0.0786, abs=1e-4)

    def test_eight_db(self):
        assert theoretical_ber_bpsk(8.0) == pytest.approx(1.909e-4, rel=1e-3)

    def test_monotone(self):
        grid = np.linspace(-10, 12, 50)
        assert np.all(np.diff(theoretical_ber_bpsk(grid)) < 0)

    def test_snr_conversion_round_trip(self):
        scheme = PskScheme(4)
        assert float(snr_to_ebn0_db(ebn0_to_snr_db(3.0, scheme, CFG), scheme, CFG)) == pytest.approx(3.0)
        # 96 samples per symbol, 2 bits: Eb/N0 = SNR * 24
        assert float(snr_to_ebn0_db(0.0, scheme, CFG)) == pytest.approx(10 * math.log10(24))


class TestDetector:
    @pytest.mark.parametrize("order", [2, 4, 8, 16])
    def test_noiseless_is_error_free(self, order):
        scheme = PskScheme(order)
        symbols = np.random.default_rng(order).integers(0, order, 400)
        decided = mle_demodulate(modulate_psk(symbols, scheme, CFG), MleConfig(scheme, CFG))
        np.testing.assert_array_equal(decided, symbols)

    def test_scale_invariance(self):
        scheme = PskScheme(8)
        rng = np.random.default_rng(1)
        symbols = rng.integers(0, 8, 300)
        rx = add_awgn(modulate_psk(symbols, scheme, CFG), -8.0, 2)
        cfg = MleConfig(scheme, CFG)
        base = mle_demodulate(rx, cfg)
        for k in (1e-3, 0.7, 42.0):
            np.testing.assert_array_equal(mle_demodulate(Waveform(k * rx.samples, rx.sample_rate_hz), cfg), base)

    def test_tie_breaks_low(self):
        scheme = PskScheme(2)
        assert mle_demodulate(np.zeros(96), MleConfig(scheme, CFG)).tolist() == [0]

    def test_rejects_partial_symbol(self):
        with pytest.raises(ValueError):
            mle_demodulate(np.zeros(100), MleConfig(PskScheme(2), CFG))

    def test_bpsk_ber_matches_q_function(self):
        n = 1_000_000
        p = theoretical_ber_bpsk(8.0)
        measured = mle_ber(2, 8.0, n, seed=8)
        assert abs(measured - p) <= 3 * math.sqrt(p * (1 - p) / n)

    def test_doppler_degrades_monotonically(self):
        bers = [mle_ber(2, 4.0, 100_000, seed=3, alpha=a) for a in (1.00, 1.01, 1.02, 1.05)]
        assert all(b2 > b1 for b1, b2 in zip(bers, bers[1:])), bers
