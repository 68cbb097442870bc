"""Doppler-robust PSK demodulation with DBN feature extraction and NN classifiers."""

__version__ = "0.1.0"
