"""Strong Taylor schemes for Ito SDEs with multidimensional non-commutative
noise, driven by mean-square approximations of iterated stochastic integrals
from multiple Fourier-Legendre series, plus an exact-covariance simulator for
linear stationary systems."""

__version__ = "0.1.0"
