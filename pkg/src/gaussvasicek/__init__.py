"""Gaussian-driven Vasicek and Ornstein-Uhlenbeck models: kernels, RKHS calculus, simulation and estimation."""

__version__ = "0.1.0"
