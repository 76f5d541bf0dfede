"""Prototype initialization priors.

Common base sequences are drawn from a zero-mean Gaussian process whose
covariance is a weighted mixture of linear, RBF, and periodic kernels
over time rescaled to [0, 1]; rare base sequences are small isotropic
Gaussian noise. Everything here is init-time numpy (no gradient tape).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "KernelMixtureConfig",
    "RareInitConfig",
    "ConfigurationError",
    "kernel_value",
    "build_gram",
    "sample_gp",
    "sample_rare",
]


class ConfigurationError(ValueError):
    pass


@dataclass
class KernelMixtureConfig:
    """Mixture weights and kernel hyperparameters.

    Kernel forms on rescaled time t, t' in [0, 1]:
      linear:   linear_scale * t * t'
      rbf:      exp(-(t - t')^2 / (2 * rbf_lengthscale^2))
      periodic: exp(-2 * sin^2(pi * |t - t'| / periodic_period) / periodic_lengthscale^2)
    """

    lambda_l: float = 1.0 / 3.0
    lambda_r: float = 1.0 / 3.0
    lambda_p: float = 1.0 / 3.0
    rbf_lengthscale: float = 0.2
    periodic_period: float = 0.25
    periodic_lengthscale: float = 1.0
    linear_scale: float = 1.0
    jitter: float = 1e-6

    def validate(self) -> "KernelMixtureConfig":
        if min(self.lambda_l, self.lambda_r, self.lambda_p) < 0:
            raise ConfigurationError("kernel mixture weights must be nonnegative")
        if self.lambda_l + self.lambda_r + self.lambda_p <= 0:
            raise ConfigurationError("kernel mixture weights sum to zero")
        for name in ("rbf_lengthscale", "periodic_period", "periodic_lengthscale",
                     "linear_scale", "jitter"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        return self

    def with_multipliers(self, rbf_mult: float, period_mult: float) -> "KernelMixtureConfig":
        """Per-prototype hyperparameter jitter: scaled lengthscale/period."""
        return replace(
            self,
            rbf_lengthscale=self.rbf_lengthscale * rbf_mult,
            periodic_period=self.periodic_period * period_mult,
        )


@dataclass
class RareInitConfig:
    sigma: float = 0.02
    length: int = 96

    def validate(self) -> "RareInitConfig":
        if self.sigma <= 0:
            raise ConfigurationError("rare init sigma must be strictly positive")
        if self.length < 1:
            raise ConfigurationError("rare init length must be >= 1")
        return self


def kernel_value(kind: str, t: float, t2: float, cfg: KernelMixtureConfig) -> float:
    """Single kernel evaluation at rescaled times t, t2."""
    if kind == "linear":
        return cfg.linear_scale * t * t2
    if kind == "rbf":
        d = t - t2
        return float(np.exp(-(d * d) / (2.0 * cfg.rbf_lengthscale ** 2)))
    if kind == "periodic":
        s = np.sin(np.pi * abs(t - t2) / cfg.periodic_period)
        return float(np.exp(-2.0 * s * s / cfg.periodic_lengthscale ** 2))
    raise ConfigurationError(f"unknown kernel kind '{kind}'")


def _time_grid(length: int) -> np.ndarray:
    return np.arange(length, dtype=np.float64) / (length - 1)


def build_gram(length: int, cfg: KernelMixtureConfig) -> np.ndarray:
    """Mixture Gram matrix with jitter on the diagonal.

    Computed from |t - t'| and t*t' outer products, both exactly
    symmetric in IEEE arithmetic, so the result is bitwise symmetric.
    """
    if length < 2:
        raise ConfigurationError(f"gram length must be >= 2, got {length}")
    cfg.validate()
    t = _time_grid(length)
    diff = np.abs(t[:, None] - t[None, :])
    gram = np.zeros((length, length))
    if cfg.lambda_l > 0:
        gram += cfg.lambda_l * (cfg.linear_scale * np.outer(t, t))
    if cfg.lambda_r > 0:
        gram += cfg.lambda_r * np.exp(-(diff * diff) / (2.0 * cfg.rbf_lengthscale ** 2))
    if cfg.lambda_p > 0:
        s = np.sin(np.pi * diff / cfg.periodic_period)
        gram += cfg.lambda_p * np.exp(-2.0 * s * s / cfg.periodic_lengthscale ** 2)
    gram[np.diag_indices(length)] += cfg.jitter
    return gram


def _cholesky_with_escalation(gram: np.ndarray, jitter: float) -> np.ndarray:
    """Factor the Gram matrix, escalating jitter x10 up to 3 times."""
    eye = np.eye(gram.shape[0])
    for bump in (0.0, jitter * 10, jitter * 100, jitter * 1000):
        try:
            return np.linalg.cholesky(gram + bump * eye)
        except np.linalg.LinAlgError:
            continue
    raise ConfigurationError(
        "gram matrix not positive definite after jitter escalation"
    )


def sample_gp(gram: np.ndarray, rng: np.random.Generator,
              jitter: float = 1e-6) -> np.ndarray:
    """One draw from N(0, gram) via L @ z with L the Cholesky factor."""
    chol = _cholesky_with_escalation(gram, jitter)
    z = rng.standard_normal(gram.shape[0])
    return chol @ z


def sample_rare(cfg: RareInitConfig, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. N(0, sigma^2) sequence. sigma scales the draw elementwise,
    so doubling sigma exactly doubles the sample under the same seed."""
    cfg.validate()
    return cfg.sigma * rng.standard_normal(cfg.length)
