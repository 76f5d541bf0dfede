"""Minimal channel-independent linear backbone.

One affine encoder produces the D-dimensional representation used by
routing/fusion; an affine base head gives the backbone-only prediction
path for ablations. Windows are instance-normalized (per-window
z-score with a floored std) before encoding, and predictions are
mapped back with the stored statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm

__all__ = ["InstanceNormState", "LinearBackbone",
           "instance_normalize", "denormalize"]

STD_FLOOR = 1e-8


@dataclass
class InstanceNormState:
    mu: float
    sigma: float


def instance_normalize(x_window: np.ndarray):
    """Per-window z-score. A constant window normalizes to zeros via
    the floored std, so the round trip stays exact."""
    x = np.asarray(x_window, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise ValueError(f"instance_normalize: expects a window of length >= 2, got {x.shape}")
    mu = float(x.mean())
    sigma = max(float(x.std()), STD_FLOOR)
    return (x - mu) / sigma, InstanceNormState(mu, sigma)


def denormalize(y: nm.Tensor, state: InstanceNormState) -> nm.Tensor:
    return nm.add(nm.mul(y, nm.tensor(state.sigma)), nm.tensor(state.mu))


class LinearBackbone:
    """Affine encoder + affine base head.

    With ``decompose`` enabled the window is split into trend (moving
    average, replicated edges) and seasonal parts, each with its own
    encoder weight; off by default.
    """

    def __init__(self, look_back: int, latent_dim: int, horizon: int,
                 rng: np.random.Generator, decompose: bool = False,
                 ma_window: int = 25):
        self.look_back = look_back
        self.latent_dim = latent_dim
        self.horizon = horizon
        self.decompose = decompose
        self.ma_window = min(ma_window, look_back)

        def xavier(fan_in, fan_out):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(fan_in, fan_out))

        self.enc_weight = nm.tensor(xavier(look_back, latent_dim),
                                    requires_grad=True, name="encoder.weight")
        self.enc_bias = nm.tensor(np.zeros(latent_dim),
                                  requires_grad=True, name="encoder.bias")
        if decompose:
            self.enc_trend_weight = nm.tensor(xavier(look_back, latent_dim),
                                              requires_grad=True, name="encoder.trend_weight")
        else:
            self.enc_trend_weight = None
        self.base_head_weight = nm.tensor(xavier(latent_dim, horizon),
                                          requires_grad=True, name="base_head.weight")
        self.base_head_bias = nm.tensor(np.zeros(horizon),
                                        requires_grad=True, name="base_head.bias")

    def encoder_parameters(self):
        params = [self.enc_weight, self.enc_bias]
        if self.enc_trend_weight is not None:
            params.append(self.enc_trend_weight)
        return params

    def head_parameters(self):
        return [self.base_head_weight, self.base_head_bias]

    def _split(self, x_data: np.ndarray):
        # Windows are constants; the trend/seasonal split happens in numpy.
        from .numerics import _smoothing_matrix
        smooth = _smoothing_matrix(x_data.shape[-1], self.ma_window)
        trend = x_data @ smooth.T
        return x_data - trend, trend

    def encode(self, x_norm) -> nm.Tensor:
        """h = x @ W + b for one window (vector in, vector out)."""
        x = x_norm if isinstance(x_norm, nm.Tensor) else nm.tensor(x_norm)
        if self.decompose:
            seasonal, trend = self._split(x.data)
            h = nm.add(nm.matmul(nm.tensor(seasonal), self.enc_weight),
                       nm.matmul(nm.tensor(trend), self.enc_trend_weight))
            return nm.add(h, self.enc_bias)
        return nm.add(nm.matmul(x, self.enc_weight), self.enc_bias)

    def encode_batch(self, x_norm_mat: np.ndarray) -> nm.Tensor:
        """Rows of ``x_norm_mat`` encoded in one matmul."""
        if self.decompose:
            seasonal, trend = self._split(x_norm_mat)
            h = nm.add(nm.matmul(nm.tensor(seasonal), self.enc_weight),
                       nm.matmul(nm.tensor(trend), self.enc_trend_weight))
            return nm.add(h, self.enc_bias)
        return nm.add(nm.matmul(nm.tensor(x_norm_mat), self.enc_weight), self.enc_bias)

    def baseline_predict(self, h: nm.Tensor, state: InstanceNormState | None = None) -> nm.Tensor:
        """Backbone-only prediction; denormalized when a norm state is given."""
        y = nm.add(nm.matmul(h, self.base_head_weight), self.base_head_bias)
        if state is not None:
            y = denormalize(y, state)
        return y

    def baseline_predict_batch(self, h_mat: nm.Tensor) -> nm.Tensor:
        return nm.add(nm.matmul(h_mat, self.base_head_weight), self.base_head_bias)
