"""Dual-path context-aware routing.

Per window: Pearson similarity against both banks' base sequences,
top-K selection from the common bank with temperature-softmax gate
weights, at-most-one thresholded selection from the rare bank with a
one-hot weight, then fusion of [h; z_c; z_r] through the output head.

Selection indices are detached (straight-through); the gate weights
stay differentiable through the similarities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import numerics as nm
from .bank import PrototypeBank, project_common, project_rare

__all__ = ["RoutingConfig", "RoutingTrace", "FusionHead", "DegenerateGate",
           "pearson", "similarity_profile", "batch_similarity",
           "route_common", "route_rare", "fuse", "forward_dpad"]

logger = logging.getLogger(__name__)

# std below this makes a vector degenerate for correlation; its
# similarity is defined as 0 (neutral) rather than an error.
DEGENERATE_STD = 1e-12


class DegenerateGate:
    """Rate-limits degenerate-vector warnings to once per epoch."""

    def __init__(self, what: str):
        self.what = what
        self._armed = True

    def reset(self):
        self._armed = True

    def warn(self, count: int):
        if self._armed and count:
            logger.warning("%d degenerate %s treated as zero-similarity", count, self.what)
            self._armed = False


_default_gate = DegenerateGate("vectors in correlation")


@dataclass
class RoutingConfig:
    top_k: int = 4                 # K
    rare_threshold: float = 0.6    # epsilon; activation requires max similarity > this
    temperature: float = 0.5       # tau for the common gate softmax
    fusion: str = "adaptive"       # adaptive | additive | mean

    def validate(self, num_common: int | None = None) -> "RoutingConfig":
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if num_common is not None and self.top_k > num_common:
            raise ValueError(f"top_k {self.top_k} exceeds common bank size {num_common}")
        if self.temperature <= 0:
            raise ValueError("temperature must be strictly positive")
        if not (-1.0 <= self.rare_threshold <= 1.0):
            raise ValueError("rare_threshold must lie in [-1, 1]")
        if self.fusion not in ("adaptive", "additive", "mean"):
            raise ValueError(f"unknown fusion mode '{self.fusion}'")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoutingTrace:
    """Detached per-sample record of one routing decision."""

    rho_c: np.ndarray
    rho_r: np.ndarray
    selected_common: list
    selected_rare: Optional[int]
    omega_c: np.ndarray
    omega_r: float

    def to_record(self, sample_id: int, channel: int) -> dict:
        return {
            "sample_id": sample_id,
            "channel": channel,
            "I_c": [int(i) for i in self.selected_common],
            "omega_c": [float(w) for w in self.omega_c],
            "I_r": None if self.selected_rare is None else int(self.selected_rare),
            "rho_max_c": float(self.rho_c.max()),
            "rho_max_r": float(self.rho_r.max()),
        }


class FusionHead:
    """Affine map from [h; z_c; z_r] (3D) to the horizon (H).

    The h-block of the weight is Xavier-initialized with the same bound
    law as the backbone's base head; the z blocks start at zero so a
    fresh full model computes exactly the backbone-only function.
    """

    def __init__(self, latent_dim: int, horizon: int,
                 rng: np.random.Generator | None = None, weight=None, bias=None):
        self.latent_dim = latent_dim
        self.horizon = horizon
        if weight is None:
            w = np.zeros((3 * latent_dim, horizon))
            if rng is not None:
                bound = np.sqrt(6.0 / (latent_dim + horizon))
                w[:latent_dim] = rng.uniform(-bound, bound, size=(latent_dim, horizon))
            weight = w
        if bias is None:
            bias = np.zeros(horizon)
        self.weight = nm.tensor(weight, requires_grad=True, name="fusion.weight")
        self.bias = nm.tensor(bias, requires_grad=True, name="fusion.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def blocks(self):
        d = self.latent_dim
        return (nm.slice_rows(self.weight, 0, d),
                nm.slice_rows(self.weight, d, 2 * d),
                nm.slice_rows(self.weight, 2 * d, 3 * d))


def pearson(a: nm.Tensor, b: nm.Tensor, gate: DegenerateGate | None = None) -> nm.Tensor:
    """Sample Pearson correlation of two equal-length vectors, built
    from primitives so it is differentiable in both arguments. Either
    vector (near-)constant yields the neutral value 0."""
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise nm.ShapeError(f"pearson: expects equal-length vectors, got {a.data.shape} vs {b.data.shape}")
    if a.data.shape[0] < 2:
        raise nm.ShapeError("pearson: needs length >= 2")
    if a.data.std() < DEGENERATE_STD or b.data.std() < DEGENERATE_STD:
        (gate or _default_gate).warn(1)
        return nm.tensor(0.0)
    ac = nm.sub(a, nm.mean(a))
    bc = nm.sub(b, nm.mean(b))
    num = nm.matmul(ac, bc)
    denom = nm.mul(nm.sqrt(nm.tsum(nm.square(ac))), nm.sqrt(nm.tsum(nm.square(bc))))
    return nm.div(num, denom)


def similarity_profile(x: nm.Tensor, sequences: nm.Tensor,
                       gate: DegenerateGate | None = None) -> nm.Tensor:
    """Correlation of one window against every base-sequence row."""
    prof = batch_similarity(nm.reshape(x, (1, x.data.shape[0])), sequences, gate)
    return nm.reshape(prof, (sequences.data.shape[0],))


def batch_similarity(x_mat: nm.Tensor, sequences: nm.Tensor,
                     gate: DegenerateGate | None = None) -> nm.Tensor:
    """Pearson profiles for a whole batch at once: rows of ``x_mat``
    (windows, treated as constants) against rows of ``sequences``
    (differentiable). Returns [batch, count].

    Degenerate rows on either side get similarity 0; their masks also
    zero the gradient path, and the floor on the norm product keeps the
    division finite.
    """
    if x_mat.data.shape[1] != sequences.data.shape[1]:
        raise nm.ShapeError(
            f"batch_similarity: window length {x_mat.data.shape[1]} vs "
            f"sequence length {sequences.data.shape[1]}")
    xd = x_mat.data
    x_centered = xd - xd.mean(axis=1, keepdims=True)
    x_norm = np.sqrt((x_centered * x_centered).sum(axis=1, keepdims=True))
    x_ok = (xd.std(axis=1, keepdims=True) >= DEGENERATE_STD).astype(np.float64)

    seq_centered = nm.sub(sequences, nm.mean(sequences, axis=1, keepdims=True))
    seq_norm = nm.sqrt(nm.tsum(nm.square(seq_centered), axis=1, keepdims=True))  # [count, 1]
    seq_ok = (sequences.data.std(axis=1) >= DEGENERATE_STD).astype(np.float64)

    n_bad = int((1 - x_ok).sum() + (1 - seq_ok).sum())
    if n_bad:
        (gate or _default_gate).warn(n_bad)

    num = nm.matmul(nm.tensor(x_centered), nm.transpose(seq_centered))      # [B, count]
    denom = nm.mul(nm.tensor(x_norm), nm.transpose(seq_norm))               # [B, count]
    prof = nm.div(num, nm.max_with_scalar(denom, DEGENERATE_STD))
    prof = nm.mul(prof, nm.tensor(seq_ok.reshape(1, -1)))
    return nm.mul(prof, nm.tensor(x_ok))


def route_common(rho_c: nm.Tensor, cfg: RoutingConfig):
    """Pick the K most similar common prototypes (ties to the lower
    index, result in descending-similarity order) and their gate
    weights. Indices are detached; weights differentiate through rho."""
    m = rho_c.data.shape[0]
    if cfg.top_k > m:
        raise ValueError(f"top_k {cfg.top_k} exceeds bank size {m}")
    order = np.argsort(-rho_c.data, kind="stable")
    selected = [int(i) for i in order[: cfg.top_k]]
    if cfg.fusion == "mean":
        omega = nm.tensor(np.full(cfg.top_k, 1.0 / cfg.top_k))
    elif cfg.fusion == "additive":
        omega = nm.tensor(np.ones(cfg.top_k))
    else:
        omega = nm.softmax(nm.div_scalar(nm.take_rows(rho_c, selected), cfg.temperature))
    return selected, omega


def route_rare(rho_r: nm.Tensor, cfg: RoutingConfig) -> Optional[int]:
    """Index of the best rare prototype when its similarity strictly
    exceeds the threshold; otherwise no activation."""
    data = rho_r.data
    best = int(np.argmax(data))  # argmax takes the lower index on ties
    if data[best] > cfg.rare_threshold:
        return best
    return None


def fuse(h: nm.Tensor, omega_c: nm.Tensor, selected_common, omega_r: float,
         selected_rare: Optional[int], p_c: nm.Tensor, p_r: nm.Tensor,
         head: FusionHead) -> nm.Tensor:
    """y = h W_h + z_c W_zc + z_r W_zr + b, the row-sliced form of the
    concatenation [h; z_c; z_r] against the full head weight."""
    k = len(selected_common)
    chosen = nm.take_rows(p_c, selected_common)                    # [K, D]
    weighted = nm.mul(nm.reshape(omega_c, (k, 1)), chosen)
    z_c = nm.tsum(weighted, axis=0)                                # [D]
    if selected_rare is None:
        z_r = nm.tensor(np.zeros(p_r.data.shape[1]))
    else:
        z_r = nm.reshape(nm.take_rows(p_r, [selected_rare]), (p_r.data.shape[1],))
        if omega_r != 1.0:
            z_r = nm.mul(z_r, nm.tensor(float(omega_r)))
    w_h, w_zc, w_zr = head.blocks()
    y = nm.add(nm.matmul(h, w_h), nm.matmul(z_c, w_zc))
    y = nm.add(y, nm.matmul(z_r, w_zr))
    return nm.add(y, head.bias)


def forward_dpad(x_window: nm.Tensor, h: nm.Tensor, bank: PrototypeBank,
                 head: FusionHead, cfg: RoutingConfig,
                 gate: DegenerateGate | None = None):
    """Full per-window pass: similarity profiles, both routing paths,
    fusion. ``x_window`` is the instance-normalized input channel
    window. Returns (prediction [H], RoutingTrace)."""
    rho_c = similarity_profile(x_window, bank.common_bases, gate)
    rho_r = similarity_profile(x_window, bank.rare_bases, gate)
    selected, omega_c = route_common(rho_c, cfg)
    rare_idx = route_rare(rho_r, cfg)
    omega_r = 1.0 if rare_idx is not None else 0.0
    p_c = project_common(bank)
    p_r = project_rare(bank)
    y = fuse(h, omega_c, selected, omega_r, rare_idx, p_c, p_r, head)
    trace = RoutingTrace(
        rho_c=rho_c.data.copy(),
        rho_r=rho_r.data.copy(),
        selected_common=selected,
        selected_rare=rare_idx,
        omega_c=omega_c.data.copy(),
        omega_r=omega_r,
    )
    return y, trace
