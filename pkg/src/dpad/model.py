"""Forecast model: backbone plus (per variant) the prototype machinery.

Variants:
  full         backbone + both banks + routed fusion
  no_ddp       backbone and base head only
  common_only  common bank routed; the rare contribution is zero
  rare_only    rare path only; the common contribution is zero

One parameter registry (name -> tensor, insertion-ordered) drives the
optimizer and checkpointing. Channel independence: every (sample,
channel) window is one routed unit sharing the same parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nm
from .backbone import LinearBackbone
from .bank import BankConfig, PrototypeBank, init_bank, project_common, project_rare
from .routing import (
    DegenerateGate,
    FusionHead,
    RoutingConfig,
    RoutingTrace,
    batch_similarity,
)
from .seeding import seed_stream

__all__ = ["VARIANTS", "BatchForward", "ForecastModel", "prepare_units"]

VARIANTS = ("full", "no_ddp", "common_only", "rare_only")


def prepare_units(inputs: np.ndarray):
    """Flatten [n, L, C] samples into per-channel units [n*C, L]
    (sample-major) and instance-normalize each;
    returns (x_norm, mu[:, None], sigma[:, None])."""
    n, length, channels = inputs.shape
    x = inputs.transpose(0, 2, 1).reshape(n * channels, length)
    mu = x.mean(axis=1, keepdims=True)
    sigma = np.maximum(x.std(axis=1, keepdims=True), 1e-8)
    return (x - mu) / sigma, mu, sigma


@dataclass
class BatchForward:
    pred_norm: nm.Tensor                      # [units, H], instance-normalized scale
    rho_c: Optional[nm.Tensor] = None         # [units, M]
    rho_r: Optional[nm.Tensor] = None         # [units, N]
    top1_common: Optional[np.ndarray] = None  # [units]
    activated: list = None                    # [(unit, rare_index)]
    p_c: Optional[nm.Tensor] = None
    traces: Optional[list] = None


class ForecastModel:
    def __init__(self, look_back: int, horizon: int, bank_cfg: BankConfig,
                 routing_cfg: RoutingConfig, variant: str = "full",
                 decompose: bool = False, ma_window: int = 25, seed: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant '{variant}' (choose from {VARIANTS})")
        self.variant = variant
        self.look_back = look_back
        self.horizon = horizon
        self.seed = seed
        self.gate = DegenerateGate("windows/prototypes in routing")

        bank_cfg.base_len = look_back
        self.bank_cfg = bank_cfg
        self.routing_cfg = routing_cfg
        if variant != "no_ddp":
            routing_cfg.validate(bank_cfg.num_common)
        else:
            routing_cfg.validate()

        self.backbone = LinearBackbone(
            look_back, bank_cfg.latent_dim, horizon,
            rng=seed_stream(seed, "encoder"), decompose=decompose, ma_window=ma_window)

        if variant == "no_ddp":
            self.bank = None
            self.fusion = None
        else:
            self.bank = init_bank(bank_cfg, rng=seed_stream(seed, "bank"))
            # The h-block starts as a copy of the base head so a fresh
            # model computes exactly the backbone-only function.
            weight = np.zeros((3 * bank_cfg.latent_dim, horizon))
            weight[:bank_cfg.latent_dim] = self.backbone.base_head_weight.data
            self.fusion = FusionHead(bank_cfg.latent_dim, horizon,
                                     weight=weight,
                                     bias=self.backbone.base_head_bias.data.copy())

    @property
    def has_common(self) -> bool:
        return self.variant in ("full", "common_only")

    @property
    def has_rare(self) -> bool:
        return self.variant in ("full", "rare_only")

    def parameters(self) -> dict:
        """Insertion-ordered name -> tensor registry."""
        reg = {}
        for p in self.backbone.encoder_parameters():
            reg[p.name] = p
        if self.variant == "no_ddp":
            for p in self.backbone.head_parameters():
                reg[p.name] = p
            return reg
        if self.has_common:
            for p in self.bank.common_parameters():
                reg[p.name] = p
        if self.has_rare:
            for p in self.bank.rare_parameters():
                reg[p.name] = p
        for p in self.fusion.parameters():
            reg[p.name] = p
        return reg

    def snapshot(self) -> dict:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def restore(self, state: dict) -> None:
        for name, p in self.parameters().items():
            p.data = state[name].copy()
            p.zero_grad()

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def forward_batch(self, x_norm: np.ndarray, collect_traces: bool = False) -> BatchForward:
        """Run all units of a batch through the model. ``x_norm`` is
        [units, look_back], already instance-normalized."""
        h = self.backbone.encode_batch(x_norm)

        if self.variant == "no_ddp":
            return BatchForward(pred_norm=self.backbone.baseline_predict_batch(h),
                                activated=[])

        units = x_norm.shape[0]
        latent = self.bank_cfg.latent_dim
        cfg = self.routing_cfg
        x_const = nm.tensor(x_norm)

        p_c = project_common(self.bank) if self.has_common else None
        p_r = project_rare(self.bank) if self.has_rare else None
        rho_c = batch_similarity(x_const, self.bank.common_bases, self.gate) if self.has_common else None
        rho_r = batch_similarity(x_const, self.bank.rare_bases, self.gate) if self.has_rare else None

        top1 = None
        omega = None
        selected = None
        if self.has_common:
            # stable sort on negated values: ties go to the lower index
            selected = np.argsort(-rho_c.data, axis=1, kind="stable")[:, : cfg.top_k]
            top1 = selected[:, 0].copy()
            if cfg.fusion == "mean":
                omega = nm.tensor(np.full(selected.shape, 1.0 / cfg.top_k))
            elif cfg.fusion == "additive":
                omega = nm.tensor(np.ones(selected.shape))
            else:
                rows = np.repeat(np.arange(units), cfg.top_k)
                sel_vals = nm.reshape(nm.take(rho_c, rows, selected.reshape(-1)),
                                      selected.shape)
                omega = nm.softmax(nm.div_scalar(sel_vals, cfg.temperature), axis=1)
            gates = nm.scatter_cols(omega, selected, self.bank.num_common)
            z_c = nm.matmul(gates, p_c)                              # [units, D]
        else:
            z_c = nm.tensor(np.zeros((units, latent)))

        activated = []
        rare_pick = None
        if self.has_rare:
            best = np.argmax(rho_r.data, axis=1)
            hit = rho_r.data[np.arange(units), best] > cfg.rare_threshold
            activated = [(int(u), int(best[u])) for u in np.nonzero(hit)[0]]
            rare_pick = np.where(hit, best, -1)
            onehot = np.zeros((units, self.bank.num_rare))
            onehot[hit, best[hit]] = 1.0
            z_r = nm.matmul(nm.tensor(onehot), p_r)                  # [units, D]
        else:
            z_r = nm.tensor(np.zeros((units, latent)))

        w_h, w_zc, w_zr = self.fusion.blocks()
        pred = nm.add(nm.matmul(h, w_h), nm.matmul(z_c, w_zc))
        pred = nm.add(pred, nm.matmul(z_r, w_zr))
        pred = nm.add(pred, self.fusion.bias)

        traces = None
        if collect_traces:
            traces = []
            for u in range(units):
                rare_idx = None
                if rare_pick is not None and rare_pick[u] >= 0:
                    rare_idx = int(rare_pick[u])
                traces.append(RoutingTrace(
                    rho_c=rho_c.data[u].copy() if self.has_common else np.zeros(0),
                    rho_r=rho_r.data[u].copy() if self.has_rare else np.zeros(0),
                    selected_common=[int(i) for i in selected[u]] if selected is not None else [],
                    selected_rare=rare_idx,
                    omega_c=omega.data[u].copy() if omega is not None else np.zeros(0),
                    omega_r=1.0 if rare_idx is not None else 0.0,
                ))

        return BatchForward(pred_norm=pred, rho_c=rho_c, rho_r=rho_r,
                            top1_common=top1, activated=activated,
                            p_c=p_c, traces=traces)
