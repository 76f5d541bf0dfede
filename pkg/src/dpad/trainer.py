"""Adam optimization, the training loop, evaluation, checkpoints."""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import numerics as nm
from .bank import export_bank, import_bank, BankConfig
from .data import WindowDataset, event_overlap_mask
from .losses import (
    DGLossConfig,
    FrequencyTracker,
    diversity_loss,
    mse,
    rarity_loss,
    separation_loss,
    total_loss,
)
from .model import ForecastModel, prepare_units
from .routing import RoutingConfig
from .seeding import seed_stream

__all__ = ["Adam", "OptimizerError", "NumericalAbort", "TrainConfig",
           "EvalResult", "train", "evaluate", "save_checkpoint", "load_checkpoint"]

MODEL_MAGIC = b"DPADMODL"
MODEL_VERSION = 1


class OptimizerError(RuntimeError):
    pass


class NumericalAbort(ArithmeticError):
    """Non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, batch_index: int, components: dict):
        self.batch_index = batch_index
        self.components = components
        parts = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"non-finite loss at batch {batch_index}: {parts}")


class Adam:
    """Bias-corrected Adam over a name -> tensor registry.

    ``frozen`` names are skipped entirely; ``grad_masks`` maps a name to
    a boolean array marking entries whose gradient is forced to zero
    before the moment update (used by exact-equivalence runs).
    """

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, frozen=(),
                 grad_masks: Optional[dict] = None):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.frozen = set(frozen)
        self.grad_masks = dict(grad_masks or {})
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            if name in self.frozen:
                continue
            if p.grad is None:
                raise OptimizerError(f"parameter '{name}' has no gradient")
            g = p.grad
            if name in self.grad_masks:
                g = np.where(self.grad_masks[name], 0.0, g)
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    patience: int = 3
    lr: float = 1e-3
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be strictly positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


HISTORY_COLUMNS = ("epoch", "train_mse", "val_mse", "sep", "rare", "div",
                   "total", "rare_activation_rate")


def _denorm_pred(pred_norm: nm.Tensor, mu: np.ndarray, sigma: np.ndarray) -> nm.Tensor:
    return nm.add(nm.mul(pred_norm, nm.tensor(sigma)), nm.tensor(mu))


def _unit_targets(targets: np.ndarray) -> np.ndarray:
    n, horizon, channels = targets.shape
    return targets.transpose(0, 2, 1).reshape(n * channels, horizon)


def _batch_losses(model: ForecastModel, fwd, target_units, mu, sigma,
                  loss_cfg: DGLossConfig, tracker: Optional[FrequencyTracker]):
    """Assemble the objective for one batch; returns (total, components)."""
    pred = _denorm_pred(fwd.pred_norm, mu, sigma)
    mse_term = mse(pred, nm.tensor(target_units))

    sep_term = rare_term = div_term = None
    if model.variant != "no_ddp":
        if loss_cfg.sep_weight != 0.0 and model.has_common and model.has_rare:
            units = fwd.rho_c.data.shape[0]
            best_c = np.argmax(fwd.rho_c.data, axis=1)
            best_r = np.argmax(fwd.rho_r.data, axis=1)
            rows = np.arange(units)
            delta = nm.sub(nm.take(fwd.rho_c, rows, best_c),
                           nm.take(fwd.rho_r, rows, best_r))
            omega = tracker.weights(fwd.top1_common) if tracker is not None else np.ones(units)
            sep_term = separation_loss(delta, omega, loss_cfg.margin)
        if loss_cfg.rare_weight != 0.0 and model.has_rare:
            rare_term = rarity_loss(fwd.rho_r, fwd.activated, loss_cfg.rare_temperature)
        if loss_cfg.div_weight != 0.0 and model.has_common and model.bank.num_common >= 2:
            div_term = diversity_loss(fwd.p_c)

    total = total_loss(mse_term, sep_term, rare_term, div_term, loss_cfg)
    components = {
        "mse": mse_term.item(),
        "sep": sep_term.item() if sep_term is not None else 0.0,
        "rare": rare_term.item() if rare_term is not None else 0.0,
        "div": div_term.item() if div_term is not None else 0.0,
        "total": total.item(),
    }
    return total, components


def train(model: ForecastModel, dataset: WindowDataset, cfg: TrainConfig,
          loss_cfg: DGLossConfig, events: Optional[list] = None,
          frozen=(), grad_masks: Optional[dict] = None):
    """Mini-batch training with early stopping on validation MSE.

    Returns (history_rows, best_state); the model is left restored to
    the best-validation parameters.
    """
    cfg.validate()
    loss_cfg.validate()
    train_split = dataset.split("train")
    val_split = dataset.split("val")
    if len(train_split) == 0:
        raise ValueError("empty train split")

    adam = Adam(model.parameters(), lr=cfg.lr, frozen=frozen, grad_masks=grad_masks)
    tracker = (FrequencyTracker(model.bank.num_common, ema=loss_cfg.freq_ema)
               if model.has_common else None)
    shuffle_rng = seed_stream(cfg.seed, "shuffle")

    history = []
    best_val = np.inf
    best_state = model.snapshot()
    epochs_since_best = 0
    n = len(train_split)

    for epoch in range(1, cfg.epochs + 1):
        model.gate.reset()
        order = shuffle_rng.permutation(n)
        sums = {"mse": 0.0, "sep": 0.0, "rare": 0.0, "div": 0.0, "total": 0.0}
        n_batches = 0
        n_units = 0
        n_activated = 0

        for batch_start in range(0, n, cfg.batch_size):
            idx = order[batch_start:batch_start + cfg.batch_size]
            inputs = train_split.inputs[idx]
            targets = _unit_targets(train_split.targets[idx])
            x_norm, mu, sigma = prepare_units(inputs)

            model.zero_grad()
            with nm.Tape() as tape:
                fwd = model.forward_batch(x_norm)
                total, components = _batch_losses(
                    model, fwd, targets, mu, sigma, loss_cfg, tracker)
                if not np.isfinite(components["total"]):
                    raise NumericalAbort(n_batches, components)
                tape.backward(total)

            for p in model.parameters().values():
                p._ensure_grad()  # structurally absent paths contribute zero this batch
            adam.step()

            if tracker is not None:
                tracker.update(tracker.histogram(fwd.top1_common))
            for key in sums:
                sums[key] += components[key]
            n_batches += 1
            n_units += x_norm.shape[0]
            n_activated += len(fwd.activated)

        val_metrics = evaluate(model, dataset, "val") if len(val_split) else None
        val_mse = val_metrics.mse if val_metrics is not None else sums["mse"] / n_batches
        row = {
            "epoch": epoch,
            "train_mse": sums["mse"] / n_batches,
            "val_mse": val_mse,
            "sep": sums["sep"] / n_batches,
            "rare": sums["rare"] / n_batches,
            "div": sums["div"] / n_batches,
            "total": sums["total"] / n_batches,
            "rare_activation_rate": n_activated / max(n_units, 1),
        }
        history.append(row)

        if val_mse < best_val:
            best_val = val_mse
            best_state = model.snapshot()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                break

    model.restore(best_state)
    return history, best_state


@dataclass
class EvalResult:
    mse: float
    mae: float
    per_horizon_mse: list
    rare_event_mse: Optional[float]
    n_samples: int
    traces: Optional[list] = None

    def to_dict(self) -> dict:
        return {"mse": self.mse, "mae": self.mae,
                "per_horizon_mse": self.per_horizon_mse,
                "rare_event_mse": self.rare_event_mse,
                "n_samples": self.n_samples}


def evaluate(model: ForecastModel, dataset: WindowDataset, split_name: str,
             events: Optional[list] = None, collect_traces: bool = False,
             batch_size: int = 256) -> EvalResult:
    """Metrics on denormalized (original-unit) predictions. The rare
    MSE restricts to (sample, channel) units whose target range
    overlaps a logged event."""
    split = dataset.split(split_name)
    n = len(split)
    if n == 0:
        raise ValueError(f"split '{split_name}' is empty")
    channels = split.inputs.shape[2]
    horizon = dataset.horizon

    preds = np.empty((n * channels, horizon))
    trues = np.empty((n * channels, horizon))
    traces = [] if collect_traces else None

    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        inputs = split.inputs[start:stop]
        x_norm, mu, sigma = prepare_units(inputs)
        fwd = model.forward_batch(x_norm, collect_traces=collect_traces)
        pred_z = fwd.pred_norm.data * sigma + mu
        preds[start * channels:stop * channels] = pred_z
        trues[start * channels:stop * channels] = _unit_targets(split.targets[start:stop])
        if collect_traces:
            for u, trace in enumerate(fwd.traces):
                sample = start + u // channels
                traces.append(trace.to_record(sample, u % channels))

    # back to original units: unit u belongs to channel u % channels
    ch_std = np.tile(dataset.channel_std, n)[:, None]
    ch_mean = np.tile(dataset.channel_mean, n)[:, None]
    preds = preds * ch_std + ch_mean
    trues = trues * ch_std + ch_mean

    err = preds - trues
    mse_val = float(np.mean(err * err))
    mae_val = float(np.mean(np.abs(err)))
    per_horizon = [float(v) for v in np.mean(err * err, axis=0)]

    rare_mse = None
    if events is not None:
        mask = event_overlap_mask(split, events, dataset.look_back, horizon, channels)
        unit_mask = mask.reshape(-1)
        if unit_mask.any():
            sub = err[unit_mask]
            rare_mse = float(np.mean(sub * sub))
    return EvalResult(mse=mse_val, mae=mae_val, per_horizon_mse=per_horizon,
                      rare_event_mse=rare_mse, n_samples=n, traces=traces)


# ---------------------------------------------------------------------------
# persistence


def write_history_csv(history: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in HISTORY_COLUMNS])


def save_params_blob(params: dict, path) -> None:
    """magic, version u32, count u32; per entry: name (u16 len + utf-8),
    ndim u32, dims u32..., raw little-endian f64 payload."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<2I", MODEL_VERSION, len(params)))
        for name, p in params.items():
            arr = p.data if isinstance(p, nm.Tensor) else np.asarray(p)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_params_blob(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ValueError(f"{path}: bad magic")
    offset = len(MODEL_MAGIC)
    version, count = struct.unpack_from("<2I", blob, offset)
    offset += 8
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size,
                                  offset=offset).reshape(shape).copy()
        offset += size * 8
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes at offset {offset}")
    return out


def save_checkpoint(directory, model: ForecastModel, run_config: dict,
                    history: list) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "config.json"), "w") as fh:
        json.dump(run_config, fh, indent=2)
        fh.write("\n")
    if model.bank is not None:
        export_bank(model.bank, os.path.join(directory, "bank.bin"))
    non_bank = {name: p for name, p in model.parameters().items()
                if not name.startswith("bank.")}
    save_params_blob(non_bank, os.path.join(directory, "model.bin"))
    write_history_csv(history, os.path.join(directory, "history.csv"))


def load_checkpoint(directory) -> tuple:
    """Rebuild (model, run_config_dict) from a checkpoint directory."""
    from .config import RunConfig  # local import; config depends on trainer types

    with open(os.path.join(directory, "config.json")) as fh:
        run_config = json.load(fh)
    rc = RunConfig.from_dict(run_config)
    model = rc.build_model()

    arrays = load_params_blob(os.path.join(directory, "model.bin"))
    bank_path = os.path.join(directory, "bank.bin")
    if model.bank is not None:
        loaded = import_bank(bank_path)
        if not isinstance(loaded.cfg, BankConfig):
            raise ValueError("bank checkpoint missing config sidecar")
        for dst, src in zip(model.bank.parameters(), loaded.parameters()):
            arrays[dst.name] = src.data
    registry = model.parameters()
    missing = [name for name in registry if name not in arrays]
    if missing:
        raise ValueError(f"checkpoint missing parameters: {missing}")
    model.restore(arrays)
    return model, run_config
