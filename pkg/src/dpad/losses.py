"""Training objective and evaluation metrics.

The objective is plain MSE plus three disentanglement terms:
separation (a frequency-weighted two-sided hinge on the gap between
the banks' best similarities), rarity preservation (a temperature
contrastive term over the rare bank for activated samples), and
diversity (mean squared pairwise cosine between latent common
prototypes). Each weight is independently zeroable; a zero weight
skips the term entirely so the remaining graph is bitwise identical
to training without it.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import numerics as nm
from .routing import DegenerateGate

__all__ = ["DGLossConfig", "FrequencyTracker", "mse", "mae",
           "separation_loss", "rarity_loss", "diversity_loss", "total_loss"]

_div_gate = DegenerateGate("zero-norm prototype rows in diversity loss")


@dataclass
class DGLossConfig:
    sep_weight: float = 0.1        # lambda_sep
    rare_weight: float = 0.1       # lambda_rare
    div_weight: float = 0.1        # lambda_div
    margin: float = 0.1            # hinge margin m
    rare_temperature: float = 0.5  # contrastive temperature
    freq_ema: float = 0.9          # EMA decay of the activation histogram

    def validate(self) -> "DGLossConfig":
        if min(self.sep_weight, self.rare_weight, self.div_weight) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.margin <= 0:
            raise ValueError("margin must be strictly positive")
        if self.rare_temperature <= 0:
            raise ValueError("rare_temperature must be strictly positive")
        if not (0.0 < self.freq_ema < 1.0):
            raise ValueError("freq_ema must lie in (0, 1)")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _as_tensor(x) -> nm.Tensor:
    return x if isinstance(x, nm.Tensor) else nm.tensor(x)


def mse(pred, target) -> nm.Tensor:
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise nm.ShapeError(f"mse: shapes {pred.data.shape} vs {target.data.shape}")
    return nm.mean(nm.square(nm.sub(pred, target)))


def mae(pred, target) -> nm.Tensor:
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise nm.ShapeError(f"mae: shapes {pred.data.shape} vs {target.data.shape}")
    diff = nm.sub(pred, target)
    # |d| as relu(d) + relu(-d); subgradient 0 at the kink
    return nm.mean(nm.add(nm.relu(diff), nm.relu(nm.neg(diff))))


class FrequencyTracker:
    """EMA histogram of top-1 common-prototype activations.

    The weight of an index is its EMA count relative to the current
    maximum, so a prototype seen as often as the most common one gets
    1.0 and never-activated ones decay toward 0.
    """

    def __init__(self, num_common: int, ema: float = 0.9):
        if num_common < 1:
            raise ValueError("tracker needs at least one prototype")
        self.ema = float(ema)
        self.counts = np.ones(num_common)

    def weight(self, top1_index: int) -> float:
        return float(self.counts[top1_index] / self.counts.max())

    def weights(self, top1_indices) -> np.ndarray:
        return self.counts[np.asarray(top1_indices, dtype=np.intp)] / self.counts.max()

    def update(self, batch_histogram: np.ndarray) -> None:
        hist = np.asarray(batch_histogram, dtype=np.float64)
        if hist.shape != self.counts.shape:
            raise ValueError(f"histogram shape {hist.shape} vs tracker {self.counts.shape}")
        self.counts = self.ema * self.counts + (1.0 - self.ema) * hist

    def histogram(self, top1_indices) -> np.ndarray:
        hist = np.zeros_like(self.counts)
        np.add.at(hist, np.asarray(top1_indices, dtype=np.intp), 1.0)
        return hist


def separation_loss(delta_rho: nm.Tensor, omega, margin: float) -> nm.Tensor:
    """Two-sided hinge, averaged over the batch.

    delta_rho[i] is max common similarity minus max rare similarity for
    sample i; omega[i] in [0, 1] is how frequent the sample's dominant
    pattern is. Frequent samples are pushed to prefer the common bank
    by at least the margin, infrequent ones the rare bank.
    """
    omega_t = _as_tensor(np.asarray(omega, dtype=np.float64))
    if omega_t.data.shape != delta_rho.data.shape:
        raise nm.ShapeError(
            f"separation_loss: omega shape {omega_t.data.shape} vs delta {delta_rho.data.shape}")
    m = float(margin)
    hinge_common = nm.max_with_scalar(nm.sub(nm.tensor(m), delta_rho), 0.0)
    hinge_rare = nm.max_with_scalar(nm.add(nm.tensor(m), delta_rho), 0.0)
    one_minus = nm.sub(nm.tensor(1.0), omega_t)
    return nm.mean(nm.add(nm.mul(omega_t, hinge_common), nm.mul(one_minus, hinge_rare)))


def rarity_loss(sims: nm.Tensor, activated, tau_rare: float) -> nm.Tensor:
    """Contrastive pull toward the activated rare prototype.

    ``sims`` is [batch, num_rare]; ``activated`` lists (sample_index,
    rare_index) pairs. Empty activation set contributes exactly 0 so
    batch losses stay comparable.
    """
    if not activated:
        return nm.tensor(0.0)
    rows = [int(s) for s, _ in activated]
    cols = [int(j) for _, j in activated]
    logits = nm.div_scalar(nm.take_rows(sims, rows), float(tau_rare))   # [A, N]
    shift = logits.data.max(axis=1, keepdims=True)                      # detached; cancels in logsumexp grad
    shifted = nm.sub(logits, nm.tensor(shift))
    lse = nm.log(nm.tsum(nm.exp(shifted), axis=1))                      # [A]
    picked = nm.take(shifted, np.arange(len(rows)), cols)               # [A]
    return nm.mean(nm.sub(lse, picked))


def diversity_loss(p_c: nm.Tensor, gate: DegenerateGate | None = None) -> nm.Tensor:
    """Mean squared pairwise cosine over latent common prototypes.

    Zero-norm rows get cosine 0 against everything (logged); the count
    in the denominator stays M*(M-1).
    """
    m = p_c.data.shape[0]
    if m < 2:
        raise nm.ShapeError("diversity_loss: needs at least two prototypes")
    norms = nm.sqrt(nm.tsum(nm.square(p_c), axis=1, keepdims=True))     # [M, 1]
    ok = (norms.data > 1e-12).astype(np.float64)
    n_bad = int(m - ok.sum())
    if n_bad:
        (gate or _div_gate).warn(n_bad)
    unit = nm.mul(nm.div(p_c, nm.max_with_scalar(norms, 1e-12)), nm.tensor(ok))
    gram = nm.matmul(unit, nm.transpose(unit))                          # [M, M] of cosines
    idx = np.arange(m)
    off_diag_sq = nm.sub(nm.tsum(nm.square(gram)),
                         nm.tsum(nm.square(nm.take(gram, idx, idx))))
    return nm.div_scalar(off_diag_sq, float(m * (m - 1)))


def total_loss(mse_term: nm.Tensor, sep_term, rare_term, div_term,
               cfg: DGLossConfig) -> nm.Tensor:
    """MSE plus weighted disentanglement terms. A zero weight (or a
    None term from an ablated path) adds nothing to the graph, so the
    all-zero case is bitwise the plain MSE objective."""
    total = mse_term
    for weight, term in ((cfg.sep_weight, sep_term),
                         (cfg.rare_weight, rare_term),
                         (cfg.div_weight, div_term)):
        if weight != 0.0 and term is not None:
            total = nm.add(total, nm.mul(nm.tensor(float(weight)), term))
    return total
