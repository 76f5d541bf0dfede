"""Figure rendering for the report paths.

Every figure sits next to the delimited file it visualizes (history
curves by history.csv, comparison bars by comparison.json, prototype
shapes by prototypes.csv, series previews by the data CSV). Rendering
is best-effort presentation; the delimited files are the interface.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["render_history", "render_comparison", "render_prototypes",
           "render_series"]

_DPI = 140


def render_history(history: list, path) -> None:
    epochs = [row["epoch"] for row in history]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    axes[0].plot(epochs, [row["train_mse"] for row in history], label="train MSE")
    axes[0].plot(epochs, [row["val_mse"] for row in history], label="val MSE")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("MSE")
    axes[0].legend()
    for key in ("sep", "rare", "div"):
        axes[1].plot(epochs, [row[key] for row in history], label=key)
    axes[1].plot(epochs, [row["rare_activation_rate"] for row in history],
                 label="rare act. rate", linestyle="--")
    axes[1].set_xlabel("epoch")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_comparison(report: dict, path) -> None:
    variants = list(report["variants"].keys())
    x = np.arange(len(variants))
    mses = [report["variants"][v]["test_mse_mean"] for v in variants]
    errs = [report["variants"][v]["test_mse_std"] for v in variants]
    maes = [report["variants"][v]["test_mae_mean"] for v in variants]

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].bar(x, mses, yerr=errs, capsize=4, color="#4878cf")
    axes[0].set_xticks(x, variants, rotation=20)
    axes[0].set_ylabel("test MSE (mean over seeds)")
    axes[1].bar(x, maes, color="#6acc65")
    axes[1].set_xticks(x, variants, rotation=20)
    axes[1].set_ylabel("test MAE (mean over seeds)")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_prototypes(common: np.ndarray, rare: np.ndarray, path,
                      max_common: int = 12) -> None:
    n_common = min(common.shape[0], max_common)
    n_rare = rare.shape[0] if rare is not None else 0
    cols = 4
    rows_c = int(np.ceil(n_common / cols)) if n_common else 0
    rows_r = int(np.ceil(n_rare / cols)) if n_rare else 0
    rows = max(rows_c + rows_r, 1)
    fig, axes = plt.subplots(rows, cols, figsize=(11, 2.0 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for i in range(n_common):
        ax = axes[i // cols][i % cols]
        ax.axis("on")
        ax.plot(common[i], color="#4878cf", linewidth=1.0)
        ax.set_title(f"common {i}", fontsize=8)
        ax.tick_params(labelsize=6)
    for j in range(n_rare):
        ax = axes[rows_c + j // cols][j % cols]
        ax.axis("on")
        ax.plot(rare[j], color="#d65f5f", linewidth=1.0)
        ax.set_title(f"rare {j}", fontsize=8)
        ax.tick_params(labelsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_series(values: np.ndarray, events: list, path,
                  max_steps: int = 2000) -> None:
    steps = min(values.shape[0], max_steps)
    channels = values.shape[1]
    fig, axes = plt.subplots(channels, 1, figsize=(10, 1.8 * channels),
                             sharex=True, squeeze=False)
    for c in range(channels):
        ax = axes[c][0]
        ax.plot(np.arange(steps), values[:steps, c], linewidth=0.7)
        ax.set_ylabel(f"ch{c}", fontsize=8)
        for ev in events:
            if ev["channel"] == c and ev["start"] < steps:
                ax.axvspan(ev["start"], min(ev["start"] + ev["duration"], steps),
                           color="#d65f5f", alpha=0.3)
    axes[-1][0].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
