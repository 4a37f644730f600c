"""Figures for the CLI report path. Only the CLI imports this module."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, ax, path: Path) -> Path:
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("discount factor")
    ax.axhline(1.0, color="0.6", lw=0.8, ls=":")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def discount_path(gamma, gamma_opt, path) -> Path:
    """One run: the discount sequence against ``1 / rho(A - BK)^2`` of the current gain."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    it = np.arange(len(gamma))
    ax.plot(it, gamma, color="tab:orange", label="gamma")
    if gamma_opt is not None and np.isfinite(gamma_opt).any():
        ax.plot(it, gamma_opt, color="tab:blue", ls="--", label="1 / rho^2")
    return _finish(fig, ax, Path(path))


def discount_band(iteration, mean, std, opt_mean, opt_std, path) -> Path:
    """Across trials: mean with a one-standard-deviation band."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    lo = np.maximum(mean - std, mean * 1e-3)
    ax.plot(iteration, mean, color="tab:orange", label="gamma (mean)")
    ax.fill_between(iteration, lo, mean + std, color="tab:orange", alpha=0.25, lw=0)
    if opt_mean is not None and np.isfinite(opt_mean).any():
        lo = np.maximum(opt_mean - opt_std, opt_mean * 1e-3)
        ax.plot(iteration, opt_mean, color="tab:blue", ls="--", label="1 / rho^2 (mean)")
        ax.fill_between(iteration, lo, opt_mean + opt_std, color="tab:blue", alpha=0.2, lw=0)
    return _finish(fig, ax, Path(path))
