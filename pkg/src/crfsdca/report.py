"""Figure rendering for training telemetry and gap diagnostics.

Everything here consumes the delimited outputs (metrics CSV, gap tables) and
writes static image files next to them; the CSVs remain the machine-readable
contract.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsRecord


def _full_rows(records: list[MetricsRecord]):
    return [r for r in records if r.primal is not None and r.dual is not None]


def render_convergence(records: list[MetricsRecord], path: str,
                       reference_primal: float | None = None) -> str:
    """Primal/dual trajectories and gap curves against parameter updates.

    The primal sub-optimality panel uses ``reference_primal`` when given and
    otherwise the best dual value seen, which lower-bounds the optimum.
    """
    full = _full_rows(records)
    if not full:
        raise ValueError("no full-evaluation rows to plot")
    updates = np.array([r.update_count for r in full])
    primal = np.array([r.primal for r in full])
    dual = np.array([r.dual for r in full])
    ref = reference_primal if reference_primal is not None else float(dual.max())

    fig, (ax_obj, ax_gap) = plt.subplots(1, 2, figsize=(11, 4))
    ax_obj.plot(updates, primal, marker="o", label="primal")
    ax_obj.plot(updates, dual, marker="s", label="dual")
    ax_obj.set_xlabel("parameter updates")
    ax_obj.set_ylabel("objective")
    ax_obj.legend()
    ax_obj.set_title("objectives")

    sub = np.maximum(primal - ref, 1e-16)
    ax_gap.plot(updates, np.log10(sub), marker="o", label="log10 primal sub-optimality")
    est_updates = np.array([r.update_count for r in records])
    est = np.maximum(np.array([r.gap_estimate for r in records]), 1e-16)
    ax_gap.plot(est_updates, np.log10(est), linestyle="--", label="log10 gap estimate")
    true_rows = [r for r in records if r.true_gap is not None]
    if true_rows:
        tg_updates = np.array([r.update_count for r in true_rows])
        tg = np.maximum(np.array([r.true_gap for r in true_rows]), 1e-16)
        ax_gap.plot(tg_updates, np.log10(tg), marker="x", label="log10 true gap")
    ax_gap.set_xlabel("parameter updates")
    ax_gap.legend()
    ax_gap.set_title("suboptimality and gaps")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_test_error(records: list[MetricsRecord], path: str) -> str:
    rows = [r for r in records if r.test_error is not None]
    if not rows:
        raise ValueError("no test-error rows to plot")
    epochs = np.array([r.epoch_equivalent for r in rows])
    err = np.array([r.test_error for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, err, marker="o")
    ax.set_xlabel("epochs")
    ax.set_ylabel("token error rate")
    ax.set_title("held-out error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_gap_report(stored: np.ndarray, true: np.ndarray, chi: float, path: str) -> str:
    """Stored gap estimates against fresh true gaps, block by block."""
    fig, (ax_scatter, ax_ratio) = plt.subplots(1, 2, figsize=(11, 4))
    floor = 1e-16
    ax_scatter.loglog(np.maximum(true, floor), np.maximum(stored, floor), ".", alpha=0.6)
    lo = max(float(min(true.min(initial=1.0), stored.min(initial=1.0))), floor)
    hi = max(float(max(true.max(initial=1.0), stored.max(initial=1.0))), floor * 10)
    ax_scatter.plot([lo, hi], [lo, hi], "k--", linewidth=0.8)
    ax_scatter.set_xlabel("true block gap")
    ax_scatter.set_ylabel("stored estimate")
    ax_scatter.set_title("estimate vs truth")

    ratio = stored / np.maximum(true, floor)
    ax_ratio.hist(np.log10(np.maximum(ratio, floor)), bins=40)
    ax_ratio.axvline(0.0, color="k", linewidth=0.8)
    ax_ratio.set_xlabel("log10(estimate / true)")
    ax_ratio.set_title(f"ratio histogram (nonuniformity {chi:.3f})" if math.isfinite(chi)
                       else "ratio histogram")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
