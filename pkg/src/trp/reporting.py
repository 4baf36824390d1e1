"""Report rendering: metrics JSON, learning-curve CSV, and matplotlib
figures written next to the delimited output."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .training import MetricsReport, TrainHistory

_CURVE_METRICS = ("f1_s", "f1_m", "f1_p", "lrap")


def write_metrics_json(path, report: MetricsReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1))


def write_curves_csv(path, reports: list[MetricsReport]) -> None:
    """One row per (window, estimator, metric)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "estimator", "metric", "value"])
        for report in reports:
            for metric in _CURVE_METRICS:
                writer.writerow([report.window, report.estimator.upper(),
                                 metric, f"{getattr(report, metric):.10g}"])


def _save(fig, path) -> None:
    # Strip variable metadata so replayed runs stay byte-comparable.
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def render_history_figure(path, history: TrainHistory) -> None:
    """Training risk and prior-estimate trajectories per epoch."""
    fig, (ax_loss, ax_pi) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = range(1, len(history.risk) + 1)
    ax_loss.plot(epochs, history.risk, marker="o")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("classification risk")
    ax_pi.plot(range(1, len(history.pi_hat) + 1), history.pi_hat, marker="o",
               color="tab:orange")
    ax_pi.set_xlabel("epoch")
    ax_pi.set_ylabel(r"estimated positive prior")
    ax_pi.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    _save(fig, path)


def render_curves_figure(path, reports: list[MetricsReport]) -> None:
    """Learning-curve figure across evaluation windows."""
    fig, ax = plt.subplots(figsize=(6, 4))
    windows = [r.window for r in reports]
    for metric in _CURVE_METRICS:
        ax.plot(windows, [getattr(r, metric) for r in reports],
                marker="o", label=metric.replace("_", "-").upper())
    ax.set_xlabel("evaluation window")
    ax.set_ylabel("metric value")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_metrics_figure(path, report: MetricsReport) -> None:
    """Bar chart of the four headline metrics for a single evaluation."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    values = [getattr(report, m) for m in _CURVE_METRICS]
    ax.bar([m.replace("_", "-").upper() for m in _CURVE_METRICS], values,
           color="tab:blue")
    ax.set_ylabel("value")
    ax.set_title(f"window {report.window}, {report.estimator.upper()}")
    fig.tight_layout()
    _save(fig, path)
