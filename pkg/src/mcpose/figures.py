"""Static matplotlib renderings of evaluation and benchmark output.

Each save function writes one PNG next to the delimited data it
illustrates. The Agg backend keeps rendering headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be set first
import numpy as np  # noqa: E402

from .metrics import EvalReport  # noqa: E402

__all__ = ["save_eval_figure", "save_bench_figure"]


def save_eval_figure(report: EvalReport, path) -> None:
    """Per-mesh success bars beside the per-run error scatter."""
    rates = report.per_mesh_rates()
    names = list(rates)
    fig, (ax_bar, ax_err) = plt.subplots(1, 2, figsize=(11, 4.2))

    xs = np.arange(len(names))
    ax_bar.bar(xs, [rates[n] for n in names], color="#4878a8")
    ax_bar.axhline(report.success_rate, color="#333333", linestyle="--",
                   linewidth=1, label=f"overall {report.success_rate:.0%}")
    ax_bar.set_xticks(xs, names, rotation=20)
    ax_bar.set_ylim(0, 1.05)
    ax_bar.set_ylabel(f"success rate (err < {report.threshold_m * 100:.0f} cm)")
    ax_bar.set_title("Success by mesh")
    ax_bar.legend(loc="lower left")

    for i, name in enumerate(names):
        errs = np.array([r.error_m for r in report.records if r.mesh == name])
        jitter = (np.arange(errs.size) - errs.size / 2) * 0.02
        good = errs < report.threshold_m
        ax_err.scatter(np.full(errs.size, i)[good] + jitter[good],
                       errs[good] * 100, s=14, color="#3a8f5f")
        ax_err.scatter(np.full(errs.size, i)[~good] + jitter[~good],
                       errs[~good] * 100, s=14, color="#b34a4a")
    ax_err.axhline(report.threshold_m * 100, color="#333333",
                   linestyle="--", linewidth=1)
    ax_err.set_xticks(xs, names, rotation=20)
    ax_err.set_ylabel("pose error (cm)")
    ax_err.set_title("Per-run error")

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_bench_figure(rows: list[dict], path) -> None:
    """Iteration timing beside depth-read traffic with and without sharing."""
    its = [r["iteration"] for r in rows]
    fig, (ax_t, ax_r) = plt.subplots(1, 2, figsize=(11, 4.2))

    ax_t.plot(its, [r["wall_time_s"] * 1000 for r in rows],
              marker="o", markersize=3, color="#4878a8")
    ax_t.set_xlabel("iteration")
    ax_t.set_ylabel("wall time (ms)")
    ax_t.set_title("Per-iteration runtime")

    ax_r.plot(its, [r["depth_reads_naive"] for r in rows],
              label="independent reads", color="#b34a4a")
    ax_r.plot(its, [r["depth_reads_shared"] for r in rows],
              label="shared reads", color="#3a8f5f")
    ax_r.set_xlabel("iteration")
    ax_r.set_ylabel("depth pixels read")
    ax_r.set_title("Overlap sharing")
    ax_r.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
