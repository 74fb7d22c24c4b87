"""Figures written next to metric reports and training histories."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (4.5, 3.0),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_history(history, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(range(len(history)), history, lw=1.2, color="C0")
        ax.set_xlabel("step")
        ax.set_ylabel("total loss")
        ax.set_yscale("log")
        return _save(fig, path)


def plot_report(report: dict, out_dir: str) -> list:
    """Recall-vs-threshold and AP-vs-threshold curves, whichever the report holds."""
    paths = []
    with plt.rc_context(STYLE):
        curves = [(k, report[k]) for k in ("R@IoU", "R@IoP") if k in report]
        if curves:
            fig, ax = plt.subplots()
            for name, vals in curves:
                xs = sorted(vals, key=float)
                ax.plot([float(x) for x in xs], [vals[x] for x in xs], marker="o", label=name)
            ax.set_xlabel("threshold")
            ax.set_ylabel("recall (top-1)")
            ax.set_ylim(0, 1.02)
            ax.legend(frameon=False)
            paths.append(_save(fig, os.path.join(out_dir, "recall_curve.png")))
        if "mAP" in report:
            per = report["mAP"]["per_threshold"]
            xs = sorted(per, key=float)
            fig, ax = plt.subplots()
            ax.bar(range(len(xs)), [per[x] for x in xs], color="C2")
            ax.set_xticks(range(len(xs)), xs, rotation=45)
            ax.set_xlabel("IoU threshold")
            ax.set_ylabel("AP")
            ax.set_ylim(0, 1.02)
            ax.set_title(f"mAP = {report['mAP']['average']:.3f}")
            paths.append(_save(fig, os.path.join(out_dir, "ap_by_threshold.png")))
    return paths
