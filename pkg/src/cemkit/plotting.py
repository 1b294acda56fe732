"""Figures for benchmark reports, rendered off-screen with matplotlib."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

MARKERS = {"ad": "o", "fd": "s"}


def _series(report, value):
    out = {}
    for row in report.rows:
        if row.error:
            continue
        out.setdefault((row.family, row.grad_mode), []).append((row.param_count, value(row)))
    return {k: sorted(v) for k, v in sorted(out.items())}


def _figure(report, value, ylabel, title, path, hline=None):
    fig, ax = plt.subplots(figsize=(5.0, 3.6), dpi=120)
    for (family, mode), points in _series(report, value).items():
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker=MARKERS.get(mode, "^"), label=f"{family} {mode.upper()}")
    if hline is not None:
        ax.axhline(hline, color="grey", linestyle=":", linewidth=1.0, label="threshold")
    ax.set_xlabel("optimization parameters")
    ax.set_ylabel(ylabel)
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize="small")
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def report_figures(report, csv_path, epsilon=None):
    """Write wall-time and final-objective plots next to ``csv_path``.

    Returns the written paths: ``<stem>-time.png`` and ``<stem>-objective.png``.
    """
    csv_path = Path(csv_path)
    stem = csv_path.with_suffix("")
    time_path = _figure(report, lambda r: max(r.wall_time, 1e-6), "wall time [s]",
                        "Solve time", f"{stem}-time.png")
    # exact zeros would vanish from a log axis
    obj_path = _figure(report, lambda r: max(r.L_final, 1e-300), "final objective L",
                       "Final objective", f"{stem}-objective.png", hline=epsilon)
    return [time_path, obj_path]
