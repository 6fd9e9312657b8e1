"""Deterministic SVG figures for experiment bundles."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .calibration import linear_fit  # noqa: E402


@dataclass
class FigureSpec:
    name: str
    kind: str  # "fit", "hist" or "line"
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    reference: float | None = None


def _style():
    matplotlib.rcParams.update(
        {
            "svg.hashsalt": "ucprop",
            "svg.fonttype": "none",
            "path.simplify": False,
            "font.size": 9,
        }
    )


def render(spec: FigureSpec, path: Path) -> str | None:
    """Write one SVG; returns a note instead when the data cannot support the plot."""
    x = np.asarray(spec.x, dtype=float)
    y = np.asarray(spec.y, dtype=float)
    need = 1 if spec.kind == "hist" else 2
    n = y.size if spec.kind != "hist" else x.size
    if n < need:
        return f"{spec.name}: skipped, {n} point(s)"
    _style()
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    if spec.kind == "hist":
        ax.hist(x, bins=min(20, max(3, x.size // 3)), color="0.55", edgecolor="0.2")
        if spec.reference is not None:
            ax.axvline(spec.reference, color="C3", lw=1.2, label=f"calibrated {spec.reference:.4g}")
            ax.legend(frameon=False)
    elif spec.kind == "fit":
        ax.plot(x, y, "o", ms=4, color="C0")
        if x.size >= 2 and np.ptp(x) > 0:
            slope, intercept, r2 = linear_fit(x, y)
            xs = np.array([x.min(), x.max()])
            ax.plot(xs, slope * xs + intercept, "-", color="C3", lw=1.0, label=f"slope {slope:.4g}, R² {r2:.4f}")
            ax.legend(frameon=False)
    else:
        ax.plot(x, y, "-o", ms=3, color="C0")
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return None


def emit_plots(figures, out_dir: Path) -> tuple[list[str], list[str]]:
    """Render all figures; returns (written file names, skip notes)."""
    written, notes = [], []
    for spec in figures:
        note = render(spec, Path(out_dir) / f"{spec.name}.svg")
        if note:
            notes.append(note)
        else:
            written.append(f"{spec.name}.svg")
    return written, notes
