"""
SVG figures: interval calibration, reliability diagram and selective curves.
Files carry no timestamp and a fixed hash salt so reruns are byte-identical.
Figures are plain `matplotlib.figure.Figure` objects; pyplot state is never
touched, so worker threads can render concurrently.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "batchensemble-uq"


def _save(fig: Figure, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    logger.debug(f"Figure written to {path}")
    return path


def calibration_svg(
    levels: Sequence[float],
    curves: Dict[str, Sequence[float]],
    path: Union[str, Path],
    title: str = "Interval calibration",
) -> Path:
    """Empirical vs nominal coverage; the dashed diagonal is ideal calibration"""
    fig = Figure(figsize=(4.5, 4.5))
    ax = fig.subplots()
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=1)
    for label, values in curves.items():
        ax.plot(levels, values, marker="o", markersize=2.5, label=label)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("Nominal coverage")
    ax.set_ylabel("Empirical coverage")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def reliability_svg(table: pd.DataFrame, path: Union[str, Path], title: str = "Reliability") -> Path:
    """Per-bin accuracy bars from `metrics.reliability_table`"""
    fig = Figure(figsize=(4.5, 4.5))
    ax = fig.subplots()
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=1)
    filled = table[table["count"] > 0]
    width = float(table["upper"].iloc[0] - table["lower"].iloc[0])
    ax.bar(filled["lower"], filled["accuracy"], width=width, align="edge", edgecolor="black", alpha=0.7)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("Confidence")
    ax.set_ylabel("Accuracy")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def selective_svg(
    levels: Sequence[float],
    curves: Dict[str, Sequence[float]],
    path: Union[str, Path],
    metric_name: str,
    reference: Optional[float] = None,
) -> Path:
    """
    Metric against coverage per method; `reference` draws a dotted horizontal
    line (the lowest value reached by BatchEnsemble).
    """
    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    for label, values in curves.items():
        ax.plot(levels, values, marker="o", markersize=3, label=label)
    if reference is not None and np.isfinite(reference):
        ax.axhline(reference, linestyle=":", color="black", linewidth=1)
    ax.set_xlabel("Coverage")
    ax.set_ylabel(metric_name)
    ax.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)
