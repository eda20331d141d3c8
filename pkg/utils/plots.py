"""
SVG figures.

Panels follow one style: mean line with STD shading, grouped bars with error
bars and individual-network dots, or scatters with optional least-squares
lines. SVG ids are salted with a fixed string and no date is embedded, so the
same data always gives the same bytes.
"""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

SVG_SALT = "taulab"

Series = Tuple[Sequence[float], Sequence[float], Sequence[float]]


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug(f"Figure written: {path}")
    return path


def mean_std_lines(
    series: Mapping[str, Series],
    path: Union[str, Path],
    xlabel: str,
    ylabel: str,
    title: str = "",
    logy: bool = False,
) -> Path:
    """One line per label: x, mean and STD (shaded band)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (x, mean, std) in series.items():
        x, mean, std = (np.asarray(v, dtype=float) for v in (x, mean, std))
        ax.plot(x, mean, marker="o", markersize=3, label=label)
        ax.fill_between(x, mean - std, mean + std, alpha=0.25)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def grouped_bars(
    categories: Sequence[str],
    groups: Mapping[str, Tuple[Sequence[float], Sequence[float]]],
    path: Union[str, Path],
    ylabel: str,
    points: Optional[Mapping[str, Sequence[Sequence[float]]]] = None,
    title: str = "",
) -> Path:
    """
    Bars of group means with STD error bars per category.

    Args:
        groups: label -> (means per category, stds per category)
        points: label -> per category, the individual values drawn as dots
    """
    fig, ax = plt.subplots(figsize=(5, 3.5))
    width = 0.8 / max(len(groups), 1)
    positions = np.arange(len(categories))
    for slot, (label, (means, stds)) in enumerate(groups.items()):
        offset = positions + (slot - (len(groups) - 1) / 2) * width
        ax.bar(offset, means, width, yerr=stds, capsize=3, label=label)
        if points and label in points:
            for x, values in zip(offset, points[label]):
                ax.scatter(np.full(len(values), x), values, s=8, color="black", zorder=3)
    ax.set_xticks(positions)
    ax.set_xticklabels(categories)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def scatter_groups(
    groups: Mapping[str, Tuple[Sequence[float], Sequence[float]]],
    path: Union[str, Path],
    xlabel: str,
    ylabel: str,
    fit_up_to: Optional[float] = None,
    title: str = "",
) -> Path:
    """Scatter per label; with fit_up_to, adds a least-squares line over x <= fit_up_to."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (x, y) in groups.items():
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        (dots,) = ax.plot(x, y, "o", markersize=3, alpha=0.7, label=label)
        if fit_up_to is not None:
            keep = x <= fit_up_to
            if np.unique(x[keep]).size >= 2:
                slope, intercept = np.polyfit(x[keep], y[keep], 1)
                grid = np.linspace(x[keep].min(), x[keep].max(), 20)
                ax.plot(grid, slope * grid + intercept, color=dots.get_color())
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def histogram(values: Dict[str, Sequence[float]], path: Union[str, Path], xlabel: str, bins: int = 30) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, data in values.items():
        ax.hist(np.asarray(data, dtype=float), bins=bins, alpha=0.6, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("neurons")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)
