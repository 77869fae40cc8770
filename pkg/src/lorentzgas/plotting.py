"""Static figures for CLI reports.

Everything renders with the Agg backend and without timestamps in the file
metadata, so reruns produce identical PNGs.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import PatchCollection  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def _disks(ax, config, center, radius, **kw) -> None:
    _, cs, rs = config.materialize(center, radius)
    patches = [Circle((c[0], c[1]), r) for c, r in zip(cs, rs)]
    ax.add_collection(PatchCollection(patches, facecolor=kw.get("facecolor", "0.85"), edgecolor="0.3", lw=0.6))


def plot_trajectory(config, orbit, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 6))
    x, y = orbit.x, orbit.y
    cx, cy = float(np.mean(x)), float(np.mean(y))
    span = max(float(np.ptp(x)), float(np.ptp(y)), 4 * config.max_diameter) / 2 + config.max_diameter
    _disks(ax, config, (cx, cy), span * 1.5)
    ax.plot(x, y, "-", color="tab:blue", lw=0.7)
    ax.plot(x[:1], y[:1], "o", color="tab:red", ms=4)
    ax.set_xlim(cx - span, cx + span)
    ax.set_ylim(cy - span, cy + span)
    ax.set_aspect("equal")
    ax.set_title(f"trajectory, {orbit.steps} collisions")
    _save(fig, path)


def plot_curves(curves, length, path, title="singularity curves") -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for c in curves:
        color = "tab:blue" if c.kind == "+" else "tab:orange"
        r = c.r
        # break the polyline where it wraps around r = L
        cut = np.where(np.abs(np.diff(r)) > length / 2)[0] + 1
        for rr, pp in zip(np.split(r, cut), np.split(c.phi, cut)):
            ax.plot(rr, pp, "-", color=color, lw=0.8)
    ax.set_xlim(0, length)
    ax.set_ylim(0, math.pi)
    ax.set_xlabel("r")
    ax.set_ylabel("phi")
    ax.set_title(title)
    _save(fig, path)


def plot_series(x, ys: dict, path, xlabel="", ylabel="", title="", logx=False, hlines=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in ys.items():
        ax.plot(x, y, "o-", ms=3, lw=1, label=label)
    for label, v in (hlines or {}).items():
        ax.axhline(v, ls="--", color="0.4", lw=0.8, label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(ys) + len(hlines or {}) > 1:
        ax.legend(fontsize=8)
    _save(fig, path)


def plot_scene(config, path, radius=None, highlight=()) -> None:
    fig, ax = plt.subplots(figsize=(6, 6))
    radius = radius or 6 * config.max_diameter
    c = config.origin
    _disks(ax, config, c, radius * 1.2)
    for d in highlight:
        ax.add_patch(Circle(d.center, d.radius, facecolor="tab:orange", edgecolor="0.2", lw=0.6))
    ax.set_xlim(c[0] - radius, c[0] + radius)
    ax.set_ylim(c[1] - radius, c[1] + radius)
    ax.set_aspect("equal")
    _save(fig, path)
