"""Minkowski functionals of binary masks and mean/std aggregation.

The chosen phase is treated as a union of closed unit squares (8-connected
foreground).  Area density is the pixel fraction; perimeter density counts
unit edges between the two phases (image-frame edges excluded, keeping the
measure intensive); the Euler characteristic density is (V - E + F) / S over
the cubical complex: distinct vertices, distinct edges, and squares of the
phase.  V - E + F equals the number of 8-connected components minus the
number of enclosed 4-connected holes.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySet, MetricMismatch
from .images import BinaryMask

PHASE_SOLID = "solid"
PHASE_PORE = "pore"


@dataclass(frozen=True)
class MinkowskiTriple:
    area_density: float       # dimensionless fraction in [0, 1]
    perimeter_density: float  # 1/pixel
    euler_density: float      # 1/pixel^2

    def __post_init__(self):
        if not 0.0 <= self.area_density <= 1.0:
            raise ValueError(f"area density {self.area_density} outside [0, 1]")

    def as_dict(self):
        return {
            "area": self.area_density,
            "perimeter": self.perimeter_density,
            "euler": self.euler_density,
        }


def _phase_pixels(mask: BinaryMask, phase: str) -> np.ndarray:
    if phase == PHASE_SOLID:
        return mask.data
    if phase == PHASE_PORE:
        return ~mask.data
    raise ValueError(f"phase must be 'solid' or 'pore', got {phase!r}")


def minkowski_counts(mask: BinaryMask, phase: str = PHASE_SOLID):
    """Integer numerators: (pixel count, phase-boundary edge count,
    V - E + F of the cubical complex)."""
    cells = _phase_pixels(mask, phase)
    f = int(cells.sum())

    # boundary edges between the phase and its complement, interior only
    horiz = int((cells[:-1, :] != cells[1:, :]).sum())
    vert = int((cells[:, :-1] != cells[:, 1:]).sum())
    perimeter = horiz + vert

    padded = np.zeros((cells.shape[0] + 2, cells.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = cells
    # horizontal edges exist where the pixel above or below is present
    e_h = int((padded[:-1, 1:-1] | padded[1:, 1:-1]).sum())
    # vertical edges likewise
    e_v = int((padded[1:-1, :-1] | padded[1:-1, 1:]).sum())
    # a vertex exists where any of its four incident pixels is present
    corners = padded[:-1, :-1] | padded[:-1, 1:] | padded[1:, :-1] | padded[1:, 1:]
    v = int(corners.sum())

    chi = v - (e_h + e_v) + f
    return f, perimeter, chi


def minkowski(mask: BinaryMask, phase: str = PHASE_SOLID) -> MinkowskiTriple:
    """Area, perimeter, and Euler-characteristic densities of one phase."""
    f, perimeter, chi = minkowski_counts(mask, phase)
    s = float(mask.data.size)
    return MinkowskiTriple(f / s, perimeter / s, chi / s)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


@dataclass
class MetricStats:
    mean: float
    std: float
    count: int
    values: np.ndarray

    def as_dict(self):
        return {"mean": self.mean, "std": self.std, "n": self.count}


@dataclass
class SampleStats:
    """Per-metric mean and standard deviation over a sample collection."""

    metrics: dict = field(default_factory=dict)

    def names(self):
        return list(self.metrics)

    def __getitem__(self, name) -> MetricStats:
        return self.metrics[name]

    def as_dict(self):
        return {name: st.as_dict() for name, st in self.metrics.items()}


def aggregate(samples, ddof: int = 0) -> SampleStats:
    """Mean and standard deviation per metric (population convention unless
    `ddof` says otherwise).

    `samples` is a list of MinkowskiTriple, a list of dicts with identical
    keys, or a plain list of numbers (metric name "value").
    """
    samples = list(samples)
    if not samples:
        raise EmptySet("cannot aggregate zero samples")
    if isinstance(samples[0], MinkowskiTriple):
        table = {name: [s.as_dict()[name] for s in samples] for name in ("area", "perimeter", "euler")}
    elif isinstance(samples[0], dict):
        keys = list(samples[0])
        table = {k: [s[k] for s in samples] for k in keys}
    else:
        table = {"value": [float(s) for s in samples]}
    stats = SampleStats()
    for name, values in table.items():
        arr = np.asarray(values, dtype=np.float64)
        std = float(arr.std(ddof=ddof)) if arr.size > ddof else 0.0
        stats.metrics[name] = MetricStats(float(arr.mean()), std, int(arr.size), arr)
    return stats


# ---------------------------------------------------------------------------
# comparison report
# ---------------------------------------------------------------------------


@dataclass
class CompareReport:
    metrics: dict                    # name -> {real, generated, delta, delta_rel}
    histograms: dict                 # name -> list of (left, right, n_real, n_gen)

    def as_dict(self):
        return {"metrics": self.metrics, "histograms": self.histograms}

    def write_json(self, path):
        tmp = os.fspath(path) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)

    def write_csv(self, path):
        tmp = os.fspath(path) + ".tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["metric", "real_mean", "real_std", "real_n",
                 "generated_mean", "generated_std", "generated_n", "delta", "delta_rel"]
            )
            for name, entry in self.metrics.items():
                writer.writerow([
                    name,
                    f"{entry['real']['mean']:.6e}", f"{entry['real']['std']:.6e}", entry["real"]["n"],
                    f"{entry['generated']['mean']:.6e}", f"{entry['generated']['std']:.6e}",
                    entry["generated"]["n"],
                    f"{entry['delta']:.6e}", f"{entry['delta_rel']:.6e}",
                ])
        os.replace(tmp, path)

    def write_histograms_csv(self, path):
        tmp = os.fspath(path) + ".tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "bin_left", "bin_right", "count_real", "count_generated"])
            for name, rows in self.histograms.items():
                for left, right, n_real, n_gen in rows:
                    writer.writerow([name, f"{left:.6e}", f"{right:.6e}", n_real, n_gen])
        os.replace(tmp, path)


def compare_report(real: SampleStats, generated: SampleStats, bins: int = 20) -> CompareReport:
    """Side-by-side means/stds with deltas and pooled-range histograms."""
    if set(real.names()) != set(generated.names()):
        raise MetricMismatch(f"metric sets differ: {real.names()} vs {generated.names()}")
    metrics = {}
    histograms = {}
    for name in real.names():
        r, g = real[name], generated[name]
        delta = g.mean - r.mean
        metrics[name] = {
            "real": r.as_dict(),
            "generated": g.as_dict(),
            "delta": delta,
            "delta_rel": delta / r.mean if r.mean != 0 else float("inf") if delta else 0.0,
        }
        pooled = np.concatenate([r.values, g.values])
        lo, hi = float(pooled.min()), float(pooled.max())
        if lo == hi:
            hi = lo + 1e-12
        edges = np.linspace(lo, hi, bins + 1)
        n_real, _ = np.histogram(r.values, bins=edges)
        n_gen, _ = np.histogram(g.values, bins=edges)
        histograms[name] = [
            (float(edges[i]), float(edges[i + 1]), int(n_real[i]), int(n_gen[i]))
            for i in range(bins)
        ]
    return CompareReport(metrics, histograms)


def write_samples_csv(rows, path):
    """One row per sample: id plus each metric value."""
    rows = list(rows)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if rows and isinstance(rows[0][1], MinkowskiTriple):
            writer.writerow(["id", "area", "perimeter", "euler"])
            for ident, triple in rows:
                d = triple.as_dict()
                writer.writerow([ident, f"{d['area']:.6e}", f"{d['perimeter']:.6e}", f"{d['euler']:.6e}"])
        else:
            writer.writerow(["id", "value"])
            for ident, value in rows:
                writer.writerow([ident, f"{value:.6e}"])
    os.replace(tmp, path)
