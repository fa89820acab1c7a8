"""Distributional similarity and spatial validity of generated corpora.

All divergences are Jensen-Shannon with base-2 logarithms, so values live in
[0, 1] and disjoint supports score exactly 1. Distances are measured along
the road network from segment lengths and interpolation fractions; a
straight-line variant is available behind a flag.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .roadnet import METERS_PER_DEGREE, DEGREES_PER_METER, RoadNetwork, gps_of_rntraj, interpolation_fractions
from .trajsim import Corpus, RNTraj
from .utgraph import UTGraph


@dataclass
class Histogram:
    masses: np.ndarray
    structure: tuple  # ("edges", (...)) or ("categories", (...))

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=np.float64)
        if np.any(self.masses < 0):
            raise ValidationError("histogram masses must be non-negative")
        total = self.masses.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"histogram masses sum to {total}, expected 1")


def histogram_from_counts(counts: np.ndarray, structure: tuple) -> Histogram:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValidationError("cannot normalize an empty histogram")
    return Histogram(counts / total, structure)


def jsd(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence in bits; 0*log(0) treated as zero."""
    if p.structure != q.structure or p.masses.shape != q.masses.shape:
        raise ValidationError("histograms have mismatched binning")
    m = 0.5 * (p.masses + q.masses)

    def half_kl(a: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / m[mask])))

    return 0.5 * half_kl(p.masses) + 0.5 * half_kl(q.masses)


def _gap_distances(traj: RNTraj, net: RoadNetwork, straight_line: bool) -> np.ndarray:
    """Distance in meters between consecutive points of one trajectory."""
    if straight_line:
        coords = np.asarray(gps_of_rntraj(traj, net))
        deltas = np.diff(coords, axis=0)
        return np.hypot(deltas[:, 0], deltas[:, 1]) * METERS_PER_DEGREE
    fractions = interpolation_fractions(traj, net)
    segs = traj.segments
    gaps = np.empty(len(segs) - 1)
    for t in range(len(segs) - 1):
        len_a = net.segment(segs[t]).length_m
        if segs[t + 1] == segs[t]:
            gaps[t] = (fractions[t + 1] - fractions[t]) * len_a
        else:
            len_b = net.segment(segs[t + 1]).length_m
            gaps[t] = (1.0 - fractions[t]) * len_a + fractions[t + 1] * len_b
    return gaps


def _binned_pair(
    gen_values: np.ndarray, ref_values: np.ndarray, bins: int
) -> tuple[Histogram, Histogram]:
    """Histogram both value sets over shared equal-width bins (pooled range)."""
    lo = min(gen_values.min(), ref_values.min())
    hi = max(gen_values.max(), ref_values.max())
    if lo == hi:
        structure = ("edges", (lo, hi))
        return (Histogram(np.ones(1), structure), Histogram(np.ones(1), structure))
    edges = np.linspace(lo, hi, bins + 1)
    structure = ("edges", tuple(edges.tolist()))
    gen_counts, _ = np.histogram(gen_values, bins=edges)
    ref_counts, _ = np.histogram(ref_values, bins=edges)
    return (
        histogram_from_counts(gen_counts, structure),
        histogram_from_counts(ref_counts, structure),
    )


def _require_non_empty(gen: Corpus, ref: Corpus) -> None:
    if len(gen) == 0 or len(ref) == 0:
        raise ValidationError("metric inputs must be non-empty corpora")


def metric_td(
    gen: Corpus, ref: Corpus, net: RoadNetwork, bins: int = 100, straight_line: bool = False
) -> float:
    """JSD of per-trajectory total travel distance."""
    _require_non_empty(gen, ref)
    gen_td = np.array([_gap_distances(t, net, straight_line).sum() for t in gen])
    ref_td = np.array([_gap_distances(t, net, straight_line).sum() for t in ref])
    return jsd(*_binned_pair(gen_td, ref_td, bins))


def metric_sd(
    gen: Corpus, ref: Corpus, net: RoadNetwork, bins: int = 100, straight_line: bool = False
) -> float:
    """JSD of the distance between adjacent trajectory points."""
    _require_non_empty(gen, ref)
    gen_sd = np.concatenate([_gap_distances(t, net, straight_line) for t in gen])
    ref_sd = np.concatenate([_gap_distances(t, net, straight_line) for t in ref])
    return jsd(*_binned_pair(gen_sd, ref_sd, bins))


def _grid_cells(corpus: Corpus, net: RoadNetwork, origin: tuple[float, float], cell_deg: float):
    cells = []
    for traj in corpus:
        for lon, lat in gps_of_rntraj(traj, net):
            cells.append((int((lon - origin[0]) // cell_deg), int((lat - origin[1]) // cell_deg)))
    return cells


def metric_gpd(gen: Corpus, ref: Corpus, net: RoadNetwork, grid_m: float = 50.0) -> float:
    """JSD of point density over square grid cells of side grid_m meters."""
    _require_non_empty(gen, ref)
    if grid_m <= 0:
        raise ValidationError(f"grid size must be positive, got {grid_m}")
    cell_deg = grid_m * DEGREES_PER_METER
    all_coords = [
        c for corpus in (gen, ref) for traj in corpus for c in gps_of_rntraj(traj, net)
    ]
    origin = (min(c[0] for c in all_coords), min(c[1] for c in all_coords))
    gen_cells = _grid_cells(gen, net, origin, cell_deg)
    ref_cells = _grid_cells(ref, net, origin, cell_deg)
    categories = sorted(set(gen_cells) | set(ref_cells))
    index = {c: i for i, c in enumerate(categories)}
    structure = ("categories", tuple(categories))
    gen_counts = np.bincount([index[c] for c in gen_cells], minlength=len(categories))
    ref_counts = np.bincount([index[c] for c in ref_cells], minlength=len(categories))
    return jsd(
        histogram_from_counts(gen_counts, structure),
        histogram_from_counts(ref_counts, structure),
    )


def metric_rs(gen: Corpus, ref: Corpus) -> float:
    """JSD of segment usage over all trajectory points."""
    _require_non_empty(gen, ref)
    gen_segs = [p.segment for t in gen for p in t]
    ref_segs = [p.segment for t in ref for p in t]
    categories = sorted(set(gen_segs) | set(ref_segs))
    index = {s: i for i, s in enumerate(categories)}
    structure = ("categories", tuple(categories))
    gen_counts = np.bincount([index[s] for s in gen_segs], minlength=len(categories))
    ref_counts = np.bincount([index[s] for s in ref_segs], minlength=len(categories))
    return jsd(
        histogram_from_counts(gen_counts, structure),
        histogram_from_counts(ref_counts, structure),
    )


def rsc(traj: RNTraj, g: UTGraph) -> float:
    """Percentage of adjacent point pairs whose segments are connected."""
    if len(traj) < 2:
        raise ValidationError("RSC needs at least 2 points")
    segs = traj.segments
    connected = sum(1 for a, b in zip(segs, segs[1:]) if g.connected(a, b))
    return 100.0 * connected / (len(segs) - 1)


def corpus_rsc(corpus: Corpus, g: UTGraph) -> float:
    """Mean per-trajectory RSC over a corpus."""
    if len(corpus) == 0:
        raise ValidationError("RSC of an empty corpus is undefined")
    return float(np.mean([rsc(t, g) for t in corpus]))


@dataclass
class MetricReport:
    jsd_td: float
    jsd_sd: float
    jsd_gpd: float
    jsd_rs: float
    rsc: float

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("jsd_td", self.jsd_td),
            ("jsd_sd", self.jsd_sd),
            ("jsd_gpd", self.jsd_gpd),
            ("jsd_rs", self.jsd_rs),
            ("rsc", self.rsc),
        ]


def evaluate_corpora(
    gen: Corpus,
    ref: Corpus,
    net: RoadNetwork,
    g: UTGraph | None = None,
    grid_m: float = 50.0,
    bins: int = 100,
    straight_line: bool = False,
) -> MetricReport:
    """All five corpus metrics; the connectivity graph defaults to the
    reference corpus's own traversal graph."""
    from .utgraph import build_utgraph

    if g is None:
        g = build_utgraph(ref)
    return MetricReport(
        jsd_td=metric_td(gen, ref, net, bins, straight_line),
        jsd_sd=metric_sd(gen, ref, net, bins, straight_line),
        jsd_gpd=metric_gpd(gen, ref, net, grid_m),
        jsd_rs=metric_rs(gen, ref),
        rsc=corpus_rsc(gen, g),
    )


def save_report(report: MetricReport, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("metric,value\n")
        for name, value in report.rows():
            f.write(f"{name},{value:.6f}\n")


def write_gpd_heatmap(corpus: Corpus, net: RoadNetwork, grid_m: float, path: str | os.PathLike) -> None:
    """Plot-ready CSV grid of cell masses (rows south to north)."""
    if len(corpus) == 0:
        raise ValidationError("cannot rasterize an empty corpus")
    cell_deg = grid_m * DEGREES_PER_METER
    coords = [c for traj in corpus for c in gps_of_rntraj(traj, net)]
    origin = (min(c[0] for c in coords), min(c[1] for c in coords))
    cells = _grid_cells(corpus, net, origin, cell_deg)
    n_x = max(c[0] for c in cells) + 1
    n_y = max(c[1] for c in cells) + 1
    grid = np.zeros((n_y, n_x))
    for cx, cy in cells:
        grid[cy, cx] += 1.0
    grid /= grid.sum()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in grid:
            f.write(",".join(f"{v:.9f}" for v in row) + "\n")
