"""Ground-truth trajectory corpora: on-network simulation and ratio encoding.

A simulated vehicle drives shortest-path legs between random intersections,
is sampled at a fixed time interval with jittered speed, and the resulting
(segment, offset) trace is encoded into moving ratios: the share of newly
traveled distance over the remaining untraveled length of the segment.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import networkx as nx
import numpy as np

from .errors import ParseError, RoutingError, ValidationError
from .roadnet import RoadNetwork

log = logging.getLogger(__name__)

CORPUS_MAGIC = "#rntraj v1"

# Corpus ratios live on a 6-decimal grid at single precision. Single precision
# makes the 2r-1 channel scaling exactly invertible in double arithmetic, and
# 6 decimals round-trip losslessly through the corpus file format.
def quantize_ratio(r: float) -> float:
    return float(np.float32(round(r, 6)))


@dataclass(frozen=True)
class RNTrajPoint:
    segment: int
    ratio: float


@dataclass
class RNTraj:
    points: list[RNTrajPoint]

    def __post_init__(self):
        for p in self.points:
            if not 0.0 <= p.ratio <= 1.0:
                raise ValidationError(f"moving ratio {p.ratio} outside [0, 1]")

    def __iter__(self) -> Iterator[RNTrajPoint]:
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def segments(self) -> list[int]:
        return [p.segment for p in self.points]

    @property
    def ratios(self) -> list[float]:
        return [p.ratio for p in self.points]


@dataclass
class Corpus:
    network_name: str
    trajectories: list[RNTraj] = field(default_factory=list)

    def __iter__(self) -> Iterator[RNTraj]:
        return iter(self.trajectories)

    def __len__(self) -> int:
        return len(self.trajectories)

    def length_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for traj in self.trajectories:
            counts[len(traj)] = counts.get(len(traj), 0) + 1
        return dict(sorted(counts.items()))

    def segment_universe(self) -> set[int]:
        return {p.segment for traj in self.trajectories for p in traj}


@dataclass
class PathTrace:
    """Fixed-interval samples of (segment id, offset in meters from its start)."""

    samples: list[tuple[int, float]]


def encode_moving_ratios(trace: PathTrace, net: RoadNetwork) -> RNTraj:
    """Moving ratios from a trace: offset/length on segment entry, else the
    newly traveled share of the remaining length."""
    points = []
    prev_seg = None
    prev_off = 0.0
    clamped = 0
    for seg_id, off in trace.samples:
        seg = net.segment(seg_id)
        if not 0.0 <= off <= seg.length_m:
            raise ValidationError(f"offset {off} outside segment {seg_id} of length {seg.length_m}")
        if prev_seg is None or seg_id != prev_seg:
            if prev_seg is not None and net.segment(prev_seg).end != seg.start:
                raise ValidationError(
                    f"trace hops from segment {prev_seg} to non-adjacent segment {seg_id}"
                )
            r = off / seg.length_m
        else:
            if off < prev_off:
                raise ValidationError(f"offset decreases on segment {seg_id}")
            denom = seg.length_m - prev_off
            if denom <= 0.0:
                # previous sample sat exactly at the segment end: the ratio is
                # undefined, so clamp to 1 (the point stays at the end)
                r = 1.0
                clamped += 1
            else:
                r = (off - prev_off) / denom
        points.append(RNTrajPoint(seg_id, min(max(r, 0.0), 1.0)))
        prev_seg, prev_off = seg_id, off
    if clamped:
        log.warning("encode_moving_ratios: clamped %d zero-denominator ratios", clamped)
    return RNTraj(points)


def _routing_graph(net: RoadNetwork) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(net.intersections)
    for seg in net.segments.values():
        prev = g.get_edge_data(seg.start, seg.end)
        # parallel segments: keep the shortest (ties to lowest id)
        if prev is None or (seg.length_m, seg.id) < (prev["weight"], prev["segment"]):
            g.add_edge(seg.start, seg.end, weight=seg.length_m, segment=seg.id)
    return g


def _route_segments(g: nx.DiGraph, origin: int, dest: int) -> list[int] | None:
    try:
        nodes = nx.shortest_path(g, origin, dest, weight="weight")
    except nx.NetworkXNoPath:
        return None
    return [g[u][v]["segment"] for u, v in zip(nodes, nodes[1:])]


def simulate_trace(
    net: RoadNetwork,
    length: int,
    speed_model: tuple[float, float],
    rng: np.random.Generator,
    interval_s: float = 5.0,
    graph: nx.DiGraph | None = None,
    max_retries: int = 100,
    node_cum_weights: np.ndarray | None = None,
) -> PathTrace:
    """One fixed-interval trace along shortest-path legs of the network.

    node_cum_weights, when given, is a cumulative probability vector over the
    sorted intersection ids used to draw trip endpoints (demand hotspots).
    """
    mean, jitter = speed_model
    if graph is None:
        graph = _routing_graph(net)
    min_len = min(seg.length_m for seg in net.segments.values())
    if (mean + jitter) * interval_s > min_len:
        raise ValidationError(
            "speed/interval allows more than one segment boundary per sample: "
            f"max step {(mean + jitter) * interval_s} m > shortest segment {min_len} m"
        )

    speeds = rng.uniform(mean - jitter, mean + jitter, size=length - 1)
    if np.any(speeds <= 0):
        raise ValidationError("speed model admits non-positive speeds")
    first_offset_frac = rng.uniform(0.0, 1.0)
    needed = float(first_offset_frac * speeds[0] + np.sum(speeds)) * interval_s

    nodes = sorted(net.intersections)

    def pick_node() -> int:
        if node_cum_weights is None:
            return int(nodes[rng.integers(len(nodes))])
        return int(nodes[np.searchsorted(node_cum_weights, rng.random(), side="right")])

    for _ in range(max_retries):
        origin = pick_node()
        route: list[int] = []
        total = 0.0
        current = origin
        give_up = False
        # chain shortest-path legs until the route covers the trace distance
        while total < needed:
            dest = pick_node()
            if dest == current:
                continue
            leg = _route_segments(graph, current, dest)
            if leg is None or not leg:
                give_up = True
                break
            route.extend(leg)
            total += sum(net.segments[s].length_m for s in leg)
            current = dest
        if give_up:
            continue

        prefix = np.concatenate([[0.0], np.cumsum([net.segments[s].length_m for s in route])])
        samples = []
        pos = float(first_offset_frac * speeds[0] * interval_s)
        idx = 0
        for t in range(length):
            if t > 0:
                pos += float(speeds[t - 1] * interval_s)
            crossings = 0
            while pos >= prefix[idx + 1]:
                idx += 1
                crossings += 1
            if crossings > 1:
                raise ValidationError("trace crossed more than one segment boundary per interval")
            samples.append((route[idx], pos - float(prefix[idx])))
        return PathTrace(samples)
    raise RoutingError(f"could not build a route of {needed:.1f} m after {max_retries} attempts")


def simulate_corpus(
    net: RoadNetwork,
    n_traj: int,
    length_range: tuple[int, int],
    speed_model: tuple[float, float] = (3.0, 1.0),
    seed: int = 0,
    interval_s: float = 5.0,
    demand_skew: float = 1.0,
) -> Corpus:
    """Reproducible corpus of simulated trajectories, ratios on the 6-decimal grid.

    Trip endpoints follow a Zipf-like demand over intersections with exponent
    demand_skew (0 = uniform), mirroring the hotspot structure of real taxi
    data; the hotspot assignment is drawn deterministically from the seed.
    """
    if n_traj < 1:
        raise ValidationError(f"n_traj must be >= 1, got {n_traj}")
    tmin, tmax = length_range
    if tmin < 2 or tmax < tmin:
        raise ValidationError(f"bad length range {length_range}")
    if demand_skew < 0:
        raise ValidationError(f"demand_skew must be >= 0, got {demand_skew}")
    graph = _routing_graph(net)

    cum_weights = None
    if demand_skew > 0:
        demand_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xDE])))
        n_nodes = len(net.intersections)
        ranks = np.empty(n_nodes)
        ranks[demand_rng.permutation(n_nodes)] = np.arange(1, n_nodes + 1)
        weights = ranks ** -demand_skew
        cum_weights = np.cumsum(weights / weights.sum())

    master = np.random.SeedSequence(seed)
    corpus = Corpus(net.name)
    for child in master.spawn(n_traj):
        rng = np.random.Generator(np.random.PCG64(child))
        length = int(rng.integers(tmin, tmax + 1))
        trace = simulate_trace(
            net, length, speed_model, rng, interval_s, graph, node_cum_weights=cum_weights
        )
        traj = encode_moving_ratios(trace, net)
        corpus.trajectories.append(
            RNTraj([RNTrajPoint(p.segment, quantize_ratio(p.ratio)) for p in traj])
        )
    return corpus


def save_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{CORPUS_MAGIC} network={corpus.network_name}\n")
        for traj in corpus:
            f.write(" ".join(f"{p.segment}:{p.ratio:.6f}" for p in traj))
            f.write("\n")


def load_corpus(path: str | os.PathLike) -> Corpus:
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if not header.startswith(CORPUS_MAGIC):
            raise ParseError(f"{path}: missing '{CORPUS_MAGIC}' header")
        fields = dict(
            part.split("=", 1) for part in header[len(CORPUS_MAGIC):].split() if "=" in part
        )
        network_name = fields.get("network", "unknown")
        corpus = Corpus(network_name)
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            points = []
            for token in line.split():
                try:
                    seg_text, ratio_text = token.split(":")
                    seg_id = int(seg_text)
                    ratio = quantize_ratio(float(ratio_text))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: malformed token {token!r}") from None
                if not 0.0 <= ratio <= 1.0:
                    raise ValidationError(f"{path}:{lineno}: ratio {ratio} outside [0, 1]")
                points.append(RNTrajPoint(seg_id, ratio))
            if len(points) < 2:
                raise ValidationError(f"{path}:{lineno}: trajectory shorter than 2 points")
            corpus.trajectories.append(RNTraj(points))
    return corpus


def lengths_from_counts(counts: dict[int, int]) -> list[int]:
    """Expand per-length counts into an explicit length list (sorted)."""
    lengths: list[int] = []
    for length in sorted(counts):
        lengths.extend([length] * counts[length])
    return lengths


def trajectory_lengths(corpus: Corpus) -> list[int]:
    return lengths_from_counts(corpus.length_counts())
