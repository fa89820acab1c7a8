"""Road network data model, CSV I/O, synthetic grids, and GPS reconstruction.

A network is a directed graph of intersections (lon/lat) and road segments
(start, end, length in meters). Trajectory points are (segment id, moving
ratio) pairs; their GPS coordinates are reconstructed by linear interpolation
between the segment endpoints at a running fraction that accumulates moving
ratios along a segment.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import ParseError, ValidationError

# Planar degree <-> meter conversion used by the grid generator and the grid
# point density metric. The exact constant is configuration, not
# correctness-bearing; distances along roads always come from length_m.
METERS_PER_DEGREE = 111_320.0
DEGREES_PER_METER = 1.0 / METERS_PER_DEGREE


@dataclass(frozen=True)
class Intersection:
    id: int
    lon: float
    lat: float


@dataclass(frozen=True)
class RoadSegment:
    id: int
    start: int
    end: int
    length_m: float


@dataclass
class RoadNetwork:
    """Immutable after construction; safe for concurrent reads."""

    name: str
    intersections: dict[int, Intersection]
    segments: dict[int, RoadSegment]
    # segment id -> ids of segments whose start is this segment's end
    out_adjacency: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        self._validate()
        self._build_adjacency()

    def _validate(self):
        for seg in self.segments.values():
            if seg.length_m <= 0:
                raise ValidationError(f"segment {seg.id}: non-positive length {seg.length_m}")
            if seg.start == seg.end:
                raise ValidationError(f"segment {seg.id}: start equals end ({seg.start})")
            for node in (seg.start, seg.end):
                if node not in self.intersections:
                    raise ValidationError(
                        f"segment {seg.id}: dangling endpoint reference {node}"
                    )

    def _build_adjacency(self):
        by_start: dict[int, list[int]] = {}
        for seg in self.segments.values():
            by_start.setdefault(seg.start, []).append(seg.id)
        adjacency = {}
        for seg in self.segments.values():
            adjacency[seg.id] = sorted(by_start.get(seg.end, []))
        self.out_adjacency.clear()
        self.out_adjacency.update(adjacency)

    def segment(self, segment_id: int) -> RoadSegment:
        try:
            return self.segments[segment_id]
        except KeyError:
            raise ValidationError(f"unknown segment id {segment_id}") from None

    def segment_endpoints(self, segment_id: int) -> tuple[Intersection, Intersection]:
        seg = self.segment(segment_id)
        return self.intersections[seg.start], self.intersections[seg.end]

    def successors(self, segment_id: int) -> list[int]:
        return self.out_adjacency.get(segment_id, [])

    @property
    def n_intersections(self) -> int:
        return len(self.intersections)

    @property
    def n_segments(self) -> int:
        return len(self.segments)


def _as_pairs(traj) -> Iterator[tuple[int, float]]:
    """Accept RNTraj-like objects or raw (segment, ratio) pairs."""
    for point in traj:
        if hasattr(point, "segment"):
            yield point.segment, point.ratio
        else:
            seg, ratio = point
            yield seg, ratio


def interpolation_fractions(traj, net: RoadNetwork) -> list[float]:
    """Running interpolation fraction of each point along its segment.

    The fraction resets to r_t whenever the segment changes (or at t=1) and
    otherwise advances by the remaining share: temp_r + (1 - temp_r) * r_t.
    """
    fractions = []
    temp_r = 0.0
    prev_seg = None
    for seg_id, ratio in _as_pairs(traj):
        net.segment(seg_id)
        if not 0.0 <= ratio <= 1.0:
            raise ValidationError(f"moving ratio {ratio} outside [0, 1]")
        if prev_seg is None or seg_id != prev_seg:
            temp_r = ratio
        else:
            temp_r = temp_r + (1.0 - temp_r) * ratio
        fractions.append(temp_r)
        prev_seg = seg_id
    return fractions


def gps_of_rntraj(traj, net: RoadNetwork) -> list[tuple[float, float]]:
    """Reconstruct (lon, lat) for every trajectory point."""
    coords = []
    fractions = interpolation_fractions(traj, net)
    for (seg_id, _), frac in zip(_as_pairs(traj), fractions):
        start, end = net.segment_endpoints(seg_id)
        lon = start.lon + (end.lon - start.lon) * frac
        lat = start.lat + (end.lat - start.lat) * frac
        coords.append((lon, lat))
    return coords


def generate_grid_network(rows: int, cols: int, spacing_m: float, name: str = "grid") -> RoadNetwork:
    """Regular lattice with two directed segments per lattice edge."""
    if rows < 2 or cols < 2:
        raise ValidationError(f"degenerate grid dimensions {rows}x{cols}")
    if spacing_m <= 0:
        raise ValidationError(f"non-positive spacing {spacing_m}")
    spacing_deg = spacing_m * DEGREES_PER_METER
    intersections = {}
    for r in range(rows):
        for c in range(cols):
            node_id = r * cols + c
            intersections[node_id] = Intersection(node_id, c * spacing_deg, r * spacing_deg)

    segments = {}

    def add_two_way(u: int, v: int):
        for a, b in ((u, v), (v, u)):
            seg_id = len(segments)
            segments[seg_id] = RoadSegment(seg_id, a, b, spacing_m)

    for r in range(rows):
        for c in range(cols):
            node = r * cols + c
            if c + 1 < cols:
                add_two_way(node, node + 1)
            if r + 1 < rows:
                add_two_way(node, node + cols)
    return RoadNetwork(f"{name}{rows}x{cols}", intersections, segments)


def save_network(net: RoadNetwork, directory: str | os.PathLike) -> None:
    """Write nodes.csv and edges.csv (UTF-8, LF line endings)."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "nodes.csv"), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "lon", "lat"])
        for node in sorted(net.intersections.values(), key=lambda n: n.id):
            writer.writerow([node.id, repr(node.lon), repr(node.lat)])
    with open(os.path.join(directory, "edges.csv"), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "start", "end", "length_m"])
        for seg in sorted(net.segments.values(), key=lambda s: s.id):
            writer.writerow([seg.id, seg.start, seg.end, repr(seg.length_m)])


def _read_rows(path: str, expected_header: Sequence[str]) -> Iterable[list[str]]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if [h.strip() for h in header] != list(expected_header):
            raise ParseError(f"{path}: expected header {','.join(expected_header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            yield lineno, row


def load_network(directory: str | os.PathLike, name: str | None = None) -> RoadNetwork:
    """Load a network from a directory holding nodes.csv and edges.csv."""
    directory = os.fspath(directory)
    nodes_path = os.path.join(directory, "nodes.csv")
    edges_path = os.path.join(directory, "edges.csv")
    for path in (nodes_path, edges_path):
        if not os.path.exists(path):
            raise ParseError(f"{path}: file not found")

    intersections = {}
    for lineno, row in _read_rows(nodes_path, ["id", "lon", "lat"]):
        try:
            node_id, lon, lat = int(row[0]), float(row[1]), float(row[2])
        except (ValueError, IndexError):
            raise ParseError(f"{nodes_path}:{lineno}: malformed line {row!r}") from None
        if node_id in intersections:
            raise ValidationError(f"{nodes_path}:{lineno}: duplicate intersection id {node_id}")
        if not (math.isfinite(lon) and math.isfinite(lat)):
            raise ValidationError(f"{nodes_path}:{lineno}: non-finite coordinate")
        intersections[node_id] = Intersection(node_id, lon, lat)

    segments = {}
    for lineno, row in _read_rows(edges_path, ["id", "start", "end", "length_m"]):
        try:
            seg_id, start, end, length = int(row[0]), int(row[1]), int(row[2]), float(row[3])
        except (ValueError, IndexError):
            raise ParseError(f"{edges_path}:{lineno}: malformed line {row!r}") from None
        if seg_id in segments:
            raise ValidationError(f"{edges_path}:{lineno}: duplicate segment id {seg_id}")
        segments[seg_id] = RoadSegment(seg_id, start, end, length)

    if name is None:
        name = os.path.basename(os.path.normpath(directory)) or "network"
    return RoadNetwork(name, intersections, segments)
