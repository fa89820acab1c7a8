"""Convert trajectories to and from the continuous (T, D+1) representation.

The first D channels of a vectorized trajectory are the segment vectors; the
last channel is the moving ratio scaled to [-1, 1]. Decoding recovers the
segment by cosine-similarity argmax against the embedding table and the ratio
by the inverse affine map, clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, ShapeError
from .roadnet import RoadNetwork, gps_of_rntraj
from .trajsim import RNTraj, RNTrajPoint
from .utgraph import SegmentEmbeddingTable


def vectorize(traj: RNTraj, table: SegmentEmbeddingTable) -> np.ndarray:
    """(T, D+1) array: segment vector channels plus the 2r-1 ratio channel."""
    rows = np.empty((len(traj), table.dim + 1), dtype=np.float64)
    for t, point in enumerate(traj):
        rows[t, : table.dim] = table.row(point.segment)
        rows[t, table.dim] = 2.0 * point.ratio - 1.0
    return rows


def cosine_similarity(x_e: np.ndarray, table: SegmentEmbeddingTable) -> np.ndarray:
    """(T, |R|) cosine similarities; raises DecodeError on a zero-norm row."""
    if x_e.ndim != 2 or x_e.shape[1] != table.dim:
        raise ShapeError(f"expected (T, {table.dim}) array, got {x_e.shape}")
    row_norms = np.linalg.norm(x_e, axis=1)
    if np.any(row_norms == 0.0):
        raise DecodeError("zero-norm generated row, cosine undefined", tensor=x_e)
    emb_norms = np.linalg.norm(table.matrix, axis=1)
    return (x_e @ table.matrix.T) / (row_norms[:, None] * emb_norms[None, :])


def decode_segments(x_e: np.ndarray, table: SegmentEmbeddingTable) -> np.ndarray:
    """Most-similar segment id per row; ties break to the lowest id."""
    sims = cosine_similarity(x_e, table)
    return np.argmax(sims, axis=1)


@dataclass
class DecodedTrajectory:
    traj: RNTraj
    coords: list[tuple[float, float]] | None


def decode(
    x0: np.ndarray,
    table: SegmentEmbeddingTable,
    net: RoadNetwork | None = None,
) -> DecodedTrajectory:
    """Split channels, recover segments and clamped ratios, reconstruct GPS."""
    if x0.ndim != 2 or x0.shape[1] != table.dim + 1:
        raise ShapeError(f"expected (T, {table.dim + 1}) array, got {x0.shape}")
    try:
        segments = decode_segments(x0[:, : table.dim], table)
    except DecodeError:
        raise DecodeError("zero-norm generated row, cosine undefined", tensor=x0) from None
    ratios = np.clip((x0[:, table.dim] + 1.0) / 2.0, 0.0, 1.0)
    traj = RNTraj([RNTrajPoint(int(s), float(r)) for s, r in zip(segments, ratios)])
    coords = gps_of_rntraj(traj, net) if net is not None else None
    return DecodedTrajectory(traj, coords)
