"""Segment connectivity graph from trajectories and pretrained segment vectors.

The graph counts consecutive traversals of segment pairs (self-pairs
included) over a corpus. Segment vectors are trained on weight-biased random
walks with a skip-gram objective and negative sampling; the resulting table
is indexed by segment id (row i holds the vector of segment i).
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .trajsim import Corpus

log = logging.getLogger(__name__)

EMBEDDING_MAGIC = "#emb v1"


@dataclass
class UTGraph:
    nodes: set[int] = field(default_factory=set)
    edges: dict[tuple[int, int], int] = field(default_factory=dict)

    def add_traversal(self, i: int, j: int, count: int = 1) -> None:
        self.nodes.add(i)
        self.nodes.add(j)
        self.edges[(i, j)] = self.edges.get((i, j), 0) + count

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self.edges

    def connected(self, i: int, j: int) -> bool:
        """Edge present, or a self-pair (staying on a segment is always valid)."""
        return i == j or (i, j) in self.edges

    def successors(self, i: int) -> list[tuple[int, int]]:
        """(successor, weight) pairs sorted by successor id."""
        return sorted((j, w) for (a, j), w in self.edges.items() if a == i)

    def total_weight(self) -> int:
        return sum(self.edges.values())


def build_utgraph(corpus: Corpus) -> UTGraph:
    """Count consecutive segment pairs over all trajectories."""
    if len(corpus) == 0:
        raise ValidationError("cannot build a traversal graph from an empty corpus")
    g = UTGraph()
    for traj in corpus:
        segs = traj.segments
        for seg in segs:
            g.nodes.add(seg)
        for a, b in zip(segs, segs[1:]):
            g.edges[(a, b)] = g.edges.get((a, b), 0) + 1
    return g


def adjacency_matrix(g: UTGraph, size: int) -> np.ndarray:
    """Dense 0/1 adjacency over segment ids [0, size); diagonal forced to 1."""
    adj = np.zeros((size, size), dtype=np.float64)
    for (i, j) in g.edges:
        if i < size and j < size:
            adj[i, j] = 1.0
    np.fill_diagonal(adj, 1.0)
    return adj


@dataclass
class SegmentEmbeddingTable:
    """Row i is the trained vector of segment id i."""

    matrix: np.ndarray  # (n_segments, dim) float64

    @property
    def n_segments(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, segment_id: int) -> np.ndarray:
        if not 0 <= segment_id < self.n_segments:
            raise ValidationError(f"segment id {segment_id} outside embedding table")
        return self.matrix[segment_id]

    def validate(self) -> None:
        if np.any(~np.isfinite(self.matrix)):
            raise ValidationError("embedding table contains non-finite values")
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(norms == 0.0):
            raise ValidationError("embedding table contains a zero row")
        _reject_duplicate_rows(self.matrix)


def _reject_duplicate_rows(matrix: np.ndarray) -> None:
    # duplicates would break the argmax round trip of the decoder
    unique = np.unique(matrix, axis=0)
    if unique.shape[0] != matrix.shape[0]:
        raise ValidationError("embedding table has duplicate rows")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class _WalkTable:
    """Padded successor arrays enabling vectorized weighted walk steps."""

    def __init__(self, g: UTGraph, n_ids: int):
        succ_lists = [[] for _ in range(n_ids)]
        for (i, j), w in sorted(g.edges.items()):
            succ_lists[i].append((j, float(w)))
        max_deg = max((len(s) for s in succ_lists), default=0)
        self.ids = np.full((n_ids, max(max_deg, 1)), -1, dtype=np.int64)
        self.cum = np.full((n_ids, max(max_deg, 1)), 2.0, dtype=np.float64)
        self.degree = np.zeros(n_ids, dtype=np.int64)
        for i, succs in enumerate(succ_lists):
            if not succs:
                continue
            ids = np.array([j for j, _ in succs], dtype=np.int64)
            weights = np.array([w for _, w in succs], dtype=np.float64)
            cum = np.cumsum(weights)
            cum /= cum[-1]
            self.ids[i, : len(succs)] = ids
            self.cum[i, : len(succs)] = cum
            self.degree[i] = len(succs)

    def step(self, current: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Next node per walk; -1 where the walk is dead (no successors)."""
        alive = current >= 0
        nxt = np.full_like(current, -1)
        if not np.any(alive):
            return nxt
        cur = current[alive]
        u = rng.random(cur.shape[0])
        pick = (u[:, None] >= self.cum[cur]).sum(axis=1)
        chosen = self.ids[cur, np.minimum(pick, self.ids.shape[1] - 1)]
        nxt[alive] = np.where(self.degree[cur] > 0, chosen, -1)
        return nxt


def generate_walks(
    g: UTGraph,
    n_ids: int,
    walks_per_node: int,
    walk_length: int,
    rng: np.random.Generator,
    p: float = 1.0,
    q: float = 1.0,
) -> np.ndarray:
    """Weight-proportional random walks from every id; -1 pads dead walks.

    p and q bias the second step onward toward returning (1/p) or exploring
    (1/q); the defaults reduce to a first-order weighted walk.
    """
    starts = np.repeat(np.arange(n_ids, dtype=np.int64), walks_per_node)
    walks = np.full((starts.shape[0], walk_length), -1, dtype=np.int64)
    walks[:, 0] = starts
    if walk_length == 1:
        return walks
    table = _WalkTable(g, n_ids)
    if p == 1.0 and q == 1.0:
        current = starts.copy()
        for t in range(1, walk_length):
            current = table.step(current, rng)
            walks[:, t] = current
    else:
        succ_cache = {i: g.successors(i) for i in range(n_ids)}
        out_sets = {i: {j for j, _ in succ_cache[i]} for i in range(n_ids)}
        for w in range(walks.shape[0]):
            prev = -1
            cur = int(starts[w])
            for t in range(1, walk_length):
                succs = succ_cache[cur]
                if not succs:
                    break
                weights = np.array([wt for _, wt in succs], dtype=np.float64)
                if prev >= 0:
                    bias = np.array(
                        [
                            1.0 / p if j == prev else (1.0 if j in out_sets[prev] else 1.0 / q)
                            for j, _ in succs
                        ]
                    )
                    weights = weights * bias
                cum = np.cumsum(weights)
                u = rng.random() * cum[-1]
                nxt = succs[int(np.searchsorted(cum, u, side="right"))][0]
                walks[w, t] = nxt
                prev, cur = cur, nxt
    return walks


def pretrain_embeddings(
    g: UTGraph,
    dim: int,
    walks_per_node: int = 100,
    walk_length: int = 80,
    window: int = 10,
    iterations: int = 1000,
    seed: int = 0,
    p: float = 1.0,
    q: float = 1.0,
    negatives: int = 5,
    learning_rate: float = 0.025,
    batch_pairs: int = 1024,
    normalize: bool = True,
) -> SegmentEmbeddingTable:
    """Skip-gram training with negative sampling over the walk corpus.

    One iteration consumes one batch of (center, context) pairs sampled from
    the walks; the learning rate decays linearly to zero across iterations.
    Deterministic for a fixed seed.

    With normalize=True the trained matrix is column-centered (removing the
    shared drift direction skip-gram vectors develop) and every row is scaled
    to norm sqrt(dim), which gives unit per-channel variance downstream.
    Cosine-based decoding is unaffected by the row scaling.
    """
    if not g.nodes:
        raise ValidationError("cannot pretrain embeddings on an empty graph")
    if dim < 2:
        raise ValidationError(f"embedding dimension must be >= 2, got {dim}")
    if min(g.nodes) < 0:
        raise ValidationError("segment ids must be non-negative")
    n_ids = max(g.nodes) + 1

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    walks = generate_walks(g, n_ids, walks_per_node, walk_length, rng, p, q)

    walk_alive = walks >= 0
    lengths = walk_alive.sum(axis=1)
    isolated = int(np.sum(lengths <= 1)) // max(walks_per_node, 1)
    if isolated:
        log.warning(
            "pretrain_embeddings: %d ids have no outgoing traversals; "
            "their vectors train only as negative/context samples",
            isolated,
        )

    # unigram^0.75 noise distribution over node occurrences in the walks
    freq = np.bincount(walks[walk_alive].ravel(), minlength=n_ids).astype(np.float64)
    noise = np.where(freq > 0, freq, 1.0) ** 0.75
    noise /= noise.sum()
    noise_cum = np.cumsum(noise)

    emb_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(n_ids, dim))
    emb_out = np.zeros((n_ids, dim), dtype=np.float64)

    n_walks, L = walks.shape
    for it in range(iterations):
        lr = learning_rate * max(1.0 - it / iterations, 1e-4)
        rows = rng.integers(0, n_walks, size=batch_pairs)
        pos = rng.integers(0, L, size=batch_pairs)
        offset = rng.integers(1, window + 1, size=batch_pairs)
        sign = rng.integers(0, 2, size=batch_pairs) * 2 - 1
        ctx_pos = pos + offset * sign
        ok = (ctx_pos >= 0) & (ctx_pos < L)
        rows, pos, ctx_pos = rows[ok], pos[ok], ctx_pos[ok]
        centers = walks[rows, pos]
        contexts = walks[rows, ctx_pos]
        ok = (centers >= 0) & (contexts >= 0)
        centers, contexts = centers[ok], contexts[ok]
        if centers.size == 0:
            continue

        neg = np.searchsorted(noise_cum, rng.random((centers.size, negatives)))
        targets = np.concatenate([contexts[:, None], neg], axis=1)  # (B, 1+k)
        labels = np.zeros_like(targets, dtype=np.float64)
        labels[:, 0] = 1.0

        v_in = emb_in[centers]  # (B, D)
        v_out = emb_out[targets]  # (B, 1+k, D)
        logits = np.einsum("bd,bkd->bk", v_in, v_out)
        scores = _sigmoid(logits)
        coeff = (labels - scores) * lr  # (B, 1+k)

        grad_in = np.einsum("bk,bkd->bd", coeff, v_out)
        grad_out = coeff[:, :, None] * v_in[:, None, :]
        np.add.at(emb_in, centers, grad_in)
        np.add.at(emb_out, targets.ravel(), grad_out.reshape(-1, dim))

    if normalize:
        centered = emb_in - emb_in.mean(axis=0)
        # centering degenerates when rows coincide (single-node graphs)
        if np.all(np.linalg.norm(centered, axis=1) > 0):
            emb_in = centered
        emb_in = emb_in / np.linalg.norm(emb_in, axis=1, keepdims=True) * math.sqrt(dim)
    table = SegmentEmbeddingTable(emb_in)
    table.validate()
    return table


def save_embeddings(table: SegmentEmbeddingTable, path: str | os.PathLike) -> None:
    """Binary layout: text header line, then little-endian float32 rows."""
    header = f"{EMBEDDING_MAGIC} rows={table.n_segments} dim={table.dim}\n"
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(np.ascontiguousarray(table.matrix, dtype="<f4").tobytes())


def load_embeddings(path: str | os.PathLike) -> SegmentEmbeddingTable:
    with open(path, "rb") as f:
        header = f.readline().decode("utf-8").rstrip("\n")
        if not header.startswith(EMBEDDING_MAGIC):
            raise ParseError(f"{path}: missing '{EMBEDDING_MAGIC}' header")
        fields = dict(part.split("=", 1) for part in header.split() if "=" in part)
        try:
            rows, dim = int(fields["rows"]), int(fields["dim"])
        except (KeyError, ValueError):
            raise ParseError(f"{path}: malformed embedding header {header!r}") from None
        payload = f.read()
    expected = rows * dim * 4
    if len(payload) != expected:
        raise ParseError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).astype(np.float64)
    table = SegmentEmbeddingTable(matrix)
    table.validate()
    return table
