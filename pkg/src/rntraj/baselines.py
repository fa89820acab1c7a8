"""Rule-based generators: random walk on the traversal graph, and a
first-order segment transition model fitted to a reference corpus.

Both emit only adjacent pairs that the traversal graph contains, so their
connectivity score is 100% by construction. Trajectory lengths mirror the
reference corpus's per-length counts.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import RoutingError, ValidationError
from .roadnet import RoadNetwork
from .trajsim import Corpus, RNTraj, RNTrajPoint, quantize_ratio, trajectory_lengths
from .utgraph import UTGraph

_RATIO_BINS = 20


def _child_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def rwrn_generate(
    g: UTGraph,
    lengths: Sequence[int],
    seed: int = 0,
    net: RoadNetwork | None = None,
    network_name: str = "rwrn",
    max_retries: int = 100,
) -> Corpus:
    """Uniform random walk over traversal-graph successors, uniform ratios."""
    if not g.nodes:
        raise ValidationError("traversal graph is empty")
    successors = {i: [j for j, _ in g.successors(i)] for i in sorted(g.nodes)}
    starts = [i for i, succ in successors.items() if succ]
    if not starts:
        raise ValidationError("no segment has outgoing traversals")
    if net is not None:
        for s in sorted(g.nodes):
            net.segment(s)

    corpus = Corpus(net.name if net is not None else network_name)
    for rng, length in zip(_child_rngs(seed, len(lengths)), lengths):
        if length < 2:
            raise ValidationError(f"trajectory length must be >= 2, got {length}")
        for _ in range(max_retries):
            segs = [starts[rng.integers(len(starts))]]
            while len(segs) < length:
                succ = successors[segs[-1]]
                if not succ:
                    break  # dead end: throw the walk away and restart
                segs.append(succ[rng.integers(len(succ))])
            if len(segs) == length:
                ratios = rng.uniform(0.0, 1.0, size=length)
                corpus.trajectories.append(
                    RNTraj([RNTrajPoint(s, quantize_ratio(r)) for s, r in zip(segs, ratios)])
                )
                break
        else:
            raise RoutingError(f"random walk kept hitting dead ends after {max_retries} tries")
    return corpus


class _RatioModel:
    """Per-segment empirical ratio histogram; samples uniformly within a bin."""

    def __init__(self, ref: Corpus):
        edges = np.linspace(0.0, 1.0, _RATIO_BINS + 1)
        self._counts: dict[int, np.ndarray] = {}
        for traj in ref:
            for p in traj:
                counts = self._counts.setdefault(p.segment, np.zeros(_RATIO_BINS))
                counts[min(int(p.ratio * _RATIO_BINS), _RATIO_BINS - 1)] += 1
        self._cum = {s: np.cumsum(c) / c.sum() for s, c in self._counts.items()}

    def sample(self, segment: int, rng: np.random.Generator) -> float:
        cum = self._cum[segment]
        b = int(np.searchsorted(cum, rng.random(), side="right"))
        b = min(b, _RATIO_BINS - 1)
        return quantize_ratio(rng.uniform(b / _RATIO_BINS, (b + 1) / _RATIO_BINS))


def transition_matrix(ref: Corpus) -> tuple[list[int], np.ndarray]:
    """Row-normalized first-order transition counts over observed segments."""
    if len(ref) == 0:
        raise ValidationError("reference corpus is empty")
    segments = sorted(ref.segment_universe())
    index = {s: i for i, s in enumerate(segments)}
    counts = np.zeros((len(segments), len(segments)))
    for traj in ref:
        segs = traj.segments
        for a, b in zip(segs, segs[1:]):
            counts[index[a], index[b]] += 1
    row_sums = counts.sum(axis=1, keepdims=True)
    matrix = np.divide(counts, row_sums, out=np.zeros_like(counts), where=row_sums > 0)
    return segments, matrix


def markov_generate(
    ref: Corpus,
    lengths: Sequence[int] | None = None,
    seed: int = 0,
    max_retries: int = 100,
) -> Corpus:
    """First-order transition sampling with empirical initial segments and ratios."""
    if len(ref) == 0:
        raise ValidationError("reference corpus is empty")
    if lengths is None:
        lengths = trajectory_lengths(ref)
    segments, matrix = transition_matrix(ref)
    cum_rows = np.cumsum(matrix, axis=1)
    has_out = matrix.sum(axis=1) > 0
    index = {s: i for i, s in enumerate(segments)}

    firsts = [index[traj.segments[0]] for traj in ref]
    first_counts = np.bincount(firsts, minlength=len(segments)).astype(np.float64)
    first_cum = np.cumsum(first_counts) / first_counts.sum()

    ratio_model = _RatioModel(ref)
    corpus = Corpus(ref.network_name)
    for rng, length in zip(_child_rngs(seed, len(lengths)), lengths):
        if length < 2:
            raise ValidationError(f"trajectory length must be >= 2, got {length}")
        for _ in range(max_retries):
            state = int(np.searchsorted(first_cum, rng.random(), side="right"))
            state = min(state, len(segments) - 1)
            states = [state]
            while len(states) < length:
                if not has_out[states[-1]]:
                    break  # absorbing state: truncate and resample
                nxt = int(np.searchsorted(cum_rows[states[-1]], rng.random(), side="right"))
                states.append(min(nxt, len(segments) - 1))
            if len(states) == length:
                points = [
                    RNTrajPoint(segments[s], ratio_model.sample(segments[s], rng))
                    for s in states
                ]
                corpus.trajectories.append(RNTraj(points))
                break
        else:
            raise RoutingError(f"transition model kept truncating after {max_retries} tries")
    return corpus
