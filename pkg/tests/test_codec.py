import numpy as np
import pytest

from rntraj.codec import decode, decode_segments, vectorize
from rntraj.errors import DecodeError, ValidationError
from rntraj.trajsim import RNTraj, RNTrajPoint, quantize_ratio, simulate_corpus
from rntraj.utgraph import SegmentEmbeddingTable


@pytest.fixture()
def table(rng):
    return SegmentEmbeddingTable(rng.normal(size=(10, 6)))


def test_vectorize_layout(table):
    traj = RNTraj([RNTrajPoint(3, 0.5), RNTrajPoint(7, 0.0), RNTrajPoint(7, 1.0)])
    x = vectorize(traj, table)
    assert x.shape == (3, 7)
    assert np.array_equal(x[0, :6], table.matrix[3])
    assert np.array_equal(x[1, :6], table.matrix[7])
    assert x[0, 6] == 0.0
    assert x[1, 6] == -1.0
    assert x[2, 6] == 1.0


def test_vectorize_unknown_segment(table):
    with pytest.raises(ValidationError, match="outside"):
        vectorize(RNTraj([RNTrajPoint(42, 0.5)]), table)


def test_decode_ratio_affine_inverse(table):
    x = np.concatenate([table.matrix[[1, 2]], np.array([[0.2], [1.4]])], axis=1)
    decoded = decode(x, table)
    assert decoded.traj.ratios[0] == pytest.approx(0.6, abs=1e-15)
    assert decoded.traj.ratios[1] == 1.0  # clamped


def test_decode_clamps_below(table):
    x = np.concatenate([table.matrix[[0]], np.array([[-1.7]])], axis=1)
    assert decode(x, table).traj.ratios[0] == 0.0


def test_round_trip_identity_random(table, rng):
    for _ in range(50):
        segs = rng.integers(0, 10, size=rng.integers(2, 15))
        ratios = [quantize_ratio(float(r)) for r in rng.uniform(0, 1, size=len(segs))]
        traj = RNTraj([RNTrajPoint(int(s), r) for s, r in zip(segs, ratios)])
        back = decode(vectorize(traj, table), table).traj
        assert back.segments == traj.segments
        assert back.ratios == traj.ratios


def test_round_trip_identity_simulated_corpus(grid6, rng):
    corpus = simulate_corpus(grid6, 100, (5, 20), seed=21)
    table = SegmentEmbeddingTable(rng.normal(size=(grid6.n_segments, 8)))
    for traj in corpus:
        back = decode(vectorize(traj, table), table).traj
        assert back.segments == traj.segments
        assert back.ratios == traj.ratios


def test_decode_returns_gps_when_net_given(line_network):
    table = SegmentEmbeddingTable(np.array([[1.0, 0.0], [0.0, 1.0]]))
    traj = RNTraj([RNTrajPoint(0, 0.25), RNTrajPoint(1, 0.5)])
    decoded = decode(vectorize(traj, table), table, net=line_network)
    assert decoded.coords == [(0.25, 0.0), (1.5, 0.0)]


def test_argmax_tie_breaks_to_lowest_id():
    # rows 0 and 1 are parallel, so both cosines are 1: pick the lowest id
    table = SegmentEmbeddingTable(np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]))
    x_e = np.array([[3.0, 0.0]])
    assert decode_segments(x_e, table)[0] == 0


def test_zero_norm_row_raises_decode_error(table):
    x = np.zeros((2, 7))
    x[:, 6] = 0.5
    with pytest.raises(DecodeError) as err:
        decode(x, table)
    assert err.value.tensor is not None
    assert err.value.tensor.shape == (2, 7)


def test_argmax_equivariant_under_row_permutation(table, rng):
    perm = rng.permutation(10)
    permuted = SegmentEmbeddingTable(table.matrix[perm])
    x_e = rng.normal(size=(20, 6))
    original = decode_segments(x_e, table)
    remapped = decode_segments(x_e, permuted)
    # permuted row j holds original segment perm[j]
    assert np.array_equal(perm[remapped], original)


def test_cosine_rows_bounded(table, rng):
    from rntraj.codec import cosine_similarity

    sims = cosine_similarity(rng.normal(size=(30, 6)), table)
    assert np.all(sims <= 1.0 + 1e-12)
    assert np.all(sims >= -1.0 - 1e-12)
