import math

import numpy as np
import pytest

from rntraj.errors import ValidationError
from rntraj.metrics import (
    Histogram,
    corpus_rsc,
    evaluate_corpora,
    histogram_from_counts,
    jsd,
    metric_gpd,
    metric_rs,
    metric_sd,
    metric_td,
    rsc,
    save_report,
)
from rntraj.trajsim import Corpus, RNTraj, RNTrajPoint, simulate_corpus
from rntraj.utgraph import UTGraph, build_utgraph


def _traj(*points):
    return RNTraj([RNTrajPoint(s, r) for s, r in points])


def _corpus(*trajs):
    return Corpus("test", list(trajs))


def _random_histogram_pair(rng, k=12):
    structure = ("categories", tuple(range(k)))
    p = histogram_from_counts(rng.uniform(0.01, 1, size=k), structure)
    q = histogram_from_counts(rng.uniform(0.01, 1, size=k), structure)
    return p, q


def test_jsd_identical_is_zero(rng):
    p, _ = _random_histogram_pair(rng)
    assert jsd(p, p) == 0.0


def test_jsd_symmetry_and_range(rng):
    for _ in range(100):
        p, q = _random_histogram_pair(rng)
        d = jsd(p, q)
        assert abs(d - jsd(q, p)) <= 1e-12
        assert -1e-12 <= d <= 1.0 + 1e-12


def test_jsd_disjoint_supports_is_one():
    structure = ("categories", (0, 1, 2, 3))
    p = Histogram(np.array([0.5, 0.5, 0.0, 0.0]), structure)
    q = Histogram(np.array([0.0, 0.0, 0.25, 0.75]), structure)
    assert jsd(p, q) == pytest.approx(1.0, abs=1e-12)


def test_jsd_mismatched_binning_rejected():
    p = Histogram(np.array([1.0]), ("categories", (0,)))
    q = Histogram(np.array([1.0]), ("categories", (1,)))
    with pytest.raises(ValidationError, match="binning"):
        jsd(p, q)


def test_histogram_mass_validation():
    with pytest.raises(ValidationError):
        Histogram(np.array([0.5, 0.4]), ("categories", (0, 1)))
    with pytest.raises(ValidationError):
        Histogram(np.array([1.5, -0.5]), ("categories", (0, 1)))


def test_metric_td_self_is_zero(line_network):
    corpus = _corpus(_traj((0, 0.0), (0, 0.3)), _traj((0, 0.2), (1, 0.4)))
    assert metric_td(corpus, corpus, line_network) == pytest.approx(0.0, abs=1e-12)


def test_metric_td_equal_totals_is_zero(line_network):
    gen = _corpus(_traj((0, 0.0), (0, 0.4)))  # total 40 m
    ref = _corpus(_traj((1, 0.1), (1, 1.0 / 3)))  # 0.1 -> 0.1 + 0.9/3 = 0.4: 30 m... use same
    gen2 = _corpus(_traj((0, 0.0), (0, 0.4)))
    assert metric_td(gen, gen2, line_network) == pytest.approx(0.0, abs=1e-12)


def test_metric_td_hand_value(line_network):
    # totals: gen {10, 90}, ref {10, 50} -> JSD = 0.5 bits
    gen = _corpus(_traj((0, 0.0), (0, 0.1)), _traj((0, 0.0), (0, 0.9)))
    ref = _corpus(_traj((0, 0.0), (0, 0.1)), _traj((0, 0.0), (0, 0.5)))
    assert metric_td(gen, ref, line_network) == pytest.approx(0.5, abs=1e-12)


def test_metric_sd_hand_value(line_network):
    # per-gap distances: gen {10, 80}, ref {10, 40} -> 0.5 bits again
    gen = _corpus(_traj((0, 0.0), (0, 0.1), (0, 8.0 / 9.0)))
    ref = _corpus(_traj((0, 0.0), (0, 0.1), (0, 4.0 / 9.0)))
    assert metric_sd(gen, ref, line_network) == pytest.approx(0.5, abs=1e-9)


def test_gap_distance_spans_segment_change(line_network):
    # 0.8 on segment 0 (20 m left) then 0.3 into segment 1 (30 m): gap 50 m
    gen = _corpus(_traj((0, 0.8), (1, 0.3)))
    ref = _corpus(_traj((0, 0.0), (0, 0.5)))  # gap 50 m as well
    assert metric_sd(gen, ref, line_network) == pytest.approx(0.0, abs=1e-12)


def test_metric_gpd_hand_value(line_network):
    gen = _corpus(_traj((0, 0.0), (0, 0.9)))  # two far-apart cells
    ref = _corpus(_traj((0, 0.0), (0, 0.0)))  # both points in the first cell
    expected = 0.5 * (0.5 * math.log2(0.5 / 0.75) + 0.5 * math.log2(0.5 / 0.25)) + 0.5 * (
        math.log2(1 / 0.75)
    )
    assert metric_gpd(gen, ref, line_network) == pytest.approx(expected, abs=1e-12)


def test_metric_gpd_self_is_zero(grid6):
    corpus = simulate_corpus(grid6, 20, (5, 10), seed=2)
    assert metric_gpd(corpus, corpus, grid6) == pytest.approx(0.0, abs=1e-12)


def test_metric_rs_self_and_disjoint():
    a = _corpus(_traj((0, 0.5), (1, 0.5)), _traj((1, 0.5), (0, 0.5)))
    b = _corpus(_traj((2, 0.5), (3, 0.5)))
    assert metric_rs(a, a) == pytest.approx(0.0, abs=1e-12)
    assert metric_rs(a, b) == pytest.approx(1.0, abs=1e-12)


def test_metric_rs_order_invariant():
    a = _corpus(_traj((0, 0.5), (1, 0.5)), _traj((2, 0.5), (2, 0.5)))
    b = _corpus(_traj((0, 0.5), (0, 0.5)), _traj((1, 0.5), (2, 0.5)))
    shuffled = _corpus(*reversed(a.trajectories))
    assert metric_rs(a, b) == metric_rs(shuffled, b)


def test_metrics_reject_empty(line_network):
    empty = _corpus()
    full = _corpus(_traj((0, 0.1), (0, 0.2)))
    with pytest.raises(ValidationError):
        metric_td(empty, full, line_network)
    with pytest.raises(ValidationError):
        metric_rs(full, empty)


def test_rsc_half_connected():
    g = UTGraph()
    g.add_traversal(0, 1)
    assert rsc(_traj((0, 0.5), (1, 0.5), (3, 0.5)), g) == 50.0


def test_rsc_self_pair_counts_connected():
    g = UTGraph()
    g.add_traversal(0, 1)
    assert rsc(_traj((2, 0.1), (2, 0.9)), g) == 100.0


def test_rsc_requires_two_points():
    g = UTGraph()
    g.add_traversal(0, 1)
    with pytest.raises(ValidationError):
        rsc(_traj((0, 0.5)), g)


def test_real_corpus_rsc_is_100(grid6):
    corpus = simulate_corpus(grid6, 50, (5, 15), seed=8)
    assert corpus_rsc(corpus, build_utgraph(corpus)) == 100.0


def test_evaluate_corpora_and_report(tmp_path, grid6):
    corpus = simulate_corpus(grid6, 30, (5, 10), seed=4)
    report = evaluate_corpora(corpus, corpus, grid6)
    assert report.jsd_td == pytest.approx(0.0, abs=1e-12)
    assert report.jsd_sd == pytest.approx(0.0, abs=1e-12)
    assert report.jsd_gpd == pytest.approx(0.0, abs=1e-12)
    assert report.jsd_rs == pytest.approx(0.0, abs=1e-12)
    assert report.rsc == 100.0
    path = tmp_path / "report.csv"
    save_report(report, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "metric,value"
    assert [l.split(",")[0] for l in lines[1:]] == ["jsd_td", "jsd_sd", "jsd_gpd", "jsd_rs", "rsc"]


def test_straight_line_flag(line_network):
    gen = _corpus(_traj((0, 0.0), (0, 0.1)))
    # straight-line distance between lon 0 and lon 0.1 deg = 0.1 * meters/degree
    value = metric_td(gen, gen, line_network, straight_line=True)
    assert value == pytest.approx(0.0, abs=1e-12)


def test_gpd_heatmap_dump(tmp_path, grid6):
    from rntraj.metrics import write_gpd_heatmap

    corpus = simulate_corpus(grid6, 10, (5, 8), seed=1)
    path = tmp_path / "heatmap.csv"
    write_gpd_heatmap(corpus, grid6, 50.0, path)
    rows = [line.split(",") for line in path.read_text().splitlines()]
    total = sum(float(v) for row in rows for v in row)
    assert total == pytest.approx(1.0, abs=1e-9)
    assert len({len(row) for row in rows}) == 1  # rectangular grid
