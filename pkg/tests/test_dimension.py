import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from distortlab.dimension import (BallCover, DyadicScale, box_counts, box_dimension,
                                  box_scales_for, cantor_points, compression_set, dyadic_band,
                                  dyadic_scale_selection, greedy_disjoint_balls,
                                  theorem2_check, threshold_exponent)
from distortlab.errors import ParameterError
from distortlab.geometry import make_rng
from distortlab.maps import explicit_cardioid, identity, radial_stretch

CANTOR_SCALES = 3.0 ** -np.arange(2, 10)


def test_segment_dimension():
    pts = make_rng(0).uniform(0, 1, 10_000) + 0j
    est = box_dimension(pts, 2.0 ** -np.arange(2, 10))
    assert est.s_hat == pytest.approx(1.0, abs=0.05)
    assert np.all(np.diff(est.counts) >= 0)


def test_cantor_dimension_and_exact_counts():
    pts = cantor_points(10)
    est = box_dimension(pts, CANTOR_SCALES)
    assert est.s_hat == pytest.approx(math.log(2) / math.log(3), abs=0.03)
    left = cantor_points(10, "left")
    for k in (3, 5, 7):
        # grid aligned with the construction: each level-k interval is one box
        assert len(np.unique(np.floor(left.real * 3 ** k + 1e-9))) == 2 ** k


def test_single_point_dimension():
    est = box_dimension(np.array([0.3 + 0.1j]), 2.0 ** -np.arange(1, 9))
    assert est.s_hat == pytest.approx(0.0, abs=0.02)
    assert est.warnings


def test_scale_range_error():
    pts = np.array([0, 1e-3, 2e-3]) + 0j
    with pytest.raises(ParameterError):
        box_dimension(pts, 10.0 ** -np.arange(0, 3))


def test_scale_requirements():
    with pytest.raises(ParameterError):
        box_dimension(cantor_points(4), [0.1, 0.05, 0.02, 0.01])
    with pytest.raises(ParameterError):
        box_dimension(cantor_points(4), [0.1, 0.01, 0.001])


SEGMENT = make_rng(0).uniform(0, 1, 10_000) + 0j
POINT = np.array([1 / 3 + 0j])
CANTOR = cantor_points(10)
SHARED_SCALES = 2.0 ** -np.arange(2, 10)


@pytest.mark.parametrize("sub, full", [
    (POINT, SEGMENT), (POINT, CANTOR), (CANTOR, SEGMENT),
    (CANTOR[CANTOR.real <= 1 / 3], CANTOR), (SEGMENT[SEGMENT.real <= 0.5], SEGMENT)])
def test_subset_monotone_on_test_sets(sub, full):
    a = box_dimension(sub, SHARED_SCALES).s_hat
    b = box_dimension(full, SHARED_SCALES).s_hat
    assert a <= b + 0.05


@given(st.floats(0.05, 1.0), st.integers(0, 2 ** 31))
def test_subset_box_counts_monotone(frac, seed):
    # exact for min-over-offset counting; the fitted slope itself can rise by
    # about 0.06 under random thinning because coarse counts drop too
    pts = cantor_points(8)
    sub = pts[np.random.default_rng(seed).uniform(size=len(pts)) < frac]
    if len(sub) == 0:
        return
    scales = CANTOR_SCALES[:6]
    assert np.all(box_counts(sub, scales) <= box_counts(pts, scales))


def test_box_counts_nonincreasing_in_scale():
    pts = make_rng(1).uniform(0, 1, 500) + 1j * make_rng(2).uniform(0, 1, 500)
    c = box_counts(pts, 2.0 ** -np.arange(1, 8))
    assert np.all(np.diff(c) >= 0)


# -- balls -----------------------------------------------------------------

def test_greedy_three_balls():
    out = greedy_disjoint_balls(BallCover(np.array([0, 1.5, 3]), np.ones(3)))
    assert len(out) == 2
    assert set(out.centers.real) == {0.0, 3.0}


def test_greedy_keeps_disjoint_input():
    cover = BallCover(np.array([0, 3, 6j]), np.array([1.0, 0.5, 2.0]))
    out = greedy_disjoint_balls(cover)
    assert len(out) == 3


def test_greedy_cantor_level6():
    k = 6
    c = cantor_points(k, "left")
    out = greedy_disjoint_balls(BallCover(c, np.full(len(c), 3.0 ** -k / 4)))
    assert len(out) == 64
    d = np.abs(out.centers[:, None] - out.centers[None, :])
    iu = np.triu_indices(64, 1)
    assert np.all(d[iu] > 2 * 3.0 ** -k / 4)


def test_greedy_empty_cover():
    with pytest.raises(ParameterError):
        greedy_disjoint_balls(BallCover(np.array([], dtype=complex), np.array([])))


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 1)),
                min_size=1, max_size=40))
def test_greedy_properties(balls):
    c = np.array([x + 1j * y for x, y, _ in balls])
    r = np.array([rr for _, _, rr in balls])
    out = greedy_disjoint_balls(BallCover(c, r))
    assert out.pairwise_disjoint()
    kept = set(zip(out.centers.tolist(), out.radii.tolist()))
    for ci, ri in zip(c, r):
        if (complex(ci), float(ri)) in kept:
            continue
        hits = np.abs(out.centers - ci) <= out.radii + ri
        assert np.any(hits & (out.radii >= ri))


# -- dyadic bands ------------------------------------------------------------

@given(st.floats(1e-12, 1.0, exclude_min=True))
def test_bands_partition(r):
    m = dyadic_band(r)
    assert m >= 1
    assert 2.0 ** -m < r <= 2.0 ** (-m + 1)


def test_band_edges():
    assert dyadic_band(1.0) == 1
    assert dyadic_band(0.75) == 1
    assert dyadic_band(0.5) == 2
    assert dyadic_band(2.0 ** -7) == 8
    assert dyadic_band(3.0 ** -6) == 10
    with pytest.raises(ParameterError):
        dyadic_band(0.0)
    with pytest.raises(ParameterError):
        dyadic_band(1.5)


def test_selection_common_radius():
    pts = np.exp(2j * np.pi * np.arange(40) / 40)
    radii = {complex(z): [2.0 ** -7] for z in pts}
    bands = dyadic_scale_selection(radii, 0.05)
    assert len(bands) == 1
    b = bands[0]
    assert b.band[0] < 2.0 ** -7 <= b.band[1]
    dis = greedy_disjoint_balls(BallCover(pts, np.full(40, 5 * 2.0 ** -7)))
    assert b.n_disjoint == len(dis) and b.count == 40


def test_selection_pigeonhole():
    rng = make_rng(5)
    n = 900
    pts = rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)
    r = 2.0 ** -rng.uniform(1, 10, n)
    bands = dyadic_scale_selection({complex(z): [float(x)] for z, x in zip(pts, r)})
    assert max(b.count for b in bands) >= n / 9
    assert sum(b.count for b in bands) == n


def test_selection_cantor():
    c = cantor_points(6, "left")
    bands = dyadic_scale_selection({complex(z): [3.0 ** -6] for z in c})
    assert bands[0].m == 10
    assert bands[0].count == 64


def test_selection_empty_and_scale_invariant():
    assert dyadic_scale_selection({0j: [0.1], 1 + 0j: [0.01]}) == []
    with pytest.raises(ParameterError):
        DyadicScale(0, 1, BallCover(np.array([0j]), np.array([1.0])))


# -- compression sets ------------------------------------------------------

def test_threshold_exponent():
    assert threshold_exponent(1, 1.9, 0.1, 0.0) == pytest.approx(3.0)
    assert threshold_exponent(2, math.inf, 0.5, 0.05) == 4


@pytest.mark.parametrize("s", [0.1, 0.5, 1.0, 1.9])
def test_compression_empty_for_stretch_and_identity(s):
    assert len(compression_set(radial_stretch(2), 2, math.inf, s)) == 0
    assert len(compression_set(identity(), 1, 1.9, s, boundary_samples=1024)) == 0


def test_cardioid_compression_near_cusp():
    cs = compression_set(explicit_cardioid(), 1, 1.9, 0.5)
    assert len(cs) >= 1
    assert np.all(np.abs(cs.points + 1) < 0.05)
    rows = cs.to_rows()
    assert all(len(r) == 4 for r in rows)
    assert all(lam <= 2.0 ** -6 for _, _, lam, _ in rows)


def test_compression_validation():
    with pytest.raises(ParameterError):
        compression_set(identity(), 1, 2, 2.5)
    with pytest.raises(ParameterError):
        compression_set(identity(), 1, 2, 0.5, epsilon=0)
    with pytest.raises(ParameterError):
        compression_set(identity(), 1, 2, 0.5, scale_floor=1e-9)


@given(st.floats(0.05, 1.9), st.floats(0.05, 1.9))
def test_compression_monotone_in_s(s1, s2):
    lo, hi = sorted((s1, s2))
    m = explicit_cardioid()
    a = compression_set(m, 1, 1.9, lo, boundary_samples=512)
    b = compression_set(m, 1, 1.9, hi, boundary_samples=512)
    assert set(a.points.tolist()) <= set(b.points.tolist())


def test_box_scales_for():
    s = box_scales_for(4096)
    assert s[0] == 0.5
    assert s[-1] >= 2 * 2 * math.pi / 4096


# -- compression-set dimension check -------------------------------------

@pytest.mark.parametrize("s", [0.1, 0.5, 1.0])
def test_theorem2_trivial_for_stretch(s):
    rep = theorem2_check(radial_stretch(2), 2, math.inf, s)
    assert rep.passed and rep.n_points == 0
    assert rep.chain is None


def test_theorem2_cardioid():
    rep = theorem2_check(explicit_cardioid(), 1, 1.9, 0.1)
    assert rep.passed
    assert rep.s_hat <= 0.1 + 0.1
    assert rep.chain is not None and rep.chain["passed"]
    assert rep.band is not None and rep.band.disjoint.pairwise_disjoint()
    data = rep.to_json()
    assert data["band"]["m"] == rep.band.m
