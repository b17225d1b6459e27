import json

import numpy as np
import pytest

from distortlab.conformal import (ConformalSolution, bilip_constant, circle_boundary,
                                  conformality_defect, cusp_solution, ellipse_boundary,
                                  ellipse_polynomial_oracle, eval_disk_point, polygon_radial,
                                  solve_correspondence)
from distortlab.errors import DomainError, ParameterError, ReanchorError
from distortlab.geometry import PolygonalDomain, regular_polygon

TH = 2 * np.pi * np.arange(64) / 64
TEST_POINTS = np.concatenate([r * np.exp(1j * TH) for r in (0.3, 0.6, 0.9)] + [[0j]])


@pytest.fixture(scope="module")
def disk():
    return solve_correspondence(circle_boundary(), 256)


@pytest.fixture(scope="module")
def ellipse():
    return solve_correspondence(ellipse_boundary(1.0, 0.5), 512)


@pytest.fixture(scope="module")
def cusp():
    return {n: cusp_solution(1.5, n) for n in (128, 256, 512, 1024)}


def test_disk_to_disk_is_identity(disk):
    z = np.array([0.3 + 0.1j, 0.5j, -0.9, np.exp(1j)])
    assert np.max(np.abs(eval_disk_point(disk, z) - z)) < 1e-9
    assert bilip_constant(disk)[0] == pytest.approx(1.0, abs=1e-9)


def test_eval_outside_disk(disk):
    with pytest.raises(DomainError):
        eval_disk_point(disk, np.array([1.1 + 0j]))


def test_mode_count_validation():
    with pytest.raises(ParameterError):
        solve_correspondence(circle_boundary(), 100)
    with pytest.raises(ParameterError):
        solve_correspondence(circle_boundary(), 32)


def test_ellipse_against_polynomial_oracle(ellipse):
    oracle = ellipse_polynomial_oracle(1.0, 0.5)
    pts = np.concatenate([TEST_POINTS, np.exp(1j * TH)])
    assert np.max(np.abs(ellipse(pts) - oracle(pts))) < 1e-6
    assert ellipse.residual <= 1e-8


def test_ellipse_bilipschitz_bounded(ellipse):
    L, _ = bilip_constant(ellipse, 10_000)
    assert 1 <= L <= 4


def test_mean_value_property(ellipse, cusp):
    t = 2 * np.pi * np.arange(4096) / 4096
    for sol in (ellipse, cusp[1024]):
        mean = np.mean(sol(np.exp(1j * t)))
        assert abs(mean - sol(np.array([0j]))[0]) < 1e-6


def test_conformality_defect(ellipse, cusp):
    for sol in (ellipse, cusp[1024]):
        assert np.max(conformality_defect(sol, TEST_POINTS[np.abs(TEST_POINTS) < 0.95])) < 1e-3


def test_correspondence_invariants(cusp):
    sol = cusp[1024]
    sigma = sol.correspondence.sigma
    assert len(sigma) == len(sol.correspondence.theta)
    assert np.all(np.diff(sigma) > 0)
    # boundary images lie on the target polyline within a node spacing
    target = sol.target
    w = sol(np.exp(1j * np.linspace(0, 2 * np.pi, 200, endpoint=False)))
    v = target.vertices
    spacing = np.max(np.abs(np.diff(np.concatenate([v, v[:1]]))))
    a, b = target.outer.segments
    d = b - a
    t = np.clip(((w[:, None] - a[None, :]) * np.conj(d[None, :])).real / np.abs(d) ** 2, 0, 1)
    dist = np.min(np.abs(w[:, None] - (a + t * d)), axis=1)
    assert dist.max() <= spacing


def test_cusp_normalisation_and_bilip(cusp):
    sol = cusp[1024]
    assert abs(eval_disk_point(sol, np.array([-1.0 + 0j]))[0]) < 1e-6
    assert sol.residual <= 1e-8
    assert np.isfinite(sol.bilip_estimate) and sol.bilip_estimate < 20
    L1, _ = bilip_constant(sol, 2000)
    L2, _ = bilip_constant(sol, 4000)
    assert abs(L2 - L1) <= 0.05 * L1


def _doubling_diffs(s, modes, n_nodes=24576):
    sols = [cusp_solution(s, n, n_nodes=n_nodes) for n in modes]
    return [np.max(np.abs(b(TEST_POINTS) - a(TEST_POINTS))) for a, b in zip(sols, sols[1:])]


@pytest.mark.parametrize("s", [1.2, 1.35, 1.5])
def test_cusp_mode_doubling(s):
    diffs = _doubling_diffs(s, (128, 256, 512, 1024))
    assert all(d1 < d0 for d0, d1 in zip(diffs, diffs[1:]))


def test_cusp_mode_doubling_refined_boundary():
    # with 24576 boundary vertices the differences level off near 1e-8 past
    # 2048 modes; a finer boundary keeps them decreasing
    diffs = _doubling_diffs(1.5, (512, 1024, 2048, 4096, 8192), n_nodes=98304)
    assert all(d1 < d0 for d0, d1 in zip(diffs, diffs[1:]))
    assert diffs[-1] < 1e-9


def test_json_roundtrip(cusp):
    sol = cusp[256]
    back = ConformalSolution.from_json(json.dumps(sol.to_json()))
    assert np.max(np.abs(back(TEST_POINTS) - sol(TEST_POINTS))) < 1e-12
    assert back.to_json()["schema"] == "distortlab.conformal.v1"


def test_cache_dir(tmp_path):
    a = cusp_solution(1.35, 256, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    from distortlab import conformal

    conformal._MEMO.clear()
    b = cusp_solution(1.35, 256, cache_dir=tmp_path)
    assert np.max(np.abs(a(TEST_POINTS) - b(TEST_POINTS))) < 1e-12


def test_polygon_target_square():
    sq = regular_polygon(4, 1.0)
    sol = solve_correspondence(sq, 512, tol=1e-8)
    assert abs(sol(np.array([0j]))[0]) < 1e-6
    assert sol.residual <= 1e-8


def test_reanchor_error():
    # a hooked polygon that is not star-shaped about any candidate anchor
    v = [0, 3, 3 + 3j, 0 + 3j, 0 + 2j, 2 + 2j, 2 + 1j, 0 + 1j]
    dom = PolygonalDomain.from_vertices(v, orient=True)
    with pytest.raises(ReanchorError):
        polygon_radial(dom, complex(np.mean(dom.vertices)))
