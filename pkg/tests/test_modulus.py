import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from distortlab.errors import DegenerateFamilyError, ParameterError, ResolutionError, SolverError
from distortlab.geometry import GridField, GridSpec, Polyline
from distortlab.maps import explicit_cardioid, identity, radial_stretch
from distortlab.modulus import (Circle, Disk, ModulusProblem, PathFamily, Segment,
                                annulus_q_modulus, boundary_pair_regions, crossing_family,
                                discrete_modulus, family_grid, incidence_matrix,
                                modulus_inequality_check, objective_of, path_integrals,
                                radial_family, rectangle_modulus, sample_connecting_family,
                                segment_cell_lengths)


def square_problem(n, n_paths=None, weight=None):
    fam = crossing_family(Segment(0j, 1 + 0j), Segment(1j, 1 + 1j), n_paths or n)
    grid = GridSpec.covering(0, 0, 1, 1, n)
    w = None if weight is None else GridField(grid, np.full((grid.ny, grid.nx), weight))
    return ModulusProblem(fam, grid, w)


def annulus_problem(n, n_paths, r=1.0, R=2.0, q=2.0):
    fam = radial_family(0j, r, R, n_paths)
    return ModulusProblem(fam, family_grid(fam, n), None, q)


# -- analytic oracles ------------------------------------------------------

def test_annulus_oracle_values():
    assert annulus_q_modulus(1, 2) == pytest.approx(2 * math.pi / math.log(2))
    assert annulus_q_modulus(1, math.e) == pytest.approx(2 * math.pi)
    with pytest.raises(ParameterError):
        annulus_q_modulus(2, 1)
    with pytest.raises(ParameterError):
        annulus_q_modulus(1, 2, q=1.0)


def radial_kkt_modulus(r, R, q, n=10_000):
    """Discrete radial problem: min sum 2 pi t_i rho_i^q dt s.t. sum rho_i dt = 1,
    solved by its KKT conditions (rho_i proportional to t_i^(-1/(q-1)))."""
    edges = np.linspace(r, R, n + 1)
    t = 0.5 * (edges[1:] + edges[:-1])
    dt = np.diff(edges)
    rho = t ** (-1 / (q - 1))
    rho /= np.sum(rho * dt)
    return float(np.sum(2 * np.pi * t * rho ** q * dt))


def radial_minimize_modulus(r, R, q, n=200):
    """Same problem through a generic constrained minimiser."""
    edges = np.linspace(r, R, n + 1)
    t = 0.5 * (edges[1:] + edges[:-1])
    dt = np.diff(edges)
    obj = lambda x: float(np.sum(2 * np.pi * t * np.abs(x) ** q * dt))
    jac = lambda x: 2 * np.pi * t * q * np.abs(x) ** (q - 1) * np.sign(x) * dt
    cons = {"type": "eq", "fun": lambda x: np.sum(x * dt) - 1, "jac": lambda x: dt}
    x0 = np.full(n, 1 / (R - r))
    res = optimize.minimize(obj, x0, jac=jac, constraints=[cons], method="SLSQP",
                            options={"ftol": 1e-14, "maxiter": 500})
    return float(res.fun)


def test_annulus_q4_scaling_two_routes():
    q = 4.0
    for route in (radial_kkt_modulus, radial_minimize_modulus):
        a, b = route(0.1, 0.2, q), route(0.2, 0.4, q)
        assert a / b == pytest.approx(4.0, rel=1e-3)
        assert a == pytest.approx(annulus_q_modulus(0.1, 0.2, q), rel=1e-3)
    assert annulus_q_modulus(0.1, 0.2, q) / annulus_q_modulus(0.2, 0.4, q) == pytest.approx(4.0)


def test_rectangle_oracle_values():
    assert rectangle_modulus(1, 1) == 1
    assert rectangle_modulus(2, 1) == 2
    assert rectangle_modulus(1, 2) == 0.5
    with pytest.raises(ParameterError):
        rectangle_modulus(0, 1)


# -- solver ----------------------------------------------------------------

def test_square_small_grid():
    res = discrete_modulus(square_problem(65))
    assert res.value == pytest.approx(1.0, rel=1e-3)
    assert res.admissibility_slack >= -1e-6
    assert res.gap <= 1e-4 * res.value


def test_wide_rectangle():
    w, h = 2.0, 1.0
    fam = crossing_family(Segment(0j, w + 0j), Segment(1j * h, w + 1j * h), 257)
    grid = GridSpec.covering(0, 0, w, h, 257)
    assert (grid.nx, grid.ny) == (257, 129)
    res = discrete_modulus(ModulusProblem(fam, grid))
    assert res.value == pytest.approx(rectangle_modulus(w, h), rel=0.02)


def test_constant_weight_homogeneity():
    base = discrete_modulus(square_problem(33))
    tripled = discrete_modulus(square_problem(33, weight=3.0))
    assert tripled.value == pytest.approx(3 * base.value, rel=1e-12)


def test_value_matches_objective_and_constraints():
    prob = annulus_problem(65, 256)
    res = discrete_modulus(prob)
    assert res.value == pytest.approx(objective_of(prob, res.rho), rel=1e-9)
    assert path_integrals(prob.family, res.rho).min() >= 1 - 1e-6


def test_grid_refinement_decreases_error():
    sq = [abs(discrete_modulus(square_problem(n, 64)).value - 1.0) for n in (16, 32, 64)]
    assert sq[0] >= sq[1] >= sq[2] - 1e-9
    exact = annulus_q_modulus(1, 2)
    ann = [abs(discrete_modulus(annulus_problem(n, 512)).value - exact) for n in (33, 65, 129)]
    assert ann[0] > ann[1] > ann[2]


def test_overflowing_family():
    ang = np.linspace(0, 2 * np.pi, 128, endpoint=False)
    outer = PathFamily(tuple(Polyline(np.array([e, 2 * e])) for e in np.exp(1j * ang)))
    inner = PathFamily(tuple(Polyline(np.array([1.2 * e, 1.8 * e])) for e in np.exp(1j * ang)))
    grid = family_grid(outer, 65)
    m1 = discrete_modulus(ModulusProblem(outer, grid)).value
    m2 = discrete_modulus(ModulusProblem(inner, grid)).value
    assert m1 <= m2 * (1 + 1e-4)


def test_q4_annulus_solver():
    prob = annulus_problem(129, 512, 1.0, 2.0, q=4.0)
    assert discrete_modulus(prob).value == pytest.approx(annulus_q_modulus(1, 2, 4), rel=0.03)


def test_zero_weight_everywhere():
    res = discrete_modulus(square_problem(16, weight=0.0))
    assert res.value == 0.0
    assert any("zero-weight" in w for w in res.warnings)


def test_path_outside_grid():
    fam = PathFamily((Polyline(np.array([0j, 3 + 0j])),))
    with pytest.raises(ResolutionError):
        discrete_modulus(ModulusProblem(fam, GridSpec.covering(0, 0, 1, 1, 8)))


def test_solver_error_carries_history():
    with pytest.raises(SolverError) as exc:
        discrete_modulus(annulus_problem(65, 256), gap_tol=1e-15, max_iter=3)
    assert isinstance(exc.value.history, list)


def test_problem_validation_and_json():
    prob = square_problem(8)
    with pytest.raises(ParameterError):
        ModulusProblem(prob.family, prob.grid, None, 1.0)
    with pytest.raises(ParameterError):
        ModulusProblem(prob.family, prob.grid, GridField(prob.grid, -np.ones((8, 8))))
    back = ModulusProblem.from_json(json.loads(json.dumps(prob.to_json())))
    assert back.grid == prob.grid and len(back.family) == len(prob.family)
    assert discrete_modulus(back).value == pytest.approx(discrete_modulus(prob).value)


@given(st.integers(2, 48), st.integers(0, 2 ** 31))
def test_nested_families_monotone(k, seed):
    full = radial_family(0j, 1, 2, 48)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(48, size=k, replace=False))
    sub = PathFamily(tuple(full.paths[i] for i in idx))
    grid = family_grid(full, 33)
    m_sub = discrete_modulus(ModulusProblem(sub, grid)).value
    m_full = discrete_modulus(ModulusProblem(full, grid)).value
    assert m_sub <= m_full * (1 + 2e-4)


@given(st.floats(0.2, 5.0), st.integers(8, 40))
def test_solver_invariants(c, n):
    prob = square_problem(n, 12, weight=c)
    res = discrete_modulus(prob)
    assert res.admissibility_slack >= -1e-6
    assert res.value == pytest.approx(objective_of(prob, res.rho), rel=1e-9)


@given(st.complex_numbers(max_magnitude=2), st.complex_numbers(max_magnitude=2))
def test_cell_lengths_sum_to_segment_length(a, b):
    grid = GridSpec.covering(-2, -2, 2, 2, 17)
    sg, cell, length, outside, _ = segment_cell_lengths(np.array([a]), np.array([b]), grid)
    assert np.sum(length) + np.sum(outside) == pytest.approx(abs(b - a), abs=1e-12)
    assert np.all(length >= 0)


def test_incidence_matrix_shape():
    prob = square_problem(10, 5)
    A, out = incidence_matrix(prob.family, prob.grid)
    assert A.shape == (5, 100)
    assert np.allclose(A.sum(axis=1), 1.0)
    assert np.all(out == 0)


# -- families --------------------------------------------------------------

def test_square_sides_single_path():
    grid = GridSpec.covering(0, 0, 1, 1, 16)
    fam = sample_connecting_family(Segment(0j, 1j), Segment(1 + 0j, 1 + 1j), grid, 1)
    assert len(fam) == 1
    v = fam.paths[0].vertices
    assert v[0] == pytest.approx(0.5j) and v[-1] == pytest.approx(1 + 0.5j)


def test_concentric_circles_radial():
    grid = GridSpec.covering(-2, -2, 2, 2, 32)
    fam = sample_connecting_family(Circle(0j, 1), Circle(0j, 2), grid, 360)
    assert len(fam) == 360 and fam.generator["kind"] == "radial"
    assert all(abs(abs(p.vertices[0]) - 1) < 1e-12 and abs(abs(p.vertices[-1]) - 2) < 1e-12
               for p in fam.paths)


def test_boundary_pair_family_stays_in_disk():
    r = 0.1
    E, F, z = boundary_pair_regions(1.0, r)
    assert abs(z - 1) == pytest.approx(r)
    grid = GridSpec.covering(1 - 2 * r, -2 * r, 1 + r, 2 * r, 64, 0.05)
    fam = sample_connecting_family(E, F, grid, 90, seed=3, domain="disk")
    assert len(fam) == 90
    for p in fam.paths:
        assert np.all(np.abs(p.vertices) <= 1 + 1e-12)
        assert E.contains(np.array([p.vertices[0]]), tol=1e-9)[0]
        assert F.contains(np.array([p.vertices[-1]]), tol=1e-9)[0]
    assert sum(fam.generator["diversity"]["counts"]) > 0
    again = sample_connecting_family(E, F, grid, 90, seed=3, domain="disk")
    assert all(np.array_equal(a.vertices, b.vertices) for a, b in zip(fam.paths, again.paths))


def test_overlapping_regions_rejected():
    grid = GridSpec.covering(-2, -2, 2, 2, 16)
    with pytest.raises(DegenerateFamilyError):
        sample_connecting_family(Disk(0j, 1), Disk(0.5 + 0j, 1), grid, 10)


# -- inequality -----------------------------------------------------------

def test_identity_inequality_equal():
    prob = annulus_problem(65, 256)
    # same problem up to finite-difference noise in K and the Jacobian
    # areas, so the two solves agree to solver accuracy
    for mesh in ("pushforward", "uniform"):
        rep = modulus_inequality_check(identity(), prob, image_mesh=mesh)
        assert rep.lhs == pytest.approx(rep.rhs, rel=1e-6)
        assert rep.passed


def test_radial_stretch_annulus_pair():
    prob = annulus_problem(129, 1024, 0.25, 0.5)
    rep = modulus_inequality_check(radial_stretch(2), prob)
    assert rep.passed
    assert rep.lhs == pytest.approx(2 * math.pi / (2 * math.log(2)), rel=0.05)
    assert rep.rhs == pytest.approx(2 * 2 * math.pi / math.log(2), rel=0.05)


def test_cardioid_boundary_pair():
    r = 0.1
    E, F, _ = boundary_pair_regions(-1.0, r)
    x = -1.0
    grid = GridSpec.covering(x - 2 * r, -2 * r, x + 2 * r, 2 * r, 96, 0.05)
    fam = sample_connecting_family(E, F, grid, 150, seed=0, domain="disk")
    rep = modulus_inequality_check(explicit_cardioid(), ModulusProblem(fam, family_grid(fam, 96)))
    assert rep.passed
    assert np.isfinite(rep.ratio)


def test_unknown_image_mesh():
    with pytest.raises(ParameterError):
        modulus_inequality_check(identity(), square_problem(8), image_mesh="nope")
