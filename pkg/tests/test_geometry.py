import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from distortlab.errors import InvalidDomainError, ParameterError
from distortlab.geometry import (GridField, GridSpec, MAX_GRID_CELLS, PolygonalDomain, Polyline,
                                 closing_arc, cusp_boundary, is_weak_starlike, make_rng,
                                 polygon_kernel, regular_polygon, signed_area, sqrt_boundary)


def square():
    return PolygonalDomain.from_vertices([0, 1, 1 + 1j, 1j])


def brute_force_kernel(domain, n=200):
    """Grid points that see every vertex through the closed domain."""
    xmin, ymin, xmax, ymax = domain.bounds
    xs = np.linspace(xmin, xmax, n)
    ys = np.linspace(ymin, ymax, n)
    pts = (xs[None, :] + 1j * ys[:, None]).ravel()
    pts = pts[domain.contains(pts, tol=1e-12)]
    ok = np.ones(len(pts), dtype=bool)
    for v in domain.vertices:
        for t in np.linspace(0.02, 0.98, 25):
            ok &= domain.contains(pts + t * (v - pts), tol=1e-9)
    return pts[ok]


def test_polyline_validation():
    with pytest.raises(ParameterError):
        Polyline(np.array([0j]))
    with pytest.raises(ParameterError):
        Polyline(np.array([0j, 0j, 1 + 0j]))
    with pytest.raises(InvalidDomainError):
        Polyline(np.array([0, 1 + 1j, 1, 1j]), closed=True)  # bow tie


def test_polyline_json_roundtrip():
    pl = Polyline(np.array([0, 1 + 0.5j, 2j]))
    data = json.loads(json.dumps(pl.to_json()))
    assert set(data) == {"vertices", "closed"}
    back = Polyline.from_json(data)
    assert np.array_equal(back.vertices, pl.vertices) and back.closed == pl.closed


def test_degenerate_polygon_rejected():
    with pytest.raises(InvalidDomainError):
        PolygonalDomain.from_vertices([0, 1, 2])


def test_square_kernel_is_square():
    k = polygon_kernel(square())
    assert signed_area(k) == pytest.approx(1.0, abs=1e-9)


def test_pentagon_kernel_is_itself():
    pent = regular_polygon(5)
    assert signed_area(polygon_kernel(pent)) == pytest.approx(pent.area, rel=1e-8)


def test_l_shape_kernel_against_brute_force():
    L = PolygonalDomain.from_vertices([0, 2, 2 + 1j, 1 + 1j, 1 + 2j, 2j])
    k = polygon_kernel(L)
    assert len(k) >= 3
    assert np.all(k.real <= 1 + 1e-9) and np.all(k.imag <= 1 + 1e-9)
    assert np.all(k.real >= -1e-9) and np.all(k.imag >= -1e-9)
    pts = brute_force_kernel(L)
    kd = PolygonalDomain.from_vertices(k)
    inside = kd.contains(pts, tol=2e-2)
    assert inside.mean() > 0.99


def test_disk_polygon_starlike():
    cert = is_weak_starlike(regular_polygon(64))
    assert cert.kind == "starlike"
    assert abs(cert.center) < 1e-9


def test_cusp_domain_starlike():
    cert = is_weak_starlike(cusp_boundary(1.5, 512))
    assert cert.kind == "starlike"


def test_hooked_corridor_is_neither():
    # S-shaped corridor with hooks at both ends
    v = [0, 3, 3 + 3j, 0 + 3j, 0 + 2j, 2 + 2j, 2 + 1j, 1 + 1j, 1 + 1.2j, 0.5 + 1.2j,
         0.5 + 0.5j, 2.5 + 0.5j, 2.5 + 2.5j, 0.5 + 2.5j, 0.5 + 2.8j, 2.8 + 2.8j, 2.8 + 0.2j,
         0.2 + 0.2j, 0.2 + 1j, 0 + 1j]
    dom = PolygonalDomain.from_vertices(v, orient=True)
    cert = is_weak_starlike(dom, n_boundary_samples=64, witness_grid=48)
    assert cert.kind == "neither"
    assert cert.failure is not None


def test_convex_polygon_weak_starlike_needs_samples():
    with pytest.raises(ParameterError):
        is_weak_starlike(square(), n_boundary_samples=2)


@pytest.mark.parametrize("s", [1.2, 1.5, 2.0])
def test_cusp_boundary_shape(s):
    dom = cusp_boundary(s, 768)
    v = dom.vertices
    assert signed_area(v) > 0
    assert np.min(np.abs(v - (-1 + 1j))) < 1e-12
    assert np.min(np.abs(v - (-1 - 1j))) < 1e-12
    assert np.min(np.abs(v)) < 1e-15
    # conjugate symmetry of the vertex set
    a = np.sort_complex(np.round(v, 12))
    b = np.sort_complex(np.round(np.conj(v), 12))
    assert np.allclose(a, b, atol=1e-12)
    assert closing_arc(s).residual < 1e-10


def test_cusp_curve_height_at_half():
    dom = cusp_boundary(2.0, 4096)
    v = dom.vertices
    upper = v[(v.imag > 0) & (v.real <= 0) & (v.real >= -1)]
    y = np.interp(-0.5, np.sort(upper.real), upper.imag[np.argsort(upper.real)])
    assert y == pytest.approx(0.25, abs=1e-4)


def test_cusp_angle_is_zero():
    v = cusp_boundary(1.5, 3072).vertices
    near = v[(np.abs(v) > 0) & (np.abs(v) < 1e-3)]
    slopes = np.abs(near.imag / near.real)
    assert slopes.max() < 0.05


def test_cusp_boundary_rejects_s():
    with pytest.raises(ParameterError):
        cusp_boundary(1.0)
    with pytest.raises(ParameterError):
        cusp_boundary(2.5)


def test_sqrt_boundary_points():
    d = cusp_boundary(1.5, 768)
    m = sqrt_boundary(d)
    w = m.vertices
    # squaring gives back the input vertex set
    sq = np.sort_complex(np.round(w ** 2, 10))
    src = np.sort_complex(np.round(d.vertices, 10))
    assert np.allclose(sq, src, atol=1e-10)
    assert np.min(np.abs(w)) < 1e-12
    target = 2 ** 0.25 * np.exp(3j * np.pi / 8)
    assert np.min(np.abs(w - target)) < 1e-12
    assert m.contains(np.array([1.0 + 0j]))[0]
    assert signed_area(w) > 0


def test_grid_limits_and_centers():
    g = GridSpec(0j, 0.5, 4, 2)
    c = g.centers()
    assert c.shape == (2, 4)
    assert c[0, 0] == 0.25 + 0.25j and c[1, 3] == 1.75 + 0.75j
    with pytest.raises(ParameterError):
        GridSpec(0j, 1.0, 3000, 3000)
    assert 2048 * 2048 <= MAX_GRID_CELLS
    with pytest.raises(ParameterError):
        GridSpec(0j, 0.0, 2, 2)
    assert GridSpec.from_json(json.loads(json.dumps(g.to_json()))) == g


def test_gridfield_csv_header():
    g = GridSpec(0j, 1.0, 2, 2)
    text = GridField(g, np.arange(4.0).reshape(2, 2)).to_csv()
    lines = text.strip().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == 3


def test_rng_is_philox_and_repeatable():
    a = make_rng(7).uniform(size=5)
    b = make_rng(7).uniform(size=5)
    assert np.array_equal(a, b)
    assert isinstance(make_rng(0).bit_generator, np.random.Philox)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=12))
def test_convex_hull_is_starlike(pts):
    import shapely

    hull = shapely.convex_hull(shapely.MultiPoint(pts))
    if hull.geom_type != "Polygon" or hull.area < 1e-3:
        return
    xy = np.asarray(hull.exterior.coords)[:-1]
    v = xy[:, 0] + 1j * xy[:, 1]
    dom = PolygonalDomain.from_vertices(v, orient=True)
    assert signed_area(dom.vertices) > 0
    k = polygon_kernel(dom)
    assert signed_area(k) == pytest.approx(dom.area, rel=1e-6)
    assert dom.contains(k, tol=1e-7).all()
    assert is_weak_starlike(dom).kind == "starlike"
