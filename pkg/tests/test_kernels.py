import numpy as np
import pytest

from ipmplan import kernels as K
from ipmplan._accel import USE_NUMBA


def test_project_points_variants_agree():
    rng = np.random.default_rng(0)
    poly = np.cumsum(rng.normal(size=(60, 2)), axis=0)
    poly_s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(poly, axis=0).T))])
    pts = rng.uniform(poly.min(), poly.max(), size=(200, 2))
    d1, s1 = K._project_points_nb(pts, poly, poly_s)
    d2, s2 = K._project_points_py(pts, poly, poly_s)
    assert np.array_equal(d1, d2) and np.array_equal(s1, s2)


def test_project_points_brute_force():
    poly = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    poly_s = np.array([0.0, 10.0, 20.0])
    d, s = K.project_points(np.array([[5.0, 3.0], [12.0, 5.0]]), poly, poly_s)
    assert d == pytest.approx([3.0, 2.0]) and s == pytest.approx([5.0, 15.0])


def test_rect_overlap_variants_agree():
    rng = np.random.default_rng(1)
    for _ in range(500):
        args = (*rng.uniform(-4, 4, 2), rng.uniform(-3, 3), 4.5, 2.0,
                *rng.uniform(-4, 4, 2), rng.uniform(-3, 3), 4.5, 2.0)
        assert bool(K._rect_overlap_nb(*args)) == bool(K._rect_overlap_py(*args))


@pytest.mark.parametrize("layers", [4, 12])
def test_search_variants_agree(layers):
    rng = np.random.default_rng(layers)
    stations = np.concatenate([[0.0], np.cumsum(rng.uniform(2, 10, layers - 1))])
    hi = rng.uniform(5, 15, layers)
    args = (stations, np.zeros(layers), hi, hi.copy(), np.array([-3.0, -1.5, -0.5, 0.0, 0.5, 1.0, 1.5]),
            10.0, 0.1, 0.2, 1.0, 0.2, 0.2, 20000, 4.0, 0.0)
    a = K._search_nb(*args)
    b = K._search_py(*args)
    n, m = a[6], a[8]
    assert (n, m) == (b[6], b[8])
    for i in range(6):
        assert np.array_equal(a[i][:n], b[i][:n])
    assert np.array_equal(a[7][:m], b[7][:m])


def test_flag_selects_kernel():
    expect = K._search_nb if USE_NUMBA else K._search_py
    assert K.search_kernel is expect
