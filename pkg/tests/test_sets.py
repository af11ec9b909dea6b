import itertools

import numpy as np
import pytest

from pdzd import Ball, Box, CappedOrthant, Halfspaces, NonnegativeOrthant, Product, contains, project_point, project_tangent_cone, shrink
from pdzd.sets import EmptySetError, NotInSetError


def brute_force_projection(A, b, p):
    """Enumerate active sets of min |x-p|^2 s.t. Ax <= b; keep the feasible KKT candidate."""
    best, best_d = None, np.inf
    for k in range(len(b) + 1):
        for act in itertools.combinations(range(len(b)), k):
            act = list(act)
            if act:
                Aa = A[act]
                try:
                    mu = np.linalg.solve(Aa @ Aa.T, Aa @ p - b[act])
                except np.linalg.LinAlgError:
                    continue
                if np.any(mu < -1e-12):
                    continue
                x = p - Aa.T @ mu
            else:
                x = p.copy()
            if np.all(A @ x <= b + 1e-12) and np.linalg.norm(x - p) < best_d:
                best, best_d = x, np.linalg.norm(x - p)
    return best


def test_box_projection_clamps():
    np.testing.assert_array_equal(project_point(Box([0, 0], [1, 1]), [2, -1]), [1, 0])


def test_device_capacity_box():
    assert project_point(Box([-2.0], [2.5]), [3.0])[0] == 2.5


def test_halfspace_projection_matches_enumeration():
    A = np.array([[1.0, 1.0], [-1.0, 0.0]])
    b = np.array([1.0, 0.0])
    got = project_point(Halfspaces(A, b), [1.0, 1.0])
    np.testing.assert_allclose(got, brute_force_projection(A, b, np.array([1.0, 1.0])), atol=1e-12)
    np.testing.assert_allclose(got, [0.5, 0.5], atol=1e-12)


def test_halfspace_dykstra_many_rows():
    rng = np.random.default_rng(5)
    for _ in range(20):
        A = rng.normal(size=(5, 3))
        b = rng.uniform(0.1, 1.0, 5)
        p = rng.normal(scale=3, size=3)
        np.testing.assert_allclose(project_point(Halfspaces(A, b), p), brute_force_projection(A, b, p), atol=1e-8)


def test_interior_tangent_cone_is_identity():
    np.testing.assert_array_equal(project_tangent_cone(Box([-10, -10], [10, 10]), [0, 0], [3, -7]), [3, -7])


def test_box_face_tangent_cone():
    np.testing.assert_array_equal(project_tangent_cone(Box([0, 0], [1, 1]), [0, 0.5], [-1, 2]), [0, 2])


def test_ball_tangent_cone_removes_radial_part():
    np.testing.assert_allclose(project_tangent_cone(Ball([0, 0], 1.0), [1, 0], [1, 1]), [0, 1], atol=1e-15)


def test_tangent_cone_requires_membership():
    with pytest.raises(NotInSetError):
        project_tangent_cone(Box([0], [1]), [1.1], [1.0])


def test_orthant_tangent_cone():
    np.testing.assert_array_equal(project_tangent_cone(NonnegativeOrthant(3), [0, 1, 0], [-1, -1, 2]), [0, -1, 2])


def test_shrink_box_by_dither_amplitude():
    s = shrink(Box([0.0], [1.0]), 0.025)
    np.testing.assert_allclose([s.lower[0], s.upper[0]], [0.025, 0.975])


def test_zero_shrink_is_identity():
    for S in (Box([0, 0], [1, 2]), Ball([1, 1], 2.0), Halfspaces([[1.0, 1.0]], [1.0])):
        T = shrink(S, 0.0)
        rng = np.random.default_rng(0)
        for p in rng.normal(scale=3, size=(50, 2)):
            np.testing.assert_allclose(T.project(p), S.project(p), atol=1e-12)


def test_shrunken_halfspace_contains_perturbations():
    S = Halfspaces([[1.0, 1.0]], [1.0])
    T = shrink(S, 0.1)
    assert T.offsets[0] == pytest.approx(1 - 0.1 * np.sqrt(2))
    rng = np.random.default_rng(1)
    for _ in range(1000):
        y = T.project(rng.normal(scale=3, size=2) + 5)  # lands on the shrunken boundary
        u = rng.normal(size=2)
        assert S.contains(y + 0.1 * u / np.linalg.norm(u), tol=1e-12)


def test_orthants_do_not_shrink():
    o = shrink(NonnegativeOrthant(2), 0.5)
    assert isinstance(o, NonnegativeOrthant) and o.dim == 2
    c = shrink(CappedOrthant(2, 10.0), 0.5)
    assert isinstance(c, CappedOrthant) and c.cap == 10.0


def test_shrink_to_empty_raises():
    with pytest.raises(EmptySetError):
        shrink(Box([0.0], [0.04]), 0.025)
    with pytest.raises(EmptySetError):
        shrink(Ball([0.0], 0.01), 0.025)


def test_contains_tolerance():
    assert contains(Box([0], [1]), [0.5], 0)
    assert contains(Box([0], [1]), [1 + 1e-9], 1e-8)
    p = np.array([2.6, 0.0])
    assert not contains(Ball([0, 0], 2.5), p, 1e-8)


def test_invalid_sets_rejected():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    with pytest.raises(ValueError):
        Ball([0.0], -1.0)
    with pytest.raises(ValueError):
        Halfspaces([[0.0, 0.0]], [1.0])
    with pytest.raises(EmptySetError):
        Halfspaces([[1.0], [-1.0]], [0.0, -1.0])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        project_point(Box([0, 0], [1, 1]), [1.0, 2.0, 3.0])


def test_product_is_factorwise():
    P = Product([Box([0], [1]), Ball([0, 0], 1.0)])
    assert P.dim == 3
    np.testing.assert_allclose(P.project([2, 3, 4]), [1, 0.6, 0.8])
    T = shrink(P, 0.1)
    np.testing.assert_allclose(T.project([2, 3, 4]), [0.9, 0.54, 0.72])


def test_capped_orthant_projection():
    np.testing.assert_array_equal(CappedOrthant(3, 2.0).project([-1, 1, 5]), [0, 1, 2])
