import math

import numpy as np
import pytest

from sbfiml.errors import NumericalError
from sbfiml.geometry import (
    MetricMatrix,
    TransformL,
    chi2_distance,
    compare_pullback_forms,
    equidistance_samples,
    fim_simplex,
    fisher_distance,
    fisher_distance_matrix,
    hellinger_distance,
    lemma2_ratio,
    parametric_chi2_distance,
    parametric_chi2_gradient,
    parametric_fisher_distance,
    parametric_fisher_gradient,
    principal_directions,
    pullback_metric_learned,
    pullback_metric_P,
    pullback_metric_P_closed_form,
    pullback_metric_Q,
    pullback_via_coordinates,
    simplex_jacobian,
    straight_line_distance,
)
from sbfiml.similarity import AnchorSet, SimilarityConfig, embed_simplex


def central_difference(fn, L, h=1e-6):
    grad = np.zeros_like(L)
    for idx in np.ndindex(L.shape):
        step = np.zeros_like(L)
        step[idx] = h
        grad[idx] = (fn(L + step) - fn(L - step)) / (2 * h)
    return grad


def random_stochastic(rng, k, m):
    L = rng.uniform(0.2, 1.0, size=(k, m))
    return L / L.sum(axis=0, keepdims=True)


def shared_gaussian(m, sigma=1.0):
    return SimilarityConfig("gaussian", sigma=np.full(m, sigma))


def test_fisher_distance_extremes():
    p = np.array([0.2, 0.3, 0.5])
    assert fisher_distance(p, p) == 0.0
    assert fisher_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        fisher_distance([0.5, 0.5], [1.0, 0.0, 0.0])


def test_fisher_distance_matches_cosine_form(rng):
    P = rng.dirichlet(np.ones(6), size=200)
    Q = rng.dirichlet(np.ones(6), size=200)
    for p, q in zip(P, Q):
        expected = 2 * math.acos(min(1.0, float(np.sum(np.sqrt(p * q)))))
        assert fisher_distance(p, q) == pytest.approx(expected, abs=1e-10)
    D = fisher_distance_matrix(P[:5], Q[:4])
    assert D[2, 3] == pytest.approx(fisher_distance(P[2], Q[3]), abs=1e-10)


def test_fisher_distance_is_a_metric(rng):
    P = rng.dirichlet(np.full(5, 0.7), size=(10_000, 3))
    for p, q, r in P:
        d_pq, d_qp = fisher_distance(p, q), fisher_distance(q, p)
        assert d_pq == d_qp
        assert d_pq <= fisher_distance(p, r) + fisher_distance(r, q) + 1e-12


def test_fisher_is_twice_hellinger_locally(rng):
    p = rng.dirichlet(np.ones(4))
    q = p + 1e-6 * np.array([1.0, -1.0, 0.5, -0.5])
    assert fisher_distance(p, q) / hellinger_distance(p, q) == pytest.approx(2.0, rel=1e-6)


def test_chi2_distance_values():
    assert chi2_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)
    assert chi2_distance([0.5, 0.5, 0.0], [0.5, 0.5, 0.0]) == 0.0
    assert chi2_distance([0.25, 0.75], [0.75, 0.25]) == pytest.approx(0.25)


def test_parametric_fisher_gradient_matches_finite_differences(rng):
    for _ in range(100):
        L = random_stochastic(rng, 3, 5)
        p, q = rng.dirichlet(np.ones(5), size=2)
        numeric = central_difference(lambda M: parametric_fisher_distance(M, p, q), L)
        analytic = parametric_fisher_gradient(L, p, q)
        assert np.linalg.norm(analytic - numeric) <= 1e-4 * max(np.linalg.norm(numeric), 1e-8)


def test_parametric_chi2_gradient_matches_finite_differences(rng):
    for _ in range(100):
        L = random_stochastic(rng, 4, 3)
        p, q = rng.dirichlet(np.ones(3), size=2)
        numeric = central_difference(lambda M: parametric_chi2_distance(M, p, q), L)
        analytic = parametric_chi2_gradient(L, p, q)
        assert np.linalg.norm(analytic - numeric) <= 1e-4 * max(np.linalg.norm(numeric), 1e-8)


def explicit_fisher_gradient(L, p, q, eps=1e-12):
    a = np.maximum(L @ p, eps)
    b = np.maximum(L @ q, eps)
    u = float(np.sum(np.sqrt(np.clip(L @ p, 0, None) * np.clip(L @ q, 0, None))))
    if u >= 1 - eps:
        return np.zeros_like(L)
    return -(2 / math.sqrt(1 - u * u)) * 0.5 * (np.outer(np.sqrt(b / a), p) + np.outer(np.sqrt(a / b), q))


def test_parametric_fisher_gradient_follows_the_arccos_form(rng):
    for _ in range(50):
        L = random_stochastic(rng, 4, 6)
        p, q = rng.dirichlet(np.ones(6), size=2)
        np.testing.assert_allclose(parametric_fisher_gradient(L, p, q), explicit_fisher_gradient(L, p, q),
                                   rtol=1e-12, atol=1e-14)
    L = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.0, 0.0, 0.0]])
    p, q = np.array([0.7, 0.2, 0.1]), np.array([0.1, 0.6, 0.3])
    np.testing.assert_allclose(parametric_fisher_gradient(L, p, q), explicit_fisher_gradient(L, p, q),
                               rtol=1e-12)


def test_parametric_fisher_distance_off_the_simplex_uses_arccos(rng):
    L = 1.3 * random_stochastic(rng, 3, 4)
    p, q = rng.dirichlet(np.ones(4), size=2)
    u = float(np.sum(np.sqrt((L @ p) * (L @ q))))
    assert parametric_fisher_distance(L, p, q) == pytest.approx(2 * math.acos(min(u, 1.0)), abs=1e-12)


def test_single_latent_row_has_zero_fisher_gradient(rng):
    L = np.ones((1, 5))
    p, q = rng.dirichlet(np.ones(5), size=2)
    np.testing.assert_array_equal(parametric_fisher_gradient(L, p, q), 0.0)


def test_parametric_fisher_gradient_is_zero_at_identical_inputs():
    L = np.full((2, 3), 0.5)
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(parametric_fisher_gradient(L, p, p), 0.0)


def test_metric_and_transform_validation():
    with pytest.raises(ValueError):
        MetricMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        MetricMatrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        TransformL(np.array([[0.5, -0.1], [0.5, 1.1]]))
    with pytest.raises(ValueError):
        TransformL(np.array([[0.5, 0.5], [0.4, 0.5]]))
    L = TransformL(np.array([[0.25, 1.0], [0.75, 0.0]]))
    np.testing.assert_allclose(L.apply(np.array([0.5, 0.5])), [0.625, 0.375])


def test_fim_simplex_closed_form():
    G = fim_simplex([0.2, 0.3]).entries
    np.testing.assert_allclose(G, [[5.0 + 2.0, 2.0], [2.0, 1 / 0.3 + 2.0]])
    with pytest.raises(ValueError):
        fim_simplex([0.6, 0.4])


def test_pullback_P_matches_closed_form_for_shared_width(rng):
    anchors = AnchorSet(rng.uniform(-1, 1, size=(6, 2)))
    cfg = shared_gaussian(6, sigma=0.8)
    for x in rng.uniform(-1, 1, size=(20, 2)):
        general = pullback_metric_P(x, anchors, cfg).entries
        closed = pullback_metric_P_closed_form(x, anchors, cfg).entries
        np.testing.assert_allclose(general, closed, rtol=1e-8, atol=1e-12 * np.abs(closed).max())
        assert compare_pullback_forms(x, anchors, cfg) <= 1e-8


def test_pullback_P_equals_fim_in_affine_coordinates(rng):
    anchors = AnchorSet(rng.uniform(-1, 1, size=(5, 2)))
    cfg = shared_gaussian(5, sigma=1.5)
    x = np.array([0.1, -0.2])
    mass, jacobian = simplex_jacobian(x, anchors, cfg)
    via_theta = pullback_via_coordinates(jacobian[:-1], mass[:-1]).entries
    np.testing.assert_allclose(via_theta, pullback_metric_P(x, anchors, cfg).entries, rtol=1e-8)


def test_angular_pullback_uses_numerical_jacobian(rng):
    anchors = AnchorSet(np.array([[1.0, 0.2], [0.3, 1.0], [-1.0, 0.5], [0.4, -1.0]]))
    cfg = SimilarityConfig("angular")
    G = pullback_metric_P(np.array([0.7, 0.4]), anchors, cfg)
    assert G.dim == 2
    assert np.all(np.linalg.eigvalsh(G.entries) >= -1e-10)
    assert pullback_metric_Q(np.array([0.7, 0.4]), anchors, cfg).dim == 2


def test_collinear_anchors_leave_orthogonal_direction_null_for_P_only(rng):
    anchors = AnchorSet(np.stack([np.linspace(-1, 1, 5), np.zeros(5)], axis=1))
    cfg = shared_gaussian(5, sigma=2.0)
    v_perp = np.array([0.0, 1.0])
    for x in rng.uniform(-1, 1, size=(100, 2)):
        G_P = pullback_metric_P(x, anchors, cfg).entries
        assert np.linalg.norm(G_P @ v_perp) <= 1e-10 * np.linalg.norm(G_P)
        if abs(x[1]) > 1e-3:
            assert pullback_metric_Q(x, anchors, cfg).quadratic_form(v_perp) > 0


def test_learned_pullback_with_identity_is_pullback_P(rng):
    anchors = AnchorSet(rng.uniform(-1, 1, size=(4, 2)))
    cfg = shared_gaussian(4)
    x = np.array([0.3, 0.1])
    learned = pullback_metric_learned(x, anchors, cfg, np.eye(4)).entries
    np.testing.assert_allclose(learned, pullback_metric_P(x, anchors, cfg).entries, rtol=1e-12)
    merged = pullback_metric_learned(x, anchors, cfg, np.ones((1, 4)))
    np.testing.assert_allclose(merged.entries, 0.0, atol=1e-12)


def test_straight_line_distance():
    assert straight_line_distance([0, 0], [3, 4], np.eye(2)) == pytest.approx(5.0)
    assert straight_line_distance([0, 0], [1, 0], np.diag([4.0, 1.0])) == pytest.approx(2.0)


def test_lemma2_ratio_tends_to_one(rng):
    improving = 0
    for _ in range(50):
        anchors = AnchorSet(rng.uniform(-1, 1, size=(5, 2)))
        cfg = shared_gaussian(5, sigma=2.0)
        x = rng.uniform(-0.5, 0.5, size=2)
        v = rng.standard_normal(2)
        v /= np.linalg.norm(v)
        errors = [abs(lemma2_ratio(x, v, h, anchors, cfg) - 1.0) for h in (1e-2, 1e-3, 1e-4)]
        assert errors[1] <= 1e-2
        if errors[0] > errors[1] > errors[2]:
            improving += 1
    assert improving >= 45


def test_lemma2_ratio_undefined_in_null_direction():
    anchors = AnchorSet(np.stack([np.linspace(-1, 1, 4), np.zeros(4)], axis=1))
    cfg = shared_gaussian(4)
    assert lemma2_ratio([0.2, 0.4], [0.0, 1.0], 1e-3, anchors, cfg) is None
    with pytest.raises(ValueError):
        lemma2_ratio([0.2, 0.4], [1.0, 0.0], 0.0, anchors, cfg)


def test_principal_directions_sign_and_order():
    U = principal_directions(np.diag([1.0, 3.0]), 2)
    np.testing.assert_allclose(U, [[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(principal_directions(np.eye(3), 2), np.eye(3)[:, :2])
    with pytest.raises(ValueError):
        principal_directions(np.eye(2), 3)


def test_principal_direction_maximizes_weighted_anchor_variance(rng):
    grid = np.deg2rad(np.arange(180))
    directions = np.stack([np.cos(grid), np.sin(grid)], axis=1)
    checked = 0
    while checked < 100:
        anchors = AnchorSet(rng.uniform(-1, 1, size=(6, 2)))
        cfg = shared_gaussian(6, sigma=float(rng.uniform(0.5, 2.0)))
        x = rng.uniform(-1, 1, size=2)
        G = pullback_metric_P(x, anchors, cfg).entries
        values = np.linalg.eigvalsh(G)
        if values[1] - values[0] < 0.05 * values[1]:
            continue
        mass = embed_simplex(x, anchors, cfg)[0]
        centered = anchors.anchors - mass @ anchors.anchors
        spread = np.sum(mass[None, :] * (directions @ centered.T) ** 2, axis=1)
        best = directions[np.argmax(spread)]
        u = principal_directions(G, 1)[:, 0]
        cosine = min(1.0, abs(float(u @ best)))
        assert math.degrees(math.acos(cosine)) <= 2.0
        assert u[0] >= 0 or abs(u[0]) <= 1e-12
        checked += 1


def test_equidistance_curve_on_metric_ellipse():
    x0 = np.array([1.0, -1.0])
    G = np.array([[4.0, 1.0], [1.0, 2.0]])
    curve = equidistance_samples(x0, G, radius=0.5, n_samples=24)
    offsets = curve.points - x0
    np.testing.assert_allclose(np.einsum("ij,jk,ik->i", offsets, G, offsets), 0.25, rtol=1e-10)
    assert curve.unbounded_directions == []


def test_equidistance_curve_reports_null_direction():
    curve = equidistance_samples([0.0, 0.0], np.diag([1.0, 0.0]), radius=1.0, n_samples=8)
    assert len(curve.unbounded_directions) == 1
    np.testing.assert_allclose(np.abs(curve.unbounded_directions[0]), [0.0, 1.0])
    np.testing.assert_allclose(curve.points[:, 1], 0.0)
    with pytest.raises(ValueError):
        equidistance_samples(np.zeros(3), np.eye(3), 1.0, 8)


def test_angular_pullback_at_boundary_raises():
    anchors = AnchorSet(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(NumericalError):
        pullback_metric_P(np.array([1.0, 0.0]), anchors, SimilarityConfig("angular"))


def test_pullback_P_rank_is_bounded_by_anchor_affine_dimension(rng):
    plane = rng.uniform(-1, 1, size=(7, 2))
    coplanar = np.column_stack([plane, 0.3 * plane[:, 0] - 0.2 * plane[:, 1] + 1.0])
    t = rng.uniform(-1, 1, size=5)
    collinear = np.outer(t, [1.0, -2.0, 0.5]) + np.array([0.2, 0.0, -0.3])
    for points, rank in ((coplanar, 2), (collinear, 1)):
        anchors = AnchorSet(points)
        cfg = shared_gaussian(anchors.m, sigma=1.5)
        for x in rng.uniform(-1, 1, size=(20, 3)):
            values = np.linalg.eigvalsh(pullback_metric_P(x, anchors, cfg).entries)
            assert np.all(values[:3 - rank] <= 1e-10 * values[-1])
