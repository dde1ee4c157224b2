import numpy as np
import pytest

from sbfiml.baselines import (
    CHI2,
    CHI2_MARGINS,
    SBMML_MARGINS,
    SQ_EUCLIDEAN,
    BaselineKind,
    baseline_distance_matrix,
    chi2_train,
    sbmml_distance,
    sbmml_distance_matrix,
    sbmml_init,
    sbmml_train,
    train_baseline,
)
from sbfiml.data import Dataset, standardize
from sbfiml.geometry import chi2_distance_matrix
from sbfiml.learner import LearnerConfig, TripletSet, generate_triplets, objective, subgradient, train
from sbfiml.similarity import Calibration, build_similarity, embed_proximity, select_anchors

TRIPLES = [[0, 1, 4], [0, 2, 5], [1, 0, 6], [2, 3, 7], [3, 2, 4], [5, 6, 1]]
PAIRS = [[0, 1], [0, 2], [1, 0], [2, 3], [3, 2], [5, 6]]


def finite_difference(fn, L, h=1e-6):
    grad = np.zeros_like(L)
    for idx in np.ndindex(L.shape):
        step = np.zeros_like(L)
        step[idx] = h
        grad[idx] = (fn(L + step) - fn(L - step)) / (2 * h)
    return grad


def margins(L, X, kernel, gamma):
    Q = X @ L.T
    i, j, k = np.array(TRIPLES).T
    return kernel.rows(Q[i], Q[j]) + gamma - kernel.rows(Q[i], Q[k])


def test_sbmml_distance_scaling(rng):
    a, b = rng.uniform(size=(2, 4))
    assert sbmml_distance(np.eye(4), a, a) == 0.0
    assert sbmml_distance(np.eye(4), a, b) == pytest.approx(np.sum((a - b) ** 2))
    assert sbmml_distance(2 * np.eye(4), a, b) == pytest.approx(4 * np.sum((a - b) ** 2))
    with pytest.raises(ValueError):
        sbmml_distance(np.eye(3), a, b)


def test_sbmml_distance_is_squared_pseudometric(rng):
    L = rng.standard_normal((2, 5))
    for a, b, c in rng.uniform(size=(1000, 3, 5)):
        assert sbmml_distance(L, a, b) == pytest.approx(sbmml_distance(L, b, a), rel=1e-12)
        d = lambda u, v: np.sqrt(sbmml_distance(L, u, v))
        assert d(a, b) <= d(a, c) + d(c, b) + 1e-10


@pytest.mark.parametrize("kernel", [SQ_EUCLIDEAN, CHI2], ids=lambda k: k.name)
def test_gradient_matches_finite_differences(rng, kernel):
    cfg = LearnerConfig(gamma=0.01, alpha=1.0)
    T = TripletSet(TRIPLES, PAIRS)
    compared = 0
    while compared < 100:
        X = rng.dirichlet(np.ones(4), size=8)
        L = rng.uniform(0.2, 1.0, size=(3, 4))
        L /= L.sum(axis=0, keepdims=True)
        if np.min(np.abs(margins(L, X, kernel, cfg.gamma))) < 1e-4:
            continue
        numeric = finite_difference(lambda M: objective(M, X, T, cfg, kernel), L)
        analytic = subgradient(L, X, T, cfg, kernel)
        assert np.linalg.norm(analytic - numeric) <= 1e-4 * max(np.linalg.norm(numeric), 1e-8)
        compared += 1


def test_sbmml_train_is_unprojected_descent(rng):
    X = rng.uniform(size=(8, 5))
    T = TripletSet(TRIPLES, PAIRS)
    cfg = LearnerConfig(gamma=1.0, k_latent=3, max_iters=50, step0=0.01)
    L, report = sbmml_train(X, T, cfg)
    np.testing.assert_array_equal(sbmml_init(3, 5), np.eye(3, 5))
    assert L.shape == (3, 5)
    assert report.best_objective <= report.objective_trace[0]
    assert objective(L, X, T, cfg, SQ_EUCLIDEAN) == pytest.approx(report.best_objective, rel=1e-12)


def test_chi2_train_keeps_columns_on_simplex(rng):
    X = rng.dirichlet(np.ones(6), size=8)
    T = TripletSet(TRIPLES, PAIRS)
    cfg = LearnerConfig(gamma=1e-4, k_latent=3, max_iters=30)
    L, report = chi2_train(X, T, cfg)
    assert np.all(L.entries >= 0)
    np.testing.assert_allclose(L.entries.sum(axis=0), 1.0, atol=1e-10)
    assert report.best_objective <= report.objective_trace[0]


def test_chi2_variant_differs_only_in_distance(rng):
    X = rng.dirichlet(np.ones(6), size=8)
    T = TripletSet(TRIPLES, PAIRS)
    cfg = LearnerConfig(gamma=1e-2, k_latent=3, max_iters=20)
    L_chi2, _ = chi2_train(X, T, cfg)
    L_swapped, _ = train(X, T, cfg, kernel=CHI2)
    np.testing.assert_array_equal(L_chi2.entries, L_swapped.entries)


def test_baseline_kind_selects_representation_and_grid():
    assert BaselineKind("sbmml").representation == "proximity"
    assert BaselineKind("chi2").representation == "simplex"
    assert BaselineKind.SBMML.margins == SBMML_MARGINS
    assert BaselineKind.CHI2.margins == CHI2_MARGINS
    with pytest.raises(ValueError):
        BaselineKind("lmnn")


def test_train_baseline_dispatches_on_kind(rng):
    X = rng.dirichlet(np.ones(6), size=8)
    T = TripletSet(TRIPLES, PAIRS)
    cfg = LearnerConfig(gamma=1e-2, k_latent=3, max_iters=10)
    L, _ = train_baseline(BaselineKind.CHI2, X, T, cfg)
    np.testing.assert_array_equal(L, chi2_train(X, T, cfg)[0].entries)
    M, _ = train_baseline(BaselineKind.SBMML, X, T, cfg)
    np.testing.assert_array_equal(M, sbmml_train(X, T, cfg)[0])
    A, B = X[:3], X[3:]
    np.testing.assert_array_equal(baseline_distance_matrix(BaselineKind.CHI2, A, B), chi2_distance_matrix(A, B))
    np.testing.assert_array_equal(baseline_distance_matrix(BaselineKind.SBMML, A, B), sbmml_distance_matrix(A, B))


def test_sbmml_moves_away_from_the_identity(blobs):
    X, y = blobs([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], per_class=20, spread=1.0, seed=9)
    data, _ = standardize(Dataset(X, y))
    anchors = select_anchors(data.instances)
    sim = build_similarity("gaussian", data.instances, anchors, Calibration("shared", 1.0), tau=1.0)
    proximity = embed_proximity(data.instances, anchors, sim)
    T = generate_triplets(data, k1=3, k2=10)
    L, report = sbmml_train(proximity, T, LearnerConfig(gamma=1.0, max_iters=100))
    assert report.best_iteration > 0
    assert report.best_objective < report.objective_trace[0]
    assert not np.array_equal(L, sbmml_init(L.shape[0], L.shape[1]))
