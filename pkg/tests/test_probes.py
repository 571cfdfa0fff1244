import numpy as np
import pytest

from dualstream.harness import linear_probe, pca_features
from dualstream.harness.probes import knn_scores, ridge_scores


def test_ridge_separable_with_margin():
    rng = np.random.default_rng(0)
    y = np.array([1] * 20 + [0] * 20)
    x = rng.normal(size=(40, 5))
    x[:, 0] = np.where(y == 1, 3.0, -3.0) + 0.1 * rng.normal(size=40)
    r = linear_probe(x, y, "ridge", seed=1)
    assert r.mean("mcc") == 100


@pytest.mark.parametrize("clf", ["ridge", "knn"])
def test_noise_features_null(clf):
    mccs = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        y = np.array([1] * 26 + [0] * 30)
        mccs.append(linear_probe(rng.normal(size=(56, 8)), y, clf, seed=seed).mean("mcc"))
    assert abs(np.mean(mccs)) <= 10


def test_knn_k1_memorizes():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(15, 3))
    y = rng.integers(0, 2, 15)
    assert np.array_equal(knn_scores(x, y, x, k=1), y)


def test_knn_tie_prefers_lower_index():
    x = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    y = np.array([1, 0, 0, 1])
    # query at 0 is equidistant from all four; k=1 takes index 0, k=2 indices 0 and 1
    assert knn_scores(x, y, np.zeros((1, 1)), k=1)[0] == 1
    assert knn_scores(x, y, np.zeros((1, 1)), k=2)[0] == 0.5


def test_ridge_matches_normal_equations():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 4))
    y = rng.integers(0, 2, 30)
    t = 2.0 * y - 1
    # augmented system with an unpenalized intercept
    a = np.hstack([x, np.ones((30, 1))])
    reg = np.eye(5)
    reg[4, 4] = 0
    coef = np.linalg.solve(a.T @ a + reg, a.T @ t)
    q = rng.normal(size=(6, 4))
    np.testing.assert_allclose(ridge_scores(x, y, q), q @ coef[:4] + coef[4], atol=1e-10)


def test_ridge_dual_form_wide_features():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(12, 40))
    y = rng.integers(0, 2, 12)
    t = 2.0 * y - 1
    xc = x - x.mean(0)
    w = np.linalg.solve(xc.T @ xc + np.eye(40), xc.T @ (t - t.mean()))
    q = rng.normal(size=(3, 40))
    want = (q - x.mean(0)) @ w + t.mean()
    np.testing.assert_allclose(ridge_scores(x, y, q), want, atol=1e-9)


def test_pca_against_covariance_eigendecomposition():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(20, 7)) @ rng.normal(size=(7, 7))
    z = pca_features(x)
    assert z.shape == (20, 7)  # min(10, n - 1) capped by the feature count
    z3 = pca_features(x, 3)
    cov = np.cov(x, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    top = vecs[:, ::-1][:, :3]
    proj = (x - x.mean(0)) @ top
    for j in range(3):
        assert abs(abs(np.corrcoef(proj[:, j], z3[:, j])[0, 1]) - 1) < 1e-10
        assert np.var(z3[:, j], ddof=1) == pytest.approx(vals[::-1][j])


def test_pca_component_count_default():
    x = np.random.default_rng(6).normal(size=(8, 30))
    assert pca_features(x).shape == (8, 7)
    assert pca_features(np.random.default_rng(7).normal(size=(40, 30))).shape == (40, 10)


def test_probe_input_checks():
    with pytest.raises(ValueError, match="at least"):
        linear_probe(np.zeros((6, 2)), [0, 1] * 3, "ridge")
    with pytest.raises(ValueError, match="non-finite"):
        x = np.zeros((12, 2))
        x[0, 0] = np.nan
        linear_probe(x, [0, 1] * 6, "ridge")
    with pytest.raises(ValueError, match="classifier"):
        linear_probe(np.random.default_rng(0).normal(size=(12, 2)), [0, 1] * 6, "svm")
