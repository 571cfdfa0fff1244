import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualstream.preprocess import (
    ParcellationError,
    compute_fc,
    fit_length,
    parcellate,
    patchify,
    prepare,
    read_atlas_labels,
    standardize,
    unpatchify,
)


def test_parcellate_examples():
    assert np.array_equal(parcellate(np.array([[1.0, 1.0], [3.0, 3.0]]), np.array([1, 1])), [[2.0, 2.0]])
    x = np.random.default_rng(0).normal(size=(5, 7))
    np.testing.assert_array_equal(parcellate(x, np.arange(1, 6)), x)
    out = parcellate(np.array([[1.0], [3.0], [10.0], [20.0]]), np.array([1, 1, 2, 2]))
    assert out[:, 0].tolist() == [2.0, 15.0]


def test_parcellate_errors():
    v = np.zeros((3, 4))
    with pytest.raises(ParcellationError, match=r"empty ROIs.*\[2\]"):
        parcellate(v, np.array([1, 3, 3]))
    with pytest.raises(ParcellationError, match="out of range"):
        parcellate(v, np.array([1, 2, 5]), n_rois=3)


def test_atlas_labels_file(tmp_path):
    p = tmp_path / "atlas.txt"
    p.write_text("1\n2\n2\n1\n")
    assert read_atlas_labels(p).tolist() == [1, 2, 2, 1]


def test_standardize_examples():
    np.testing.assert_allclose(standardize(np.array([[1.0, 2.0, 3.0]]))[0], [-1.224744871391589, 0, 1.224744871391589])
    assert np.array_equal(standardize(np.full((1, 5), 4.2)), np.zeros((1, 5)))
    x = np.random.default_rng(1).normal(3, 2, size=(4, 30))
    np.testing.assert_allclose(standardize(standardize(x)), standardize(x), atol=1e-12)


def test_fit_length_examples():
    x = np.arange(2 * 230, dtype=float).reshape(2, 230)
    assert np.array_equal(fit_length(x), x[:, :200])
    y = np.ones((2, 150))
    out = fit_length(y)
    assert out.shape == (2, 200) and np.all(out[:, 150:] == 0) and np.all(out[:, :150] == 1)
    z = np.ones((2, 200))
    assert np.array_equal(fit_length(z), z)


def test_patchify_examples():
    seq = patchify(np.zeros((424, 200)))
    assert len(seq) == 4240
    row = np.arange(20.0)[None]
    one = patchify(row)
    assert len(one) == 1 and np.array_equal(one.tokens[0], row[0])
    x = np.random.default_rng(2).normal(size=(3, 60))
    seq = patchify(x, 20)
    assert np.array_equal(unpatchify(seq), x)
    # token (r, k) is series[r, kP:(k+1)P], row-major
    assert np.array_equal(seq.tokens[4], x[1, 20:40])
    assert (seq.roi_index[4], seq.patch_index[4]) == (1, 1)
    with pytest.raises(ValueError, match="does not divide"):
        patchify(x, 7)


def test_fc_examples():
    r = np.random.default_rng(3).normal(size=50)
    c = compute_fc(np.stack([r, -r]))
    assert c[0, 1] == pytest.approx(-1) and c[0, 0] == 1 and c[1, 1] == 1
    big = np.random.default_rng(4).normal(size=(5, 2000))
    off = compute_fc(big)[~np.eye(5, dtype=bool)]
    assert np.all(np.abs(off) <= 0.1)
    x = np.random.default_rng(5).normal(size=(3, 40))
    x[1] = 2.5
    c = compute_fc(x)
    assert np.all(c[1] == 0) and np.all(c[:, 1] == 0)
    assert c[0, 0] == 1 and c[2, 2] == 1


def _check_fc(c):
    assert np.max(np.abs(c - c.T)) <= 1e-6
    assert np.all(c <= 1) and np.all(c >= -1)
    d = np.diag(c)
    assert np.all((d == 1) | (d == 0))


def test_fc_invariants_100_random():
    rng = np.random.default_rng(6)
    for _ in range(100):
        n, t = rng.integers(2, 12), rng.integers(2, 80)
        x = rng.normal(size=(n, t)) * rng.uniform(0.1, 10, size=(n, 1))
        if rng.random() < 0.2:
            x[rng.integers(n)] = rng.normal()
        c = compute_fc(x)
        _check_fc(c)
        assert np.all(np.diag(c)[np.ptp(x, axis=1) > 0] == 1)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(3, 40)), elements=st.floats(-1e3, 1e3)),
       st.floats(0.01, 100), st.floats(-100, 100))
def test_fc_affine_invariance(x, a, b):
    c = compute_fc(x)
    _check_fc(c)
    y = x.copy()
    y[0] = a * x[0] + b
    np.testing.assert_allclose(compute_fc(y), c, atol=1e-6)
    y[0] = -a * x[0] + b
    flipped = compute_fc(y)
    np.testing.assert_allclose(flipped[0, 1:], -c[0, 1:], atol=1e-6)
    assert flipped[0, 0] == c[0, 0]


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(3, 40)), elements=st.floats(-1e3, 1e3)))
def test_fc_of_standardized_series(x):
    np.testing.assert_allclose(compute_fc(standardize(x)), compute_fc(x), atol=1e-6)


def test_prepare_shares_one_series():
    x = np.random.default_rng(7).normal(2, 3, size=(4, 230))
    seq, fc = prepare(x)
    assert len(seq) == 4 * 10
    np.testing.assert_allclose(fc, compute_fc(standardize(x)[:, :200]), atol=1e-12)
    np.testing.assert_allclose(unpatchify(seq), standardize(x)[:, :200])


def test_bad_series_rejected():
    with pytest.raises(ValueError):
        prepare(np.zeros((1, 200)))
    with pytest.raises(ValueError, match="non-finite"):
        prepare(np.full((2, 200), np.nan))
