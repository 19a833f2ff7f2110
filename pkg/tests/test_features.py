import logging

import numpy as np
import pytest

from xood.errors import ContractError, FormatError
from xood.features import (
    ALL_FEATURE_KINDS,
    FeatureKind,
    apply_power_transform,
    extract_features,
    feature_names,
    feature_width,
    fit_power_transform,
    load_power_transform,
    read_feature_csv,
    save_power_transform,
    write_feature_csv,
    yeo_johnson,
    yeo_johnson_loglik,
)
from xood.rng import Stream


def reduce_one(values, kind):
    """Per-image reduction written as plain scalar code."""
    v = values.astype(np.float64).ravel()
    if kind is FeatureKind.MINMAX:
        return [v.min(), v.max()]
    if kind is FeatureKind.MIN:
        return [v.min()]
    if kind is FeatureKind.MAX:
        return [v.max()]
    if kind is FeatureKind.POSITIVITY:
        return [(v > 0).sum() / v.size]
    if kind is FeatureKind.SUM:
        return [v.sum()]
    p = {"l1": 1, "l2": 2, "l3": 3}.get(kind.value)
    if p is not None:
        return [(np.abs(v) ** p).sum() ** (1 / p)]
    p = int(kind.value[-1])
    pos = np.maximum(v, 0.0)
    neg = np.maximum(-v, 0.0)
    return [(pos**p).sum() ** (1 / p), (neg**p).sum() ** (1 / p)]


def test_extract_matches_scalar_oracle():
    s = Stream(42)
    taps = [
        s.normal(4 * 2 * 5 * 5).astype(np.float32).reshape(4, 2, 5, 5),
        s.normal(4 * 7).astype(np.float32).reshape(4, 7),
    ]
    for kind in ALL_FEATURE_KINDS:
        got = extract_features(taps, kind)
        assert got.dtype == np.float32
        assert got.shape == (4, feature_width(kind, 2))
        want = np.array(
            [reduce_one(taps[0][i], kind) + reduce_one(taps[1][i], kind)
             for i in range(4)]
        )
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


def test_split_l2_hand_value():
    taps = [np.array([[-3.0, 4.0]], np.float32)]
    got = extract_features(taps, FeatureKind.SPLIT_L2)
    np.testing.assert_allclose(got, [[4.0, 3.0]], atol=0)
    # split norms recombine to the plain norm: (4^2 + 3^2)^0.5 = 5
    plain = extract_features(taps, FeatureKind.L2)
    np.testing.assert_allclose(plain, [[5.0]], atol=1e-6)


def test_minmax_ordering_and_names():
    taps = [np.array([[1.0, -2.0, 3.0]], np.float32)] * 2
    got = extract_features(taps, FeatureKind.MINMAX)
    np.testing.assert_array_equal(got, [[-2.0, 3.0, -2.0, 3.0]])
    assert feature_names(FeatureKind.MINMAX, 2) == [
        "layer1_min", "layer1_max", "layer2_min", "layer2_max",
    ]
    assert feature_names(FeatureKind.SPLIT_L1, 1) == [
        "layer1_l1_pos", "layer1_l1_neg",
    ]
    assert feature_names(FeatureKind.SUM, 2) == ["layer1_sum", "layer2_sum"]


def test_extract_contract_checks():
    with pytest.raises(ContractError, match="at least one"):
        extract_features([], FeatureKind.MINMAX)
    with pytest.raises(ContractError, match="batch size"):
        extract_features(
            [np.zeros((2, 3), np.float32), np.zeros((3, 3), np.float32)]
        )


def yj_reference(x, lam):
    """Textbook piecewise form, no expm1 tricks."""
    x = float(x)
    if x >= 0:
        if lam == 0:
            return np.log(x + 1.0)
        return ((x + 1.0) ** lam - 1.0) / lam
    if lam == 2:
        return -np.log(-x + 1.0)
    return -((-x + 1.0) ** (2.0 - lam) - 1.0) / (2.0 - lam)


def test_yeo_johnson_matches_reference_form():
    xs = np.array([-5.0, -1.0, -0.2, 0.0, 0.3, 1.0, np.e - 1.0, 10.0])
    for lam in (-2.0, -0.5, 0.0, 0.7, 1.0, 2.0, 3.5):
        got = yeo_johnson(xs, lam)
        want = [yj_reference(x, lam) for x in xs]
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_yeo_johnson_identities():
    x = np.linspace(-4.0, 4.0, 101)
    # lambda = 1 is the identity
    np.testing.assert_allclose(yeo_johnson(x, 1.0), x, rtol=0, atol=1e-9)
    # lambda = 0 at x = e - 1 gives exactly 1
    assert abs(yeo_johnson(np.array([np.e - 1.0]), 0.0)[0] - 1.0) < 1e-12
    # lambda = 2 at x = 1 - e gives exactly -1
    assert abs(yeo_johnson(np.array([1.0 - np.e]), 2.0)[0] + 1.0) < 1e-12


def test_yeo_johnson_monotone_and_continuous():
    x = np.linspace(-6.0, 6.0, 401)
    for lam in (-3.0, 0.0, 0.5, 2.0, 4.0):
        y = yeo_johnson(x, lam)
        assert (np.diff(y) > 0).all(), lam
    # continuity across the piecewise boundaries in lambda
    for lam0 in (0.0, 2.0):
        near = yeo_johnson(x, lam0 + 1e-9)
        at = yeo_johnson(x, lam0)
        np.testing.assert_allclose(near, at, rtol=1e-6, atol=1e-7)


def grid_argmax(col, step=0.01):
    grid = np.arange(-5.0, 5.0 + step / 2, step)
    vals = [yeo_johnson_loglik(col, lam) for lam in grid]
    return float(grid[int(np.argmax(vals))])


def test_fit_lambda_agrees_with_grid_scan():
    s = Stream(77)
    for i in range(6):
        raw = s.normal(400)
        col = np.exp(raw * 0.5) - 0.5 if i % 2 else raw**3  # skewed shapes
        pt = fit_power_transform(col.reshape(-1, 1))
        assert abs(pt.lambdas[0] - grid_argmax(col)) < 0.05


def test_fit_standardizes():
    s = Stream(5)
    x = np.stack(
        [np.exp(s.normal(500) * 0.7), s.normal(500) * 3.0 + 1.0], axis=1
    )
    pt = fit_power_transform(x)
    y = apply_power_transform(pt, x)
    assert y.dtype == np.float64
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(y.std(axis=0), 1.0, atol=1e-4)
    assert not pt.flags.any()
    # right-skewed data pulls lambda below the identity
    assert pt.lambdas[0] < 1.0


def test_fit_reduces_skewness():
    s = Stream(6)
    x = np.exp(s.normal(1000))[:, None]  # strongly right-skewed

    def skew(v):
        v = v - v.mean()
        return float((v**3).mean() / (v**2).mean() ** 1.5)

    y = apply_power_transform(fit_power_transform(x), x)
    assert abs(skew(y[:, 0])) < abs(skew(x[:, 0])) / 5


def test_constant_column_flagged(caplog):
    x = np.stack([np.full(50, 2.5), Stream(1).normal(50)], axis=1)
    with caplog.at_level(logging.WARNING, logger="xood.features"):
        pt = fit_power_transform(x)
    assert pt.flags[0] and not pt.flags[1]
    assert pt.lambdas[0] == 1.0 and pt.stds[0] == 1.0
    assert any("pinned" in r.message for r in caplog.records)
    y = apply_power_transform(pt, x)
    assert np.isfinite(y).all()
    np.testing.assert_allclose(y[:, 0], 0.0, atol=1e-12)


def test_fit_contract_checks():
    with pytest.raises(ContractError, match="2-D"):
        fit_power_transform(np.zeros(10))
    with pytest.raises(ContractError, match="at least 10 rows"):
        fit_power_transform(np.zeros((5, 2)))
    bad = np.zeros((20, 2))
    bad[3, 1] = np.nan
    with pytest.raises(ContractError, match="non-finite"):
        fit_power_transform(bad)


def test_apply_rejects_non_finite():
    pt = fit_power_transform(Stream(2).normal(40).reshape(20, 2))
    bad = np.ones((4, 2))
    bad[2, 1] = np.inf
    with pytest.raises(ContractError, match="row 2, column 1"):
        apply_power_transform(pt, bad)
    with pytest.raises(ContractError, match="does not match"):
        apply_power_transform(pt, np.ones((4, 3)))


def test_power_transform_round_trip(tmp_path):
    x = Stream(3).normal(60).reshape(30, 2) * np.array([1.0, 5.0]) + 0.3
    pt = fit_power_transform(x)
    path = tmp_path / "pt.txt"
    save_power_transform(pt, path)
    back = load_power_transform(path)
    # repr round-trips float64 exactly
    np.testing.assert_array_equal(back.lambdas, pt.lambdas)
    np.testing.assert_array_equal(back.means, pt.means)
    np.testing.assert_array_equal(back.stds, pt.stds)
    np.testing.assert_array_equal(back.flags, pt.flags)
    np.testing.assert_array_equal(
        apply_power_transform(back, x), apply_power_transform(pt, x)
    )


def test_power_transform_load_errors(tmp_path):
    p = tmp_path / "pt.txt"
    p.write_text("wrong,header\n")
    with pytest.raises(FormatError, match="header"):
        load_power_transform(p)
    p.write_text("dim,lambda,mean,std,flagged\n0,1.0,0.0\n")
    with pytest.raises(FormatError, match="line"):
        load_power_transform(p)
    p.write_text("dim,lambda,mean,std,flagged\n1,1.0,0.0,1.0,0\n")
    with pytest.raises(FormatError, match="0..d-1"):
        load_power_transform(p)


def test_feature_csv_round_trip(tmp_path):
    feats = Stream(8).normal(12).astype(np.float32).reshape(4, 3)
    names = ["layer1_min", "layer1_max", "layer2_min"]
    path = tmp_path / "f.csv"
    write_feature_csv(path, feats, names)
    got_names, got = read_feature_csv(path)
    assert got_names == names
    np.testing.assert_array_equal(got, feats)  # %.9g is lossless for float32
    with pytest.raises(ContractError, match="column names"):
        write_feature_csv(path, feats, ["a", "b"])
