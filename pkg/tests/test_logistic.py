import numpy as np
import pytest

from xood.datasets import make_blobs
from xood.errors import ContractError
from xood.features import FeatureKind, extract_features, fit_power_transform
from xood.logistic import (
    LAMBDA_GRID,
    apply_split_scaler,
    build_training_set,
    cross_validate,
    decide_l,
    fit_l_detector,
    fit_logreg,
    fit_split_scaler,
    load_l_detector,
    logreg_gradient,
    logreg_loss,
    save_l_detector,
    score_l,
    split_features,
)
from xood.network import TrainConfig, forward_with_taps, train_reference_cnn
from xood.rng import Stream


@pytest.fixture(scope="module")
def fixture():
    """Trained net, its power transform, and a labeled calibration set."""
    train = make_blobs(300, 3, 16, seed=21)
    net = train_reference_cnn(
        train.images, train.labels, TrainConfig(epochs=4, batch_size=32, seed=3)
    )
    result = forward_with_taps(net, train.images)
    feats = extract_features(result.taps, FeatureKind.MINMAX)
    correct = result.predictions == train.labels
    pt = fit_power_transform(feats[correct].astype(np.float64))
    calib = make_blobs(80, 3, 16, seed=22)
    return net, pt, calib, feats[correct].astype(np.float64)


def test_split_features_identities():
    means = np.array([1.0, -2.0])
    x = np.array([[3.0, -2.0], [0.0, 1.0]])
    out = split_features(x, means)
    np.testing.assert_array_equal(out, [[2.0, 0.0, 0.0, 0.0],
                                        [0.0, 1.0, 3.0, 0.0]])
    # the halves reconstruct the deviation and never overlap
    delta = out[:, 0::2] - out[:, 1::2]
    np.testing.assert_array_equal(delta, x - means)
    assert not (out[:, 0::2] * out[:, 1::2]).any()
    assert (out >= 0).all()
    with pytest.raises(ContractError, match="does not match"):
        split_features(x, np.zeros(3))


def test_split_scaler_standardizes_fit_matrix():
    s = Stream(1)
    fit = s.normal(500 * 3).reshape(500, 3) * 2.0 + 1.0
    source = s.normal(100 * 3).reshape(100, 3)
    scaler, standardized = fit_split_scaler(fit, source)
    np.testing.assert_allclose(scaler.raw_means, source.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(standardized.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(standardized.std(axis=0), 1.0, atol=1e-12)
    assert not scaler.flags.any()
    np.testing.assert_allclose(
        apply_split_scaler(scaler, fit), standardized, atol=1e-12
    )


def test_split_scaler_flags_constant_columns(caplog):
    # every fit value sits above the mean: all "below" columns stay zero
    fit = np.abs(Stream(2).normal(100)).reshape(100, 1) + 10.0
    source = np.zeros((20, 1))
    scaler, standardized = fit_split_scaler(fit, source)
    assert scaler.flags[1] and not scaler.flags[0]
    assert scaler.scale_stds[1] == 1.0
    assert np.isfinite(standardized).all()


def numeric_gradient(w, x, y, lam, eps=1e-6):
    g = np.zeros_like(w)
    for i in range(w.shape[0]):
        hi, lo = w.copy(), w.copy()
        hi[i] += eps
        lo[i] -= eps
        g[i] = (logreg_loss(hi, x, y, lam) - logreg_loss(lo, x, y, lam)) / (2 * eps)
    return g


def make_problem(stream, n=200, p=4):
    x = stream.normal(n * p).reshape(n, p)
    true_w = stream.normal(p + 1)
    z = true_w[0] + x @ true_w[1:]
    y = (stream.uniform(n) < 1.0 / (1.0 + np.exp(-z))).astype(np.float64)
    if y.min() == y.max():  # re-roll the rare single-class draw
        y[0] = 1.0 - y[0]
    return x, y


def test_gradient_matches_finite_differences():
    s = Stream(11)
    for _ in range(10):
        x, y = make_problem(s)
        w = s.normal(5) * 0.5
        lam = float(s.uniform(1, 0.0, 2.0)[0])
        got = logreg_gradient(w, x, y, lam)
        want = numeric_gradient(w, x, y, lam)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)


def test_loss_stays_finite_at_extreme_weights():
    x = np.array([[1000.0], [-1000.0]])
    y = np.array([1.0, 0.0])
    w = np.array([0.0, 5.0])
    assert np.isfinite(logreg_loss(w, x, y, 0.0))
    assert np.isfinite(logreg_gradient(w, x, y, 0.0)).all()


def test_solver_reaches_stationary_point():
    s = Stream(12)
    for _ in range(8):
        x, y = make_problem(s)
        lam = 10.0 ** float(s.uniform(1, -3.0, 1.0)[0])
        w = fit_logreg(x, y, lam)
        grad = logreg_gradient(w, x, y, lam)
        assert float(np.max(np.abs(grad))) < 1e-6
        # convexity: no random probe beats the solver
        best = logreg_loss(w, x, y, lam)
        for _ in range(20):
            probe = w + s.normal(w.shape[0]) * 0.3
            assert logreg_loss(probe, x, y, lam) >= best - 1e-12


def test_zero_features_give_base_rate_intercept():
    y = np.array([1.0] * 30 + [0.0] * 10)
    x = np.zeros((40, 2))
    w = fit_logreg(x, y, 1.0)
    np.testing.assert_allclose(w[1:], 0.0, atol=1e-12)
    assert 1.0 / (1.0 + np.exp(-w[0])) == pytest.approx(0.75, abs=1e-8)


def test_penalty_shrinks_weights_monotonically():
    x, y = make_problem(Stream(13), n=300)
    norms = []
    for lam in (1e-3, 1e-1, 1.0, 10.0, 100.0):
        w = fit_logreg(x, y, lam)
        norms.append(float(np.linalg.norm(w[1:])))
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_separable_data_does_not_crash():
    x = np.linspace(-1, 1, 50).reshape(-1, 1)
    y = (x[:, 0] > 0).astype(np.float64)
    w = fit_logreg(x, y, 0.0)
    assert logreg_loss(w, x, y, 0.0) < 0.05


def test_fit_logreg_contract_checks():
    x = np.zeros((10, 2))
    with pytest.raises(ContractError, match="0 or 1"):
        fit_logreg(x, np.full(10, 0.5), 1.0)
    with pytest.raises(ContractError, match="single-class"):
        fit_logreg(x, np.ones(10), 1.0)
    with pytest.raises(ContractError, match=">= 0"):
        fit_logreg(x, np.r_[np.ones(5), np.zeros(5)], -1.0)


def test_cross_validate_table_and_determinism():
    s = Stream(14)
    x, y = make_problem(s, n=250, p=3)
    fold_ids = np.arange(250) % 5
    grid = (1e-2, 1.0, 100.0)
    a = cross_validate(x, y, fold_ids, grid)
    b = cross_validate(x, y, fold_ids, grid)
    assert a.fold_losses.shape == (3, 5)
    np.testing.assert_array_equal(a.fold_losses, b.fold_losses)
    assert a.best_lambda == b.best_lambda
    assert a.best_lambda in grid
    np.testing.assert_allclose(a.mean_losses, a.fold_losses.mean(axis=1))
    assert a.mean_losses[np.searchsorted(grid, a.best_lambda)] == a.mean_losses.min()


def test_cross_validate_ties_prefer_larger_lambda():
    # with all-zero features the fit ignores lambda entirely, so every
    # grid entry produces identical held-out loss: a pure tie
    y = np.r_[np.ones(60), np.zeros(40)]
    x = np.zeros((100, 2))
    fold_ids = np.arange(100) % 4
    cv = cross_validate(x, y, fold_ids, (1e-3, 1.0, 100.0))
    assert np.ptp(cv.mean_losses) < 1e-12
    assert cv.best_lambda == 100.0


def test_cross_validate_needs_two_folds():
    with pytest.raises(ContractError, match="2 folds"):
        cross_validate(np.zeros((10, 1)), np.r_[np.ones(5), np.zeros(5)],
                       np.zeros(10))


def test_build_training_set_layout(fixture):
    net, pt, calib, _ = fixture
    ts = build_training_set(net, calib, pt, seed=123)
    m = len(calib)
    assert ts.features.shape == (5 * m, pt.dim)
    assert ts.labels.shape == (5 * m,)
    assert ts.fold_names == ("calibration", "geometric", "mixup", "noise", "blur")
    np.testing.assert_array_equal(np.unique(ts.fold_ids), np.arange(5))
    np.testing.assert_array_equal(ts.fold_ids[:m], 0)
    for fold in range(5):
        assert (ts.fold_ids == fold).sum() == m
    # fold 0 must be the undistorted calibration data
    result = forward_with_taps(net, calib.images)
    want_labels = (result.predictions == calib.labels).astype(np.float64)
    np.testing.assert_array_equal(ts.labels[:m], want_labels)
    # repeatable
    ts2 = build_training_set(net, calib, pt, seed=123)
    np.testing.assert_array_equal(ts.features, ts2.features)
    np.testing.assert_array_equal(ts.labels, ts2.labels)
    # distorted folds contain mistakes; clean fold is mostly right
    assert ts.labels[:m].mean() > 0.9
    assert ts.labels[m:].mean() < ts.labels[:m].mean()


def test_fit_l_detector_end_to_end(fixture):
    net, pt, calib, means_source = fixture
    ts = build_training_set(net, calib, pt, seed=9)
    det, cv = fit_l_detector(ts, means_source, grid=(1e-2, 1.0, 100.0))
    assert det.reg_lambda == cv.best_lambda
    assert det.threshold is not None
    scores = score_l(det, ts.features)
    assert scores.min() >= 0.0 and scores.max() <= 1.0
    m = len(calib)
    accepted = decide_l(det, ts.features[:m])
    assert 0.90 <= accepted.mean() <= 0.96  # threshold targets 95%
    # weights order: intercept + one pair per feature dimension
    assert det.weights.shape == (2 * pt.dim + 1,)


def test_l_detector_round_trip(tmp_path, fixture):
    net, pt, calib, means_source = fixture
    ts = build_training_set(net, calib, pt, seed=9)
    det, _ = fit_l_detector(ts, means_source, grid=(1.0,))
    save_l_detector(det, tmp_path)
    back = load_l_detector(tmp_path)
    assert back.reg_lambda == det.reg_lambda
    assert back.threshold == pytest.approx(det.threshold, rel=1e-6)
    np.testing.assert_allclose(
        score_l(back, ts.features), score_l(det, ts.features), atol=1e-4
    )


def test_l_detector_load_rejects_mismatched_weights(tmp_path, fixture):
    net, pt, calib, means_source = fixture
    ts = build_training_set(net, calib, pt, seed=9)
    det, _ = fit_l_detector(ts, means_source, grid=(1.0,))
    save_l_detector(det, tmp_path)
    from xood.xten import write_tensor

    write_tensor(tmp_path / "weights.xten", np.zeros(3, np.float32))
    with pytest.raises(ContractError, match="width"):
        load_l_detector(tmp_path)
