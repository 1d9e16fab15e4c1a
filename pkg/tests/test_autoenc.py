import numpy as np
import pytest

from geomort.autoenc import (
    TENSORS,
    EarlyStopping,
    NetParams,
    TrainConfig,
    YearPair,
    attribution_report,
    backward,
    cyclic_lr,
    expected_gradients,
    forward,
    init_params,
    l1_loss,
    load_params,
    predict,
    save_params,
    train,
    write_attribution,
    write_training_log,
)
from geomort.errors import DimensionMismatch, EmptyBaseline, EmptyTrainingSet, StaleCache


def identity_net(n, nf=13, j=0):
    w = np.zeros(nf)
    w[j] = 1.0
    eye = np.eye(n)
    z = np.zeros(n)
    return NetParams(w, 0.0, eye, z, eye, z, eye, z, eye, z)


def test_identity_stack_reproduces_feature():
    X = np.random.default_rng(0).uniform(size=(6, 13))
    assert np.array_equal(predict(identity_net(6, j=4), X), X[:, 4])


def test_zero_network():
    p = init_params(20, d1=8, d2=3)
    for k in TENSORS:
        if k == "b_c":
            p.b_c = 0.0
        else:
            getattr(p, k)[...] = 0
    assert np.array_equal(predict(p, np.ones((20, 13))), np.zeros(20))


def test_shapes_and_mismatch():
    p = init_params(30, d1=10, d2=4)
    assert predict(p, np.zeros((30, 13))).shape == (30,)
    with pytest.raises(DimensionMismatch):
        forward(p, np.zeros((29, 13)))
    with pytest.raises(ValueError):
        init_params(30, d1=30, d2=4)
    with pytest.raises(DimensionMismatch):
        NetParams(np.zeros(13), 0, np.zeros((4, 5)), np.zeros(4), np.zeros((2, 4)), np.zeros(2),
                  np.zeros((4, 2)), np.zeros(4), np.zeros((6, 4)), np.zeros(6))


def test_l1_loss(rng):
    assert l1_loss([1, 2], [1, 2]) == 0
    assert l1_loss([0, 0], [2, 4]) == 3
    a, b = rng.normal(size=20), rng.normal(size=20)
    perm = rng.permutation(20)
    assert l1_loss(a, b) == pytest.approx(l1_loss(a[perm], b[perm]), rel=1e-15)
    with pytest.raises(DimensionMismatch):
        l1_loss([1], [1, 2])


def _fd_config(seed):
    rng = np.random.default_rng(seed)
    while True:
        n = int(rng.integers(6, 41))
        d1 = int(rng.integers(3, min(16, n - 1) + 1))
        d2 = int(rng.integers(1, min(4, d1 - 1) + 1))
        p = init_params(n, 13, d1, d2, seed=int(rng.integers(2**31)))
        X = rng.uniform(0.05, 1.0, size=(n, 13))
        y, c = forward(p, X)
        # keep every ReLU input away from its kink
        if np.abs(c.a1).min() > 1e-3 and np.abs(c.a3).min() > 1e-3:
            break
    Y = y + rng.choice([-1.0, 1.0], n) * rng.uniform(0.5, 1.5, n)
    return p, X, Y


def _loss_at(p, X, Y):
    return l1_loss(predict(p, X), Y)


def gradient_check(seed, h=1e-5):
    p, X, Y = _fd_config(seed)
    y, cache = forward(p, X)
    g = backward(p, cache, Y)
    worst = 0.0
    for k in TENSORS:
        if k == "b_c":
            q = p.copy()
            q.b_c = p.b_c + h
            up = _loss_at(q, X, Y)
            q.b_c = p.b_c - h
            fd = np.array([(up - _loss_at(q, X, Y)) / (2 * h)])
            an = np.array([g[k]])
        else:
            base = getattr(p, k)
            fd = np.empty(base.shape)
            q = p.copy()
            arr = getattr(q, k)
            for idx in np.ndindex(base.shape):
                arr[idx] = base[idx] + h
                up = _loss_at(q, X, Y)
                arr[idx] = base[idx] - h
                fd[idx] = (up - _loss_at(q, X, Y)) / (2 * h)
                arr[idx] = base[idx]
            an = g[k]
        scale = max(np.abs(an).max(), np.abs(fd).max())
        if scale > 0:
            worst = max(worst, np.abs(an - fd).max() / scale)
    return worst


def test_gradient_check_small():
    for seed in range(5):
        assert gradient_check(seed) < 1e-4


def test_zero_residual_gives_zero_gradients():
    p = init_params(12, d1=6, d2=2)
    X = np.random.default_rng(1).uniform(size=(12, 13))
    y, c = forward(p, X)
    g = backward(p, c, y)
    assert all(np.all(np.asarray(g[k]) == 0) for k in TENSORS)


def test_output_layer_gradient_closed_form():
    p = init_params(10, d1=5, d2=2, seed=3)
    X = np.random.default_rng(2).uniform(size=(10, 13))
    y, c = forward(p, X)
    Y = y + np.linspace(-1, 1, 10) + 0.05
    g = backward(p, c, Y)
    np.testing.assert_array_equal(g["W_d4"], np.outer(np.sign(y - Y), c.h3) / 10)


def test_stale_cache():
    p = init_params(10, d1=5, d2=2)
    X = np.zeros((10, 13))
    y, c = forward(p, X)
    backward(p, c, y)
    with pytest.raises(StaleCache):
        backward(p.copy(), c, y)
    p.touch()
    with pytest.raises(StaleCache):
        backward(p, c, y)


def test_cyclic_lr():
    assert cyclic_lr(0, 1e-4, 1e-2, 10) == 1e-4
    assert cyclic_lr(5, 1e-4, 1e-2, 10) == 1e-2
    assert cyclic_lr(10, 1e-4, 1e-2, 10) == 1e-4
    assert cyclic_lr(2, 1e-4, 1e-2, 10) < cyclic_lr(3, 1e-4, 1e-2, 10)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=10, patience=10)
    with pytest.raises(ValueError):
        TrainConfig(lr_base=1e-2, lr_peak=1e-3)


def test_early_stopping_counter():
    es = EarlyStopping(2)
    assert not es.update(1, 5.0)
    assert not es.update(2, 5.0)  # equal: neither better nor worse
    assert not es.update(3, 6.0)
    assert not es.update(4, 4.0)
    assert not es.update(5, 4.5)
    assert es.update(6, 4.5 + 1e-9)
    assert es.best_epoch == 4


def _pairs(n=30, years=range(2010, 2016), seed=0):
    rng = np.random.default_rng(seed)
    base = rng.uniform(size=(n, 13))
    out = []
    for k, y in enumerate(years):
        X = np.clip(base + 0.02 * k * rng.standard_normal((n, 13)), 0, 1)
        Y = 10 + 8 * X[:, 1] - 3 * X[:, 3] + 0.3 * rng.standard_normal(n)
        out.append(YearPair(y, X, np.maximum(Y, 0)))
    return out


CFG = TrainConfig(max_epochs=40, patience=10, d1=12, d2=4, seed=5)


def test_forced_degradation_stops_at_patience_plus_best():
    snapshots = []

    def evaluate(p):
        snapshots.append(p.copy())
        return float(len(snapshots))  # strictly worse every epoch after the first

    res = train(_pairs(), CFG, evaluate=evaluate)
    assert len(res.log) == 11 and res.best_epoch == 1 and res.stopped_early
    assert res.params.equals(snapshots[0])

    calls = []

    def dip_then_rise(p):
        calls.append(p.copy())
        return abs(len(calls) - 4.0)

    res = train(_pairs(), CFG, evaluate=dip_then_rise)
    assert res.best_epoch == 4 and len(res.log) == 14
    assert res.params.equals(calls[3])


def test_best_params_restored():
    pairs = _pairs()
    res = train(pairs, TrainConfig(max_epochs=30, patience=29, d1=12, d2=4, seed=1))
    val = [p for p in pairs if p.target_year == 2015][0]
    v = l1_loss(predict(res.params, val.X), val.Y)
    assert v == min(r.val_l1 for r in res.log)
    assert v <= res.log[-1].val_l1
    assert res.log[res.best_epoch - 1].val_l1 == v


def test_validation_pair_excluded():
    pairs = _pairs()
    poisoned = [p if p.target_year != 2015 else YearPair(p.year, p.X, p.Y + 1000) for p in pairs]
    a = train(pairs, CFG, evaluate=lambda p: 0.0)
    b = train(poisoned, CFG, evaluate=lambda p: 0.0)
    assert a.params.equals(b.params)
    with pytest.raises(EmptyTrainingSet):
        train([pairs[4]], CFG)


def test_training_is_deterministic():
    a = train(_pairs(), CFG)
    b = train(_pairs(), CFG)
    assert a.log == b.log and a.params.equals(b.params)


@pytest.mark.parametrize("opt", ["adam", "sgd"])
def test_tiny_step_decreases_training_loss(opt):
    pair = _pairs(years=[2010])[0]
    p0 = init_params(30, 13, 12, 4, seed=2)
    cfg = TrainConfig(max_epochs=1, patience=0, lr_base=1e-7, lr_peak=1e-7, optimizer=opt)
    res = train([pair], cfg, params=p0, evaluate=lambda p: 0.0)
    assert l1_loss(predict(res.params, pair.X), pair.Y) < l1_loss(predict(p0, pair.X), pair.Y)


def positive_path_net(n, d1, d2, rng, nf=13):
    """ReLUs never clip for inputs in [0, 1], so the net is affine there."""
    w = rng.uniform(0.1, 1, nf)
    return NetParams(w, 0.5, rng.uniform(0, 1, (d1, n)), rng.uniform(1, 2, d1), rng.uniform(0, 1, (d2, d1)),
                     rng.uniform(1, 2, d2), rng.uniform(0, 1, (d1, d2)), rng.uniform(1, 2, d1),
                     rng.normal(size=(n, d1)), rng.normal(size=n))


def _affine_map(p):
    return p.W_d4 @ p.W_d3 @ p.W_e2 @ p.W_e1


def test_linear_closed_form(rng):
    p = positive_path_net(15, 6, 3, rng)
    X = rng.uniform(size=(15, 13))
    B = [rng.uniform(size=(15, 13)) for _ in range(4)]
    phi = expected_gradients(p, X, B, n_samples=8, seed=3)
    Bbar = np.mean(B, axis=0)
    want = _affine_map(p) @ ((X - Bbar) * p.w_c[None, :])
    assert np.abs(phi - want).max() <= 1e-10 * max(1.0, np.abs(want).max())


def test_zero_path_and_zero_weight(rng):
    p = init_params(20, d1=8, d2=3, seed=4)
    X = rng.uniform(size=(20, 13))
    assert np.all(expected_gradients(p, X, [X], n_samples=10) == 0)
    p.w_c[7] = 0.0
    phi = expected_gradients(p, X, [rng.uniform(size=(20, 13))], n_samples=10)
    assert np.all(phi[:, 7] == 0)
    with pytest.raises(EmptyBaseline):
        expected_gradients(p, X, [], n_samples=3)


def test_completeness(rng):
    p = init_params(25, d1=10, d2=4, seed=8)
    p.b_d4 += 10
    X = rng.uniform(size=(25, 13))
    B = [rng.uniform(size=(25, 13)) for _ in range(5)]
    phi = expected_gradients(p, X, B, n_samples=200, seed=1)
    gap = predict(p, X) - np.mean([predict(p, b) for b in B], axis=0)
    rel = np.abs(phi.sum(axis=1) - gap) / (np.abs(predict(p, X)) + 1e-8)
    assert rel.mean() < 0.02


def test_attribution_report_and_files(tmp_path, rng):
    p = init_params(20, d1=8, d2=3, seed=4)
    inputs = {2020: rng.uniform(size=(20, 13)), 2021: rng.uniform(size=(20, 13))}
    rep = attribution_report(p, inputs, [rng.uniform(size=(20, 13))], n_samples=4)
    assert rep.years == (2020, 2021)
    np.testing.assert_allclose(rep.yearly[0], np.abs(rep.shap[2020]).mean(axis=0))
    assert rep.order[0] == rep.features[int(np.argmax(rep.average))]
    write_attribution(tmp_path / "shap", rep)
    lines = (tmp_path / "shap_yearly.csv").read_text().splitlines()
    assert lines[0] == "feature,year,mean_abs_shap" and len(lines) == 1 + 26
    assert (tmp_path / "shap_summary.csv").read_text().startswith("feature,average,rank\n")


def test_checkpoint_round_trip(tmp_path):
    p = init_params(30, d1=10, d2=4, seed=11)
    save_params(tmp_path / "p.bin", p)
    q = load_params(tmp_path / "p.bin")
    assert q.equals(p) and q.dims == (10, 4)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_params(tmp_path / "bad.bin")


def test_training_log_csv(tmp_path):
    res = train(_pairs(), TrainConfig(max_epochs=3, patience=2, d1=12, d2=4))
    write_training_log(tmp_path / "log.csv", res.log)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_l1,val_l1,lr,best_so_far" and len(lines) == 4
