import numpy as np
import pytest

from cablecal.data import collect_protocol, make_examples
from cablecal.errors import FormatViolationError, NonConvergenceError, ShapeMismatchError
from cablecal.models import (
    Ensemble,
    Model,
    ModelSpec,
    TrainConfig,
    evaluate,
    gradient_check,
    horizon_ablation,
    lasso_fit,
    load_model,
    rollout,
    save_model,
    train,
    train_ensemble,
)
from cablecal.models import nets
from cablecal.plant import Plant, PlantConfig

from oracles import lasso_proximal_gradient

FAST = TrainConfig(epochs=40, lr=3e-3)


def linear_model(A, b, H, joints=(4, 5, 6), output_format="abs", direction="forward", input_format="cmd"):
    """Linear Model with hand-set raw-unit weights (identity normalisation)."""
    spec = ModelSpec("linear", input_format, output_format, H, direction, joints=joints)
    d, k = spec.input_dim, spec.step_dim
    nrm = {"x_mean": np.zeros(d), "x_scale": np.ones(d), "y_mean": np.zeros(k), "y_scale": np.ones(k)}
    return Model(spec, {"W": np.asarray(A, float), "b": np.asarray(b, float)}, nrm)


# LASSO

@pytest.mark.parametrize("seed", range(6))
def test_lasso_matches_fista(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 6))
    y = X @ rng.normal(size=6) + 0.3 + rng.normal(scale=0.1, size=40)
    lam = rng.uniform(0.1, 5.0)
    a, b = lasso_fit(X, y, lam, tol=1e-12)
    ao, bo = lasso_proximal_gradient(X, y, lam)
    assert np.max(np.abs(a - ao)) < 1e-5
    assert abs(b - bo) < 1e-5


def test_lasso_zero_lambda_is_least_squares():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 4))
    Y = rng.normal(size=(50, 2))
    A, b = lasso_fit(X, Y, 0.0, tol=1e-13)
    sol, *_ = np.linalg.lstsq(np.column_stack([X, np.ones(50)]), Y, rcond=None)
    assert np.allclose(A, sol[:4], atol=1e-9)
    assert np.allclose(b, sol[4], atol=1e-9)


def test_lasso_large_lambda_gives_intercept_only():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    a, b = lasso_fit(X, y, 1e6)
    assert np.all(a == 0)
    assert b == pytest.approx(y.mean())


def test_lasso_errors():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 3))
    X[:, 1] = X[:, 0] + 1e-3 * rng.normal(size=30)
    with pytest.raises(NonConvergenceError) as exc:
        lasso_fit(X, X[:, 0] + X[:, 1], 1e-6, tol=1e-14, max_sweeps=2)
    assert exc.value.best is not None
    with pytest.raises(ValueError):
        lasso_fit(X, X[:, 0], -1.0)
    with pytest.raises(ValueError):
        lasso_fit(X[:2], X[:2, 0], 0.1)


# gradients

def _batch(spec, seed=0, n=6):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, spec.input_dim)), rng.normal(size=(n, spec.step_dim))


@pytest.mark.parametrize("arch,hidden,bound", [("linear", 4, 1e-8), ("ff", 8, 1e-5), ("rnn", 8, 1e-4)])
def test_gradient_check(arch, hidden, bound):
    spec = ModelSpec(arch, horizon=3, hidden_units=hidden)
    assert gradient_check(spec, _batch(spec)) < bound


def test_gradients_match_torch_autograd():
    torch = pytest.importorskip("torch")
    torch.set_default_dtype(torch.float64)
    for arch in ("ff", "rnn"):
        spec = ModelSpec(arch, horizon=3, hidden_units=5, layers=2)
        X, Y = _batch(spec, seed=4)
        p = nets.init_params(arch, spec.input_dim, 3, 3, 5, 2, np.random.default_rng(4))
        _, grads = nets.mse_and_grad(arch, p, X, Y, 3)
        tp = {k: torch.tensor(v, requires_grad=True) for k, v in p.items()}
        x = torch.tensor(X)
        if arch == "rnn":
            steps = x.reshape(len(X), -1, 3).flip(1)
            h = torch.zeros(len(X), 5)
            c = torch.zeros(len(X), 5)
            for t in range(steps.shape[1]):
                z = steps[:, t] @ tp["Wx"] + h @ tp["Wh"] + tp["bl"]
                i, f, g, o = z.split(5, dim=1)
                c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
                h = torch.sigmoid(o) * torch.tanh(c)
            x = h
        for j in (1, 2):
            x = torch.tanh(x @ tp[f"W{j}"] + tp[f"b{j}"])
        loss = ((x @ tp["Wout"] + tp["bout"] - torch.tensor(Y)) ** 2).mean()
        loss.backward()
        for k in p:
            assert np.allclose(tp[k].grad.numpy(), grads[k], atol=1e-12), (arch, k)


def test_adam_minimises_quadratic():
    p = {"w": np.array([3.0, -2.0])}
    opt = nets.Adam(p, lr=0.05)
    for _ in range(2000):
        opt.step(p, {"w": 2 * p["w"]})
    assert np.max(np.abs(p["w"])) < 1e-3


# specs

def test_spec_validation_and_naming():
    assert ModelSpec().name == "RNN-Cmd-Delta"
    assert ModelSpec("linear", "est", "abs").name == "Linear-Est-Abs"
    assert ModelSpec(horizon=4).input_dim == 15
    with pytest.raises(FormatViolationError):
        ModelSpec(direction="inverse", input_format="est")
    with pytest.raises(ValueError):
        ModelSpec(arch="gru")
    with pytest.raises(ValueError):
        ModelSpec(horizon=-1)


# training

@pytest.fixture(scope="module")
def identity_ds():
    return collect_protocol("random", 200, Plant(PlantConfig.identity()), seed=0)


@pytest.fixture(scope="module")
def default_ds():
    return collect_protocol("pick", 400, Plant(), seed=1)


def test_identity_plant_delta_is_learned_exactly(identity_ds):
    spec = ModelSpec("linear", horizon=2)
    xy = make_examples(identity_ds, 2)
    m = train(spec, xy, xy)
    assert m.training_meta["val_mse"] < 1e-6


def test_synthetic_linear_plant_reaches_noise_floor():
    rng = np.random.default_rng(5)
    n, sigma = 3000, 0.01
    u = rng.uniform(-1, 1, size=(n, 3))
    B0, B1 = rng.normal(size=(3, 3)), 0.5 * rng.normal(size=(3, 3))
    y = u @ B0
    y[1:] += u[:-1] @ B1
    y += rng.normal(scale=sigma, size=y.shape)
    X = np.concatenate([u[1:], u[:-1]], axis=1)
    Y = y[1:]
    spec = ModelSpec("linear", output_format="abs", horizon=1)
    m = train(spec, (X[:2500], Y[:2500]), (X[2500:], Y[2500:]), TrainConfig(lam=1e-4))
    assert m.training_meta["val_mse"] <= 2 * sigma ** 2
    A, _ = m.linear_matrix()
    assert np.allclose(A, np.vstack([B0, B1]), atol=0.02)


def test_trained_beats_uncalibrated_baseline(default_ds):
    xy = make_examples(default_ds, 2)
    tr = (xy[0][:300], xy[1][:300])
    va = (xy[0][300:], xy[1][300:])
    baseline = float(np.mean(va[1] ** 2))  # delta target; q_c as prediction
    for arch in ("linear", "ff", "rnn"):
        m = train(ModelSpec(arch, horizon=2, hidden_units=16), tr, va, FAST)
        assert m.training_meta["val_mse"] < baseline, arch


def test_training_is_deterministic(default_ds):
    xy = make_examples(default_ds, 1)
    spec = ModelSpec("rnn", horizon=1, hidden_units=6)
    a = train(spec, xy, hyper=TrainConfig(epochs=3))
    b = train(spec, xy, hyper=TrainConfig(epochs=3))
    for k in a.weights:
        assert np.array_equal(a.weights[k], b.weights[k])
    c = train(spec, xy, hyper=TrainConfig(epochs=3, seed=1))
    assert not np.array_equal(a.weights["Wx"], c.weights["Wx"])


def test_affine_input_invariance(default_ds):
    # standardisation makes the linear fit invariant to per-feature affine maps
    X, Y = make_examples(default_ds, 1, output_format="abs")
    spec = ModelSpec("linear", output_format="abs", horizon=1)
    scale, shift = np.linspace(0.5, 3, X.shape[1]), np.linspace(-1, 1, X.shape[1])
    a = train(spec, (X, Y))
    b = train(spec, (X * scale + shift, Y))
    assert np.allclose(a.predict_target(X), b.predict_target(X * scale + shift), atol=1e-9)


def test_train_errors(default_ds):
    X, Y = make_examples(default_ds, 1)
    with pytest.raises(ShapeMismatchError):
        train(ModelSpec("linear", horizon=2), (X, Y))
    with pytest.raises(ValueError):
        train(ModelSpec("linear", horizon=1), (X[:0], Y[:0]))
    m = train(ModelSpec("linear", horizon=1), (X, Y))
    with pytest.raises(ShapeMismatchError):
        m.predict(np.zeros(5))


# prediction helpers

def test_predict_delta_adds_current_command():
    A = np.zeros((6, 3))
    m = linear_model(A, [0.1, 0.2, 0.3], 1, output_format="delta")
    x = np.array([1.0, 2.0, 3.0, 9.0, 9.0, 9.0])
    assert np.allclose(m.predict_target(x), [0.1, 0.2, 0.3])
    assert np.allclose(m.predict(x), [1.1, 2.2, 3.3])


def test_rollout_est_feeds_back_predictions():
    H = 2
    rng = np.random.default_rng(6)
    A, b = 0.3 * rng.normal(size=(9, 3)), rng.normal(size=3)
    cmds = rng.normal(size=(12, 3))
    init = rng.normal(size=(H, 3))
    m_est = linear_model(A, b, H, input_format="est")
    out = rollout(m_est, cmds, init)
    # independent recursion
    hist = list(init)
    expect = []
    for c in cmds:
        y = np.concatenate([c, hist[-1], hist[-2]]) @ A + b
        expect.append(y)
        hist.append(y)
    assert np.allclose(out, expect, atol=1e-14)
    m_cmd = linear_model(A, b, H)
    out_cmd = rollout(m_cmd, cmds, init)
    prior = np.vstack([init, cmds])
    expect_cmd = [np.concatenate([cmds[t], prior[t + 1], prior[t]]) @ A + b for t in range(12)]
    assert np.allclose(out_cmd, expect_cmd, atol=1e-14)
    with pytest.raises(ValueError):
        rollout(linear_model(A, b, H, direction="inverse"), cmds)


def test_ensemble_mean_and_persistence(tmp_path, default_ds):
    xy = make_examples(default_ds, 1)
    spec = ModelSpec("ff", horizon=1, hidden_units=8)
    ens = train_ensemble(spec, xy, hyper=TrainConfig(epochs=3), size=3)
    assert len(ens.members) == 3
    X = xy[0][:10]
    assert np.allclose(ens.predict(X), np.mean([m.predict(X) for m in ens.members], axis=0))
    save_model(ens, tmp_path / "e.json")
    back = load_model(tmp_path / "e.json")
    assert isinstance(back, Ensemble)
    assert np.array_equal(back.predict(X), ens.predict(X))
    single = ens.members[0]
    save_model(single, tmp_path / "m.json")
    m = load_model(tmp_path / "m.json")
    assert isinstance(m, Model)
    assert np.array_equal(m.predict(X), single.predict(X))
    assert evaluate(m, *xy) == evaluate(single, *xy)
    with pytest.raises(ValueError):
        Ensemble([])
    with pytest.raises(ValueError):
        Ensemble([single, linear_model(np.zeros((6, 3)), np.zeros(3), 1)])


def test_ensemble_workers_match_serial(default_ds):
    xy = make_examples(default_ds, 1)
    spec = ModelSpec("linear", horizon=1)
    a = train_ensemble(spec, xy, size=2, jobs=1)
    b = train_ensemble(spec, xy, size=2, jobs=2)
    assert np.array_equal(a.predict(xy[0]), b.predict(xy[0]))


def test_horizon_ablation_identity_is_flat(identity_ds):
    rows = horizon_ablation(ModelSpec("linear"), identity_ds, identity_ds, [0, 1, 2], repeats=2)
    assert [r.horizon for r in rows] == [0, 1, 2]
    assert all(r.mean_mse < 1e-6 and len(r.values) == 2 for r in rows)
    with pytest.raises(ValueError):
        horizon_ablation(ModelSpec("linear"), identity_ds, identity_ds, [])
