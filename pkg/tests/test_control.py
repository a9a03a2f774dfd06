import numpy as np
import pytest

from cablecal.control import (
    Controller,
    ControllerConfig,
    History,
    forward_estimate,
    inverse_command,
    refine_command,
    track_trajectory,
)
from cablecal.data import sample_trajectory
from cablecal.errors import DirectionMismatchError, HistoryTooLongError
from cablecal.kinematics import KinematicParams
from cablecal.plant import Plant, PlantConfig

from oracles import scalar_refine
from test_models import linear_model

P = KinematicParams()
QD = np.array([0.1, -0.05, 0.12, 0.3, -0.2, 0.4])


def diag_model(gain, c=(0, 0, 0), H=1, **kw):
    """Linear model f(x) = gain * x_cur + c over the wrist joints; priors ignored."""
    A = np.zeros((3 * (H + 1), 3))
    A[:3, :3] = np.diag(np.broadcast_to(gain, 3))
    return linear_model(A, c, H, **kw)


def history(q=QD, n=1):
    h = History(n)
    h.fill(q)
    return h


def test_identity_model_returns_desired():
    qc, clamped = refine_command(QD, diag_model(1.0), history())
    assert np.array_equal(qc.q, QD) and not clamped
    qc, _ = inverse_command(QD, diag_model(1.0, direction="inverse"), history())
    assert np.array_equal(qc.q, QD)


@pytest.mark.parametrize("alpha,M", [(1.0, 1), (0.5, 3), (0.3, 7)])
def test_constant_bias_closed_form(alpha, M):
    c = np.array([0.05, -0.02, 0.01])
    qc, _ = refine_command(QD, diag_model(1.0, c), history(), M=M, alpha=alpha)
    assert np.allclose(qc.q[3:], QD[3:] - c * (1 - (1 - alpha) ** M), atol=1e-15)


@pytest.mark.parametrize("gain", [0.6, 0.9, 1.3])
def test_scalar_recurrence_oracle(gain):
    for M in (1, 2, 3, 6):
        qc, _ = refine_command(QD, diag_model(gain), history(), M=M, alpha=0.5)
        expect = [scalar_refine(v, gain, M, 0.5)[-1] for v in QD[3:]]
        assert np.allclose(qc.q[3:], expect, atol=1e-15)


def test_residual_monotone_for_affine_models():
    rng = np.random.default_rng(0)
    for _ in range(20):
        gain = rng.uniform(0.3, 1.7)
        c = rng.uniform(-0.1, 0.1, 3)
        f = diag_model(gain, c)
        res = []
        for M in range(1, 8):
            qc, _ = refine_command(QD, f, history(), M=M, alpha=0.5)
            res.append(np.linalg.norm(QD[3:] - (gain * qc.q[3:] + c)))
        assert all(b <= a + 1e-15 for a, b in zip(res, res[1:]))


def test_uncovered_joints_pass_through_and_history_frozen():
    tau = history(n=2)
    before = [q.copy() for q in tau.commands]
    qc, _ = refine_command(QD, diag_model(0.8, (0.1, 0.1, 0.1), H=2), tau, M=3)
    assert np.array_equal(qc.q[:3], QD[:3])
    assert len(tau) == 2 and all(np.array_equal(a, b) for a, b in zip(before, tau.commands))


def test_refine_reads_history_window():
    # f depends only on the previous command of each joint
    A = np.zeros((6, 3))
    A[:3] = np.eye(3)
    A[3:] = 0.5 * np.eye(3)
    f = linear_model(A, np.zeros(3), 1)
    tau = History(1)
    prev = QD.copy()
    prev[3:] = [0.2, 0.2, 0.2]
    tau.fill(prev)
    qc, _ = refine_command(QD, f, tau, M=40, alpha=0.5)
    assert np.allclose(qc.q[3:] + 0.5 * prev[3:], QD[3:], atol=1e-10)


def test_clamping_is_flagged():
    qc, clamped = refine_command(QD, diag_model(1.0, (0, 0, -5.0)), history(), M=1, alpha=1.0, params=P)
    assert clamped and qc.q[5] == P.upper[5]


def test_argument_errors():
    f = diag_model(1.0)
    with pytest.raises(DirectionMismatchError):
        refine_command(QD, diag_model(1.0, direction="inverse"), history())
    with pytest.raises(DirectionMismatchError):
        inverse_command(QD, f, history())
    with pytest.raises(ValueError):
        refine_command(QD, f, history(), M=0)
    with pytest.raises(ValueError):
        refine_command(QD, f, history(), alpha=0.0)
    with pytest.raises(HistoryTooLongError):
        refine_command(QD, diag_model(1.0, H=3), history(n=2))
    with pytest.raises(ValueError):
        ControllerConfig("forward-refine")
    with pytest.raises(ValueError):
        ControllerConfig("pid")
    with pytest.raises(DirectionMismatchError):
        ControllerConfig("inverse-direct", model=f)
    with pytest.raises(ValueError):
        History(0)


def test_history_window_layout():
    h = History(3)
    for k in range(5):
        h.push(np.full(6, float(k)))
    assert len(h) == 3
    assert np.array_equal(h.window(2, (4, 5)), [4, 4, 3, 3])
    assert h.window(0, (4,)).size == 0
    with pytest.raises(HistoryTooLongError):
        h.window(4, (4,))


def test_est_controller_commits_model_estimates():
    f = diag_model(2.0, input_format="est")
    ctrl = Controller(ControllerConfig("forward-refine", model=f))
    ctrl.reset(QD)
    ctrl.commit(QD)
    assert np.allclose(ctrl.history.estimates[-1][3:], 2 * QD[3:])
    assert np.array_equal(ctrl.history.commands[-1], QD)
    assert np.allclose(forward_estimate(QD, f, ctrl.history)[3:], 2 * QD[3:])


def test_passthrough_identity_plant_zero_error():
    targets = sample_trajectory("pick", 60, P, seed=1)
    rep = track_trajectory(ControllerConfig("passthrough"), Plant(PlantConfig.identity()), targets)
    assert np.all(rep.cart_err_mm == 0) and np.all(rep.joint_err == 0)
    assert rep.n_clamped == 0 and rep.meta["controller"] == "passthrough"


def test_passthrough_default_plant_multi_millimetre():
    targets = sample_trajectory("pick", 300, P, seed=2)
    rep = track_trajectory(ControllerConfig("passthrough"), Plant(), targets, seed=2)
    assert 1.0 < rep.mean_error_mm < 20.0
    assert np.sqrt(np.mean(rep.joint_err[:, :3] ** 2)) < 1e-3


def test_linear_plant_inverse_and_refine_compose_to_identity():
    s = np.array([0.03, 0.05, 0.08])
    plant = Plant(PlantConfig.identity().replace(stretch_gain=(0, 0, 0, *s)))
    targets = sample_trajectory("pick", 48, P, seed=3)
    g = linear_model(np.vstack([np.diag(1 / (1 + s)), np.zeros((3, 3))]), np.zeros(3), 1, direction="inverse")
    rep = track_trajectory(ControllerConfig("inverse-direct", model=g), plant, targets)
    assert np.max(rep.cart_err_mm) < 1e-9
    f = diag_model(1 + s)
    rep = track_trajectory(ControllerConfig("forward-refine", alpha=1.0, M=20, model=f), plant, targets)
    assert np.max(np.abs(rep.joint_err)) < 1e-12


def test_tracking_is_causal():
    targets = sample_trajectory("pick", 40, P, seed=4)
    cfg = ControllerConfig("forward-refine", model=diag_model(0.9, (0.01, 0, 0), H=2))
    full = track_trajectory(cfg, Plant(), targets, seed=5)
    part = track_trajectory(cfg, Plant(), targets[:25], seed=5)
    assert np.array_equal(full.qc[:25], part.qc) and np.array_equal(full.qp[:25], part.qp)


def test_track_errors():
    with pytest.raises(ValueError):
        track_trajectory(ControllerConfig("passthrough"), Plant(), [])
