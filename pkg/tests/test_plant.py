import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cablecal.data import Workspace, sample_trajectory
from cablecal.errors import LimitViolationError
from cablecal.kinematics import KinematicParams
from cablecal.plant import Plant, PlantConfig, backlash, reset, step

from oracles import play_operator, polygon_area

P = KinematicParams()
IDENT = PlantConfig.identity()


def _q(**kw):
    q = np.array([0.0, 0.0, 0.1, 0.0, 0.0, 0.0])
    for k, v in kw.items():
        q[int(k[1:]) - 1] = v
    return q


def test_backlash_examples():
    assert backlash(0.2, 0.2, 0.1) == 0.2
    assert backlash(1.0, 0.0, 0.1) == pytest.approx(0.95)
    assert backlash(-1.0, 0.0, 0.1) == pytest.approx(-0.95)
    assert backlash(0.04, 0.0, 0.1) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5))
def test_backlash_matches_clamp_oracle(seed, width):
    u = np.cumsum(np.random.default_rng(seed).normal(scale=0.1, size=200))
    y, out = 0.0, []
    for v in u:
        y = backlash(v, y, width)
        out.append(y)
    assert np.allclose(out, play_operator(u, width), atol=1e-15)
    assert np.max(np.abs(np.array(out) - u)) <= width / 2 + 1e-12


def test_backlash_loop_area():
    # up-then-down ramp over [0, S]; the loop is a parallelogram of horizontal
    # width w and vertical output travel S - w
    w, S = 0.2, 1.0
    ramp = np.concatenate([np.linspace(0, S, 501), np.linspace(S, 0, 501)[1:], np.linspace(0, S, 501)[1:]])
    y = play_operator(ramp, w, y0=w / 2)
    cycle = slice(500, 1500)  # one full down-up cycle after the first rise
    area = polygon_area(ramp[cycle], y[cycle])
    assert area == pytest.approx(w * (y.max() - y.min()), rel=1e-3)
    assert area == pytest.approx(w * (S - w), rel=1e-3)
    out, prev = [], w / 2
    for u in ramp:
        prev = backlash(u, prev, w)
        out.append(prev)
    assert np.allclose(out, y)


def test_identity_plant_exact():
    plant = Plant(IDENT)
    cmds = sample_trajectory("random", 200, P, seed=1)
    plant.reset(cmds[0])
    out = plant.run(cmds)
    assert np.array_equal(out, np.array([c.q for c in cmds]))


def test_coupling_example():
    cfg = IDENT.replace(coupling_56=0.3)
    st_ = reset(None, _q(), cfg)
    before = step(st_, _q(), cfg).q[5]
    after = step(st_, _q(q5=0.2), cfg).q[5]
    assert after - before == pytest.approx(0.06, abs=1e-15)
    # inside a dead band the kick persists once q5 stops moving
    cfg = cfg.replace(backlash_width=(0, 0, 0, 0, 0, 0.2))
    st_ = reset(None, _q(), cfg)
    kicked = step(st_, _q(q5=0.2), cfg).q[5]
    assert kicked == pytest.approx(0.06, abs=1e-15)
    assert step(st_, _q(q5=0.2), cfg).q[5] == pytest.approx(kicked, abs=1e-15)


def test_coupling_45_one_way():
    cfg = IDENT.replace(coupling_45=0.1)
    st_ = reset(None, _q(), cfg)
    out = step(st_, _q(q4=0.3), cfg).q
    assert out[4] == pytest.approx(0.03)
    assert out[5] == 0.0


def test_stretch_gain():
    cfg = IDENT.replace(stretch_gain=(0, 0, 0, 0.03, 0.05, 0.08))
    out = step(reset(None, _q(), cfg), _q(q4=0.5, q5=0.5, q6=0.5), cfg).q
    assert np.allclose(out[3:], 0.5 * np.array([1.03, 1.05, 1.08]))


def test_reset_and_first_branch():
    cfg = IDENT.replace(backlash_width=(0, 0, 0, 0, 0, 0.2))
    q = _q(q6=0.05)
    # starting at rest on the command the first step stays in the dead band
    assert step(reset(None, q, cfg), q, cfg).q[5] == pytest.approx(0.05)
    # starting below, the rising branch is taken
    assert step(reset(None, _q(q6=-0.3), cfg), q, cfg).q[5] == pytest.approx(play_operator([0.05], 0.2, -0.3)[0])
    assert step(reset(None, _q(q6=0.4), cfg), q, cfg).q[5] == pytest.approx(play_operator([0.05], 0.2, 0.4)[0])


def test_determinism_and_seed():
    cmds = sample_trajectory("random", 270, P, seed=3)
    a = Plant().reset(cmds[0]).run(cmds)
    b = Plant().reset(cmds[0]).run(cmds)
    assert np.array_equal(a, b)
    c = Plant().reset(cmds[0], seed=9).run(cmds)
    assert not np.array_equal(a, c)


def test_noise_free_replay_bit_identical():
    cfg = PlantConfig().replace(noise_sd=(0.0,) * 6)
    cmds = sample_trajectory("pick", 120, P, seed=4)
    plant = Plant(cfg)
    a = plant.reset(cmds[0], seed=1).run(cmds)
    b = plant.reset(cmds[0], seed=2).run(cmds)
    assert np.array_equal(a, b)


def test_limits_enforced():
    plant = Plant().reset(np.zeros(6))
    q = np.zeros(6)
    q[5] = 3.0
    with pytest.raises(LimitViolationError):
        plant.step(q)


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        PlantConfig(backlash_width=(0, 0, 0, -0.1, 0, 0))
    with pytest.raises(ValueError):
        PlantConfig(coupling_56=1.0)
    with pytest.raises(ValueError):
        PlantConfig(noise_sd=(0, 0, 0, 0, 0, -1))
    cfg = PlantConfig()
    assert PlantConfig.from_dict(cfg.to_dict()) == cfg
    assert set(cfg.to_dict()) >= {"backlash_width", "stretch_gain", "coupling_56", "coupling_45", "noise_sd", "seed"}
    assert cfg.config_hash() != IDENT.config_hash()


def test_default_error_magnitudes():
    cmds = sample_trajectory("random", 2000, P, seed=5, ws=Workspace())
    qc = np.array([c.q for c in cmds])
    qp = Plant().reset(cmds[0]).run(cmds)
    err = qp - qc
    arm_deg = np.degrees(np.sqrt(np.mean(err[:, :2] ** 2, axis=0)))
    assert np.all(arm_deg < 0.1)
    assert np.sqrt(np.mean(err[:, 2] ** 2)) < 1e-3
    wrist_deg = np.degrees(np.sqrt(np.mean(err[:, 3:] ** 2)))
    assert 5.0 <= wrist_deg <= 25.0
