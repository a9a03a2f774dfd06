import numpy as np
import pytest

from cablecal.errors import DegenerateGeometryError
from cablecal.geometry import RigidTransform, random_rotation, register_rigid, uniform_ball_displacements

from oracles import kabsch_scipy


def _random_transform(rng):
    return RigidTransform(random_rotation(rng), rng.uniform(-0.5, 0.5, 3))


def test_identity_sets_give_identity():
    pts = np.random.default_rng(0).normal(size=(10, 3))
    T = register_rigid(pts, pts)
    assert np.allclose(T.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(T.translation, 0, atol=1e-12)


def test_exact_recovery_noiseless():
    rng = np.random.default_rng(1)
    for _ in range(20):
        T = _random_transform(rng)
        cam = rng.normal(size=(30, 3)) * 0.1
        est = register_rigid(T.apply(cam), cam)
        assert np.max(np.abs(est.rotation - T.rotation)) < 1e-9
        assert np.max(np.abs(est.translation - T.translation)) < 1e-9


def test_matches_scipy_oracle_under_noise():
    rng = np.random.default_rng(2)
    T = _random_transform(rng)
    cam = rng.uniform(-0.05, 0.05, size=(100, 3))
    robot = T.apply(cam) + rng.normal(scale=3e-4, size=cam.shape)
    est = register_rigid(robot, cam)
    R, t = kabsch_scipy(robot, cam)
    assert np.max(np.abs(est.rotation - R)) < 1e-9
    assert np.max(np.abs(est.translation - t)) < 1e-9


def test_reflection_is_never_returned():
    rng = np.random.default_rng(3)
    cam = rng.normal(size=(8, 3))
    mirrored = cam * np.array([1, 1, -1])
    T = register_rigid(mirrored, cam)
    assert np.linalg.det(T.rotation) == pytest.approx(1.0)


def test_noise_residual_and_error_shrinkage():
    rng = np.random.default_rng(4)
    sigma = 3e-4
    T = _random_transform(rng)

    def trial(n):
        cam = rng.uniform(-0.05, 0.05, size=(n, 3))
        robot = T.apply(cam) + rng.normal(scale=sigma, size=cam.shape)
        est = register_rigid(robot, cam)
        resid = np.sqrt(np.mean(np.sum((est.apply(cam) - robot) ** 2, axis=1)))
        return resid, np.linalg.norm(est.translation - T.translation)

    res = [trial(684) for _ in range(40)]
    resid = np.mean([r[0] for r in res])
    # per-point 3D residual RMS is sigma*sqrt(3) less the 6 fitted dof
    assert resid == pytest.approx(sigma * np.sqrt(3 * (684 - 2) / 684), rel=0.05)
    small = np.sqrt(np.mean([trial(171)[1] ** 2 for _ in range(40)]))
    large = np.sqrt(np.mean([trial(684)[1] ** 2 for _ in range(40)]))
    assert large / small == pytest.approx(0.5, abs=0.15)


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    cam = rng.normal(size=(12, 3))
    robot = _random_transform(rng).apply(cam) + rng.normal(scale=1e-3, size=cam.shape)
    perm = rng.permutation(12)
    a = register_rigid(robot, cam)
    b = register_rigid(robot[perm], cam[perm])
    assert np.allclose(a.matrix(), b.matrix(), atol=1e-12)


def test_degenerate_inputs():
    line = np.outer(np.linspace(0, 1, 5), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometryError):
        register_rigid(line, line)
    with pytest.raises(DegenerateGeometryError):
        register_rigid(np.eye(3)[:2], np.eye(3)[:2])
    with pytest.raises(ValueError):
        register_rigid(np.zeros((4, 3)), np.zeros((5, 3)))


def test_transform_serialisation_and_inverse():
    T = _random_transform(np.random.default_rng(6))
    back = RigidTransform.from_dict(T.to_dict())
    assert np.array_equal(back.rotation, T.rotation)
    p = np.array([0.1, -0.2, 0.3])
    assert np.allclose(T.inverse().apply(T.apply(p)), p, atol=1e-15)


def test_ball_displacements_bounded_and_isotropic():
    d = uniform_ball_displacements(np.random.default_rng(7), 20000, 0.67e-3)
    mag = np.linalg.norm(d, axis=1)
    assert mag.max() <= 0.67e-3 + 1e-15
    # magnitude uniform on [0, m]: mean m/2
    assert mag.mean() == pytest.approx(0.335e-3, rel=0.02)
    assert np.allclose(d.mean(axis=0), 0, atol=1e-5)
