"""Controllers on top of learned models and trajectory tracking on the plant.

Only the joints a model covers (the wrist, by default) are corrected; every
other joint is commanded exactly as desired.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import DirectionMismatchError, HistoryTooLongError
from .kinematics import JointConfig, KinematicParams, as_q, clamp_to_limits, tip_position
from .metrics import TrackingReport

KINDS = ("forward-refine", "inverse-direct", "passthrough")


class History:
    """Bounded record of issued commands and the forward model's estimates, newest last."""

    def __init__(self, maxlen: int):
        if maxlen < 1:
            raise ValueError("maxlen must be >= 1")
        self.maxlen = maxlen
        self.commands: deque = deque(maxlen=maxlen)
        self.estimates: deque = deque(maxlen=maxlen)

    def __len__(self):
        return len(self.commands)

    def push(self, command, estimate=None) -> None:
        q = as_q(command)
        self.commands.append(q.copy())
        self.estimates.append(q.copy() if estimate is None else as_q(estimate).copy())

    def fill(self, q, n: int | None = None) -> None:
        """Reset to ``n`` copies of a resting pose (default: full length)."""
        self.commands.clear()
        self.estimates.clear()
        for _ in range(self.maxlen if n is None else n):
            self.push(q)

    def window(self, H: int, joints: Sequence[int], source: str = "cmd") -> np.ndarray:
        """Flattened priors ``[t-1, ..., t-H]`` over ``joints``, newest first."""
        if H > len(self):
            raise HistoryTooLongError(f"history holds {len(self)} entries, model needs {H}")
        buf = self.commands if source == "cmd" else self.estimates
        idx = [j - 1 for j in joints]
        items = [buf[-lag][idx] for lag in range(1, H + 1)]
        return np.concatenate(items) if items else np.zeros(0)


def _model_input(q_cur: np.ndarray, model, tau: History) -> np.ndarray:
    spec = model.spec
    idx = [j - 1 for j in spec.joints]
    return np.concatenate([q_cur[idx], tau.window(spec.horizon, spec.joints, spec.input_format)])


def _require(model, direction: str) -> None:
    if model is None:
        raise ValueError(f"a {direction} model is required")
    if model.spec.direction != direction:
        raise DirectionMismatchError(f"expected a {direction} model, got {model.spec.direction}")


def forward_estimate(q_c, f, tau: History) -> np.ndarray:
    """Full 6-vector estimate of the physical pose; uncovered joints echo the command."""
    q = as_q(q_c)
    out = q.copy()
    out[[j - 1 for j in f.spec.joints]] = f.predict(_model_input(q, f, tau))
    return out


def refine_command(q_d, f, tau: History, M: int = 3, alpha: float = 0.5,
                   params: KinematicParams | None = None) -> Tuple[JointConfig, bool]:
    """Iteratively shift the command until the forward model predicts ``q_d``.

    ``tau`` stays frozen across the inner iterations. Returns the final
    command clamped to the joint limits and whether clamping occurred.
    """
    _require(f, "forward")
    if M < 1:
        raise ValueError("M must be >= 1")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    qd = as_q(q_d)
    idx = [j - 1 for j in f.spec.joints]
    qc = qd.copy()
    for _ in range(M):
        pred = f.predict(_model_input(qc, f, tau))
        qc[idx] = qc[idx] + alpha * (qd[idx] - pred)
    return _finish(qc, params)


def inverse_command(q_d, g, tau: History, params: KinematicParams | None = None) -> Tuple[JointConfig, bool]:
    """Command predicted directly by an inverse model for the desired pose."""
    _require(g, "inverse")
    qd = as_q(q_d)
    qc = qd.copy()
    qc[[j - 1 for j in g.spec.joints]] = g.predict(_model_input(qd, g, tau))
    return _finish(qc, params)


def _finish(qc: np.ndarray, params: KinematicParams | None) -> Tuple[JointConfig, bool]:
    if params is None:
        return JointConfig(qc, "commanded"), False
    q, clamped = clamp_to_limits(qc, params)
    return JointConfig(q, "commanded"), clamped


@dataclass(frozen=True)
class ControllerConfig:
    kind: str = "forward-refine"
    alpha: float = 0.5
    M: int = 3
    model: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.kind == "forward-refine":
            if self.M < 1:
                raise ValueError("M must be >= 1")
            _require(self.model, "forward")
        elif self.kind == "inverse-direct":
            _require(self.model, "inverse")


class Controller:
    """A controller config plus the history it owns."""

    def __init__(self, cfg: ControllerConfig, params: KinematicParams | None = None):
        self.cfg = cfg
        self.params = params or KinematicParams()
        H = cfg.model.spec.horizon if cfg.model is not None else 0
        self.history = History(max(H, 1))

    def reset(self, q0) -> None:
        self.history.fill(q0)

    def command(self, q_d) -> Tuple[JointConfig, bool]:
        cfg = self.cfg
        if cfg.kind == "passthrough":
            return _finish(as_q(q_d), self.params)
        if cfg.kind == "forward-refine":
            return refine_command(q_d, cfg.model, self.history, cfg.M, cfg.alpha, self.params)
        return inverse_command(q_d, cfg.model, self.history, self.params)

    def commit(self, q_c) -> None:
        """Record a command the plant actually executed."""
        model = self.cfg.model
        estimate = None
        if model is not None and model.spec.direction == "forward" and model.spec.input_format == "est":
            estimate = forward_estimate(q_c, model, self.history)
        self.history.push(q_c, estimate)


def track_trajectory(ctrl: ControllerConfig | Controller, plant, targets: Sequence,
                     params: KinematicParams | None = None, seed: int | None = None) -> TrackingReport:
    """Command each desired waypoint in turn and record what the plant did.

    The plant is reset to the first target (with ``seed`` if given, else its
    configured seed). Cartesian error is the tool-tip distance between the
    physical and desired poses, in millimetres.
    """
    if len(targets) == 0:
        raise ValueError("no targets")
    params = params or plant.params
    controller = ctrl if isinstance(ctrl, Controller) else Controller(ctrl, params)
    q0 = as_q(targets[0])
    plant.reset(q0, seed=seed)
    controller.reset(q0)

    qd, qc, qp, err, clamped = [], [], [], [], []
    for target in targets:
        d = as_q(target)
        cmd, was_clamped = controller.command(d)
        phys = plant.step(cmd).q
        controller.commit(cmd)
        qd.append(d)
        qc.append(cmd.q)
        qp.append(phys)
        err.append(1000.0 * np.linalg.norm(tip_position(phys, params) - tip_position(d, params)))
        clamped.append(was_clamped)
    kind = controller.cfg.kind
    return TrackingReport(np.array(qd), np.array(qc), np.array(qp), np.array(err), np.array(clamped),
                          {"controller": kind, "seed": seed})
