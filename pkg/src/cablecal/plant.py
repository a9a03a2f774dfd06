"""Simulated cable-driven arm: the ground-truth commanded -> physical process.

Arm joints (q1..q3) follow the command up to small noise. Wrist joints pass a
stretched command through a play (backlash) operator and pick up coupling
kicks from the commanded increments of their partner joints (q5 <-> q6, and
q4 -> q5). The model is quasi-static: one call to ``step`` is one stationary
pose.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Sequence, Tuple

import numpy as np

from .kinematics import JointConfig, KinematicParams, as_q


def _six(v) -> Tuple[float, ...]:
    t = tuple(float(x) for x in v)
    if len(t) != 6:
        raise ValueError("expected 6 per-joint values")
    return t


@dataclass(frozen=True)
class PlantConfig:
    backlash_width: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.15, 0.20, 0.35)
    stretch_gain: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.03, 0.05, 0.08)
    coupling_56: float = 0.3
    coupling_45: float = 0.1
    noise_sd: Tuple[float, ...] = (0.0005, 0.0005, 0.0002, 0.002, 0.002, 0.002)
    seed: int = 0
    # constant output offset per joint; zero in every shipped configuration
    bias: Tuple[float, ...] = (0.0,) * 6

    def __post_init__(self):
        for name in ("backlash_width", "stretch_gain", "noise_sd", "bias"):
            object.__setattr__(self, name, _six(getattr(self, name)))
        if any(w < 0 for w in self.backlash_width):
            raise ValueError("backlash_width must be >= 0")
        if any(s < 0 for s in self.noise_sd):
            raise ValueError("noise_sd must be >= 0")
        if not (abs(self.coupling_56) < 1 and abs(self.coupling_45) < 1):
            raise ValueError("coupling coefficients must satisfy |c| < 1")

    @classmethod
    def identity(cls, seed: int = 0) -> "PlantConfig":
        zeros = (0.0,) * 6
        return cls(zeros, zeros, 0.0, 0.0, zeros, seed)

    def replace(self, **changes) -> "PlantConfig":
        d = asdict(self)
        d.update(changes)
        return PlantConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlantConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class PlantState:
    last_output: JointConfig
    last_command: np.ndarray
    step_count: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


def backlash(u: float, y_prev: float, width: float) -> float:
    """Play operator: output follows ``u`` with a dead band of total width ``width``."""
    half = 0.5 * width
    if u - half > y_prev:
        return u - half
    if u + half < y_prev:
        return u + half
    return y_prev


def reset(state: PlantState | None, q0, cfg: PlantConfig) -> PlantState:
    q0 = as_q(q0)
    return PlantState(
        last_output=JointConfig(q0, "physical"),
        last_command=q0.copy(),
        step_count=0,
        rng=np.random.default_rng(cfg.seed),
    )


def step(state: PlantState, q_c, cfg: PlantConfig, params: KinematicParams | None = None) -> JointConfig:
    """Advance the plant by one commanded pose and return the physical pose.

    Mutates ``state``. Raises LimitViolationError when ``params`` is given and
    the command is outside the joint limits.
    """
    if params is not None:
        (q_c if isinstance(q_c, JointConfig) else JointConfig(as_q(q_c))).validate(params)
    qc = as_q(q_c)
    prev = state.last_output.q - np.asarray(cfg.bias)
    dq = qc - state.last_command
    noise = state.rng.normal(size=6) * np.asarray(cfg.noise_sd)

    out = np.empty(6)
    out[:3] = qc[:3]
    for i in range(3, 6):
        u = qc[i] * (1.0 + cfg.stretch_gain[i])
        out[i] = backlash(u, prev[i], cfg.backlash_width[i])
    out[4] += cfg.coupling_56 * dq[5] + cfg.coupling_45 * dq[3]
    out[5] += cfg.coupling_56 * dq[4]
    out += noise + np.asarray(cfg.bias)

    state.last_output = JointConfig(out, "physical")
    state.last_command = qc.copy()
    state.step_count += 1
    return state.last_output


class Plant:
    """Single-owner wrapper bundling a config, the joint limits and mutable state."""

    def __init__(self, cfg: PlantConfig | None = None, params: KinematicParams | None = None):
        self.cfg = cfg or PlantConfig()
        self.params = params or KinematicParams()
        self.state: PlantState | None = None

    def reset(self, q0, seed: int | None = None) -> "Plant":
        cfg = self.cfg if seed is None else self.cfg.replace(seed=seed)
        self.state = reset(self.state, q0, cfg)
        return self

    def step(self, q_c) -> JointConfig:
        if self.state is None:
            self.reset(q_c)
        return step(self.state, q_c, self.cfg, self.params)

    def run(self, commands: Sequence) -> np.ndarray:
        return np.array([self.step(q).q for q in commands])
