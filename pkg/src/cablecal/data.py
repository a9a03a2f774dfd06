"""Trajectory protocols, dataset collection, windowed examples and registration."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .errors import (
    CablecalError,
    FormatViolationError,
    HistoryTooLongError,
    LimitViolationError,
)
from .fiducial import Scene, estimate_configuration, synthesize_frame
from .geometry import RigidTransform, register_rigid  # noqa: F401  (re-exported)
from .kinematics import JointConfig, KinematicParams, as_q, wrist_joints_from_position
from .plant import Plant

# wrist-joint band used by pick-and-place motions: per-cycle grasp orientation
# plus per-waypoint jitter
PICK_GRASP_RANGE = (0.8, 0.45, 0.45)
PICK_JITTER = 0.35
PICK_WAYPOINTS_PER_CYCLE = 12


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned box of wrist positions in the base frame (metres)."""

    box: Tuple[Tuple[float, float], ...] = ((-0.05, 0.05), (-0.04, 0.04), (-0.38, -0.34))

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(box) != 3 or any(hi < lo for lo, hi in box):
            raise ValueError("workspace needs 3 intervals with lo <= hi")
        object.__setattr__(self, "box", box)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.box])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.box])

    def contains(self, p, tol: float = 1e-12) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))


def _arm_joints(positions: np.ndarray, params: KinematicParams) -> np.ndarray:
    q123 = np.array([wrist_joints_from_position(p, params) for p in positions])
    lo, hi = params.lower[:3], params.upper[:3]
    if np.any(q123 < lo - 1e-12) or np.any(q123 > hi + 1e-12):
        raise LimitViolationError("workspace contains wrist positions outside the reachable joint range")
    return q123


def sample_random_trajectory(ws: Workspace, n: int, params: KinematicParams, seed: int) -> List[JointConfig]:
    """Uniform wrist positions in ``ws`` and uniform wrist joints within their limits."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pos = rng.uniform(ws.lo, ws.hi, size=(n, 3))
    q456 = rng.uniform(params.lower[3:], params.upper[3:], size=(n, 3))
    q123 = _arm_joints(pos, params)
    return [JointConfig(np.concatenate([a, b]), "commanded") for a, b in zip(q123, q456)]


def pick_place_waypoints(ws: Workspace, n_cycles: int, seed: int, params: KinematicParams | None = None):
    """Positions, wrist angles and segment kinds of a pick-and-place run.

    Each cycle moves horizontally (two waypoints, fixed z) to above the pick
    point, strokes down and back up (four vertical waypoints), and repeats the
    same at the place point: 12 waypoints per cycle. Wrist joints hold a
    per-cycle grasp orientation with per-waypoint jitter.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    params = params or KinematicParams()
    rng = np.random.default_rng(seed)
    lo, hi = ws.lo, ws.hi
    z_top = hi[2]
    positions, kinds, wrist = [], [], []
    current = np.array([0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), z_top])
    grasp_range = np.array(PICK_GRASP_RANGE)
    w_lo, w_hi = params.lower[3:], params.upper[3:]
    for _ in range(n_cycles):
        grasp = rng.uniform(-grasp_range, grasp_range)
        for _leg in range(2):
            target_xy = rng.uniform(lo[:2], hi[:2])
            z_bottom = rng.uniform(lo[2], 0.5 * (lo[2] + hi[2]))
            z_mid = 0.5 * (z_bottom + z_top)
            mid_xy = 0.5 * (current[:2] + target_xy)
            legs = [
                (np.array([mid_xy[0], mid_xy[1], z_top]), "horizontal"),
                (np.array([target_xy[0], target_xy[1], z_top]), "horizontal"),
                (np.array([target_xy[0], target_xy[1], z_mid]), "vertical"),
                (np.array([target_xy[0], target_xy[1], z_bottom]), "vertical"),
                (np.array([target_xy[0], target_xy[1], z_mid]), "vertical"),
                (np.array([target_xy[0], target_xy[1], z_top]), "vertical"),
            ]
            for p, kind in legs:
                positions.append(p)
                kinds.append(kind)
                jitter = rng.uniform(-PICK_JITTER, PICK_JITTER, size=3)
                wrist.append(np.clip(grasp + jitter, w_lo, w_hi))
                current = p
    return np.array(positions), np.array(wrist), kinds


def sample_pick_place_trajectory(ws: Workspace, n_cycles: int, params: KinematicParams, seed: int) -> List[JointConfig]:
    pos, wrist, _ = pick_place_waypoints(ws, n_cycles, seed, params)
    q123 = _arm_joints(pos, params)
    return [JointConfig(np.concatenate([a, b]), "commanded") for a, b in zip(q123, wrist)]


def sample_trajectory(protocol: str, n: int, params: KinematicParams, seed: int,
                      ws: Workspace | None = None) -> List[JointConfig]:
    """``n`` commands from the named protocol ("random" or "pick")."""
    ws = ws or Workspace()
    if n < 1:
        raise ValueError("n must be >= 1")
    if protocol == "random":
        return sample_random_trajectory(ws, n, params, seed)
    if protocol == "pick":
        cycles = -(-n // PICK_WAYPOINTS_PER_CYCLE)
        return sample_pick_place_trajectory(ws, cycles, params, seed)[:n]
    raise ValueError(f"unknown protocol {protocol!r}")


@dataclass
class Dataset:
    """Time-ordered (q_c, q_p) pairs from one contiguous run."""

    t: np.ndarray
    qc: np.ndarray
    qp: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=int)
        self.qc = np.asarray(self.qc, dtype=float).reshape(-1, 6)
        self.qp = np.asarray(self.qp, dtype=float).reshape(-1, 6)
        if not (len(self.t) == len(self.qc) == len(self.qp)):
            raise ValueError("t, qc and qp must have equal length")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("t must be strictly increasing")
        if not (np.all(np.isfinite(self.qc)) and np.all(np.isfinite(self.qp))):
            raise ValueError("dataset contains non-finite values")

    def __len__(self):
        return len(self.t)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"t": int(t), "qc": qc.tolist(), "qp": qp.tolist()}) + "\n"
            for t, qc, qp in zip(self.t, self.qc, self.qp)
        )

    @classmethod
    def from_jsonl(cls, text: str, meta: dict | None = None) -> "Dataset":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        return cls(
            np.array([r["t"] for r in rows], dtype=int),
            np.array([r["qc"] for r in rows], dtype=float).reshape(-1, 6),
            np.array([r["qp"] for r in rows], dtype=float).reshape(-1, 6),
            dict(meta or {}),
        )

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_jsonl())
        path.with_suffix(".meta.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        meta_path = path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls.from_jsonl(path.read_text(), meta)


class CollectionAborted(CablecalError):
    """Collection stopped early; ``partial`` holds the records gathered so far."""

    def __init__(self, message, partial: Dataset):
        super().__init__(message)
        self.partial = partial


def collect(commands: Sequence, plant: Plant, mode: str = "oracle", noise: float = 0.0, seed: int = 0,
            params: KinematicParams | None = None, scene: Scene | None = None,
            protocol: str = "custom") -> Dataset:
    """Replay ``commands`` on a freshly reset plant and record (q_c, q_p).

    ``oracle`` records the plant output directly; ``fiducial`` renders a frame of
    the physical pose and records the configuration estimated from it.
    """
    if len(commands) == 0:
        raise ValueError("no commands")
    if mode not in ("oracle", "fiducial"):
        raise ValueError(f"unknown collection mode {mode!r}")
    params = params or plant.params
    plant.reset(commands[0], seed=seed)
    meta = {
        "protocol": protocol,
        "seed": int(seed),
        "plant_config_hash": plant.cfg.config_hash(),
        "mode": mode,
        "noise": float(noise),
        "complete": True,
    }
    qcs, qps = [], []
    for t, cmd in enumerate(commands):
        try:
            qc = as_q(cmd)
            qp = plant.step(cmd).q
            if mode == "fiducial":
                frame = synthesize_frame(qp, params, scene, noise, rng_seed=seed * 1_000_003 + t,
                                         check_limits=False)
                qp = estimate_configuration(frame, params, scene).q
        except CablecalError as exc:
            meta.update(complete=False, error=str(exc))
            partial = Dataset(np.arange(len(qcs)), np.array(qcs).reshape(-1, 6), np.array(qps).reshape(-1, 6), meta)
            raise CollectionAborted(f"collection aborted at step {t}: {exc}", partial) from exc
        qcs.append(qc)
        qps.append(qp)
    return Dataset(np.arange(len(qcs)), np.array(qcs), np.array(qps), meta)


def collect_protocol(protocol: str, n: int, plant: Plant, seed: int, mode: str = "oracle",
                     noise: float = 0.0, ws: Workspace | None = None, scene: Scene | None = None) -> Dataset:
    ws = ws or Workspace()
    cmds = sample_trajectory(protocol, n, plant.params, seed, ws)
    ds = collect(cmds, plant, mode, noise, seed, plant.params, scene, protocol)
    ds.meta["workspace"] = [list(b) for b in ws.box]
    return ds


def collect_train_test(protocol: str, n: int, plant: Plant, seed: int, test_fraction: float = 0.1,
                       **kwargs) -> Tuple[Dataset, Dataset]:
    """Training run plus an independent test run of ``test_fraction`` the size."""
    train = collect_protocol(protocol, n, plant, seed, **kwargs)
    n_test = max(1, int(round(n * test_fraction)))
    test = collect_protocol(protocol, n_test, plant, seed + 7919, **kwargs)
    return train, test


JOINTS_WRIST = (4, 5, 6)


def make_examples(ds: Dataset, H: int, input_format: str = "cmd", output_format: str = "delta",
                  direction: str = "forward", joints: Sequence[int] = JOINTS_WRIST) -> Tuple[np.ndarray, np.ndarray]:
    """Windowed supervised examples.

    Row t (t = H..N-1) of ``X`` stacks ``[cur_t, prior_{t-1}, ..., prior_{t-H}]``
    over the selected joints, newest first. Forward: ``cur`` is the command and
    ``prior`` the commands (cmd) or the physical values (est, teacher forced).
    Inverse: ``cur`` is the physical value and ``prior`` the commands. Targets
    are the physical (forward) or commanded (inverse) values, as absolutes or
    as offsets from ``cur``.
    """
    input_format, output_format, direction = input_format.lower(), output_format.lower(), direction.lower()
    if H < 0:
        raise ValueError("H must be >= 0")
    if H >= len(ds):
        raise HistoryTooLongError(f"H={H} needs more than {len(ds)} records")
    if direction not in ("forward", "inverse"):
        raise ValueError(f"unknown direction {direction!r}")
    if input_format not in ("cmd", "est") or output_format not in ("abs", "delta"):
        raise ValueError("input format must be cmd|est, output format abs|delta")
    if direction == "inverse" and input_format == "est":
        raise FormatViolationError("inverse models take the cmd input format only")
    idx = np.array([j - 1 for j in joints])
    qc, qp = ds.qc[:, idx], ds.qp[:, idx]
    if direction == "forward":
        cur, prior, target = qc, (qc if input_format == "cmd" else qp), qp
    else:
        cur, prior, target = qp, qc, qc
    n = len(ds)
    rows = np.arange(H, n)
    blocks = [cur[rows]] + [prior[rows - lag] for lag in range(1, H + 1)]
    X = np.concatenate(blocks, axis=1)
    Y = target[rows] - (cur[rows] if output_format == "delta" else 0.0)
    return X, Y
