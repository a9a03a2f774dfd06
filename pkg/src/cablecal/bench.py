"""Desk-scale studies: measurement noise, error identification, tracking
comparisons, simulated peg transfer and linear-model inspection.

Every study is a pure function of its arguments and seeds. ``write_study``
stores a CSV table plus a JSON summary named after the study, seed and
config hash.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .control import Controller, ControllerConfig, track_trajectory
from .data import PICK_GRASP_RANGE, PICK_JITTER, Workspace, sample_random_trajectory
from .errors import UntrainedModelError
from .fiducial import Scene, estimate_configuration, fit_sphere, segment_spheres, synthesize_frame
from .kinematics import (
    JointConfig,
    KinematicParams,
    forward_kinematics,
    random_configuration,
    tip_position,
    wrist_joints_from_position,
    wrist_position_from_joints,
)
from .metrics import TrackingReport, tracking_metrics  # noqa: F401  (re-exported)
from .plant import Plant, PlantConfig

JOINT_NAMES = ("q1", "q2", "q3", "q4", "q5", "q6")


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_study(out_dir, study: str, seed: int, config_hash: str, csv_text: str, summary: dict) -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{study}_seed{seed}_{config_hash}"
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(csv_text)
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


# -- measurement noise -------------------------------------------------------

def _noise_trial(args):
    params, noise_max, seed, k, scene = args
    rng = np.random.default_rng([seed, k])
    q = random_configuration(rng, params)
    frame = synthesize_frame(q, params, scene, noise_max, rng_seed=int(rng.integers(2**63)))
    centers = forward_kinematics(q, params).fiducial_centers
    to_cam = scene.camera_to_robot.inverse()
    sphere_err = [np.linalg.norm(fit_sphere(pts).center - to_cam.apply(centers[label]))
                  for label, pts in segment_spheres(frame, scene.depth_range).items()]
    return estimate_configuration(frame, params, scene).q - q, sphere_err


def measurement_noise_study(params: KinematicParams, noise_max: float, trials: int = 120, seed: int = 0,
                            scene: Scene | None = None, jobs: int = 1) -> dict:
    """Monte-Carlo propagation of fiducial noise into sphere centres and joints.

    Each trial renders a random in-limit configuration with per-sphere noise of
    maximum magnitude ``noise_max`` and re-estimates the joints. Returns
    per-joint RMS/SD of the estimate error and RMS/mean/SD of the sphere-centre
    error (metres / radians). Trial ``k`` is seeded by ``(seed, k)``, so the
    result does not depend on ``jobs``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    scene = scene or Scene()
    args = [(params, noise_max, seed, k, scene) for k in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_noise_trial, args, chunksize=max(1, trials // (4 * jobs))))
    else:
        results = [_noise_trial(a) for a in args]
    e = np.array([r[0] for r in results])
    s = np.concatenate([r[1] for r in results])
    return {
        "noise_max": float(noise_max),
        "trials": int(trials),
        "seed": int(seed),
        "joint_rms": np.sqrt(np.mean(e ** 2, axis=0)).tolist(),
        "joint_sd": e.std(axis=0).tolist(),
        "sphere_rms": float(np.sqrt(np.mean(s ** 2))),
        "sphere_mean": float(s.mean()),
        "sphere_sd": float(s.std()),
    }


def noise_study_rows(result: dict) -> Tuple[List[str], List[list]]:
    rows = [[JOINT_NAMES[i], result["joint_rms"][i], result["joint_sd"][i]] for i in range(6)]
    rows.append(["sphere", result["sphere_rms"], result["sphere_sd"]])
    return ["quantity", "rms", "sd"], rows


# -- error identification ----------------------------------------------------

def _replay(plant: Plant, commands: np.ndarray, seed: int) -> np.ndarray:
    plant.reset(commands[0], seed=seed)
    return plant.run(commands)


def coupling_response(cfg: PlantConfig, params: KinematicParams | None = None, sweep: float = 0.4,
                      steps: int = 20) -> float:
    """Peak |q6| motion while q6 is commanded still and q5 sweeps (noise off)."""
    plant = Plant(cfg.replace(noise_sd=(0.0,) * 6), params)
    q0 = np.array([0.0, 0.0, 0.12, 0.0, 0.0, 0.0])
    cmds = np.repeat(q0[None, :], steps, axis=0)
    cmds[:, 4] = np.linspace(0.0, sweep, steps)
    out = _replay(plant, cmds, 0)
    return float(np.max(np.abs(out[:, 5] - q0[5])))


def error_identification(plant: Plant, n: int = 270, seed: int = 0, ws: Workspace | None = None) -> dict:
    """Replay a random trajectory with the arm free and with q1..q3 frozen.

    Reports per-joint RMSE of q_p - q_c for both runs, their relative change on
    the wrist joints, the correlation between commanded q5/q6 increments and
    the partner joint's error increments, and the static q5 -> q6 coupling
    response of the plant.
    """
    ws = ws or Workspace()
    cmds = np.array([c.q for c in sample_random_trajectory(ws, n, plant.params, seed)])
    fixed = cmds.copy()
    fixed[:, :3] = cmds[0, :3]
    free_out = _replay(plant, cmds, seed)
    fixed_out = _replay(plant, fixed, seed)
    rmse_free = np.sqrt(np.mean((free_out - cmds) ** 2, axis=0))
    rmse_fixed = np.sqrt(np.mean((fixed_out - fixed) ** 2, axis=0))

    err = free_out - cmds
    dc = np.diff(cmds, axis=0)
    de = np.diff(err, axis=0)

    def corr(a, b):
        if a.std() == 0 or b.std() == 0:
            return 0.0
        return float(np.corrcoef(a, b)[0, 1])

    with np.errstate(invalid="ignore", divide="ignore"):
        change = np.where(rmse_free > 0, np.abs(rmse_fixed - rmse_free) / rmse_free, 0.0)
    return {
        "n": int(n),
        "seed": int(seed),
        "rmse_free": rmse_free.tolist(),
        "rmse_fixed_arm": rmse_fixed.tolist(),
        "wrist_relative_change": change[3:].tolist(),
        "corr_dq5_de6": corr(dc[:, 4], de[:, 5]),
        "corr_dq6_de5": corr(dc[:, 5], de[:, 4]),
        "coupling_response_q6": coupling_response(plant.cfg, plant.params),
    }


# -- tracking comparisons ----------------------------------------------------

def compare_controllers(controllers: Mapping[str, ControllerConfig], plant: Plant, targets: Sequence,
                        seed: int = 0) -> Dict[str, TrackingReport]:
    """Track the same targets with each controller on identically seeded plants."""
    return {name: track_trajectory(cfg, plant, targets, seed=seed) for name, cfg in controllers.items()}


def tracking_table(reports: Mapping[str, TrackingReport]) -> Tuple[List[str], List[list]]:
    header = ["controller", "max", "min", "mean", "median", "sd", "within_1mm", "within_2mm"]
    rows = []
    for name, rep in reports.items():
        m = rep.metrics()
        s = m["summary"]
        rows.append([name, s["max"], s["min"], s["mean"], s["median"], s["sd"], m["cdf"][1.0], m["cdf"][2.0]])
    return header, rows


# -- peg transfer ------------------------------------------------------------

def _default_pegs() -> Tuple[np.ndarray, np.ndarray]:
    ys = np.linspace(-0.025, 0.025, 3)
    left = np.array([[x, y, 0.0] for x in (-0.035, -0.02) for y in ys])
    right = np.array([[x, y, 0.0] for x in (0.02, 0.035) for y in ys])
    return left, right


@dataclass(frozen=True)
class PegBoard:
    """Peg tips in the base frame: six on the left, six on the right.

    Blocks start on the left pegs. Peg coordinates are tool-tip positions at
    grasp height ``z_grasp``; ``clearance`` is the lift above the pegs between
    moves. Tolerances are in metres.
    """

    left: np.ndarray = field(default_factory=lambda: _default_pegs()[0])
    right: np.ndarray = field(default_factory=lambda: _default_pegs()[1])
    z_grasp: float = -0.392
    clearance: float = 0.03
    pick_tol: float = 0.002
    place_tol: float = 0.003

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float).reshape(-1, 3).copy()
        right = np.asarray(self.right, dtype=float).reshape(-1, 3).copy()
        left[:, 2] = right[:, 2] = self.z_grasp
        if len(left) != len(right) or len(left) == 0:
            raise ValueError("board needs the same positive number of left and right pegs")
        pegs = np.vstack([left, right])
        d = np.linalg.norm(pegs[:, None, :] - pegs[None, :, :], axis=2)
        if np.any(d[np.triu_indices(len(pegs), 1)] < 1e-9):
            raise ValueError("peg positions must be distinct")
        if self.pick_tol <= 0 or self.place_tol <= 0 or self.clearance <= 0:
            raise ValueError("tolerances and clearance must be positive")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def n_blocks(self) -> int:
        return len(self.left)


OUTCOMES = ("success", "pick_failure", "stuck", "fall")


@dataclass
class PegReport:
    attempts: List[dict]
    meta: dict = field(default_factory=dict)

    @property
    def totals(self) -> Dict[str, int]:
        t = {k: 0 for k in OUTCOMES}
        for a in self.attempts:
            t[a["outcome"]] += 1
        return t

    @property
    def success_rate(self) -> float:
        return self.totals["success"] / len(self.attempts) if self.attempts else 0.0

    @property
    def mean_waypoints(self) -> float:
        return float(np.mean([a["waypoints"] for a in self.attempts])) if self.attempts else 0.0

    def summary(self) -> dict:
        return {"attempts": len(self.attempts), "totals": self.totals, "success_rate": self.success_rate,
                "mean_waypoints": self.mean_waypoints, **self.meta}

    def to_csv(self) -> str:
        header = ["attempt", "block", "wave", "outcome", "pick_err_mm", "place_err_mm", "waypoints"]
        rows = [[i, a["block"], a["wave"], a["outcome"], 1000 * a["pick_err"],
                 1000 * a["place_err"] if a["place_err"] is not None else "", a["waypoints"]]
                for i, a in enumerate(self.attempts)]
        return _csv(header, rows)


def arm_joints_for_tip(tip, q456, params: KinematicParams, iters: int = 30) -> np.ndarray:
    """q1..q3 placing the tool tip at ``tip`` for the given wrist joints (fixed-point on the wrist offset)."""
    tip = np.asarray(tip, dtype=float)
    q = np.concatenate([np.zeros(3), np.asarray(q456, dtype=float)])
    wrist = tip.copy()
    for _ in range(iters):
        q[:3] = wrist_joints_from_position(wrist, params)
        offset = tip_position(q, params) - wrist_position_from_joints(q[:3], params)
        new = tip - offset
        if np.linalg.norm(new - wrist) < 1e-13:
            break
        wrist = new
    q[:3] = wrist_joints_from_position(wrist, params)
    return q[:3]


def _transfer_waypoints(src, dst, board: PegBoard, rng, params: KinematicParams):
    """Approach, grasp, lift, carry, place, lift: returns targets and the grasp/place indices."""
    up = np.array([0.0, 0.0, board.clearance])
    half = 0.5 * up
    tips = [src + up, src + half, src, src + half, src + up,
            0.5 * (src + dst) + up,
            dst + up, dst + half, dst, dst + half, dst + up]
    grasp = rng.uniform(-np.array(PICK_GRASP_RANGE), PICK_GRASP_RANGE)
    lo, hi = params.lower[3:], params.upper[3:]
    targets = []
    for tip in tips:
        wrist = np.clip(grasp + rng.uniform(-PICK_JITTER, PICK_JITTER, size=3), lo, hi)
        q = np.concatenate([arm_joints_for_tip(tip, wrist, params), wrist])
        targets.append(JointConfig(q, "desired").validate(params))
    return targets, 2, 8


def _classify(pick_err: float, place_vec: np.ndarray | None, board: PegBoard) -> str:
    if pick_err > board.pick_tol:
        return "pick_failure"
    err = float(np.linalg.norm(place_vec))
    if err > board.place_tol:
        return "fall"
    lateral = float(np.linalg.norm(place_vec[:2]))
    if err > 0.5 * board.place_tol and lateral > abs(place_vec[2]):
        return "stuck"
    return "success"


def peg_transfer_sim(ctrl: ControllerConfig, plant: Plant, board: PegBoard | None = None, seed: int = 0) -> PegReport:
    """Six blocks left -> right, then the survivors right -> left, on one continuous run.

    A pick failure is declared when the tool tip misses the grasp point by more
    than ``pick_tol``; after a good grasp the placement error decides between
    success, stuck and fall. Blocks that fail their first transfer are not
    attempted again.
    """
    board = board or PegBoard()
    params = plant.params
    rng = np.random.default_rng(seed)
    controller = Controller(ctrl, params)
    first, _, _ = _transfer_waypoints(board.left[0], board.right[0], board, np.random.default_rng(0), params)
    q0 = first[0].q
    plant.reset(q0, seed=seed)
    controller.reset(q0)

    def run(targets):
        out = []
        for d in targets:
            cmd, _ = controller.command(d)
            out.append(plant.step(cmd).q)
            controller.commit(cmd)
        return out

    attempts = []
    survivors = []
    for wave, (src_pegs, dst_pegs) in enumerate([(board.left, board.right), (board.right, board.left)], 1):
        blocks = range(board.n_blocks) if wave == 1 else survivors
        done = []
        for b in blocks:
            targets, gi, pi = _transfer_waypoints(src_pegs[b], dst_pegs[b], board, rng, params)
            qp = run(targets)
            pick_err = float(np.linalg.norm(tip_position(qp[gi], params) - tip_position(targets[gi], params)))
            place_vec = None
            if pick_err <= board.pick_tol:
                place_vec = tip_position(qp[pi], params) - tip_position(targets[pi], params)
            outcome = _classify(pick_err, place_vec, board)
            attempts.append({
                "block": int(b), "wave": wave, "outcome": outcome, "pick_err": pick_err,
                "place_err": None if place_vec is None else float(np.linalg.norm(place_vec)),
                "waypoints": len(targets),
            })
            if outcome == "success":
                done.append(b)
        survivors = done
    return PegReport(attempts, {"controller": ctrl.kind, "seed": int(seed)})


# -- linear model inspection -------------------------------------------------

def inspect_linear_model(model) -> Dict[int, np.ndarray]:
    """Weights of a linear model regrouped per output joint.

    ``grids[j]`` has one row per input block (current value, then lags 1..H)
    and one column per model joint. Delta-output models are shown as the
    equivalent absolute map (identity added to the current block).
    """
    if model is None or not getattr(model, "weights", None):
        raise UntrainedModelError("model has no fitted weights")
    spec = model.spec
    A, _ = model.linear_matrix()
    k, H = spec.step_dim, spec.horizon
    A = A.copy()
    if spec.output_format == "delta":
        A[:k, :] += np.eye(k)
    return {j: A[:, col].reshape(H + 1, k) for col, j in enumerate(spec.joints)}


def linear_grid_rows(model) -> Tuple[List[str], List[list]]:
    grids = inspect_linear_model(model)
    joints = model.spec.joints
    header = ["output_joint", "block"] + [f"q{j}" for j in joints]
    rows = []
    for j, g in grids.items():
        for r in range(g.shape[0]):
            rows.append([f"q{j}", "current" if r == 0 else f"lag{r}", *g[r]])
    return header, rows


def cross_terms(grids: Dict[int, np.ndarray], joints: Sequence[int]) -> Dict[Tuple[int, int], float]:
    """Largest |weight| from input joint ``i`` into output joint ``j`` over all blocks, i != j."""
    idx = {j: c for c, j in enumerate(joints)}
    out = {}
    for j, g in grids.items():
        for i in joints:
            if i != j:
                out[(i, j)] = float(np.max(np.abs(g[:, idx[i]])))
    return out
