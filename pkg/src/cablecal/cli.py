"""``cablecal`` command line: reproducible pipelines over the library.

Files store SI units (metres, radians); console summaries print millimetres
and degrees. Every artifact gets a ``*.manifest.json`` sibling holding the
command line, config hash, seed, inputs, outputs, version and wall-clock
time; the artifacts themselves carry no timestamps, so identical flags give
byte-identical files.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import List

import numpy as np

from . import __version__
from . import bench
from .control import ControllerConfig
from .data import Dataset, Workspace, collect_protocol, make_examples, sample_trajectory
from .errors import CablecalError, ComputationError
from .fiducial import fit_sphere
from .geometry import register_rigid
from .kinematics import KinematicParams
from .models import ModelSpec, TrainConfig, horizon_ablation, load_model, save_model, train, train_ensemble
from .plant import Plant, PlantConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_COMPUTATION = 4

TARGET_SEED_OFFSET = 104_729


class UsageError(Exception):
    pass


# -- configuration -----------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(cfg) - {"plant", "kinematics", "workspace", "train"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _resolved(cfg: dict):
    params = KinematicParams.from_dict(cfg["kinematics"]) if "kinematics" in cfg else KinematicParams()
    plant_cfg = PlantConfig.from_dict(cfg["plant"]) if "plant" in cfg else PlantConfig()
    ws = Workspace(tuple(map(tuple, cfg["workspace"]))) if "workspace" in cfg else Workspace()
    return params, plant_cfg, ws


def config_hash(cfg: dict) -> str:
    params, plant_cfg, ws = _resolved(cfg)
    blob = json.dumps({
        "kinematics": params.to_dict(),
        "plant": plant_cfg.to_dict(),
        "workspace": [list(b) for b in ws.box],
        "train": cfg.get("train", {}),
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _train_config(args, cfg: dict) -> TrainConfig:
    base = dict(cfg.get("train", {}))
    for flag, key in (("epochs", "epochs"), ("lr", "lr"), ("batch", "batch"), ("lam", "lam")):
        v = getattr(args, flag, None)
        if v is not None:
            base[key] = v
    base["seed"] = args.seed
    if "decay_at" in base:
        base["decay_at"] = tuple(base["decay_at"])
    return TrainConfig(**base)


class Run:
    """Tracks inputs/outputs of one invocation and writes manifests."""

    def __init__(self, args, argv: List[str]):
        self.args = args
        self.argv = argv
        self.cfg = load_config(args.config)
        self.hash = config_hash(self.cfg)
        self.out_dir = Path(args.out_dir)
        self.inputs: List[str] = []
        self.started = time.time()

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def manifest(self, outputs) -> None:
        outputs = [str(p) for p in outputs]
        doc = {
            "command": ["cablecal", *self.argv],
            "config_hash": self.hash,
            "seed": self.args.seed,
            "inputs": self.inputs,
            "outputs": outputs,
            "version": __version__,
            "started": self.started,
            "wall_clock_s": time.time() - self.started,
        }
        first = Path(outputs[0])
        first.with_name(first.name + ".manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _load_dataset(run: Run, path) -> Dataset:
    if path is None:
        raise UsageError("a dataset path is required")
    run.inputs.append(str(path))
    return Dataset.load(path)


def _split(ds: Dataset, fraction: float = 0.1):
    n_val = max(1, int(round(len(ds) * fraction)))
    cut = len(ds) - n_val
    return (Dataset(ds.t[:cut], ds.qc[:cut], ds.qp[:cut], ds.meta),
            Dataset(ds.t[cut:], ds.qc[cut:], ds.qp[cut:], ds.meta))


def _spec(args) -> ModelSpec:
    joints = tuple(int(j) for j in args.joints.split(","))
    return ModelSpec(args.arch, args.input, args.output_format, args.horizon, args.direction,
                     args.hidden, args.layers, joints)


def _controller(run: Run, kind: str, model_path, alpha: float, M: int) -> ControllerConfig:
    names = {"passthrough": "passthrough", "forward": "forward-refine", "inverse": "inverse-direct"}
    model = None
    if kind != "passthrough":
        if model_path is None:
            raise UsageError(f"--model is required for the {kind} controller")
        run.inputs.append(str(model_path))
        model = load_model(model_path)
    return ControllerConfig(names[kind], alpha, M, model)


# -- subcommands -------------------------------------------------------------

def cmd_collect(run: Run) -> List[Path]:
    a = run.args
    if a.n < 1:
        raise UsageError("--n must be >= 1")
    params, plant_cfg, ws = _resolved(run.cfg)
    plant = Plant(plant_cfg, params)
    ds = collect_protocol(a.protocol, a.n, plant, a.seed, mode=a.mode, noise=a.noise, ws=ws)
    ds.meta["config_hash"] = run.hash
    out = Path(a.output) if a.output else run.path(f"{a.protocol}_n{a.n}_seed{a.seed}_{run.hash}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    wrist = np.degrees(np.sqrt(np.mean((ds.qp - ds.qc)[:, 3:] ** 2, axis=0)))
    print(f"collected {len(ds)} records -> {out}")
    print("wrist RMSE (deg): " + ", ".join(f"{v:.2f}" for v in wrist))
    return [out, out.with_suffix(".meta.json")]


def cmd_train(run: Run) -> List[Path]:
    a = run.args
    spec = _spec(a)
    ds = _load_dataset(run, a.data)
    val = _load_dataset(run, a.val) if a.val else None
    if val is None:
        ds, val = _split(ds)
    fmt = (spec.input_format, spec.output_format, spec.direction, spec.joints)
    tr = make_examples(ds, spec.horizon, *fmt)
    va = make_examples(val, spec.horizon, *fmt)
    hyper = _train_config(a, run.cfg)
    if a.ensemble > 1:
        model = train_ensemble(spec, tr, va, hyper, size=a.ensemble, jobs=a.jobs)
        val_mse = float(np.mean([m.training_meta["val_mse"] for m in model.members]))
        ens_mse = float(np.mean((model.predict_target(va[0]) - va[1]) ** 2))
    else:
        model = train(spec, tr, va, hyper)
        val_mse = ens_mse = model.training_meta["val_mse"]
    stem = f"{spec.name.lower()}_{spec.direction}_H{spec.horizon}_seed{a.seed}_{run.hash}"
    out = Path(a.model_out) if a.model_out else run.path(f"{stem}.model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    metrics = _write_json(out.with_name(out.name.replace(".model.json", "") + ".metrics.json"), {
        "spec": spec.to_dict(), "ensemble": a.ensemble, "val_mse": val_mse, "ensemble_val_mse": ens_mse,
        "baseline_val_mse": float(np.mean(va[1] ** 2)) if spec.output_format == "delta" else None,
    })
    print(f"{spec.name} {spec.direction} H={spec.horizon}: val MSE {ens_mse:.4e} -> {out}")
    return [out, metrics]


def cmd_ablate(run: Run) -> List[Path]:
    a = run.args
    try:
        horizons = [int(h) for h in a.horizons.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --horizons: {a.horizons}") from exc
    ds = _load_dataset(run, a.data)
    val = _load_dataset(run, a.val) if a.val else None
    if val is None:
        ds, val = _split(ds)
    rows = horizon_ablation(_spec(a), ds, val, horizons, a.repeats, _train_config(a, run.cfg), a.jobs)
    header = ["horizon", "mean_mse", "sd_mse"] + [f"seed{a.seed + r}" for r in range(a.repeats)]
    table = [[r.horizon, r.mean_mse, r.sd_mse, *r.values] for r in rows]
    csv_p, json_p = bench.write_study(run.out_dir, "ablate", a.seed, run.hash, bench._csv(header, table),
                                      {"horizons": horizons, "repeats": a.repeats,
                                       "mean_mse": [r.mean_mse for r in rows], "sd_mse": [r.sd_mse for r in rows]})
    for r in rows:
        print(f"H={r.horizon:2d}  val MSE {r.mean_mse:.3e} +- {r.sd_mse:.1e}")
    return [csv_p, json_p]


def cmd_track(run: Run) -> List[Path]:
    a = run.args
    params, plant_cfg, ws = _resolved(run.cfg)
    ctrl = _controller(run, a.controller, a.model, a.alpha, a.M)
    # offset keeps targets independent of a dataset collected with the same --seed
    targets = [q.with_role("desired")
               for q in sample_trajectory(a.protocol, a.n, params, a.seed + TARGET_SEED_OFFSET, ws)]
    report = bench.track_trajectory(ctrl, Plant(plant_cfg, params), targets, seed=a.seed)
    m = report.metrics()
    summary = {"controller": ctrl.kind, "n": len(report), "clamped": report.n_clamped,
               "summary_mm": m["summary"], "cdf": {str(k): v for k, v in m["cdf"].items()}}
    stem = f"track_{a.controller}"
    csv_p, json_p = bench.write_study(run.out_dir, stem, a.seed, run.hash, report.to_csv(), summary)
    s = m["summary"]
    print(f"{ctrl.kind}: mean {s['mean']:.3f} mm, median {s['median']:.3f} mm, max {s['max']:.3f} mm, "
          f"within 1 mm {100 * m['cdf'][1.0]:.1f}%")
    return [csv_p, json_p]


def cmd_peg(run: Run) -> List[Path]:
    a = run.args
    params, plant_cfg, _ = _resolved(run.cfg)
    ctrl = _controller(run, a.controller, a.model, a.alpha, a.M)
    board = bench.PegBoard(pick_tol=a.pick_tol / 1000.0, place_tol=a.place_tol / 1000.0)
    reports = [bench.peg_transfer_sim(ctrl, Plant(plant_cfg, params), board, seed=a.seed + r) for r in range(a.runs)]
    header = ["run", "attempt", "block", "wave", "outcome", "pick_err_mm", "place_err_mm", "waypoints"]
    rows = []
    for r, rep in enumerate(reports):
        for i, att in enumerate(rep.attempts):
            rows.append([r, i, att["block"], att["wave"], att["outcome"], 1000 * att["pick_err"],
                         "" if att["place_err"] is None else 1000 * att["place_err"], att["waypoints"]])
    totals = {k: sum(rep.totals[k] for rep in reports) for k in bench.OUTCOMES}
    attempts = sum(len(rep.attempts) for rep in reports)
    summary = {"controller": ctrl.kind, "runs": a.runs, "attempts": attempts, "totals": totals,
               "success_rate": totals["success"] / attempts}
    csv_p, json_p = bench.write_study(run.out_dir, f"peg_{a.controller}", a.seed, run.hash,
                                      bench._csv(header, rows), summary)
    print(f"{ctrl.kind}: {totals['success']}/{attempts} transfers succeeded "
          f"({100 * summary['success_rate']:.1f}%); " + ", ".join(f"{k} {v}" for k, v in totals.items()))
    return [csv_p, json_p]


def cmd_study(run: Run) -> List[Path]:
    a = run.args
    params, plant_cfg, ws = _resolved(run.cfg)
    if a.kind == "measurement":
        res = bench.measurement_noise_study(params, a.noise, a.trials, a.seed, jobs=a.jobs)
        header, rows = bench.noise_study_rows(res)
        csv_p, json_p = bench.write_study(run.out_dir, "study_measurement", a.seed, run.hash,
                                          bench._csv(header, rows), res)
        deg = np.degrees(res["joint_rms"])
        print(f"sphere centre error {1000 * res['sphere_mean']:.3f} +- {1000 * res['sphere_sd']:.3f} mm "
              f"(RMS {1000 * res['sphere_rms']:.3f} mm)")
        print(f"joint RMS: q1 {deg[0]:.3f} deg, q2 {deg[1]:.3f} deg, q3 {1000 * res['joint_rms'][2]:.3f} mm, "
              f"q4 {deg[3]:.3f} deg, q5 {deg[4]:.3f} deg, q6 {deg[5]:.3f} deg")
    else:
        res = bench.error_identification(Plant(plant_cfg, params), a.n, a.seed, ws)
        header = ["joint", "rmse_free", "rmse_fixed_arm"]
        rows = [[bench.JOINT_NAMES[i], res["rmse_free"][i], res["rmse_fixed_arm"][i]] for i in range(6)]
        csv_p, json_p = bench.write_study(run.out_dir, "study_error_id", a.seed, run.hash,
                                          bench._csv(header, rows), res)
        print("wrist RMSE free (deg): " + ", ".join(f"{np.degrees(v):.2f}" for v in res["rmse_free"][3:]))
        print("wrist RMSE fixed arm (deg): " + ", ".join(f"{np.degrees(v):.2f}" for v in res["rmse_fixed_arm"][3:]))
    return [csv_p, json_p]


def _read_points(path) -> np.ndarray:
    text = Path(path).read_text()
    if path.endswith(".json"):
        return np.asarray(json.loads(text), dtype=float).reshape(-1, 3)
    return np.loadtxt(path, delimiter=",", ndmin=2).reshape(-1, 3)


def cmd_fit_sphere(run: Run) -> List[Path]:
    a = run.args
    run.inputs.append(a.points)
    s = fit_sphere(_read_points(a.points))
    out = Path(a.output) if a.output else run.path(f"sphere_{Path(a.points).stem}.json")
    _write_json(out, s.to_dict())
    c = 1000 * s.center
    print(f"centre ({c[0]:.3f}, {c[1]:.3f}, {c[2]:.3f}) mm, radius {1000 * s.radius:.3f} mm, "
          f"residual RMS {1000 * s.residual_rms:.4f} mm")
    return [out]


def cmd_register(run: Run) -> List[Path]:
    a = run.args
    run.inputs += [a.robot, a.camera]
    T = register_rigid(_read_points(a.robot), _read_points(a.camera))
    out = Path(a.output) if a.output else run.path("registration.json")
    _write_json(out, T.to_dict())
    resid = T.apply(_read_points(a.camera)) - _read_points(a.robot)
    print(f"registration RMS residual {1000 * np.sqrt(np.mean(np.sum(resid ** 2, axis=1))):.4f} mm -> {out}")
    return [out]


def cmd_inspect_linear(run: Run) -> List[Path]:
    a = run.args
    run.inputs.append(a.model)
    model = load_model(a.model)
    header, rows = bench.linear_grid_rows(model)
    grids = bench.inspect_linear_model(model)
    cross = bench.cross_terms(grids, model.spec.joints)
    summary = {"spec": model.spec.to_dict(),
               "max_cross_terms": {f"q{i}->q{j}": v for (i, j), v in sorted(cross.items())}}
    csv_p, json_p = bench.write_study(run.out_dir, "inspect_linear", a.seed, run.hash, bench._csv(header, rows), summary)
    for j, g in grids.items():
        print(f"q{j}: grid {g.shape[0]}x{g.shape[1]}, largest cross-joint weight "
              f"{max((v for (i, k), v in cross.items() if k == j), default=0.0):.3f}")
    return [csv_p, json_p]


# -- parser ------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--data", help="training dataset (JSONL)")
    p.add_argument("--val", help="validation dataset; default: last 10%% of --data")
    p.add_argument("--arch", default="rnn", choices=["linear", "ff", "rnn"])
    p.add_argument("--input", default="cmd", choices=["cmd", "est"])
    p.add_argument("--output", dest="output_format", default="delta", choices=["abs", "delta"])
    p.add_argument("--horizon", type=int, default=4)
    p.add_argument("--direction", default="forward", choices=["forward", "inverse"])
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--joints", default="4,5,6", help="comma-separated joint numbers")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--lam", type=float, help="LASSO penalty on standardised data")


def _add_controller_flags(p):
    p.add_argument("--controller", default="passthrough", choices=["passthrough", "forward", "inverse"])
    p.add_argument("--model", help="model or ensemble JSON")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--M", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cablecal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON with optional plant/kinematics/workspace/train sections")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out-dir", default="out")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", parents=[common], help="record (q_c, q_p) pairs from the simulated plant")
    p.add_argument("--protocol", default="random", choices=["random", "pick"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mode", default="oracle", choices=["oracle", "fiducial"])
    p.add_argument("--noise", type=float, default=0.0, help="fiducial centre noise (m), fiducial mode")
    p.add_argument("--output")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", parents=[common], help="train a model or ensemble")
    _add_model_flags(p)
    p.add_argument("--ensemble", type=int, default=1)
    p.add_argument("--model-out", help="model path; default derived from spec, seed and config hash")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", parents=[common], help="validation MSE versus history length")
    _add_model_flags(p)
    p.add_argument("--horizons", default="0,1,2,4,6")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("track", parents=[common], help="track a protocol trajectory")
    _add_controller_flags(p)
    p.add_argument("--protocol", default="pick", choices=["random", "pick"])
    p.add_argument("--n", type=int, default=300)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("peg", parents=[common], help="simulated peg transfer")
    _add_controller_flags(p)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--pick-tol", type=float, default=2.0, help="mm")
    p.add_argument("--place-tol", type=float, default=3.0, help="mm")
    p.set_defaults(func=cmd_peg)

    p = sub.add_parser("study", parents=[common], help="measurement-noise or error-identification study")
    p.add_argument("kind", choices=["measurement", "error-id"])
    p.add_argument("--noise", type=float, default=0.00067, help="max centre noise (m)")
    p.add_argument("--trials", type=int, default=120)
    p.add_argument("--n", type=int, default=270)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("fit-sphere", parents=[common], help="fit a sphere to points (CSV x,y,z or JSON)")
    p.add_argument("points")
    p.add_argument("--output")
    p.set_defaults(func=cmd_fit_sphere)

    p = sub.add_parser("register", parents=[common], help="rigid transform camera -> robot")
    p.add_argument("--robot", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("inspect-linear", parents=[common], help="A-matrix grids of a linear model")
    p.add_argument("model")
    p.set_defaults(func=cmd_inspect_linear)
    return parser


def main(argv: List[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        run = Run(args, argv)
        outputs = args.func(run)
        run.manifest(outputs)
        return EXIT_OK
    except UsageError as exc:
        print(f"cablecal: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cablecal: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ComputationError as exc:
        print(f"cablecal: computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTATION
    except (CablecalError, ValueError) as exc:
        print(f"cablecal: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
