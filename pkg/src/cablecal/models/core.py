"""Model specs, training, prediction, ensembling and persistence."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..errors import (
    DivergenceError,
    FormatViolationError,
    ShapeMismatchError,
)
from . import nets
from .lasso import lasso_fit

MODEL_SCHEMA = "cablecal.model/1"
ENSEMBLE_SCHEMA = "cablecal.ensemble/1"

_ARCH_NAMES = {"linear": "Linear", "ff": "FF", "rnn": "RNN"}


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "rnn"
    input_format: str = "cmd"
    output_format: str = "delta"
    horizon: int = 4
    direction: str = "forward"
    hidden_units: int = 256
    layers: int = 2
    joints: Tuple[int, ...] = (4, 5, 6)

    def __post_init__(self):
        for name in ("arch", "input_format", "output_format", "direction"):
            object.__setattr__(self, name, str(getattr(self, name)).lower())
        object.__setattr__(self, "joints", tuple(int(j) for j in self.joints))
        if self.arch not in _ARCH_NAMES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.input_format not in ("cmd", "est") or self.output_format not in ("abs", "delta"):
            raise ValueError("input format must be cmd|est and output format abs|delta")
        if self.direction not in ("forward", "inverse"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.direction == "inverse" and self.input_format == "est":
            raise FormatViolationError("inverse models take the cmd input format only")
        if self.horizon < 0 or self.hidden_units < 1 or self.layers < 0:
            raise ValueError("horizon >= 0, hidden_units >= 1 and layers >= 0 required")

    @property
    def name(self) -> str:
        return f"{_ARCH_NAMES[self.arch]}-{self.input_format.title()}-{self.output_format.title()}"

    @property
    def step_dim(self) -> int:
        return len(self.joints)

    @property
    def input_dim(self) -> int:
        return (self.horizon + 1) * self.step_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["joints"] = list(self.joints)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser settings; learning rate halves at 60% and 80% of the epochs."""

    lr: float = 1e-3
    epochs: int = 300
    batch: int = 64
    seed: int = 0
    lam: float = 1e-3
    decay_at: Tuple[float, ...] = (0.6, 0.8)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decay_at"] = list(self.decay_at)
        return d


@dataclass
class Model:
    spec: ModelSpec
    weights: Dict[str, np.ndarray]
    normalization: Dict[str, np.ndarray]
    training_meta: dict = field(default_factory=dict)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.spec.input_dim:
            raise ShapeMismatchError(f"{self.spec.name} H={self.spec.horizon} expects "
                                     f"{self.spec.input_dim} inputs, got {X.shape[1]}")
        return X, single

    def predict_target(self, X) -> np.ndarray:
        """Raw model output in target units (offset for delta models)."""
        X, single = self._check(X)
        nrm = self.normalization
        Xs = (X - nrm["x_mean"]) / nrm["x_scale"]
        out, _ = nets.forward(self.spec.arch, self.weights, Xs, self.spec.step_dim)
        Y = out * nrm["y_scale"] + nrm["y_mean"]
        return Y[0] if single else Y

    def predict(self, X) -> np.ndarray:
        """Absolute joint prediction; delta models add the current-entry block of X."""
        X, single = self._check(X)
        Y = self.predict_target(X)
        if self.spec.output_format == "delta":
            Y = Y + X[:, : self.spec.step_dim]
        return Y[0] if single else Y

    def linear_matrix(self) -> Tuple[np.ndarray, np.ndarray]:
        """``(A, b)`` of a linear model in raw units: ``target = X @ A + b``."""
        if self.spec.arch != "linear":
            raise ValueError("only linear models have an A matrix")
        nrm = self.normalization
        A = self.weights["W"] * nrm["y_scale"][None, :] / nrm["x_scale"][:, None]
        b = nrm["y_mean"] + self.weights["b"] * nrm["y_scale"] - nrm["x_mean"] @ A
        return A, b

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "spec": self.spec.to_dict(),
            "normalization": {k: v.tolist() for k, v in self.normalization.items()},
            "weights": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                        for k, v in self.weights.items()},
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        if d.get("schema") != MODEL_SCHEMA:
            raise ValueError(f"unsupported model schema {d.get('schema')!r}")
        return cls(
            ModelSpec.from_dict(d["spec"]),
            {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["weights"].items()},
            {k: np.asarray(v, dtype=float) for k, v in d["normalization"].items()},
            d.get("training_meta", {}),
        )


@dataclass
class Ensemble:
    members: List[Model]

    def __post_init__(self):
        if not self.members:
            raise ValueError("empty ensemble")
        specs = {json.dumps(m.spec.to_dict(), sort_keys=True) for m in self.members}
        if len(specs) != 1:
            raise ValueError("ensemble members must share one spec")

    @property
    def spec(self) -> ModelSpec:
        return self.members[0].spec

    def predict(self, X) -> np.ndarray:
        return np.mean([m.predict(X) for m in self.members], axis=0)

    def predict_target(self, X) -> np.ndarray:
        return np.mean([m.predict_target(X) for m in self.members], axis=0)

    def to_dict(self) -> dict:
        return {"schema": ENSEMBLE_SCHEMA, "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        if d.get("schema") != ENSEMBLE_SCHEMA:
            raise ValueError(f"unsupported ensemble schema {d.get('schema')!r}")
        return cls([Model.from_dict(m) for m in d["members"]])


def predict(model, x) -> np.ndarray:
    return model.predict(x)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path):
    d = json.loads(Path(path).read_text())
    if d.get("schema") == ENSEMBLE_SCHEMA:
        return Ensemble.from_dict(d)
    return Model.from_dict(d)


def _scale(a):
    s = a.std(axis=0)
    return np.where(s > 1e-12, s, 1.0)


def _data_hash(X, Y) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(Y).tobytes())
    return h.hexdigest()[:12]


def train(spec: ModelSpec, train_xy, val_xy=None, hyper: TrainConfig | None = None) -> Model:
    """Fit ``spec`` to ``(X, Y)`` training examples.

    Inputs and targets are standardised with training statistics. Linear
    models are fitted by LASSO; FF/RNN by mini-batch Adam on the MSE. The
    returned model records the validation MSE in raw target units.
    """
    hyper = hyper or TrainConfig()
    X, Y = (np.asarray(a, dtype=float) for a in train_xy)
    if len(X) == 0:
        raise ValueError("empty training set")
    if X.shape[1] != spec.input_dim or Y.shape[1] != spec.step_dim:
        raise ShapeMismatchError(f"examples {X.shape}/{Y.shape} do not match {spec}")
    nrm = {"x_mean": X.mean(axis=0), "x_scale": _scale(X), "y_mean": Y.mean(axis=0), "y_scale": _scale(Y)}
    Xs = (X - nrm["x_mean"]) / nrm["x_scale"]
    Ys = (Y - nrm["y_mean"]) / nrm["y_scale"]
    rng = np.random.default_rng(hyper.seed)
    losses = []

    if spec.arch == "linear":
        A, b = lasso_fit(Xs, Ys, hyper.lam)
        weights = {"W": A, "b": b}
        losses.append(float(np.mean((Xs @ A + b - Ys) ** 2)))
    else:
        weights = nets.init_params(spec.arch, spec.input_dim, spec.step_dim, spec.step_dim,
                                   spec.hidden_units, spec.layers, rng)
        opt = nets.Adam(weights, hyper.lr)
        n = len(Xs)
        milestones = [int(round(f * hyper.epochs)) for f in hyper.decay_at]
        for epoch in range(hyper.epochs):
            if epoch in milestones:
                opt.lr *= 0.5
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, hyper.batch):
                idx = order[start:start + hyper.batch]
                loss, grads = nets.mse_and_grad(spec.arch, weights, Xs[idx], Ys[idx], spec.step_dim)
                if not np.isfinite(loss):
                    raise DivergenceError(f"{spec.name}: loss became {loss} at epoch {epoch}")
                opt.step(weights, grads)
                total += loss * len(idx)
            losses.append(total / n)

    model = Model(spec, weights, nrm, {
        "loss_curve": losses,
        "seed": hyper.seed,
        "dataset_hash": _data_hash(X, Y),
        "hyper": hyper.to_dict(),
    })
    model.training_meta["train_mse"] = evaluate(model, X, Y)
    if val_xy is not None:
        model.training_meta["val_mse"] = evaluate(model, *val_xy)
    return model


def evaluate(model, X, Y) -> float:
    """MSE of the model output against targets in raw units."""
    return float(np.mean((model.predict_target(X) - np.asarray(Y)) ** 2))


def _train_member(args):
    spec, train_xy, val_xy, hyper = args
    return train(spec, train_xy, val_xy, hyper)


def train_many(jobs_args: Sequence[tuple], jobs: int = 1) -> List[Model]:
    """Train independent (spec, train, val, hyper) tuples, optionally in worker processes."""
    if jobs <= 1 or len(jobs_args) <= 1:
        return [_train_member(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_train_member, jobs_args))


def train_ensemble(spec: ModelSpec, train_xy, val_xy=None, hyper: TrainConfig | None = None,
                   size: int = 10, jobs: int = 1) -> Ensemble:
    hyper = hyper or TrainConfig()
    args = [(spec, train_xy, val_xy, replace(hyper, seed=hyper.seed + i)) for i in range(size)]
    ens = Ensemble(train_many(args, jobs))
    return ens


def rollout(model, commands: np.ndarray, initial: np.ndarray | None = None) -> np.ndarray:
    """Sequential forward-model predictions over a command sequence.

    ``commands`` is (N, k) over the model joints. Cmd models use prior
    commands; Est models feed back their own prior predictions. The first H
    priors come from ``initial`` (H, k), oldest first, defaulting to the first
    command repeated. Returns (N, k) absolute predictions.
    """
    spec = model.spec
    if spec.direction != "forward":
        raise ValueError("rollout needs a forward model")
    cmds = np.asarray(commands, dtype=float)
    H = spec.horizon
    if initial is None:
        initial = np.repeat(cmds[:1], H, axis=0)
    initial = np.asarray(initial, dtype=float).reshape(H, cmds.shape[1])
    prior_cmd = list(initial)
    prior_est = list(initial)
    out = []
    for c in cmds:
        source = prior_cmd if spec.input_format == "cmd" else prior_est
        window = [c] + [source[-lag] for lag in range(1, H + 1)]
        pred = model.predict(np.concatenate(window))
        out.append(pred)
        prior_cmd.append(c)
        prior_est.append(pred)
    return np.array(out)


def gradient_check(spec: ModelSpec, batch, epsilon: float = 1e-5, seed: int = 0,
                   max_entries: int = 400) -> float:
    """Max relative error between analytic and central-difference MSE gradients.

    Parameters are freshly initialised from ``seed``; arrays larger than
    ``max_entries`` are checked on a seeded random subset of entries.
    """
    X, Y = (np.asarray(a, dtype=float) for a in batch)
    rng = np.random.default_rng(seed)
    p = nets.init_params(spec.arch, spec.input_dim, spec.step_dim, spec.step_dim,
                         spec.hidden_units, spec.layers, rng)
    if spec.arch == "linear":
        p["b"] = rng.normal(size=p["b"].shape)
    _, grads = nets.mse_and_grad(spec.arch, p, X, Y, spec.step_dim)
    worst = 0.0
    for name, arr in p.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        g = grads[name].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + epsilon
            lp, _ = nets.forward(spec.arch, p, X, spec.step_dim)
            flat[i] = old - epsilon
            lm, _ = nets.forward(spec.arch, p, X, spec.step_dim)
            flat[i] = old
            num = (np.mean((lp - Y) ** 2) - np.mean((lm - Y) ** 2)) / (2 * epsilon)
            denom = max(abs(num), abs(g[i]), 1e-8)
            worst = max(worst, abs(num - g[i]) / denom)
    return worst


@dataclass
class AblationRow:
    horizon: int
    mean_mse: float
    sd_mse: float
    values: List[float]


def horizon_ablation(spec: ModelSpec, train_ds, val_ds, horizons: Sequence[int], repeats: int = 5,
                     hyper: TrainConfig | None = None, jobs: int = 1) -> List[AblationRow]:
    """Validation MSE mean/sd over ``repeats`` seeds for each horizon."""
    from ..data import make_examples

    if not horizons:
        raise ValueError("empty horizon list")
    hyper = hyper or TrainConfig()
    args = []
    for H in horizons:
        s = replace(spec, horizon=int(H))
        fmt = (s.input_format, s.output_format, s.direction, s.joints)
        tr = make_examples(train_ds, H, *fmt)
        va = make_examples(val_ds, H, *fmt)
        for r in range(repeats):
            args.append((s, tr, va, replace(hyper, seed=hyper.seed + r)))
    models = train_many(args, jobs)
    rows = []
    for i, H in enumerate(horizons):
        vals = [m.training_meta["val_mse"] for m in models[i * repeats:(i + 1) * repeats]]
        rows.append(AblationRow(int(H), float(np.mean(vals)), float(np.std(vals)), vals))
    return rows
