"""Optimization loop, tau scheduling, metrics and evaluation protocols."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from temnn import autodiff as ad
from temnn.dataset import Dataset
from temnn.features import FeatureOptions
from temnn.frame import random_rigid_transform
from temnn.model import ModelConfig, init_params, loss_fn, median_thickness, predict


class TrainingAborted(RuntimeError):
    def __init__(self, message, params=None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history


class ConfigMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    tau_lr: float = 0.05
    weight_decay: float = 5e-4
    seed: int = 0
    patience: int = 5
    threshold: float = 1.0
    factor: float = 0.5
    min_lr: float = 0.0
    fixed_tau: float | None = None

    def validate(self):
        if self.lr <= 0 or self.tau_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        return self

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d).validate()


# -- optimizer -----------------------------------------------------------------

class Adam:
    """Adam with decoupled weight decay applied to the ``weights`` group only."""

    def __init__(self, params, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8,
                 group_lr=None, frozen=()):
        self.params = params
        self.lr = {"weights": lr, "tau": lr}
        if group_lr:
            self.lr.update(group_lr)
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.frozen = set(frozen)
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.group in self.frozen:
                continue
            g = p.grad
            if g.shape != p.value.shape:
                raise ad.ShapeError(f"adam: gradient shape {g.shape} != {p.value.shape} for {k}")
            lr = self.lr[p.group]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if p.group == "weights" and self.weight_decay:
                update = update + lr * self.weight_decay * p.value
            p.value -= update


class PlateauScheduler:
    """Multiply an optimizer group's lr by ``factor`` once the monitored loss has
    failed to improve on its best by more than ``threshold`` (absolute) for more
    than ``patience`` consecutive epochs."""

    def __init__(self, optimizer, group="tau", patience=5, threshold=1.0, factor=0.5, min_lr=0.0):
        self.opt = optimizer
        self.group = group
        self.patience = patience
        self.threshold = threshold
        self.factor = factor
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    @property
    def lr(self):
        return self.opt.lr[self.group]

    def step(self, loss):
        if loss < self.best - self.threshold:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.opt.lr[self.group] = max(self.opt.lr[self.group] * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.opt.lr[self.group]


# -- metrics -------------------------------------------------------------------

@dataclass
class Metrics:
    rmse: float
    mae: float
    r2: float | None
    n: int = 0

    def row(self):
        r2 = "" if self.r2 is None else repr(self.r2)
        return [repr(self.rmse), repr(self.mae), r2]


def compute_metrics(pred, target) -> Metrics:
    """RMSE, MAE and R^2 over the flattened scalar residuals."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    err = (pred - target).ravel()
    y = target.ravel()
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = None if ss_tot == 0 else float(1.0 - np.sum(err * err) / ss_tot)
    return Metrics(rmse, mae, r2, y.size)


# -- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict
    config: ModelConfig
    history: list
    best_epoch: int
    best_val_loss: float

    @property
    def tau(self) -> float:
        return float(self.params["tau"].value[0, 0])


def _feature_options(config: ModelConfig) -> FeatureOptions:
    # the network picks its thickness columns itself; keep both on the sample
    return FeatureOptions(coord_mode=config.coord_mode)


def _snapshot(params):
    return {k: ad.Parameter(p.value.copy(), name=p.name, group=p.group) for k, p in params.items()}


def _mean_loss(samples, params, config):
    return float(np.mean([loss_fn(s, params, config).value[0, 0] for s in samples]))


def train(dataset: Dataset, mconfig: ModelConfig, tconfig: TrainConfig, on_epoch=None) -> TrainResult:
    """One Adam step per mesh; best-validation parameters are returned."""
    mconfig.validate()
    tconfig.validate()
    opts = _feature_options(mconfig)
    train_s = dataset.samples("train", opts)
    val_s = dataset.samples("val", opts)
    if not train_s or not val_s:
        raise ConfigMismatch("dataset needs non-empty train and val splits")
    mconfig = replace(mconfig, condition_features=int(train_s[0].condition.size))

    if tconfig.fixed_tau is not None:
        tau0 = float(tconfig.fixed_tau)
    elif mconfig.tau_init == "median":
        tau0 = median_thickness(train_s)
    else:
        tau0 = float(mconfig.tau_init)
    params = init_params(mconfig, tconfig.seed, tau=tau0)
    frozen = ("tau",) if (tconfig.fixed_tau is not None or not mconfig.use_thickness) else ()
    opt = Adam(params, tconfig.lr, tconfig.weight_decay, group_lr={"tau": tconfig.tau_lr},
               frozen=frozen)
    sched = PlateauScheduler(opt, "tau", tconfig.patience, tconfig.threshold,
                             tconfig.factor, tconfig.min_lr)
    rng = np.random.default_rng(tconfig.seed)
    history = []
    best = (math.inf, -1, _snapshot(params))
    for epoch in range(tconfig.epochs):
        losses = []
        for k in rng.permutation(len(train_s)):
            opt.zero_grad()
            loss = loss_fn(train_s[k], params, mconfig)
            lv = float(loss.value[0, 0])
            if not math.isfinite(lv):
                raise TrainingAborted(f"non-finite loss at epoch {epoch}", best[2], history)
            ad.backward(loss)
            opt.step()
            losses.append(lv)
        val = _mean_loss(val_s, params, mconfig)
        if not math.isfinite(val):
            raise TrainingAborted(f"non-finite validation loss at epoch {epoch}", best[2], history)
        tau_lr = sched.step(val) if not frozen else opt.lr["tau"]
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val,
               "tau": float(params["tau"].value[0, 0]), "tau_lr": float(tau_lr)}
        history.append(row)
        if val < best[0]:
            best = (val, epoch, _snapshot(params))
        if on_epoch:
            on_epoch(row)
    return TrainResult(best[2], mconfig, history, best[1], best[0])


def history_csv(history) -> str:
    lines = ["epoch,train_loss,val_loss,tau,tau_lr"]
    for r in history:
        lines.append(f"{r['epoch']},{r['train_loss']!r},{r['val_loss']!r},{r['tau']!r},{r['tau_lr']!r}")
    return "\n".join(lines) + "\n"


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalReport:
    per_sample: list          # (sample_id, Metrics)
    aggregate: Metrics

    def to_csv(self) -> str:
        lines = ["sample_id,rmse,mae,r2"]
        for sid, m in self.per_sample:
            lines.append(",".join([sid] + m.row()))
        lines.append(",".join(["aggregate"] + self.aggregate.row()))
        return "\n".join(lines) + "\n"


def evaluate(params, config: ModelConfig, dataset: Dataset, split="test", mode="in_dist",
             seed=0, transform=None) -> EvalReport:
    """Metrics in the original (possibly re-posed) frame, per sample and pooled.

    ``ood_rotated`` draws a fresh rotation/reflection and translation per sample
    from ``seed`` (or calls ``transform(rng)``), recomputes every geometry-derived
    quantity and rotates the targets as vectors.
    """
    if mode not in ("in_dist", "ood_rotated"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if dataset.condition_features != config.condition_features:
        raise ConfigMismatch("checkpoint condition size does not match the dataset")
    opts = _feature_options(config)
    rng = np.random.default_rng(seed)
    preds, targets, rows = [], [], []
    for name in dataset.split(split):
        bundle = dataset.bundle(name)
        if mode == "ood_rotated":
            q, g = transform(rng) if transform else random_rigid_transform(rng)
            bundle = bundle.transformed(q, g)
        sample = bundle.to_sample(opts)
        _, p_orig = predict(sample, params, config)
        rows.append((name, compute_metrics(p_orig, sample.targets)))
        preds.append(p_orig)
        targets.append(sample.targets)
    agg = compute_metrics(np.concatenate(preds), np.concatenate(targets))
    return EvalReport(rows, agg)


def tau_sweep(dataset: Dataset, grid, mconfig: ModelConfig, tconfig: TrainConfig, split="test"):
    """Train one model per fixed tau and evaluate it; returns rows (tau, Metrics)."""
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("tau grid is empty")
    out = []
    for tau in grid:
        tc = TrainConfig(**{**asdict(tconfig), "fixed_tau": tau})
        res = train(dataset, mconfig, tc)
        rep = evaluate(res.params, res.config, dataset, split)
        out.append((tau, rep.aggregate))
    return out


def sweep_csv(rows) -> str:
    lines = ["tau,rmse,mae,r2"]
    for tau, m in rows:
        lines.append(",".join([repr(tau)] + m.row()))
    return "\n".join(lines) + "\n"


def config_hash(*dicts) -> str:
    blob = json.dumps(dicts, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
