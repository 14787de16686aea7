"""Command-line entry points: ``temnn <command> ...``.

Exit codes: 0 success, 2 bad spec/config, 3 non-watertight mesh,
4 config/dataset mismatch, 5 training aborted on a non-finite loss.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from temnn.dataset import Dataset
from temnn.features import (FeatureOptions, build_surface_graph, bundle_from_mesh,
                            geodesic_from_gate, radius_from_cm)
from temnn.frame import FrameError, compute_frame, to_invariant
from temnn.mesh import MeshError, load_mesh, node_normals, validate_watertight
from temnn.model import ModelConfig, load_checkpoint, predict, save_checkpoint
from temnn.synthetic import FieldSpec, SpecError, gen_dataset
from temnn.thickness import find_thickness_pairs, thickness_histogram
from temnn.train import (ConfigMismatch, TrainConfig, TrainingAborted, config_hash,
                         evaluate, history_csv, sweep_csv, tau_sweep, train)

log = logging.getLogger("temnn")

EXIT_SPEC = 2
EXIT_MESH = 3
EXIT_MISMATCH = 4
EXIT_NAN = 5

MODEL_KEYS = {f.name for f in fields(ModelConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
GEN_KEYS = {"n_shapes", "n_conditions", "seed", "heldout_shapes", "train_frac",
            "condition_features", "resolution", "field"}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _read_json(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_SPEC) from exc
    if not isinstance(doc, dict):
        raise CliError(f"{path}: expected a JSON object", EXIT_SPEC)
    return doc


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


# -- gen-data ------------------------------------------------------------------

def cmd_gen_data(args):
    spec = _read_json(args.spec) if args.spec else {}
    unknown = set(spec) - GEN_KEYS
    if unknown:
        raise CliError(f"unknown spec keys {sorted(unknown)}", EXIT_SPEC)
    if args.seed is not None:
        spec["seed"] = args.seed
    field = spec.pop("field", None)
    try:
        if field is not None:
            unknown = set(field) - {f.name for f in fields(FieldSpec)}
            if unknown:
                raise SpecError(f"unknown field keys {sorted(unknown)}")
            if "cond_weights" in field:
                field["cond_weights"] = tuple(field["cond_weights"])
            field = FieldSpec(**field)
        manifest = gen_dataset(args.out, field=field, **spec)
    except (SpecError, TypeError, ValueError) as exc:
        raise CliError(f"invalid dataset spec: {exc}", EXIT_SPEC) from exc
    n = sum(len(v) for v in manifest["splits"].values())
    print(f"wrote {n} bundles to {args.out} "
          f"(train {len(manifest['splits']['train'])}, val {len(manifest['splits']['val'])}, "
          f"test {len(manifest['splits']['test'])})")


# -- preprocess ------------------------------------------------------------------

def _load_checked_mesh(path):
    try:
        mesh = load_mesh(path)
    except (OSError, MeshError) as exc:
        raise CliError(f"cannot load mesh {path}: {exc}", EXIT_SPEC) from exc
    report = validate_watertight(mesh)
    if not report.watertight:
        lines = [f"mesh {path} is not watertight"]
        lines += [f"boundary edge {a} {b}" for a, b in report.boundary_edges]
        lines += [f"non-manifold edge {a} {b}" for a, b in report.nonmanifold_edges]
        raise CliError("\n".join(lines), EXIT_MESH)
    return mesh


def cmd_preprocess(args):
    mesh = _load_checked_mesh(args.mesh)
    try:
        normals = node_normals(mesh)
        frame = compute_frame(mesh)
        geo = geodesic_from_gate(mesh, args.gate)
    except (MeshError, FrameError, ValueError) as exc:
        raise CliError(str(exc), EXIT_SPEC) from exc
    pairing = find_thickness_pairs(mesh, normals)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "frame.json"), frame.to_json() + "\n")
    _write(os.path.join(args.out, "pairing.csv"), pairing.to_csv())
    r = radius_from_cm(mesh, frame.center)
    xi = to_invariant(frame, mesh.vertices)
    rows = ["node_id,g,r,x_inv,y_inv,z_inv"]
    for i in range(mesh.n_vertices):
        rows.append(",".join([str(i)] + [repr(float(v)) for v in (geo[i], r[i], *xi[i])]))
    _write(os.path.join(args.out, "features.csv"), "\n".join(rows) + "\n")
    edges = build_surface_graph(mesh)
    _write(os.path.join(args.out, "edges.csv"),
           "src,dst\n" + "".join(f"{a},{b}\n" for a, b in edges))
    if any(frame.degenerate):
        print(f"warning: near-degenerate frame axes {frame.degenerate}", file=sys.stderr)
    print(f"{mesh.n_vertices} nodes, {int(pairing.valid.sum())} thickness pairs "
          f"({int(pairing.fallback.sum())} by fallback), outputs in {args.out}")


# -- run configuration ---------------------------------------------------------------

OVERRIDES = {
    # flag dest -> (config key, section)
    "epochs": ("epochs", "train"), "seed": ("seed", "train"), "lr": ("lr", "train"),
    "tau_lr": ("tau_lr", "train"), "weight_decay": ("weight_decay", "train"),
    "fixed_tau": ("fixed_tau", "train"), "layers": ("layers", "model"),
    "hidden_dim": ("hidden_dim", "model"), "coord_mode": ("coord_mode", "model"),
    "tau_init": ("tau_init", "model"), "use_thickness": ("use_thickness", "model"),
    "use_t": ("use_t", "model"), "use_dot": ("use_dot", "model"),
    "inverse_mode": ("inverse_mode", "model"),
}


def resolve_config(path, args, dataset: Dataset):
    """Flat JSON config (model and training keys mixed) with flags winning."""
    raw = _read_json(path) if path else {}
    unknown = set(raw) - MODEL_KEYS - TRAIN_KEYS
    if unknown:
        raise CliError(f"unknown config keys {sorted(unknown)}", EXIT_SPEC)
    for dest, (key, _) in OVERRIDES.items():
        val = getattr(args, dest, None)
        if val is not None:
            raw[key] = val
    cf = raw.get("condition_features")
    if cf is not None and cf != dataset.condition_features:
        raise CliError(f"config expects {cf} condition features, dataset has "
                       f"{dataset.condition_features}", EXIT_MISMATCH)
    raw["condition_features"] = dataset.condition_features
    try:
        mconf = ModelConfig.from_dict({k: v for k, v in raw.items() if k in MODEL_KEYS})
        tconf = TrainConfig.from_dict({k: v for k, v in raw.items() if k in TRAIN_KEYS})
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}", EXIT_SPEC) from exc
    return mconf, tconf


def _open_dataset(path):
    try:
        return Dataset(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot open dataset {path}: {exc}", EXIT_SPEC) from exc


def _dataset_tag(dataset: Dataset):
    return {"seed": dataset.manifest["seed"], "field": dataset.field,
            "splits": dataset.manifest["splits"]}


def _run_dir(out, kind, mconf, tconf, dataset, extra=None):
    h = config_hash(kind, asdict(mconf), asdict(tconf), _dataset_tag(dataset), extra or {})
    d = os.path.join(out, f"{kind}-{h}-s{tconf.seed}")
    os.makedirs(d, exist_ok=True)
    snapshot = {"command": kind, "model": asdict(mconf), "train": asdict(tconf),
                "data": os.path.abspath(dataset.root)}
    if extra:
        snapshot.update(extra)
    _write(os.path.join(d, "config.json"), json.dumps(snapshot, indent=1, sort_keys=True) + "\n")
    return d


# -- train / eval / sweep ------------------------------------------------------------

def cmd_train(args):
    ds = _open_dataset(args.data)
    mconf, tconf = resolve_config(args.config, args, ds)
    run = _run_dir(args.out, "train", mconf, tconf, ds)
    try:
        res = train(ds, mconf, tconf,
                    on_epoch=lambda r: log.info("epoch %d val %.6g tau %.4f", r["epoch"],
                                                r["val_loss"], r["tau"]))
    except TrainingAborted as exc:
        if exc.params is not None:
            save_checkpoint(os.path.join(run, "checkpoint.json"), exc.params, mconf,
                            {"aborted": True})
        _write(os.path.join(run, "history.csv"), history_csv(exc.history or []))
        raise CliError(f"training aborted: {exc}; last good checkpoint in {run}",
                       EXIT_NAN) from exc
    except ConfigMismatch as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    save_checkpoint(os.path.join(run, "checkpoint.json"), res.params, res.config,
                    {"best_epoch": res.best_epoch, "best_val_loss": res.best_val_loss})
    _write(os.path.join(run, "history.csv"), history_csv(res.history))
    rep = evaluate(res.params, res.config, ds, "test")
    _write(os.path.join(run, "eval_test_in_dist.csv"), rep.to_csv())
    print(f"run {run}: best epoch {res.best_epoch}, val loss {res.best_val_loss:.6g}, "
          f"tau {res.tau:.4f}, test R2 {rep.aggregate.r2}")
    return run


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}", EXIT_SPEC) from exc


def cmd_eval(args):
    params, mconf, _ = _load_ckpt(args.checkpoint)
    ds = _open_dataset(args.data)
    try:
        rep = evaluate(params, mconf, ds, args.split, args.mode, seed=args.seed)
    except ConfigMismatch as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    except KeyError as exc:
        raise CliError(f"dataset has no split {exc}", EXIT_SPEC) from exc
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"eval_{args.split}_{args.mode}_s{args.seed}.csv")
    _write(path, rep.to_csv())
    m = rep.aggregate
    print(f"{args.mode} {args.split}: rmse {m.rmse:.6g} mae {m.mae:.6g} r2 {m.r2} -> {path}")


def _parse_floats(text, what):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(f"bad {what} {text!r}", EXIT_SPEC) from exc
    if not vals:
        raise CliError(f"empty {what}", EXIT_SPEC)
    return vals


def cmd_tau_sweep(args):
    ds = _open_dataset(args.data)
    mconf, tconf = resolve_config(args.config, args, ds)
    grid = _parse_floats(args.grid, "tau grid")
    run = _run_dir(args.out, "sweep", mconf, tconf, ds, {"grid": grid})
    try:
        rows = tau_sweep(ds, grid, mconf, tconf)
    except TrainingAborted as exc:
        raise CliError(f"training aborted: {exc}", EXIT_NAN) from exc
    _write(os.path.join(run, "sweep.csv"), sweep_csv(rows))
    for tau, m in rows:
        print(f"tau {tau:g}: r2 {m.r2}")
    return run


# -- predict / inspect ------------------------------------------------------------

def cmd_predict(args):
    params, mconf, _ = _load_ckpt(args.checkpoint)
    mesh = _load_checked_mesh(args.mesh)
    cond = _parse_floats(args.condition, "condition")
    if len(cond) != mconf.condition_features:
        raise CliError(f"checkpoint expects {mconf.condition_features} condition values, "
                       f"got {len(cond)}", EXIT_MISMATCH)
    try:
        bundle = bundle_from_mesh(mesh, args.gate, cond)
        sample = bundle.to_sample(FeatureOptions(coord_mode=mconf.coord_mode))
    except (MeshError, FrameError, ValueError) as exc:
        raise CliError(str(exc), EXIT_SPEC) from exc
    p_inv, p_orig = predict(sample, params, mconf)
    os.makedirs(args.out, exist_ok=True)
    rows = ["node_id,dx_inv,dy_inv,dz_inv,dx,dy,dz"]
    for i in range(mesh.n_vertices):
        rows.append(",".join([str(i)] + [repr(float(v)) for v in (*p_inv[i], *p_orig[i])]))
    path = os.path.join(args.out, "prediction.csv")
    _write(path, "\n".join(rows) + "\n")
    print(f"predicted {mesh.n_vertices} nodes -> {path}")


def cmd_inspect(args):
    ds = _open_dataset(args.data)
    names = sorted({n for s in ("train", "val", "test") for n in ds.split(s)})
    # one pairing per distinct shape: conditions share geometry
    seen, t = set(), []
    for n in names:
        b = ds.bundle(n)
        key = b.mesh.vertices.tobytes()
        if key in seen:
            continue
        seen.add(key)
        t.append(b.pairing.thickness)
    hist = thickness_histogram(np.concatenate(t), args.tau, bins=args.bins)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"thickness_hist_tau{args.tau:g}.csv")
    _write(path, hist.to_csv())
    print(f"{hist.n_valid} valid pairs over {len(t)} shapes; "
          f"fraction above tau={args.tau:g}: {hist.fraction_above:.4f} -> {path}")


# -- parser ----------------------------------------------------------------------

def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_overrides(p):
    g = p.add_argument_group("config overrides (take precedence over --config)")
    g.add_argument("--epochs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--tau-lr", dest="tau_lr", type=float)
    g.add_argument("--weight-decay", dest="weight_decay", type=float)
    g.add_argument("--fixed-tau", dest="fixed_tau", type=float)
    g.add_argument("--layers", type=int)
    g.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    g.add_argument("--coord-mode", dest="coord_mode",
                   choices=("invariant", "original", "none"))
    g.add_argument("--inverse-mode", dest="inverse_mode", choices=("vector", "point"))
    g.add_argument("--tau-init", dest="tau_init", type=float)
    g.add_argument("--use-thickness", dest="use_thickness", type=_bool)
    g.add_argument("--use-t", dest="use_t", type=_bool)
    g.add_argument("--use-dot", dest="use_dot", type=_bool)


def build_parser():
    p = argparse.ArgumentParser(prog="temnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate a synthetic dataset")
    s.add_argument("--spec", help="JSON dataset spec")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("preprocess", help="frame, thickness pairs and features for one mesh")
    s.add_argument("--mesh", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--gate", type=int, default=0)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    _add_overrides(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=("in_dist", "ood_rotated"), default="in_dist")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", default="test")
    s.add_argument("--out", help="report directory (default: next to the checkpoint)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("tau-sweep", help="train one model per fixed threshold")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--grid", default="0,2,4,5.68,8,12,20")
    _add_overrides(s)
    s.set_defaults(func=cmd_tau_sweep)

    s = sub.add_parser("predict", help="predict per-node deformation for a mesh")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mesh", required=True)
    s.add_argument("--condition", required=True, help="comma-separated values")
    s.add_argument("--gate", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("inspect", help="thickness histogram of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--tau", type=float, required=True)
    s.add_argument("--bins", type=int, default=40)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
