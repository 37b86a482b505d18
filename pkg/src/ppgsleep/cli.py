"""Command-line pipeline.

Subcommands: ``synth`` (synthetic cohort), ``prep`` (recordings -> window
grids), ``windows`` (grids -> super-window file for one configuration),
``train`` (cross-validated training from a run-config document), ``eval``
(checkpoint vs. super-window file), ``report`` (render a run's results).

Exit codes: 0 ok, 1 runtime failure, 2 usage. Worker threads for per-subject
preprocessing come from ``PPGSLEEP_WORKERS``; every random choice descends
from a seed (``--seed`` or the run config).
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import backend, containers, datagen, superwin, traineval
from . import model as model_mod
from . import sigprep
from .errors import PpgSleepError, UsageError

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _workers():
    try:
        return max(1, int(os.environ.get("PPGSLEEP_WORKERS", "1")))
    except ValueError:
        return 1


# ------------------------------------------------------------------- synth

def cmd_synth(args):
    cfg = datagen.SynthConfig(subjects=args.subjects, hours_per_subject=args.hours,
                              sample_rate_hz=args.sample_rate, seed=args.seed,
                              noise_std=args.noise_std,
                              unscored_fraction=args.unscored_fraction)
    out = Path(args.out)
    (out / "signals").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(cfg.subjects):
        rec = datagen.gen_subject(cfg, i)
        sig = f"signals/{rec.subject_id}.ppgs"
        lab = f"labels/{rec.subject_id}.csv"
        containers.write_signal(out / sig, rec.samples, rec.sample_rate_hz)
        containers.write_labels_csv(out / lab, rec.labels)
        entries.append({"subject_id": rec.subject_id, "signal": sig, "labels": lab,
                        "sample_rate_hz": rec.sample_rate_hz})
    containers.write_json_doc(out / "manifest.json", {
        "kind": "dataset_manifest", "format_version": 1, "seed": cfg.seed,
        "hours_per_subject": cfg.hours_per_subject, "entries": entries,
    })
    print(f"wrote {len(entries)} subjects to {out}")
    return EXIT_OK


# -------------------------------------------------------------------- prep

def _prep_one(entry, base, out_dir, filt):
    samples, rate = containers.read_signal(base / entry["signal"])
    labels = containers.read_labels_csv(base / entry["labels"])
    rec = sigprep.Recording(subject_id=entry["subject_id"],
                            samples=samples.astype(np.float64),
                            sample_rate_hz=rate, labels=labels)
    grid = sigprep.preprocess(rec, filt)
    grid_name = f"{entry['subject_id']}.ppgg"
    containers.write_grid(out_dir / grid_name, grid)
    return {"subject_id": entry["subject_id"], "grid": grid_name,
            "windows": int(grid.n_windows), "valid_windows": int(grid.valid.sum())}


def cmd_prep(args):
    manifest = containers.read_json_doc(args.manifest)
    entries = manifest.get("entries", [])
    if not entries:
        raise UsageError(f"{args.manifest}: manifest lists no subjects")
    base = Path(args.manifest).parent
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    filt = sigprep.FilterSpec(order=args.filter_order,
                              stopband_atten_db=args.stopband_atten_db,
                              edge_hz=args.edge_hz)

    def job(entry):
        try:
            return _prep_one(entry, base, out_dir, filt), None
        except (PpgSleepError, OSError, ValueError) as exc:
            return None, {"subject_id": entry.get("subject_id", "?"), "error": str(exc)}

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        results = list(pool.map(job, entries))
    ok = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]

    containers.write_json_doc(out_dir / "manifest.json", {
        "kind": "grid_manifest", "format_version": 1,
        "filter": {"order": filt.order, "stopband_atten_db": filt.stopband_atten_db,
                   "edge_hz": filt.edge_hz},
        "entries": ok, "errors": errors,
    })
    for e in errors:
        print(f"warning: {e['subject_id']}: {e['error']}", file=sys.stderr)
    print(f"prepared {len(ok)} of {len(entries)} subjects -> {out_dir}")
    if not ok:
        print("error: no subject could be preprocessed", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _load_grids(grid_manifest_path):
    manifest = containers.read_json_doc(grid_manifest_path)
    entries = manifest.get("entries", [])
    if not entries:
        raise UsageError(f"{grid_manifest_path}: no prepared subjects")
    base = Path(grid_manifest_path).parent
    grids = {}
    for e in entries:
        grids[e["subject_id"]] = containers.read_grid(base / e["grid"])
    return grids, [e["subject_id"] for e in entries]


# ----------------------------------------------------------------- windows

def cmd_windows(args):
    grids, order = _load_grids(args.grids)
    swset = superwin.build_set([grids[s] for s in order], args.config)
    containers.write_super_windows(args.out, swset)
    print(f"{args.config}: {len(swset)} super-windows "
          f"({swset.spec.n} windows each) from {len(order)} subjects -> {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------- train

def _resolve_model_spec(model_cfg):
    cfg = dict(model_cfg or {})
    preset = cfg.pop("preset", "default")
    if preset == "default":
        spec = model_mod.ModelSpec()
    elif preset == "reduced_width":
        spec = model_mod.ModelSpec.reduced_width()
    else:
        raise UsageError(f"unknown model preset {preset!r}")
    return model_mod.spec_with_overrides(spec, cfg) if cfg else spec


def _fold_record(fold_idx, train_ids, val_ids, train_rep, val_rep, trace):
    return {
        "fold": fold_idx,
        "train_subjects": train_ids,
        "val_subjects": val_ids,
        "loss_trace": trace,
        "train": train_rep.to_dict(),
        "val": val_rep.to_dict(),
    }


_METRICS = ("acc", "kappa", "f1_weighted", "f1_macro")


def _mean_std(records, split):
    out = {}
    for m in _METRICS:
        vals = np.asarray([r[split][m] for r in records], dtype=np.float64)
        out[m] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def cmd_train(args):
    rc = containers.read_json_doc(args.runconfig)
    for key in ("grids", "config", "out"):
        if key not in rc:
            raise UsageError(f"run config must set {key!r}")
    config_id = rc["config"]
    if config_id not in traineval.CONFIG_BATCH_SIZES:
        raise UsageError(f"unknown configuration {config_id!r} (want c01..c05)")

    spec = _resolve_model_spec(rc.get("model"))
    model_mod.validate_spec(spec)
    train_cfg = dict(rc.get("train", {}))
    run_folds = train_cfg.pop("run_folds", None)
    config = traineval.config_for(config_id, **train_cfg)

    base = Path(args.runconfig).parent
    grids, subject_ids = _load_grids(base / rc["grids"])
    folds = traineval.kfold_split(subject_ids, folds=config.folds, seed=config.seed)
    if run_folds is None:
        run_folds = list(range(config.folds))
    if any(not 0 <= k < config.folds for k in run_folds):
        raise UsageError(f"run_folds {run_folds} out of range for {config.folds} folds")

    out = Path(base / rc["out"])
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for k in run_folds:
        train_ids, val_ids = folds[k]
        train_set = superwin.build_set([grids[s] for s in train_ids], config_id)
        val_set = superwin.build_set([grids[s] for s in val_ids], config_id)
        params, trace = traineval.train(config, spec, train_set)
        train_rep = traineval.evaluate(params, spec, train_set)
        val_rep = traineval.evaluate(params, spec, val_set)
        containers.save_checkpoint(out / f"fold{k}.ckpt", params, spec,
                                   train_seed=config.seed, epoch=config.epochs)
        records.append(_fold_record(k, train_ids, val_ids, train_rep, val_rep, trace))
        print(f"fold {k}: train acc {train_rep.acc:.4f} | "
              f"val acc {val_rep.acc:.4f} kappa {val_rep.kappa:.4f} "
              f"f1w {val_rep.f1_weighted:.4f} f1m {val_rep.f1_macro:.4f}")

    merged_confusion = np.sum([np.asarray(r["val"]["confusion"]) for r in records], axis=0)
    report = {
        "kind": "train_report", "format_version": 1,
        "run_config": rc,
        "backend": backend.active().NAME,
        "configuration": config_id,
        "model_spec": spec.to_dict(),
        "train_config": {"epochs": config.epochs, "lr": config.lr, "seed": config.seed,
                         "batch_size": config.batch_size, "folds": config.folds,
                         "run_folds": list(run_folds)},
        "folds": records,
        "merged": {"train": _mean_std(records, "train"), "val": _mean_std(records, "val"),
                   "val_confusion": merged_confusion.tolist()},
    }
    containers.write_json_doc(out / "report.json", report)
    _write_report_renderings(out, report)
    print(f"report -> {out / 'report.json'}")
    return EXIT_OK


# ----------------------------------------------------------- eval + report

def cmd_eval(args):
    store, spec, meta = containers.load_checkpoint(args.checkpoint)
    swset = containers.read_super_windows(args.windows)
    rep = traineval.evaluate(store, spec, swset)
    doc = {"kind": "eval_report", "format_version": 1,
           "checkpoint": str(args.checkpoint), "windows": str(args.windows),
           "backend": backend.active().NAME, "model_spec": spec.to_dict()}
    doc.update(rep.to_dict())
    containers.write_json_doc(args.out, doc)
    print(f"acc {rep.acc:.4f} kappa {rep.kappa:.4f} "
          f"f1w {rep.f1_weighted:.4f} f1m {rep.f1_macro:.4f} "
          f"on {rep.n_valid} positions -> {args.out}")
    return EXIT_OK


def _confusion_csv(path, confusion):
    with open(path, "w") as f:
        f.write("true\\pred," + ",".join(traineval.STAGE_NAMES) + "\n")
        for name, row in zip(traineval.STAGE_NAMES, confusion):
            f.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")


def render_report(report):
    lines = []
    tc = report["train_config"]
    lines.append(f"configuration {report['configuration']}  "
                 f"(epochs {tc['epochs']}, batch {tc['batch_size']}, "
                 f"lr {tc['lr']}, seed {tc['seed']}, backend {report['backend']})")
    ms = report["model_spec"]
    lines.append(f"model: filters {ms['feature_filters']} feature_dim {ms['feature_dim']} "
                 f"tcn {ms['tcn_stacks']}x{ms['tcn_dilations']} kernel {ms['tcn_kernel']}")
    lines.append("")
    lines.append(f"{'fold':>4}  {'subjects':>12}  {'train acc':>9}  "
                 f"{'val acc':>7}  {'kappa':>6}  {'f1w':>6}  {'f1m':>6}  {'n':>7}")
    for r in report["folds"]:
        lines.append(f"{r['fold']:>4}  {len(r['train_subjects']):>5}/{len(r['val_subjects']):<3}   "
                     f"{r['train']['acc']:>9.4f}  {r['val']['acc']:>7.4f}  "
                     f"{r['val']['kappa']:>6.4f}  {r['val']['f1_weighted']:>6.4f}  "
                     f"{r['val']['f1_macro']:>6.4f}  {r['val']['n_valid']:>7}")
    lines.append("")
    mv = report["merged"]["val"]
    lines.append("validation over folds (mean +/- std):")
    lines.append("  " + "  ".join(f"{m} {mv[m]['mean']:.4f}+/-{mv[m]['std']:.4f}"
                                  for m in _METRICS))
    lines.append("")
    lines.append("merged validation confusion (rows true, cols predicted):")
    header = "        " + "".join(f"{n:>8}" for n in traineval.STAGE_NAMES)
    lines.append(header)
    for name, row in zip(traineval.STAGE_NAMES, report["merged"]["val_confusion"]):
        lines.append(f"{name:>8}" + "".join(f"{int(v):>8}" for v in row))
    return "\n".join(lines) + "\n"


def _write_report_renderings(out, report):
    with open(out / "report.txt", "w") as f:
        f.write(render_report(report))
    for r in report["folds"]:
        _confusion_csv(out / f"confusion_fold{r['fold']}.csv",
                       np.asarray(r["val"]["confusion"]))
    _confusion_csv(out / "confusion_merged.csv",
                   np.asarray(report["merged"]["val_confusion"]))


def cmd_report(args):
    run = Path(args.run)
    path = run / "report.json"
    if not path.exists():
        raise PpgSleepError(f"{path} not found (run `ppgsleep train` first)")
    report = containers.read_json_doc(path)
    _write_report_renderings(run, report)
    sys.stdout.write(render_report(report))
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="ppgsleep",
                                description="PPG sleep staging pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic labeled cohort")
    s.add_argument("--out", required=True)
    s.add_argument("--subjects", type=int, default=20)
    s.add_argument("--hours", type=float, default=2.0)
    s.add_argument("--sample-rate", type=float, default=64.0)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--noise-std", type=float, default=0.05)
    s.add_argument("--unscored-fraction", type=float, default=0.02)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prep", help="preprocess recordings into window grids")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--filter-order", type=int, default=8)
    s.add_argument("--stopband-atten-db", type=float, default=40.0)
    s.add_argument("--edge-hz", type=float, default=8.0)
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("windows", help="arrange grids into super-windows")
    s.add_argument("--grids", required=True, help="grid manifest from `prep`")
    s.add_argument("--config", required=True, choices=superwin.CONFIG_IDS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_windows)

    s = sub.add_parser("train", help="cross-validated training from a run config")
    s.add_argument("--runconfig", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a super-window file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--windows", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="render the results of a training run")
    s.add_argument("--run", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PpgSleepError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
