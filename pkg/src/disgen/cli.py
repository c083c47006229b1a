"""Reproducible pipeline commands.

    disgen ingest|split|pretrain|explain|augment|train|eval|synth-bench|theory-check
           --config PATH --out DIR [--seed N] [--use-cache] [--verbose]

Every command echoes its configuration and writes a manifest into the output
directory before computing. Exit codes: 0 ok, 2 missing upstream artifact,
3 bad configuration, 4 numerical failure. Dataset directories fall back to
$DISGEN_DATA_DIR when the config leaves dataset_dir empty.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, theory
from .augment import ViewTriple, make_view_triple, read_audit_csv, write_audit_csv
from .backbone import (BackboneConfig, fingerprint_ids, load_model,
                       pretrain_backbone, save_model)
from .config import RunConfig
from .data import (DatasetSplit, parse_tu_dataset, serialize_tu_dataset,
                   split_by_size)
from .disentangle import LossBreakdown
from .errors import (ConfigError, ContractError, DisgenError, DomainError,
                     FormatError, MissingDependencyError, ProbeError,
                     SingularityError, TrainingError)
from .explain import cache_path, explain_graph, load_importance_cache, save_importance_cache
from .params import ParameterSet
from .synth import generate_size_shift_dataset
from .trainer import evaluate_f1, train_disgen

log = logging.getLogger("disgen.cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING = 2
EXIT_BAD_CONFIG = 3
EXIT_NUMERIC = 4


# ----------------------------------------------------------------------
# artifact helpers


def _require(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise MissingDependencyError(f"{path} (produce it with `disgen {hint}`)")
    return path


def _write_json(path: str, payload: dict):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir: str, command: str, cfg: RunConfig, inputs: dict):
    _write_json(os.path.join(out_dir, f"manifest-{command}.json"), {
        "version": __version__,
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "inputs": inputs,
    })
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json() + "\n")


def _dataset_dir(cfg: RunConfig) -> str:
    d = cfg.dataset_dir or os.environ.get("DISGEN_DATA_DIR", "")
    if not d:
        raise ConfigError("dataset_dir is empty and DISGEN_DATA_DIR is unset")
    return d


def _load_records(cfg: RunConfig):
    return parse_tu_dataset(_require(_dataset_dir(cfg), "ingest"),
                            cfg.dataset_name)


def _split_path(out):
    return os.path.join(out, "split.json")


def _model_path(out):
    return os.path.join(out, "model.npz")


def _views_dir(out):
    return os.path.join(out, "views")


def _load_split(out) -> DatasetSplit:
    with open(_require(_split_path(out), "split"), encoding="utf-8") as fh:
        raw = json.load(fh)
    return DatasetSplit(train=raw["train"], validation=raw["validation"],
                        small_test=raw["small_test"], large_test=raw["large_test"])


# ----------------------------------------------------------------------
# subcommands


def cmd_ingest(cfg: RunConfig, args) -> int:
    records = _load_records(cfg)
    sizes = [r.num_nodes for r in records]
    classes = sorted({r.label for r in records})
    _write_json(os.path.join(args.out, "dataset_summary.json"), {
        "dataset": cfg.dataset_name,
        "graphs": len(records),
        "classes": classes,
        "per_class": {str(c): sum(1 for r in records if r.label == c)
                      for c in classes},
        "feature_width": records[0].node_features.shape[1],
        "size_min": min(sizes), "size_max": max(sizes),
        "size_mean": float(np.mean(sizes)),
    })
    print(f"ingested {len(records)} graphs, classes {classes}")
    return EXIT_OK


def cmd_split(cfg: RunConfig, args) -> int:
    records = _load_records(cfg)
    split = split_by_size(records, cfg.seed, tuple(cfg.split_ratios))
    _write_json(_split_path(args.out), {
        "train": sorted(split.train), "validation": sorted(split.validation),
        "small_test": sorted(split.small_test),
        "large_test": sorted(split.large_test),
        "seed": cfg.seed, "config_hash": cfg.config_hash(),
    })
    print(f"split sizes: train={len(split.train)} val={len(split.validation)} "
          f"small={len(split.small_test)} large={len(split.large_test)}")
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig, args) -> int:
    records = {r.id: r for r in _load_records(cfg)}
    split = _load_split(args.out)
    train_graphs = [records[i] for i in split.train]
    bcfg = BackboneConfig(kind=cfg.backbone, layers=cfg.layers,
                          hidden=cfg.hidden,
                          in_dim=train_graphs[0].node_features.shape[1])
    model = pretrain_backbone(train_graphs, bcfg, epochs=cfg.pretrain_epochs,
                              seed=cfg.seed, lr=cfg.lr,
                              batch_size=cfg.batch_size, patience=cfg.patience)
    save_model(model, _model_path(args.out))
    print(f"pretrained {cfg.backbone} saved to {_model_path(args.out)} "
          f"(fingerprint {model.fingerprint})")
    return EXIT_OK


def _load_model_for_split(out, split: DatasetSplit):
    return load_model(_require(_model_path(out), "pretrain"),
                      expect_fingerprint=fingerprint_ids(split.train))


def _importances(cfg, args, records, split, model):
    cdir = os.path.join(args.out, "explain")
    os.makedirs(cdir, exist_ok=True)
    cpath = cache_path(cdir, cfg.dataset_name, model.fingerprint)
    graphs = {i: records[i] for i in split.train}
    if args.use_cache and os.path.exists(cpath):
        log.info("reusing importance cache %s", cpath)
        return load_importance_cache(cpath, graphs, model.fingerprint), cpath
    imps = {i: explain_graph(records[i], model) for i in sorted(split.train)}
    save_importance_cache(cpath, [imps[i] for i in sorted(split.train)], graphs)
    return imps, cpath


def cmd_explain(cfg: RunConfig, args) -> int:
    records = {r.id: r for r in _load_records(cfg)}
    split = _load_split(args.out)
    model = _load_model_for_split(args.out, split)
    _, cpath = _importances(cfg, args, records, split, model)
    print(f"edge importances written to {cpath}")
    return EXIT_OK


def cmd_augment(cfg: RunConfig, args) -> int:
    records = {r.id: r for r in _load_records(cfg)}
    split = _load_split(args.out)
    model = _load_model_for_split(args.out, split)
    imps, _ = _importances(cfg, args, records, split, model)
    triples = [make_view_triple(records[i], imps[i], model,
                                k1_frac=cfg.k1_frac, k2_frac=cfg.k2_frac)
               for i in sorted(split.train)]
    vdir = _views_dir(args.out)
    os.makedirs(vdir, exist_ok=True)
    serialize_tu_dataset([t.size_invariant for t in triples], vdir,
                         f"{cfg.dataset_name}v1")
    serialize_tu_dataset([t.task_invariant for t in triples], vdir,
                         f"{cfg.dataset_name}v2")
    write_audit_csv(triples, os.path.join(vdir, "audit.csv"))
    n_fail = sum(1 for t in triples if not t.audit.passed)
    print(f"augmented {len(triples)} graphs into {vdir} "
          f"({n_fail} failed prediction checks)")
    return EXIT_OK


def _load_triples(cfg: RunConfig, out, records) -> dict[int, ViewTriple]:
    vdir = _views_dir(out)
    audit_path = _require(os.path.join(vdir, "audit.csv"), "augment")
    audits = read_audit_csv(audit_path)
    order = sorted(audits)
    v1 = parse_tu_dataset(vdir, f"{cfg.dataset_name}v1")
    v2 = parse_tu_dataset(vdir, f"{cfg.dataset_name}v2")
    if len(v1) != len(order) or len(v2) != len(order):
        raise ContractError("view datasets out of sync with audit.csv")
    triples = {}
    for k, gid in enumerate(order):
        view1, view2 = v1[k], v2[k]
        view1.id = view2.id = gid
        view1.label = view2.label = records[gid].label
        triples[gid] = ViewTriple(original=records[gid], size_invariant=view1,
                                  task_invariant=view2, audit=audits[gid])
    return triples


def _run_dir(out, seed, name=None) -> str:
    base = name or time.strftime("run-%Y%m%d-%H%M%S") + f"-s{seed}"
    path = os.path.join(out, "runs", base)
    suffix = 1
    while name is None and os.path.exists(path):
        path = os.path.join(out, "runs", f"{base}.{suffix}")
        suffix += 1
    os.makedirs(path, exist_ok=True)
    return path


def _write_run_artifacts(run_dir, cfg, report, loss_rows):
    _write_json(os.path.join(run_dir, "metrics.json"), report.to_dict())
    _write_json(os.path.join(run_dir, "timing.json"),
                {"wall_clock": report.wall_clock})
    with open(os.path.join(run_dir, "epochs.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, (tr, va) in enumerate(zip(report.train_losses, report.val_losses)):
            w.writerow([e, repr(tr), repr(va)])
    with open(os.path.join(run_dir, "losses.csv"), "w", newline="") as fh:
        fh.write(LossBreakdown.CSV_HEADER + "\n")
        for step, row in enumerate(loss_rows):
            fh.write(row.csv_row(step) + "\n")


def _save_trained(run_dir, params: ParameterSet, cfg: RunConfig, n_classes):
    arrays = {f"param/{k}": v for k, v in params.values.items()}
    meta = {"n_classes": n_classes, "config_hash": cfg.config_hash()}
    np.savez(os.path.join(run_dir, "trained.npz"),
             __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                    dtype=np.uint8),
             **arrays)


def _load_trained(run_dir):
    path = _require(os.path.join(run_dir, "trained.npz"), "train")
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        params = ParameterSet()
        for key in data.files:
            if key.startswith("param/"):
                params.add(key[len("param/"):], data[key])
    return params, meta


def cmd_train(cfg: RunConfig, args) -> int:
    records = {r.id: r for r in _load_records(cfg)}
    split = _load_split(args.out)
    model = _load_model_for_split(args.out, split)
    triples = _load_triples(cfg, args.out, records)
    warm = model.params if cfg.warm_start else None
    run_dir = _run_dir(args.out, cfg.seed, getattr(args, "run_name", None))
    _write_manifest(run_dir, "train", cfg, {
        "split": _split_path(args.out), "model": _model_path(args.out),
        "views": _views_dir(args.out),
    })
    params, report, loss_rows = train_disgen(records, split, triples, cfg,
                                             warm_start=warm)
    _write_run_artifacts(run_dir, cfg, report, loss_rows)
    n_classes = max(r.label for r in records.values()) + 1
    _save_trained(run_dir, params, cfg, n_classes)
    print(f"run {run_dir}: best_epoch={report.best_epoch} "
          f"f1_small={report.f1_small:.4f} f1_large={report.f1_large:.4f}")
    return EXIT_OK


def _merge_runs(run_dirs, out_csv) -> int:
    metrics, hashes = [], set()
    for rd in run_dirs:
        with open(_require(os.path.join(rd, "metrics.json"), "train"),
                  encoding="utf-8") as fh:
            metrics.append(json.load(fh))
        with open(os.path.join(rd, "config.json"), encoding="utf-8") as fh:
            hashes.add(RunConfig.from_dict(json.load(fh)).config_hash())
    if len(hashes) > 1:
        raise ConfigError(f"refusing to merge runs with differing configs: {hashes}")
    rows = []
    for key in ("f1_small", "f1_large", "best_epoch"):
        vals = [m[key] for m in metrics]
        rows.append((key, float(np.mean(vals)),
                     float(np.std(vals)) if len(vals) > 1 else 0.0))
    for key in ("train_losses", "val_losses"):
        vals = [m[key][-1] for m in metrics]
        rows.append((f"final_{key[:-2]}", float(np.mean(vals)),
                     float(np.std(vals)) if len(vals) > 1 else 0.0))
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std"])
        for name, mean, std in rows:
            w.writerow([name, repr(mean), repr(std)])
    for name, mean, std in rows:
        print(f"{name}: {mean:.4f} +/- {std:.4f}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    if len(args.runs) > 1:
        return _merge_runs(args.runs, os.path.join(args.out, "metrics_summary.csv"))
    run_dir = args.runs[0] if args.runs else _require(
        os.path.join(args.out, "runs"), "train")
    records = {r.id: r for r in _load_records(cfg)}
    split = _load_split(args.out)
    params, meta = _load_trained(run_dir)
    bcfg = BackboneConfig(kind=cfg.backbone, layers=cfg.layers, hidden=cfg.hidden,
                          in_dim=next(iter(records.values())).node_features.shape[1])
    out = {}
    for name, ids in (("small_test", split.small_test),
                      ("large_test", split.large_test),
                      ("validation", split.validation)):
        out[f"f1_{name}"] = evaluate_f1(params, bcfg, [records[i] for i in ids],
                                        meta["n_classes"])
    _write_json(os.path.join(run_dir, "eval.json"), out)
    for k, v in sorted(out.items()):
        print(f"{k}: {v:.4f}")
    return EXIT_OK


# ----------------------------------------------------------------------
# synth-bench


def _bench_pipeline(cfg: RunConfig, out: str, args) -> dict:
    """split -> pretrain -> explain -> augment shares artifacts per seed;
    then one DisGen run and one supervised baseline run."""
    records = {r.id: r for r in _load_records(cfg)}
    split = split_by_size(list(records.values()), cfg.seed,
                          tuple(cfg.split_ratios))
    _write_json(_split_path(out), {
        "train": sorted(split.train), "validation": sorted(split.validation),
        "small_test": sorted(split.small_test),
        "large_test": sorted(split.large_test),
        "seed": cfg.seed, "config_hash": cfg.config_hash(),
    })
    train_graphs = [records[i] for i in split.train]
    bcfg = BackboneConfig(kind=cfg.backbone, layers=cfg.layers,
                          hidden=cfg.hidden,
                          in_dim=train_graphs[0].node_features.shape[1])
    model = pretrain_backbone(train_graphs, bcfg, epochs=cfg.pretrain_epochs,
                              seed=cfg.seed, lr=cfg.lr,
                              batch_size=cfg.batch_size, patience=cfg.patience)
    save_model(model, _model_path(out))

    class _Args:
        pass

    a = _Args()
    a.out = out
    a.use_cache = args.use_cache
    imps, _ = _importances(cfg, a, records, split, model)
    triples = {i: make_view_triple(records[i], imps[i], model,
                                   k1_frac=cfg.k1_frac, k2_frac=cfg.k2_frac)
               for i in split.train}

    results = {}
    for variant, vcfg in (("disgen", cfg), ("baseline", _baseline_config(cfg))):
        run_dir = os.path.join(out, "runs", f"{variant}-s{cfg.seed}")
        os.makedirs(run_dir, exist_ok=True)
        _write_manifest(run_dir, "train", vcfg, {"variant": variant})
        params, report, loss_rows = train_disgen(records, split, triples, vcfg)
        _write_run_artifacts(run_dir, vcfg, report, loss_rows)
        results[variant] = report
    return results


def _baseline_config(cfg: RunConfig) -> RunConfig:
    d = cfg.to_dict()
    d.update(beta1=0.0, beta3=0.0, alpha2=0.0)
    return RunConfig(**d)


def cmd_synth_bench(cfg: RunConfig, args) -> int:
    data_dir = os.path.join(args.out, "data")
    records = generate_size_shift_dataset(seed=cfg.seed)
    serialize_tu_dataset(records, data_dir, cfg.dataset_name)
    base = cfg.to_dict()
    base["dataset_dir"] = data_dir

    per_variant = {"disgen": {"f1_small": [], "f1_large": []},
                   "baseline": {"f1_small": [], "f1_large": []}}
    for k in range(args.bench_seeds):
        seed_cfg = RunConfig(**{**base, "seed": cfg.seed + k})
        seed_out = os.path.join(args.out, f"seed{seed_cfg.seed}")
        os.makedirs(seed_out, exist_ok=True)
        results = _bench_pipeline(seed_cfg, seed_out, args)
        for variant, report in results.items():
            per_variant[variant]["f1_small"].append(report.f1_small)
            per_variant[variant]["f1_large"].append(report.f1_large)
            print(f"seed {seed_cfg.seed} {variant}: "
                  f"small={report.f1_small:.4f} large={report.f1_large:.4f}")

    summary = {}
    for variant, vals in per_variant.items():
        summary[variant] = {
            f"{k}_{stat}": float(fn(v))
            for k, v in vals.items()
            for stat, fn in (("mean", np.mean), ("std", np.std))
        }
    gap = summary["disgen"]["f1_large_mean"] - summary["baseline"]["f1_large_mean"]
    degrade = summary["baseline"]["f1_small_mean"] - summary["disgen"]["f1_small_mean"]
    summary["large_test_gain"] = gap
    summary["small_test_degradation"] = degrade
    _write_json(os.path.join(args.out, "bench_summary.json"), summary)
    print(f"large-test gain: {gap * 100:+.2f} points; "
          f"small-test degradation: {degrade * 100:+.2f} points")
    return EXIT_OK


# ----------------------------------------------------------------------
# theory-check


def cmd_theory_check(cfg: RunConfig, args) -> int:
    rng = np.random.default_rng(cfg.seed)
    radii = np.geomspace(1e-1, 1e-3, 5)
    report = {"probes": [], "systems": {"consistent_ok": 0, "inconsistent_ok": 0,
                                        "total_each": args.n_systems},
              "bound": {"violations": 0, "checked": 0}}

    ok = True
    for decoupled in (True, False):
        for k in range(args.n_probes):
            c = int(rng.integers(1, 3))
            d_h = 2 * c + 1 + int(rng.integers(0, 4))
            if decoupled:
                pair = theory.make_decoupled_pair(c, d_h, rng)
            else:
                pair, _ = theory.make_entangled_pair(c, d_h, rng)
            probe = theory.decoupling_probe(pair, radii, seed=cfg.seed + k)
            expected = probe.first_order if decoupled else probe.second_order
            ok = ok and expected
            report["probes"].append({"name": pair.name, "decoupled": decoupled,
                                     "slope": probe.slope, "ok": expected,
                                     **probe.to_dict()})

    for k in range(args.n_systems):
        c_mat, b = theory.make_consistent_system(5, 7, rng)
        if theory.solve_matrix_equation(c_mat, b).consistent:
            report["systems"]["consistent_ok"] += 1
        c_mat, b = theory.make_inconsistent_system(5, 7, rng)
        if not theory.solve_matrix_equation(c_mat, b).consistent:
            report["systems"]["inconsistent_ok"] += 1
    ok = ok and report["systems"]["consistent_ok"] == args.n_systems
    ok = ok and report["systems"]["inconsistent_ok"] == args.n_systems

    dim, d_h, rho1, rho2, b = 2, 4, 0.5, 2.0, 4
    r0 = np.zeros(dim)
    s_box = (-np.ones(dim), np.ones(dim))
    sp_box = (-0.5 * np.ones(dim), 0.5 * np.ones(dim))
    m0 = theory.residual_integral(
        lambda r: rho2 * float((r - r0) @ (r - r0)) * np.ones(d_h) / np.sqrt(d_h),
        r0, s_box, b, n_samples=args.n_mc, seed=cfg.seed)
    for s in range(5):
        bound = theory.upper_bound_estimate(r0, s_box, sp_box, rho1, rho2, m0,
                                            eps0=0.3, b=b, n_samples=args.n_mc,
                                            seed=cfg.seed + s)
        for k in range(args.n_bound_fns):
            y = theory.make_bounded_residual(r0, rho1, rho2, d_h, rng)
            integral = theory.residual_integral(y, r0, s_box, b,
                                                n_samples=args.n_mc // 5,
                                                seed=cfg.seed + 100 + k)
            report["bound"]["checked"] += 1
            if integral > bound.u:
                report["bound"]["violations"] += 1
    ok = ok and report["bound"]["violations"] == 0
    report["pass"] = ok

    _write_json(os.path.join(args.out, "theory_report.json"), report)
    n_probe_ok = sum(1 for p in report["probes"] if p["ok"])
    print(f"decay probes: {n_probe_ok}/{len(report['probes'])} classified correctly")
    print(f"consistency: {report['systems']['consistent_ok']}"
          f"+{report['systems']['inconsistent_ok']}/{2 * args.n_systems}")
    print(f"bound violations: {report['bound']['violations']}"
          f"/{report['bound']['checked']}")
    if not ok:
        raise ProbeError("theory-check found failing instances; see theory_report.json")
    return EXIT_OK


# ----------------------------------------------------------------------
# entry point


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "explain": cmd_explain,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "synth-bench": cmd_synth_bench,
    "theory-check": cmd_theory_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disgen", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=False, help="flat key=value config file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--use-cache", action="store_true",
                   help="reuse the explainer cache when fingerprints match")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--runs", nargs="*", default=[],
                   help="run directories for eval / merging")
    p.add_argument("--run-name", default=None, help="fixed run directory name")
    p.add_argument("--bench-seeds", type=int, default=5)
    p.add_argument("--n-probes", type=int, default=20)
    p.add_argument("--n-systems", type=int, default=200)
    p.add_argument("--n-bound-fns", type=int, default=20)
    p.add_argument("--n-mc", type=int, default=100_000)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = (RunConfig.from_file(args.config) if args.config else RunConfig())
        if args.seed is not None:
            cfg = RunConfig(**{**cfg.to_dict(), "seed": args.seed})
        os.makedirs(args.out, exist_ok=True)
        _write_manifest(args.out, args.command, cfg, {})
        return COMMANDS[args.command](cfg, args)
    except MissingDependencyError as exc:
        print(f"missing-dependency: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, FormatError) as exc:
        print(f"bad-config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (SingularityError, TrainingError, ProbeError, DomainError) as exc:
        print(f"numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DisgenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
