"""Command-line entry point: ``autoassign <command> --config PATH [...]``.

Exit status: 0 on success, 1 when a check or run fails, 2 for usage and
config errors. Every command writes the resolved configuration to
``run_config.txt`` in its output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .assign import GroundTruth, evaluate_loss, export_weight_report
from .checks import run_all
from .config import STRATEGY_NAMES, ConfigError, RunConfig
from .toydet import (DetectorModel, TrainingError, evaluate_model, generate_dataset,
                     load_checkpoint, save_checkpoint, save_dataset, train)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COMMANDS = ("gradcheck", "gen-data", "train", "eval", "compare", "dump-weights")


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class Run:
    """Resolved config plus its output directory."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out

    def prepare(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "run_config.txt").write_text(self.cfg.to_text())

    def scenes(self, split: str) -> list:
        return generate_dataset(self.cfg.scene_config(), self.cfg.split_seeds(split))

    def checkpoint_dir(self, key: str) -> Path:
        path = self.cfg[key]
        return Path(path) if path else self.out


# ---------------------------------------------------------------- commands

def cmd_gradcheck(run: Run) -> int:
    c = run.cfg
    fault = c["gradcheck.inject_fault"] or None
    outcome = run_all(seeds=c["gradcheck.seeds"], unit_tolerance=c["gradcheck.unit_tolerance"],
                      model_tolerance=c["gradcheck.model_tolerance"],
                      epsilon=c["gradcheck.epsilon"], fault=fault,
                      model_seeds=c["gradcheck.model_seeds"])
    report = outcome.render()
    (run.out / "gradcheck_report.txt").write_text(report)
    for suite, case in sorted(outcome.worst_per_suite().items()):
        print(f"{suite}: worst {case.name} seed={case.seed} {case.report.summary()}")
    if outcome.passed:
        print(f"gradcheck passed ({len(outcome.cases)} cases)")
        return EXIT_OK
    prefix = f"fault injected into '{fault}'; " if fault else ""
    print(f"gradcheck FAILED: {prefix}failing ops: {', '.join(outcome.failing_ops())}")
    return EXIT_FAIL


def cmd_gen_data(run: Run) -> int:
    for split in ("train", "test"):
        scenes = run.scenes(split)
        save_dataset(scenes, run.out / "data" / split)
        n_obj = sum(len(s.labels) for s in scenes)
        dropped = sum(s.n_unplaced for s in scenes)
        print(f"{split}: {len(scenes)} scenes, {n_obj} objects, {dropped} unplaced")
    return EXIT_OK


def train_once(cfg: RunConfig, log_path: Optional[Path] = None):
    """Train a fresh model under ``cfg``; returns (model, prior, log)."""
    model = DetectorModel(cfg.num_classes, cfg.model_config())
    prior = cfg.make_prior()
    scenes = generate_dataset(cfg.scene_config(), cfg.split_seeds("train"))
    fh = open(log_path, "w") if log_path is not None else None
    try:
        def on_record(rec):
            if fh is not None:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
        log = train(model, prior, scenes, cfg.assign_config(), cfg.train_config(),
                    on_record=on_record)
    finally:
        if fh is not None:
            fh.close()
    return model, prior, log


def _probe_report(cfg: RunConfig, model, prior, scene):
    preds = model.forward(scene.image)[0]
    br = evaluate_loss(preds, GroundTruth(scene.boxes, scene.labels), model.locations(),
                       cfg.assign_config(), prior=prior.bind())
    return export_weight_report(br, model.locations())


def cmd_train(run: Run) -> int:
    cfg = run.cfg
    try:
        model, prior, log = train_once(cfg, run.out / "train_log.jsonl")
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    save_checkpoint(model, {"prior.mu": prior.mu.value, "prior.sigma": prior.sigma.value},
                    run.out)
    test = run.scenes("test")
    probe = cfg["eval.probe_scene"]
    if not 0 <= probe < len(test):
        raise UsageError(f"eval.probe_scene {probe} outside the test split (0..{len(test) - 1})")
    report = _probe_report(cfg, model, prior, test[probe])
    report.write_csv(run.out / "probe_weights")
    last = log.records[-1]
    print(f"trained {len(log.records)} iterations; final loss {last['loss']:.6f}")
    for k, (mu, sigma) in enumerate(zip(last["mu"], last["sigma"])):
        print(f"  prior[{k}] mu=({mu[0]:.4f}, {mu[1]:.4f}) sigma=({sigma[0]:.4f}, {sigma[1]:.4f})")
    return EXIT_OK


def _restore(run: Run, key: str):
    ck = run.checkpoint_dir(key)
    if not (ck / "checkpoint.bin").exists():
        raise UsageError(f"no checkpoint at {ck / 'checkpoint.bin'}")
    state = load_checkpoint(ck)
    model = DetectorModel(run.cfg.num_classes, run.cfg.model_config())
    model.load_state(state)
    prior = run.cfg.make_prior()
    if "prior.mu" in state:
        if state["prior.mu"].shape != prior.mu.value.shape:
            raise UsageError("checkpoint prior shape does not match the configured prior mode")
        prior.mu.value[...] = state["prior.mu"]
        prior.sigma.value[...] = state["prior.sigma"]
    return model, prior


def _eval_rows(result, num_classes: int) -> list:
    rows = []
    for k in range(num_classes):
        ap = result.per_category.get(k)
        rows.append([k, "" if ap is None else _fmt(ap), result.n_gt[k], result.n_det[k]])
    return rows


def cmd_eval(run: Run) -> int:
    cfg = run.cfg
    model, _ = _restore(run, "eval.checkpoint")
    res = evaluate_model(model, run.scenes("test"), cfg["assign.objectness_mode"],
                         cfg["eval.nms_iou"], cfg["eval.score_threshold"])
    _write_csv(run.out / "eval.csv", ["category", "ap50", "n_gt", "n_det"],
               _eval_rows(res, cfg.num_classes) + [["mean", _fmt(res.ap50), "", ""]])
    print(f"AP50 {res.ap50:.4f} " + " ".join(f"cat{k}={v:.4f}" for k, v in res.per_category.items()))
    if res.excluded:
        print(f"categories without ground truth (excluded): {res.excluded}")
    return EXIT_OK


def compare_trials(cfg: RunConfig, strategies: Sequence[str]) -> list:
    """(label, strategy, seed, config) for every trial a compare run performs."""
    sweep_key = cfg["compare.sweep_key"]
    sweep = [(None, None)] if not sweep_key else [(sweep_key, v) for v in cfg["compare.sweep_values"]]
    trials = []
    for name in strategies:
        base = cfg.with_strategy(name)
        for key, value in sweep:
            variant = base if key is None else base.with_overrides({key: value})
            label = name if key is None else f"{name}@{key}={value}"
            for seed in cfg["compare.seeds"]:
                trials.append((label, name, seed, variant.with_overrides({"run.seed": seed})))
    return trials


def cmd_compare(run: Run, strategies: Sequence[str]) -> int:
    cfg = run.cfg
    strategies = list(strategies) or list(cfg["compare.strategies"])
    for name in strategies:
        if name not in STRATEGY_NAMES:
            raise UsageError(f"unknown strategy {name!r}; valid names: {', '.join(STRATEGY_NAMES)}")
    k = cfg.num_classes
    cat_cols = [f"ap50_cat{i}" for i in range(k)]
    prior_cols = [f"{p}_{a}_cat{i}" for i in range(k) for p in ("mu", "sigma") for a in ("x", "y")]
    per_run, by_label = [], {}
    for label, _, seed, trial_cfg in compare_trials(cfg, strategies):
        try:
            model, prior, log = train_once(trial_cfg)
        except TrainingError as exc:
            print(f"{label} seed {seed}: training aborted: {exc}", file=sys.stderr)
            return EXIT_FAIL
        res = evaluate_model(model, run.scenes("test"), trial_cfg["assign.objectness_mode"],
                             cfg["eval.nms_iou"], cfg["eval.score_threshold"])
        cats = [res.per_category.get(i, float("nan")) for i in range(k)]
        mu, sigma = np.asarray(log.records[-1]["mu"]), np.asarray(log.records[-1]["sigma"])
        rows = mu.shape[0]
        prior_vals = []
        for i in range(k):
            r = 0 if rows == 1 else i
            prior_vals += [mu[r, 0], mu[r, 1], sigma[r, 0], sigma[r, 1]]
        per_run.append([label, seed, _fmt(res.ap50)] + [_fmt(v) for v in cats]
                       + [_fmt(v) for v in prior_vals])
        by_label.setdefault(label, []).append([res.ap50] + cats)
        print(f"{label} seed={seed} AP50={res.ap50:.4f}")
    _write_csv(run.out / "compare_runs.csv", ["strategy", "seed", "ap50"] + cat_cols + prior_cols,
               per_run)
    table = []
    for label, vals in by_label.items():
        mean = np.mean(np.array(vals), axis=0)
        table.append([label, len(vals), _fmt(mean[0])] + [_fmt(v) for v in mean[1:]])
    _write_csv(run.out / "compare.csv", ["strategy", "n_seeds", "ap50"] + cat_cols, table)
    width = max(len(r[0]) for r in table)
    print(f"{'strategy'.ljust(width)}  ap50    " + "  ".join(f"cat{i:<5d}" for i in range(k)))
    for r in table:
        print(f"{r[0].ljust(width)}  {float(r[2]):.4f}  "
              + "  ".join(f"{float(v):.4f}  " for v in r[3:]))
    return EXIT_OK


def cmd_dump_weights(run: Run) -> int:
    cfg = run.cfg
    model, prior = _restore(run, "dump.checkpoint")
    scenes = run.scenes(cfg["dump.split"])
    sid = cfg["dump.scene_id"]
    if not 0 <= sid < len(scenes):
        raise UsageError(f"scene id {sid} not found in the {cfg['dump.split']} split "
                         f"(valid: 0..{len(scenes) - 1})")
    report = _probe_report(cfg, model, prior, scenes[sid])
    paths = report.write_level_csvs(run.out / "weights")
    print(f"wrote {len(paths)} files for scene {sid} ({len(report.objects)} objects)")
    return EXIT_OK


# ------------------------------------------------------------------- driver

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autoassign",
                                description="Differentiable label assignment toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--out", help="output directory (overrides run.out)")
    p.add_argument("--seed", type=int, help="run seed (overrides run.seed)")
    p.add_argument("--strategy", action="append", default=[], choices=STRATEGY_NAMES,
                   metavar="NAME", help="strategy; repeat for compare. "
                   f"One of: {', '.join(STRATEGY_NAMES)}")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cfg = RunConfig.load(path)
        if args.seed is not None:
            cfg = cfg.with_overrides({"run.seed": args.seed})
        if args.command != "compare" and args.strategy:
            if len(args.strategy) > 1:
                raise UsageError(f"{args.command} takes at most one --strategy")
            cfg = cfg.with_strategy(args.strategy[0])
        if args.out:
            cfg = cfg.with_overrides({"run.out": args.out})
        run = Run(cfg, Path(cfg["run.out"]))
        run.prepare()
        if args.command == "gradcheck":
            return cmd_gradcheck(run)
        if args.command == "gen-data":
            return cmd_gen_data(run)
        if args.command == "train":
            return cmd_train(run)
        if args.command == "eval":
            return cmd_eval(run)
        if args.command == "compare":
            return cmd_compare(run, args.strategy)
        return cmd_dump_weights(run)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
