"""Command-line pipeline: collect -> dataset -> train -> rollout / eval.

All artifacts live under ``paths.root`` of the run config::

    episodes/ep_0000.csv ... manifest.json
    dataset/            samples, norm_stats.json, dataset.json
    model/              checkpoint.f2fl, checkpoint_eNNNNN.f2fl, loss_history.csv
    rollouts/           single-episode logs and traces
    eval/               report_<variant>.json, episodes_<variant>.csv, table.csv,
                        traces/*.csv and, unless disabled, *.png
    manifests/<command>.json

Exit codes: 0 success, 1 task-level failure (a rollout that fails its task,
an unstable simulation, or an eval below ``--min-success``), 2 validation
error (bad config, missing or corrupt input files, dimension mismatch).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autonomy import F2FLPolicy, rollout, evaluate_suite
from .bilateral import contact_to_dict
from .config import ConfigError, RunConfig, dump_config, load_config, run_manifest
from .dataset import (Dataset, SchemaError, build_dataset, read_episode_csv, read_manifest,
                      write_episode_csv, write_manifest, write_trace_csv)
from .dynamics import IntegrationDivergence
from .experiment import collect_pick_place, collect_write
from .model import PRESETS, F2FLParams, load_checkpoint, save_checkpoint, train
from .tasks import make_object_suite, pick_place_spec, tip_trajectory, write_spec

log = logging.getLogger("bilateral_il")

EXIT_OK, EXIT_TASK, EXIT_INVALID = 0, 1, 2


# ------------------------------------------------------------------ helpers

def _finite(obj):
    """NaN/inf become null so every JSON artifact is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _dumps(obj, indent=None) -> str:
    return json.dumps(_finite(obj), indent=indent, sort_keys=True, allow_nan=False)


def _suite(cfg: RunConfig):
    t = cfg.task
    return make_object_suite(t.n_train, t.n_test, tuple(t.stiffness_range),
                             tuple(t.size_range), seed=cfg.seed,
                             train_fraction=t.train_fraction)


def eval_tasks(cfg: RunConfig):
    if cfg.task.kind == "write":
        return [write_spec(off) for off in cfg.task.eval_pen_offsets]
    _, test = _suite(cfg)
    return [pick_place_spec(o, label=f"obj{i:02d}") for i, o in enumerate(test)]


def _write_manifest(cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    d = cfg.root / "manifests"
    d.mkdir(parents=True, exist_ok=True)
    doc = run_manifest(cfg, command)
    doc.update(extra or {})
    (d / f"{command}.json").write_text(_dumps(doc, 2) + "\n")


def _checkpoint_path(cfg: RunConfig, arg) -> Path:
    return Path(arg) if arg else cfg.root / "model" / "checkpoint.f2fl"


def _load_params(cfg: RunConfig, path: Path) -> F2FLParams:
    params, _, _ = load_checkpoint(path)
    dof = cfg.plant.build().dof
    if params.in_dim != 3 * dof or params.out_dim != 6 * dof:
        raise ValueError(f"checkpoint {path} is for {params.in_dim} inputs / {params.out_dim} "
                         f"outputs but the config has {dof} joints "
                         f"({3 * dof} / {6 * dof})")
    if params.stats is None:
        raise ValueError(f"checkpoint {path} has no normalization statistics")
    return params


def _write_history(path: Path, history) -> None:
    h = np.asarray(history, dtype=float).reshape(-1, 3)
    write_trace_csv(path, ["epoch", "train_loss", "validation_loss"],
                    [h[:, 0].astype(int).tolist(), h[:, 1], h[:, 2]])


# ----------------------------------------------------------------- commands

def cmd_collect(cfg: RunConfig, args) -> int:
    plant = cfg.plant.build()
    gains = cfg.gains.build(plant.dof)
    out = cfg.root / "episodes"
    out.mkdir(parents=True, exist_ok=True)
    t = cfg.task
    if t.kind == "pick_place":
        objects, _ = _suite(cfg)
        if not objects:
            log.warning("no training objects configured; writing an empty manifest")
        eps = collect_pick_place(objects, t.episodes_per_object, cfg.bilateral.scaled,
                                 seed=cfg.seed, grip_force=t.grip_force, plant=plant,
                                 gains=gains, force_scale=cfg.bilateral.force_scale)
        settings = [contact_to_dict(o) for o in objects]
    else:
        if not t.train_pen_offsets:
            log.warning("no pen offsets configured; writing an empty manifest")
        eps = collect_write(t.train_pen_offsets, t.episodes_per_setting, seed=cfg.seed,
                            pressure=t.pen_pressure, plant=plant, gains=gains)
        settings = list(t.train_pen_offsets)
    entries = []
    for i, (ep, split) in enumerate(eps):
        name = f"ep_{i:04d}.csv"
        write_episode_csv(ep, out / name)
        entries.append({"file": name, "split": split, "seed": ep.meta.get("seed"),
                        "object": ep.meta.get("object", ep.meta.get("pen_offset_cm"))})
    write_manifest(out / "manifest.json", entries,
                   {"task": t.kind, "settings": settings, "scaled": cfg.bilateral.scaled,
                    "force_scale": cfg.bilateral.force_scale})
    _write_manifest(cfg, "collect", {"episodes": len(entries)})
    print(f"collected {len(entries)} episodes -> {out}")
    return EXIT_OK


def cmd_dataset(cfg: RunConfig, args) -> int:
    src = cfg.root / "episodes"
    man = read_manifest(src / "manifest.json")
    eps = []
    for e in man["episodes"]:
        path = src / e["file"]
        if not path.exists():
            raise FileNotFoundError(f"episode {path} listed in the manifest is missing")
        eps.append((read_episode_csv(path), e["split"]))
    if not eps:
        raise ValueError("manifest lists no episodes")
    stride = args.stride or cfg.dataset.stride
    ds = build_dataset(eps, stride=stride, cutoff_hz=cfg.dataset.lowpass_hz)
    ds.save(cfg.root / "dataset")
    _write_manifest(cfg, "dataset", ds.info)
    print(f"{ds.info['episodes']} episodes -> {ds.info['sequences']} sequences "
          f"({ds.info['train_sequences']} train, {ds.info['validation_sequences']} validation, "
          f"stride {stride})")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    ds = Dataset.load(cfg.root / "dataset")
    if not ds.train:
        raise ValueError("dataset has no training sequences")
    tc = cfg.train.build(cfg.seed)
    if args.epochs is not None:
        tc.epochs = args.epochs
    out = cfg.root / "model"
    out.mkdir(parents=True, exist_ok=True)
    latest = out / "checkpoint.f2fl"
    start, history, optimizer = 0, [], None
    if args.resume:
        params, optimizer, extra = load_checkpoint(latest)
        start = int(extra.get("epoch", 0))
        history = [tuple(h) for h in extra.get("history", [])]
        log.info("resuming at epoch %d", start)
    else:
        arch = PRESETS[cfg.train.preset]
        params = F2FLParams.init(arch["n_layers"], arch["hidden"], ds.stats.mean_in.size,
                                 ds.stats.mean_out.size, seed=cfg.seed)
        params.stats = ds.stats
        params.meta = {"preset": cfg.train.preset, "config_sha256": cfg.digest()}

    def on_epoch(epoch, params, optimizer, history):
        done = epoch + 1
        if done % 10 == 0 or done == tc.epochs:
            log.info("epoch %d/%d train %.5f val %.5f", done, tc.epochs, *history[-1][1:])
        periodic = tc.checkpoint_every and done % tc.checkpoint_every == 0
        if periodic or done == tc.epochs:
            extra = {"epoch": done, "history": [list(h) for h in history]}
            save_checkpoint(latest, params, optimizer, extra)
            if periodic:
                save_checkpoint(out / f"checkpoint_e{done:05d}.f2fl", params, optimizer, extra)

    params, history, optimizer = train(ds.train, tc, params, ds.validation, optimizer,
                                       start_epoch=start, history=history, on_epoch=on_epoch)
    if start >= tc.epochs:
        log.warning("checkpoint is already at epoch %d; nothing to train", start)
    _write_history(out / "loss_history.csv", history)
    if cfg.eval.plots and history:
        from .plotting import loss_curve_figure
        loss_curve_figure(history, out / "loss_history.png")
    _write_manifest(cfg, "train", {"epochs": tc.epochs, "final": list(history[-1]) if history else None})
    if history:
        print(f"trained {tc.epochs} epochs: train {history[-1][1]:.5f}, "
              f"validation {history[-1][2]:.5f} -> {latest}")
    return EXIT_OK


def _trace_files(out: Path, stem: str, results: dict, task, plots: bool) -> None:
    """Force trace (and pen tip path for writing) of one trial per variant."""
    out.mkdir(parents=True, exist_ok=True)
    names = list(results)
    t = results[names[0]].episode.t
    write_trace_csv(out / f"{stem}_force.csv", ["t"] + [f"force_{v}" for v in names],
                    [t] + [np.abs(results[v].episode.contact) for v in names])
    tips = {}
    if task.kind == "write":
        for v in names:
            tips[v] = tip_trajectory(results[v].episode)
            tr = tips[v]
            write_trace_csv(out / f"{stem}_tip_{v}.csv", ["t", "x", "y", "pen_down"],
                            [tr[:, 0], tr[:, 1], tr[:, 2], tr[:, 3].astype(int).tolist()])
    if plots:
        from .plotting import force_trace_figure, tip_trajectory_figure
        window = task.stroke_window if task.kind == "write" else task.lift_window
        force_trace_figure({v: (t, results[v].episode.contact) for v in names},
                           out / f"{stem}_force.png", band=task.band, window=window)
        if tips:
            tip_trajectory_figure(tips, out / f"{stem}_tip.png")


def cmd_rollout(cfg: RunConfig, args) -> int:
    params = _load_params(cfg, _checkpoint_path(cfg, args.checkpoint))
    tasks = eval_tasks(cfg)
    if not 0 <= args.task_index < len(tasks):
        raise ValueError(f"--task-index {args.task_index} outside 0..{len(tasks) - 1}")
    task = tasks[args.task_index]
    plant = cfg.plant.build()
    gains = cfg.gains.build(plant.dof)
    variant = args.variant or "f2fl"
    if variant == "without-force":
        gains = gains.without_force()
    res = rollout(F2FLPolicy(params), task, plant, gains, seed=args.trial_seed,
                  meta={"variant": variant})
    out = cfg.root / "rollouts"
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{task.label or args.task_index}_{variant}_s{args.trial_seed}"
    write_episode_csv(res.episode, out / f"{stem}.csv")
    _trace_files(out, stem, {variant: res}, task, cfg.eval.plots and not args.no_plots)
    o = res.outcome
    summary = {"task": task.label, "variant": variant, "seed": args.trial_seed,
               "success": bool(o.success), "failure_mode": o.failure_mode,
               "in_band_fraction": o.in_band_fraction, "ticks": res.ticks,
               "inferences": res.inferences}
    (out / f"{stem}.json").write_text(_dumps(summary, 2) + "\n")
    _write_manifest(cfg, "rollout", summary)
    print(_dumps(summary))
    return EXIT_OK if o.success else EXIT_TASK


def cmd_eval(cfg: RunConfig, args) -> int:
    params = _load_params(cfg, _checkpoint_path(cfg, args.checkpoint))
    tasks = eval_tasks(cfg)
    plant = cfg.plant.build()
    gains = cfg.gains.build(plant.dof)
    variants = [args.variant] if args.variant else list(cfg.eval.variants)
    n = cfg.eval.n_trials
    seeds = [cfg.seed * 1000 + 1000 + k for k in range(n)]
    ranges = None
    if cfg.task.kind == "pick_place":
        ranges = {"stiffness_range": tuple(cfg.task.stiffness_range),
                  "size_range": tuple(cfg.task.size_range),
                  "train_fraction": cfg.task.train_fraction}
    out = cfg.root / "eval"
    out.mkdir(parents=True, exist_ok=True)
    kept = {}

    def keep(variant):
        def cb(ti, trial, res):
            if trial < cfg.eval.trace_trials:
                kept.setdefault((ti, trial), {})[variant] = res
        return cb

    reports = {}
    for v in variants:
        reports[v] = evaluate_suite(params, tasks, n, seeds, plant, gains, v, ranges,
                                    on_result=keep(v))
        rep = reports[v]
        (out / f"report_{v}.json").write_text(_dumps(rep, 2) + "\n")
        rows = rep["rows"]
        cols = ["task", "label", "trial", "seed", "success", "failure_mode", "in_band_fraction",
                "stiffness", "engage_angle", "crush_torque", "slip_torque", "in_training_range",
                "peak_contact"]
        write_trace_csv(out / f"episodes_{v}.csv", cols, [[r[c] for r in rows] for c in cols])
        print(f"{v}: {rep['successes']}/{rep['trials']} ({100 * rep['success_rate']:.0f}%) "
              f"failure modes {rep['failure_modes']}")
    # per-task table, one success column per variant
    first = reports[variants[0]]["per_task"]
    cols = [[r["label"] for r in first], [r["in_training_range"] for r in first]]
    cols += [[r["successes"] for r in reports[v]["per_task"]] for v in variants]
    header = ["task", "in_training_range"] + [f"successes_{v}" for v in variants]
    write_trace_csv(out / "table.csv", header, cols)
    plots = cfg.eval.plots and not args.no_plots
    for (ti, trial), results in sorted(kept.items()):
        _trace_files(out / "traces", f"{tasks[ti].label}_trial{trial}", results, tasks[ti], plots)
    if plots:
        from .plotting import success_table_figure
        success_table_figure(reports, out / "success_table.png")
    _write_manifest(cfg, "eval", {v: {"successes": r["successes"], "trials": r["trials"]}
                                  for v, r in reports.items()})
    if args.min_success is not None:
        gated = reports.get("f2fl") or reports[variants[0]]
        if gated["success_rate"] < args.min_success:
            log.error("%s success rate %.2f below --min-success %.2f", gated["variant"],
                      gated["success_rate"], args.min_success)
            return EXIT_TASK
    return EXIT_OK


COMMANDS = {"collect": cmd_collect, "dataset": cmd_dataset, "train": cmd_train,
            "rollout": cmd_rollout, "eval": cmd_eval}


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (defaults when omitted)")
    common.add_argument("--seed", type=int, help="global seed override")
    common.add_argument("--root", help="artifact directory override (paths.root)")
    common.add_argument("--scaled", action=argparse.BooleanOptionalAction, default=None,
                        help="scaled pick-and-place demos (gripper force scale, default on)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="network size preset")
    common.add_argument("--variant", choices=["f2fl", "without-force"],
                        help="controller variant; without-force sets K_f = 0")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bilateral-il", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="record teleoperated demonstrations")
    d = sub.add_parser("dataset", parents=[common], help="build the training corpus")
    d.add_argument("--stride", type=int, help="decimation stride override (1 = debug)")
    t = sub.add_parser("train", parents=[common], help="train the F2FL network")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", action="store_true", help="continue from model/checkpoint.f2fl")
    r = sub.add_parser("rollout", parents=[common], help="one autonomous episode")
    r.add_argument("--checkpoint")
    r.add_argument("--task-index", type=int, default=0)
    r.add_argument("--trial-seed", type=int, default=0)
    r.add_argument("--no-plots", action="store_true")
    e = sub.add_parser("eval", parents=[common], help="success table over the test suite")
    e.add_argument("--checkpoint")
    e.add_argument("--min-success", type=float)
    e.add_argument("--no-plots", action="store_true")
    return p


def _overrides(args) -> dict:
    o = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.root is not None:
        o["paths.root"] = args.root
    if args.scaled is not None:
        o["bilateral.scaled"] = args.scaled
    if args.preset is not None:
        o["train.preset"] = args.preset
    return o


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args))
        cfg.root.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, cfg.root / f"config_{args.command}.yaml")
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, SchemaError, FileNotFoundError, ValueError) as e:
        log.error("%s", e)
        return EXIT_INVALID
    except IntegrationDivergence as e:
        log.error("unstable simulation: %s", e)
        return EXIT_TASK
    except OSError as e:
        log.error("I/O error: %s", e)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
