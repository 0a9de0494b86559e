"""Demonstration collection and the end-to-end desk experiments.

These helpers stay in memory; the CLI wraps them with file persistence.
"""
from __future__ import annotations

import logging

from .bilateral import BilateralConfig, run_teleop
from .dataset import STRIDE, LOWPASS_HZ, build_dataset
from .dynamics import IntegrationDivergence
from .model import PRESETS, F2FLParams, TrainConfig, train
from .operator import grasp_lift, perturb_script, write_stroke
from .tasks import (GRIP_TORQUE, PEN_OFFSETS_CM, PEN_PRESSURE, SIZE_RANGE, STIFFNESS_RANGE,
                    TRAIN_PEN_OFFSETS_CM,
                    make_object_suite, pen_surface, pick_place_spec, write_spec)
from .autonomy import evaluate_suite

log = logging.getLogger(__name__)

def split_for(index: int, per_object: int) -> str:
    """The last third of each object's repeats is validation (2 + 1 for three)."""
    return "validation" if index >= per_object - per_object // 3 else "train"


def _teleop(script, contact, plant, gains, cfg, start_jitter, meta, index):
    try:
        return run_teleop(script, contact, plant, gains, cfg, start_jitter=start_jitter, meta=meta)
    except IntegrationDivergence as e:
        raise IntegrationDivergence(e.joint, f"episode {index} (seed {script.seed}): {e}") from e


def collect_pick_place(objects, episodes_per_object: int = 3, scaled: bool = True,
                       seed: int = 0, grip_force: float = GRIP_TORQUE, plant=None, gains=None,
                       start_jitter: float = 0.005, force_scale: float = 0.1):
    """Teleoperated grasp-and-lift demos, ``[(episode, split), ...]``."""
    cfg = BilateralConfig.scaled(force_scale) if scaled else BilateralConfig()
    out = []
    for oi, obj in enumerate(objects):
        for k in range(episodes_per_object):
            s = seed * 100003 + oi * 101 + k
            script = perturb_script(grasp_lift(grip_force=grip_force), s)
            ep = _teleop(script, obj, plant, gains, cfg, start_jitter,
                         {"object": oi, "repeat": k}, len(out))
            out.append((ep, split_for(k, episodes_per_object)))
    return out


def collect_write(offsets=TRAIN_PEN_OFFSETS_CM, episodes_per_setting: int = 6, seed: int = 0,
                  pressure: float = PEN_PRESSURE, plant=None, gains=None,
                  start_jitter: float = 0.005):
    """Teleoperated writing demos on the given pen offsets (unscaled)."""
    out = []
    for oi, off in enumerate(offsets):
        for k in range(episodes_per_setting):
            s = seed * 100003 + oi * 101 + k
            script = perturb_script(write_stroke(pressure=pressure), s)
            ep = _teleop(script, pen_surface(off), plant, gains, BilateralConfig(), start_jitter,
                         {"pen_offset_cm": off, "repeat": k}, len(out))
            out.append((ep, split_for(k, episodes_per_setting)))
    return out


def fit_policy(episodes, preset: str = "desk", seed: int = 0, epochs: int | None = None,
               stride: int = STRIDE, cutoff_hz: float = LOWPASS_HZ, on_epoch=None):
    """Dataset build plus training; returns ``(params, history, dataset)``."""
    ds = build_dataset(episodes, stride=stride, cutoff_hz=cutoff_hz)
    arch = PRESETS[preset]
    params = F2FLParams.init(arch["n_layers"], arch["hidden"], seed=seed)
    params.stats = ds.stats
    cfg = TrainConfig(epochs=arch["epochs"] if epochs is None else epochs, seed=seed)
    params, history, _ = train(ds.train, cfg, params, ds.validation, on_epoch=on_epoch)
    return params, history, ds


def pick_place_experiment(n_train: int = 12, n_test: int = 20, n_trials: int = 5, seed: int = 0,
                          preset: str = "desk", epochs: int | None = None, plant=None):
    """Collect, train and evaluate both controller variants on held-out objects."""
    train_objs, test_objs = make_object_suite(n_train, n_test, seed=seed)
    eps = collect_pick_place(train_objs, seed=seed, plant=plant)
    params, history, ds = fit_policy(eps, preset, seed=seed, epochs=epochs)
    tasks = [pick_place_spec(o, label=f"obj{i}") for i, o in enumerate(test_objs)]
    ranges = {"stiffness_range": STIFFNESS_RANGE, "size_range": SIZE_RANGE}
    reports = {v: evaluate_suite(params, tasks, n_trials, seeds=range(1000, 1000 + n_trials),
                                 plant=plant, variant=v, training_ranges=ranges)
               for v in ("f2fl", "without-force")}
    return {"params": params, "history": history, "dataset": ds, "reports": reports,
            "train_objects": train_objs, "test_objects": test_objs}


def write_experiment(episodes_per_setting: int = 6, n_trials: int = 5, seed: int = 0,
                     preset: str = "desk", epochs: int | None = None, plant=None):
    eps = collect_write(TRAIN_PEN_OFFSETS_CM, episodes_per_setting, seed=seed, plant=plant)
    params, history, ds = fit_policy(eps, preset, seed=seed, epochs=epochs)
    tasks = [write_spec(off) for off in PEN_OFFSETS_CM]
    reports = {v: evaluate_suite(params, tasks, n_trials, seeds=range(2000, 2000 + n_trials),
                                 plant=plant, variant=v)
               for v in ("f2fl", "without-force")}
    return {"params": params, "history": history, "dataset": ds, "reports": reports}
