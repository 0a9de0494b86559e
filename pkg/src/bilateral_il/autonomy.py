"""Autonomous follower driven by a 25 Hz policy and the 500 Hz hybrid controller.

Every ``stride`` control ticks the follower's (low-passed) response is fed to
the policy, whose 48 outputs are the next command values of the leader and the
follower. The follower block is applied to the follower controller and held
until the next inference. By the bilateral identities that block *is* the
predicted leader response (angle, velocity and reaction torque with the sign
flip and force scale applied), so the autonomous follower is commanded exactly
as it would have been by a leader.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import DOF
from .bilateral import contact_to_dict
from .control import CommandSet, ControllerGains, Robot
from .dataset import LOWPASS_HZ, STRIDE, EpisodeLog, EpisodeRecorder
from .dynamics import PlantParams
from .model import F2FLParams, StatefulPolicy
from .operator import HOME, WRITE_HOME
from .tasks import TaskSpec, in_training_range, judge


class NonFiniteOutput(FloatingPointError):
    def __init__(self, step: int, tick: int):
        self.step, self.tick = step, tick
        super().__init__(f"policy produced non-finite output at inference step {step} "
                         f"(tick {tick})")


def follower_command(output, dof: int = DOF) -> CommandSet:
    """Follower command set from the follower block of a 48-dim output."""
    return CommandSet.from_array(np.asarray(output)[3 * dof:6 * dof], dof)


def predicted_leader_response(output, force_scale=1.0, dof: int = DOF):
    """Invert the bilateral identities: (theta_l, omega_l, tau_res_l)."""
    cmd = follower_command(output, dof)
    return cmd.theta, cmd.omega, -cmd.tau / np.asarray(force_scale, dtype=float)


class F2FLPolicy(StatefulPolicy):
    pass


class ReplayPolicy:
    """Replays a demonstration's logged commands one 25 Hz step ahead."""

    def __init__(self, ep: EpisodeLog, stride: int = STRIDE, phase: int = 0):
        self.targets = ep.targets()[phase::stride]
        self.step = 0

    def reset(self) -> None:
        self.step = 0

    def predict(self, response) -> np.ndarray:
        i = min(self.step + 1, len(self.targets) - 1)
        self.step += 1
        return self.targets[i].copy()


class ConstantPolicy:
    def __init__(self, output):
        self.output = np.asarray(output, dtype=float)

    def reset(self) -> None:
        pass

    def predict(self, response) -> np.ndarray:
        return self.output.copy()


@dataclass
class RolloutResult:
    episode: EpisodeLog
    outcome: object
    ticks: int
    inferences: int


def rollout(policy, task: TaskSpec, plant: PlantParams | None = None,
            gains: ControllerGains | None = None, duration: float | None = None,
            seed: int = 0, start_pose=None, start_jitter: float = 0.005,
            stride: int = STRIDE, input_lowpass_hz: float | None = LOWPASS_HZ,
            channels=("theta", "omega", "tau"), meta: dict | None = None) -> RolloutResult:
    """Run one autonomous episode and judge it.

    ``channels`` selects which command channels reach the controller; the
    others are replaced by a hold on the current angle, zero velocity and
    zero torque.
    """
    plant = plant or PlantParams()
    gains = gains or ControllerGains(plant.dof)
    duration = task.duration if duration is None else duration
    n = int(round(duration / plant.dt))
    dof = plant.dof
    rng = np.random.default_rng(seed)
    if start_pose is None:
        start_pose = HOME if task.kind == "pick_place" else WRITE_HOME
    pose = np.asarray(start_pose, dtype=float)
    theta0 = pose + (rng.normal(0.0, start_jitter, dof) if start_jitter > 0 else 0.0)
    robot = Robot(plant, gains, theta0, task.contact)
    policy.reset()
    info = {"task": task.kind, "label": task.label, "seed": int(seed), "autonomous": True,
            "kf": gains.kf.tolist(), "contact": contact_to_dict(task.contact)}
    info.update(meta or {})
    rec = EpisodeRecorder(n, plant.dt, dof, info)
    c = 2 * math.pi * input_lowpass_hz * plant.dt if input_lowpass_hz else None
    filt = None
    out = None
    cmd = None
    steps = 0
    for i in range(n):
        robot.observe()
        resp = np.concatenate([robot.state.theta, robot.obs.omega_hat, robot.obs.tau_res_hat])
        if c is None:
            filt = resp
        elif filt is None:
            filt = resp.copy()
        else:
            filt = (filt + c * resp) / (1.0 + c)
        if i % stride == 0:
            out = np.asarray(policy.predict(filt), dtype=float)
            if not np.all(np.isfinite(out)):
                raise NonFiniteOutput(steps, i)
            steps += 1
            cmd = follower_command(out, dof)
            if "theta" not in channels:
                cmd.theta = robot.state.theta.copy()
            if "omega" not in channels:
                cmd.omega = np.zeros(dof)
            if "tau" not in channels:
                cmd.tau = np.zeros(dof)
        rec.record(out[3 * dof:6 * dof], resp, out[:3 * dof], cmd.as_array(),
                   robot.state.tau_ext[task.contact.joint])
        robot.command(cmd)
        robot.advance()
    ep = rec.finish()
    ep.meta["inferences"] = steps
    ep.meta["follower_saturation_ticks"] = robot.saturation_count
    return RolloutResult(ep, judge(ep, task), n, steps)


def make_policy(source):
    if isinstance(source, F2FLParams):
        return F2FLPolicy(source)
    return source


def evaluate_suite(policy_source, tasks: list[TaskSpec], n_trials: int = 5,
                   seeds=None, plant=None, gains=None, variant: str = "f2fl",
                   training_ranges: dict | None = None, keep_episodes: bool = False,
                   on_result=None) -> dict:
    """Success table over a list of task specs (one per object or pen setting).

    ``policy_source`` is an ``F2FLParams``, a policy object, or a callable
    ``(task_index) -> policy``. Rows come back in (task, trial) order.
    ``on_result(task_index, trial, result)`` sees every ``RolloutResult``.
    """
    if not tasks:
        raise ValueError("empty suite")
    gains = gains or ControllerGains()
    if variant == "without-force":
        gains = gains.without_force()
    elif variant != "f2fl":
        raise ValueError(f"unknown variant {variant!r}")
    seeds = list(seeds) if seeds is not None else list(range(n_trials))
    if len(seeds) != n_trials:
        raise ValueError("need one seed per trial")
    rows, per_task, modes, episodes = [], [], {m: 0 for m in
                                                ("none", "slip", "crush", "no_contact",
                                                 "pressure_out_of_band")}, []
    for ti, task in enumerate(tasks):
        if callable(policy_source) and not hasattr(policy_source, "predict"):
            policy = make_policy(policy_source(ti))
        else:
            policy = make_policy(policy_source)
        succ = 0
        in_range = None
        if training_ranges is not None and task.kind == "pick_place":
            in_range = in_training_range(task.contact, **training_ranges)
        for trial, seed in enumerate(seeds):
            res = rollout(policy, task, plant, gains, seed=seed,
                          meta={"variant": variant, "trial": trial})
            o = res.outcome
            modes[o.failure_mode] += 1
            succ += o.success
            rows.append({"task": ti, "label": task.label, "trial": trial, "seed": int(seed),
                         "success": bool(o.success), "failure_mode": o.failure_mode,
                         "in_band_fraction": o.in_band_fraction,
                         "stiffness": task.contact.stiffness,
                         "engage_angle": task.contact.engage_angle,
                         "crush_torque": task.contact.crush_torque,
                         "slip_torque": task.contact.slip_torque,
                         "in_training_range": in_range,
                         "peak_contact": float(np.max(np.abs(res.episode.contact)))})
            if keep_episodes:
                episodes.append(res.episode)
            if on_result is not None:
                on_result(ti, trial, res)
        per_task.append({"task": ti, "label": task.label, "successes": succ,
                         "trials": n_trials, "in_training_range": in_range})
    total = sum(r["success"] for r in rows)
    report = {"variant": variant, "rows": rows, "per_task": per_task,
              "failure_modes": modes, "successes": total, "trials": len(rows),
              "success_rate": total / len(rows)}
    if keep_episodes:
        report["episodes"] = episodes
    return report
