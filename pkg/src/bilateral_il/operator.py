"""Synthetic demonstrator driving the leader robot through an impedance law.

The operator holds a spring-damper ``K_h (target - theta) - B_h omega`` between
its hand and the leader's joints. Targets come from a waypoint table. During a
grip phase the operator keeps moving the grip joint's target in the closing
direction until the force it feels through the leader matches the requested
contact torque, the way a person squeezes until the object feels held.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import DOF, GRIPPER

HOME = np.array([0.0, 0.3, 0.5, 0.0, 0.4, 0.0, 0.2, 0.7])
WRITE_HOME = np.array([0.0, 0.3, 0.5, 0.0, 0.4, 0.3, 0.2, 0.1])  # pen held closed


@dataclass(frozen=True)
class DemoScript:
    times: np.ndarray
    waypoints: np.ndarray  # (n_waypoints, dof)
    grip_force_target: float = 0.0
    grip_joint: int = GRIPPER
    grip_direction: float = -1.0  # sign of the angle change that increases contact
    grip_phases: tuple = ()  # ((t_on, t_off), ...)
    grip_rate: float = 0.5  # rad/s target drift while the grip force is off
    stiffness: np.ndarray | float = 5.0
    damping: np.ndarray | float = 0.5
    seed: int = 0
    jitter: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        wp = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "waypoints", wp)
        if times.ndim != 1 or len(times) != len(wp):
            raise ValueError("one timestamp per waypoint row required")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("waypoint timestamps must be strictly increasing")
        if np.any(np.asarray(self.stiffness) <= 0):
            raise ValueError("operator stiffness must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    @property
    def dof(self) -> int:
        return self.waypoints.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def target(self, t: float) -> np.ndarray:
        if not self.times[0] <= t <= self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside script [{self.times[0]}, {self.times[-1]}]")
        return np.array([np.interp(t, self.times, self.waypoints[:, j])
                         for j in range(self.dof)])

    def in_grip(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.grip_phases)


def operator_torque(t: float, leader_theta, leader_omega, script: DemoScript,
                    bias=None) -> np.ndarray:
    """Hand torque on the leader; ``bias`` offsets the waypoint targets."""
    target = script.target(t)
    if bias is not None:
        target = target + bias
    k = np.broadcast_to(script.stiffness, target.shape)
    b = np.broadcast_to(script.damping, target.shape)
    return k * (target - leader_theta) - b * leader_omega


class Operator:
    """Stateful wrapper adding grip-force seeking on top of ``operator_torque``."""

    def __init__(self, script: DemoScript, dt: float):
        self.script = script
        self.dt = dt
        self.bias = np.zeros(script.dof)

    def torque(self, t: float, leader_theta, leader_omega, felt: float) -> np.ndarray:
        s = self.script
        j = s.grip_joint
        if s.grip_force_target > 0 and s.in_grip(t):
            err = np.clip(1.0 - felt / s.grip_force_target, -1.0, 1.0)
            self.bias[j] += s.grip_direction * s.grip_rate * err * self.dt
        else:
            step = s.grip_rate * self.dt
            self.bias[j] -= np.clip(self.bias[j], -step, step)
        return operator_torque(t, leader_theta, leader_omega, s, self.bias)


def perturb_script(script: DemoScript, seed: int) -> DemoScript:
    """Seeded Gaussian jitter on every waypoint angle except the first row."""
    if script.jitter == 0:
        return replace(script, seed=seed)
    rng = np.random.default_rng(seed)
    wp = script.waypoints.copy()
    wp[1:] += rng.normal(0.0, script.jitter, size=wp[1:].shape)
    return replace(script, waypoints=wp, seed=seed)


def _per_joint(arm, grip):
    v = np.full(DOF, float(arm))
    v[GRIPPER] = grip
    return v


def grasp_lift(grip_force: float = 0.2, jitter: float = 0.02, seed: int = 0,
               home=HOME) -> DemoScript:
    """Reach, squeeze, carry to the place pose, release; 4 s."""
    home = np.asarray(home, dtype=float)
    reach = home + np.array([0.0, 0.25, 0.2, 0.0, -0.15, 0.0, 0.0, 0.0])
    place = reach + np.array([0.6, -0.2, -0.1, 0.1, 0.0, 0.0, 0.0, 0.0])
    times = [0.0, 0.7, 1.9, 2.9, 4.0]
    wps = [home, reach, reach, place, place]
    return DemoScript(times=np.array(times), waypoints=np.array(wps),
                      grip_force_target=grip_force, grip_joint=GRIPPER,
                      grip_direction=-1.0, grip_phases=((0.6, 3.3),), grip_rate=0.5,
                      stiffness=_per_joint(5.0, 20.0), damping=_per_joint(0.5, 1.0),
                      seed=seed, jitter=jitter, name="grasp_lift")


PEN_JOINT = 5  # wrist pitch presses the pen onto the board


def write_stroke(pressure: float = 0.5, jitter: float = 0.01, seed: int = 0,
                 home=WRITE_HOME) -> DemoScript:
    """Lower the pen, hold pressure while tracing a stroke, lift; 4 s.

    The grip joint of this script is the pressing joint; the stroke itself is
    drawn by joints 0 and 2.
    """
    home = np.asarray(home, dtype=float).copy()
    hover = home.copy()
    damping = np.full(DOF, 0.5)
    damping[PEN_JOINT] = 1.0  # a firm wrist so touchdown does not ring
    stroke = [home + np.array(d) for d in (
        [0.00, 0.0, 0.00, 0, 0, 0, 0, 0],
        [0.25, 0.0, 0.10, 0, 0, 0, 0, 0],
        [0.10, 0.0, 0.30, 0, 0, 0, 0, 0],
        [0.35, 0.0, 0.25, 0, 0, 0, 0, 0],
    )]
    times = [0.0, 0.9, 1.7, 2.5, 3.3, 4.0]
    wps = [hover, stroke[0], stroke[1], stroke[2], stroke[3], stroke[3]]
    return DemoScript(times=np.array(times), waypoints=np.array(wps),
                      grip_force_target=pressure, grip_joint=PEN_JOINT,
                      grip_direction=1.0, grip_phases=((0.3, 3.4),), grip_rate=0.4,
                      stiffness=5.0, damping=damping, seed=seed, jitter=jitter,
                      name="write_stroke")


BUILTIN_SCRIPTS = {"grasp_lift": grasp_lift, "write_stroke": write_stroke}
