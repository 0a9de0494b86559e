"""4-channel bilateral coupling of a leader and a follower robot.

Commands are built from observer estimates only (the robots are sensorless):

    theta_cmd_f = theta_l        theta_cmd_l = theta_f
    omega_cmd_f = omega_hat_l    omega_cmd_l = omega_hat_f
    tau_cmd_f   = -s tau_res_l   tau_cmd_l   = -(1/s) tau_res_f

With ``s = 1`` on every joint this is the plain 4-channel law. A gripper scale
of 0.1 makes the follower squeeze with a tenth of the operator's force while
the operator feels the follower's reaction magnified tenfold.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import DOF, GRIPPER
from .control import CommandSet, ControllerGains, Robot
from .dataset import EpisodeLog, EpisodeRecorder
from .dynamics import ContactModel, NO_CONTACT, PlantParams
from .operator import DemoScript, Operator


@dataclass
class BilateralConfig:
    force_scale: np.ndarray = field(default_factory=lambda: np.ones(DOF))
    enabled: bool = True

    def __post_init__(self):
        self.force_scale = np.array(np.broadcast_to(
            np.asarray(self.force_scale, dtype=float), (len(np.atleast_1d(self.force_scale)),)))
        if np.any(self.force_scale <= 0):
            raise ValueError("force scale must be positive")

    @classmethod
    def scaled(cls, scale: float = 0.1, joint: int = GRIPPER, dof: int = DOF):
        s = np.ones(dof)
        s[joint] = scale
        return cls(s)


def bilateral_commands(leader_theta, leader_omega_hat, leader_tau_res,
                       follower_theta, follower_omega_hat, follower_tau_res,
                       cfg: BilateralConfig) -> tuple[CommandSet, CommandSet]:
    """Leader and follower command sets from both robots' responses."""
    s = cfg.force_scale
    cmd_l = CommandSet(np.array(follower_theta, dtype=float), np.array(follower_omega_hat, dtype=float),
                       -np.asarray(follower_tau_res) / s)
    cmd_f = CommandSet(np.array(leader_theta, dtype=float), np.array(leader_omega_hat, dtype=float),
                       -s * np.asarray(leader_tau_res))
    return cmd_l, cmd_f


def robot_commands(leader: Robot, follower: Robot, cfg: BilateralConfig):
    return bilateral_commands(leader.state.theta, leader.obs.omega_hat, leader.obs.tau_res_hat,
                              follower.state.theta, follower.obs.omega_hat,
                              follower.obs.tau_res_hat, cfg)


def sync_metrics(leader_log, follower_log, force_scale=1.0, start: int = 0) -> dict:
    """RMS position mismatch and action-reaction residual per joint.

    ``leader_log``/``follower_log`` are ``(n, 3*dof)`` response arrays (angle,
    velocity estimate, reaction estimate); ``start`` skips the settling ticks.
    """
    leader_log = np.asarray(leader_log, dtype=float)
    follower_log = np.asarray(follower_log, dtype=float)
    if leader_log.shape != follower_log.shape:
        raise ValueError(f"log length mismatch: {leader_log.shape} vs {follower_log.shape}")
    dof = leader_log.shape[1] // 3
    s = np.broadcast_to(np.asarray(force_scale, dtype=float), (dof,))
    lt, ft = leader_log[start:, :dof], follower_log[start:, :dof]
    lf, ff = leader_log[start:, 2 * dof:], follower_log[start:, 2 * dof:]
    residual = lf + ff / s
    return {"position_rms": np.sqrt(np.mean((lt - ft) ** 2, axis=0)),
            "residual_rms": np.sqrt(np.mean(residual ** 2, axis=0))}


def _responses(robot: Robot) -> np.ndarray:
    return np.concatenate([robot.state.theta, robot.obs.omega_hat, robot.obs.tau_res_hat])


def run_teleop(script: DemoScript, contact: ContactModel = NO_CONTACT,
               plant: PlantParams | None = None, gains: ControllerGains | None = None,
               cfg: BilateralConfig | None = None, duration: float | None = None,
               start_jitter: float = 0.0, meta: dict | None = None) -> EpisodeLog:
    """Operator -> leader <-> follower -> object, logged every tick.

    The start pose is the script's first waypoint plus seeded jitter shared
    by both robots.
    """
    plant = plant or PlantParams()
    gains = gains or ControllerGains(plant.dof)
    cfg = cfg or BilateralConfig(np.ones(plant.dof))
    duration = script.duration if duration is None else duration
    n = int(round(duration / plant.dt))
    rng = np.random.default_rng(script.seed)
    theta0 = script.waypoints[0] + rng.normal(0.0, start_jitter, plant.dof) * (start_jitter > 0)
    leader = Robot(plant, gains, theta0)
    follower = Robot(plant, gains, theta0, contact)
    op = Operator(script, plant.dt)
    j = script.grip_joint
    s_grip = cfg.force_scale[j]
    info = {"task": script.name, "seed": int(script.seed), "autonomous": False,
            "force_scale": cfg.force_scale.tolist(), "contact": contact_to_dict(contact)}
    info.update(meta or {})
    rec = EpisodeRecorder(n, plant.dt, plant.dof, info)
    for i in range(n):
        t = i * plant.dt
        leader.observe()
        follower.observe()
        cmd_l, cmd_f = robot_commands(leader, follower, cfg)
        rec.record(_responses(leader), _responses(follower), cmd_l.as_array(),
                   cmd_f.as_array(), follower.state.tau_ext[contact.joint])
        leader.command(cmd_l)
        follower.command(cmd_f)
        felt = s_grip * abs(cmd_l.tau[j])
        tau_h = op.torque(min(t, script.duration), leader.state.theta, leader.state.omega, felt)
        leader.advance(tau_h)
        follower.advance()
    ep = rec.finish()
    ep.meta["leader_saturation_ticks"] = leader.saturation_count
    ep.meta["follower_saturation_ticks"] = follower.saturation_count
    return ep


def contact_to_dict(c: ContactModel) -> dict:
    return {"kind": c.kind, "stiffness": c.stiffness, "damping": c.damping,
            "engage_angle": c.engage_angle, "crush_torque": float(c.crush_torque),
            "slip_torque": c.slip_torque, "joint": c.joint}


def contact_from_dict(d: dict) -> ContactModel:
    return ContactModel(**d)
