"""Per-joint position/force hybrid controller with sensorless observers.

Continuous-time design, all first-order filters discretized with backward
Euler (``s -> (1 - z^-1) / dt``):

* pseudo-differentiation ``g_d s / (s + g_d)`` of the encoder angle,
* disturbance observer ``g / (s + g) (tau_ref - J s w)``, evaluated in the
  rearranged form ``LPF(tau_ref + g J w) - g J w`` so no explicit derivative
  of the velocity estimate is taken,
* reaction observer ``tau_dis - LPF(D w + gravity(theta))``,
* torque reference ``J/2 Kp e_theta + J/2 Kd e_omega + 1/2 Kf e_tau + tau_dis``.

The reaction estimate is the torque the joint exerts on its surroundings,
i.e. the negative of the plant's external torque: a finger squeezing an
object reports a negative reaction while the object pushes back positively.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import DOF
from .dynamics import (ContactModel, JointState, NO_CONTACT, PlantParams,
                       step_plant)

log = logging.getLogger(__name__)


def _vec(value, dof):
    return np.array(np.broadcast_to(np.asarray(value, dtype=float), (dof,)))


@dataclass
class ControllerGains:
    dof: int = DOF
    kp: np.ndarray = 100.0
    kd: np.ndarray = 20.0
    kf: np.ndarray = 1.0
    g_dob: np.ndarray = 40.0
    g_d: np.ndarray = 40.0
    torque_limit: np.ndarray = 4.0

    def __post_init__(self):
        for name in ("kp", "kd", "kf", "g_dob", "g_d", "torque_limit"):
            setattr(self, name, _vec(getattr(self, name), self.dof))
        if np.any(self.kp < 0) or np.any(self.kd < 0) or np.any(self.kf < 0):
            raise ValueError("Kp, Kd and Kf must be non-negative")
        if np.any(self.g_dob <= 0) or np.any(self.g_d <= 0):
            raise ValueError("observer cutoffs must be positive")
        if np.any(self.torque_limit <= 0):
            raise ValueError("torque limit must be positive")

    def check_dt(self, dt: float) -> None:
        if np.any(self.g_dob * dt >= 2) or np.any(self.g_d * dt >= 2):
            raise ValueError(f"filter cutoff too high for dt={dt}: need g*dt < 2")

    def without_force(self) -> "ControllerGains":
        return ControllerGains(self.dof, self.kp, self.kd, np.zeros(self.dof),
                               self.g_dob, self.g_d, self.torque_limit)


@dataclass
class CommandSet:
    theta: np.ndarray
    omega: np.ndarray
    tau: np.ndarray

    @classmethod
    def hold(cls, theta) -> "CommandSet":
        theta = np.asarray(theta, dtype=float).copy()
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.theta, self.omega, self.tau])

    @classmethod
    def from_array(cls, a, dof: int = DOF) -> "CommandSet":
        a = np.asarray(a, dtype=float)
        return cls(a[:dof].copy(), a[dof:2 * dof].copy(), a[2 * dof:3 * dof].copy())


@dataclass
class ObserverState:
    dof: int = DOF
    dob_filter_state: np.ndarray = None
    rfob_filter_state: np.ndarray = None
    pdiff_filter_state: np.ndarray = None
    tau_dis_hat: np.ndarray = None
    tau_res_hat: np.ndarray = None
    omega_hat: np.ndarray = None

    def __post_init__(self):
        if self.dob_filter_state is None:
            self.reset()

    def reset(self, theta0=None, params: PlantParams | None = None) -> None:
        """Zero every accumulator.

        With ``theta0`` the pseudo-differentiator is primed at that angle
        (zero velocity) so a robot resting away from zero does not see a
        spurious velocity spike; with ``params`` the observers are also primed
        with the resting gravity load so the reaction estimate starts at zero.
        """
        z = np.zeros(self.dof)
        self.dob_filter_state = z.copy()
        self.rfob_filter_state = z.copy()
        self.pdiff_filter_state = z.copy() if theta0 is None else _vec(theta0, self.dof)
        self.tau_dis_hat = z.copy()
        self.tau_res_hat = z.copy()
        self.omega_hat = z.copy()
        if theta0 is not None and params is not None:
            grav = params.gravity_torque(self.pdiff_filter_state)
            self.dob_filter_state = grav.copy()
            self.rfob_filter_state = grav.copy()
            self.tau_dis_hat = grav.copy()


def lpf_step(state, x, g, dt):
    """Backward-Euler update of ``g / (s + g)``; returns the new output."""
    return (state + g * dt * x) / (1.0 + g * dt)


def pseudo_diff(theta_res, obs: ObserverState, gains: ControllerGains, dt: float):
    """``g_d s / (s + g_d)`` applied to the angle, as ``g_d (theta - LPF(theta))``."""
    obs.pdiff_filter_state = lpf_step(obs.pdiff_filter_state, theta_res, gains.g_d, dt)
    obs.omega_hat = gains.g_d * (theta_res - obs.pdiff_filter_state)
    return obs.omega_hat


def dob_update(tau_ref, omega_hat, obs: ObserverState, params: PlantParams,
               gains: ControllerGains, dt: float):
    """Disturbance estimate from the torque applied over the last interval."""
    gj = gains.g_dob * params.inertia * omega_hat
    obs.dob_filter_state = lpf_step(obs.dob_filter_state, tau_ref + gj, gains.g_dob, dt)
    obs.tau_dis_hat = obs.dob_filter_state - gj
    return obs.tau_dis_hat


def rfob_update(obs: ObserverState, theta_res, omega_hat, params: PlantParams,
                gains: ControllerGains, dt: float):
    modeled = params.viscosity * omega_hat + params.gravity_torque(theta_res)
    obs.rfob_filter_state = lpf_step(obs.rfob_filter_state, modeled, gains.g_dob, dt)
    obs.tau_res_hat = obs.tau_dis_hat - obs.rfob_filter_state
    return obs.tau_res_hat


def hybrid_torque(cmd: CommandSet, theta_res, omega_hat, tau_res_hat, tau_dis_hat,
                  params: PlantParams, gains: ControllerGains):
    """Torque reference and a per-joint saturation mask."""
    tau = (0.5 * params.inertia * gains.kp * (cmd.theta - theta_res)
           + 0.5 * params.inertia * gains.kd * (cmd.omega - omega_hat)
           + 0.5 * gains.kf * (cmd.tau - tau_res_hat)
           + tau_dis_hat)
    saturated = np.abs(tau) > gains.torque_limit
    return np.clip(tau, -gains.torque_limit, gains.torque_limit), saturated


class Robot:
    """One manipulator: plant state, nominal model, controller and observers.

    The controller's nominal model is ``params`` itself, i.e. the friction and
    gravity compensation in the reaction observer is exact.
    """

    def __init__(self, params: PlantParams, gains: ControllerGains, theta0=None,
                 contact: ContactModel = NO_CONTACT):
        gains.check_dt(params.dt)
        self.params = params
        self.gains = gains
        self.contact = contact
        theta0 = np.zeros(params.dof) if theta0 is None else theta0
        self.state = JointState.at_rest(theta0, params.dof)
        self.obs = ObserverState(params.dof)
        self.tau_ref = np.zeros(params.dof)
        self.saturated = np.zeros(params.dof, dtype=bool)
        self.saturation_count = 0
        self.ticks = 0
        self.reset(theta0)

    def reset(self, theta0) -> None:
        self.state = JointState.at_rest(theta0, self.params.dof)
        self.obs.reset(self.state.theta, self.params)
        self.tau_ref = self.obs.tau_dis_hat.copy()
        self.saturation_count = 0
        self.ticks = 0

    @property
    def time(self) -> float:
        return self.ticks * self.params.dt

    def observe(self) -> None:
        """Encoder read and observer update for this tick."""
        dt = self.params.dt
        theta = self.state.theta
        w = pseudo_diff(theta, self.obs, self.gains, dt)
        dob_update(self.tau_ref, w, self.obs, self.params, self.gains, dt)
        rfob_update(self.obs, theta, w, self.params, self.gains, dt)

    def command(self, cmd: CommandSet) -> np.ndarray:
        tau, sat = hybrid_torque(cmd, self.state.theta, self.obs.omega_hat,
                                 self.obs.tau_res_hat, self.obs.tau_dis_hat,
                                 self.params, self.gains)
        if sat.any():
            self.saturation_count += 1
            if self.saturation_count == 1:
                log.debug("torque saturation on joints %s at t=%.3f",
                          np.flatnonzero(sat).tolist(), self.time)
        self.saturated = sat
        self.tau_ref = tau
        return tau

    def advance(self, tau_dist=None) -> JointState:
        self.state = step_plant(self.state, self.tau_ref, self.params, self.contact,
                                tau_dist)
        self.ticks += 1
        return self.state


def control_tick(robot: Robot, cmd: CommandSet) -> np.ndarray:
    """Observers then hybrid torque for one 2 ms tick; returns the reference."""
    robot.observe()
    return robot.command(cmd)
