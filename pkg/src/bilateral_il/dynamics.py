"""Decoupled per-joint plant with viscous friction, gravity and spring contact.

Each joint obeys ``J * dw/dt = tau - D * w - g * cos(theta) + tau_ext`` and is
advanced with semi-implicit Euler at a fixed step (velocity first, then angle).
The contact torque is recomputed from the new angle after every step.

Semi-implicit Euler is stable for an undamped contact spring while
``sqrt(k / J) * dt < 2``; at the default ``dt = 2 ms`` and the gripper's ``J = 0.01`` that is
``k < 1e4`` N*m/rad, far above the stiffest object used by the task suites.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import DOF, GRIPPER

CONTACT_KINDS = ("none", "grasp-spring", "surface-spring")


class IntegrationDivergence(FloatingPointError):
    """Raised when the plant state stops being finite."""

    def __init__(self, joint: int, message: str = ""):
        self.joint = joint
        super().__init__(message or f"integration diverged at joint {joint}")


@dataclass
class JointState:
    theta: np.ndarray
    omega: np.ndarray
    tau_ext: np.ndarray

    @classmethod
    def at_rest(cls, theta, dof: int = DOF) -> "JointState":
        theta = np.array(np.broadcast_to(np.asarray(theta, dtype=float), (dof,)))
        return cls(theta, np.zeros(dof), np.zeros(dof))

    def copy(self) -> "JointState":
        return JointState(self.theta.copy(), self.omega.copy(), self.tau_ext.copy())


def _per_joint(value, dof: int) -> np.ndarray:
    return np.array(np.broadcast_to(np.asarray(value, dtype=float), (dof,)))


_ARM_DEFAULTS = {
    "inertia": np.array([0.1, 0.1, 0.1, 0.1, 0.05, 0.02, 0.02, 0.01]),
    "viscosity": np.array([0.05, 0.05, 0.05, 0.05, 0.03, 0.03, 0.03, 0.01]),
    "gravity": np.array([0.0, 0.6, 0.0, 0.3, 0.0, 0.1, 0.0, 0.0]),
}


@dataclass
class PlantParams:
    """Nominal per-joint parameters; the controller uses the same values."""

    dof: int = DOF
    inertia: np.ndarray = None
    viscosity: np.ndarray = None
    gravity: np.ndarray = None
    dt: float = 0.002

    def __post_init__(self):
        if self.dof < 1:
            raise ValueError("dof must be >= 1")
        # the 8-joint arm defaults; other joint counts default to a plain arm link
        for name, arm in (("inertia", 0.1), ("viscosity", 0.05), ("gravity", 0.0)):
            if getattr(self, name) is None:
                setattr(self, name, _ARM_DEFAULTS[name] if self.dof == DOF else arm)
        self.inertia = _per_joint(self.inertia, self.dof)
        self.viscosity = _per_joint(self.viscosity, self.dof)
        self.gravity = _per_joint(self.gravity, self.dof)
        if np.any(self.inertia <= 0):
            raise ValueError("inertia must be positive on every joint")
        if np.any(self.viscosity < 0):
            raise ValueError("viscosity must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def gravity_torque(self, theta: np.ndarray) -> np.ndarray:
        return self.gravity * np.cos(theta)


@dataclass(frozen=True)
class ContactModel:
    """Spring-damper contact acting on a single joint.

    ``grasp-spring`` engages when the joint closes below ``engage_angle`` (an
    object between the fingers); ``surface-spring`` engages when the joint
    presses beyond it (a pen tip on a board). The torque is unilateral: it
    pushes the joint back out of the object and never pulls.
    """

    kind: str = "none"
    stiffness: float = 0.0
    damping: float = 0.0
    engage_angle: float = 0.0
    crush_torque: float = np.inf
    slip_torque: float = 0.0
    joint: int = GRIPPER

    def __post_init__(self):
        if self.kind not in CONTACT_KINDS:
            raise ValueError(f"unknown contact kind {self.kind!r}")
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError("stiffness and damping must be non-negative")
        if not self.crush_torque > self.slip_torque >= 0:
            raise ValueError("need crush_torque > slip_torque >= 0")

    def with_(self, **changes) -> "ContactModel":
        return replace(self, **changes)

    def engaged(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "grasp-spring":
            return theta < self.engage_angle
        if self.kind == "surface-spring":
            return theta > self.engage_angle
        return np.zeros(theta.shape, dtype=bool)


NO_CONTACT = ContactModel()


def contact_scalar(theta: float, omega: float, contact: ContactModel) -> float:
    """Contact torque on the designated joint for scalar angle/velocity."""
    if contact.kind == "none" or not contact.engaged(theta):
        return 0.0
    tau = -contact.stiffness * (theta - contact.engage_angle) - contact.damping * omega
    if contact.kind == "grasp-spring":
        return max(tau, 0.0)
    return min(tau, 0.0)


def contact_torque(theta, omega, contact: ContactModel) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    if contact.kind != "none":
        j = contact.joint
        out[j] = contact_scalar(float(theta[j]), float(np.asarray(omega)[j]), contact)
    return out


def step_plant(state: JointState, tau_cmd, params: PlantParams,
               contact: ContactModel = NO_CONTACT, tau_dist=None) -> JointState:
    """Advance one fixed step.

    ``tau_dist`` is an additional torque applied to the plant but not seen by
    the controller's reference (operator hand, injected disturbance).
    """
    tau = np.asarray(tau_cmd, dtype=float)
    if tau_dist is not None:
        tau = tau + tau_dist
    acc = (tau - params.viscosity * state.omega - params.gravity_torque(state.theta)
           + state.tau_ext) / params.inertia
    omega = state.omega + params.dt * acc
    theta = state.theta + params.dt * omega
    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(theta))):
        bad = int(np.flatnonzero(~(np.isfinite(omega) & np.isfinite(theta)))[0])
        raise IntegrationDivergence(bad)
    return JointState(theta, omega, contact_torque(theta, omega, contact))


def kinetic_energy(state: JointState, params: PlantParams) -> float:
    return float(0.5 * np.sum(params.inertia * state.omega ** 2))
