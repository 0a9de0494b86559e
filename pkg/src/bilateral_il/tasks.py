"""Pick-and-place and pen-writing analogs, object suites, and success judges.

Judges are pure functions of an episode log and a task spec. A pick-and-place
trial succeeds when the gripper holds the object throughout the lift window
with a contact torque between the object's slip and crush thresholds. A
writing trial succeeds when the pen pressure stays inside the pressure band
for at least 95% of the stroke.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import GRIPPER
from .dataset import EpisodeLog
from .dynamics import ContactModel
from .operator import PEN_JOINT

FAILURE_MODES = ("none", "slip", "crush", "no_contact", "pressure_out_of_band")
WRITE_IN_BAND_FRACTION = 0.95
GRIP_TORQUE = 0.2
PEN_PRESSURE = 0.5
STIFFNESS_RANGE = (4.0, 300.0)  # N m/rad, tofu to wooden block
SIZE_RANGE = (0.30, 0.50)  # gripper engage angle, rad


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    contact: ContactModel
    duration: float = 4.0
    lift_window: tuple = (2.2, 3.2)
    force_band: tuple | None = None
    contact_band: tuple = (0.25, 0.9)
    stroke_window: tuple = (1.4, 3.3)
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("pick_place", "write"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        window = self.lift_window if self.kind == "pick_place" else self.stroke_window
        if not 0 <= window[0] < window[1] <= self.duration:
            raise ValueError(f"window {window} not inside [0, {self.duration}]")
        lo, hi = self.band
        if not lo < hi:
            raise ValueError("band must be non-degenerate")

    @property
    def band(self) -> tuple:
        if self.kind == "write":
            return tuple(self.contact_band)
        if self.force_band is not None:
            return tuple(self.force_band)
        return (self.contact.slip_torque, self.contact.crush_torque)


@dataclass
class TaskOutcome:
    success: bool
    failure_mode: str
    force_trace: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    in_band_fraction: float = float("nan")

    def __post_init__(self):
        if self.failure_mode not in FAILURE_MODES:
            raise ValueError(f"unknown failure mode {self.failure_mode!r}")
        if self.success != (self.failure_mode == "none"):
            raise ValueError("failure_mode must be 'none' exactly when successful")


def _window_mask(ep: EpisodeLog, window) -> np.ndarray:
    t0, t1 = window
    if t0 < ep.t[0] - 1e-12 or t1 > ep.t[-1] + ep.dt + 1e-12:
        raise ValueError(f"window {window} outside episode [{ep.t[0]}, {ep.t[-1] + ep.dt}]")
    return (ep.t >= t0) & (ep.t <= t1)


def _trace(ep: EpisodeLog) -> np.ndarray:
    return np.column_stack([ep.t, ep.contact])


def judge_pick_place(ep: EpisodeLog, spec: TaskSpec) -> TaskOutcome:
    c = spec.contact
    mask = _window_mask(ep, spec.lift_window)
    slip, crush = spec.band
    force = np.abs(ep.contact)
    theta = ep.block("follower", "theta")[:, c.joint]
    engaged = c.engaged(theta)
    if np.any(force > crush):
        mode = "crush"
    elif not engaged.any():
        mode = "no_contact"
    elif not np.all(engaged[mask] & (force[mask] >= slip)):
        mode = "slip"
    else:
        mode = "none"
    return TaskOutcome(mode == "none", mode, _trace(ep))


def judge_write(ep: EpisodeLog, spec: TaskSpec) -> TaskOutcome:
    mask = _window_mask(ep, spec.stroke_window)
    lo, hi = spec.band
    p = np.abs(ep.contact[mask])
    frac = float(np.mean((p >= lo) & (p <= hi))) if p.size else 0.0
    ok = frac >= WRITE_IN_BAND_FRACTION
    return TaskOutcome(ok, "none" if ok else "pressure_out_of_band", _trace(ep), frac)


def judge(ep: EpisodeLog, spec: TaskSpec) -> TaskOutcome:
    return judge_pick_place(ep, spec) if spec.kind == "pick_place" else judge_write(ep, spec)


# ------------------------------------------------------------- object suites

@dataclass(frozen=True)
class ObjectRanges:
    stiffness: tuple = STIFFNESS_RANGE
    size: tuple = SIZE_RANGE
    train_fraction: float = 0.4

    def central(self):
        """Training sub-ranges: the middle ``train_fraction`` of each range,
        taken in log space for stiffness."""
        lk = np.log(self.stiffness)
        mid, half = lk.mean(), 0.5 * self.train_fraction * (lk[1] - lk[0])
        k = (float(np.exp(mid - half)), float(np.exp(mid + half)))
        if half == 0:
            k = (float(self.stiffness[0]),) * 2
        s0, s1 = self.size
        smid, shalf = 0.5 * (s0 + s1), 0.5 * self.train_fraction * (s1 - s0)
        return k, (smid - shalf, smid + shalf)


def _make_object(k, size, ranges: ObjectRanges, rng, damping) -> ContactModel:
    lk = np.log(ranges.stiffness)
    u = 0.5 if lk[1] == lk[0] else (math.log(k) - lk[0]) / (lk[1] - lk[0])
    crush = (0.45 + 0.9 * u) * (1.0 + 0.1 * rng.uniform(-1, 1))
    slip = 0.06 + 0.04 * rng.uniform()
    return ContactModel("grasp-spring", float(k), damping, float(size), float(crush),
                        float(slip), GRIPPER)


def make_object_suite(n_train: int, n_test: int, stiffness_range=STIFFNESS_RANGE,
                      size_range=SIZE_RANGE, seed: int = 0, train_fraction: float = 0.4,
                      damping: float = 0.3):
    """Seeded train/test object lists.

    Training objects come from the central part of both ranges. Half of the
    test objects (rounded down) are new draws from that same central part;
    the rest lie outside it in stiffness or size and, when there are at least
    two of them, start with a soft fragile "tofu" extreme and a rigid "block"
    extreme.
    """
    for lo, hi in (stiffness_range, size_range):
        if not lo <= hi or lo <= 0:
            raise ValueError(f"invalid range ({lo}, {hi})")
    ranges = ObjectRanges(tuple(stiffness_range), tuple(size_range), train_fraction)
    rng = np.random.default_rng(seed)
    (k0, k1), (s0, s1) = ranges.central()

    def central():
        k = k0 if k0 == k1 else math.exp(rng.uniform(math.log(k0), math.log(k1)))
        return k, rng.uniform(s0, s1)

    def outer():
        # rejection sampling over the full ranges; gives up on degenerate ranges
        for _ in range(1000):
            k = math.exp(rng.uniform(*np.log(stiffness_range)))
            size = rng.uniform(*size_range)
            if not (k0 <= k <= k1 and s0 <= size <= s1):
                return k, size
        return central()

    train = [_make_object(*central(), ranges, rng, damping) for _ in range(n_train)]
    n_in = n_test // 2
    test = [_make_object(*central(), ranges, rng, damping) for _ in range(n_in)]
    n_out = n_test - n_in
    for i in range(n_out):
        if i < 2 and n_out >= 2:
            k = stiffness_range[i]
            test.append(_make_object(k, rng.uniform(*size_range), ranges, rng, damping))
        else:
            test.append(_make_object(*outer(), ranges, rng, damping))
    if stiffness_range[0] < stiffness_range[1] or size_range[0] < size_range[1]:
        seen = {(o.stiffness, o.engage_angle) for o in train}
        if any((o.stiffness, o.engage_angle) in seen for o in test):
            raise RuntimeError("test suite overlaps training suite")
    return train, test


def in_training_range(obj: ContactModel, stiffness_range=STIFFNESS_RANGE,
                      size_range=SIZE_RANGE, train_fraction: float = 0.4) -> bool:
    (k0, k1), (s0, s1) = ObjectRanges(tuple(stiffness_range), tuple(size_range),
                                      train_fraction).central()
    return k0 <= obj.stiffness <= k1 and s0 <= obj.engage_angle <= s1


def pick_place_spec(obj: ContactModel, label: str = "") -> TaskSpec:
    return TaskSpec("pick_place", obj, label=label)


# ------------------------------------------------------------------ writing

PEN_OFFSETS_CM = (4, 5, 6, 7, 8)
TRAIN_PEN_OFFSETS_CM = (4, 6, 8)


def pen_surface(offset_cm: float, stiffness: float = 150.0, damping: float = 3.0) -> ContactModel:
    """Board contact on the pressing joint; a longer pen meets the board earlier
    and is more compliant."""
    engage = 0.45 - 0.04 * (offset_cm - 6.0)
    k = stiffness * (6.0 / offset_cm) ** 2
    return ContactModel("surface-spring", k, damping, engage, math.inf, 0.0, PEN_JOINT)


def write_spec(offset_cm: float) -> TaskSpec:
    return TaskSpec("write", pen_surface(offset_cm), label=f"{offset_cm:g}cm")


def tip_trajectory(ep: EpisodeLog, links=(0.30, 0.25), joints=(0, 2)) -> np.ndarray:
    """Planar pen-tip path from two stroke joints: columns t, x, y, pen_down."""
    th = ep.block("follower", "theta")
    a, b = th[:, joints[0]], th[:, joints[1]]
    x = links[0] * np.cos(a) + links[1] * np.cos(a + b)
    y = links[0] * np.sin(a) + links[1] * np.sin(a + b)
    return np.column_stack([ep.t, x, y, (np.abs(ep.contact) > 0).astype(float)])
