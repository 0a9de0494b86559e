"""Episode logs, their CSV form, and the 500 Hz -> 25 Hz training pipeline.

Pipeline per episode: causal low-pass on every channel at the log rate, then
stride-20 decimation where each of the 20 phase offsets becomes its own
sequence. Inputs at 25 Hz step ``t`` are the follower responses; targets are
the logged command values of both robots at step ``t + 1``. Normalization is a
channel-wise z-score fitted on the training split only; Gaussian input noise
(variance 0.01) is drawn fresh for every training batch.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import DOF

CSV_MAGIC = "# bilateral-il-episode"
CSV_VERSION = 1
STRIDE = 20
LOWPASS_HZ = 10.0
NOISE_VARIANCE = 0.01
STD_FLOOR = 1e-8
N_IN = 3 * DOF
N_OUT = 6 * DOF

_BLOCKS = ("theta", "omega", "tau")


class SchemaError(ValueError):
    """Malformed episode file; the message names the file and line."""


@dataclass
class EpisodeLog:
    dt: float
    t: np.ndarray
    leader: np.ndarray  # (n, 3*dof): theta, omega_hat, tau_res_hat
    follower: np.ndarray  # (n, 3*dof)
    leader_cmd: np.ndarray  # (n, 3*dof): theta_cmd, omega_cmd, tau_cmd
    follower_cmd: np.ndarray  # (n, 3*dof)
    contact: np.ndarray  # (n,) follower contact torque on the contact joint
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name in ("leader", "follower", "leader_cmd", "follower_cmd"):
            arr = getattr(self, name)
            if arr.shape != (n, self.leader.shape[1]):
                raise ValueError(f"channel {name} has shape {arr.shape}, expected "
                                 f"({n}, {self.leader.shape[1]})")
        if self.contact.shape != (n,):
            raise ValueError("contact channel length mismatch")
        if n > 1 and not np.allclose(np.diff(self.t), self.dt, rtol=0, atol=1e-9):
            raise ValueError("episode time base is not uniform")

    def __len__(self):
        return len(self.t)

    @property
    def dof(self) -> int:
        return self.leader.shape[1] // 3

    @property
    def duration(self) -> float:
        return len(self.t) * self.dt

    def block(self, robot: str, name: str) -> np.ndarray:
        k = _BLOCKS.index(name)
        arr = getattr(self, robot)
        return arr[:, k * self.dof:(k + 1) * self.dof]

    def inputs(self) -> np.ndarray:
        return self.follower

    def targets(self) -> np.ndarray:
        return np.hstack([self.leader_cmd, self.follower_cmd])


class EpisodeRecorder:
    """Preallocated per-tick buffers turned into an ``EpisodeLog``."""

    def __init__(self, n: int, dt: float, dof: int = DOF, meta=None):
        self.n, self.dt, self.i = n, dt, 0
        w = 3 * dof
        self.t = np.arange(n) * dt
        self.leader = np.zeros((n, w))
        self.follower = np.zeros((n, w))
        self.leader_cmd = np.zeros((n, w))
        self.follower_cmd = np.zeros((n, w))
        self.contact = np.zeros(n)
        self.meta = dict(meta or {})

    def record(self, leader, follower, leader_cmd, follower_cmd, contact):
        i = self.i
        self.leader[i] = leader
        self.follower[i] = follower
        self.leader_cmd[i] = leader_cmd
        self.follower_cmd[i] = follower_cmd
        self.contact[i] = contact
        self.i += 1

    def finish(self) -> EpisodeLog:
        k = self.i
        return EpisodeLog(self.dt, self.t[:k].copy(), self.leader[:k], self.follower[:k],
                          self.leader_cmd[:k], self.follower_cmd[:k], self.contact[:k],
                          self.meta)


# --------------------------------------------------------------------- CSV

def csv_columns(dof: int = DOF) -> list[str]:
    cols = ["t"]
    for group in ("leader", "follower", "leader_cmd", "follower_cmd"):
        for b in _BLOCKS:
            cols += [f"{group}.{b}{j}" for j in range(dof)]
    cols.append("contact")
    return cols


def _fmt(x: float) -> str:
    return repr(float(x))


def write_episode_csv(ep: EpisodeLog, path) -> None:
    """Header: magic+version line, ``# meta`` JSON line, column names, rows.

    Floats are written with ``repr`` so a read-back is bit-exact.
    """
    buf = io.StringIO()
    buf.write(f"{CSV_MAGIC} v{CSV_VERSION} dt={_fmt(ep.dt)} dof={ep.dof}\n")
    buf.write("# meta " + json.dumps(ep.meta, sort_keys=True) + "\n")
    buf.write(",".join(csv_columns(ep.dof)) + "\n")
    data = np.hstack([ep.t[:, None], ep.leader, ep.follower, ep.leader_cmd,
                      ep.follower_cmd, ep.contact[:, None]])
    for row in data:
        buf.write(",".join(map(_fmt, row)) + "\n")
    Path(path).write_text(buf.getvalue())


def read_episode_csv(path) -> EpisodeLog:
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(CSV_MAGIC):
        raise SchemaError(f"{path}:1: missing '{CSV_MAGIC}' header")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[3:] if "=" in tok)
    version = lines[0].split()[2] if len(lines[0].split()) > 2 else ""
    if version != f"v{CSV_VERSION}":
        raise SchemaError(f"{path}:1: unsupported schema version {version!r}")
    try:
        dt, dof = float(fields["dt"]), int(fields["dof"])
    except (KeyError, ValueError):
        raise SchemaError(f"{path}:1: header must carry dt= and dof=") from None
    if len(lines) < 3 or not lines[1].startswith("# meta "):
        raise SchemaError(f"{path}:2: missing '# meta' line")
    try:
        meta = json.loads(lines[1][len("# meta "):])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:2: bad meta JSON ({exc})") from None
    cols = csv_columns(dof)
    if lines[2].split(",") != cols:
        raise SchemaError(f"{path}:3: column header does not match schema v{CSV_VERSION}")
    rows = []
    for lineno, line in enumerate(lines[3:], start=4):
        parts = line.split(",")
        if len(parts) != len(cols):
            raise SchemaError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: non-numeric field") from None
    data = np.array(rows, dtype=float).reshape(-1, len(cols))
    w = 3 * dof
    sl = [slice(1 + k * w, 1 + (k + 1) * w) for k in range(4)]
    return EpisodeLog(dt, data[:, 0], data[:, sl[0]], data[:, sl[1]], data[:, sl[2]],
                      data[:, sl[3]], data[:, -1], meta)


def write_trace_csv(path, header: list[str], columns) -> None:
    """Plain delimited trace (time series for plotting)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------- manifest

def write_manifest(path, entries: list[dict], extra: dict | None = None) -> None:
    doc = {"version": 1, "episodes": entries}
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} not found")
    doc = json.loads(path.read_text())
    if doc.get("version") != 1 or "episodes" not in doc:
        raise SchemaError(f"{path}:1: not a version-1 episode manifest")
    return doc


# ---------------------------------------------------------------- pipeline

def decimate(x, stride: int = STRIDE) -> list[np.ndarray]:
    """Phase-offset subsequences: subsequence ``p`` holds rows ``p, p+stride, ...``."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x = np.asarray(x)
    if len(x) < stride:
        raise ValueError(f"sequence of length {len(x)} shorter than stride {stride}")
    return [x[p::stride] for p in range(stride)]


def interleave(parts: list[np.ndarray]) -> np.ndarray:
    """Inverse of ``decimate``."""
    stride = len(parts)
    n = sum(len(p) for p in parts)
    out = np.empty((n,) + parts[0].shape[1:], dtype=parts[0].dtype)
    for p, part in enumerate(parts):
        out[p::stride] = part
    return out


def lowpass_channels(x, cutoff_hz: float, dt: float) -> np.ndarray:
    """Causal backward-Euler first-order low-pass along axis 0.

    The state starts at the first sample, so a constant channel is unchanged.
    """
    c = 2 * math.pi * cutoff_hz * dt
    if not 0 < c < 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz invalid for dt={dt}: need 0 < 2*pi*f*dt < 2")
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    a = 1.0 / (1.0 + c)
    y = x[0].copy()
    for i in range(len(x)):
        y = a * (y + c * x[i])
        out[i] = y
    return out


@dataclass
class SequenceSample:
    inputs: np.ndarray  # (T, 24)
    targets: np.ndarray  # (T, 48)
    phase: int = 0
    episode: str = ""


def make_sequences(ep: EpisodeLog, stride: int = STRIDE,
                   cutoff_hz: float | None = LOWPASS_HZ) -> list[SequenceSample]:
    """Filter, then decimate into ``stride`` phase-shifted input/target pairs."""
    x, y = ep.inputs(), ep.targets()
    if cutoff_hz:
        x = lowpass_channels(x, cutoff_hz, ep.dt)
        y = lowpass_channels(y, cutoff_hz, ep.dt)
    name = str(ep.meta.get("name", ""))
    out = []
    for p, (xs, ys) in enumerate(zip(decimate(x, stride), decimate(y, stride))):
        n = min(len(xs), len(ys))
        if n < 2:
            continue
        out.append(SequenceSample(xs[:n - 1].copy(), ys[1:n].copy(), p, name))
    return out


@dataclass
class NormStats:
    mean_in: np.ndarray
    std_in: np.ndarray
    mean_out: np.ndarray
    std_out: np.ndarray

    def norm_in(self, x):
        return (x - self.mean_in) / self.std_in

    def norm_out(self, y):
        return (y - self.mean_out) / self.std_out

    def denorm_in(self, x):
        return x * self.std_in + self.mean_in

    def denorm_out(self, y):
        return y * self.std_out + self.mean_out

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("mean_in", "std_in", "mean_out", "std_out")}

    @classmethod
    def from_dict(cls, d) -> "NormStats":
        return cls(*(np.asarray(d[k], dtype=float)
                     for k in ("mean_in", "std_in", "mean_out", "std_out")))


def fit_normalizer(samples: list[SequenceSample], floor: float = STD_FLOOR) -> NormStats:
    if not samples:
        raise ValueError("cannot fit normalization on an empty corpus")
    x = np.concatenate([s.inputs for s in samples])
    y = np.concatenate([s.targets for s in samples])
    return NormStats(x.mean(0), np.maximum(x.std(0), floor),
                     y.mean(0), np.maximum(y.std(0), floor))


def apply_normalizer(sample: SequenceSample, stats: NormStats) -> SequenceSample:
    return SequenceSample(stats.norm_in(sample.inputs), stats.norm_out(sample.targets),
                          sample.phase, sample.episode)


def denormalize(sample: SequenceSample, stats: NormStats) -> SequenceSample:
    return SequenceSample(stats.denorm_in(sample.inputs), stats.denorm_out(sample.targets),
                          sample.phase, sample.episode)


def add_input_noise(inputs, rng, variance: float = NOISE_VARIANCE) -> np.ndarray:
    """Gaussian noise on inputs; ``rng`` is a seed or a ``numpy`` Generator."""
    inputs = np.asarray(inputs, dtype=float)
    if variance == 0:
        return inputs.copy()
    rng = np.random.default_rng(rng)
    return inputs + rng.normal(0.0, math.sqrt(variance), size=inputs.shape)


def augment_sample(sample: SequenceSample, seed, variance: float = NOISE_VARIANCE):
    return SequenceSample(add_input_noise(sample.inputs, seed, variance), sample.targets,
                          sample.phase, sample.episode)


# ---------------------------------------------------------- dataset artifact

@dataclass
class Dataset:
    train: list[SequenceSample]
    validation: list[SequenceSample]
    stats: NormStats
    info: dict = field(default_factory=dict)

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for split in ("train", "validation"):
            items = getattr(self, split)
            if items:
                x = np.stack([s.inputs for s in items])
                y = np.stack([s.targets for s in items])
            else:
                x = np.zeros((0, 0, N_IN))
                y = np.zeros((0, 0, N_OUT))
            np.save(path / f"{split}_inputs.npy", x)
            np.save(path / f"{split}_targets.npy", y)
            (path / f"{split}_index.json").write_text(json.dumps(
                [[s.episode, s.phase] for s in items]) + "\n")
        (path / "norm_stats.json").write_text(json.dumps(self.stats.to_dict()) + "\n")
        (path / "dataset.json").write_text(json.dumps(self.info, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        if not (path / "dataset.json").exists():
            raise FileNotFoundError(f"no dataset artifact at {path}")
        splits = {}
        for split in ("train", "validation"):
            x = np.load(path / f"{split}_inputs.npy")
            y = np.load(path / f"{split}_targets.npy")
            index = json.loads((path / f"{split}_index.json").read_text())
            splits[split] = [SequenceSample(x[i], y[i], int(ph), ep)
                             for i, (ep, ph) in enumerate(index)]
        stats = NormStats.from_dict(json.loads((path / "norm_stats.json").read_text()))
        info = json.loads((path / "dataset.json").read_text())
        return cls(splits["train"], splits["validation"], stats, info)


def build_dataset(episodes: list[tuple[EpisodeLog, str]], stride: int = STRIDE,
                  cutoff_hz: float | None = LOWPASS_HZ) -> Dataset:
    """``episodes`` pairs each log with its split (``train``/``validation``).

    Returned samples are normalized; statistics come from the train split.
    """
    raw = {"train": [], "validation": []}
    for ep, split in episodes:
        if split not in raw:
            raise ValueError(f"unknown split {split!r}")
        raw[split].extend(make_sequences(ep, stride, cutoff_hz))
    stats = fit_normalizer(raw["train"])
    info = {"stride": stride, "lowpass_hz": cutoff_hz, "episodes": len(episodes),
            "sequences": len(raw["train"]) + len(raw["validation"]),
            "train_sequences": len(raw["train"]),
            "validation_sequences": len(raw["validation"])}
    return Dataset([apply_normalizer(s, stats) for s in raw["train"]],
                   [apply_normalizer(s, stats) for s in raw["validation"]], stats, info)
