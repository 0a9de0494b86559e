"""F2FL network: stacked LSTM with dropout and a linear head, in numpy.

Shapes follow ``(batch, time, features)``. Each LSTM layer uses the gate
order input, forget, cell, output with pre-activation
``z_t = x_t Wx + h_{t-1} Wh + b``. Inverted dropout is applied to the output
of every LSTM layer in training mode, so the pre-head activation has the same
expectation in both modes.

Checkpoint layout (little-endian)::

    8 bytes   magic b"F2FLCKPT"
    uint32    format version
    uint32    header length H
    H bytes   UTF-8 JSON header: dims, dropout, tensor names/shapes, metadata,
              flags for the normalization and optimizer blocks
    float64   each tensor, row-major, in header order
    float64   NormStats (mean_in, std_in, mean_out, std_out), when flagged
    float64   Adam first then second moments per tensor, when flagged
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import NOISE_VARIANCE, N_IN, N_OUT, NormStats, add_input_noise

MAGIC = b"F2FLCKPT"
FORMAT_VERSION = 1

PRESETS = {
    "desk": {"n_layers": 2, "hidden": 64, "epochs": 200},
    "paper": {"n_layers": 6, "hidden": 400, "epochs": 10000},
}


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class F2FLParams:
    n_layers: int
    hidden: int
    in_dim: int = N_IN
    out_dim: int = N_OUT
    dropout_p: float = 0.1
    tensors: dict = field(default_factory=dict)
    stats: NormStats | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, n_layers=2, hidden=64, in_dim=N_IN, out_dim=N_OUT, dropout_p=0.1,
             seed=0) -> "F2FLParams":
        """Uniform ``+-1/sqrt(fan_in)`` weights, forget-gate bias +1."""
        rng = np.random.default_rng(seed)
        tensors = {}
        d = in_dim
        for layer in range(n_layers):
            a = 1.0 / math.sqrt(d + hidden)
            tensors[f"l{layer}.Wx"] = rng.uniform(-a, a, (d, 4 * hidden))
            tensors[f"l{layer}.Wh"] = rng.uniform(-a, a, (hidden, 4 * hidden))
            b = np.zeros(4 * hidden)
            b[hidden:2 * hidden] = 1.0
            tensors[f"l{layer}.b"] = b
            d = hidden
        a = 1.0 / math.sqrt(hidden)
        tensors["head.W"] = rng.uniform(-a, a, (hidden, out_dim))
        tensors["head.b"] = np.zeros(out_dim)
        return cls(n_layers, hidden, in_dim, out_dim, dropout_p, tensors)

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def copy(self) -> "F2FLParams":
        return F2FLParams(self.n_layers, self.hidden, self.in_dim, self.out_dim,
                          self.dropout_p, {k: v.copy() for k, v in self.tensors.items()},
                          self.stats, dict(self.meta))

    def check(self) -> None:
        d = self.in_dim
        for layer in range(self.n_layers):
            if self.tensors[f"l{layer}.Wx"].shape != (d, 4 * self.hidden):
                raise ValueError(f"layer {layer} input weight has wrong shape")
            d = self.hidden
        if self.tensors["head.W"].shape != (self.hidden, self.out_dim):
            raise ValueError("head weight has wrong shape")
        for k, v in self.tensors.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite weights in {k}")


def _layer_forward(x, Wx, Wh, b, h0, c0):
    B, T, _ = x.shape
    H = Wh.shape[0]
    xw = x @ Wx + b
    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h, c = h0, c0
    for t in range(T):
        z = xw[:, t] + h @ Wh
        gt = gates[:, t]
        gt[:] = sigmoid(z)
        gt[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        c = gt[:, H:2 * H] * c + gt[:, :H] * gt[:, 2 * H:3 * H]
        h = gt[:, 3 * H:] * np.tanh(c)
        cs[:, t] = c
        hs[:, t] = h
    return hs, cs, gates


def forward(params: F2FLParams, x, train: bool = False, rng=None, state=None):
    """Run the network over a sequence.

    ``x`` is ``(T, in)`` or ``(B, T, in)``. ``rng`` (seed or Generator) draws
    the dropout masks in training mode. ``state`` is an optional list of
    per-layer ``(h, c)``. Returns ``(y, cache)``; ``cache["state"]`` holds the
    final per-layer state.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.in_dim}")
    B = x.shape[0]
    H = params.hidden
    p = params.dropout_p
    if train and p > 0:
        rng = np.random.default_rng(rng)
    if state is None:
        state = [(np.zeros((B, H)), np.zeros((B, H))) for _ in range(params.n_layers)]
    cache = {"x": x, "layers": [], "train": train, "squeeze": squeeze}
    inp = x
    final = []
    for layer in range(params.n_layers):
        tp = params.tensors
        h0, c0 = state[layer]
        hs, cs, gates = _layer_forward(inp, tp[f"l{layer}.Wx"], tp[f"l{layer}.Wh"],
                                       tp[f"l{layer}.b"], h0, c0)
        final.append((hs[:, -1].copy(), cs[:, -1].copy()))
        mask = None
        out = hs
        if train and p > 0:
            mask = (rng.random(hs.shape) >= p) / (1.0 - p)
            out = hs * mask
        cache["layers"].append({"inp": inp, "h0": h0, "c0": c0, "hs": hs, "cs": cs,
                                "gates": gates, "mask": mask})
        inp = out
    cache["pre_head"] = inp
    y = inp @ params.tensors["head.W"] + params.tensors["head.b"]
    cache["state"] = final
    return (y[0] if squeeze else y), cache


def loss(outputs, targets) -> float:
    outputs, targets = np.asarray(outputs), np.asarray(targets)
    if outputs.shape != targets.shape:
        raise ValueError(f"shape mismatch {outputs.shape} vs {targets.shape}")
    return float(np.mean((outputs - targets) ** 2))


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def backward(params: F2FLParams, cache, targets) -> tuple[float, dict]:
    """MSE loss and gradients of every tensor by backpropagation through time."""
    if not cache or "pre_head" not in cache:
        raise ValueError("backward needs the cache of a forward pass")
    targets = np.asarray(targets, dtype=float)
    if cache["squeeze"]:
        targets = targets[None]
    tp = params.tensors
    ph = cache["pre_head"]
    y = ph @ tp["head.W"] + tp["head.b"]
    if y.shape != targets.shape:
        raise ValueError(f"targets shape {targets.shape} does not match outputs {y.shape}")
    diff = y - targets
    value = float(np.mean(diff ** 2))
    dy = 2.0 * diff / diff.size
    H = params.hidden
    grads = {"head.W": _flat(ph).T @ _flat(dy), "head.b": dy.sum(axis=(0, 1))}
    dout = dy @ tp["head.W"].T
    for layer in reversed(range(params.n_layers)):
        lc = cache["layers"][layer]
        if lc["mask"] is not None:
            dout = dout * lc["mask"]
        gates, cs, hs = lc["gates"], lc["cs"], lc["hs"]
        Wh = tp[f"l{layer}.Wh"]
        B, T, _ = hs.shape
        i, f = gates[..., :H], gates[..., H:2 * H]
        g, o = gates[..., 2 * H:3 * H], gates[..., 3 * H:]
        c_prev = np.concatenate([lc["c0"][:, None], cs[:, :-1]], axis=1)
        tc = np.tanh(cs)
        # local derivatives of every gate pre-activation, scaled by dc later
        dc_gain = o * (1.0 - tc * tc)
        local = np.stack([g * i * (1.0 - i), c_prev * f * (1.0 - f), i * (1.0 - g * g)], axis=2)
        do_local = tc * o * (1.0 - o)
        dz = np.empty((B, T, 4, H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        WhT = Wh.T
        for t in reversed(range(T)):
            dh = dout[:, t] + dh_next
            dc = dh * dc_gain[:, t] + dc_next
            dz[:, t, :3] = dc[:, None] * local[:, t]
            dz[:, t, 3] = dh * do_local[:, t]
            dc_next = dc * f[:, t]
            dh_next = dz[:, t].reshape(B, 4 * H) @ WhT
        dz = dz.reshape(B, T, 4 * H)
        h_prev = np.concatenate([lc["h0"][:, None], hs[:, :-1]], axis=1)
        grads[f"l{layer}.Wx"] = _flat(lc["inp"]).T @ _flat(dz)
        grads[f"l{layer}.Wh"] = _flat(h_prev).T @ _flat(dz)
        grads[f"l{layer}.b"] = dz.sum(axis=(0, 1))
        dout = dz @ tp[f"l{layer}.Wx"].T
    return value, grads


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, tensors: dict, grads: dict) -> None:
        """In-place bias-corrected Adam update."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            if tensors[k].shape != g.shape:
                raise ValueError(f"gradient shape mismatch for {k}")
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            tensors[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(tensors: dict, grads: dict, state: Adam) -> dict:
    state.step(tensors, grads)
    return tensors


# ------------------------------------------------------------------ training

@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    truncation: int = 100
    noise_variance: float = NOISE_VARIANCE
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.truncation < 1:
            raise ValueError("truncation must be >= 1")


def _batch_loss_grads(params, x, y, rng, truncation):
    """Truncated BPTT: windows of ``truncation`` steps, state carried forward."""
    T = x.shape[1]
    total = params.zeros_like()
    state = None
    acc = 0.0
    for start in range(0, T, truncation):
        xs, ys = x[:, start:start + truncation], y[:, start:start + truncation]
        _, cache = forward(params, xs, train=True, rng=rng, state=state)
        value, grads = backward(params, cache, ys)
        w = xs.shape[1] / T
        acc += w * value
        for k in total:
            total[k] += w * grads[k]
        state = cache["state"]
    return acc, total


def evaluate(params: F2FLParams, samples) -> float:
    if not samples:
        return float("nan")
    x = np.stack([s.inputs for s in samples])
    y = np.stack([s.targets for s in samples])
    out, _ = forward(params, x, train=False)
    return loss(out, y)


def train(samples, config: TrainConfig, params: F2FLParams | None = None,
          validation=None, optimizer: Adam | None = None, start_epoch: int = 0,
          history: list | None = None, on_epoch=None):
    """Mini-batch Adam over normalized ``SequenceSample``s.

    Every epoch draws its shuffle, noise and dropout from a generator seeded by
    ``(seed, epoch)``, so resuming from a checkpoint at any epoch reproduces the
    uninterrupted run exactly. ``on_epoch(epoch, params, optimizer, history)``
    is called after each epoch. Returns ``(params, history, optimizer)``.
    """
    if not samples:
        raise ValueError("cannot train on an empty corpus")
    params = params or F2FLParams.init(seed=config.seed)
    optimizer = optimizer or Adam(config.lr, config.beta1, config.beta2, config.eps)
    history = list(history or [])
    x_all = np.stack([s.inputs for s in samples])
    y_all = np.stack([s.targets for s in samples])
    n = len(samples)
    for epoch in range(start_epoch, config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        total, count = 0.0, 0
        for b0 in range(0, n, config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            x = x_all[idx]
            if config.noise_variance > 0:
                x = add_input_noise(x, rng, config.noise_variance)
            value, grads = _batch_loss_grads(params, x, y_all[idx], rng, config.truncation)
            optimizer.step(params.tensors, grads)
            total += value * len(idx)
            count += len(idx)
        val = evaluate(params, validation) if validation else float("nan")
        history.append((epoch, total / count, val))
        if on_epoch is not None:
            on_epoch(epoch, params, optimizer, history)
    return params, history, optimizer


class StatefulPolicy:
    """One-step-at-a-time eval-mode inference carrying LSTM state."""

    def __init__(self, params: F2FLParams):
        if params.stats is None:
            raise ValueError("network has no normalization statistics attached")
        self.params = params
        self.reset()

    def reset(self) -> None:
        H = self.params.hidden
        self.state = [(np.zeros((1, H)), np.zeros((1, H))) for _ in range(self.params.n_layers)]

    def predict(self, response) -> np.ndarray:
        stats = self.params.stats
        x = stats.norm_in(np.asarray(response, dtype=float))[None, None]
        y, cache = forward(self.params, x, train=False, state=self.state)
        self.state = cache["state"]
        return stats.denorm_out(y[0, 0])


# --------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: F2FLParams, optimizer: Adam | None = None,
                    extra: dict | None = None) -> None:
    names = list(params.tensors)
    header = {
        "n_layers": params.n_layers, "hidden": params.hidden,
        "in_dim": params.in_dim, "out_dim": params.out_dim,
        "dropout_p": params.dropout_p,
        "tensors": [[k, list(params.tensors[k].shape)] for k in names],
        "has_stats": params.stats is not None,
        "has_optimizer": optimizer is not None and bool(optimizer.m),
        "meta": params.meta, "extra": extra or {},
    }
    if header["has_optimizer"]:
        header["optimizer"] = {"lr": optimizer.lr, "beta1": optimizer.beta1,
                               "beta2": optimizer.beta2, "eps": optimizer.eps,
                               "t": optimizer.t}
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob]
    for k in names:
        parts.append(np.ascontiguousarray(params.tensors[k], dtype="<f8").tobytes())
    if params.stats is not None:
        for a in (params.stats.mean_in, params.stats.std_in,
                  params.stats.mean_out, params.stats.std_out):
            parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    if header["has_optimizer"]:
        for k in names:
            parts.append(np.ascontiguousarray(optimizer.m[k], dtype="<f8").tobytes())
        for k in names:
            parts.append(np.ascontiguousarray(optimizer.v[k], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Returns ``(params, optimizer_or_None, extra)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not an F2FL checkpoint")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen])
    off = 16 + hlen

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        a = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
        return a

    tensors = {k: take(tuple(shape)) for k, shape in header["tensors"]}
    stats = None
    if header["has_stats"]:
        stats = NormStats(take((header["in_dim"],)), take((header["in_dim"],)),
                          take((header["out_dim"],)), take((header["out_dim"],)))
    params = F2FLParams(header["n_layers"], header["hidden"], header["in_dim"],
                        header["out_dim"], header["dropout_p"], tensors, stats,
                        header.get("meta", {}))
    params.check()
    optimizer = None
    if header["has_optimizer"]:
        o = header["optimizer"]
        optimizer = Adam(o["lr"], o["beta1"], o["beta2"], o["eps"])
        optimizer.t = o["t"]
        optimizer.m = {k: take(tuple(s)) for k, s in header["tensors"]}
        optimizer.v = {k: take(tuple(s)) for k, s in header["tensors"]}
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return params, optimizer, header.get("extra", {})
