"""Dueling Q-network built from first principles on numpy.

One fixed topology: input batch-norm, a rectifier trunk, then a scalar
state-value stream and an action-advantage stream combined as
Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a'). Forward, exact reverse-mode
gradients, Adam, and the versioned weight file all live here; there is no
autograd underneath.

Batch statistics: train mode normalizes with the batch mean/variance
(biased) and folds them into the running estimates; a batch of one falls
back to the running statistics so single-sample training stays usable.
Inference mode reads the running statistics only and never mutates them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

MAGIC = b"GTQW"
FORMAT_VERSION = 1


class WeightFormatError(ValueError):
    pass


class IncompatibleNetworkError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    n_actions: int
    trunk: tuple[int, ...] = (512, 256)
    head: int = 128
    seed: int = 0
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5

    def __post_init__(self):
        sizes = (self.input_dim, self.n_actions, self.head, *self.trunk)
        if any(s < 1 for s in sizes):
            raise ValueError("all layer sizes must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk"] = list(self.trunk)
        return d

    @staticmethod
    def from_dict(d: dict) -> "NetConfig":
        d = dict(d)
        d["trunk"] = tuple(d["trunk"])
        return NetConfig(**d)


class NetworkParams:
    """All weights plus batch-norm running statistics for one NetConfig."""

    def __init__(self, config: NetConfig, manifest_hash: str = ""):
        self.config = config
        self.manifest_hash = manifest_hash
        rng = np.random.default_rng(config.seed)

        def dense(n_in, n_out):
            bound = 1.0 / np.sqrt(n_in)
            return rng.uniform(-bound, bound, size=(n_in, n_out)), np.zeros(n_out)

        d = config.input_dim
        self.bn_scale = np.ones(d)
        self.bn_shift = np.zeros(d)
        self.bn_mean = np.zeros(d)
        self.bn_var = np.ones(d)

        self.trunk_w, self.trunk_b = [], []
        width = d
        for h in config.trunk:
            w, b = dense(width, h)
            self.trunk_w.append(w)
            self.trunk_b.append(b)
            width = h
        self.val_w, self.val_b = dense(width, config.head)
        self.val_out_w, self.val_out_b = dense(config.head, 1)
        self.adv_w, self.adv_b = dense(width, config.head)
        self.adv_out_w, self.adv_out_b = dense(config.head, config.n_actions)

    def trainable(self) -> list[tuple[str, np.ndarray]]:
        items = [("bn_scale", self.bn_scale), ("bn_shift", self.bn_shift)]
        for i, (w, b) in enumerate(zip(self.trunk_w, self.trunk_b)):
            items += [(f"trunk_w{i}", w), (f"trunk_b{i}", b)]
        items += [("val_w", self.val_w), ("val_b", self.val_b),
                  ("val_out_w", self.val_out_w), ("val_out_b", self.val_out_b),
                  ("adv_w", self.adv_w), ("adv_b", self.adv_b),
                  ("adv_out_w", self.adv_out_w), ("adv_out_b", self.adv_out_b)]
        return items

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return self.trainable() + [("bn_mean", self.bn_mean), ("bn_var", self.bn_var)]

    @property
    def n_parameters(self) -> int:
        return sum(a.size for _, a in self.trainable())

    def copy(self) -> "NetworkParams":
        other = NetworkParams(self.config, self.manifest_hash)
        copy_weights(self, other)
        return other


def compatible(a: NetConfig, b: NetConfig) -> bool:
    """Same shapes and normalization constants; the init seed may differ."""
    from dataclasses import replace
    return replace(a, seed=0) == replace(b, seed=0)


def copy_weights(source: NetworkParams, target: NetworkParams) -> NetworkParams:
    """Hard copy, running statistics included. Configs must match."""
    if not compatible(source.config, target.config):
        raise IncompatibleNetworkError("network configs differ")
    for (_, a), (_, b) in zip(source.arrays(), target.arrays()):
        np.copyto(b, a)
    target.manifest_hash = source.manifest_hash
    return target


def _relu(x):
    return np.maximum(x, 0.0)


def forward(params: NetworkParams, states: np.ndarray, mode: str = "infer") -> np.ndarray:
    """Q-matrix (batch, n_actions). Train mode folds batch statistics into
    the running estimates; infer mode is a pure function of the inputs."""
    q, _ = forward_cached(params, states, mode)
    return q


def forward_cached(params: NetworkParams, states: np.ndarray, mode: str):
    cfg = params.config
    x = np.atleast_2d(np.asarray(states, dtype=float))
    if x.shape[1] != cfg.input_dim:
        raise ValueError(f"state width {x.shape[1]} != input_dim {cfg.input_dim}")
    batch = x.shape[0]

    if mode == "train" and batch > 1:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        m = cfg.bn_momentum
        params.bn_mean[:] = m * params.bn_mean + (1.0 - m) * mean
        params.bn_var[:] = m * params.bn_var + (1.0 - m) * var
    else:
        mean = params.bn_mean
        var = params.bn_var
        if mode == "train":
            m = cfg.bn_momentum
            params.bn_mean[:] = m * params.bn_mean + (1.0 - m) * x.mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + cfg.bn_eps)
    xhat = (x - mean) * inv_std
    h = xhat * params.bn_scale + params.bn_shift

    trunk_in, trunk_pre = [], []
    for w, b in zip(params.trunk_w, params.trunk_b):
        trunk_in.append(h)
        z = h @ w + b
        trunk_pre.append(z)
        h = _relu(z)

    val_pre = h @ params.val_w + params.val_b
    val_h = _relu(val_pre)
    v = val_h @ params.val_out_w + params.val_out_b          # (batch, 1)
    adv_pre = h @ params.adv_w + params.adv_b
    adv_h = _relu(adv_pre)
    a = adv_h @ params.adv_out_w + params.adv_out_b          # (batch, n_actions)
    q = v + a - a.mean(axis=1, keepdims=True)

    cache = dict(x=x, xhat=xhat, inv_std=inv_std, batch_stats=(mode == "train" and batch > 1),
                 trunk_in=trunk_in, trunk_pre=trunk_pre, h=h,
                 val_pre=val_pre, val_h=val_h, adv_pre=adv_pre, adv_h=adv_h)
    return q, cache


def backward(params: NetworkParams, cache: dict, dq: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with dL/dQ = ``dq``, for every trainable array."""
    grads: dict[str, np.ndarray] = {}
    n_actions = params.config.n_actions

    dv = dq.sum(axis=1, keepdims=True)
    da = dq - dq.sum(axis=1, keepdims=True) / n_actions

    grads["adv_out_w"] = cache["adv_h"].T @ da
    grads["adv_out_b"] = da.sum(axis=0)
    dadv_h = da @ params.adv_out_w.T
    dadv_pre = dadv_h * (cache["adv_pre"] > 0)
    grads["adv_w"] = cache["h"].T @ dadv_pre
    grads["adv_b"] = dadv_pre.sum(axis=0)

    grads["val_out_w"] = cache["val_h"].T @ dv
    grads["val_out_b"] = dv.sum(axis=0)
    dval_h = dv @ params.val_out_w.T
    dval_pre = dval_h * (cache["val_pre"] > 0)
    grads["val_w"] = cache["h"].T @ dval_pre
    grads["val_b"] = dval_pre.sum(axis=0)

    dh = dadv_pre @ params.adv_w.T + dval_pre @ params.val_w.T
    for i in reversed(range(len(params.trunk_w))):
        dz = dh * (cache["trunk_pre"][i] > 0)
        grads[f"trunk_w{i}"] = cache["trunk_in"][i].T @ dz
        grads[f"trunk_b{i}"] = dz.sum(axis=0)
        dh = dz @ params.trunk_w[i].T

    # Batch norm is the input layer, so the chain stops at scale/shift.
    xhat = cache["xhat"]
    grads["bn_scale"] = (dh * xhat).sum(axis=0)
    grads["bn_shift"] = dh.sum(axis=0)
    return grads


def td_loss_grad(params: NetworkParams, states: np.ndarray, action_idx: np.ndarray,
                 targets: np.ndarray, weights: np.ndarray | None = None):
    """Exact gradients of (1/B) sum_i w_i (y_i - Q(s_i, a_i))^2.

    Returns (loss, gradients, residuals); residuals are y - Q before the
    update, the usual priority signal.
    """
    action_idx = np.asarray(action_idx, dtype=np.intp)
    targets = np.asarray(targets, dtype=float)
    b = len(targets)
    w = np.ones(b) if weights is None else np.asarray(weights, dtype=float)

    q, cache = forward_cached(params, states, "train")
    taken = q[np.arange(b), action_idx]
    residual = targets - taken
    loss = float(np.mean(w * residual ** 2))

    dq = np.zeros_like(q)
    dq[np.arange(b), action_idx] = -2.0 * w * residual / b
    return loss, backward(params, cache, dq), residual


def grad(params: NetworkParams, states, action_idx, targets, weights=None) -> dict[str, np.ndarray]:
    return td_loss_grad(params, states, action_idx, targets, weights)[1]


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: NetworkParams, lr: float = 1e-3) -> OptimizerState:
    state = OptimizerState(lr=lr)
    for name, arr in params.trainable():
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(params: NetworkParams, grads: dict[str, np.ndarray],
              opt: OptimizerState) -> NetworkParams:
    """Bias-corrected Adam update, applied in place."""
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    for name, arr in params.trainable():
        g = grads[name]
        m = opt.m[name]
        v = opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        arr -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


def save(params: NetworkParams, path) -> None:
    """Versioned binary: magic, version, JSON header, float64 LE arrays in
    the order reported by ``arrays()``."""
    header = json.dumps({
        "config": params.config.to_dict(),
        "manifest_hash": params.manifest_hash,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load(path, expect_manifest_hash: str | None = None) -> NetworkParams:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise WeightFormatError(f"{path}: not a weight file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise WeightFormatError(f"{path}: unsupported format version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        config = NetConfig.from_dict(header["config"])
        params = NetworkParams(config, header.get("manifest_hash", ""))
        for _, arr in params.arrays():
            raw = fh.read(arr.size * 8)
            if len(raw) != arr.size * 8:
                raise WeightFormatError(f"{path}: truncated parameter data")
            np.copyto(arr, np.frombuffer(raw, dtype="<f8").reshape(arr.shape))
    if expect_manifest_hash is not None and params.manifest_hash != expect_manifest_hash:
        raise IncompatibleNetworkError(
            "weight file was trained against a different action-space manifest")
    return params
