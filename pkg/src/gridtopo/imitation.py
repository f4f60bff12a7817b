"""Supervised pretraining from exhaustive one-step simulation.

Each visited state yields one sample: the observation paired with a label
vector holding the simulated one-step reward of every action (illegal
actions get -1, the game-over reward). The rollout itself follows the
greedy-by-label action so the recorded states reflect controlled
operation rather than drift.

The training loss is a weighted MSE: positions are ranked by the label
vector in descending order, the top ``head_count`` get weight
``head_weight`` (spread uniformly), the rest share ``tail_weight``. This
makes the network sensitive to the score peaks that matter for action
selection.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .actions import ActionSpace, is_legal
from .nn import NetworkParams, adam_init, adam_step, backward, forward, forward_cached

log = logging.getLogger(__name__)

MAGIC = b"GTIM"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class ImitationSample:
    state: np.ndarray
    labels: np.ndarray


@dataclass
class ImitationDataset:
    states: np.ndarray          # (n, state_dim)
    labels: np.ndarray          # (n, n_actions)
    manifest_hash: str = ""

    def __len__(self) -> int:
        return self.states.shape[0]

    def sample(self, i: int) -> ImitationSample:
        return ImitationSample(self.states[i], self.labels[i])


def action_labels(env, space: ActionSpace) -> np.ndarray:
    """Simulated one-step reward per action; -1 where illegal."""
    out = np.full(len(space), -1.0)
    for ai, action in enumerate(space):
        if is_legal(env, action).legal:
            out[ai] = env.simulate(action).reward
    return out


def generate_dataset(env_factory, chronics, steps_per_scenario: int,
                     space: ActionSpace, follow_expert: bool = True) -> ImitationDataset:
    """Roll scenarios under the greedy-by-label policy, recording full labels.

    Scenarios that fail at reset are skipped with a warning; a scenario
    ending early (game over) contributes the samples gathered so far.
    """
    states, labels = [], []
    for chronic in chronics:
        env = env_factory()
        try:
            obs = env.reset(chronic)
        except Exception as exc:            # unusable scenario: report, move on
            log.warning("skipping scenario %s: %s", getattr(chronic, "name", "?"), exc)
            continue
        for _ in range(steps_per_scenario):
            if env.done:
                break
            row = action_labels(env, space)
            states.append(obs.copy())
            labels.append(row)
            act_idx = int(np.argmax(row)) if follow_expert else 0
            result = env.step(space[act_idx])
            obs = result.observation
    if not states:
        return ImitationDataset(np.zeros((0, 0)), np.zeros((0, len(space))),
                                space.manifest_hash())
    return ImitationDataset(np.array(states), np.array(labels), space.manifest_hash())


# ---------------------------------------------------------------------------
# Weighted MSE (head/tail split over the label-sorted positions)


def _check_split(n_actions: int, head_count: int, head_weight: float, tail_weight: float):
    if not (0.0 <= head_weight <= 1.0 and 0.0 <= tail_weight <= 1.0):
        raise ValueError("weights must lie in [0, 1]")
    if abs(head_weight + tail_weight - 1.0) > 1e-12:
        raise ValueError("head and tail weights must sum to 1")
    if not 1 <= head_count < n_actions:
        raise ValueError(f"head_count must be in [1, {n_actions})")


def _position_weights(labels: np.ndarray, head_count: int,
                      head_weight: float, tail_weight: float) -> np.ndarray:
    labels = np.atleast_2d(labels)
    n_actions = labels.shape[1]
    order = np.argsort(-labels, axis=1, kind="stable")
    weights = np.empty_like(labels, dtype=float)
    rows = np.arange(labels.shape[0])[:, None]
    weights[rows, order[:, :head_count]] = head_weight / head_count
    weights[rows, order[:, head_count:]] = tail_weight / (n_actions - head_count)
    return weights


def weighted_mse(pred: np.ndarray, labels: np.ndarray, head_count: int = 10,
                 head_weight: float = 0.7, tail_weight: float = 0.3) -> float:
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if pred.shape != labels.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {labels.shape}")
    _check_split(labels.shape[1], head_count, head_weight, tail_weight)
    w = _position_weights(labels, head_count, head_weight, tail_weight)
    return float(np.mean(np.sum(w * (pred - labels) ** 2, axis=1)))


def weighted_mse_grad(pred: np.ndarray, labels: np.ndarray, head_count: int,
                      head_weight: float, tail_weight: float) -> np.ndarray:
    """dL/dpred for the batch-mean weighted MSE."""
    w = _position_weights(labels, head_count, head_weight, tail_weight)
    return 2.0 * w * (pred - labels) / pred.shape[0]


# ---------------------------------------------------------------------------
# Pretraining


@dataclass
class PretrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    val_fraction: float = 0.1
    head_count: int = 10
    head_weight: float = 0.7
    tail_weight: float = 0.3
    seed: int = 0

    def to_dict(self):
        from dataclasses import asdict
        return asdict(self)

    @staticmethod
    def from_dict(d):
        return PretrainConfig(**d)


def _dataset_loss(params, states, labels, cfg: PretrainConfig) -> float:
    if len(states) == 0:
        return float("nan")
    pred = forward(params, states, "infer")
    return weighted_mse(pred, labels, cfg.head_count, cfg.head_weight, cfg.tail_weight)


def pretrain(params: NetworkParams, dataset: ImitationDataset,
             config: PretrainConfig | None = None):
    """Adam on the weighted MSE; returns (best-validation params, history).

    The split and the per-epoch shuffles come from one seeded stream, so
    two runs from identical inputs produce identical weights.
    """
    cfg = config or PretrainConfig()
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    n_val = int(round(n * cfg.val_fraction))
    val_idx = order[n - n_val:] if n_val else np.array([], dtype=np.intp)
    train_idx = order[:n - n_val]

    opt = adam_init(params, cfg.lr)
    history = []
    best_loss = float("inf")
    best = params.copy()
    for epoch in range(1, cfg.epochs + 1):
        epoch_order = rng.permutation(train_idx)
        for lo in range(0, len(epoch_order), cfg.batch_size):
            batch = epoch_order[lo:lo + cfg.batch_size]
            q, cache = forward_cached(params, dataset.states[batch], "train")
            dq = weighted_mse_grad(q, dataset.labels[batch], cfg.head_count,
                                   cfg.head_weight, cfg.tail_weight)
            grads = backward(params, cache, dq)
            adam_step(params, grads, opt)
        train_loss = _dataset_loss(params, dataset.states[train_idx],
                                   dataset.labels[train_idx], cfg)
        val_loss = (_dataset_loss(params, dataset.states[val_idx], dataset.labels[val_idx], cfg)
                    if n_val else train_loss)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < best_loss:
            best_loss = val_loss
            best = params.copy()
    return best, history


# ---------------------------------------------------------------------------
# Dataset file format


def save_dataset(dataset: ImitationDataset, path) -> None:
    header = json.dumps({
        "n_samples": int(len(dataset)),
        "state_dim": int(dataset.states.shape[1]),
        "n_actions": int(dataset.labels.shape[1]),
        "manifest_hash": dataset.manifest_hash,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(dataset.states, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<f8").tobytes())


def load_dataset(path, expect_manifest_hash: str | None = None) -> ImitationDataset:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DatasetFormatError(f"{path}: not an imitation dataset")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise DatasetFormatError(f"{path}: unsupported version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(hlen).decode())
        n, d, a = meta["n_samples"], meta["state_dim"], meta["n_actions"]
        states = np.frombuffer(fh.read(n * d * 8), dtype="<f8").reshape(n, d).copy()
        labels = np.frombuffer(fh.read(n * a * 8), dtype="<f8").reshape(n, a).copy()
    ds = ImitationDataset(states, labels, meta.get("manifest_hash", ""))
    if expect_manifest_hash is not None and ds.manifest_hash != expect_manifest_hash:
        raise DatasetFormatError("dataset was generated for a different action-space manifest")
    return ds


def export_sample_csv(dataset: ImitationDataset, index: int, path) -> None:
    s = dataset.sample(index)
    with open(path, "w") as fh:
        fh.write("kind,position,value\n")
        for i, v in enumerate(s.state):
            fh.write(f"state,{i},{v!r}\n")
        for i, v in enumerate(s.labels):
            fh.write(f"label,{i},{v!r}\n")
