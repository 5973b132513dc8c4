"""Desk-scale multi-exit network with manual backpropagation.

The network is a stack of shared blocks (affine d -> d followed by tanh)
with a classifier head (affine d -> C) after every block, so exit l depends
on blocks 1..l and heads share the backbone below them. Per-exit loss is
mean cross-entropy. Training strategies differ in how per-exit losses and
their gradients combine:

* sum: plain sum of all per-exit losses.
* weighted: exit l weighted by l / (1 + 2 + ... + L), so deeper exits
  dominate.
* ge (gradient equilibrium): gradients are those of the summed loss, but
  each shared block's parameter gradient is rescaled by 1 / (number of
  active exits at or above it), so overlapping losses do not inflate the
  gradient magnitude; exit-head gradients are never rescaled.
* grouped: exits are split into groups that each include the top exit;
  batches cycle through the groups and only the active group's losses
  contribute that step.
* two_stage: first train the top exit together with the backbone, then
  freeze the backbone and train only the internal heads.

Everything is plain numpy with full-precision float64 and a fixed-learning-
rate gradient descent loop; given the same seed and config, training is
deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ExitBenchError, TrainingDivergence, UnreadableFileError
from .exitsim import ExitOutputs, OutputsSet
from .metrics import CLASSIFICATION


@dataclass
class MultiExitNet:
    block_weights: list[np.ndarray]  # L arrays of shape (d, d)
    block_biases: list[np.ndarray]   # L arrays of shape (d,)
    head_weights: list[np.ndarray]   # L arrays of shape (d, C)
    head_biases: list[np.ndarray]    # L arrays of shape (C,)

    @property
    def num_blocks(self) -> int:
        return len(self.block_weights)

    @property
    def width(self) -> int:
        return self.block_weights[0].shape[0]

    @property
    def num_labels(self) -> int:
        return self.head_weights[0].shape[1]

    def copy(self) -> "MultiExitNet":
        return MultiExitNet(
            [w.copy() for w in self.block_weights],
            [b.copy() for b in self.block_biases],
            [w.copy() for w in self.head_weights],
            [b.copy() for b in self.head_biases],
        )


def init_network(num_blocks: int, width: int, num_labels: int, seed: int) -> MultiExitNet:
    """Deterministic init: weights ~ N(0, 1/sqrt(dim_in)), biases zero."""
    if min(num_blocks, width, num_labels) < 1:
        raise ExitBenchError(
            f"network dims must be >= 1, got L={num_blocks} d={width} C={num_labels}")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(width)
    block_weights = [rng.standard_normal((width, width)) * scale for _ in range(num_blocks)]
    block_biases = [np.zeros(width) for _ in range(num_blocks)]
    head_weights = [rng.standard_normal((width, num_labels)) * scale for _ in range(num_blocks)]
    head_biases = [np.zeros(num_labels) for _ in range(num_blocks)]
    return MultiExitNet(block_weights, block_biases, head_weights, head_biases)


# ---------------------------------------------------------------------------
# Strategies

@dataclass(frozen=True)
class Sum:
    name = "sum"


@dataclass(frozen=True)
class GE:
    name = "ge"


@dataclass(frozen=True)
class Weighted:
    name = "weighted"


@dataclass(frozen=True)
class Grouped:
    groups: tuple[tuple[int, ...], ...]
    name = "grouped"


@dataclass(frozen=True)
class TwoStage:
    stage1_epochs: int
    stage2_epochs: int
    name = "two_stage"


TrainStrategy = Sum | GE | Weighted | Grouped | TwoStage


def validate_groups(groups, num_exits: int) -> tuple[tuple[int, ...], ...]:
    """Groups must each include the top exit and jointly cover 1..L."""
    if not groups:
        raise ExitBenchError("groups must be non-empty")
    normalized = []
    covered: set[int] = set()
    for g in groups:
        members = sorted(set(int(x) for x in g))
        if any(not 1 <= x <= num_exits for x in members):
            raise ExitBenchError(f"group {members} has exits outside 1..{num_exits}")
        if num_exits not in members:
            raise ExitBenchError(f"group {members} must include the top exit {num_exits}")
        covered.update(members)
        normalized.append(tuple(members))
    if covered != set(range(1, num_exits + 1)):
        raise ExitBenchError(f"groups must jointly cover 1..{num_exits}, got {sorted(covered)}")
    return tuple(normalized)


def strided_groups(num_exits: int, num_groups: int) -> tuple[tuple[int, ...], ...]:
    """Stride-G grouping with the top exit added to every group: for L=12,
    G=2 this is the odd/even split {1,3,..,11,12} / {2,4,..,10,12}; for
    L=24, G=3 the three stride-3 chains each ending in 24."""
    groups = []
    for g in range(1, num_groups + 1):
        members = set(range(g, num_exits + 1, num_groups))
        members.add(num_exits)
        groups.append(tuple(sorted(members)))
    return validate_groups(groups, num_exits)


def group_schedule(groups, step: int) -> tuple[int, ...]:
    """Cycle through groups batch by batch."""
    if not groups:
        raise ExitBenchError("groups must be non-empty")
    if step < 0:
        raise ExitBenchError(f"step must be >= 0, got {step}")
    return tuple(groups[step % len(groups)])


# ---------------------------------------------------------------------------
# Forward / backward

@dataclass
class ForwardCache:
    inputs: np.ndarray
    activations: list[np.ndarray]  # post-tanh output of each block
    logits: list[np.ndarray]


def forward_all_exits(net: MultiExitNet, batch: np.ndarray) -> tuple[list[np.ndarray], ForwardCache]:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.width:
        raise ExitBenchError(
            f"batch must have feature width {net.width}, got shape {batch.shape}")
    activations = []
    logits = []
    current = batch
    for l in range(net.num_blocks):
        current = np.tanh(current @ net.block_weights[l] + net.block_biases[l])
        activations.append(current)
        logits.append(current @ net.head_weights[l] + net.head_biases[l])
    return logits, ForwardCache(inputs=batch, activations=activations, logits=logits)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_exit_losses(logits: list[np.ndarray], golds: np.ndarray) -> np.ndarray:
    """Mean cross-entropy at every exit."""
    golds = np.asarray(golds)
    out = np.empty(len(logits))
    for l, s in enumerate(logits):
        logp = _log_softmax(s)
        out[l] = -logp[np.arange(len(golds)), golds].mean()
    return out


def objective_value(losses: np.ndarray, strategy: TrainStrategy, step: int = 0) -> float:
    """The scalar objective each strategy's gradients correspond to (per
    shared block, GE additionally rescales; see ``backward``)."""
    num_exits = len(losses)
    if isinstance(strategy, Weighted):
        weights = np.arange(1, num_exits + 1) / (num_exits * (num_exits + 1) / 2)
        return float((weights * losses).sum())
    if isinstance(strategy, Grouped):
        active = group_schedule(strategy.groups, step)
        return float(sum(losses[l - 1] for l in active))
    return float(losses.sum())


@dataclass
class GradientSet:
    block_weights: list[np.ndarray]
    block_biases: list[np.ndarray]
    head_weights: list[np.ndarray]
    head_biases: list[np.ndarray]


def _weighted_backward(net: MultiExitNet, cache: ForwardCache, golds: np.ndarray,
                       exit_weights: np.ndarray) -> GradientSet:
    """Gradients of sum_l exit_weights[l-1] * L_l, one sweep top to bottom."""
    golds = np.asarray(golds)
    batch_size = len(golds)
    if cache.inputs.shape[0] != batch_size:
        raise ExitBenchError(
            f"cache batch size {cache.inputs.shape[0]} != golds length {batch_size}")

    grads = GradientSet(
        block_weights=[np.zeros_like(w) for w in net.block_weights],
        block_biases=[np.zeros_like(b) for b in net.block_biases],
        head_weights=[np.zeros_like(w) for w in net.head_weights],
        head_biases=[np.zeros_like(b) for b in net.head_biases],
    )
    onehot = np.zeros((batch_size, net.num_labels))
    onehot[np.arange(batch_size), golds] = 1.0

    upstream = np.zeros((batch_size, net.width))
    for l in range(net.num_blocks, 0, -1):
        a = cache.activations[l - 1]
        if exit_weights[l - 1] != 0.0:
            probs = np.exp(_log_softmax(cache.logits[l - 1]))
            g_logits = exit_weights[l - 1] * (probs - onehot) / batch_size
            grads.head_weights[l - 1] = a.T @ g_logits
            grads.head_biases[l - 1] = g_logits.sum(axis=0)
            upstream = upstream + g_logits @ net.head_weights[l - 1].T
        dz = upstream * (1.0 - a * a)
        below = cache.activations[l - 2] if l >= 2 else cache.inputs
        grads.block_weights[l - 1] = below.T @ dz
        grads.block_biases[l - 1] = dz.sum(axis=0)
        upstream = dz @ net.block_weights[l - 1].T
    return grads


def _zero_one_weights(active, num_exits: int) -> np.ndarray:
    weights = np.zeros(num_exits)
    for l in active:
        weights[l - 1] = 1.0
    return weights


def backward(net: MultiExitNet, cache: ForwardCache, golds: np.ndarray,
             strategy: TrainStrategy, step: int = 0) -> GradientSet:
    """Analytic gradients of the strategy's objective.

    For ``Grouped`` the active group comes from ``group_schedule(groups,
    step)``. For ``GE`` each block's parameter gradient equals the summed-
    loss gradient scaled by 1/|{active exits at or above the block}|, with
    head gradients left unscaled.
    """
    num_exits = net.num_blocks
    if isinstance(strategy, TwoStage):
        raise ExitBenchError("two_stage resolves to per-stage objectives inside train()")
    if isinstance(strategy, Weighted):
        exit_weights = np.arange(1, num_exits + 1) / (num_exits * (num_exits + 1) / 2)
    elif isinstance(strategy, Grouped):
        exit_weights = _zero_one_weights(group_schedule(strategy.groups, step), num_exits)
    else:
        exit_weights = np.ones(num_exits)

    grads = _weighted_backward(net, cache, golds, exit_weights)

    if isinstance(strategy, GE):
        for l in range(1, num_exits + 1):
            grads.block_weights[l - 1] *= 1.0 / (num_exits - l + 1)
            grads.block_biases[l - 1] *= 1.0 / (num_exits - l + 1)
    return grads


# ---------------------------------------------------------------------------
# Synthetic data

@dataclass(frozen=True)
class SyntheticDataset:
    seed: int
    dim: int
    num_classes: int
    separation: float
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def make_synthetic(seed: int, n_samples: int, dim: int, num_classes: int,
                   separation: float = 4.0, train_fraction: float = 0.8) -> SyntheticDataset:
    """Gaussian clusters on scaled axis directions; byte-identical per (seed,
    N, d, C, separation)."""
    if num_classes > 2 * dim:
        raise ExitBenchError(f"{num_classes} classes need dim >= {num_classes / 2:.0f}")
    rng = np.random.default_rng(seed)
    centers = np.zeros((num_classes, dim))
    for c in range(num_classes):
        axis = c % dim
        sign = 1.0 if c < dim else -1.0
        centers[c, axis] = sign * separation
    labels = rng.integers(0, num_classes, size=n_samples)
    points = centers[labels] + rng.standard_normal((n_samples, dim))
    split = int(n_samples * train_fraction)
    return SyntheticDataset(
        seed=seed, dim=dim, num_classes=num_classes, separation=separation,
        x_train=points[:split], y_train=labels[:split],
        x_test=points[split:], y_test=labels[split:])


# ---------------------------------------------------------------------------
# Training loop

@dataclass
class TrainResult:
    net: MultiExitNet
    history: list[dict] = field(default_factory=list)


def _apply(net: MultiExitNet, grads: GradientSet, lr: float,
           update_blocks: bool = True, update_heads: set[int] | None = None) -> None:
    if update_blocks:
        for l in range(net.num_blocks):
            net.block_weights[l] -= lr * grads.block_weights[l]
            net.block_biases[l] -= lr * grads.block_biases[l]
    heads = update_heads if update_heads is not None else set(range(1, net.num_blocks + 1))
    for l in heads:
        net.head_weights[l - 1] -= lr * grads.head_weights[l - 1]
        net.head_biases[l - 1] -= lr * grads.head_biases[l - 1]


def _epoch_record(net: MultiExitNet, data: SyntheticDataset, epoch: int, stage: int | None):
    logits, _ = forward_all_exits(net, data.x_train)
    losses = per_exit_losses(logits, data.y_train)
    if not np.isfinite(losses).all():
        raise TrainingDivergence(f"non-finite loss at epoch {epoch}: {losses}")
    record = {"epoch": epoch, "losses": [float(v) for v in losses]}
    if stage is not None:
        record["stage"] = stage
    return record


def _run_epochs(net, data, strategy, epochs, lr, batch_size, history, step0, stage=None,
                update_blocks=True, update_heads=None, exit_subset=None):
    step = step0
    n = len(data.y_train)
    for epoch in range(epochs):
        for start in range(0, n, batch_size):
            batch = data.x_train[start:start + batch_size]
            golds = data.y_train[start:start + batch_size]
            logits, cache = forward_all_exits(net, batch)
            if exit_subset is not None:
                weights = _zero_one_weights(exit_subset, net.num_blocks)
                grads = _weighted_backward(net, cache, golds, weights)
            else:
                grads = backward(net, cache, golds, strategy, step=step)
            _apply(net, grads, lr, update_blocks=update_blocks, update_heads=update_heads)
            step += 1
        history.append(_epoch_record(net, data, len(history), stage))
    return step


def train(net: MultiExitNet, data: SyntheticDataset, strategy: TrainStrategy,
          epochs: int, lr: float, batch_size: int = 32) -> TrainResult:
    """Deterministic mini-batch gradient descent; grouped strategies cycle
    groups per batch. Two-stage training ignores ``epochs`` in favor of its
    per-stage counts, and stage 2 leaves every backbone array byte-identical.
    """
    if isinstance(strategy, Grouped):
        validate_groups(strategy.groups, net.num_blocks)
    result = TrainResult(net=net)
    history = result.history
    if isinstance(strategy, TwoStage):
        top = net.num_blocks
        _run_epochs(net, data, strategy, strategy.stage1_epochs, lr, batch_size, history,
                    0, stage=1, update_blocks=True, update_heads={top}, exit_subset=(top,))
        internal = tuple(range(1, top)) if top > 1 else (top,)
        _run_epochs(net, data, strategy, strategy.stage2_epochs, lr, batch_size, history,
                    0, stage=2, update_blocks=False,
                    update_heads=set(internal), exit_subset=internal)
        return result
    _run_epochs(net, data, strategy, epochs, lr, batch_size, history, 0)
    return result


def exit_accuracies(net: MultiExitNet, x: np.ndarray, y: np.ndarray) -> list[float]:
    logits, _ = forward_all_exits(net, x)
    return [float((s.argmax(axis=1) == y).mean()) for s in logits]


def export_logits(net: MultiExitNet, x: np.ndarray) -> OutputsSet:
    """All exits' logits for every sample, in the exit-simulation schema."""
    logits, _ = forward_all_exits(net, x)
    samples = []
    for i in range(x.shape[0]):
        per_exit = tuple(tuple(float(v) for v in s[i]) for s in logits)
        samples.append(ExitOutputs(index=i, per_exit=per_exit))
    return OutputsSet(task_kind=CLASSIFICATION, num_exits=net.num_blocks,
                      num_labels=net.num_labels, samples=samples)


# ---------------------------------------------------------------------------
# Training config files

def strategy_from_dict(obj: dict, num_blocks: int) -> TrainStrategy:
    name = obj.get("strategy")
    if name == "sum":
        return Sum()
    if name == "ge":
        return GE()
    if name == "weighted":
        return Weighted()
    if name == "grouped":
        groups = obj.get("groups")
        if groups is None:
            raise ExitBenchError("grouped strategy requires groups")
        return Grouped(groups=validate_groups(groups, num_blocks))
    if name == "two_stage":
        return TwoStage(stage1_epochs=int(obj.get("stage1_epochs", 1)),
                        stage2_epochs=int(obj.get("stage2_epochs", 1)))
    raise ExitBenchError(f"unknown strategy {name!r}")


@dataclass(frozen=True)
class TrainConfig:
    num_blocks: int
    width: int
    num_labels: int
    seed: int
    strategy: TrainStrategy
    epochs: int
    lr: float
    batch_size: int
    n_samples: int
    separation: float


def train_config_from_dict(obj: dict) -> TrainConfig:
    required = {"num_blocks", "width", "num_labels", "seed", "strategy", "epochs", "lr"}
    missing = required - set(obj)
    if missing:
        raise ExitBenchError(f"training config missing {sorted(missing)}")
    num_blocks = int(obj["num_blocks"])
    return TrainConfig(
        num_blocks=num_blocks,
        width=int(obj["width"]),
        num_labels=int(obj["num_labels"]),
        seed=int(obj["seed"]),
        strategy=strategy_from_dict(obj, num_blocks),
        epochs=int(obj["epochs"]),
        lr=float(obj["lr"]),
        batch_size=int(obj.get("batch_size", 32)),
        n_samples=int(obj.get("n_samples", 256)),
        separation=float(obj.get("separation", 4.0)),
    )


def load_train_config(path: str | Path) -> TrainConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UnreadableFileError(f"cannot read training config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ExitBenchError(f"training config {path} is not valid JSON: {exc}") from exc
    return train_config_from_dict(obj)


def run_config(config: TrainConfig) -> tuple[TrainResult, SyntheticDataset]:
    data = make_synthetic(config.seed, config.n_samples, config.width,
                          config.num_labels, config.separation)
    net = init_network(config.num_blocks, config.width, config.num_labels, config.seed)
    result = train(net, data, config.strategy, config.epochs, config.lr, config.batch_size)
    return result, data
