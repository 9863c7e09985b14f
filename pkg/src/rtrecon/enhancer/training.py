"""Adam, reduce-on-plateau, early stopping and the training loop.

Randomness: the train/validation split and the per-epoch shuffle come from
``PCG64(SeedSequence([seed, 1]))``; network init and dropout masks come from
the network config seed. Two runs with identical inputs and seeds give
bit-identical weights.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dataset import TrainingPair, stack_pairs
from ..errors import NumericError, ValidationError
from ..loss import FeatureExtractor, LossWeights, composite_loss
from .network import NetworkConfig, UNet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    initial_lr: float = 3e-4
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    early_stop_patience: int = 25
    max_epochs: int = 250
    seed: int = 0
    split_fraction: float = 0.8
    max_steps: int | None = None
    dtype: str = "float32"
    restore_best: bool = True

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ValidationError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if not self.initial_lr > 0:
            raise ValidationError(f"initial_lr must be > 0, got {self.initial_lr}")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 (batch normalization)")
        if not 0 < self.plateau_factor <= 1:
            raise ValidationError("plateau_factor must be in (0, 1]")
        if self.max_epochs < 1 or self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValidationError("epoch counts and patiences must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"dtype must be float32 or float64, got {self.dtype}")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


class ReduceOnPlateau:
    """Multiply the lr by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 10):
        self.lr, self.factor, self.patience = lr, factor, patience
        self.best = np.inf
        self.wait = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr *= self.factor
                self.wait = 0
        return self.lr


class EarlyStopping:
    def __init__(self, patience: int = 25):
        self.patience = patience
        self.best = np.inf
        self.wait = 0

    def step(self, metric: float) -> bool:
        """Record a metric; True means stop."""
        if metric < self.best:
            self.best = metric
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainResult:
    net: UNet
    history: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def split_indices(n: int, fraction: float, rng: np.random.Generator,
                  groups: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation split; with ``groups`` whole groups go to one side."""
    if groups is None:
        groups = np.arange(n)
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    order = rng.permutation(uniq)
    n_train = int(round(fraction * len(uniq)))
    n_train = min(max(n_train, 1), len(uniq))
    if n_train == len(uniq) and len(uniq) > 1:
        n_train -= 1
    train_groups = order[:n_train]
    is_train = np.isin(groups, train_groups)
    return np.flatnonzero(is_train), np.flatnonzero(~is_train)


def _batches(idx: np.ndarray, size: int) -> list[np.ndarray]:
    out = [idx[i:i + size] for i in range(0, len(idx), size)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def evaluate_loss(net: UNet, x: np.ndarray, y: np.ndarray, weights: LossWeights,
                  extractor: FeatureExtractor | None, batch_size: int = 16) -> float:
    pred = net.predict(x, batch_size)
    return composite_loss(pred, y, weights, extractor)[0]


def train(pairs: list[TrainingPair], net_config: NetworkConfig,
          train_config: TrainConfig = TrainConfig(), loss_weights: LossWeights = LossWeights(),
          extractor: FeatureExtractor | None = None, groups: np.ndarray | None = None,
          net: UNet | None = None) -> TrainResult:
    """Fit the enhancer on range-normalized pairs.

    ``groups`` (one label per pair, e.g. the source slice) keeps augmented
    copies of a slice on the same side of the split.
    """
    if not pairs:
        raise ValidationError("dataset is empty")
    x, y, _, _ = stack_pairs(pairs)
    if x.shape[1] != net_config.input_channels:
        raise ValidationError(
            f"pairs have {x.shape[1]} channels, network expects {net_config.input_channels}")
    if groups is None:
        groups = np.array([p.source for p in pairs]) if len({p.source for p in pairs}) > 1 else None
    dtype = np.dtype(train_config.dtype)
    x = x.astype(dtype)
    net = UNet(net_config, dtype=dtype) if net is None else net
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(train_config.seed), 1])))
    tr, va = split_indices(len(pairs), train_config.split_fraction, rng, groups)
    if len(tr) < 2:
        raise ValidationError("training split needs >= 2 pairs (batch normalization)")
    params = net.parameters()
    grads = net.gradients()
    opt = Adam(params)
    plateau = ReduceOnPlateau(train_config.initial_lr, train_config.plateau_factor,
                              train_config.plateau_patience)
    stopper = EarlyStopping(train_config.early_stop_patience)
    result = TrainResult(net)
    best_state, best_val = None, np.inf
    steps = 0
    lr = train_config.initial_lr
    for epoch in range(train_config.max_epochs):
        net.set_training(True)
        order = tr[rng.permutation(len(tr))]
        total, count = 0.0, 0
        for b in _batches(order, train_config.batch_size):
            net.zero_grad_all()
            grads = net.gradients()
            pred = net.forward(x[b])[:, 0]
            value, g = composite_loss(pred, y[b], loss_weights, extractor)
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss at epoch {epoch}, step {steps}")
            net.backward(g[:, None])
            opt.step(params, grads, lr)
            result.step_losses.append(value)
            total += value * len(b)
            count += len(b)
            steps += 1
            if train_config.max_steps is not None and steps >= train_config.max_steps:
                break
        train_loss = total / count
        if len(va):
            val_loss = evaluate_loss(net, x[va], y[va], loss_weights, extractor,
                                     train_config.batch_size)
        else:
            val_loss = train_loss
        if not np.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                               "lr": lr, "steps": steps})
        log.info("epoch %d train %.6g val %.6g lr %.3g", epoch, train_loss, val_loss, lr)
        if val_loss < best_val:
            best_val = val_loss
            result.best_epoch = epoch
            if train_config.restore_best:
                best_state = {k: v.copy() for k, v in net.state().items()}
        lr = plateau.step(val_loss)
        if train_config.max_steps is not None and steps >= train_config.max_steps:
            break
        if stopper.step(val_loss):
            result.stopped_early = True
            break
    if best_state is not None:
        net.load_state(best_state)
    net.set_training(False)
    return result
