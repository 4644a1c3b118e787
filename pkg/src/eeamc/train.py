"""
Two-loss training for early-exit graphs and single-loss training for the baseline.

Each early-exit step runs the common layers once, feeds the branch-point
activation to both the exit head and the tail, then applies two independent
updates: the exit loss moves the common and exit-head parameters, the
backbone loss moves the tail parameters only.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .arch import BranchGraph, backward_layers, classify, run_layers
from .errors import ConfigurationError, NumericError
from .nn import SGD, Adam, cross_entropy
from .signals import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0
    seed: int = 0
    shuffle: bool = True
    patience: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.patience is not None and self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")

    def make_optimizer(self, layers):
        if self.optimizer == "adam":
            return Adam(layers, self.lr, self.beta1, self.beta2, self.eps)
        return SGD(layers, self.lr, self.momentum)


@dataclass
class EpochRecord:
    epoch: int
    loss1: float | None  # exit-head loss, None for the baseline
    loss2: float  # backbone loss
    val_acc_exit: float | None
    val_acc_backbone: float
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def comparable(self):
        """Records without wall-clock time, for determinism checks."""
        return [{k: v for k, v in asdict(r).items() if k != "seconds"} for r in self.records]

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as f:
            for line in header_lines:
                f.write(f"# {line}\n")
            f.write("epoch,loss1,loss2,val_acc_exit,val_acc_backbone,seconds\n")
            for r in self.records:
                cells = [r.epoch, r.loss1, r.loss2, r.val_acc_exit, r.val_acc_backbone, f"{r.seconds:.3f}"]
                f.write(",".join("" if c is None else str(c) for c in cells) + "\n")


def _logits_grad_step(layers, x, y, train=True):
    """Forward to logits, fused softmax cross-entropy, backward. Returns (loss, grad wrt input)."""
    logits = run_layers(layers[:-1], x, train)
    probs = layers[-1].forward(logits, train)
    loss, grad = cross_entropy(probs, y)
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    return loss, backward_layers(layers[:-1], grad.astype(logits.dtype))


def train_step_ee(g: BranchGraph, x, y, opt1, opt2, update_theta1=True, update_theta2=True,
                  theta2_first=False):
    """One step of the two-loss scheme; returns (loss1, loss2) averaged over the batch.

    Both gradients are taken before either update. theta1 and theta2 are
    disjoint, so ``theta2_first`` gives the same parameters bit for bit; it
    exists so that property can be checked.
    """
    if not g.has_exit:
        raise ConfigurationError("train_step_ee needs an early-exit graph, got the baseline")
    if len(x) == 0:
        raise ConfigurationError("empty batch")
    q = run_layers(g.common, x, train=True)
    opt1.zero_grad()
    opt2.zero_grad()

    # Exit loss: exit head, then back through the common layers
    loss1, grad_q = _logits_grad_step(g.exit_head, q, y)
    backward_layers(g.common, grad_q)

    # Backbone loss: tail only, computed from the same Q; its gradient stops at the branch point
    loss2, _ = _logits_grad_step(g.tail, q, y)

    steps = [(update_theta1, opt1), (update_theta2, opt2)]
    for enabled, opt in (steps[::-1] if theta2_first else steps):
        if enabled:
            opt.step()
    return loss1, loss2


def train_step_baseline(g: BranchGraph, x, y, opt):
    if len(x) == 0:
        raise ConfigurationError("empty batch")
    opt.zero_grad()
    loss, _ = _logits_grad_step(g.backbone, x, y)
    opt.step()
    return loss


def predict(g: BranchGraph, frames, head="backbone", batch_size=512) -> np.ndarray:
    """Batched eval-mode predictions from the exit head or the full backbone."""
    out = []
    fwd = g.forward_exit if head == "exit" else g.forward_backbone
    for i in range(0, len(frames), batch_size):
        out.append(classify(fwd(frames[i:i + batch_size])))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(g, ds: Dataset, head="backbone") -> float:
    if not len(ds):
        return float("nan")
    return float(np.mean(predict(g, ds.frames, head) == ds.labels))


def _batches(n, cfg: TrainConfig, rng):
    order = rng.permutation(n) if cfg.shuffle else np.arange(n)
    for i in range(0, n, cfg.batch_size):
        yield order[i:i + cfg.batch_size]


def _fit(g, train_set, val_set, cfg, step, has_exit):
    if not len(train_set):
        raise ConfigurationError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    g.reseed_dropout(np.random.SeedSequence([cfg.seed, 1]))
    history = TrainHistory()
    best, stale = -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(2)
        for idx in _batches(len(train_set), cfg, rng):
            losses = step(train_set.frames[idx], train_set.labels[idx].astype(np.int64))
            sums += np.asarray(losses) * len(idx)
        mean = sums / len(train_set)
        acc_b = accuracy(g, val_set, "backbone")
        acc_e = accuracy(g, val_set, "exit") if has_exit else None
        rec = EpochRecord(epoch, float(mean[0]) if has_exit else None, float(mean[1]),
                          acc_e, acc_b, time.perf_counter() - t0)
        history.records.append(rec)
        log.info("epoch %d loss1=%s loss2=%.4f val_exit=%s val_backbone=%.4f (%.1fs)",
                 epoch, rec.loss1, rec.loss2, acc_e, acc_b, rec.seconds)
        if cfg.patience is not None:
            if acc_b > best:
                best, stale = acc_b, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    return g, history


def train(g: BranchGraph, train_set: Dataset, val_set: Dataset, cfg: TrainConfig = TrainConfig()):
    """Train an early-exit graph (or the baseline, dispatching to :func:`train_baseline`)."""
    if not g.has_exit:
        return train_baseline(g, train_set, val_set, cfg)
    opt1 = cfg.make_optimizer(g.theta1())
    opt2 = cfg.make_optimizer(g.theta2())
    return _fit(g, train_set, val_set, cfg, lambda x, y: train_step_ee(g, x, y, opt1, opt2), True)


def train_baseline(g: BranchGraph, train_set: Dataset, val_set: Dataset, cfg: TrainConfig = TrainConfig()):
    opt = cfg.make_optimizer(g.backbone)

    def step(x, y):
        return (0.0, train_step_baseline(g, x, y, opt))

    return _fit(g, train_set, val_set, cfg, step, False)
