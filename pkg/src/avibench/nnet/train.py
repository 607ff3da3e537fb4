from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import TrainingDiverged
from ..evalkit import macro_f1
from ..splitkit import epoch_seed, shuffle_training
from .model import Model, ModelConfig, Params, loss_and_grads, weighted_cross_entropy
from .optim import make_optimizer

log = logging.getLogger(__name__)


@dataclass
class Splits:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.x_train.shape[1:])


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    class_weights: np.ndarray | None = None
    seed: int = 0
    early_stop_patience: int | None = None
    # keep the parameters of the best validation-F1 epoch
    restore_best: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")


@dataclass
class TrainingRun:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_macro_f1: list[float] = field(default_factory=list)
    params: Params = field(default_factory=dict)
    epochs_trained: int = 0
    best_epoch: int = 0
    steps: dict[str, int] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def best_val_f1(self) -> float:
        return max(self.val_macro_f1) if self.val_macro_f1 else 0.0

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_macro_f1"])
        for e in range(self.epochs_trained):
            w.writerow([e + 1, repr(self.train_loss[e]), repr(self.val_loss[e]), repr(self.val_macro_f1[e])])
        return buf.getvalue()


def evaluate_loss_f1(model: Model, params: Params, x: np.ndarray, y: np.ndarray,
                     batch_size: int = 256) -> tuple[float, float]:
    probs = model.predict(params, x, batch_size)
    loss = weighted_cross_entropy(probs, y, np.ones(model.n_classes))
    return loss, macro_f1(probs.argmax(axis=1), y, model.n_classes)


def train(model_cfg: ModelConfig, data: Splits, train_cfg: TrainConfig,
          on_epoch: Callable[[int, TrainingRun], None] | None = None) -> TrainingRun:
    """Mini-batch training with a fresh shuffle every epoch.

    Validation loss is unweighted cross-entropy; the final partial batch is
    kept.  Raises ``TrainingDiverged`` as soon as a batch loss is non-finite.
    """
    dtype = np.dtype(train_cfg.dtype)
    model = Model(model_cfg.layers, data.input_shape)
    params = model.init_params(model_cfg.init_seed, dtype=dtype)
    opt = make_optimizer(model_cfg.optimizer)
    k = model.n_classes
    weights = np.ones(k) if train_cfg.class_weights is None else np.asarray(train_cfg.class_weights, np.float64)
    x_train = np.ascontiguousarray(data.x_train, dtype=dtype)
    x_val = np.ascontiguousarray(data.x_val, dtype=dtype)
    y_train = np.asarray(data.y_train, dtype=np.int64)
    y_val = np.asarray(data.y_val, dtype=np.int64)
    n = len(x_train)
    ids = list(range(n))

    run = TrainingRun()
    start = time.perf_counter()
    best_f1, best_params, stale = -1.0, None, 0
    for epoch in range(train_cfg.epochs):
        order = np.asarray(shuffle_training(ids, epoch_seed(train_cfg.seed, epoch)))
        total = 0.0
        for b in range(0, n, train_cfg.batch_size):
            idx = order[b:b + train_cfg.batch_size]
            # non-finite values are detected and reported just below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grads(model, params, x_train[idx], y_train[idx], weights)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}; learning rate "
                    f"{model_cfg.optimizer.lr:g} too high or gradients exploding", epoch + 1)
            opt.step(params, grads)
            total += loss * len(idx)
        run.train_loss.append(total / n)
        with np.errstate(over="ignore", invalid="ignore"):
            vl, vf = evaluate_loss_f1(model, params, x_val, y_val)
        if not np.isfinite(vl):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch + 1}", epoch + 1)
        run.val_loss.append(vl)
        run.val_macro_f1.append(vf)
        run.epochs_trained = epoch + 1
        if on_epoch is not None:
            on_epoch(epoch + 1, run)
        if vf > best_f1:
            best_f1, stale, run.best_epoch = vf, 0, epoch + 1
            if train_cfg.restore_best:
                best_params = {name: p.copy() for name, p in params.items()}
        else:
            stale += 1
            if train_cfg.early_stop_patience is not None and stale >= train_cfg.early_stop_patience:
                break

    run.params = best_params if best_params is not None else params
    run.steps = dict(opt.steps)
    run.wall_time = time.perf_counter() - start
    log.debug("trained %d epochs, best val F1 %.4f at epoch %d", run.epochs_trained, best_f1, run.best_epoch)
    return run
