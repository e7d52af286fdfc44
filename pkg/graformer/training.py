# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Loss, optimizer, learning-rate schedule, training loop and MPJPE."""

import collections
import concurrent.futures
import json
import math
import os
import os.path
import time

import numpy as np

from graformer import autodiff as ad
from graformer.debug import NoDebugging
from graformer.exceptions import ConfigError, DataError, NumericalFailure, ShapeError
from graformer.layers import save_checkpoint
from graformer.misc import ensure_dir

SCHEDULES = ("step", "epoch")

FINAL_CHECKPOINT = "final.grfk"
BEST_CHECKPOINT = "best.grfk"
TRAIN_LOG = "train_log.jsonl"


class TrainConfig:
    """Optimizer hyperparameters, schedule, dropout, epochs and seed."""

    def __init__(
        self, learning_rate=0.001, batch_size=64, dropout=0.25, epochs=50,
        schedule="step", decay_rate=0.9, decay_steps=75000, decay_epochs=30,
        seed=0, beta1=0.9, beta2=0.999, adam_eps=1e-8, threads=0,
    ):
        self.learning_rate = float(learning_rate)
        self.batch_size = int(batch_size)
        self.dropout = float(dropout)
        self.epochs = int(epochs)
        self.schedule = schedule
        self.decay_rate = float(decay_rate)
        self.decay_steps = int(decay_steps)
        self.decay_epochs = int(decay_epochs)
        self.seed = int(seed)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.adam_eps = float(adam_eps)
        self.threads = int(threads)

        if not self.learning_rate > 0:
            raise ConfigError(f"Learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"Batch size must be at least 1, got {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"Dropout must be in [0, 1), got {self.dropout}")
        if self.epochs < 0:
            raise ConfigError(f"Epochs can't be negative, got {self.epochs}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"Unknown schedule {self.schedule!r}, choose from: {', '.join(SCHEDULES)}")
        if self.decay_steps < 1 or self.decay_epochs < 1:
            raise ConfigError("Decay intervals must be at least 1")
        if self.threads < 0:
            raise ConfigError(f"Thread count can't be negative, got {self.threads}")

    def __repr__(self):
        return (
            f"<TrainConfig lr={self.learning_rate:g} batch={self.batch_size} "
            f"epochs={self.epochs} schedule={self.schedule} seed={self.seed}>"
        )


def mse_loss(pred, target):
    """(1/batch) * sum over samples of the squared Frobenius norm of the error."""
    pred, target = ad.as_tensor(pred), ad.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    batch = pred.shape[0] if pred.ndim == 3 else 1
    return ad.scale(ad.sum_all(ad.square(ad.sub(pred, target))), 1.0 / batch)


class AdamState:
    """First and second moments for each parameter, and the step count."""

    def __init__(self, params):
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of `params` in place.

    A gradient of None counts as zero.

    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError(
            f"adam_step: {len(params)} parameters, {len(grads)} gradients, "
            f"{len(state.m)} moments"
        )
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} doesn't match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.values -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamOptimizer:
    """Adam over a fixed list of parameter Tensors."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState(self.params)

    def step(self, lr):
        adam_step(
            self.params, [p.grad for p in self.params], self.state, lr,
            self.beta1, self.beta2, self.eps,
        )

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def lr_at(config, step, epoch):
    """The learning rate at a global step and epoch (both counted from 0)."""
    if config.schedule == "step":
        decays = step // config.decay_steps
    else:
        decays = epoch // config.decay_epochs
    return config.learning_rate * config.decay_rate ** decays


def per_sample_mpjpe(pred, target, root):
    """Root-aligned mean joint error of each sample, in the units of the input."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"mpjpe: shapes {pred.shape} and {target.shape} differ")
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    if pred.ndim != 3 or pred.shape[-1] != 3:
        raise ShapeError(f"mpjpe: expected (batch, j, 3) joints, got {pred.shape}")
    if not 0 <= root < pred.shape[1]:
        raise ShapeError(f"mpjpe: root {root} is outside {pred.shape[1]} joints")
    pred = pred - pred[:, root:root + 1]
    target = target - target[:, root:root + 1]
    return np.linalg.norm(pred - target, axis=-1).mean(axis=-1)


def mpjpe(pred, target, root):
    """Mean per-joint position error after aligning the root joints."""
    return float(per_sample_mpjpe(pred, target, root).mean())


class EvalResult:
    """MPJPE over a dataset, and per action when samples carry action tags."""

    def __init__(self, mpjpe_mm, per_action, count, action_counts=None):
        self.mpjpe_mm = mpjpe_mm
        self.per_action = per_action
        self.count = count
        self.action_counts = action_counts or {}

    def __repr__(self):
        return f"<EvalResult mpjpe={self.mpjpe_mm:.2f}mm n={self.count}>"


def evaluate(model, dataset, batch_size=256, identity_check=False):
    """Eval-mode MPJPE of `model` on `dataset`.

    With `identity_check`, the targets themselves stand in for predictions.

    """
    if len(dataset) == 0:
        raise DataError("Can't evaluate on an empty dataset")
    x2d, x3d = dataset.arrays()
    errors = []
    for lo in range(0, len(dataset), batch_size):
        target = x3d[lo:lo + batch_size]
        pred = target if identity_check else model.predict(x2d[lo:lo + batch_size])
        errors.append(per_sample_mpjpe(pred, target, dataset.skeleton.root_index))
    errors = np.concatenate(errors)

    groups = collections.defaultdict(list)
    for err, sample in zip(errors, dataset.samples):
        if sample.action:
            groups[sample.action].append(err)
    per_action = {action: float(np.mean(errs)) for action, errs in sorted(groups.items())}
    action_counts = {action: len(errs) for action, errs in groups.items()}
    return EvalResult(float(errors.mean()), per_action, len(errors), action_counts)


class TrainResult:
    """What `train` produced."""

    def __init__(self, model, log, best_eval_mpjpe, best_epoch, checkpoint_dir):
        self.model = model
        self.log = log
        self.best_eval_mpjpe = best_eval_mpjpe
        self.best_epoch = best_epoch
        self.checkpoint_dir = checkpoint_dir

    @property
    def final_loss(self):
        return self.log[-1]["train_loss"] if self.log else None


def worker_count(threads):
    """How many prefetch threads to use.

    0 means use GRFK_THREADS if it is set, or pick for this machine.

    """
    env = os.environ.get("GRFK_THREADS")
    if threads <= 0 and env:
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError(f"GRFK_THREADS must be an integer: {env!r}") from None
    if threads <= 0:
        threads = min(4, os.cpu_count() or 1)
    return threads


def _batches(order, batch_size):
    return [order[lo:lo + batch_size] for lo in range(0, len(order), batch_size)]


def train(model, dataset, config, eval_dataset=None, checkpoint_dir=None, debug=None, progress=None):
    """Train `model` in place on `dataset`.

    Each epoch ends with an eval-mode MPJPE on `eval_dataset` (the training
    set if there is none).  With `checkpoint_dir`, "best.grfk" is rewritten
    whenever eval MPJPE improves, "final.grfk" is written at the end, and one
    JSON line per epoch goes to "train_log.jsonl".  `progress` is called with
    each log row.

    Raises NumericalFailure if the loss stops being finite.

    """
    if len(dataset) == 0:
        raise DataError("Can't train on an empty dataset")
    if dataset.skeleton.joint_count != model.skeleton.joint_count:
        raise ConfigError(
            f"Dataset has {dataset.skeleton.joint_count} joints, "
            f"model expects {model.skeleton.joint_count}"
        )
    debug = debug or NoDebugging()
    eval_dataset = eval_dataset if eval_dataset is not None else dataset
    model.set_dropout(config.dropout)

    shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = ad.make_rng(shuffle_seq)
    dropout_rng = ad.make_rng(dropout_seq)
    optimizer = AdamOptimizer(model.parameters(), config.beta1, config.beta2, config.adam_eps)
    x2d, x3d = dataset.arrays()

    def assemble(indices):
        return x2d[indices], x3d[indices]

    log = []
    log_file = None
    if checkpoint_dir:
        ensure_dir(checkpoint_dir)
        log_file = open(os.path.join(checkpoint_dir, TRAIN_LOG), "w", encoding="utf-8")

    best_mpjpe, best_epoch = math.inf, None
    step = 0
    try:
        with concurrent.futures.ThreadPoolExecutor(max_workers=worker_count(config.threads)) as pool:
            for epoch in range(config.epochs):
                start = time.perf_counter()
                order = shuffle_rng.permutation(len(dataset))
                total, lr = 0.0, lr_at(config, step, epoch)
                for xb, yb in pool.map(assemble, _batches(order, config.batch_size)):
                    lr = lr_at(config, step, epoch)
                    pred = model.forward(xb, training=True, rng=dropout_rng)
                    loss = mse_loss(pred, yb)
                    value = loss.item()
                    if not math.isfinite(value):
                        raise NumericalFailure(f"Loss became {value} at step {step} (epoch {epoch + 1})")
                    ad.backward(loss)
                    if debug.should("tape"):
                        debug.write(f"tape: {len(loss.tape)} entries at step {step}")
                    optimizer.step(lr)
                    optimizer.zero_grad()
                    if debug.should("train"):
                        debug.write(f"step {step}: loss {value:.6g} lr {lr:.6g}")
                    total += value * len(xb)
                    step += 1

                result = evaluate(model, eval_dataset)
                row = {
                    "epoch": epoch + 1,
                    "step": step,
                    "lr": lr,
                    "train_loss": total / len(dataset),
                    "eval_mpjpe_mm": result.mpjpe_mm,
                    "wall_ms": int(round((time.perf_counter() - start) * 1000)),
                }
                log.append(row)
                if log_file:
                    log_file.write(json.dumps(row) + "\n")
                    log_file.flush()
                if result.mpjpe_mm < best_mpjpe:
                    best_mpjpe, best_epoch = result.mpjpe_mm, epoch + 1
                    if checkpoint_dir:
                        save_checkpoint(model, os.path.join(checkpoint_dir, BEST_CHECKPOINT))
                if progress:
                    progress(row)
    finally:
        if log_file:
            log_file.close()

    if checkpoint_dir:
        save_checkpoint(model, os.path.join(checkpoint_dir, FINAL_CHECKPOINT))
    return TrainResult(model, log, best_mpjpe if best_epoch else None, best_epoch, checkpoint_dir)
