"""Losses, regularizers, optimizers, the mini-batch training loop, and
numerical gradient verification.

Regression losses use the 1/(2n) squared-error convention throughout, so the
option-2 composite is (1/2n)||y - yhat||^2 + w * (1/2n)||x - xhat||^2 plus
the regularizer.  Cross entropy is softmax over the k head logits, averaged
over the batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .matrix import Matrix, Rng, StandardizeStats, standardize_fit_apply
from .network import Network, NetworkSpec, Param, Predictions, build_network

LOSS_KINDS = ("mse", "mse_reconstruction", "cross_entropy")


class TrainingDiverged(RuntimeError):
    """Raised when a batch or validation loss stops being finite."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


@dataclass(frozen=True)
class LossSpec:
    kind: str = "mse"
    reconstruction_weight: float = 1.0

    def validate(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}, expected {LOSS_KINDS}")
        if self.reconstruction_weight < 0:
            raise ValueError("reconstruction_weight must be >= 0")


@dataclass(frozen=True)
class Regularizer:
    kind: str = "none"        # "none" | "l1" | "l2"
    coefficient: float = 0.0

    def validate(self) -> None:
        if self.kind not in ("none", "l1", "l2"):
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if self.coefficient < 0:
            raise ValueError("regularizer coefficient must be >= 0")

    def value(self, params: list[Param]) -> float:
        if self.kind == "none" or self.coefficient == 0.0:
            return 0.0
        if self.kind == "l2":
            return self.coefficient * sum(float((p.value * p.value).sum()) for p in params)
        return self.coefficient * sum(float(np.abs(p.value).sum()) for p in params)

    def add_gradients(self, params: list[Param]) -> None:
        if self.kind == "none" or self.coefficient == 0.0:
            return
        for p in params:
            if self.kind == "l2":
                p.grad += 2.0 * self.coefficient * p.value
            else:
                p.grad += self.coefficient * np.sign(p.value)


def softmax(logits: Matrix) -> Matrix:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_head_gradient(loss: LossSpec, preds: Predictions, targets: Matrix,
                           inputs: Matrix | None = None,
                           regularizer: Regularizer | None = None,
                           params: list[Param] | None = None) -> tuple[float, Matrix]:
    """Loss value plus the gradient with respect to the raw head output.

    The regularizer contributes to the value only; its parameter gradients
    are added separately after the network backward pass.
    """
    loss.validate()
    n = targets.shape[0]
    head_grad = np.zeros_like(preds.head)
    k = preds.y.shape[1]

    if loss.kind in ("mse", "mse_reconstruction"):
        if preds.y.shape != targets.shape:
            raise ValueError(f"loss shape mismatch: predictions {preds.y.shape} "
                             f"vs targets {targets.shape}")
        r = preds.y - targets
        value = float((r * r).sum()) / (2.0 * n)
        head_grad[:, :k] = r / n
        if loss.kind == "mse_reconstruction":
            if preds.reconstruction is None or inputs is None:
                raise ValueError("reconstruction loss needs an option-2 head "
                                 "and the input batch")
            w = loss.reconstruction_weight
            rr = preds.reconstruction - inputs
            value += w * float((rr * rr).sum()) / (2.0 * n)
            head_grad[:, k:] = w * rr / n
    elif loss.kind == "cross_entropy":
        classes = np.asarray(targets, dtype=np.int64).ravel()
        if classes.shape[0] != n or classes.min() < 0 or classes.max() >= k:
            raise ValueError(f"cross entropy expects class indices in [0, {k}), "
                             f"got range [{classes.min()}, {classes.max()}]")
        p = softmax(preds.y)
        # no clipping: an underflowed probability yields an infinite loss,
        # which the training loop surfaces as divergence
        with np.errstate(divide="ignore"):
            value = float(-np.log(p[np.arange(n), classes]).sum()) / n
        grad = p.copy()
        grad[np.arange(n), classes] -= 1.0
        head_grad[:, :k] = grad / n
    else:  # pragma: no cover - validate() rejects earlier
        raise ValueError(loss.kind)

    if regularizer is not None and params is not None:
        value += regularizer.value(params)
    return value, head_grad


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class SgdMomentum:
    def __init__(self, momentum: float = 0.9):
        self.momentum = float(momentum)
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, params: list[Param], lr: float) -> None:
        for p in params:
            v = self._velocity.get(p.name)
            if v is None:
                v = np.zeros_like(p.value)
                self._velocity[p.name] = v
            v *= self.momentum
            v += p.grad
            p.value -= lr * v


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params: list[Param], lr: float) -> None:
        self._t += 1
        c1 = 1.0 - self.beta1 ** self._t
        c2 = 1.0 - self.beta2 ** self._t
        for p in params:
            m = self._m.get(p.name)
            if m is None:
                m = np.zeros_like(p.value)
                v = np.zeros_like(p.value)
                self._m[p.name] = m
                self._v[p.name] = v
            else:
                v = self._v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    max_epochs: int = 300
    learning_rate: float = 1e-3
    optimizer: str = "adam"        # "adam" | "sgd"
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    early_stop_patience: int = 50
    seed: int = 0
    shuffle: bool = True

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return SgdMomentum(self.momentum)
        return Adam(self.adam_beta1, self.adam_beta2, self.adam_epsilon)

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "momentum": self.momentum,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_epsilon": self.adam_epsilon,
            "early_stop_patience": self.early_stop_patience,
            "seed": self.seed,
            "shuffle": self.shuffle,
        }


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_rows(self) -> list[tuple]:
        return [(e, self.train_loss[e], self.val_loss[e], self.val_metric[e])
                for e in range(len(self))]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
            for row in self.to_rows():
                writer.writerow([row[0], repr(float(row[1])), repr(float(row[2])),
                                 repr(float(row[3]))])


def _mini_batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if idx.shape[0] == 1 and n > 1:
            # a trailing single row cannot go through train-mode batch norm
            continue
        yield idx


def fit(net: Network, x_train: Matrix, y_train: Matrix,
        x_val: Matrix, y_val: Matrix, loss: LossSpec, cfg: TrainConfig,
        regularizer: Regularizer | None = None,
        val_metric_fn=None) -> TrainHistory:
    """Mini-batch training with per-epoch validation and best-weights restore.

    Stops at max_epochs or once the validation loss has not improved for
    early_stop_patience consecutive epochs; the parameters achieving the best
    recorded validation loss are restored before returning.
    """
    cfg.validate()
    regularizer = regularizer or Regularizer()
    params = net.parameters()
    optimizer = cfg.make_optimizer()
    shuffle_rng = Rng(cfg.seed).spawn(2)
    n = x_train.shape[0]
    history = TrainHistory()
    best_val = np.inf
    best_state = None
    stale = 0

    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_losses = []
        for b, idx in enumerate(_mini_batches(n, cfg.batch_size, order)):
            xb, yb = x_train[idx], y_train[idx]
            preds = net.forward(xb, "train")
            value, head_grad = loss_and_head_gradient(
                loss, preds, yb, inputs=xb, regularizer=regularizer, params=params)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            net.backward(head_grad)
            regularizer.add_gradients(params)
            optimizer.step(params, cfg.learning_rate)
            epoch_losses.append(value)

        val_preds = net.forward(x_val, "infer")
        val_value, _ = loss_and_head_gradient(loss, val_preds, y_val, inputs=x_val)
        if not np.isfinite(val_value):
            raise TrainingDiverged(epoch, -1, val_value)
        metric = float(val_metric_fn(val_preds)) if val_metric_fn is not None else -val_value
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(float(val_value))
        history.val_metric.append(metric)

        if val_value < best_val:
            best_val = val_value
            best_state = net.get_state()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break

    if best_state is not None:
        net.set_state(best_state)
    return history


# ---------------------------------------------------------------------------
# Dataset-level pipeline
# ---------------------------------------------------------------------------

def default_loss_for(task: str, output_option: int,
                     reconstruction_weight: float = 1.0) -> LossSpec:
    if task == "classification":
        return LossSpec("cross_entropy", reconstruction_weight)
    if output_option == 2:
        return LossSpec("mse_reconstruction", reconstruction_weight)
    return LossSpec("mse", reconstruction_weight)


def make_spec(dataset, nnode, **overrides) -> NetworkSpec:
    """Fill nfea and k from an encoded dataset; other fields come from overrides."""
    k = dataset.n_classes if dataset.task == "classification" else dataset.targets.shape[1]
    return NetworkSpec(nfea=dataset.features.shape[1], nnode=tuple(int(w) for w in nnode),
                       k=int(k), **overrides)


@dataclass
class FittedModel:
    """A trained network plus the preprocessing needed to score raw rows."""

    network: Network
    feature_stats: StandardizeStats
    target_stats: StandardizeStats | None
    task: str
    loss: LossSpec
    history: TrainHistory | None = None

    def predict(self, features_raw: Matrix) -> Matrix:
        """Targets in original units (regression) or class probabilities."""
        x = self.feature_stats.apply(features_raw)
        preds = self.network.forward(x, "infer")
        if self.task == "classification":
            return softmax(preds.y)
        if self.target_stats is not None:
            return self.target_stats.invert(preds.y)
        return preds.y

    def to_dict(self) -> dict:
        return {
            "format": "resae-model",
            "version": 1,
            "task": self.task,
            "loss": {"kind": self.loss.kind,
                     "reconstruction_weight": self.loss.reconstruction_weight},
            "feature_stats": self.feature_stats.to_dict(),
            "target_stats": self.target_stats.to_dict() if self.target_stats else None,
            "network": self.network.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        if d.get("format") != "resae-model":
            raise ValueError("not a serialized model document")
        return cls(
            network=Network.from_dict(d["network"]),
            feature_stats=StandardizeStats.from_dict(d["feature_stats"]),
            target_stats=(StandardizeStats.from_dict(d["target_stats"])
                          if d.get("target_stats") else None),
            task=d["task"],
            loss=LossSpec(d["loss"]["kind"], d["loss"]["reconstruction_weight"]),
        )


def train_model(dataset, split, spec: NetworkSpec, cfg: TrainConfig,
                regularizer: Regularizer | None = None,
                loss: LossSpec | None = None) -> FittedModel:
    """Standardize, build, and fit one network on a train/validation split.

    Features are standardized on the training partition; regression targets
    likewise, with predictions inverse-transformed back to original units.
    """
    if loss is None:
        loss = default_loss_for(dataset.task, spec.output_option)
    x_tr, feature_stats = standardize_fit_apply(dataset.features[split.train])
    x_val = feature_stats.apply(dataset.features[split.validation])

    target_stats = None
    if dataset.task == "regression":
        y_tr, target_stats = standardize_fit_apply(dataset.targets[split.train])
        y_val = target_stats.apply(dataset.targets[split.validation])
        y_val_raw = dataset.targets[split.validation]

        def val_metric(preds: Predictions) -> float:
            from .evaluation import r2
            return r2(y_val_raw, target_stats.invert(preds.y))
    else:
        y_tr = dataset.targets[split.train]
        y_val = dataset.targets[split.validation]
        classes = np.asarray(y_val, dtype=np.int64).ravel()

        def val_metric(preds: Predictions) -> float:
            return float((softmax(preds.y).argmax(axis=1) == classes).mean())

    root = Rng(cfg.seed)
    net = build_network(spec, rng=root.spawn(1))
    history = fit(net, x_tr, y_tr, x_val, y_val, loss, cfg,
                  regularizer=regularizer, val_metric_fn=val_metric)
    return FittedModel(network=net, feature_stats=feature_stats,
                       target_stats=target_stats, task=dataset.task,
                       loss=loss, history=history)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def gradient_check(net: Network, x: Matrix, targets: Matrix, loss: LossSpec,
                   regularizer: Regularizer | None = None, eps: float = 1e-5,
                   n_sample: int = 200, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Checks a random subsample of parameter entries.  The network RNG state is
    pinned before every forward so dropout masks are identical across all
    evaluations; train mode is used throughout, so batch-norm gradients are
    exercised against the batch-statistics forward.
    """
    regularizer = regularizer or Regularizer()
    params = net.parameters()
    rng_state = net.rng.state
    saved = net.get_state()

    def evaluate() -> float:
        net.rng.state = rng_state
        preds = net.forward(x, "train")
        value, _ = loss_and_head_gradient(loss, preds, targets, inputs=x,
                                          regularizer=regularizer, params=params)
        return value

    net.rng.state = rng_state
    preds = net.forward(x, "train")
    _, head_grad = loss_and_head_gradient(loss, preds, targets, inputs=x,
                                          regularizer=regularizer, params=params)
    net.backward(head_grad)
    regularizer.add_gradients(params)
    analytic = [p.grad.copy() for p in params]

    sizes = [p.size for p in params]
    total = sum(sizes)
    pick = Rng(seed)
    chosen = pick.subset(total, min(n_sample, total))
    bounds = np.cumsum([0] + sizes)

    worst = 0.0
    for flat_index in chosen:
        pi = int(np.searchsorted(bounds, flat_index, side="right") - 1)
        offset = int(flat_index - bounds[pi])
        flat = params[pi].value.reshape(-1)
        original = flat[offset]
        flat[offset] = original + eps
        up = evaluate()
        flat[offset] = original - eps
        down = evaluate()
        flat[offset] = original
        numeric = (up - down) / (2.0 * eps)
        a = analytic[pi].reshape(-1)[offset]
        scale = max(abs(a), abs(numeric), 1e-6)
        worst = max(worst, abs(a - numeric) / scale)

    net.set_state(saved)       # running stats were touched by the probe forwards
    net.rng.state = rng_state
    return worst
