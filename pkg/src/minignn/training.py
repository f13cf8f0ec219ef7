"""Optimization and the experiment loop.

Training uses Adam with a reduce-on-plateau schedule: the learning rate
is halved whenever the validation loss has not improved for ``patience``
epochs, and training stops once the rate drops below ``min_lr`` (or at
the epoch cap). Each run is fully deterministic given the dataset seed,
the model seed, and the config.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .graph import Graph, GraphBatch, batch as make_batch
from .layers import Model, ModelConfig
from .rng import Rng
from . import tensor as T
from .tensor import Tensor, NumericsError


# --- optimizer and schedule -------------------------------------------------

class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class PlateauScheduler:
    """Halve the learning rate after ``patience`` non-improving epochs."""

    def __init__(self, lr: float, patience: int = 10, factor: float = 0.5,
                 min_lr: float = 1e-6):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.best_val_loss = math.inf
        self.epochs_since_improvement = 0

    def step(self, val_loss: float) -> tuple[float, bool]:
        """Returns (current lr, stop flag). lr never increases."""
        if val_loss < self.best_val_loss:
            self.best_val_loss = val_loss
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
            if self.epochs_since_improvement >= self.patience:
                self.lr *= self.factor
                self.epochs_since_improvement = 0
        return self.lr, self.lr < self.min_lr


# --- losses -----------------------------------------------------------------

def cross_entropy(logits: Tensor, labels: np.ndarray,
                  class_weights: np.ndarray | None = None) -> Tensor:
    """Softmax cross-entropy, mean-reduced (weighted mean when weights given)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    shift = Tensor(np.repeat(logits.data.max(axis=1, keepdims=True), c, axis=1))
    z = T.sub(logits, shift)
    lse = T.log(T.sum_cols(T.exp(z)))
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    chosen = T.sum_cols(T.mul(z, Tensor(onehot)))
    nll = T.sub(lse, chosen)
    if class_weights is None:
        return T.scale(T.sum_all(nll), 1.0 / n)
    w = class_weights[labels].reshape(-1, 1)
    return T.scale(T.sum_all(T.mul(nll, Tensor(w))), 1.0 / w.sum())


def binary_ce(logits: Tensor, labels: np.ndarray, pos_weight: float = 1.0) -> Tensor:
    """Stable sigmoid cross-entropy on a column of logits, weighted mean.

    Positive examples are weighted by pos_weight, negatives by 1.
    """
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    y = Tensor(labels)
    # max(z, 0) - z*y + log(1 + exp(-|z|))
    softplus = T.log(
        T.add(T.exp(T.scale(T.absolute(logits), -1.0)),
              Tensor(np.ones(logits.shape)))
    )
    per = T.add(T.sub(T.relu(logits), T.mul(logits, y)), softplus)
    w = np.where(labels > 0.5, pos_weight, 1.0)
    return T.scale(T.sum_all(T.mul(per, Tensor(w))), 1.0 / w.sum())


def l1(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean absolute error, differentiable."""
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    n = pred.data.size
    return T.scale(T.sum_all(T.absolute(T.sub(pred, Tensor(target)))), 1.0 / n)


def inverse_frequency_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
    counts = np.maximum(counts, 1)
    w = labels.size / (n_classes * counts.astype(np.float64))
    return w


# --- metrics ----------------------------------------------------------------

def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float((pred == labels).mean())


def weighted_accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    """Mean of per-class recalls over classes present in labels."""
    recalls = []
    for c in np.unique(labels):
        mask = labels == c
        recalls.append(float((pred[mask] == c).mean()))
    return float(np.mean(recalls))


def f1_positive(pred: np.ndarray, labels: np.ndarray) -> float:
    tp = int(((pred == 1) & (labels == 1)).sum())
    fp = int(((pred == 1) & (labels == 0)).sum())
    fn = int(((pred == 0) & (labels == 1)).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(pred.reshape(-1) - np.asarray(target).reshape(-1))))


# --- experiment loop ----------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-3
    patience: int = 10
    factor: float = 0.5
    min_lr: float = 1e-6
    max_epochs: int = 1000
    batch_size: int = 16
    weight_classes: bool = True

    def to_dict(self):
        return asdict(self)


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    metric: str
    value: float
    seconds: float


_METRIC_NAMES = {
    "node-class": "weighted_accuracy",
    "graph-class": "accuracy",
    "edge-pred": "f1_positive",
    "graph-reg": "mae",
}


def _batch_labels(b: GraphBatch, task: str) -> np.ndarray:
    if task == "node-class":
        return b.node_labels
    if task == "graph-class":
        return b.graph_labels.astype(np.int64)
    if task == "edge-pred":
        return b.edge_labels
    return b.graph_labels.astype(np.float64)


def _loss_weights(graphs: list[Graph], task: str, model_config: ModelConfig,
                  enabled: bool):
    """Class weighting derived from the training split."""
    if not enabled:
        return None, 1.0
    if task == "node-class":
        all_labels = np.concatenate([g.node_labels for g in graphs])
        return inverse_frequency_weights(all_labels, model_config.n_classes), 1.0
    if task == "graph-class":
        all_labels = np.array([g.graph_label for g in graphs], dtype=np.int64)
        return inverse_frequency_weights(all_labels, model_config.n_classes), 1.0
    if task == "edge-pred":
        all_labels = np.concatenate([g.edge_labels for g in graphs])
        pos = max(int(all_labels.sum()), 1)
        neg = max(int(all_labels.size - pos), 1)
        return None, neg / pos
    return None, 1.0


def compute_loss(pred: Tensor, labels: np.ndarray, task: str,
                 class_weights, pos_weight: float) -> Tensor:
    if task in ("node-class", "graph-class"):
        return cross_entropy(pred, labels, class_weights)
    if task == "edge-pred":
        return binary_ce(pred, labels, pos_weight)
    return l1(pred, labels)


def compute_metric(pred: Tensor, labels: np.ndarray, task: str) -> float:
    if task in ("node-class", "graph-class"):
        hard = pred.data.argmax(axis=1)
        return weighted_accuracy(hard, labels) if task == "node-class" else accuracy(hard, labels)
    if task == "edge-pred":
        return f1_positive((pred.data.reshape(-1) > 0).astype(np.int64), labels)
    return mae(pred.data, labels)


def evaluate(model: Model, graphs: list[Graph], batch_size: int = 64,
             class_weights=None, pos_weight: float = 1.0) -> tuple[float, float]:
    """(mean loss, task metric) over a split, eval mode."""
    task = model.config.task
    losses, preds, labels = [], [], []
    for i in range(0, len(graphs), batch_size):
        b = make_batch(graphs[i:i + batch_size])
        with T.no_grad():
            pred = model.forward(b, training=False)
        lab = _batch_labels(b, task)
        losses.append((float(compute_loss(pred, lab, task, class_weights, pos_weight).data),
                       lab.shape[0] if hasattr(lab, "shape") else len(lab)))
        preds.append(pred.data)
        labels.append(np.asarray(lab))
    pred_all = Tensor(np.concatenate(preds, axis=0))
    lab_all = np.concatenate(labels)
    total = sum(n for _, n in losses)
    mean_loss = sum(l * n for l, n in losses) / total
    return mean_loss, compute_metric(pred_all, lab_all, task)


def train_loop(splits: dict[str, list[Graph]], model: Model, config: TrainConfig,
               rng: Rng) -> tuple[list[MetricsRecord], dict]:
    """Train with plateau scheduling; returns (history, best-val model state)."""
    task = model.config.task
    metric_name = _METRIC_NAMES[task]
    class_weights, pos_weight = _loss_weights(
        splits["train"], task, model.config, config.weight_classes
    )
    params = model.params()
    opt = Adam(params, lr=config.lr)
    sched = PlateauScheduler(config.lr, config.patience, config.factor, config.min_lr)
    order_rng = rng.spawn("batch-order")

    history: list[MetricsRecord] = []
    best_val = math.inf
    best_state = model.state()
    train_graphs = splits["train"]

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        idx = list(range(len(train_graphs)))
        order_rng.shuffle(idx)
        batch_losses = []
        for bstart in range(0, len(idx), config.batch_size):
            chunk = [train_graphs[i] for i in idx[bstart:bstart + config.batch_size]]
            b = make_batch(chunk)
            T.reset_tape()
            model.zero_grads()
            pred = model.forward(b, training=True)
            loss = compute_loss(pred, _batch_labels(b, task), task,
                                class_weights, pos_weight)
            if not np.isfinite(loss.data):
                raise NumericsError(
                    f"non-finite loss at epoch {epoch}, batch {bstart // config.batch_size}"
                )
            T.backward(loss)
            opt.step()
            batch_losses.append(float(loss.data))
        T.reset_tape()

        train_loss = float(np.mean(batch_losses))
        val_loss, val_metric = evaluate(
            model, splits["val"], config.batch_size, class_weights, pos_weight
        )
        seconds = time.perf_counter() - t0
        history.append(MetricsRecord(epoch, "train", train_loss, metric_name,
                                     math.nan, seconds))
        history.append(MetricsRecord(epoch, "val", val_loss, metric_name,
                                     val_metric, seconds))
        if val_loss < best_val:
            best_val = val_loss
            best_state = model.state()
        lr, stop = sched.step(val_loss)
        opt.lr = lr
        if stop:
            break
    return history, best_state


def run_seeds(splits: dict[str, list[Graph]], model_config: ModelConfig,
              train_config: TrainConfig, seeds: list[int]) -> dict:
    """Train once per seed; report per-seed test metrics with mean and std."""
    metric_name = _METRIC_NAMES[model_config.task]
    values = []
    histories = {}
    states = {}
    class_weights, pos_weight = _loss_weights(
        splits["train"], model_config.task, model_config, train_config.weight_classes
    )
    for seed in seeds:
        model = Model(model_config, Rng(seed).spawn("init"))
        history, best_state = train_loop(splits, model, train_config,
                                         Rng(seed).spawn("train"))
        model.load_state(best_state)
        _, test_metric = evaluate(model, splits["test"], train_config.batch_size,
                                  class_weights, pos_weight)
        values.append(test_metric)
        histories[seed] = history
        states[seed] = best_state
    return {
        "metric": metric_name,
        "seeds": list(seeds),
        "values": values,
        "mean": float(np.mean(values)),
        "std": float(np.std(values)),
        "histories": histories,
        "states": states,
    }


# --- reporting ----------------------------------------------------------------

def write_metrics_csv(path, history: list[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "metric", "value", "seconds"])
        for rec in history:
            writer.writerow([rec.epoch, rec.split, repr(rec.loss), rec.metric,
                             repr(rec.value), f"{rec.seconds:.3f}"])


def write_summary_json(path, summary: dict) -> None:
    slim = {k: summary[k] for k in ("metric", "seeds", "values", "mean", "std")}
    with open(path, "w") as fh:
        json.dump(slim, fh, indent=2)
