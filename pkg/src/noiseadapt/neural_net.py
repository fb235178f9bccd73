"""A small feedforward network with exact backpropagation.

One class covers the three networks the method needs: a plain classifier,
a classifier whose hidden layer can be tapped as a bottleneck, and a
two-headed network whose second head branches off a shared hidden layer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model_io
from .errors import InvalidArgumentError, InvalidStateError
from .features import FeatureMatrix

logger = logging.getLogger(__name__)

ACTIVATIONS = ("sigmoid", "relu", "tanh")
DEFAULT_LR = {"sigmoid": 0.1, "tanh": 0.05, "relu": 0.01}
# relative dev-loss improvement below which the learning rate is halved
NEWBOB_THRESHOLD = 1e-3


@dataclass
class NetworkConfig:
    """Shape and training settings.

    ``layer_sizes`` runs input -> hidden... -> output. ``bottleneck_index``
    and ``second_head[0]`` (the branch point) index hidden layers from 0.
    ``second_head[1]`` lists the head's own layer sizes, ending with its
    output size.
    """

    layer_sizes: list[int]
    activation: str = "sigmoid"
    bottleneck_index: int | None = None
    second_head: tuple[int, list[int]] | None = None
    head2_weight: float = 0.3
    seed: int = 0
    learning_rate: float | None = None
    batch_size: int = 128
    epochs: int = 10
    lr_halving: bool = True
    max_halvings: int = 6
    dtype: str = "float64"

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if self.second_head is not None:
            branch, sizes = self.second_head
            self.second_head = (int(branch), [int(s) for s in sizes])
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LR.get(self.activation, 0.1)
        self.validate()

    @property
    def num_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    def validate(self):
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise InvalidArgumentError("layer_sizes needs >= 2 positive entries")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        if self.bottleneck_index is not None and not 0 <= self.bottleneck_index < self.num_hidden:
            raise InvalidArgumentError("bottleneck_index outside the hidden layers")
        if self.second_head is not None:
            branch, sizes = self.second_head
            if not 0 <= branch < self.num_hidden:
                raise InvalidArgumentError("second head must branch from a hidden layer")
            if not sizes or min(sizes) < 1:
                raise InvalidArgumentError("second head sizes must be positive")
        if self.head2_weight < 0:
            raise InvalidArgumentError("head2 weight must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise InvalidArgumentError("bad training settings")
        if self.dtype not in ("float32", "float64"):
            raise InvalidArgumentError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.second_head is not None:
            d["second_head"] = [self.second_head[0], list(self.second_head[1])]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        if d.get("second_head") is not None:
            d["second_head"] = (d["second_head"][0], list(d["second_head"][1]))
        return cls(**d)


@dataclass
class ForwardResult:
    logits: np.ndarray
    head2_logits: np.ndarray | None
    hidden: list[np.ndarray]
    head_hidden: list[np.ndarray] = field(default_factory=list)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    dev_loss: list[float] = field(default_factory=list)
    dev_accuracy: list[float] = field(default_factory=list)
    dev_head2_accuracy: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0)


def _act_grad(name: str, a: np.ndarray) -> np.ndarray:
    """Derivative expressed through the activation output."""
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return (a > 0).astype(a.dtype)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, target):
    """Cross-entropy of softmax(logits) against integer targets.

    Works on a single logit vector with a scalar target, or on a batch
    (B, K) with B targets; for a batch the loss is the mean and the
    gradient is that of the mean.
    """
    logits = np.asarray(logits, dtype=float) if not isinstance(logits, np.ndarray) else logits
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    t = np.atleast_1d(np.asarray(target))
    k = z.shape[1]
    if len(t) != z.shape[0]:
        raise InvalidArgumentError("target count does not match logits")
    if t.size and (t.min() < 0 or t.max() >= k):
        raise InvalidArgumentError("target class out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(t))
    losses = logsum - shifted[rows, t]
    grad = np.exp(shifted - logsum[:, None])
    grad[rows, t] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / len(t)


class Network:
    """Weights and biases for the main path and the optional second head.

    ``weights[i]`` has shape (fan_in, fan_out); rows are frames throughout.
    """

    def __init__(self, config: NetworkConfig, weights, biases, head_weights=(), head_biases=()):
        self.config = config
        self.weights = list(weights)
        self.biases = list(biases)
        self.head_weights = list(head_weights)
        self.head_biases = list(head_biases)

    # -- construction

    @classmethod
    def init(cls, config: NetworkConfig) -> "Network":
        """Glorot-uniform weights, zero biases; main path drawn first."""
        config.validate()
        rng = np.random.default_rng([config.seed, 11])
        dtype = np.dtype(config.dtype)

        def glorot(fan_in, fan_out):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dtype)

        sizes = config.layer_sizes
        w = [glorot(a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        b = [np.zeros(s, dtype) for s in sizes[1:]]
        hw, hb = [], []
        if config.second_head is not None:
            branch, head = config.second_head
            hs = [sizes[branch + 1]] + head
            hw = [glorot(a, c) for a, c in zip(hs[:-1], hs[1:])]
            hb = [np.zeros(s, dtype) for s in hs[1:]]
        return cls(config, w, b, hw, hb)

    @property
    def input_dim(self) -> int:
        return self.config.layer_sizes[0]

    def parameters(self) -> list[np.ndarray]:
        return self.weights + self.biases + self.head_weights + self.head_biases

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy(self) -> "Network":
        return Network(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                       [w.copy() for w in self.head_weights], [b.copy() for b in self.head_biases])

    # -- inference

    def _as_input(self, batch) -> np.ndarray:
        x = batch.values if isinstance(batch, FeatureMatrix) else np.atleast_2d(batch)
        if x.shape[1] != self.input_dim:
            raise InvalidArgumentError(f"network expects {self.input_dim} inputs, got {x.shape[1]}")
        return x.astype(self.config.dtype, copy=False)

    def forward(self, batch) -> ForwardResult:
        act = self.config.activation
        a = self._as_input(batch)
        hidden = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = _act(act, a @ w + b)
            hidden.append(a)
        logits = a @ self.weights[-1] + self.biases[-1]
        head_logits, head_hidden = None, []
        if self.config.second_head is not None:
            h = hidden[self.config.second_head[0]]
            for w, b in zip(self.head_weights[:-1], self.head_biases[:-1]):
                h = _act(act, h @ w + b)
                head_hidden.append(h)
            head_logits = h @ self.head_weights[-1] + self.head_biases[-1]
        return ForwardResult(logits, head_logits, hidden, head_hidden)

    def predict(self, batch) -> np.ndarray:
        return np.argmax(self.forward(batch).logits, axis=1)

    def tap_bottleneck(self, batch) -> FeatureMatrix:
        """Activations of the configured bottleneck layer, one row per frame."""
        idx = self.config.bottleneck_index
        if idx is None:
            raise InvalidStateError("network has no bottleneck layer")
        act = self.config.activation
        a = self._as_input(batch)
        for w, b in zip(self.weights[:idx + 1], self.biases[:idx + 1]):
            a = _act(act, a @ w + b)
        labels = batch.labels if isinstance(batch, FeatureMatrix) else None
        return FeatureMatrix(a.astype(float), labels)

    # -- training

    def loss_and_grads(self, batch, targets, head2_targets=None, head2_weight=None):
        """Mean loss ``L_main + weight * L_head2`` and its gradients.

        Gradients come back in :meth:`parameters` order.
        """
        weight = self.config.head2_weight if head2_weight is None else head2_weight
        if weight < 0:
            raise InvalidArgumentError("head2 weight must be non-negative")
        x = self._as_input(batch)
        targets = np.asarray(targets)
        if len(targets) != len(x):
            raise InvalidArgumentError("batch and targets differ in length")
        use_head = self.config.second_head is not None and head2_targets is not None
        if use_head and len(head2_targets) != len(x):
            raise InvalidArgumentError("batch and head2 targets differ in length")
        act = self.config.activation
        fw = self.forward(x)
        loss, delta = softmax_xent(fw.logits, targets)
        n_main = len(self.weights)
        gw = [None] * n_main
        gb = [None] * n_main
        ghw = [np.zeros_like(w) for w in self.head_weights]
        ghb = [np.zeros_like(b) for b in self.head_biases]

        branch_delta = None
        if use_head:
            branch = self.config.second_head[0]
            l2, d2 = softmax_xent(fw.head2_logits, np.asarray(head2_targets))
            loss += weight * l2
            d2 = d2 * weight
            inputs = [fw.hidden[branch]] + fw.head_hidden
            for i in range(len(self.head_weights) - 1, -1, -1):
                ghw[i] = inputs[i].T @ d2
                ghb[i] = d2.sum(axis=0)
                d2 = d2 @ self.head_weights[i].T
                if i > 0:
                    d2 = d2 * _act_grad(act, inputs[i])
            branch_delta = d2  # gradient wrt the branch layer's activation

        inputs = [x] + fw.hidden
        for i in range(n_main - 1, -1, -1):
            gw[i] = inputs[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i == 0:
                break
            delta = delta @ self.weights[i].T
            if branch_delta is not None and i - 1 == self.config.second_head[0]:
                delta = delta + branch_delta
            delta = delta * _act_grad(act, inputs[i])
        return float(loss), gw + gb + ghw + ghb

    def sgd_step(self, grads, learning_rate: float) -> None:
        for p, g in zip(self.parameters(), grads):
            p -= learning_rate * g
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("non-finite weights after update")

    def backward_update(self, batch, targets, head2_targets=None, head2_weight=None,
                        learning_rate=None) -> float:
        """One SGD step on the mean batch loss; returns the pre-step loss."""
        lr = self.config.learning_rate if learning_rate is None else learning_rate
        loss, grads = self.loss_and_grads(batch, targets, head2_targets, head2_weight)
        self.sgd_step(grads, lr)
        return loss

    def evaluate(self, batch, targets, head2_targets=None, chunk: int = 8192):
        """Return (mean loss, main accuracy, head2 accuracy or None)."""
        x = self._as_input(batch)
        targets = np.asarray(targets)
        tot, correct, correct2 = 0.0, 0, 0
        weight = self.config.head2_weight
        for s in range(0, len(x), chunk):
            fw = self.forward(x[s:s + chunk])
            t = targets[s:s + chunk]
            loss, _ = softmax_xent(fw.logits, t)
            correct += int(np.sum(np.argmax(fw.logits, 1) == t))
            if head2_targets is not None and fw.head2_logits is not None:
                t2 = np.asarray(head2_targets)[s:s + chunk]
                l2, _ = softmax_xent(fw.head2_logits, t2)
                loss += weight * l2
                correct2 += int(np.sum(np.argmax(fw.head2_logits, 1) == t2))
            tot += loss * len(t)
        n = max(len(x), 1)
        acc2 = correct2 / n if head2_targets is not None and self.config.second_head else None
        return tot / n, correct / n, acc2

    # -- persistence

    def save(self, path) -> None:
        arrays = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"], arrays[f"b{i}"] = w, b
        for i, (w, b) in enumerate(zip(self.head_weights, self.head_biases)):
            arrays[f"head_W{i}"], arrays[f"head_b{i}"] = w, b
        model_io.save_document(path, "network", {"config": self.config.to_dict()}, arrays)

    @classmethod
    def load(cls, path) -> "Network":
        meta, arrays = model_io.load_document(path, "network")
        config = NetworkConfig.from_dict(meta["config"])
        dtype = config.dtype
        n = len(config.layer_sizes) - 1
        w = [arrays[f"W{i}"].astype(dtype) for i in range(n)]
        b = [arrays[f"b{i}"].astype(dtype) for i in range(n)]
        nh = len(config.second_head[1]) if config.second_head else 0
        hw = [arrays[f"head_W{i}"].astype(dtype) for i in range(nh)]
        hb = [arrays[f"head_b{i}"].astype(dtype) for i in range(nh)]
        return cls(config, w, b, hw, hb)


def count_parameters(config: NetworkConfig) -> int:
    sizes = config.layer_sizes
    total = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if config.second_head is not None:
        branch, head = config.second_head
        hs = [sizes[branch + 1]] + head
        total += sum(a * b + b for a, b in zip(hs[:-1], hs[1:]))
    return total


def train(net: Network, train_set: FeatureMatrix, dev_set: FeatureMatrix,
          train_head2=None, dev_head2=None) -> TrainReport:
    """Minibatch SGD with newbob-style learning-rate halving.

    Targets come from ``FeatureMatrix.labels``; second-head targets are
    passed separately. The network is left holding the weights of the
    epoch with the lowest dev loss.
    """
    cfg = net.config
    if train_set.num_frames == 0 or dev_set.num_frames == 0:
        raise InvalidArgumentError("train and dev sets must be non-empty")
    if train_set.labels is None or dev_set.labels is None:
        raise InvalidArgumentError("training needs labelled frames")
    if (train_head2 is None) != (dev_head2 is None):
        raise InvalidArgumentError("give second-head targets for both train and dev or neither")
    x = train_set.values.astype(cfg.dtype)
    y = train_set.labels
    y2 = None if train_head2 is None else np.asarray(train_head2)
    rng = np.random.default_rng([cfg.seed, 12])
    lr = cfg.learning_rate
    report = TrainReport()
    best_loss, best = math.inf, net.copy()
    halvings = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        tot = 0.0
        for s in range(0, len(x), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            tot += len(idx) * net.backward_update(
                x[idx], y[idx], None if y2 is None else y2[idx], learning_rate=lr)
        dev_loss, dev_acc, dev_acc2 = net.evaluate(dev_set, dev_set.labels, dev_head2)
        report.train_loss.append(tot / len(x))
        report.dev_loss.append(dev_loss)
        report.dev_accuracy.append(dev_acc)
        if dev_acc2 is not None:
            report.dev_head2_accuracy.append(dev_acc2)
        report.learning_rates.append(lr)
        report.epochs_run = epoch + 1
        logger.info("epoch %d lr %.4g train %.4f dev %.4f acc %.4f",
                    epoch, lr, tot / len(x), dev_loss, dev_acc)
        improved = dev_loss < best_loss * (1.0 - NEWBOB_THRESHOLD)
        if dev_loss < best_loss:
            best_loss, best = dev_loss, net.copy()
            report.best_epoch = epoch
        if cfg.lr_halving and not improved:
            lr *= 0.5
            halvings += 1
            if halvings > cfg.max_halvings:
                break
    net.weights, net.biases = best.weights, best.biases
    net.head_weights, net.head_biases = best.head_weights, best.head_biases
    return report
