"""Seeded synthetic two-class dataset and a deterministic SGD-with-momentum loop."""

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError
from .tensor import Rng

IMAGE = 16
BLOB = 4
NOISE = 0.2


@dataclass
class SyntheticDataset:
    """n x 1 x 16 x 16 images; class 0 has a bright 4x4 blob in the left half, class 1 in the right."""

    samples: np.ndarray
    labels: np.ndarray
    seed: int
    train_idx: np.ndarray
    holdout_idx: np.ndarray
    noise: float = NOISE

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return self.samples.shape[1:]


def generate_dataset(seed, n, noise=NOISE):
    """Labels alternate by index (balanced to within one).  Blob rows are uniform in
    [0, 12], blob columns in [0, 4] (left) or [8, 12] (right); background noise is
    uniform in [-noise, noise).  A seeded shuffle sends every fifth position to the
    holdout split (20%).
    """
    if n < 2:
        raise InputError(f"dataset needs n >= 2, got {n}")
    rng = Rng(seed)
    labels = np.arange(n) % 2
    rows = rng.integers(0, IMAGE - BLOB + 1, size=(n,))
    cols = rng.integers(0, IMAGE // 2 - BLOB + 1, size=(n,)) + labels * (IMAGE // 2)
    samples = noise * rng.uniform((n, 1, IMAGE, IMAGE))
    for i in range(n):
        samples[i, 0, rows[i]:rows[i] + BLOB, cols[i]:cols[i] + BLOB] += 1.0
    order = rng.permutation(n)
    holdout = np.sort(order[4::5])
    train = np.sort(np.setdiff1d(order, holdout))
    return SyntheticDataset(samples, labels, seed, train, holdout, noise)


def sgd_momentum_step(grads, velocity, lr, momentum):
    """v <- momentum * v + g (in place); returns the steps lr * v to subtract from the weights."""
    steps = []
    for g, v in zip(grads, velocity):
        v *= momentum
        v += g
        steps.append(lr * v)
    return steps


def accuracy(model, x, labels, batch=256):
    if len(labels) == 0:
        return 0.0
    correct = 0
    for start in range(0, len(labels), batch):
        logits = model.forward(x[start:start + batch])
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + batch]))
    return correct / len(labels)


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    train_accs: list = field(default_factory=list)
    final_train_acc: float = 0.0
    final_holdout_acc: float = 0.0
    wall_time: float = 0.0
    digest: str = ""

    @property
    def epochs(self):
        return len(self.losses)

    def to_csv(self):
        lines = ["epoch,loss,train_acc"]
        for i, (loss, acc) in enumerate(zip(self.losses, self.train_accs), start=1):
            lines.append(f"{i},{loss:.17g},{acc:.17g}")
        return "\n".join(lines) + "\n"

    def summary_line(self):
        return (f"epochs={self.epochs} train_acc={self.final_train_acc:.4f} "
                f"holdout_acc={self.final_holdout_acc:.4f} digest={self.digest}")


def config_digest(model, **hyper):
    payload = json.dumps({"config": model.config.to_dict(), **hyper}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def train(model, dataset, epochs, lr, momentum=0.9, batch_size=32, seed=0):
    """Minibatch SGD with momentum; batch order per epoch comes from ``seed``.

    Each epoch records the sample-weighted mean batch loss and the accuracy on
    the full training split after the epoch.  Weights change in place.
    """
    if tuple(dataset.sample_shape) != tuple(model.input_shape):
        raise ShapeError(f"dataset samples {dataset.sample_shape} do not match model input {model.input_shape}")
    if batch_size < 1 or epochs < 0:
        raise InputError("batch_size must be >= 1 and epochs >= 0")
    start = time.perf_counter()
    rng = Rng(seed).spawn(epochs, batch_size)
    x, y = dataset.samples, dataset.labels
    train_idx = dataset.train_idx
    velocity = [np.zeros_like(p) for _, p in model.parameters()]
    result = TrainResult(digest=config_digest(model, epochs=epochs, lr=lr, momentum=momentum,
                                              batch_size=batch_size, seed=seed,
                                              data_seed=dataset.seed, n=len(dataset)))
    for _ in range(epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        total = 0.0
        for b in range(0, len(order), batch_size):
            idx = order[b:b + batch_size]
            loss, _, grads = model.loss_and_grads(x[idx], y[idx])
            model.apply_gradient(sgd_momentum_step(grads, velocity, lr, momentum))
            total += loss * len(idx)
        result.losses.append(total / len(order))
        result.train_accs.append(accuracy(model, x[train_idx], y[train_idx]))
    result.final_train_acc = accuracy(model, x[train_idx], y[train_idx])
    result.final_holdout_acc = accuracy(model, x[dataset.holdout_idx], y[dataset.holdout_idx])
    result.wall_time = time.perf_counter() - start
    return result
