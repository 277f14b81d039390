"""Adam optimization, the epoch loop, and evaluation metrics.

Training follows the reference recipe: Adam (lr 0.001, beta1 0.9,
beta2 0.999), 20 epochs, mini-batches of 2, per-pixel cross entropy, and
the checkpoint with the smallest validation loss wins. Validation pairs
must come from conditions the optimizer never trains on; the split is the
caller's job (see `split_by_condition`) and is enforced here.

Batch members run forward/backward one after another and their gradients
are averaged in a fixed order, so a rerun with the same seed reproduces
the final weights bit for bit.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .model import ModelWeights, backward, bce_loss, forward
from .seeding import substream

__all__ = [
    "Adam",
    "TrainConfig",
    "train",
    "global_accuracy",
    "evaluate_pairs",
    "split_by_condition",
    "dataset_hash",
    "manifest_text",
]


class Adam:
    """Adam with bias correction over a named weight collection."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, weights: ModelWeights, grads: dict) -> None:
        self.t += 1
        for name in weights.learnable_names():
            g = grads[name]
            w = weights[name]
            if g.shape != w.shape:
                raise ValueError(f"gradient shape {g.shape} != weight shape {w.shape} for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            w -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 2
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    dropout_rate: float = 0.5

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")


def _condition_key(pair) -> tuple:
    return (pair.cond.power, pair.cond.speed)


def split_by_condition(pairs, val_conditions: int = 1, seed: int = 0):
    """Hold out whole conditions for validation; no condition straddles the split."""
    order: list[tuple] = []
    groups: dict[tuple, list] = {}
    for p in pairs:
        key = _condition_key(p)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(p)
    if not 1 <= val_conditions < len(order):
        raise ValueError(f"cannot hold out {val_conditions} of {len(order)} conditions")
    rng = substream(seed, "valsplit")
    held = set(rng.choice(len(order), size=val_conditions, replace=False).tolist())
    train_pairs, val_pairs = [], []
    for i, key in enumerate(order):
        (val_pairs if i in held else train_pairs).extend(groups[key])
    return train_pairs, val_pairs


def train(weights: ModelWeights, train_pairs, val_pairs, config: TrainConfig = TrainConfig()):
    """Optimize in place; returns (best_weights, history).

    history holds one (train_loss, val_loss) per epoch; best_weights is a
    copy of the weights after the epoch with the smallest validation loss.
    """
    config.validate()
    if not train_pairs or not val_pairs:
        raise ValueError("both train and validation splits must be non-empty")
    overlap = {_condition_key(p) for p in train_pairs} & {_condition_key(p) for p in val_pairs}
    if overlap:
        raise ValueError(f"conditions present in both splits: {sorted(overlap)}")

    shuffle_rng = substream(config.seed, "shuffle")
    drop_rng = substream(config.seed, "dropout")
    opt = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2)

    history = []
    best_loss = np.inf
    best = weights.copy()
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(len(train_pairs))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            grads_sum: dict[str, np.ndarray] = {}
            loss_sum = 0.0
            for idx in batch:
                pair = train_pairs[idx]
                _, caches = forward(weights, pair.initial, pair.cond.norm(), "train",
                                    rng=drop_rng, dropout_rate=config.dropout_rate)
                loss, grads = backward(weights, caches, pair.evolved)
                loss_sum += loss
                for name, g in grads.items():
                    if name in grads_sum:
                        grads_sum[name] += g
                    else:
                        grads_sum[name] = g
            inv = 1.0 / len(batch)
            for name in grads_sum:
                grads_sum[name] *= inv
            opt.step(weights, grads_sum)
            epoch_losses.append(loss_sum * inv)

        val_loss = validation_loss(weights, val_pairs)
        history.append((float(np.mean(epoch_losses)), val_loss))
        if val_loss < best_loss:
            best_loss = val_loss
            best = weights.copy()
    return best, history


def validation_loss(weights: ModelWeights, pairs) -> float:
    losses = []
    for pair in pairs:
        pred, _ = forward(weights, pair.initial, pair.cond.norm(), "infer")
        loss, _ = bce_loss(pred, pair.evolved)
        losses.append(loss)
    return float(np.mean(losses))


def global_accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of pixels whose thresholded values agree."""
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.mean((pred >= 0.5) == (truth >= 0.5)))


def evaluate_pairs(weights: ModelWeights, pairs) -> float:
    """Mean global accuracy of model predictions over a list of pairs."""
    accs = []
    for pair in pairs:
        pred, _ = forward(weights, pair.initial, pair.cond.norm(), "infer")
        accs.append(global_accuracy(pred, pair.evolved))
    return float(np.mean(accs))


def dataset_hash(pairs) -> str:
    """SHA-256 over every pair's field bytes and condition values."""
    h = hashlib.sha256()
    for pair in pairs:
        h.update(np.ascontiguousarray(pair.initial, dtype=np.float32).tobytes())
        h.update(f"{pair.cond.power!r},{pair.cond.speed!r}".encode())
        h.update(np.ascontiguousarray(pair.evolved, dtype=np.float32).tobytes())
    return h.hexdigest()


def manifest_text(entries: dict) -> str:
    """Plain-text run manifest: one key=value per line, insertion order."""
    return "".join(f"{k}={v}\n" for k, v in entries.items())
