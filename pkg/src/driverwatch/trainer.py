"""Head-only training: frozen-backbone features, cross-entropy loss, SGD.

The backbone is run once per image to produce pooled 1280-d features (cached
on disk, keyed by the weight store's content CRC, so repeated epochs cost
seconds). Only the final linear layer trains: loss is categorical
cross-entropy -log p_true averaged over the batch, and the update is plain
gradient descent theta <- theta - lr * grad.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from . import graph as G
from .metrics import top_k
from .weights import WeightStore, save_dwt

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    epochs: int
    batch_size: int
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        # lr == 0 is permitted as an explicit no-op (useful as a baseline run)
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.l2 < 0:
            raise ValueError(f"l2 must be non-negative, got {self.l2}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    top1: float
    top5: float


def cross_entropy(logits: np.ndarray, true_class: int) -> float:
    """-log softmax(logits)[true_class], computed via log-sum-exp."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= true_class < z.shape[-1]:
        raise IndexError(f"true_class {true_class} out of range for {z.shape[-1]} classes")
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z[true_class])


def _batch_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(labels)), labels]))


def grad_head(features: np.ndarray, weight: np.ndarray, bias: np.ndarray,
              true_class, l2: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of mean cross-entropy w.r.t. the linear layer.

    dL/dlogits = softmax - onehot; dW = dlogits^T outer features averaged
    over the batch, plus 2*l2*W when weight decay is configured.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float32))
    labels = np.atleast_1d(np.asarray(true_class, dtype=np.int64))
    weight = np.asarray(weight, dtype=np.float32)
    bias = np.asarray(bias, dtype=np.float32)
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"feature dim {x.shape[1]} does not match weight d_in {weight.shape[1]}")
    if x.shape[0] != labels.shape[0]:
        raise ValueError(f"{x.shape[0]} feature rows but {labels.shape[0]} labels")
    logits = x @ weight.T + bias
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    dlogits = probs
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits /= len(labels)
    d_weight = dlogits.T @ x
    d_bias = dlogits.sum(axis=0)
    if l2 > 0:
        d_weight = d_weight + 2.0 * l2 * weight
    return d_weight.astype(np.float32), d_bias.astype(np.float32)


def sgd_step(theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """theta - lr * grad, elementwise."""
    theta = np.asarray(theta)
    grad = np.asarray(grad)
    if theta.shape != grad.shape:
        raise ValueError(f"parameter shape {theta.shape} does not match gradient {grad.shape}")
    return theta - np.float32(lr) * grad


# ---------------------------------------------------------------------------
# feature extraction


def extract_features(model: G.Model, batch) -> np.ndarray:
    """Pooled pre-logit features, shape (n, feature_dim)."""
    return G.forward_features(model, batch)


def _cache_key(path: Path) -> str:
    return hashlib.sha1(str(path).encode("utf-8")).hexdigest()


def extract_features_cached(model: G.Model, samples: list[D.Sample],
                            cache_dir: str | Path | None = None,
                            workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Features and labels for a sample list, with an on-disk cache.

    Cache entries live under <cache_dir>/<weights_crc>/, so stale entries
    from different weights can never be served.
    """
    if not model.is_bound:
        raise G.UnboundModelError("feature extraction requires bound weights")
    feat_dim = model.feature_dim
    cache: Path | None = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"{model.weights.payload_crc():08x}"
        cache.mkdir(parents=True, exist_ok=True)

    def one(sample: D.Sample) -> np.ndarray:
        if cache is not None:
            entry = cache / f"{_cache_key(sample.path)}.npy"
            if entry.exists():
                vec = np.load(entry)
                if vec.shape == (feat_dim,):
                    return vec
        vec = extract_features(model, D.preprocess(sample.path))[0]
        if cache is not None:
            np.save(cache / f"{_cache_key(sample.path)}.npy", vec)
        return vec

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, samples))
    else:
        rows = [one(s) for s in samples]
    features = np.stack(rows).astype(np.float32)
    labels = np.array([s.class_id for s in samples], dtype=np.int64)
    return features, labels


# ---------------------------------------------------------------------------
# the training loop


def fit_head(train_x: np.ndarray, train_y: np.ndarray,
             val_x: np.ndarray, val_y: np.ndarray,
             config: TrainConfig, num_classes: int
             ) -> tuple[np.ndarray, np.ndarray, list[EpochRecord]]:
    """Mini-batch SGD on the linear head over precomputed features.

    Deterministic for a fixed config: shuffling comes from the seeded
    generator and weights start at zero. The recorded train_loss is the
    running mean over the epoch's batches (evaluated before each step), so
    with batch_size >= n it is exactly the full-batch loss at the epoch's
    starting parameters.
    """
    d = train_x.shape[1]
    weight = np.zeros((num_classes, d), dtype=np.float32)
    bias = np.zeros(num_classes, dtype=np.float32)
    rng = np.random.default_rng(config.seed)
    records: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_x))
        losses = []
        for at in range(0, len(order), config.batch_size):
            idx = order[at : at + config.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            logits = xb @ weight.T + bias
            losses.append(_batch_cross_entropy(logits, yb) * len(idx))
            if config.l2 > 0:
                losses[-1] += config.l2 * float((weight.astype(np.float64) ** 2).sum()) * len(idx)
            dw, db = grad_head(xb, weight, bias, yb, l2=config.l2)
            weight = sgd_step(weight, dw, config.lr)
            bias = sgd_step(bias, db, config.lr)
        train_loss = sum(losses) / len(train_x)
        if not np.isfinite(train_loss):
            raise TrainingDivergedError(
                f"training loss became non-finite at epoch {epoch}; "
                f"lr={config.lr} is probably too high"
            )
        val_logits = val_x @ weight.T + bias
        records.append(EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=_batch_cross_entropy(val_logits, val_y),
            top1=top_k(val_logits, val_y, 1),
            top5=top_k(val_logits, val_y, min(5, num_classes)),
        ))
    return weight, bias, records


def train_head(model: G.Model, train_samples: list[D.Sample], val_samples: list[D.Sample],
               config: TrainConfig, cache_dir: str | Path | None = None,
               workers: int = 1) -> tuple[np.ndarray, np.ndarray, list[EpochRecord]]:
    """Extract (cached) features for both sets, then fit the head."""
    if not train_samples or not val_samples:
        raise ValueError("train and val sample lists must be non-empty")
    train_x, train_y = extract_features_cached(model, train_samples, cache_dir, workers)
    val_x, val_y = extract_features_cached(model, val_samples, cache_dir, workers)
    return fit_head(train_x, train_y, val_x, val_y, config, model.config.num_classes)


# ---------------------------------------------------------------------------
# persistence


def write_epoch_csv(records: list[EpochRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "top1", "top5"])
        for r in records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss),
                             repr(r.top1), repr(r.top5)])


def save_head_weights(weight: np.ndarray, bias: np.ndarray, path: str | Path,
                      metadata: dict) -> None:
    """Persist only the trained head (linear weight and bias) as a DWT file."""
    store = WeightStore(metadata=dict(metadata))
    store.add("head.linear.weight", weight)
    store.add("head.linear.bias", bias)
    save_dwt(store, path, dtype="f32")


def merge_head(store: WeightStore, weight: np.ndarray, bias: np.ndarray) -> WeightStore:
    """A copy of a full store with the head replaced by freshly trained values."""
    merged = WeightStore(metadata=dict(store.metadata))
    for name, rec in store.records.items():
        if name not in ("head.linear.weight", "head.linear.bias"):
            merged.add(name, rec.values)
    merged.add("head.linear.weight", weight)
    merged.add("head.linear.bias", bias)
    return merged
