"""SGD training: loss, optimizer step, two-stage procedure, history.

Stage 1 trains a single-layer logistic classifier on stored features;
stage 2 fine-tunes the network with the first blocks frozen. Both are
deterministic for a fixed seed: fixed shuffle order, fixed accumulation
order, single-threaded iteration over batches.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .network import ParamSet, ShapeMismatch, VggNetwork, _sigmoid

BCE_EPS = 1e-7


class EmptySplit(DataError):
    pass


class InvalidFreezeCount(DataError):
    pass


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 0.0001
    momentum: float = 0.0
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise DataError(f"batch size must be >= 1, got {self.batch_size}")


def bce_loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy; probabilities clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(probabilities, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeMismatch(f"{p.shape} probabilities vs {y.shape} labels")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def sgd_step(params: ParamSet, grads: dict, spec: TrainSpec) -> ParamSet:
    """v <- momentum*v + g; w <- w - lr*v. Frozen tensors never move."""
    for name, g in grads.items():
        if not params.trainable.get(name, False):
            continue
        w = params.tensors[name]
        if g.shape != w.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs tensor {w.shape}")
        v = params.velocity[name]
        v *= params.dtype.type(spec.momentum)
        v += g.astype(params.dtype)
        w -= params.dtype.type(spec.learning_rate) * v
    params.version += 1
    return params


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_accuracy")


def write_history(path, history: list[EpochStats]) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(HISTORY_COLUMNS) + "\n")
        for h in history:
            fh.write(
                f"{h.epoch}\t{h.train_loss:.6f}\t{h.val_loss:.6f}\t{h.val_accuracy:.4f}\n"
            )


def _batches(n: int, batch_size: int, perm=None):
    order = perm if perm is not None else np.arange(n)
    for at in range(0, n, batch_size):
        yield order[at : at + batch_size]


class LogisticHead:
    """Single logistic unit over stored features (the stage-1 classifier)."""

    def __init__(self, n_features: int, dtype: str = "float32"):
        self.n_features = n_features
        self.dtype = np.dtype(dtype)

    def init_params(self, seed: int) -> ParamSet:
        rng = np.random.default_rng(seed)
        bound = np.sqrt(6.0 / self.n_features)
        w = (rng.random((self.n_features, 1), dtype=np.float64) * 2 - 1) * bound
        params = ParamSet(dtype=self.dtype)
        params.tensors = {
            "head/weight": w.astype(self.dtype),
            "head/bias": np.zeros(1, dtype=self.dtype),
        }
        params.trainable = {"head/weight": True, "head/bias": True}
        params.velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        return params

    def logits(self, params: ParamSet, x: np.ndarray) -> np.ndarray:
        return (x.astype(self.dtype) @ params.tensors["head/weight"])[:, 0] + params.tensors[
            "head/bias"
        ][0]

    def train(self, params: ParamSet, x, y, spec: TrainSpec) -> list[float]:
        """Mean train loss per epoch."""
        n = len(x)
        rng = np.random.default_rng(spec.seed)
        losses = []
        for _ in range(spec.epochs):
            perm = rng.permutation(n)
            total = 0.0
            for idx in _batches(n, spec.batch_size, perm):
                z = self.logits(params, x[idx])
                p = _sigmoid(z)
                total += bce_loss(p, y[idx]) * len(idx)
                dz = ((p - y[idx]) / len(idx)).astype(self.dtype)
                grads = {
                    "head/weight": x[idx].astype(self.dtype).T @ dz[:, None],
                    "head/bias": np.array([dz.sum()], dtype=self.dtype),
                }
                sgd_step(params, grads, spec)
            losses.append(total / n)
        return losses

    def predict(self, params: ParamSet, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits(params, x))


def standardize_features(train_x: np.ndarray, *others):
    """Zero-mean unit-variance scaling fitted on the training features."""
    mean = train_x.mean(axis=0)
    std = train_x.std(axis=0)
    std[std < 1e-8] = 1.0
    scaled = [(train_x - mean) / std] + [(x - mean) / std for x in others]
    return scaled if others else scaled[0]


def predict_probabilities(
    network: VggNetwork, params: ParamSet, batch: np.ndarray, chunk: int = 64
) -> np.ndarray:
    out = []
    for at in range(0, len(batch), chunk):
        logits, _ = network.forward(params, batch[at : at + chunk])
        out.append(_sigmoid(logits))
    return np.concatenate(out) if out else np.zeros(0)


def fine_tune(
    network: VggNetwork,
    params: ParamSet,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray],
    spec: TrainSpec,
    freeze_blocks: int = 4,
    freeze_fc: bool = False,
) -> tuple[ParamSet, list[EpochStats]]:
    """Freeze blocks 1..freeze_blocks, reinitialize and train the rest.

    Block 5 (when not frozen) and all FC layers are freshly initialized
    before training. Outputs of the frozen prefix are computed once and
    cached; training then runs only the trainable suffix each step. This
    is mathematically identical to the full pass (BLAS kernels may round
    the prefix differently by batch shape, at the last-ulp level).
    """
    if not 0 <= freeze_blocks <= 5:
        raise InvalidFreezeCount(f"freeze_blocks must lie in [0, 5], got {freeze_blocks}")
    x_train, y_train = train_set
    x_val, y_val = val_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise EmptySplit("fine-tuning needs nonempty train and validation sets")

    reinit = {"fc1", "fc2", "output"}
    if freeze_blocks < 5:
        reinit |= {f"block5_conv{i}" for i in (1, 2, 3)}
    params = network.init_params(spec.seed, only_layers=reinit, base=params)
    for b in range(1, 6):
        network.set_block_trainable(params, b, b > freeze_blocks)
    network.set_fc_trainable(params, not freeze_fc)

    boundary = network.layer_index_after_block(freeze_blocks) if freeze_blocks else 0
    if boundary:
        a_train = _cached_prefix(network, params, x_train, boundary)
        a_val = _cached_prefix(network, params, x_val, boundary)
    else:
        a_train = network._check_batch(x_train)
        a_val = network._check_batch(x_val)
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)

    rng = np.random.default_rng(spec.seed)
    history: list[EpochStats] = []
    for epoch in range(1, spec.epochs + 1):
        perm = rng.permutation(len(a_train))
        total = 0.0
        for idx in _batches(len(a_train), spec.batch_size, perm):
            logits, cache = network.forward_from(params, a_train[idx], boundary)
            total += bce_loss(_sigmoid(logits), y_train[idx]) * len(idx)
            grads = network.backward(params, cache, y_train[idx])
            sgd_step(params, grads, spec)
        val_p = _predict_from(network, params, a_val, boundary)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=total / len(a_train),
                val_loss=bce_loss(val_p, y_val),
                val_accuracy=float(np.mean((val_p >= 0.5) == (y_val == 1.0))),
            )
        )
    return params, history


def _cached_prefix(network, params, batch, boundary, chunk: int = 64) -> np.ndarray:
    parts = [
        network.run_prefix(params, batch[at : at + chunk], boundary)
        for at in range(0, len(batch), chunk)
    ]
    return np.concatenate(parts)


def _predict_from(network, params, activations, boundary, chunk: int = 64) -> np.ndarray:
    out = []
    for at in range(0, len(activations), chunk):
        logits, _ = network.forward_from(params, activations[at : at + chunk], boundary)
        out.append(_sigmoid(logits))
    return np.concatenate(out)
