"""VGG-16-family network with exact forward/backward passes in numpy.

Five conv blocks of [2, 2, 3, 3, 3] 3x3 convolutions (stride 1, pad 1,
ReLU) each followed by 2x2 max-pooling, then two hidden FC layers and a
single logistic output unit. A width scale multiplies every conv channel
count. Gradients are analytic; a float64 mode exists for finite-difference
verification.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DataError

CONVS_PER_BLOCK = (2, 2, 3, 3, 3)
BASE_CHANNELS = (64, 128, 256, 512, 512)

WEIGHT_MAGIC = b"VGGW"
WEIGHT_VERSION = 1


class ShapeMismatch(DataError):
    pass


class StaleCache(DataError):
    pass


class WeightFileError(DataError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 224
    width_scale: Fraction | float = 1.0
    fc_sizes: tuple[int, int] = (4096, 4096)
    dtype: str = "float32"

    def __post_init__(self):
        if self.input_size % 32 != 0 or self.input_size <= 0:
            raise ShapeMismatch(
                f"input size {self.input_size} must be a positive multiple of 32 "
                "(five 2x2 poolings)"
            )
        if not 0 < float(self.width_scale) <= 1:
            raise DataError(f"width_scale must lie in (0, 1], got {self.width_scale}")
        if self.dtype not in ("float32", "float64"):
            raise DataError(f"dtype must be float32 or float64, got {self.dtype}")

    def channels(self, block: int) -> int:
        return max(1, round(BASE_CHANNELS[block] * float(self.width_scale)))

    @property
    def feature_side(self) -> int:
        return self.input_size // 32

    @property
    def feature_size(self) -> int:
        """Flattened size of the post-pool block-5 activation map."""
        return self.feature_side**2 * self.channels(4)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _conv_windows(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W, 3, 3) sliding views over the zero-padded input."""
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    s = padded.strides
    return np.lib.stride_tricks.as_strided(
        padded, (n, c, h, w, 3, 3), (s[0], s[1], s[2], s[3], s[2], s[3])
    )


class _Conv3x3:
    def __init__(self, name: str, c_in: int, c_out: int):
        self.name = name
        self.c_in = c_in
        self.c_out = c_out

    def tensor_shapes(self):
        return {"weight": (self.c_out, self.c_in, 3, 3), "bias": (self.c_out,)}

    def forward(self, params, x):
        w = params.tensors[f"{self.name}/weight"]
        b = params.tensors[f"{self.name}/bias"]
        windows = _conv_windows(x)
        out = np.tensordot(windows, w, axes=[(1, 4, 5), (1, 2, 3)])
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        out += b[None, :, None, None]
        return out, x

    def backward(self, params, x, dy, need_dx):
        w = params.tensors[f"{self.name}/weight"]
        grads = {}
        if params.trainable[f"{self.name}/weight"]:
            windows = _conv_windows(x)
            grads[f"{self.name}/weight"] = np.tensordot(
                dy, windows, axes=[(0, 2, 3), (0, 2, 3)]
            )
        if params.trainable[f"{self.name}/bias"]:
            grads[f"{self.name}/bias"] = dy.sum(axis=(0, 2, 3))
        dx = None
        if need_dx:
            dy_windows = _conv_windows(dy)
            w_rot = w[:, :, ::-1, ::-1]
            dx = np.tensordot(dy_windows, w_rot, axes=[(1, 4, 5), (0, 2, 3)])
            dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
        return grads, dx


class _ReLU:
    name = "relu"

    def forward(self, params, x):
        out = np.maximum(x, 0)
        return out, x > 0

    def backward(self, params, mask, dy, need_dx):
        return {}, (dy * mask if need_dx else None)


class _MaxPool2:
    name = "pool"

    def forward(self, params, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatch(f"pooling needs even spatial dims, got {h}x{w}")
        quads = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        quads = np.ascontiguousarray(quads).reshape(n, c, h // 2, w // 2, 4)
        arg = quads.argmax(axis=-1)
        out = np.take_along_axis(quads, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, params, cache, dy, need_dx):
        if not need_dx:
            return {}, None
        arg, (n, c, h, w) = cache
        dquads = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(dquads, arg[..., None], dy[..., None], axis=-1)
        dx = dquads.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return {}, np.ascontiguousarray(dx).reshape(n, c, h, w)


class _Flatten:
    name = "flatten"

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, shape, dy, need_dx):
        return {}, (dy.reshape(shape) if need_dx else None)


class _Dense:
    def __init__(self, name: str, n_in: int, n_out: int):
        self.name = name
        self.n_in = n_in
        self.n_out = n_out

    def tensor_shapes(self):
        return {"weight": (self.n_in, self.n_out), "bias": (self.n_out,)}

    def forward(self, params, x):
        w = params.tensors[f"{self.name}/weight"]
        b = params.tensors[f"{self.name}/bias"]
        return x @ w + b, x

    def backward(self, params, x, dy, need_dx):
        grads = {}
        if params.trainable[f"{self.name}/weight"]:
            grads[f"{self.name}/weight"] = x.T @ dy
        if params.trainable[f"{self.name}/bias"]:
            grads[f"{self.name}/bias"] = dy.sum(axis=0)
        dx = None
        if need_dx:
            dx = dy @ params.tensors[f"{self.name}/weight"].T
        return grads, dx


@dataclass
class ParamSet:
    """All trainable tensors plus per-tensor flags and momentum buffers.

    Owned exclusively by one training loop; `version` ties backward caches
    to the parameter state they were computed from.
    """

    tensors: dict = field(default_factory=dict)
    trainable: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)
    dtype: np.dtype = np.float32
    version: int = 0

    def copy(self) -> "ParamSet":
        return ParamSet(
            tensors={k: v.copy() for k, v in self.tensors.items()},
            trainable=dict(self.trainable),
            velocity={k: v.copy() for k, v in self.velocity.items()},
            dtype=self.dtype,
            version=self.version,
        )

    def trainable_names(self) -> list[str]:
        return [k for k, v in self.trainable.items() if v]


class VggNetwork:
    """Layer stack per the architecture table, parameterized by width."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.layers: list = []
        c_in = 3
        for b, n_convs in enumerate(CONVS_PER_BLOCK):
            c_out = config.channels(b)
            for i in range(n_convs):
                self.layers.append(_Conv3x3(f"block{b + 1}_conv{i + 1}", c_in, c_out))
                self.layers.append(_ReLU())
                c_in = c_out
            self.layers.append(_MaxPool2())
        self.layers.append(_Flatten())
        self._feature_boundary = len(self.layers)  # features = flatten output
        n_in = config.feature_size
        for i, n_out in enumerate(config.fc_sizes):
            self.layers.append(_Dense(f"fc{i + 1}", n_in, n_out))
            self.layers.append(_ReLU())
            n_in = n_out
        self.layers.append(_Dense("output", n_in, 1))

    def parameterized_layers(self):
        return [l for l in self.layers if hasattr(l, "tensor_shapes")]

    def init_params(self, seed: int, only_layers: set[str] | None = None,
                    base: ParamSet | None = None) -> ParamSet:
        """He-bound uniform init: U(+-sqrt(6 / fan_in)), biases zero.

        With only_layers, reinitializes those layers on a copy of base and
        leaves the rest untouched.
        """
        dtype = np.dtype(self.config.dtype)
        rng = np.random.default_rng(seed)
        params = base.copy() if base is not None else ParamSet(dtype=dtype)
        params.dtype = dtype
        for layer in self.parameterized_layers():
            skip = only_layers is not None and layer.name not in only_layers
            for suffix, shape in layer.tensor_shapes().items():
                key = f"{layer.name}/{suffix}"
                if skip:
                    params.trainable.setdefault(key, True)
                    continue
                if suffix == "weight":
                    fan_in = layer.c_in * 9 if isinstance(layer, _Conv3x3) else layer.n_in
                    bound = np.sqrt(6.0 / fan_in)
                    t = rng.random(size=shape, dtype=np.float64) * 2.0 - 1.0
                    params.tensors[key] = (t * bound).astype(dtype)
                else:
                    params.tensors[key] = np.zeros(shape, dtype=dtype)
                params.trainable[key] = True
                params.velocity[key] = np.zeros(shape, dtype=dtype)
        params.version += 1
        return params

    def set_block_trainable(self, params: ParamSet, block: int, flag: bool) -> None:
        prefix = f"block{block}_"
        for key in params.trainable:
            if key.startswith(prefix):
                params.trainable[key] = flag

    def set_fc_trainable(self, params: ParamSet, flag: bool) -> None:
        for key in params.trainable:
            if key.startswith(("fc", "output")):
                params.trainable[key] = flag

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        s = self.config.input_size
        batch = np.asarray(batch)
        if batch.ndim != 4 or batch.shape[1:] != (s, s, 3):
            raise ShapeMismatch(
                f"batch shape {batch.shape}, expected (N, {s}, {s}, 3)"
            )
        return np.ascontiguousarray(batch.transpose(0, 3, 1, 2), dtype=self.config.dtype)

    def _run(self, params, x, start=0, upto=None):
        caches, shapes = [], []
        for layer in self.layers[start:upto]:
            x, cache = layer.forward(params, x)
            caches.append(cache)
            shapes.append((layer.name, tuple(x.shape)))
        return x, caches, shapes

    def forward(self, params: ParamSet, batch: np.ndarray):
        """Full pass to pre-sigmoid logits plus the cache for backward."""
        return self.forward_from(params, self._check_batch(batch), start_layer=0)

    def forward_from(self, params: ParamSet, activations: np.ndarray, start_layer: int):
        """Forward from a cached intermediate activation (frozen prefix)."""
        out, caches, shapes = self._run(params, activations, start=start_layer)
        logits = out[:, 0]
        cache = {
            "version": params.version,
            "layers": caches,
            "logits": logits,
            "shapes": shapes,
            "start_layer": start_layer,
        }
        return logits, cache

    def run_prefix(self, params: ParamSet, batch: np.ndarray, upto: int) -> np.ndarray:
        """Activations entering layer `upto`, from a raw NHWC batch."""
        x = self._check_batch(batch)
        out, _, _ = self._run(params, x, upto=upto)
        return out

    def extract_features(self, params: ParamSet, batch: np.ndarray) -> np.ndarray:
        """Flattened post-pool block-5 activations."""
        return self.run_prefix(params, batch, self._feature_boundary)

    def layer_index_after_block(self, block: int) -> int:
        """Index of the first layer after the given block's pooling."""
        seen_pools = 0
        for i, layer in enumerate(self.layers):
            if isinstance(layer, _MaxPool2):
                seen_pools += 1
                if seen_pools == block:
                    return i + 1
        raise ValueError(f"no block {block}")

    def backward(self, params: ParamSet, cache: dict, labels: np.ndarray) -> dict:
        """Gradients of mean BCE(sigmoid(logits), labels) for trainable tensors."""
        if cache["version"] != params.version:
            raise StaleCache("cache was produced by a different parameter version")
        logits = cache["logits"]
        y = np.asarray(labels, dtype=params.dtype)
        if y.shape != logits.shape:
            raise ShapeMismatch(f"labels {y.shape} vs logits {logits.shape}")
        n = logits.shape[0]
        dz = (_sigmoid(logits) - y) / n
        dy = dz[:, None].astype(params.dtype)

        start = cache.get("start_layer", 0)
        active = self.layers[start:]
        trainable_at = [
            i
            for i, layer in enumerate(active)
            if hasattr(layer, "tensor_shapes")
            and any(params.trainable[f"{layer.name}/{s}"] for s in layer.tensor_shapes())
        ]
        if not trainable_at:
            return {}
        lowest = trainable_at[0]

        grads: dict[str, np.ndarray] = {}
        for i in range(len(active) - 1, lowest - 1, -1):
            layer = active[i]
            layer_grads, dy = layer.backward(
                params, cache["layers"][i], dy, need_dx=(i > lowest)
            )
            grads.update(layer_grads)
        return grads


def save_weights(path, params: ParamSet) -> None:
    """Portable little-endian tensor container (magic VGGW, version 1)."""
    entries = sorted(params.tensors.items())
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<II", WEIGHT_VERSION, len(entries)))
        for name, tensor in entries:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != WEIGHT_MAGIC:
        raise WeightFileError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != WEIGHT_VERSION:
            raise WeightFileError(f"{path}: unsupported version {version}")
        at = 12
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", buf, at)
            at += 4
            name = buf[at : at + name_len].decode("utf-8")
            at += name_len
            (rank,) = struct.unpack_from("<I", buf, at)
            at += 4
            dims = struct.unpack_from(f"<{rank}I", buf, at)
            at += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            tensor = np.frombuffer(buf, dtype="<f4", count=size, offset=at)
            at += 4 * size
            tensors[name] = tensor.reshape(dims).copy()
    except (struct.error, ValueError) as exc:
        raise WeightFileError(f"{path}: truncated or corrupt: {exc}") from exc
    return tensors


def apply_weights(params: ParamSet, tensors: dict[str, np.ndarray]) -> None:
    """Load tensors by name into an existing ParamSet, validating shapes."""
    for name, tensor in tensors.items():
        if name not in params.tensors:
            raise WeightFileError(f"unknown tensor {name!r} in weight file")
        if params.tensors[name].shape != tensor.shape:
            raise ShapeMismatch(
                f"{name}: file has {tensor.shape}, network expects "
                f"{params.tensors[name].shape}"
            )
        params.tensors[name] = tensor.astype(params.dtype)
    params.version += 1
