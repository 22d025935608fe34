"""Dense/BN networks, SGD with momentum, cosine schedule and checkpoints."""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor, UsageError


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# -- layers ------------------------------------------------------------------

class Dense:
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        if in_dim <= 0 or out_dim <= 0:
            raise ConfigError(f"dense layer needs positive widths, got {in_dim}->{out_dim}")
        self.in_dim, self.out_dim = in_dim, out_dim
        bound = math.sqrt(6.0 / in_dim)  # kaiming-uniform, relu gain
        self.params = {
            "weight": rng.uniform(-bound, bound, size=(in_dim, out_dim)),
            "bias": np.zeros(out_dim),
        }
        self.buffers: dict[str, np.ndarray] = {}

    def __call__(self, x: Tensor, p: dict[str, Tensor], training: bool, stats: list | None):
        return x @ p["weight"] + p["bias"]


class BatchNorm1d:
    kind = "batchnorm"

    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5):
        if width <= 0:
            raise ConfigError("batchnorm width must be positive")
        self.width, self.momentum, self.eps = width, momentum, eps
        self.params = {"scale": np.ones(width), "shift": np.zeros(width)}
        self.buffers = {"running_mean": np.zeros(width), "running_var": np.ones(width)}

    @property
    def in_dim(self) -> int:
        return self.width

    out_dim = in_dim

    def __call__(self, x: Tensor, p: dict[str, Tensor], training: bool, stats: list | None):
        need_batch = training or stats is not None
        if need_batch:
            if x.shape[0] < 2:
                raise UsageError("batchnorm needs a batch of at least 2 to estimate variance")
            mu = ad.mean_axis(x, 0)
            var = ad.var_axis(x, 0)
            if stats is not None:
                stats.append((mu, var, self))
        if training:
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mu.values
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var.values
            xhat = (x - mu) / ad.sqrt(var + self.eps)
        else:
            rm = self.buffers["running_mean"]
            rv = self.buffers["running_var"]
            xhat = (x - rm) * (1.0 / np.sqrt(rv + self.eps))
        return xhat * p["scale"] + p["shift"]


class ReLU:
    kind = "relu"
    params: dict = {}
    buffers: dict = {}

    def __call__(self, x, p, training, stats):
        return ad.relu(x)


class Tanh:
    kind = "tanh"
    params: dict = {}
    buffers: dict = {}

    def __init__(self, scale: float = 1.0):
        self.scale = scale

    def __call__(self, x, p, training, stats):
        out = ad.tanh(x)
        return out if self.scale == 1.0 else out * self.scale


# -- network -----------------------------------------------------------------

class Network:
    """Ordered layer stack with named parameters ``"<layer index>.<name>"``."""

    def __init__(self, layers: list, name: str = "net"):
        self.layers = layers
        self.name = name
        self.training = True
        self.input_hooks: list[Callable[[np.ndarray], None]] = []
        self._leaves: dict[str, Tensor] = {}

    def __getstate__(self):
        # graph leaves and hooks belong to a live training loop, not to the model
        state = self.__dict__.copy()
        state["_leaves"] = {}
        state["input_hooks"] = []
        return state

    def train(self) -> "Network":
        self.training = True
        return self

    def eval(self) -> "Network":
        self.training = False
        return self

    @property
    def in_dim(self) -> int:
        return next(l.in_dim for l in self.layers if isinstance(l, (Dense, BatchNorm1d)))

    @property
    def out_dim(self) -> int:
        return [l.out_dim for l in self.layers if isinstance(l, (Dense, BatchNorm1d))][-1]

    @property
    def bn_layers(self) -> list[BatchNorm1d]:
        return [l for l in self.layers if isinstance(l, BatchNorm1d)]

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.params.items()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.buffers.items()}

    def num_params(self) -> int:
        return int(sum(v.size for v in self.named_params().values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        state = self.named_params()
        state.update(self.named_buffers())
        return {k: v.copy() for k, v in sorted(state.items(), key=lambda kv: _state_key(kv[0]))}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        want = self.state_dict()
        if set(want) != set(state):
            missing = sorted(set(want) - set(state))
            extra = sorted(set(state) - set(want))
            raise CheckpointError(f"state mismatch: missing {missing}, unexpected {extra}")
        for key, value in state.items():
            if want[key].shape != np.shape(value):
                raise CheckpointError(f"{key}: shape {np.shape(value)} != {want[key].shape}")
            i, name = key.split(".", 1)
            layer = self.layers[int(i)]
            store = layer.params if name in layer.params else layer.buffers
            store[name] = np.array(value, dtype=np.float64)

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for key, value in params.items():
            i, name = key.split(".", 1)
            self.layers[int(i)].params[name] = value

    def copy_from(self, other: "Network") -> None:
        self.load_state_dict(other.state_dict())

    def grads(self) -> dict[str, np.ndarray]:
        """Gradients of the leaves created by the last ``forward(..., graph=g)``."""
        return {k: t.grad for k, t in self._leaves.items()}

    def forward(self, x, graph: Graph | None = None, params: dict[str, Tensor] | None = None,
                return_stats: bool = False):
        """Return raw logits; optionally the (mean, var, layer) seen at each BN layer.

        Parameters come from ``params`` when given, else become leaves of
        ``graph``, else are constants.
        """
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ad.ShapeError(f"{self.name}.forward", x.shape, (None, self.in_dim))
        for hook in self.input_hooks:
            hook(x.values)
        if params is None:
            if graph is not None:
                params = {k: graph.param(v) for k, v in self.named_params().items()}
                self._leaves = params
            else:
                params = {k: Tensor(v) for k, v in self.named_params().items()}
        stats: list | None = [] if return_stats else None
        h = x
        for i, layer in enumerate(self.layers):
            p = {k: params[f"{i}.{k}"] for k in layer.params}
            h = layer(h, p, self.training, stats)
        return (h, stats) if return_stats else h

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode logits as a plain array, without touching the mode flag."""
        was = self.training
        self.training = False
        try:
            chunks = [self.forward(x[i:i + batch_size]).values for i in range(0, len(x), batch_size)]
        finally:
            self.training = was
        return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, self.out_dim))


def _state_key(name: str):
    i, rest = name.split(".", 1)
    return int(i), rest


def mlp_classifier(in_dim: int, hidden: int, depth: int, classes: int, rng: np.random.Generator,
                   bn_momentum: float = 0.1, bn_eps: float = 1e-5, name: str = "mlp") -> Network:
    if min(in_dim, hidden, classes) <= 0 or depth < 0:
        raise ConfigError(f"invalid widths in={in_dim} hidden={hidden} depth={depth} classes={classes}")
    layers: list = []
    width = in_dim
    for _ in range(depth):
        layers += [Dense(width, hidden, rng), BatchNorm1d(hidden, bn_momentum, bn_eps), ReLU()]
        width = hidden
    layers.append(Dense(width, classes, rng))
    return Network(layers, name)


def build_teacher(in_dim: int, classes: int, rng: np.random.Generator, hidden: int = 128,
                  depth: int = 2, **bn) -> Network:
    return mlp_classifier(in_dim, hidden, depth, classes, rng, name="teacher", **bn)


def build_student(in_dim: int, classes: int, rng: np.random.Generator, hidden: int = 32,
                  depth: int = 2, **bn) -> Network:
    return mlp_classifier(in_dim, hidden, depth, classes, rng, name="student", **bn)


def build_generator(latent_dim: int, out_dim: int, rng: np.random.Generator, hidden: int = 64,
                    output_scale: float = 1.0, **bn) -> Network:
    """z -> dense -> BN -> relu -> dense -> scale * tanh."""
    if min(latent_dim, out_dim, hidden) <= 0:
        raise ConfigError(f"invalid generator widths latent={latent_dim} hidden={hidden} out={out_dim}")
    if output_scale <= 0:
        raise ConfigError("generator output_scale must be positive")
    layers = [Dense(latent_dim, hidden, rng), BatchNorm1d(hidden, **bn), ReLU(),
              Dense(hidden, out_dim, rng), Tanh(output_scale)]
    return Network(layers, "generator")


# -- optimisation ------------------------------------------------------------

def cosine_lr(t: float, t_max: float, lr0: float, eta_min: float = 0.0) -> float:
    if t >= t_max:
        return eta_min
    t = max(t, 0.0)
    return eta_min + (lr0 - eta_min) * (1.0 + math.cos(math.pi * t / t_max)) / 2.0


@dataclass
class SGD:
    """SGD with momentum and L2 weight decay folded into the velocity.

    ``t_max=None`` keeps the learning rate constant; otherwise it follows a
    cosine curve over ``t_max`` steps after ``warmup_steps`` of linear ramp.
    """

    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    t_max: int | None = None
    eta_min: float = 0.0
    warmup_steps: int = 0
    step_count: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        t = self.step_count
        if t < self.warmup_steps:
            return self.lr * (t + 1) / self.warmup_steps
        if self.t_max is None:
            return self.lr
        return cosine_lr(t - self.warmup_steps, self.t_max, self.lr, self.eta_min)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for key, g in grads.items():
            if key not in params or np.shape(g) != params[key].shape:
                raise ad.ShapeError("sgd_step", np.shape(g), params.get(key, np.empty(0)).shape)
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {key!r}; step aborted")
        lr = self.current_lr()
        for key, g in grads.items():
            p = params[key]
            v = self.velocity.get(key)
            d = g + self.weight_decay * p if self.weight_decay else g
            v = d.copy() if v is None else self.momentum * v + d
            self.velocity[key] = v
            p -= lr * v
        self.step_count += 1


def sgd_step(opt: SGD, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    opt.step(params, grads)


# -- checkpoint container ----------------------------------------------------

MAGIC = b"SSDK"
FORMAT_VERSION = 1


def dump_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    for name, value in arrays.items():
        value = np.asarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or value.ndim > 0xFF:
            raise CheckpointError(f"cannot encode parameter {name!r}")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", value.ndim))
        buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
        buf.write(np.ascontiguousarray(value).tobytes())
    return buf.getvalue()


def parse_arrays(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 6:
        raise CheckpointError("truncated header")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 6
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise CheckpointError(f"truncated checkpoint at byte {off}")
        chunk = data[off:off + n]
        off += n
        return chunk

    while off < len(data):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = math.prod(shape)
        values = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        if name in out:
            raise CheckpointError(f"duplicate parameter {name!r}")
        out[name] = values.reshape(shape)
    return out


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(path, dump_arrays(arrays))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return parse_arrays(Path(path).read_bytes())


def flatten(arrays: Iterable[np.ndarray]) -> np.ndarray:
    parts = [np.ravel(a) for a in arrays]
    return np.concatenate(parts) if parts else np.zeros(0)
