"""The lesion classifier: four conv blocks, three hidden dense layers, one logit.

Conv layers are numbered 0..7 in forward order (two per block); these ids are
the ones used to address feature maps for visualization. Activations are
flattened channel-major (C, H, W) before the dense stack.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from . import ops
from .errors import InvalidArgumentError
from .ops import ConvParams, DenseParams
from .tensor import FLOAT32, resolve_dtype


@dataclass(frozen=True)
class NetworkConfig:
    conv_block_filters: tuple[int, ...] = (8, 16, 32, 64)
    convs_per_block: int = 2
    kernel: int = 3
    dense_units: tuple[int, ...] = (2056, 1024, 64)
    output_units: int = 1
    input_shape: tuple[int, int, int] = (3, 224, 224)

    def __post_init__(self):
        # normalise lists to tuples so configs hash and compare by value
        object.__setattr__(self, "conv_block_filters", tuple(int(f) for f in self.conv_block_filters))
        object.__setattr__(self, "dense_units", tuple(int(u) for u in self.dense_units))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        self.validate()

    def validate(self) -> None:
        if not self.conv_block_filters or any(f < 1 for f in self.conv_block_filters):
            raise InvalidArgumentError(f"conv_block_filters must be positive, got {self.conv_block_filters}")
        if self.convs_per_block < 1:
            raise InvalidArgumentError(f"convs_per_block must be >= 1, got {self.convs_per_block}")
        if self.kernel != ops.KERNEL:
            raise InvalidArgumentError(f"only 3x3 kernels are supported, got {self.kernel}")
        if any(u < 1 for u in self.dense_units):
            raise InvalidArgumentError(f"dense_units must be positive, got {self.dense_units}")
        if self.output_units != 1:
            raise InvalidArgumentError("the classifier head has exactly one output unit")
        if len(self.input_shape) != 3 or any(s < 1 for s in self.input_shape):
            raise InvalidArgumentError(f"input_shape must be [C, H, W] with positive dims, got {self.input_shape}")
        factor = 2 ** len(self.conv_block_filters)
        _, h, w = self.input_shape
        if h % factor or w % factor:
            raise InvalidArgumentError(
                f"input {h}x{w} must be divisible by {factor} for {len(self.conv_block_filters)} pooling stages"
            )

    @property
    def conv_channels(self) -> list[int]:
        """Output channels of every conv layer, indexed by conv layer id."""
        return [f for f in self.conv_block_filters for _ in range(self.convs_per_block)]

    @property
    def num_conv_layers(self) -> int:
        return len(self.conv_block_filters) * self.convs_per_block

    def conv_spatial(self, layer: int) -> tuple[int, int]:
        """Spatial size (H, W) of the activation produced by conv layer ``layer``."""
        block = layer // self.convs_per_block
        _, h, w = self.input_shape
        return h >> block, w >> block

    @property
    def flatten_size(self) -> int:
        _, h, w = self.input_shape
        n = len(self.conv_block_filters)
        return self.conv_block_filters[-1] * (h >> n) * (w >> n)

    def canonical_text(self) -> str:
        def join(xs):
            return ",".join(str(x) for x in xs)

        return (
            f"conv_block_filters = {join(self.conv_block_filters)}\n"
            f"convs_per_block = {self.convs_per_block}\n"
            f"kernel = {self.kernel}\n"
            f"dense_units = {join(self.dense_units)}\n"
            f"output_units = {self.output_units}\n"
            f"input_shape = {join(self.input_shape)}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()

        def ints(key):
            raw = values[key]
            return tuple(int(v) for v in raw.split(",")) if raw else ()

        try:
            return cls(
                conv_block_filters=ints("conv_block_filters"),
                convs_per_block=int(values["convs_per_block"]),
                kernel=int(values["kernel"]),
                dense_units=ints("dense_units"),
                output_units=int(values["output_units"]),
                input_shape=ints("input_shape"),
            )
        except KeyError as exc:
            raise InvalidArgumentError(f"network config text lacks key {exc}") from None

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


@dataclass
class Model:
    config: NetworkConfig
    conv: list[ConvParams]
    dense: list[DenseParams]  # hidden layers followed by the output head

    @property
    def dtype(self) -> np.dtype:
        return self.conv[0].weights.dtype

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in declaration order (weights then bias, layer by layer)."""
        out = []
        for p in self.conv:
            out += [p.weights, p.bias]
        for p in self.dense:
            out += [p.weights, p.bias]
        return out

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.conv)):
            names += [f"conv{i}.weights", f"conv{i}.bias"]
        for i in range(len(self.dense)):
            names += [f"dense{i}.weights", f"dense{i}.bias"]
        return names

    def with_parameters(self, arrays: list[np.ndarray]) -> "Model":
        return model_from_arrays(self.config, list(arrays))

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


def parameter_shapes(config: NetworkConfig) -> list[tuple[int, ...]]:
    shapes = []
    in_ch = config.input_shape[0]
    for out_ch in config.conv_channels:
        shapes += [(out_ch, in_ch, config.kernel, config.kernel), (out_ch,)]
        in_ch = out_ch
    in_units = config.flatten_size
    for units in (*config.dense_units, config.output_units):
        shapes += [(units, in_units), (units,)]
        in_units = units
    return shapes


def build_model(config: NetworkConfig, seed: int, dtype=FLOAT32) -> Model:
    """He-initialised model: weights ~ N(0, 2/fan_in), biases zero."""
    dt = resolve_dtype(dtype)
    rng = np.random.default_rng(seed)
    arrays = []
    for shape in parameter_shapes(config):
        if len(shape) == 1:
            arrays.append(np.zeros(shape, dtype=dt))
        else:
            fan_in = int(np.prod(shape[1:]))
            std = math.sqrt(2.0 / fan_in)
            arrays.append((rng.standard_normal(shape) * std).astype(dt))
    return model_from_arrays(config, arrays)


def model_from_arrays(config: NetworkConfig, arrays: list[np.ndarray]) -> Model:
    shapes = parameter_shapes(config)
    if len(arrays) != len(shapes):
        raise InvalidArgumentError(f"expected {len(shapes)} parameter arrays, got {len(arrays)}")
    for i, (arr, shape) in enumerate(zip(arrays, shapes)):
        if arr.shape != shape:
            raise InvalidArgumentError(f"parameter {i}: expected shape {shape}, got {arr.shape}")
    nc = config.num_conv_layers
    conv = [ConvParams(arrays[2 * i], arrays[2 * i + 1]) for i in range(nc)]
    nd = len(config.dense_units) + 1
    dense = [DenseParams(arrays[2 * nc + 2 * i], arrays[2 * nc + 2 * i + 1]) for i in range(nd)]
    return Model(config, conv, dense)


def zeros_like_model(model: Model) -> Model:
    return model.with_parameters([np.zeros_like(p) for p in model.parameters()])


@dataclass
class ForwardTrace:
    logit: float
    captured: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class _Tape:
    conv_inputs: list = field(default_factory=list)
    conv_cols: list = field(default_factory=list)
    conv_masks: list = field(default_factory=list)
    pools: list = field(default_factory=list)
    flat_shape: tuple = ()
    dense_inputs: list = field(default_factory=list)
    dense_masks: list = field(default_factory=list)


def _check_capture(model: Model, capture: Iterable[int]) -> set[int]:
    ids = set()
    for layer in capture:
        if not isinstance(layer, (int, np.integer)) or not 0 <= layer < model.config.num_conv_layers:
            raise InvalidArgumentError(
                f"capture id {layer!r} is not a conv layer id (valid: 0..{model.config.num_conv_layers - 1})"
            )
        ids.add(int(layer))
    return ids


def _prepare_input(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != model.config.input_shape:
        raise InvalidArgumentError(f"input shape {x.shape} does not match config {model.config.input_shape}")
    return np.ascontiguousarray(x, dtype=model.dtype)


def _run(model: Model, x: np.ndarray, capture: set[int], tape: _Tape | None):
    cfg = model.config
    captured = {}
    h = x
    for layer, params in enumerate(model.conv):
        cols = ops.im2col(h)
        pre = ops.conv2d_forward(h, params, cols=cols)
        out, mask = ops.relu_forward(pre)
        if tape is not None:
            tape.conv_inputs.append(h)
            tape.conv_cols.append(cols)
            tape.conv_masks.append(mask)
        if layer in capture:
            captured[layer] = out
        h = out
        if (layer + 1) % cfg.convs_per_block == 0:
            h, index = ops.maxpool2_forward(h)
            if tape is not None:
                tape.pools.append(index)
    if tape is not None:
        tape.flat_shape = h.shape
    v = h.reshape(-1)
    last = len(model.dense) - 1
    for i, params in enumerate(model.dense):
        if tape is not None:
            tape.dense_inputs.append(v)
        v = ops.dense_forward(v, params)
        if i < last:
            v, mask = ops.relu_forward(v)
            if tape is not None:
                tape.dense_masks.append(mask)
    return float(v[0]), captured


def forward(model: Model, x: np.ndarray, capture: Iterable[int] = ()) -> ForwardTrace:
    """Run the network on one [C, H, W] image.

    ``capture`` lists conv layer ids whose post-ReLU activations are returned
    in ``ForwardTrace.captured``; capturing never changes the logit.
    """
    ids = _check_capture(model, capture)
    logit, captured = _run(model, _prepare_input(model, x), ids, None)
    return ForwardTrace(logit, captured)


def _backprop(model: Model, tape: _Tape, d_logit: float) -> tuple[list[np.ndarray], np.ndarray]:
    cfg = model.config
    dt = model.dtype
    conv_grads: list[ConvParams | None] = [None] * len(model.conv)
    dense_grads: list[DenseParams | None] = [None] * len(model.dense)

    g = np.array([d_logit], dtype=dt)
    for i in reversed(range(len(model.dense))):
        if i < len(model.dense) - 1:
            g = ops.relu_backward(tape.dense_masks[i], g)
        g, dense_grads[i] = ops.dense_backward(tape.dense_inputs[i], model.dense[i], g)

    g = g.reshape(tape.flat_shape)
    pool_i = len(tape.pools) - 1
    for layer in reversed(range(len(model.conv))):
        if (layer + 1) % cfg.convs_per_block == 0:
            g = ops.maxpool2_backward(tape.pools[pool_i], g)
            pool_i -= 1
        g = ops.relu_backward(tape.conv_masks[layer], g)
        g, conv_grads[layer] = ops.conv2d_backward(
            tape.conv_inputs[layer], model.conv[layer], g, cols=tape.conv_cols[layer]
        )

    grads = []
    for p in conv_grads:
        grads += [p.weights, p.bias]
    for p in dense_grads:
        grads += [p.weights, p.bias]
    return grads, g


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _softplus(z: float) -> float:
    return max(z, 0.0) + math.log1p(math.exp(-abs(z)))


def bce_loss(logit: float, label, pos_weight: float | None = None) -> tuple[float, float]:
    """Sigmoid cross-entropy on a single logit.

    Returns ``(loss, d_loss/d_logit)``. ``pos_weight`` scales the loss of
    positive (malignant) samples.
    """
    if label not in (0, 1) or isinstance(label, str):
        raise InvalidArgumentError(f"label must be 0 or 1, got {label!r}")
    y = float(label)
    w = 1.0 if pos_weight is None else float(pos_weight)
    z = float(logit)
    loss = w * y * _softplus(-z) + (1.0 - y) * _softplus(z)
    s = sigmoid(z)
    d_logit = w * y * (s - 1.0) + (1.0 - y) * s
    return loss, d_logit


class LossGrad(NamedTuple):
    loss: float
    logit: float
    grads: list[np.ndarray]


def backward(model: Model, x: np.ndarray, label, pos_weight: float | None = None) -> LossGrad:
    """Loss, logit and the gradient of the loss for every parameter.

    ``grads`` follows ``model.parameters()`` order and shapes.
    """
    tape = _Tape()
    logit, _ = _run(model, _prepare_input(model, x), set(), tape)
    loss, d_logit = bce_loss(logit, label, pos_weight)
    grads, _ = _backprop(model, tape, d_logit)
    return LossGrad(loss, logit, grads)


def input_gradient(model: Model, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Logit and d(logit)/d(input) with parameters held fixed."""
    tape = _Tape()
    logit, _ = _run(model, _prepare_input(model, x), set(), tape)
    _, d_input = _backprop(model, tape, 1.0)
    return logit, d_input


def predict_proba(model: Model, x: np.ndarray) -> float:
    return sigmoid(forward(model, x).logit)
