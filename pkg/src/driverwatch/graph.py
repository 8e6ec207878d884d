"""Classifier graph: declarative layer table, weight binding, forward execution.

The canonical architecture is a width-0.25 / depth-0.33 CSP-style backbone of
ConvBlocks (conv + batch norm + SiLU) and C2f blocks, followed by a classify
head (1x1 ConvBlock to 1280 channels, global average pool, linear). The layer
table is fixed here; parameter accounting over the table is exact, so the
table itself is validated by the parameter-count tests.

A C2f block projects with a 1x1 ConvBlock, splits the result into two channel
halves, chains n residual bottlenecks (two 3x3 ConvBlocks each) from the
second half, concatenates all 2+n branches, and projects back with a 1x1
ConvBlock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import BnParams, ConvParams, ShapeError, Tensor
from .weights import WeightStore

DEFAULT_BN_EPS = 1e-3
HEAD_WIDTH = 1280


class BindError(ValueError):
    """Weight store does not match the tensor set the graph expects."""


class UnboundModelError(RuntimeError):
    """Forward was called before weights were bound."""


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    depth_multiple: float = 0.33
    width_multiple: float = 0.25
    input_size: int = 224

    def __post_init__(self):
        if not (0 < self.depth_multiple <= 1 and 0 < self.width_multiple <= 1):
            raise ValueError("depth/width multiples must be in (0, 1]")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_size < 1:
            raise ValueError("input_size must be positive")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # ConvBlock | C2f | ClassifyHead
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    repeats: int = 1
    shortcut: bool = False

    def __post_init__(self):
        if self.kind not in ("ConvBlock", "C2f", "ClassifyHead"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "C2f" and self.out_channels % 2 != 0:
            raise ValueError("C2f out_channels must be even (hidden = out/2)")


def _n_variant_layers() -> tuple[LayerSpec, ...]:
    return (
        LayerSpec("ConvBlock", 3, 16, kernel=3, stride=2),
        LayerSpec("ConvBlock", 16, 32, kernel=3, stride=2),
        LayerSpec("C2f", 32, 32, repeats=1, shortcut=True),
        LayerSpec("ConvBlock", 32, 64, kernel=3, stride=2),
        LayerSpec("C2f", 64, 64, repeats=2, shortcut=True),
        LayerSpec("ConvBlock", 64, 128, kernel=3, stride=2),
        LayerSpec("C2f", 128, 128, repeats=2, shortcut=True),
        LayerSpec("ConvBlock", 128, 256, kernel=3, stride=2),
        LayerSpec("C2f", 256, 256, repeats=1, shortcut=True),
        LayerSpec("ClassifyHead", 256, HEAD_WIDTH, kernel=1, stride=1),
    )


def _mini_layers() -> tuple[LayerSpec, ...]:
    # small graph for fixtures and smoke tests; same block vocabulary
    return (
        LayerSpec("ConvBlock", 3, 8, kernel=3, stride=2),
        LayerSpec("C2f", 8, 8, repeats=1, shortcut=True),
        LayerSpec("ConvBlock", 8, 16, kernel=3, stride=2),
        LayerSpec("ClassifyHead", 16, 64, kernel=1, stride=1),
    )


ARCHITECTURES = {
    "yolov8n-cls": _n_variant_layers,
    "mini-cls": _mini_layers,
}


@dataclass(frozen=True)
class _ConvBlockInfo:
    """One conv+bn+silu unit: its tensor-name prefix and geometry."""

    prefix: str
    c_in: int
    c_out: int
    kernel: int
    stride: int


def _validate_chain(layers: tuple[LayerSpec, ...]) -> None:
    prev = None
    for i, spec in enumerate(layers):
        if prev is not None and spec.in_channels != prev:
            raise ValueError(
                f"layer {i} expects {spec.in_channels} input channels "
                f"but the previous layer produces {prev}"
            )
        prev = spec.out_channels
    if layers and layers[-1].kind != "ClassifyHead":
        raise ValueError("layer table must end with a ClassifyHead")


def _conv_blocks_of(index: int, spec: LayerSpec) -> list[_ConvBlockInfo]:
    if spec.kind == "ConvBlock":
        return [_ConvBlockInfo(f"backbone.{index}", spec.in_channels, spec.out_channels,
                               spec.kernel, spec.stride)]
    if spec.kind == "C2f":
        c, n = spec.out_channels, spec.repeats
        hidden = c // 2
        blocks = [_ConvBlockInfo(f"backbone.{index}.cv1", spec.in_channels, c, 1, 1)]
        for j in range(n):
            blocks.append(_ConvBlockInfo(f"backbone.{index}.m.{j}.cv1", hidden, hidden, 3, 1))
            blocks.append(_ConvBlockInfo(f"backbone.{index}.m.{j}.cv2", hidden, hidden, 3, 1))
        blocks.append(_ConvBlockInfo(f"backbone.{index}.cv2", (2 + n) * hidden, c, 1, 1))
        return blocks
    # ClassifyHead: the 1x1 conv block; the linear layer is handled separately
    return [_ConvBlockInfo("head.conv", spec.in_channels, spec.out_channels, 1, 1)]


class Model:
    """Immutable layer graph; weights are attached by bind()."""

    def __init__(self, config: ModelConfig, layers: tuple[LayerSpec, ...],
                 weights: WeightStore | None = None, _exec=None, folded: bool = True):
        _validate_chain(layers)
        self.config = config
        self.layers = tuple(layers)
        self.weights = weights
        self._exec = _exec
        self.folded = folded

    @property
    def is_bound(self) -> bool:
        return self._exec is not None

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].out_channels

    @property
    def stride(self) -> int:
        s = 1
        for spec in self.layers:
            if spec.kind == "ConvBlock":
                s *= spec.stride
        return s

    def conv_blocks(self) -> list[_ConvBlockInfo]:
        out = []
        for i, spec in enumerate(self.layers):
            out.extend(_conv_blocks_of(i, spec))
        return out

    def bind(self, store: WeightStore, fold: bool = True) -> "Model":
        """Return a new model with weights bound; validates the tensor set exactly."""
        expected = expected_tensors(self)
        have = set(store.records)
        missing = sorted(set(expected) - have)
        extra = sorted(have - set(expected))
        if missing or extra:
            raise BindError(
                f"weight store does not match the graph: "
                f"missing={missing if missing else 'none'}, extra={extra if extra else 'none'}"
            )
        bad = [
            f"{name}: store {store.records[name].dims} vs graph {expected[name]}"
            for name in expected
            if tuple(store.records[name].dims) != expected[name]
        ]
        if bad:
            raise BindError("tensor shape mismatch: " + "; ".join(sorted(bad)))
        plan = _build_exec(self, store, fold)
        return Model(self.config, self.layers, weights=store, _exec=plan, folded=fold)


def build_yolov8_cls(config: ModelConfig) -> Model:
    return Model(config, _n_variant_layers())


def build_model(arch: str, num_classes: int) -> Model:
    try:
        layers = ARCHITECTURES[arch]()
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; known: {sorted(ARCHITECTURES)}")
    return Model(ModelConfig(num_classes=num_classes), layers)


def expected_tensors(model: Model) -> dict[str, tuple[int, ...]]:
    """Every tensor name the graph binds, with its exact shape."""
    out: dict[str, tuple[int, ...]] = {}
    if not model.layers:
        return out
    for b in model.conv_blocks():
        out[f"{b.prefix}.conv.weight"] = (b.c_out, b.c_in, b.kernel, b.kernel)
        for stat in ("gamma", "beta", "running_mean", "running_var"):
            out[f"{b.prefix}.bn.{stat}"] = (b.c_out,)
    out["head.linear.weight"] = (model.config.num_classes, model.feature_dim)
    out["head.linear.bias"] = (model.config.num_classes,)
    return out


def count_params(model: Model) -> int:
    """Exact trainable-parameter count; batch-norm running stats are not parameters."""
    total = 0
    for name, shape in expected_tensors(model).items():
        if name.endswith((".running_mean", ".running_var")):
            continue
        total += math.prod(shape)
    return total


def per_layer_params(model: Model) -> list[tuple[str, int]]:
    """(description, parameter count) per top-level layer, plus the linear head."""
    rows = []
    for i, spec in enumerate(model.layers):
        subtotal = 0
        for b in _conv_blocks_of(i, spec):
            subtotal += b.c_out * b.c_in * b.kernel * b.kernel + 2 * b.c_out
        desc = f"{i}: {spec.kind} {spec.in_channels}->{spec.out_channels}"
        if spec.kind == "ConvBlock":
            desc += f" k{spec.kernel} s{spec.stride}"
        elif spec.kind == "C2f":
            desc += f" n={spec.repeats}"
        rows.append((desc, subtotal))
    nc, d = model.config.num_classes, model.feature_dim
    rows.append((f"{len(model.layers)}: Linear {d}->{nc}", d * nc + nc))
    return rows


def _conv_out(size: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1


def count_macs(model: Model, input_size: int | None = None) -> dict[str, int]:
    """Multiply-accumulate count by direct per-layer enumeration at input_size.

    Returns {"macs", "flops", "aux_ops"} for a single image. flops = 2 * macs
    over conv and linear layers only; batch norm, activations, residual adds
    and pooling are tallied separately as aux_ops (BN 2/elem, SiLU 4/elem,
    add 1/elem, pool 1/elem + 1/channel).
    """
    size = input_size if input_size is not None else model.config.input_size
    if not model.layers:
        return {"macs": 0, "flops": 0, "aux_ops": 0}
    h = w = size
    macs = 0
    aux = 0
    for i, spec in enumerate(model.layers):
        for b in _conv_blocks_of(i, spec):
            if b.stride != 1 or b.kernel != 1:
                h, w = _conv_out(h, b.kernel, b.stride), _conv_out(w, b.kernel, b.stride)
            elems = b.c_out * h * w
            macs += b.kernel * b.kernel * b.c_in * elems
            aux += 6 * elems  # BN scale+shift, SiLU
        if spec.kind == "C2f" and spec.shortcut:
            aux += spec.repeats * (spec.out_channels // 2) * h * w
    nc, d = model.config.num_classes, model.feature_dim
    aux += d * h * w + d  # global average pool
    macs += d * nc
    return {"macs": macs, "flops": 2 * macs, "aux_ops": aux}


def stride_probe_flops(model: Model, input_size: int) -> int:
    """FLOPs estimate by the probe-at-stride convention of published model tables.

    The model family's published benchmark tables profile a single image at
    the model's total stride (the smallest valid input) and scale the result
    quadratically to the quoted size. This inflates layers whose cost does
    not scale with input area (the classify head's pooled linear layer), so
    the figure differs from direct enumeration; both are reported.
    """
    probe = model.stride
    probe_flops = count_macs(model, probe)["flops"]
    return round(probe_flops * (input_size / probe) ** 2)


# ---------------------------------------------------------------------------
# execution


class _BoundConvBlock:
    """conv (+ optional bn) + silu with weights materialized."""

    def __init__(self, conv: ConvParams, bn: BnParams | None):
        self.conv = conv
        self.bn = bn

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv2d_lowered(x, self.conv)
        if self.bn is not None:
            y = T.batchnorm_infer(y, self.bn)
        return T.silu(y)


class _ExecConvBlock:
    def __init__(self, block: _BoundConvBlock):
        self.block = block

    def __call__(self, x: Tensor) -> Tensor:
        return self.block(x)


class _ExecC2f:
    def __init__(self, cv1: _BoundConvBlock, bottlenecks: list[tuple[_BoundConvBlock, _BoundConvBlock]],
                 cv2: _BoundConvBlock, hidden: int, shortcut: bool):
        self.cv1 = cv1
        self.bottlenecks = bottlenecks
        self.cv2 = cv2
        self.hidden = hidden
        self.shortcut = shortcut

    def __call__(self, x: Tensor) -> Tensor:
        y = self.cv1(x)
        half_a, half_b = T.split_channels(y, [self.hidden, self.hidden])
        branches = [half_a, half_b]
        z = half_b
        for m_cv1, m_cv2 in self.bottlenecks:
            out = m_cv2(m_cv1(z))
            z = T.add(z, out) if self.shortcut else out
            branches.append(z)
        return self.cv2(T.concat_channels(*branches))


class _ExecHead:
    def __init__(self, conv: _BoundConvBlock, weight: np.ndarray, bias: np.ndarray):
        self.conv = conv
        self.weight = weight
        self.bias = bias

    def features(self, x: Tensor) -> np.ndarray:
        pooled = T.global_avg_pool(self.conv(x))
        n, c, _, _ = pooled.shape
        return pooled.data.reshape(n, c)

    def __call__(self, x: Tensor) -> np.ndarray:
        return T.linear(self.features(x), self.weight, self.bias)


def _bind_conv_block(info: _ConvBlockInfo, store: WeightStore, fold: bool) -> _BoundConvBlock:
    weight = Tensor(store[f"{info.prefix}.conv.weight"])
    bn = BnParams(
        gamma=store[f"{info.prefix}.bn.gamma"],
        beta=store[f"{info.prefix}.bn.beta"],
        running_mean=store[f"{info.prefix}.bn.running_mean"],
        running_var=store[f"{info.prefix}.bn.running_var"],
        eps=float(store.metadata.get("bn_eps", DEFAULT_BN_EPS)),
    )
    conv = ConvParams(weight=weight, bias=None, stride=info.stride, padding=info.kernel // 2)
    if fold:
        return _BoundConvBlock(T.fold_bn(conv, bn), None)
    return _BoundConvBlock(conv, bn)


def _build_exec(model: Model, store: WeightStore, fold: bool):
    plan = []
    for i, spec in enumerate(model.layers):
        blocks = [_bind_conv_block(b, store, fold) for b in _conv_blocks_of(i, spec)]
        if spec.kind == "ConvBlock":
            plan.append(_ExecConvBlock(blocks[0]))
        elif spec.kind == "C2f":
            pairs = [(blocks[j], blocks[j + 1]) for j in range(1, len(blocks) - 1, 2)]
            plan.append(_ExecC2f(blocks[0], pairs, blocks[-1],
                                 spec.out_channels // 2, spec.shortcut))
        else:
            plan.append(_ExecHead(
                blocks[0],
                store["head.linear.weight"].reshape(model.config.num_classes, model.feature_dim),
                store["head.linear.bias"],
            ))
    return plan


def _check_forward_input(model: Model, batch: Tensor) -> None:
    if not model.is_bound:
        raise UnboundModelError("model weights are not bound; call bind() first")
    n, c, h, w = batch.shape
    want = model.layers[0].in_channels
    if c != want:
        raise ShapeError(f"input has {c} channels, graph expects {want}")
    if h < model.stride or w < model.stride:
        raise ShapeError(f"input {h}x{w} smaller than total stride {model.stride}")


def forward(model: Model, batch: Tensor) -> np.ndarray:
    """Run the full graph; returns logits of shape (n, num_classes)."""
    _check_forward_input(model, batch)
    x = batch
    for stage in model._exec[:-1]:
        x = stage(x)
    return model._exec[-1](x)


def forward_features(model: Model, batch: Tensor) -> np.ndarray:
    """Run everything up to (and including) the pooled head conv; (n, feature_dim)."""
    _check_forward_input(model, batch)
    x = batch
    for stage in model._exec[:-1]:
        x = stage(x)
    return model._exec[-1].features(x)


# ---------------------------------------------------------------------------
# weight initialization helpers


def random_weight_store(model: Model, seed: int = 0, init: str = "kaiming") -> WeightStore:
    """A full weight store for the graph: seeded random or all-zero.

    Random init draws conv weights from N(0, sqrt(2/fan_in)) and the linear
    layer from U(-1/sqrt(d), 1/sqrt(d)); batch norm starts as the identity.
    """
    if init not in ("kaiming", "zeros"):
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    store = WeightStore(metadata={
        "arch": _arch_name(model),
        "nc": model.config.num_classes,
        "bn_eps": DEFAULT_BN_EPS,
        "normalization": "div255",
    })
    for name, shape in expected_tensors(model).items():
        if name.endswith(".bn.running_var"):
            store.add(name, np.ones(shape, dtype=np.float32))
        elif name.endswith((".bn.running_mean", ".bn.beta", ".bias")):
            store.add(name, np.zeros(shape, dtype=np.float32))
        elif name.endswith(".bn.gamma"):
            values = np.zeros(shape) if init == "zeros" else np.ones(shape)
            store.add(name, values.astype(np.float32))
        elif init == "zeros":
            store.add(name, np.zeros(shape, dtype=np.float32))
        elif name == "head.linear.weight":
            bound = 1.0 / math.sqrt(shape[1])
            store.add(name, rng.uniform(-bound, bound, size=shape).astype(np.float32))
        else:
            fan_in = math.prod(shape[1:])
            std = math.sqrt(2.0 / fan_in)
            store.add(name, (rng.standard_normal(shape) * std).astype(np.float32))
    return store


def _arch_name(model: Model) -> str:
    for name, builder in ARCHITECTURES.items():
        if builder() == model.layers:
            return name
    return "custom"
