"""Layer menu, parameter handling and the tapped forward pass.

The layer menu is intentionally small (conv / relu / max-pool / flatten /
dense, no normalization layers): enough to learn the synthetic task while
keeping every gradient checkable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qad.errors import InvalidConfigError, InvalidInputError
from qad.nn import tensor as T
from qad.nn.tensor import Tensor
from qad.util import frob_norm, rng


# -- layer specs --------------------------------------------------------------


@dataclass(frozen=True)
class Conv2d:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Dense:
    width: int


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class MaxPool2d:
    size: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


LAYER_KINDS = {"conv2d": Conv2d, "dense": Dense, "relu": Relu, "maxpool": MaxPool2d, "flatten": Flatten}


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer list plus the tap points whose activations are exported."""

    input_shape: tuple[int, int, int]  # (C, H, W)
    layers: tuple = ()
    tap_layers: tuple[int, ...] = ()
    num_classes: int = 2

    def __post_init__(self):
        for idx in self.tap_layers:
            if not 0 <= idx < len(self.layers):
                raise InvalidConfigError(f"tap layer index {idx} out of range")
        shapes = self.activation_shapes()
        final = shapes[-1]
        if final != (self.num_classes,):
            raise InvalidConfigError(f"final layer must emit {self.num_classes} logits, got shape {final}")

    def activation_shapes(self) -> list[tuple]:
        """Per-layer output shapes (sample-wise, no batch dim)."""
        shape = self.input_shape
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2d):
                if len(shape) != 3:
                    raise InvalidConfigError(f"layer {i}: conv2d needs a (C,H,W) input, got {shape}")
                c, h, w = shape
                ho = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                wo = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                if ho <= 0 or wo <= 0:
                    raise InvalidConfigError(f"layer {i}: conv2d output collapsed to zero size")
                shape = (layer.out_channels, ho, wo)
            elif isinstance(layer, MaxPool2d):
                c, h, w = shape
                if h < layer.size or w < layer.size:
                    raise InvalidConfigError(f"layer {i}: maxpool window exceeds input {shape}")
                shape = (c, h // layer.size, w // layer.size)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise InvalidConfigError(f"layer {i}: dense needs a flattened input, got {shape}")
                shape = (layer.width,)
            elif isinstance(layer, Relu):
                pass
            else:
                raise InvalidConfigError(f"unknown layer {layer!r}")
            out.append(shape)
        return out

    def to_dict(self) -> dict:
        items = []
        for layer in self.layers:
            kind = next(k for k, cls in LAYER_KINDS.items() if isinstance(layer, cls))
            d = {"type": kind}
            d.update({k: getattr(layer, k) for k in layer.__dataclass_fields__})
            items.append(d)
        return {
            "input_shape": list(self.input_shape),
            "layers": items,
            "tap_layers": list(self.tap_layers),
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        layers = []
        for item in d["layers"]:
            item = dict(item)
            kind = item.pop("type")
            if kind not in LAYER_KINDS:
                raise InvalidConfigError(f"unknown layer type {kind!r}")
            layers.append(LAYER_KINDS[kind](**item))
        return ModelSpec(
            input_shape=tuple(d["input_shape"]),
            layers=tuple(layers),
            tap_layers=tuple(d.get("tap_layers", ())),
            num_classes=d.get("num_classes", 2),
        )


def default_model_spec(image_size: int = 16) -> ModelSpec:
    """Two conv blocks (8, 16 channels) + dense 64, tapped after each block."""
    return ModelSpec(
        input_shape=(1, image_size, image_size),
        layers=(
            Conv2d(8, 3, stride=1, padding=1),
            Relu(),
            MaxPool2d(2),
            Conv2d(16, 3, stride=1, padding=1),
            Relu(),
            MaxPool2d(2),
            Flatten(),
            Dense(64),
            Relu(),
            Dense(2),
        ),
        tap_layers=(2, 5, 8),
    )


# -- parameters ----------------------------------------------------------------


class ParameterSet:
    """Ordered name -> Tensor map with a per-tensor Frobenius norm cache.

    The cache is invalidated by ``bump()``; the optimizer and the weight
    perturbation helpers call it after every in-place mutation.
    """

    def __init__(self, params: dict[str, Tensor]):
        names = list(params)
        if len(set(names)) != len(names):
            raise InvalidConfigError("duplicate parameter names")
        for name, t in params.items():
            if not t.requires_grad:
                raise InvalidConfigError(f"parameter {name!r} must require gradients")
        self._params = dict(params)
        self._order = names
        self.version = 0
        self._norm_cache: tuple[int, dict[str, float]] | None = None

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._order)

    def names(self) -> list[str]:
        return list(self._order)

    def items(self):
        for name in self._order:
            yield name, self._params[name]

    def zero_grad(self):
        for _, t in self.items():
            t.grad = None

    def bump(self):
        self.version += 1

    def frobenius_norms(self) -> dict[str, float]:
        if self._norm_cache is not None and self._norm_cache[0] == self.version:
            return self._norm_cache[1]
        norms = {name: frob_norm(t.data) for name, t in self.items()}
        self._norm_cache = (self.version, norms)
        return norms

    def copy(self) -> "ParameterSet":
        return ParameterSet({name: Tensor(t.data.copy(), requires_grad=True) for name, t in self.items()})


def param_shapes(spec: ModelSpec) -> dict[str, tuple]:
    """Parameter names and shapes implied by a model spec."""
    shapes: dict[str, tuple] = {}
    in_shape = spec.input_shape
    counts = {"conv": 0, "dense": 0}
    for layer, out_shape in zip(spec.layers, spec.activation_shapes()):
        if isinstance(layer, Conv2d):
            counts["conv"] += 1
            name = f"conv{counts['conv']}"
            shapes[f"{name}.weight"] = (layer.out_channels, in_shape[0], layer.kernel, layer.kernel)
            shapes[f"{name}.bias"] = (layer.out_channels,)
        elif isinstance(layer, Dense):
            counts["dense"] += 1
            name = f"dense{counts['dense']}"
            shapes[f"{name}.weight"] = (in_shape[0], layer.width)
            shapes[f"{name}.bias"] = (layer.width,)
        in_shape = out_shape
    return shapes


def init_params(spec: ModelSpec, seed: int, dtype=np.float32) -> ParameterSet:
    """Fan-in-scaled uniform init, deterministic in ``seed``."""
    gen = rng(seed, 0)
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            last_fan = fan_in
        else:
            fan_in = last_fan
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = Tensor(gen.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)
    return ParameterSet(params)


# -- forward --------------------------------------------------------------------


@dataclass
class ForwardResult:
    """Logits plus flattened intermediate representations.

    Tap tensors are (B, C*H*W) in channel-major order (channel varies
    slowest, then rows, then columns); ``tap_shapes`` keeps the original
    per-sample shape so spatial pooling can be applied downstream.
    """

    logits: Tensor
    taps: dict[int, Tensor] = field(default_factory=dict)
    tap_shapes: dict[int, tuple] = field(default_factory=dict)


def forward(spec: ModelSpec, params: ParameterSet, x) -> ForwardResult:
    """Run the network, exporting representations at the spec's tap layers."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 4 or x.data.shape[1:] != spec.input_shape:
        raise InvalidInputError(
            f"input shape {x.data.shape} does not match (B, {', '.join(map(str, spec.input_shape))})"
        )
    taps: dict[int, Tensor] = {}
    tap_shapes: dict[int, tuple] = {}
    counts = {"conv": 0, "dense": 0}
    out = x
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv2d):
            counts["conv"] += 1
            name = f"conv{counts['conv']}"
            out = T.conv2d(out, params[f"{name}.weight"], params[f"{name}.bias"], layer.stride, layer.padding)
        elif isinstance(layer, Relu):
            out = T.relu(out)
        elif isinstance(layer, MaxPool2d):
            out = T.maxpool2d(out, layer.size)
        elif isinstance(layer, Flatten):
            out = T.reshape(out, (out.data.shape[0], -1))
        elif isinstance(layer, Dense):
            counts["dense"] += 1
            name = f"dense{counts['dense']}"
            out = T.add(T.matmul(out, params[f"{name}.weight"]), params[f"{name}.bias"])
        if i in spec.tap_layers:
            tap_shapes[i] = out.data.shape[1:]
            taps[i] = out if out.data.ndim == 2 else T.reshape(out, (out.data.shape[0], -1))
    return ForwardResult(logits=out, taps=taps, tap_shapes=tap_shapes)


# -- probability heads ------------------------------------------------------------


def softmax_temperature(logits: np.ndarray, T_: float) -> np.ndarray:
    """Row-wise softmax of logits / T, max-subtracted for stability."""
    if T_ <= 0:
        raise InvalidConfigError(f"temperature must be positive, got {T_}")
    z = np.asarray(logits, dtype=np.float64) / T_
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigma_loss(logits: np.ndarray, label: int, T_: float = 1.0) -> float:
    """1 - temperature-softmax probability of the true class, in [0, 1]."""
    if label not in (0, 1):
        raise InvalidInputError(f"label must be 0 or 1, got {label}")
    probs = softmax_temperature(np.asarray(logits, dtype=np.float64).reshape(-1), T_)
    return float(1.0 - probs[label])


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class (differentiable).

    The per-sample losses are promoted to float64 before averaging so the
    result does not depend on how the batch happens to be ordered.
    """
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise InvalidInputError("cross_entropy expects (B, num_classes) logits")
    B, k = logits.data.shape
    if labels.shape != (B,):
        raise InvalidInputError(f"labels shape {labels.shape} does not match batch {B}")
    if not np.isin(labels, np.arange(k)).all():
        raise InvalidInputError("labels out of class range")
    m = logits.data.max(axis=1, keepdims=True)  # constant shift: exact for the gradient
    z = logits - m
    lse = T.tlog(T.tsum(T.texp(z), axis=1, keepdims=True))
    logp = z - lse
    onehot = np.eye(k, dtype=logits.data.dtype)[labels]
    per_sample = T.tsum(T.mul(logp, onehot), axis=1)
    return T.tmean(T.mul(T.cast(per_sample, np.float64), -1.0))
