"""Sequential network definitions with named parameters.

A ``NetworkDef`` is a declarative layer list; parameters live outside it
in a plain ``{name: ndarray}`` dict so checkpointing, optimization and
gradient checking all see flat named arrays. ``forward`` returns the
output plus a single-use tape; ``backprop`` turns an output gradient
into one gradient array per parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var


class ShapeError(ValueError):
    """Layer chain or input shape is inconsistent."""


class TapeError(RuntimeError):
    """Backprop called on a missing or already-consumed tape."""


@dataclass(frozen=True)
class LayerDef:
    """One layer descriptor.

    kinds: affine(features), conv(channels, stride, kernel), leaky_relu(alpha),
    sigmoid, reshape(shape), upsample2x.
    """

    kind: str
    features: int = 0
    channels: int = 0
    kernel: int = 3
    stride: int = 1
    alpha: float = 0.1
    shape: tuple[int, ...] = ()


def affine(features: int) -> LayerDef:
    return LayerDef("affine", features=features)


def conv(channels: int, stride: int = 1, kernel: int = 3) -> LayerDef:
    return LayerDef("conv", channels=channels, stride=stride, kernel=kernel)


def leaky_relu(alpha: float = 0.1) -> LayerDef:
    return LayerDef("leaky_relu", alpha=alpha)


def sigmoid() -> LayerDef:
    return LayerDef("sigmoid")


def reshape(shape: tuple[int, ...]) -> LayerDef:
    return LayerDef("reshape", shape=tuple(shape))


def upsample2x() -> LayerDef:
    return LayerDef("upsample2x")


@dataclass
class NetworkDef:
    """Ordered layers plus the registry of parameter names and shapes."""

    name: str
    input_shape: tuple[int, ...]  # per-sample shape, no batch axis
    layers: list[LayerDef] = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.output_shape = self._validate()

    def _validate(self) -> tuple[int, ...]:
        shape = self.input_shape
        names = set()
        for i, layer in enumerate(self.layers):
            shape = _infer_shape(layer, shape, where=f"{self.name}[{i}]")
            for pname, _ in _layer_params(self.name, i, layer, shape):
                if pname in names:
                    raise ShapeError(f"duplicate parameter name {pname}")
                names.add(pname)
        return shape

    def param_specs(self) -> list[tuple[str, tuple[int, ...]]]:
        specs = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            in_shape = shape
            shape = _infer_shape(layer, shape, where=f"{self.name}[{i}]")
            specs.extend(_layer_params(self.name, i, layer, in_shape))
        return specs

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
        """Uniform fan-in initialization, deterministic in rng state."""
        params = {}
        for name, shape in self.param_specs():
            if name.endswith(".b"):
                fan_in = _bias_fan_in(name, params)
            elif len(shape) == 2:
                fan_in = shape[0]
            else:
                fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(max(fan_in, 1))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return params

    def apply(self, params: dict, x: Var) -> Var:
        """Run the layer chain on a batched Var; params may hold Vars or arrays."""
        if tuple(x.value.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"{self.name}: input shape {x.value.shape[1:]} != declared {self.input_shape}"
            )
        out = x
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            in_shape = shape
            shape = _infer_shape(layer, shape, where=f"{self.name}[{i}]")
            if layer.kind == "affine":
                w = _as_param(params, f"{self.name}.{i}.affine.w")
                b = _as_param(params, f"{self.name}.{i}.affine.b")
                out = ad.affine(out, w, b)
            elif layer.kind == "conv":
                w = _as_param(params, f"{self.name}.{i}.conv.w")
                b = _as_param(params, f"{self.name}.{i}.conv.b")
                out = ad.conv2d(out, w, b, stride=layer.stride, padding=layer.kernel // 2)
            elif layer.kind == "leaky_relu":
                out = ad.leaky_relu(out, alpha=layer.alpha)
            elif layer.kind == "sigmoid":
                out = ad.sigmoid(out)
            elif layer.kind == "reshape":
                out = ad.reshape(out, (out.value.shape[0],) + layer.shape)
            elif layer.kind == "upsample2x":
                out = ad.upsample2x(out)
            else:
                raise ShapeError(f"unknown layer kind {layer.kind!r}")
            del in_shape
        return out


def _as_param(params: dict, name: str) -> Var:
    try:
        p = params[name]
    except KeyError:
        raise TapeError(f"missing parameter {name}") from None
    return p if isinstance(p, Var) else ad.constant(p)


def _bias_fan_in(bias_name: str, params: dict) -> int:
    w = params[bias_name[: -len(".b")] + ".w"]
    return w.shape[0] if w.ndim == 2 else int(np.prod(w.shape[1:]))


def _infer_shape(layer: LayerDef, shape: tuple[int, ...], where: str) -> tuple[int, ...]:
    if layer.kind == "affine":
        if len(shape) != 1:
            raise ShapeError(f"{where}: affine needs a flat input, got {shape}")
        return (layer.features,)
    if layer.kind == "conv":
        if len(shape) != 3:
            raise ShapeError(f"{where}: conv needs (C, H, W) input, got {shape}")
        c, h, w = shape
        pad = layer.kernel // 2
        oh = (h + 2 * pad - layer.kernel) // layer.stride + 1
        ow = (w + 2 * pad - layer.kernel) // layer.stride + 1
        if oh <= 0 or ow <= 0:
            raise ShapeError(f"{where}: conv collapses spatial dims from {shape}")
        return (layer.channels, oh, ow)
    if layer.kind in ("leaky_relu", "sigmoid"):
        return shape
    if layer.kind == "reshape":
        if int(np.prod(shape)) != int(np.prod(layer.shape)):
            raise ShapeError(f"{where}: cannot reshape {shape} to {layer.shape}")
        return layer.shape
    if layer.kind == "upsample2x":
        if len(shape) != 3:
            raise ShapeError(f"{where}: upsample2x needs (C, H, W) input, got {shape}")
        return (shape[0], shape[1] * 2, shape[2] * 2)
    raise ShapeError(f"{where}: unknown layer kind {layer.kind!r}")


def _layer_params(net_name: str, i: int, layer: LayerDef, in_shape) -> list:
    if layer.kind == "affine":
        return [
            (f"{net_name}.{i}.affine.w", (in_shape[0], layer.features)),
            (f"{net_name}.{i}.affine.b", (layer.features,)),
        ]
    if layer.kind == "conv":
        return [
            (f"{net_name}.{i}.conv.w", (layer.channels, in_shape[0], layer.kernel, layer.kernel)),
            (f"{net_name}.{i}.conv.b", (layer.channels,)),
        ]
    return []


class Tape:
    """Single-use record of one forward pass."""

    def __init__(self, output: Var, param_vars: dict[str, Var]):
        self.output = output
        self.param_vars = param_vars
        self._used = False

    def grads(self, output_grad: np.ndarray) -> dict[str, np.ndarray]:
        if self._used:
            raise TapeError("tape already consumed by a previous backprop")
        self._used = True
        self.output.backward(output_grad)
        return {
            name: (np.zeros_like(v.value) if v.grad is None else v.grad)
            for name, v in self.param_vars.items()
        }


def forward(net: NetworkDef, params: dict[str, np.ndarray], x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run the net, returning the output array and a tape for backprop."""
    param_vars = {name: ad.param(value) for name, value in params.items()}
    out = net.apply(param_vars, ad.constant(np.asarray(x)))
    return out.value, Tape(out, param_vars)


def backprop(tape: Tape, output_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of (output · output_grad) w.r.t. every registered parameter."""
    if tape is None:
        raise TapeError("backprop needs the tape from a forward call")
    return tape.grads(np.asarray(output_grad))
