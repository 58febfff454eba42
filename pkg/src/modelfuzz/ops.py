"""Operator catalog: arities, attribute schemas, shape rules, weight synthesis.

The catalog is closed. Every operator consumes one tensor except Add and
Concat, which consume an ordered pair, and every operator produces exactly
one tensor. Feature maps are laid out channel-first; spatial operators
require rank-3 inputs (C, H, W) while pointwise operators accept any rank
with channels on axis 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ShapeMismatch

_REQUIRED = object()


@dataclass(frozen=True)
class OperatorKind:
    """Static description of one operator in the catalog."""

    name: str
    arity: tuple[int, int]
    attr_schema: Mapping[str, Any]


CATALOG: dict[str, OperatorKind] = {
    k.name: k
    for k in (
        OperatorKind("Conv2D", (1, 1), {"channels": _REQUIRED, "kernel": 3, "stride": 1, "padding": "same"}),
        OperatorKind("DepthwiseConv2D", (1, 1), {"kernel": 3, "stride": 1, "padding": "same"}),
        OperatorKind("BatchNorm", (1, 1), {"eps": 1e-5}),
        OperatorKind("ReLU", (1, 1), {}),
        OperatorKind("LeakyReLU", (1, 1), {"alpha": 0.1}),
        OperatorKind("Sigmoid", (1, 1), {}),
        OperatorKind("Tanh", (1, 1), {}),
        OperatorKind("MaxPool2D", (1, 1), {"kernel": 3, "stride": 1, "padding": "same"}),
        OperatorKind("AvgPool2D", (1, 1), {"kernel": 3, "stride": 1, "padding": "same"}),
        OperatorKind("Add", (2, 1), {}),
        OperatorKind("Concat", (2, 1), {"axis": 0}),
        OperatorKind("MatMul", (1, 1), {"channels": _REQUIRED}),
        OperatorKind("Softmax", (1, 1), {"axis": 0}),
        OperatorKind("Upsample", (1, 1), {"scale": 2, "mode": "nearest"}),
        OperatorKind("Identity", (1, 1), {}),
    )
}

UNARY_KINDS: tuple[str, ...] = tuple(k for k, v in CATALOG.items() if v.arity[0] == 1)
BINARY_KINDS: tuple[str, ...] = tuple(k for k, v in CATALOG.items() if v.arity[0] == 2)

_SPATIAL = ("Conv2D", "DepthwiseConv2D", "MaxPool2D", "AvgPool2D")
_PRESERVING = ("BatchNorm", "ReLU", "LeakyReLU", "Sigmoid", "Tanh", "Softmax", "Identity")


def normalize_attrs(kind: str, attrs: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Apply schema defaults and reject unknown or missing attributes."""
    spec = CATALOG.get(kind)
    if spec is None:
        raise ShapeMismatch(f"unknown operator kind {kind!r}")
    given = dict(attrs or {})
    out: dict[str, Any] = {}
    for name, default in spec.attr_schema.items():
        if name in given:
            out[name] = given.pop(name)
        elif default is _REQUIRED:
            raise ShapeMismatch(f"{kind}: missing required attribute {name!r}")
        else:
            out[name] = default
    if given:
        raise ShapeMismatch(f"{kind}: unknown attributes {sorted(given)}")
    if kind in ("Concat", "Softmax") and out["axis"] != 0:
        raise ShapeMismatch(f"{kind}: only axis 0 is supported")
    if kind in _SPATIAL:
        if out["padding"] not in ("same", "valid"):
            raise ShapeMismatch(f"{kind}: padding must be 'same' or 'valid'")
        if out["kernel"] < 1 or out["stride"] < 1:
            raise ShapeMismatch(f"{kind}: kernel and stride must be positive")
    if kind == "Upsample":
        if out["mode"] != "nearest":
            raise ShapeMismatch("Upsample: only nearest mode is supported")
        if out["scale"] < 1:
            raise ShapeMismatch("Upsample: scale must be positive")
    return out


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Low/high padding so the output spatial size is ceil(size / stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    lo = total // 2
    return lo, total - lo


def _spatial_out(size: int, kernel: int, stride: int, padding: str, kind: str) -> int:
    if padding == "same":
        return -(-size // stride)
    if size < kernel:
        raise ShapeMismatch(f"{kind}: spatial size {size} smaller than kernel {kernel}")
    return (size - kernel) // stride + 1


def infer_edge_shape(
    kind: str, attrs: Mapping[str, Any], in_shapes: Sequence[tuple[int, ...]]
) -> tuple[int, ...]:
    """Output shape of one operator application, or ShapeMismatch."""
    spec = CATALOG[kind]
    if len(in_shapes) != spec.arity[0]:
        raise ShapeMismatch(f"{kind}: expects {spec.arity[0]} inputs, got {len(in_shapes)}")
    for s in in_shapes:
        if len(s) < 1 or any(d < 1 for d in s):
            raise ShapeMismatch(f"{kind}: degenerate input shape {s}")

    if kind in _SPATIAL:
        shape = in_shapes[0]
        if len(shape) != 3:
            raise ShapeMismatch(f"{kind}: requires a rank-3 input, got shape {shape}")
        c, h, w = shape
        ho = _spatial_out(h, attrs["kernel"], attrs["stride"], attrs["padding"], kind)
        wo = _spatial_out(w, attrs["kernel"], attrs["stride"], attrs["padding"], kind)
        co = attrs["channels"] if kind == "Conv2D" else c
        return (co, ho, wo)
    if kind == "Upsample":
        shape = in_shapes[0]
        if len(shape) != 3:
            raise ShapeMismatch(f"Upsample: requires a rank-3 input, got shape {shape}")
        c, h, w = shape
        return (c, h * attrs["scale"], w * attrs["scale"])
    if kind in _PRESERVING:
        return tuple(in_shapes[0])
    if kind == "MatMul":
        return (attrs["channels"],) + tuple(in_shapes[0][1:])
    if kind == "Add":
        a, b = in_shapes
        if tuple(a) != tuple(b):
            raise ShapeMismatch(f"Add: shapes {a} and {b} differ")
        return tuple(a)
    if kind == "Concat":
        a, b = in_shapes
        if len(a) != len(b) or tuple(a[1:]) != tuple(b[1:]):
            raise ShapeMismatch(f"Concat: shapes {a} and {b} only differ on axis 0")
        return (a[0] + b[0],) + tuple(a[1:])
    raise ShapeMismatch(f"unknown operator kind {kind!r}")


def out_channels(kind: str, attrs: Mapping[str, Any], in_channels: Sequence[int]) -> int:
    """Channel count produced by an operator, without full shapes."""
    if kind in ("Conv2D", "MatMul"):
        return int(attrs["channels"])
    if kind == "Concat":
        return int(in_channels[0] + in_channels[1])
    if kind == "Add":
        if in_channels[0] != in_channels[1]:
            raise ShapeMismatch(f"Add: channel dims {in_channels} differ")
        return int(in_channels[0])
    return int(in_channels[0])


def param_shapes(kind: str, attrs: Mapping[str, Any], in_channels: int) -> dict[str, tuple[int, ...]]:
    """Expected weight shapes for one operator application. Empty for weightless kinds."""
    if kind == "Conv2D":
        k = attrs["kernel"]
        co = attrs["channels"]
        return {"weight": (co, in_channels, k, k), "bias": (co,)}
    if kind == "DepthwiseConv2D":
        k = attrs["kernel"]
        return {"weight": (in_channels, 1, k, k), "bias": (in_channels,)}
    if kind == "BatchNorm":
        return {
            "gamma": (in_channels,),
            "beta": (in_channels,),
            "mean": (in_channels,),
            "var": (in_channels,),
        }
    if kind == "MatMul":
        co = attrs["channels"]
        return {"weight": (co, in_channels), "bias": (co,)}
    return {}


def synthesize_params(
    kind: str,
    attrs: Mapping[str, Any],
    in_channels: int,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Draw a plausible weight set for one operator from the given generator.

    Scales follow the usual fan-in heuristic so activations stay tame when
    layers are chained; BatchNorm statistics hover near the identity map.
    """
    shapes = param_shapes(kind, attrs, in_channels)
    if not shapes:
        return {}
    out: dict[str, np.ndarray] = {}
    if kind in ("Conv2D", "DepthwiseConv2D", "MatMul"):
        w_shape = shapes["weight"]
        fan_in = int(np.prod(w_shape[1:]))
        std = math.sqrt(2.0 / max(fan_in, 1))
        out["weight"] = rng.normal(0.0, std, w_shape).astype(np.float32)
        out["bias"] = rng.normal(0.0, 0.01, shapes["bias"]).astype(np.float32)
    elif kind == "BatchNorm":
        c = in_channels
        out["gamma"] = (1.0 + 0.05 * rng.normal(size=c)).astype(np.float32)
        out["beta"] = (0.05 * rng.normal(size=c)).astype(np.float32)
        out["mean"] = (0.05 * rng.normal(size=c)).astype(np.float32)
        out["var"] = (1.0 + 0.1 * np.abs(rng.normal(size=c))).astype(np.float32)
    return out


def to_half_precision(x: np.ndarray) -> np.ndarray:
    """Emulate float16 storage: 10-bit mantissa, round to nearest even."""
    return np.asarray(x, dtype=np.float32).astype(np.float16).astype(np.float32)
