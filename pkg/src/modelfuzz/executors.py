"""Two graph interpreters plus an external-runner bridge.

The reference interpreter evaluates every operator in plain float32. The
optimizing interpreter runs the same kernels but can fold BatchNorm into a
preceding Conv, truncate every intermediate to emulated float16, recycle
dead intermediate buffers, and apply injected faults. With every option off
the two produce bit-identical results because they share one evaluation
core.

Crashes never abort the process: they come back as structured results whose
log text carries synthetic stack frames naming the entry-point APIs, which
the downstream log filter keys on.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Sequence

import numpy as np

from . import ops
from .errors import ProtocolViolation, ShapeMismatch
from .graph import ComponentGraph, OpEdge, Tensor, infer_shapes, toposort_edges

API_ENTRY_POINTS = (
    "graphexec::run_graph",
    "graphexec::execute_reference",
    "graphexec::execute_optimized",
)

EXCHANGE_KEYWORD = "tensor"


@dataclass(frozen=True)
class FaultSpec:
    """One injected defect: a trigger predicate and its effect.

    The trigger matches on operator kind and, optionally, on the channel
    count of the operator's output tensor. Effects are raise_crash (with a
    message template that may reference {shape}), emit_nan, or
    corrupt_output (additive perturbation of the given magnitude).
    """

    id: str
    kind: str
    effect: str
    channels: int | None = None
    message: str = ""
    magnitude: float = 0.0

    def __post_init__(self) -> None:
        if self.effect not in ("raise_crash", "emit_nan", "corrupt_output"):
            raise ProtocolViolation(f"fault {self.id!r}: unknown effect {self.effect!r}")
        if self.kind not in ops.CATALOG:
            raise ProtocolViolation(f"fault {self.id!r}: unknown operator kind {self.kind!r}")

    def matches(self, kind: str, out_shape: tuple[int, ...]) -> bool:
        if kind != self.kind:
            return False
        return self.channels is None or int(out_shape[0]) == self.channels


def load_faults(path: str | None) -> tuple[FaultSpec, ...]:
    """Fault set from a config file; "builtin" loads the packaged fixture."""
    if path is None:
        return ()
    if path == "builtin":
        text = resources.files("modelfuzz.data").joinpath("faults_fixture.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
        out = []
        for entry in doc["faults"]:
            trig = entry["trigger"]
            eff = entry["effect"]
            out.append(
                FaultSpec(
                    id=entry["id"],
                    kind=trig["kind"],
                    channels=trig.get("channels"),
                    effect=eff["type"],
                    message=eff.get("message", ""),
                    magnitude=float(eff.get("magnitude", 0.0)),
                )
            )
        return tuple(out)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation(f"malformed fault file {path!r}: {exc}") from exc


@dataclass(frozen=True)
class OptimizerConfig:
    """Optimizing-interpreter switches. Everything defaults to off."""

    fuse_conv_bn: bool = False
    reduced_precision: bool = False
    buffer_reuse: bool = False
    fault_injections: tuple[FaultSpec, ...] = ()


@dataclass
class ExecutionResult:
    """Outcome of one graph execution."""

    status: str  # "ok" | "crash"
    outputs: dict[str, Tensor] = field(default_factory=dict)
    crash_log: str | None = None
    wall_time: float = 0.0

    def __post_init__(self) -> None:
        if self.status == "ok" and self.crash_log is not None:
            raise ProtocolViolation("ok result must not carry a crash log")
        if self.status == "crash" and self.outputs:
            raise ProtocolViolation("crash result must not carry outputs")


class KernelCrash(Exception):
    """Internal signal that a kernel hit an unevaluable numeric domain."""

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


# ---------------------------------------------------------------------------
# Kernels: pure float32 numpy implementations of the catalog


def _pool_windows(x: np.ndarray, attrs: Mapping[str, Any], pad_value: float) -> np.ndarray:
    k, s, padding = attrs["kernel"], attrs["stride"], attrs["padding"]
    if padding == "same":
        plo, phi = ops.same_padding(x.shape[1], k, s)
        qlo, qhi = ops.same_padding(x.shape[2], k, s)
        x = np.pad(x, ((0, 0), (plo, phi), (qlo, qhi)), constant_values=pad_value)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    return win[:, ::s, ::s]


def _conv2d(attrs: Mapping[str, Any], params: Mapping[str, np.ndarray], ins: Sequence[np.ndarray]) -> np.ndarray:
    win = _pool_windows(ins[0], attrs, 0.0)
    out = np.einsum("cijkl,ockl->oij", win, params["weight"], dtype=np.float32)
    return (out + params["bias"][:, None, None]).astype(np.float32)


def _depthwise(attrs: Mapping[str, Any], params: Mapping[str, np.ndarray], ins: Sequence[np.ndarray]) -> np.ndarray:
    win = _pool_windows(ins[0], attrs, 0.0)
    out = np.einsum("cijkl,ckl->cij", win, params["weight"][:, 0], dtype=np.float32)
    return (out + params["bias"][:, None, None]).astype(np.float32)


def _batchnorm(attrs: Mapping[str, Any], params: Mapping[str, np.ndarray], ins: Sequence[np.ndarray]) -> np.ndarray:
    x = ins[0]
    expand = (slice(None),) + (None,) * (x.ndim - 1)
    scale = params["gamma"] / np.sqrt(params["var"] + np.float32(attrs["eps"]))
    return ((x - params["mean"][expand]) * scale[expand] + params["beta"][expand]).astype(np.float32)


def _maxpool(attrs: Mapping[str, Any], params: Mapping[str, np.ndarray], ins: Sequence[np.ndarray]) -> np.ndarray:
    return _pool_windows(ins[0], attrs, -np.inf).max(axis=(3, 4)).astype(np.float32)


def _avgpool(attrs: Mapping[str, Any], params: Mapping[str, np.ndarray], ins: Sequence[np.ndarray]) -> np.ndarray:
    # Zero padding counts toward the window average (include-pad semantics).
    return _pool_windows(ins[0], attrs, 0.0).mean(axis=(3, 4), dtype=np.float32)


def _matmul(attrs: Mapping[str, Any], params: Mapping[str, np.ndarray], ins: Sequence[np.ndarray]) -> np.ndarray:
    out = np.einsum("oc,c...->o...", params["weight"], ins[0], dtype=np.float32)
    bias = params["bias"][(slice(None),) + (None,) * (out.ndim - 1)]
    return (out + bias).astype(np.float32)


def _softmax(attrs: Mapping[str, Any], params: Mapping[str, np.ndarray], ins: Sequence[np.ndarray]) -> np.ndarray:
    x = ins[0]
    peak = x.max(axis=0, keepdims=True)
    if np.isneginf(peak).any():
        shape = "x".join(str(d) for d in x.shape)
        raise KernelCrash(
            f"numeric domain violation: softmax over fully negative-infinite support in tensor<{shape}>"
        )
    e = np.exp((x - peak).astype(np.float32))
    return (e / e.sum(axis=0, keepdims=True)).astype(np.float32)


def _upsample(attrs: Mapping[str, Any], params: Mapping[str, np.ndarray], ins: Sequence[np.ndarray]) -> np.ndarray:
    s = attrs["scale"]
    return np.repeat(np.repeat(ins[0], s, axis=1), s, axis=2)


KERNELS = {
    "Conv2D": _conv2d,
    "DepthwiseConv2D": _depthwise,
    "BatchNorm": _batchnorm,
    "ReLU": lambda a, p, ins: np.maximum(ins[0], np.float32(0.0)),
    "LeakyReLU": lambda a, p, ins: np.where(ins[0] >= 0, ins[0], np.float32(a["alpha"]) * ins[0]).astype(np.float32),
    "Sigmoid": lambda a, p, ins: (np.float32(1.0) / (np.float32(1.0) + np.exp(-ins[0]))).astype(np.float32),
    "Tanh": lambda a, p, ins: np.tanh(ins[0]).astype(np.float32),
    "MaxPool2D": _maxpool,
    "AvgPool2D": _avgpool,
    "Add": lambda a, p, ins: (ins[0] + ins[1]).astype(np.float32),
    "Concat": lambda a, p, ins: np.concatenate([ins[0], ins[1]], axis=0),
    "MatMul": _matmul,
    "Softmax": _softmax,
    "Upsample": _upsample,
    "Identity": lambda a, p, ins: ins[0].copy(),
}


# ---------------------------------------------------------------------------
# Crash-log rendering


def _pseudo_addr(material: str, frame: int) -> str:
    return "0x" + hashlib.sha256(f"{material}:{frame}".encode()).hexdigest()[:12]


def render_crash_log(message: str, kind: str, entry_api: str, material: str) -> str:
    """Synthetic crash log: one message line plus three stack frames."""
    return "\n".join(
        [
            f"fault: {message}",
            f"  at kernel::{kind.lower()}_forward addr={_pseudo_addr(material, 0)}",
            f"  at graphexec::run_graph addr={_pseudo_addr(material, 1)}",
            f"  at {entry_api} addr={_pseudo_addr(material, 2)}",
        ]
    )


# ---------------------------------------------------------------------------
# Fusion rewrite


def _fold_conv_bn(graph: ComponentGraph, edges: Sequence[OpEdge]) -> list[OpEdge]:
    """Fold BatchNorm into a preceding Conv2D it solely consumes.

    The folded Conv writes straight to the BatchNorm's target; the original
    intermediate vertex simply never gets a value. Exit vertices keep their
    producers so outputs are unaffected structurally.
    """
    consumers: dict[str, int] = {}
    for e in edges:
        for s in e.sources:
            consumers[s] = consumers.get(s, 0) + 1
    bn_after: dict[str, OpEdge] = {
        e.sources[0]: e for e in edges if e.kind == "BatchNorm"
    }
    folded: dict[str, OpEdge] = {}  # conv target vid -> replacement edge
    dropped: set[int] = set()
    for e in edges:
        if e.kind != "Conv2D":
            continue
        bn = bn_after.get(e.target)
        if bn is None or consumers.get(e.target, 0) != 1 or e.target in graph.exits:
            continue
        scale = (bn.params["gamma"] / np.sqrt(bn.params["var"] + np.float32(bn.attrs["eps"]))).astype(np.float32)
        weight = (e.params["weight"] * scale[:, None, None, None]).astype(np.float32)
        bias = ((e.params["bias"] - bn.params["mean"]) * scale + bn.params["beta"]).astype(np.float32)
        folded[e.target] = OpEdge(
            "Conv2D", dict(e.attrs), e.sources, bn.target, {"weight": weight, "bias": bias}
        )
        dropped.add(id(bn))
    out: list[OpEdge] = []
    for e in edges:
        if id(e) in dropped:
            continue
        out.append(folded.get(e.target, e))
    return out


# ---------------------------------------------------------------------------
# Shared evaluation core


def _run_graph(
    graph: ComponentGraph,
    entry_arrays: Sequence[np.ndarray],
    cfg: OptimizerConfig,
    entry_api: str,
    output_labels: Sequence[str],
) -> ExecutionResult:
    start = time.perf_counter()
    edges = list(toposort_edges(graph))
    if cfg.fuse_conv_bn:
        edges = _fold_conv_bn(graph, edges)

    values: dict[str, np.ndarray] = {}
    for vid, arr in zip(graph.entries, entry_arrays):
        values[vid] = np.asarray(arr, dtype=np.float32)

    # Liveness for buffer recycling: last edge index that reads each vertex.
    last_use: dict[str, int] = {}
    for i, e in enumerate(edges):
        for s in e.sources:
            last_use[s] = i
    protected = set(graph.entries) | set(graph.exits)
    pool: dict[tuple[int, ...], list[np.ndarray]] = {}

    def crash(message: str, kind: str, shape: tuple[int, ...]) -> ExecutionResult:
        material = f"{entry_api}:{kind}:{'x'.join(map(str, shape))}:{len(values)}"
        log = render_crash_log(message, kind, entry_api, material)
        return ExecutionResult("crash", crash_log=log, wall_time=time.perf_counter() - start)

    for i, e in enumerate(edges):
        ins = [values[s] for s in e.sources]
        try:
            with np.errstate(all="ignore"):  # non-finite values propagate silently
                out = KERNELS[e.kind](e.attrs, e.params, ins)
        except KernelCrash as kc:
            return crash(kc.message, e.kind, ins[0].shape)
        for f in cfg.fault_injections:
            if not f.matches(e.kind, out.shape):
                continue
            if f.effect == "raise_crash":
                shape = "x".join(str(d) for d in out.shape)
                return crash(f.message.format(shape=shape), e.kind, out.shape)
            if f.effect == "emit_nan":
                out = out.copy()
                out.reshape(-1)[::8] = np.nan
            elif f.effect == "corrupt_output":
                out = (out + np.float32(f.magnitude)).astype(np.float32)
        if cfg.reduced_precision:
            out = ops.to_half_precision(out)
        if cfg.buffer_reuse and e.target not in protected:
            bucket = pool.get(out.shape)
            if bucket:
                buf = bucket.pop()
                np.copyto(buf, out)
                out = buf
        values[e.target] = out
        if cfg.buffer_reuse:
            for s in e.sources:
                if last_use.get(s) == i and s not in protected:
                    pool.setdefault(values[s].shape, []).append(values[s])

    outputs = {
        label: Tensor(values[vid].copy(), label)
        for label, vid in zip(output_labels, graph.exits)
    }
    return ExecutionResult("ok", outputs=outputs, wall_time=time.perf_counter() - start)


def _model_parts(model: Any) -> tuple[ComponentGraph, tuple[str, ...], tuple[str, ...]]:
    if isinstance(model, ComponentGraph):
        return model, model.entries, model.exits
    graph = model.graph
    entry_keys = tuple(model.entry_labels) if model.entry_labels else graph.entries
    output_labels = tuple(model.output_labels) if model.output_labels else graph.exits
    return graph, entry_keys, output_labels


def _gather_inputs(
    graph: ComponentGraph, entry_keys: Sequence[str], inputs: Mapping[str, Any]
) -> list[np.ndarray]:
    arrays: list[np.ndarray] = []
    for key in entry_keys:
        if key not in inputs:
            raise ShapeMismatch(f"inputs missing entry {key!r}")
        val = inputs[key]
        arr = val.values if isinstance(val, Tensor) else np.asarray(val)
        arrays.append(np.asarray(arr, dtype=np.float32))
    infer_shapes(graph, [a.shape for a in arrays])
    return arrays


def execute_reference(model: Any, inputs: Mapping[str, Any]) -> ExecutionResult:
    """Plain float32 topological evaluation; the differential baseline."""
    graph, entry_keys, output_labels = _model_parts(model)
    arrays = _gather_inputs(graph, entry_keys, inputs)
    return _run_graph(graph, arrays, OptimizerConfig(), "graphexec::execute_reference", output_labels)


def execute_optimized(model: Any, inputs: Mapping[str, Any], cfg: OptimizerConfig) -> ExecutionResult:
    """Optimizing evaluation; equals the reference bit-for-bit when cfg is all-off."""
    graph, entry_keys, output_labels = _model_parts(model)
    arrays = _gather_inputs(graph, entry_keys, inputs)
    return _run_graph(graph, arrays, cfg, "graphexec::execute_optimized", output_labels)


# ---------------------------------------------------------------------------
# Tensor-exchange files and the external runner protocol


def write_tensors(path: str, tensors: Mapping[str, Any]) -> None:
    """Write a label→tensor map in the tensor-exchange text format.

    One record per tensor: a header line `tensor <label> <dtype> <rank>
    <dims...>` followed by the row-major values, whitespace-separated.
    """
    lines = []
    for label, val in tensors.items():
        arr = val.values if isinstance(val, Tensor) else np.asarray(val, dtype=np.float32)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"{EXCHANGE_KEYWORD} {label} float32 {arr.ndim} {dims}".rstrip())
        lines.append(" ".join(repr(float(x)) for x in arr.reshape(-1)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_tensors(text: str) -> dict[str, Tensor]:
    """Parse tensor-exchange text. Raises ProtocolViolation on malformed input."""
    tokens = text.split()
    out: dict[str, Tensor] = {}
    pos = 0
    while pos < len(tokens):
        if tokens[pos] != EXCHANGE_KEYWORD:
            raise ProtocolViolation(f"expected {EXCHANGE_KEYWORD!r} record, got {tokens[pos]!r}")
        try:
            label = tokens[pos + 1]
            dtype = tokens[pos + 2]
            rank = int(tokens[pos + 3])
            shape = tuple(int(d) for d in tokens[pos + 4 : pos + 4 + rank])
            if len(shape) != rank or any(d < 1 for d in shape):
                raise ValueError(f"bad shape {shape}")
            if dtype not in ("float32", "float16"):
                raise ValueError(f"unsupported dtype {dtype!r}")
            count = int(np.prod(shape))
            first = pos + 4 + rank
            raw = tokens[first : first + count]
            if len(raw) != count:
                raise ValueError(f"tensor {label!r}: expected {count} values, found {len(raw)}")
            arr = np.array([float(t) for t in raw], dtype=np.float32).reshape(shape)
        except (ValueError, IndexError) as exc:
            raise ProtocolViolation(f"malformed tensor-exchange record: {exc}") from exc
        if label in out:
            raise ProtocolViolation(f"duplicate tensor label {label!r}")
        out[label] = Tensor(arr, label, dtype=dtype)
        pos = first + count
    return out


def read_tensors(path: str) -> dict[str, Tensor]:
    with open(path) as fh:
        return parse_tensors(fh.read())


def run_external(
    model_file: str,
    inputs_file: str,
    runner_cmd: str | Sequence[str],
    timeout: float = 60.0,
) -> ExecutionResult:
    """Run `runner <model_file> <inputs_file>` and parse stdout as outputs.

    Nonzero exit or timeout becomes a crash result carrying the captured
    standard error; unparseable stdout from a clean exit raises
    ProtocolViolation.
    """
    cmd = shlex.split(runner_cmd) if isinstance(runner_cmd, str) else list(runner_cmd)
    cmd += [str(model_file), str(inputs_file)]
    start = time.perf_counter()
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        stderr = exc.stderr or ""
        if isinstance(stderr, bytes):
            stderr = stderr.decode(errors="replace")
        log = f"runner timeout after {timeout:g}s\n{stderr}".rstrip()
        return ExecutionResult("crash", crash_log=log, wall_time=time.perf_counter() - start)
    elapsed = time.perf_counter() - start
    if proc.returncode != 0:
        log = proc.stderr.strip() or f"runner exited with status {proc.returncode}"
        return ExecutionResult("crash", crash_log=log, wall_time=elapsed)
    outputs = parse_tensors(proc.stdout)
    return ExecutionResult("ok", outputs=outputs, wall_time=elapsed)
