"""Graph intermediate representation for blocks and component graphs.

Vertices are tensor slots annotated with a channel count; edges are operator
applications. Binary operators (Add, Concat) are hyperedges carrying an
ordered source pair. Every non-entry vertex is produced by exactly one edge.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import ops
from .errors import InvalidBlock, ShapeMismatch, UnreachableVertex


def canonical_json(doc: Any) -> str:
    """Serialize to the canonical byte form used for files and digests."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


@dataclass(frozen=True)
class Tensor:
    """A labeled dense array. Values are stored float32 and frozen."""

    values: np.ndarray
    label: str
    dtype: str = "float32"

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        if not self.label or any(ch.isspace() for ch in self.label):
            raise ValueError(f"tensor label must be non-empty and whitespace-free: {self.label!r}")
        if self.dtype not in ("float32", "float16"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(eq=False)
class OpEdge:
    """One operator application: ordered sources, a single target vertex."""

    kind: str
    attrs: dict[str, Any]
    sources: tuple[str, ...]
    target: str
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.attrs = ops.normalize_attrs(self.kind, self.attrs)
        self.sources = tuple(self.sources)
        self.params = {k: np.asarray(v, dtype=np.float32) for k, v in self.params.items()}
        spec = ops.CATALOG[self.kind]
        if len(self.sources) != spec.arity[0]:
            raise ShapeMismatch(
                f"{self.kind}: takes {spec.arity[0]} sources, got {len(self.sources)}"
            )

    def attr_key(self) -> str:
        return json.dumps(self.attrs, sort_keys=True, separators=(",", ":"))


@dataclass(eq=False)
class ComponentGraph:
    """A connected DAG with ordered entry and exit vertex lists."""

    vertices: dict[str, int]
    edges: tuple[OpEdge, ...]
    entries: tuple[str, ...]
    exits: tuple[str, ...]

    def __post_init__(self) -> None:
        self.edges = tuple(self.edges)
        self.entries = tuple(self.entries)
        self.exits = tuple(self.exits)

    def entry_channels(self) -> tuple[int, ...]:
        return tuple(self.vertices[v] for v in self.entries)

    def exit_channels(self) -> tuple[int, ...]:
        return tuple(self.vertices[v] for v in self.exits)


@dataclass(eq=False)
class Block:
    """A component-graph fragment with a single entry and a single exit."""

    vertices: dict[str, int]
    edges: tuple[OpEdge, ...]
    entry: str
    exit: str

    def __post_init__(self) -> None:
        self.edges = tuple(self.edges)

    def as_graph(self) -> ComponentGraph:
        return ComponentGraph(dict(self.vertices), self.edges, (self.entry,), (self.exit,))


@dataclass(frozen=True)
class Violation:
    """One structural defect found by validate_structure."""

    code: str
    detail: str


def _arcs(edges: Iterable[OpEdge]) -> list[tuple[str, str]]:
    out = []
    for e in edges:
        for s in e.sources:
            out.append((s, e.target))
    return out


def validate_structure(block: Block) -> list[Violation]:
    """Check that a block is a connected DAG with one entry and one exit.

    Returns an empty list for a valid block, otherwise one Violation per
    defect. Violations are data, not exceptions, so generators can retry.
    """
    out: list[Violation] = []
    verts = set(block.vertices)
    for e in block.edges:
        for v in (*e.sources, e.target):
            if v not in verts:
                out.append(Violation("DanglingEdge", f"edge {e.kind} references unknown vertex {v!r}"))
    if out:
        return out
    if block.entry not in verts or block.exit not in verts:
        return [Violation("DanglingEdge", "declared entry or exit is not a vertex")]

    producers: dict[str, int] = {v: 0 for v in verts}
    consumers: dict[str, int] = {v: 0 for v in verts}
    for e in block.edges:
        producers[e.target] += 1
        for s in e.sources:
            consumers[s] += 1
    for v, n in producers.items():
        if n > 1:
            out.append(Violation("MultipleProducers", f"vertex {v!r} produced by {n} edges"))

    sources = sorted(v for v, n in producers.items() if n == 0)
    sinks = sorted(v for v, n in consumers.items() if n == 0)
    if not sources:
        out.append(Violation("NoEntry", "no vertex without a producer"))
    elif len(sources) > 1:
        out.append(Violation("MultipleEntries", f"vertices without producers: {sources}"))
    elif sources[0] != block.entry:
        out.append(Violation("EntryMismatch", f"structural entry {sources[0]!r} != declared {block.entry!r}"))
    if not sinks:
        out.append(Violation("NoExit", "no vertex without a consumer"))
    elif len(sinks) > 1:
        out.append(Violation("MultipleExits", f"vertices without consumers: {sinks}"))
    elif sinks[0] != block.exit:
        out.append(Violation("ExitMismatch", f"structural exit {sinks[0]!r} != declared {block.exit!r}"))

    # Cycle check: Kahn's algorithm over the expanded arcs.
    arcs = _arcs(block.edges)
    indeg = {v: 0 for v in verts}
    for _, dst in arcs:
        indeg[dst] += 1
    queue = [v for v in block.vertices if indeg[v] == 0]
    seen = 0
    while queue:
        v = queue.pop()
        seen += 1
        for src, dst in arcs:
            if src == v:
                indeg[dst] -= 1
                if indeg[dst] == 0:
                    queue.append(dst)
    if seen != len(verts):
        out.append(Violation("CycleDetected", "graph contains a directed cycle"))

    # Weak connectivity over undirected arcs.
    if len(verts) > 1:
        adj: dict[str, set[str]] = {v: set() for v in verts}
        for src, dst in arcs:
            adj[src].add(dst)
            adj[dst].add(src)
        start = next(iter(block.vertices))
        stack = [start]
        reached = {start}
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in reached:
                    reached.add(nxt)
                    stack.append(nxt)
        if reached != verts:
            missing = sorted(verts - reached)
            out.append(Violation("Disconnected", f"vertices not weakly connected: {missing}"))
    return out


def toposort_edges(graph: ComponentGraph) -> tuple[OpEdge, ...]:
    """Edges in a deterministic dependency order (stable over the edge list)."""
    ready: set[str] = set(graph.entries)
    pending = list(graph.edges)
    order: list[OpEdge] = []
    while pending:
        progressed = False
        rest: list[OpEdge] = []
        for e in pending:
            if all(s in ready for s in e.sources):
                order.append(e)
                ready.add(e.target)
                progressed = True
            else:
                rest.append(e)
        pending = rest
        if not progressed:
            stuck = sorted({e.target for e in pending})
            raise UnreachableVertex(f"edges producing {stuck} never become ready")
    return tuple(order)


def infer_shapes(
    graph: ComponentGraph, entry_shapes: Sequence[Sequence[int]]
) -> dict[str, tuple[int, ...]]:
    """Propagate shapes from entries to every vertex.

    Raises ShapeMismatch when an operator rejects its inputs or an inferred
    channel count disagrees with the vertex annotation, and UnreachableVertex
    when some vertex is never assigned a shape.
    """
    if len(entry_shapes) != len(graph.entries):
        raise ShapeMismatch(
            f"graph has {len(graph.entries)} entries, got {len(entry_shapes)} entry shapes"
        )
    seen_targets: set[str] = set()
    for e in graph.edges:
        if e.target in seen_targets:
            raise ShapeMismatch(f"vertex {e.target!r} produced by more than one edge")
        if e.target in graph.entries:
            raise ShapeMismatch(f"entry vertex {e.target!r} must not be produced by an edge")
        seen_targets.add(e.target)

    shapes: dict[str, tuple[int, ...]] = {}
    for vid, shape in zip(graph.entries, entry_shapes):
        shape = tuple(int(d) for d in shape)
        if shape[0] != graph.vertices[vid]:
            raise ShapeMismatch(
                f"entry {vid!r} annotated with {graph.vertices[vid]} channels, got shape {shape}"
            )
        shapes[vid] = shape

    for e in toposort_edges(graph):
        in_shapes = [shapes[s] for s in e.sources]
        out_shape = ops.infer_edge_shape(e.kind, e.attrs, in_shapes)
        want = graph.vertices.get(e.target)
        if want is None:
            raise ShapeMismatch(f"edge {e.kind} targets unknown vertex {e.target!r}")
        if out_shape[0] != want:
            raise ShapeMismatch(
                f"{e.kind} -> {e.target!r}: inferred {out_shape[0]} channels, annotated {want}"
            )
        shapes[e.target] = out_shape

    missing = sorted(set(graph.vertices) - set(shapes))
    if missing:
        raise UnreachableVertex(f"vertices never reached from entries: {missing}")
    return shapes


def _canonical_edge_order(
    entries: Sequence[str], edges: Sequence[OpEdge]
) -> tuple[list[OpEdge], dict[str, int]]:
    """Canonical topological edge order with ties broken by kind and attributes."""
    label: dict[str, int] = {v: i for i, v in enumerate(entries)}
    pending = list(enumerate(edges))
    order: list[OpEdge] = []
    while pending:
        ready = [
            (idx, e) for idx, e in pending if all(s in label for s in e.sources)
        ]
        if not ready:
            raise InvalidBlock("edges reference vertices that are never produced")
        idx, e = min(
            ready,
            key=lambda it: (it[1].kind, it[1].attr_key(), tuple(label[s] for s in it[1].sources), it[0]),
        )
        label[e.target] = len(label)
        order.append(e)
        pending = [(i, p) for i, p in pending if i != idx]
    return order, label


def structural_hash(block: Block) -> str:
    """Digest over topology, operator kinds, and attributes. Weights excluded.

    Vertices are relabeled by a canonical topological order so renaming them
    does not change the digest.
    """
    violations = validate_structure(block)
    if violations:
        raise InvalidBlock("; ".join(f"{v.code}: {v.detail}" for v in violations))
    order, label = _canonical_edge_order((block.entry,), block.edges)
    parts = [f"entry:{block.vertices[block.entry]}"]
    for e in order:
        srcs = ",".join(str(label[s]) for s in e.sources)
        parts.append(f"{e.kind}|{e.attr_key()}|{srcs}>{label[e.target]}:{block.vertices[e.target]}")
    return hashlib.sha256(";".join(parts).encode()).hexdigest()


def graph_digest(graph: ComponentGraph) -> str:
    """Weight-free digest of a whole component graph, multi-port aware."""
    order, label = _canonical_edge_order(graph.entries, graph.edges)
    parts = ["entries:" + ",".join(str(graph.vertices[v]) for v in graph.entries)]
    for e in order:
        srcs = ",".join(str(label[s]) for s in e.sources)
        parts.append(f"{e.kind}|{e.attr_key()}|{srcs}>{label[e.target]}:{graph.vertices[e.target]}")
    parts.append("exits:" + ",".join(str(label[v]) for v in graph.exits))
    return hashlib.sha256(";".join(parts).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Graph-exchange serialization


def graph_to_doc(graph: ComponentGraph, attributes: Mapping[str, Any] | None = None) -> dict:
    """Plain-dict form of a graph, matching the documented file layout."""
    return {
        "vertices": [{"id": v, "channels": int(c)} for v, c in graph.vertices.items()],
        "edges": [
            {
                "kind": e.kind,
                "attrs": e.attrs,
                "sources": list(e.sources),
                "target": e.target,
                "params": {
                    name: {"shape": list(arr.shape), "data": [float(x) for x in arr.reshape(-1)]}
                    for name, arr in e.params.items()
                },
            }
            for e in graph.edges
        ],
        "entries": list(graph.entries),
        "exits": list(graph.exits),
        "attributes": dict(attributes or {}),
    }


def doc_to_graph(doc: Mapping[str, Any]) -> tuple[ComponentGraph, dict[str, Any]]:
    """Inverse of graph_to_doc. Returns the graph and its attributes section."""
    try:
        vertices = {v["id"]: int(v["channels"]) for v in doc["vertices"]}
        edges = tuple(
            OpEdge(
                kind=e["kind"],
                attrs=dict(e["attrs"]),
                sources=tuple(e["sources"]),
                target=e["target"],
                params={
                    name: np.asarray(p["data"], dtype=np.float32).reshape(p["shape"])
                    for name, p in e.get("params", {}).items()
                },
            )
            for e in doc["edges"]
        )
        graph = ComponentGraph(vertices, edges, tuple(doc["entries"]), tuple(doc["exits"]))
        return graph, dict(doc.get("attributes", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeMismatch(f"malformed graph document: {exc}") from exc


def save_graph(path, graph: ComponentGraph, attributes: Mapping[str, Any] | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_json(graph_to_doc(graph, attributes)))


def load_graph(path) -> tuple[ComponentGraph, dict[str, Any]]:
    with open(path) as fh:
        return doc_to_graph(json.load(fh))


# ---------------------------------------------------------------------------
# Construction helpers


class GraphBuilder:
    """Incremental construction of component graphs with fresh vertex ids.

    Channel annotations are derived from the operator attributes so callers
    only wire sources together. Weights are synthesized from the supplied
    generator unless given explicitly.
    """

    def __init__(self, rng: np.random.Generator | None = None, prefix: str = "v") -> None:
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._prefix = prefix
        self._n = 0
        self.vertices: dict[str, int] = {}
        self.edges: list[OpEdge] = []
        self.entries: list[str] = []
        self.exits: list[str] = []

    def _fresh(self, channels: int) -> str:
        vid = f"{self._prefix}{self._n}"
        self._n += 1
        self.vertices[vid] = int(channels)
        return vid

    def input(self, channels: int) -> str:
        vid = self._fresh(channels)
        self.entries.append(vid)
        return vid

    def op(
        self,
        kind: str,
        sources: str | Sequence[str],
        params: Mapping[str, np.ndarray] | None = None,
        **attrs: Any,
    ) -> str:
        srcs = (sources,) if isinstance(sources, str) else tuple(sources)
        norm = ops.normalize_attrs(kind, attrs)
        in_ch = [self.vertices[s] for s in srcs]
        target = self._fresh(ops.out_channels(kind, norm, in_ch))
        if params is None:
            params = ops.synthesize_params(kind, norm, in_ch[0], self._rng)
        self.edges.append(OpEdge(kind, norm, srcs, target, dict(params)))
        return target

    def output(self, vid: str) -> None:
        self.exits.append(vid)

    def graph(self) -> ComponentGraph:
        return ComponentGraph(dict(self.vertices), tuple(self.edges), tuple(self.entries), tuple(self.exits))

    def block(self) -> Block:
        if len(self.entries) != 1 or len(self.exits) != 1:
            raise InvalidBlock("a block needs exactly one entry and one exit")
        b = Block(dict(self.vertices), tuple(self.edges), self.entries[0], self.exits[0])
        violations = validate_structure(b)
        if violations:
            raise InvalidBlock("; ".join(f"{v.code}: {v.detail}" for v in violations))
        return b


def chain_blocks(blocks: Sequence[Block], taps: Sequence[int]) -> tuple[ComponentGraph, dict[str, Any]]:
    """Stack blocks entry-to-exit into one graph with tap vertices as exits.

    Returns the chained graph plus the boundary metadata needed to split it
    back into blocks (stored in the graph file's attributes section).
    """
    if not blocks:
        raise InvalidBlock("cannot chain zero blocks")
    taps = tuple(int(t) for t in taps)
    if not taps or any(t < 0 or t >= len(blocks) for t in taps):
        raise InvalidBlock(f"taps {taps} out of range for {len(blocks)} blocks")

    vertices: dict[str, int] = {}
    edges: list[OpEdge] = []
    block_exits: list[str] = []
    edge_counts: list[int] = []
    prev_exit: str | None = None
    entry_vid = ""
    for i, b in enumerate(blocks):
        # Canonical local names (first appearance over the edge list) keep
        # chaining idempotent: re-chaining split blocks reproduces the exact
        # same vertex ids no matter what the inputs were called.
        rename: dict[str, str] = {}
        if prev_exit is None:
            entry_vid = f"b{i}:0"
            rename[b.entry] = entry_vid
        else:
            rename[b.entry] = prev_exit
        local = 1
        for e in b.edges:
            for v in (*e.sources, e.target):
                if v not in rename:
                    rename[v] = f"b{i}:{local}"
                    local += 1
        for v, new in rename.items():
            if new not in vertices:
                vertices[new] = b.vertices[v]
            elif vertices[new] != b.vertices[v]:
                raise InvalidBlock(
                    f"block {i} entry channels {b.vertices[v]} != upstream exit channels {vertices[new]}"
                )
        for e in b.edges:
            edges.append(
                OpEdge(e.kind, dict(e.attrs), tuple(rename[s] for s in e.sources), rename[e.target], dict(e.params))
            )
        edge_counts.append(len(b.edges))
        prev_exit = rename[b.exit]
        block_exits.append(prev_exit)

    exits = tuple(block_exits[t] for t in taps)
    graph = ComponentGraph(vertices, tuple(edges), (entry_vid,), exits)
    meta = {"block_edge_counts": edge_counts, "block_exits": block_exits, "taps": list(taps)}
    return graph, meta


def split_blocks(graph: ComponentGraph, meta: Mapping[str, Any]) -> list[Block]:
    """Reconstruct the block list of a chained backbone graph."""
    counts = list(meta["block_edge_counts"])
    block_exits = list(meta["block_exits"])
    if sum(counts) != len(graph.edges) or len(counts) != len(block_exits):
        raise InvalidBlock("block boundary metadata does not match the graph")
    blocks: list[Block] = []
    pos = 0
    entry = graph.entries[0]
    for i, n in enumerate(counts):
        chunk = graph.edges[pos : pos + n]
        pos += n
        verts = {entry: graph.vertices[entry]}
        for e in chunk:
            for v in (*e.sources, e.target):
                verts[v] = graph.vertices[v]
        blocks.append(Block(verts, tuple(chunk), entry, block_exits[i]))
        entry = block_exits[i]
    return blocks
