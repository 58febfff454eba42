"""Model generation: weighted selection, backbone mutation, and assembly.

Selection follows the normalized contribution scores. Mutation groups a
backbone's blocks by structural hash and rewrites one unary edge per group,
so one call yields one mutated backbone per distinct block group. Assembly
splices component graphs along the sketch wiring after checking the port
count and channel rules, which makes every returned model execute without
structural error.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import ops
from .errors import (
    ChannelMismatch,
    EmptyCandidates,
    InvalidBlock,
    NoCompatibleOperator,
    NoMutableEdge,
    PortCountMismatch,
    SlotMismatch,
)
from .fixtures import NOMINAL_HW
from .graph import (
    Block,
    ComponentGraph,
    OpEdge,
    canonical_json,
    chain_blocks,
    doc_to_graph,
    graph_to_doc,
    infer_shapes,
    structural_hash,
    validate_structure,
)
from .repository import Component, Origin
from .sketch import ScenarioId, Sketch, graph_entry_label


@dataclass
class ContributionLedger:
    """Mutable contribution scores for components and operator kinds.

    Scores start at 1 for new entries and are clamped at a strictly positive
    floor, so selection probabilities are always well defined.
    """

    component_scores: dict[str, float] = field(default_factory=dict)
    operator_scores: dict[str, float] = field(default_factory=dict)

    FLOOR = 1e-6

    @classmethod
    def from_state(cls, state: Mapping[str, Mapping[str, float]]) -> "ContributionLedger":
        led = cls(dict(state.get("components", {})), dict(state.get("operators", {})))
        for k in ops.CATALOG:
            led.operator_scores.setdefault(k, 1.0)
        return led

    def to_state(self) -> dict[str, dict[str, float]]:
        return {
            "components": dict(self.component_scores),
            "operators": dict(self.operator_scores),
        }

    def ensure_component(self, cid: str) -> None:
        self.component_scores.setdefault(cid, 1.0)

    def component_score(self, cid: str) -> float:
        return self.component_scores.get(cid, 1.0)

    def operator_score(self, kind: str) -> float:
        return self.operator_scores.get(kind, 1.0)


def _weighted_draw(weights: Sequence[float], rng: np.random.Generator) -> int:
    total = float(sum(weights))
    r = rng.random() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if r < acc:
            return i
    return len(weights) - 1


def select_component(
    candidates: Sequence[Component],
    ledger: ContributionLedger,
    rng: np.random.Generator,
) -> Component:
    """Draw one candidate with probability proportional to its score."""
    if not candidates:
        raise EmptyCandidates("selection over an empty candidate list")
    weights = [ledger.component_score(c.id) for c in candidates]
    return candidates[_weighted_draw(weights, rng)]


def select_operator(
    catalog: Mapping[str, ops.OperatorKind],
    ledger: ContributionLedger,
    rng: np.random.Generator,
    original: str,
) -> str:
    """Weighted draw over unary kinds, redrawn while the result equals original."""
    kinds = [k for k, spec in catalog.items() if spec.arity == (1, 1)]
    if len(kinds) < 2:
        raise NoCompatibleOperator("need at least two unary kinds to replace an operator")
    weights = [ledger.operator_score(k) for k in kinds]
    for _ in range(1000):
        pick = kinds[_weighted_draw(weights, rng)]
        if pick != original:
            return pick
    # Equivalent conditional distribution, guaranteed to terminate.
    rest = [(k, w) for k, w in zip(kinds, weights) if k != original]
    idx = _weighted_draw([w for _, w in rest], rng)
    return rest[idx][0]


# ---------------------------------------------------------------------------
# Backbone mutation


def _replacement_edge(
    block: Block, edge_idx: int, new_kind: str, rng: np.random.Generator
) -> OpEdge:
    """Build the replacement operator for one unary edge, weights included."""
    edge = block.edges[edge_idx]
    src_ch = block.vertices[edge.sources[0]]
    dst_ch = block.vertices[edge.target]
    attrs: dict[str, Any] = {}
    if new_kind in ("Conv2D", "MatMul"):
        attrs["channels"] = dst_ch
    norm = ops.normalize_attrs(new_kind, attrs)
    params = ops.synthesize_params(new_kind, norm, src_ch, rng)
    return OpEdge(new_kind, norm, edge.sources, edge.target, params)


def _with_edge(block: Block, edge_idx: int, new_edge: OpEdge) -> Block:
    edges = list(block.edges)
    edges[edge_idx] = new_edge
    return Block(dict(block.vertices), tuple(edges), block.entry, block.exit)


def _backbone_ok(blocks: Sequence[Block], taps: Sequence[int], entry_channels: int) -> bool:
    try:
        graph, _ = chain_blocks(blocks, taps)
        infer_shapes(graph, [(entry_channels, NOMINAL_HW, NOMINAL_HW)])
        return True
    except Exception:
        return False


def group_blocks(blocks: Sequence[Block]) -> list[tuple[str, list[int]]]:
    """Group block indices by structural hash, ordered by first occurrence."""
    groups: dict[str, list[int]] = {}
    order: list[str] = []
    for i, b in enumerate(blocks):
        h = structural_hash(b)
        if h not in groups:
            groups[h] = []
            order.append(h)
        groups[h].append(i)
    return [(h, groups[h]) for h in order]


def mutate_backbone(
    backbone: Component,
    ledger: ContributionLedger,
    rng: np.random.Generator,
    *,
    catalog: Mapping[str, ops.OperatorKind] | None = None,
    iteration: int = 0,
    max_attempts: int = 100,
) -> list[Component]:
    """One mutated backbone per distinct block group of the parent.

    For each group a representative block gets the operator on one randomly
    chosen unary edge replaced by a selected kind; the attempt is repeated
    (bounded) until the block validates and the whole mutated backbone passes
    shape inference, after which every block of the group is swapped for the
    mutant. Falls back to an identity-preserving replacement when the attempt
    budget runs out.
    """
    if backbone.kind != "backbone" or not backbone.blocks or backbone.taps is None:
        raise InvalidBlock(f"component {backbone.id!r} is not a structured backbone")
    catalog = catalog or ops.CATALOG
    blocks = list(backbone.blocks)
    entry_ch = backbone.interface.inputs[0]
    out: list[Component] = []

    for gnum, (_, indices) in enumerate(group_blocks(blocks)):
        rep = blocks[indices[0]]
        unary = [i for i, e in enumerate(rep.edges) if catalog[e.kind].arity == (1, 1)]
        if not unary:
            raise NoMutableEdge(f"group {gnum} of {backbone.id!r} has no unary edge")

        accepted: Block | None = None
        mutated_kind = ""
        for _ in range(max_attempts):
            edge_idx = unary[int(rng.integers(len(unary)))]
            new_kind = select_operator(catalog, ledger, rng, rep.edges[edge_idx].kind)
            cand = _with_edge(rep, edge_idx, _replacement_edge(rep, edge_idx, new_kind, rng))
            if validate_structure(cand):
                continue
            cand_blocks = [cand if i in indices else blk for i, blk in enumerate(blocks)]
            if _backbone_ok(cand_blocks, backbone.taps, entry_ch):
                accepted = cand
                mutated_kind = new_kind
                break
        if accepted is None:
            # Identity on a channel-preserving, non-Identity edge always works.
            fallback = None
            for i in unary:
                e = rep.edges[i]
                if rep.vertices[e.sources[0]] == rep.vertices[e.target] and e.kind != "Identity":
                    fallback = (i, "Identity")
                    break
            if fallback is None:
                for i in unary:
                    e = rep.edges[i]
                    if rep.vertices[e.sources[0]] == rep.vertices[e.target] and e.kind != "ReLU":
                        fallback = (i, "ReLU")
                        break
            if fallback is None:
                raise NoMutableEdge(f"group {gnum} of {backbone.id!r} has no replaceable edge")
            idx, kind = fallback
            accepted = _with_edge(rep, idx, _replacement_edge(rep, idx, kind, rng))
            mutated_kind = kind

        new_blocks = [accepted if i in indices else blk for i, blk in enumerate(blocks)]
        graph, _ = chain_blocks(new_blocks, backbone.taps)
        out.append(
            Component(
                id=f"{backbone.id}~i{iteration}g{gnum}",
                kind="backbone",
                graph=graph,
                scenarios=backbone.scenarios,
                interface=backbone.interface,
                origin=Origin("mutated", parent=backbone.id, iteration=iteration, operator=mutated_kind),
                blocks=tuple(new_blocks),
                taps=backbone.taps,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Assembly


@dataclass(eq=False)
class Model:
    """A fully wired model ready for execution on either backend."""

    model_id: str
    scenario: ScenarioId | None
    sketch: Sketch | None
    head: Component | None
    neck: Component | None
    backbone: Component | None
    graph: ComponentGraph
    entry_labels: tuple[str, ...]
    output_labels: tuple[str, ...]


def _check_counts(
    upstream: tuple[int, ...], downstream: tuple[int, ...], rule: str, what: str
) -> None:
    if len(upstream) != len(downstream):
        raise PortCountMismatch(
            f"rule {rule}: {what}: {len(upstream)} output ports vs {len(downstream)} input ports",
            rule=rule,
        )


def _check_channels(
    upstream: tuple[int, ...], downstream: tuple[int, ...], rule: str, what: str
) -> None:
    if upstream != downstream:
        raise ChannelMismatch(
            f"rule {rule}: {what}: output channels {upstream} vs input channels {downstream}",
            rule=rule,
        )


def _splice(parts: Sequence[tuple[str, ComponentGraph]]) -> ComponentGraph:
    """Chain multi-port component graphs, merging exits onto downstream entries."""
    vertices: dict[str, int] = {}
    edges: list[OpEdge] = []
    prev_exits: list[str] | None = None
    entries: tuple[str, ...] = ()
    for prefix, g in parts:
        rename = {v: f"{prefix}:{v}" for v in g.vertices}
        if prev_exits is not None:
            for entry_vid, exit_vid in zip(g.entries, prev_exits):
                rename[entry_vid] = exit_vid
        for old, new in rename.items():
            vertices.setdefault(new, g.vertices[old])
        for e in g.edges:
            edges.append(OpEdge(e.kind, dict(e.attrs), tuple(rename[s] for s in e.sources), rename[e.target], dict(e.params)))
        if prev_exits is None:
            entries = tuple(rename[v] for v in g.entries)
        prev_exits = [rename[v] for v in g.exits]
    return ComponentGraph(vertices, tuple(edges), entries, tuple(prev_exits or ()))


def model_structure_id(graph: ComponentGraph, scenario_name: str | None, output_labels: Sequence[str]) -> str:
    doc = graph_to_doc(graph)
    for e in doc["edges"]:
        e["params"] = sorted(e["params"])  # shapes matter through attrs; weights do not
    doc["attributes"] = {"scenario": scenario_name, "outputs": list(output_labels)}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def assemble(
    sketch: Sketch,
    head: Component,
    neck: Component | None,
    backbone: Component,
) -> Model:
    """Splice components along the sketch wiring into an executable model.

    Enforces the port-count and channel rules before splicing and runs shape
    inference on the result, so a returned model is valid by construction.
    """
    for comp, kind in ((head, "head"), (backbone, "backbone")):
        if comp.kind != kind:
            raise SlotMismatch(f"component {comp.id!r} has kind {comp.kind!r}, slot needs {kind!r}")
    if sketch.has_neck:
        if neck is None:
            raise SlotMismatch(f"sketch for {sketch.scenario.name!r} requires a neck")
        if neck.kind != "neck":
            raise SlotMismatch(f"component {neck.id!r} has kind {neck.kind!r}, slot needs 'neck'")
        _check_counts(backbone.interface.outputs, neck.interface.inputs, "3", "backbone to neck")
        _check_channels(neck.interface.outputs, head.interface.inputs, "1", "neck to head")
        _check_channels(backbone.interface.outputs, neck.interface.inputs, "2", "backbone to neck")
        parts = [("bb", backbone.graph), ("nk", neck.graph), ("hd", head.graph)]
    else:
        if neck is not None:
            raise SlotMismatch(f"sketch for {sketch.scenario.name!r} has no neck slot")
        _check_counts(backbone.interface.outputs, head.interface.inputs, "2", "backbone to head")
        _check_channels(backbone.interface.outputs, head.interface.inputs, "1", "backbone to head")
        parts = [("bb", backbone.graph), ("hd", head.graph)]

    graph = _splice(parts)
    entry_shapes = [(c, NOMINAL_HW, NOMINAL_HW) for c in backbone.interface.inputs]
    infer_shapes(graph, entry_shapes)

    output_labels = tuple(f"det_{i}" for i in range(len(head.interface.outputs)))
    entry_label = graph_entry_label(sketch)
    return Model(
        model_id=model_structure_id(graph, sketch.scenario.name, output_labels),
        scenario=sketch.scenario,
        sketch=sketch,
        head=head,
        neck=neck,
        backbone=backbone,
        graph=graph,
        entry_labels=(entry_label,),
        output_labels=output_labels,
    )


# ---------------------------------------------------------------------------
# Model persistence (for bug records and external runners)


def save_model(model: Model, path: str) -> None:
    attrs = {
        "model_id": model.model_id,
        "scenario": model.scenario.name if model.scenario else None,
        "entry_labels": list(model.entry_labels),
        "output_labels": list(model.output_labels),
        "component_ids": {
            "head": model.head.id if model.head else None,
            "neck": model.neck.id if model.neck else None,
            "backbone": model.backbone.id if model.backbone else None,
        },
    }
    with open(path, "w") as fh:
        fh.write(canonical_json(graph_to_doc(model.graph, attrs)))


def load_model(path: str, scenarios: Mapping[str, ScenarioId] | None = None) -> Model:
    with open(path) as fh:
        graph, attrs = doc_to_graph(json.load(fh))
    scenario = None
    name = attrs.get("scenario")
    if name is not None:
        if scenarios is None or name not in scenarios:
            from .errors import UnknownScenario

            raise UnknownScenario(f"model references unknown scenario {name!r}")
        scenario = scenarios[name]
    return Model(
        model_id=attrs.get("model_id", "unidentified"),
        scenario=scenario,
        sketch=None,
        head=None,
        neck=None,
        backbone=None,
        graph=graph,
        entry_labels=tuple(attrs.get("entry_labels", [])),
        output_labels=tuple(attrs.get("output_labels", [])),
    )
