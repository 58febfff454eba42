"""Persistent component repository: heads, necks, and backbones.

The on-disk layout is a manifest plus one graph-exchange file per component.
Loading validates every entry; invalid entries are rejected with diagnostics
instead of aborting the whole load. The contribution ledger is persisted
inside the manifest so campaigns can resume with their learned scores.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from .errors import (
    ComponentInvalid,
    DuplicateStructure,
    EmptyCandidates,
    FuzzError,
    ManifestMissing,
)
from .fixtures import NOMINAL_HW
from .graph import (
    Block,
    ComponentGraph,
    canonical_json,
    chain_blocks,
    doc_to_graph,
    graph_digest,
    graph_to_doc,
    infer_shapes,
    split_blocks,
    structural_hash,
    validate_structure,
)

COMPONENT_KINDS = ("head", "neck", "backbone")
MANIFEST_NAME = "manifest.json"
GRAPH_DIR = "graphs"


@dataclass(frozen=True)
class Interface:
    """Per-port channel dims on both sides of a component."""

    inputs: tuple[int, ...]
    outputs: tuple[int, ...]

    def to_doc(self) -> dict:
        return {"inputs": list(self.inputs), "outputs": list(self.outputs)}

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "Interface":
        return cls(tuple(int(c) for c in doc["inputs"]), tuple(int(c) for c in doc["outputs"]))


@dataclass(frozen=True)
class Origin:
    """Where a component came from: seeded by hand or minted by mutation."""

    kind: str = "seed"
    parent: str | None = None
    iteration: int | None = None
    operator: str | None = None

    def to_doc(self) -> dict:
        doc: dict[str, Any] = {"kind": self.kind}
        if self.kind == "mutated":
            doc.update(parent=self.parent, iteration=self.iteration, operator=self.operator)
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "Origin":
        return cls(
            kind=doc.get("kind", "seed"),
            parent=doc.get("parent"),
            iteration=doc.get("iteration"),
            operator=doc.get("operator"),
        )


@dataclass(eq=False)
class Component:
    """One reusable model part plus the scenarios it may serve."""

    id: str
    kind: str
    graph: ComponentGraph
    scenarios: frozenset[str]
    interface: Interface
    origin: Origin = Origin()
    blocks: tuple[Block, ...] | None = None
    taps: tuple[int, ...] | None = None

    def structure_key(self) -> tuple:
        """Dedup key: kind, interface, and the structural hashes of all blocks."""
        if self.blocks is not None:
            hashes: tuple[str, ...] = tuple(structural_hash(b) for b in self.blocks)
            extra: tuple = (self.taps,)
        else:
            hashes = (graph_digest(self.graph),)
            extra = ()
        return (self.kind, self.interface, hashes, extra)


def validate_component(comp: Component) -> None:
    """Raise ComponentInvalid unless the component is internally consistent."""
    if comp.kind not in COMPONENT_KINDS:
        raise ComponentInvalid(comp.id, f"unknown kind {comp.kind!r}")
    if not comp.scenarios:
        raise ComponentInvalid(comp.id, "mapped to no scenarios")
    g = comp.graph
    if comp.kind == "backbone":
        if not comp.blocks or comp.taps is None:
            raise ComponentInvalid(comp.id, "backbone lacks block structure")
        for i, b in enumerate(comp.blocks):
            violations = validate_structure(b)
            if violations:
                detail = "; ".join(f"{v.code}: {v.detail}" for v in violations)
                raise ComponentInvalid(comp.id, f"block {i} invalid: {detail}")
    if g.entry_channels() != comp.interface.inputs:
        raise ComponentInvalid(
            comp.id,
            f"entry channels {g.entry_channels()} != declared inputs {comp.interface.inputs}",
        )
    if g.exit_channels() != comp.interface.outputs:
        raise ComponentInvalid(
            comp.id,
            f"exit channels {g.exit_channels()} != declared outputs {comp.interface.outputs}",
        )
    try:
        infer_shapes(g, [(c, NOMINAL_HW, NOMINAL_HW) for c in comp.interface.inputs])
    except FuzzError as exc:
        raise ComponentInvalid(comp.id, f"shape inference failed: {exc}") from exc


@dataclass
class Repository:
    """In-memory repository with a scenario/kind index and raw ledger state."""

    components: dict[str, Component] = field(default_factory=dict)
    ledger_state: dict[str, dict[str, float]] = field(
        default_factory=lambda: {"components": {}, "operators": {}}
    )
    next_id: int = 1
    rejects: list[ComponentInvalid] = field(default_factory=list)
    _index: dict[tuple[str, str], list[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.components)

    def _index_add(self, comp: Component) -> None:
        for scenario in comp.scenarios:
            self._index.setdefault((scenario, comp.kind), []).append(comp.id)

    def insert_seed(self, comp: Component) -> None:
        """Install a hand-built component under its own id."""
        validate_component(comp)
        if comp.id in self.components:
            raise ComponentInvalid(comp.id, "id already present")
        self.components[comp.id] = comp
        self.ledger_state["components"].setdefault(comp.id, 1.0)
        self._index_add(comp)

    def check_index(self) -> bool:
        """The scenario index must be the exact inverse of the scenario sets."""
        want: dict[tuple[str, str], list[str]] = {}
        for comp in self.components.values():
            for scenario in comp.scenarios:
                want.setdefault((scenario, comp.kind), []).append(comp.id)
        got = {k: sorted(v) for k, v in self._index.items() if v}
        return {k: sorted(v) for k, v in want.items()} == got


def components_for_scenario(repo: Repository, scenario: Any, kind: str) -> list[Component]:
    """All live components of one kind usable in a scenario, stable id order."""
    name = getattr(scenario, "name", scenario)
    ids = repo._index.get((name, kind), [])
    return [repo.components[i] for i in sorted(ids)]


def add_component(repo: Repository, comp: Component) -> str:
    """Validate, dedup, mint an id, insert, and return the new id.

    Structurally identical additions (same kind, interface, and per-block
    hashes) raise DuplicateStructure carrying the existing id.
    """
    validate_component(comp)
    key = comp.structure_key()
    for other in repo.components.values():
        if other.kind == comp.kind and other.structure_key() == key:
            raise DuplicateStructure(other.id)
    minted = f"m{repo.next_id:04d}"
    repo.next_id += 1
    comp = replace(comp, id=minted)
    repo.components[minted] = comp
    repo.ledger_state["components"].setdefault(minted, 1.0)
    repo._index_add(comp)
    return minted


# ---------------------------------------------------------------------------
# Persistence


def _component_to_files(comp: Component) -> tuple[dict, dict]:
    attrs: dict[str, Any] = {}
    if comp.kind == "backbone" and comp.blocks is not None:
        _, meta = chain_blocks(comp.blocks, comp.taps or ())
        attrs["backbone"] = meta
    graph_doc = graph_to_doc(comp.graph, attrs)
    entry = {
        "id": comp.id,
        "kind": comp.kind,
        "scenarios": sorted(comp.scenarios),
        "interface": comp.interface.to_doc(),
        "origin": comp.origin.to_doc(),
        "graph_file": f"{GRAPH_DIR}/{comp.id}.json",
    }
    return entry, graph_doc


def save_repository(repo: Repository, path: str) -> None:
    os.makedirs(os.path.join(path, GRAPH_DIR), exist_ok=True)
    entries = []
    for cid in sorted(repo.components):
        entry, graph_doc = _component_to_files(repo.components[cid])
        entries.append(entry)
        with open(os.path.join(path, entry["graph_file"]), "w") as fh:
            fh.write(canonical_json(graph_doc))
    manifest = {
        "components": entries,
        "ledger": {
            "components": {k: float(v) for k, v in sorted(repo.ledger_state["components"].items())},
            "operators": {k: float(v) for k, v in sorted(repo.ledger_state["operators"].items())},
        },
        "next_id": repo.next_id,
    }
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        fh.write(canonical_json(manifest))


def load_repository(path: str) -> Repository:
    """Load a repository directory, rejecting invalid entries with diagnostics."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise ManifestMissing(f"no {MANIFEST_NAME} under {path!r}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)

    repo = Repository(next_id=int(manifest.get("next_id", 1)))
    ledger = manifest.get("ledger", {})
    repo.ledger_state["components"].update(ledger.get("components", {}))
    repo.ledger_state["operators"].update(ledger.get("operators", {}))

    for entry in manifest.get("components", []):
        cid = entry.get("id", "?")
        try:
            graph_file = os.path.join(path, entry["graph_file"])
            if not os.path.isfile(graph_file):
                raise ComponentInvalid(cid, f"graph file missing: {entry['graph_file']}")
            with open(graph_file) as fh:
                graph, attrs = doc_to_graph(json.load(fh))
            blocks = taps = None
            if entry["kind"] == "backbone":
                meta = attrs.get("backbone")
                if meta is None:
                    raise ComponentInvalid(cid, "backbone graph lacks block metadata")
                blocks = tuple(split_blocks(graph, meta))
                taps = tuple(int(t) for t in meta["taps"])
            comp = Component(
                id=cid,
                kind=entry["kind"],
                graph=graph,
                scenarios=frozenset(entry["scenarios"]),
                interface=Interface.from_doc(entry["interface"]),
                origin=Origin.from_doc(entry.get("origin", {})),
                blocks=blocks,
                taps=taps,
            )
            validate_component(comp)
        except ComponentInvalid as exc:
            repo.rejects.append(exc)
            continue
        except (FuzzError, KeyError, TypeError, ValueError) as exc:
            repo.rejects.append(ComponentInvalid(cid, str(exc)))
            continue
        if comp.id in repo.components:
            repo.rejects.append(ComponentInvalid(cid, "duplicate id in manifest"))
            continue
        repo.components[comp.id] = comp
        repo.ledger_state["components"].setdefault(comp.id, 1.0)
        repo._index_add(comp)
    return repo


def candidate_or_raise(candidates: Iterable[Component], what: str) -> list[Component]:
    out = list(candidates)
    if not out:
        raise EmptyCandidates(f"no candidates for {what}")
    return out
