"""Scenario descriptions and the model sketches generated from them.

A sketch is the scenario-specific skeleton a model is assembled into: an
ordered list of slots plus the wiring between them. Preprocess and
postprocess slots are fixed library stages, not mutable components.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .errors import UnknownScenario

IMAGE = "image"
POINTCLOUD = "pointcloud"


@dataclass(frozen=True)
class ScenarioId:
    """One deployment scenario as declared in the scenario configuration."""

    name: str
    modalities: tuple[str, ...]
    needs_preprocess: tuple[tuple[str, bool], ...]
    needs_postprocess: bool
    needs_neck: bool

    def preprocess_for(self, modality: str) -> bool:
        return dict(self.needs_preprocess).get(modality, False)


@dataclass(frozen=True)
class SlotSpec:
    """A position in a sketch. Component slots are filled at assembly time."""

    name: str
    role: str  # "input" | "preprocess" | "component" | "postprocess"
    component_kind: str | None = None
    mandatory: bool = True


@dataclass(frozen=True)
class Sketch:
    """Ordered slots plus directed wiring (from-slot, to-slot) pairs."""

    scenario: ScenarioId
    slots: tuple[SlotSpec, ...]
    wiring: tuple[tuple[str, str], ...]
    meta_inputs: tuple[str, ...] = ()

    @property
    def has_neck(self) -> bool:
        return any(s.component_kind == "neck" for s in self.slots)

    def slot_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots)


def load_scenarios(path: str | None = None) -> dict[str, ScenarioId]:
    """Scenario set from a config file, or the packaged default set."""
    if path is None:
        text = resources.files("modelfuzz.data").joinpath("scenarios.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    out: dict[str, ScenarioId] = {}
    for entry in doc["scenarios"]:
        sid = ScenarioId(
            name=entry["name"],
            modalities=tuple(entry["modalities"]),
            needs_preprocess=tuple(sorted(entry["needs_preprocess"].items())),
            needs_postprocess=bool(entry["needs_postprocess"]),
            needs_neck=bool(entry["needs_neck"]),
        )
        out[sid.name] = sid
    if not out:
        raise UnknownScenario("scenario configuration declares no scenarios")
    return out


def generate_sketch(scenario: ScenarioId) -> Sketch:
    """Deterministically derive the sketch for a scenario.

    The slot list and wiring depend only on the scenario fields: point cloud
    preprocessing contributes pillar and middle encoder stages feeding the
    backbone, a neck slot appears when the scenario calls for one, and
    fusion scenarios route the raw point cloud into postprocessing instead.
    """
    slots: list[SlotSpec] = []
    wiring: list[tuple[str, str]] = []
    meta: list[str] = []

    for modality in scenario.modalities:
        slots.append(SlotSpec(f"input:{modality}", "input"))

    backbone_feed: str | None = None
    for modality in scenario.modalities:
        if scenario.preprocess_for(modality):
            if modality != POINTCLOUD:
                raise UnknownScenario(f"no preprocess stage defined for modality {modality!r}")
            slots.append(SlotSpec("preprocess:pillar_encoder", "preprocess"))
            slots.append(SlotSpec("preprocess:middle_encoder", "preprocess"))
            wiring.append((f"input:{modality}", "preprocess:pillar_encoder"))
            wiring.append(("preprocess:pillar_encoder", "preprocess:middle_encoder"))
            backbone_feed = "preprocess:middle_encoder"
        elif backbone_feed is None:
            backbone_feed = f"input:{modality}"

    slots.append(SlotSpec("backbone", "component", "backbone"))
    wiring.append((backbone_feed or "", "backbone"))

    tail = "backbone"
    if scenario.needs_neck:
        slots.append(SlotSpec("neck", "component", "neck"))
        wiring.append(("backbone", "neck"))
        tail = "neck"
    slots.append(SlotSpec("head", "component", "head"))
    wiring.append((tail, "head"))

    if scenario.needs_postprocess:
        slots.append(SlotSpec("postprocess", "postprocess", mandatory=False))
        wiring.append(("head", "postprocess"))
        # Fusion scenarios consume the raw cloud during postprocessing.
        if POINTCLOUD in scenario.modalities and not scenario.preprocess_for(POINTCLOUD):
            wiring.append((f"input:{POINTCLOUD}", "postprocess"))

    if IMAGE in scenario.modalities:
        meta.append("camera_config")
    if POINTCLOUD in scenario.modalities:
        meta.append("lidar_config")

    return Sketch(scenario, tuple(slots), tuple(wiring), tuple(meta))


def graph_entry_label(sketch: Sketch) -> str:
    """The raw input label whose (possibly preprocessed) tensor feeds the backbone."""
    srcs = {dst: src for src, dst in sketch.wiring}
    node = "backbone"
    while True:
        node = srcs[node]
        if node.startswith("input:"):
            return node.split(":", 1)[1]
