"""Differential fuzzing of small detection models across executor backends.

The package builds models from a component repository (backbones, necks,
heads), mutates backbone operators under contribution-weighted guidance,
runs each model on a plain reference executor and an optimizing one, and
judges the outputs for crashes, NaN disagreements, and numeric divergence.
"""

from __future__ import annotations

from . import errors
from .campaign import (
    CampaignConfig,
    CampaignReport,
    CampaignState,
    coverage_metrics,
    fuzz_loop,
    prepare_execution_inputs,
    replay,
)
from .executors import (
    API_ENTRY_POINTS,
    ExecutionResult,
    FaultSpec,
    OptimizerConfig,
    execute_optimized,
    execute_reference,
    load_faults,
    read_tensors,
    run_external,
    write_tensors,
)
from .fixtures import (
    PillarGrid,
    PointCloud,
    decode_boxes,
    encode_pillars,
    generate_inputs,
    pillar_summary,
    preprocess_image,
    voxelize_points,
)
from .generator import (
    ContributionLedger,
    Model,
    assemble,
    load_model,
    mutate_backbone,
    save_model,
    select_component,
    select_operator,
)
from .graph import (
    Block,
    ComponentGraph,
    GraphBuilder,
    OpEdge,
    Tensor,
    canonical_json,
    graph_digest,
    infer_shapes,
    load_graph,
    save_graph,
    structural_hash,
    toposort_edges,
    validate_structure,
)
from .heuristics import EffRecord, compute_eff, maybe_add_component, update_contribution
from .ops import CATALOG, OperatorKind, infer_edge_shape, normalize_attrs, synthesize_params
from .oracle import (
    BugPattern,
    CrashClusterer,
    Verdict,
    cluster_crashes,
    cosine_similarity,
    filter_crash_log,
    judge,
    load_bug_patterns,
    match_bug_pattern,
    max_inconsistency,
    tokenize_log,
)
from .report import CoverageReport, render_figures
from .repository import (
    Component,
    Interface,
    Origin,
    Repository,
    add_component,
    components_for_scenario,
    load_repository,
    save_repository,
)
from .seeds import build_seed_repository, write_seed_repository
from .sketch import ScenarioId, Sketch, generate_sketch, graph_entry_label, load_scenarios

__version__ = "0.1.0"

__all__ = [
    "API_ENTRY_POINTS",
    "Block",
    "BugPattern",
    "CATALOG",
    "CampaignConfig",
    "CampaignReport",
    "CampaignState",
    "Component",
    "ComponentGraph",
    "ContributionLedger",
    "CoverageReport",
    "CrashClusterer",
    "EffRecord",
    "ExecutionResult",
    "FaultSpec",
    "GraphBuilder",
    "Interface",
    "Model",
    "OpEdge",
    "OperatorKind",
    "OptimizerConfig",
    "Origin",
    "PillarGrid",
    "PointCloud",
    "Repository",
    "ScenarioId",
    "Sketch",
    "Tensor",
    "Verdict",
    "add_component",
    "assemble",
    "build_seed_repository",
    "canonical_json",
    "cluster_crashes",
    "components_for_scenario",
    "compute_eff",
    "cosine_similarity",
    "coverage_metrics",
    "decode_boxes",
    "encode_pillars",
    "errors",
    "execute_optimized",
    "execute_reference",
    "filter_crash_log",
    "fuzz_loop",
    "generate_inputs",
    "generate_sketch",
    "graph_digest",
    "graph_entry_label",
    "infer_edge_shape",
    "infer_shapes",
    "judge",
    "load_bug_patterns",
    "load_faults",
    "load_graph",
    "load_model",
    "load_repository",
    "load_scenarios",
    "match_bug_pattern",
    "max_inconsistency",
    "maybe_add_component",
    "mutate_backbone",
    "normalize_attrs",
    "pillar_summary",
    "prepare_execution_inputs",
    "preprocess_image",
    "read_tensors",
    "render_figures",
    "replay",
    "run_external",
    "save_graph",
    "save_model",
    "save_repository",
    "select_component",
    "select_operator",
    "structural_hash",
    "synthesize_params",
    "tokenize_log",
    "toposort_edges",
    "update_contribution",
    "validate_structure",
    "voxelize_points",
    "write_seed_repository",
    "write_tensors",
]
