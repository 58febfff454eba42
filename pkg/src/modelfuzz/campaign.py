"""The campaign driver: configuration, the fuzz loop, coverage, and replay."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import ops
from .errors import (
    ConfigInvalid,
    DuplicateStructure,
    FuzzError,
    MissingArtifact,
    UnknownScenario,
)
from .executors import (
    FaultSpec,
    OptimizerConfig,
    execute_optimized,
    execute_reference,
    load_faults,
    read_tensors,
    write_tensors,
)
from .fixtures import NOMINAL_HW, PointCloud, decode_boxes, encode_pillars, generate_inputs, voxelize_points
from .generator import (
    ContributionLedger,
    Model,
    assemble,
    load_model,
    mutate_backbone,
    save_model,
    select_component,
)
from .graph import Tensor, canonical_json
from .heuristics import EffRecord, compute_eff, maybe_add_component, update_contribution
from .oracle import (
    DEFAULT_EPSILON,
    DEFAULT_SIMILARITY,
    CrashClusterer,
    Verdict,
    cosine_similarity,
    judge,
    load_bug_patterns,
    match_bug_pattern,
)
from .report import CoverageReport, render_figures, write_history, write_json_report
from .repository import (
    Repository,
    candidate_or_raise,
    components_for_scenario,
    load_repository,
    save_repository,
)
from .seeds import build_seed_repository
from .sketch import Sketch, generate_sketch, graph_entry_label, load_scenarios

INPUT_SEED_STRIDE = 1_000_003


@dataclass
class CampaignConfig:
    """Everything a fuzzing campaign needs, resolvable to a deterministic run."""

    seed: int = 0
    iterations: int | None = None
    duration: float | None = None
    scenarios: tuple[str, ...] = ()
    epsilon: float = DEFAULT_EPSILON
    sim_threshold: float = DEFAULT_SIMILARITY
    fuse_conv_bn: bool = True
    reduced_precision: bool = True
    buffer_reuse: bool = True
    faults_file: str | None = None
    repo_path: str | None = None
    out_dir: str = "campaign-out"
    scenario_file: str | None = None

    def validate(self) -> None:
        if self.iterations is not None and self.duration is not None:
            raise ConfigInvalid("set iterations or duration, not both")
        if self.iterations is not None and self.iterations <= 0:
            raise ConfigInvalid(f"iterations must be positive, got {self.iterations}")
        if self.duration is not None and self.duration <= 0:
            raise ConfigInvalid(f"duration must be positive, got {self.duration}")
        if self.epsilon < 0:
            raise ConfigInvalid(f"epsilon must be non-negative, got {self.epsilon}")
        if not -1.0 <= self.sim_threshold <= 1.0:
            raise ConfigInvalid(f"sim_threshold must lie in [-1, 1], got {self.sim_threshold}")

    def budget_iterations(self) -> int | None:
        """Iteration cap for this run; None means the duration clock governs."""
        if self.duration is not None:
            return None
        return 100 if self.iterations is None else self.iterations

    def optimizer(self, faults: tuple[FaultSpec, ...]) -> OptimizerConfig:
        return OptimizerConfig(
            fuse_conv_bn=self.fuse_conv_bn,
            reduced_precision=self.reduced_precision,
            buffer_reuse=self.buffer_reuse,
            fault_injections=faults,
        )

    def to_doc(self) -> dict:
        return {
            "seed": self.seed,
            "iterations": self.iterations,
            "duration": self.duration,
            "scenarios": list(self.scenarios),
            "epsilon": self.epsilon,
            "sim_threshold": self.sim_threshold,
            "fuse_conv_bn": self.fuse_conv_bn,
            "reduced_precision": self.reduced_precision,
            "buffer_reuse": self.buffer_reuse,
            "faults_file": self.faults_file,
            "repo_path": self.repo_path,
            "out_dir": self.out_dir,
            "scenario_file": self.scenario_file,
        }


@dataclass
class CampaignState:
    """Mutable bookkeeping shared by the loop and the coverage metrics."""

    repo: Repository
    ledger: ContributionLedger
    clusterer: CrashClusterer
    used_operator_kinds: set[str] = field(default_factory=set)
    used_component_ids: set[str] = field(default_factory=set)
    last_eff: dict[str, float] = field(default_factory=dict)
    assembled: int = 0
    valid: int = 0
    bug_records: list[dict] = field(default_factory=list)
    dedup_keys: set[tuple[str, str]] = field(default_factory=set)
    failures: list[dict] = field(default_factory=list)

    @property
    def valid_rate(self) -> float:
        return self.valid / self.assembled if self.assembled else 0.0


@dataclass
class CampaignReport:
    """Summary handed back by fuzz_loop after artifacts are written."""

    iterations: int
    assembled: int
    valid: int
    bug_records: list[dict]
    coverage: CoverageReport
    failures: list[dict]
    out_dir: Path

    @property
    def valid_rate(self) -> float:
        return self.valid / self.assembled if self.assembled else 0.0

    @property
    def distinct_bugs(self) -> int:
        return len(self.bug_records)


def coverage_metrics(state: CampaignState) -> CoverageReport:
    """Recompute coverage from the live repository; nothing is cached."""
    covered_ops = sorted(state.used_operator_kinds & set(ops.CATALOG))
    live_ids = set(state.repo.components)
    covered_comps = sorted(state.used_component_ids & live_ids)
    comp_cov = len(covered_comps) / len(live_ids) if live_ids else 0.0
    return CoverageReport(
        operator_coverage=len(covered_ops) / len(ops.CATALOG),
        component_coverage=comp_cov,
        covered_operators=tuple(covered_ops),
        covered_components=tuple(covered_comps),
        repository_size=len(live_ids),
    )


def prepare_execution_inputs(sketch: Sketch, raw: Mapping[str, Tensor]) -> dict[str, Tensor]:
    """Run the fixed preprocessing stages the sketch declares for the backbone feed."""
    entry = graph_entry_label(sketch)
    if entry not in raw:
        raise UnknownScenario(f"scenario inputs carry no {entry!r} modality")
    if sketch.scenario.preprocess_for(entry):
        pc = PointCloud.from_tensor(raw[entry])
        dense = encode_pillars(voxelize_points(pc), target_hw=NOMINAL_HW)
        return {entry: Tensor(dense, entry)}
    return {entry: raw[entry]}


def run_postprocess(sketch: Sketch, outputs: Mapping[str, Tensor], raw: Mapping[str, Tensor]) -> np.ndarray | None:
    """Apply the fixed detection-decoding stage when the sketch declares one."""
    if not any(slot.role == "postprocess" for slot in sketch.slots):
        return None
    pc = None
    if ("input:pointcloud", "postprocess") in sketch.wiring:
        pc = PointCloud.from_tensor(raw["pointcloud"])
    return decode_boxes(dict(outputs), pc)


def _fault_doc(fault: FaultSpec) -> dict:
    trigger: dict = {"kind": fault.kind}
    if fault.channels is not None:
        trigger["channels"] = fault.channels
    effect: dict = {"type": fault.effect}
    if fault.message:
        effect["message"] = fault.message
    if fault.magnitude:
        effect["magnitude"] = fault.magnitude
    return {"id": fault.id, "trigger": trigger, "effect": effect}


def _faults_from_docs(docs: list[dict]) -> tuple[FaultSpec, ...]:
    out = []
    for entry in docs:
        out.append(
            FaultSpec(
                id=entry["id"],
                kind=entry["trigger"]["kind"],
                channels=entry["trigger"].get("channels"),
                effect=entry["effect"]["type"],
                message=entry["effect"].get("message", ""),
                magnitude=float(entry["effect"].get("magnitude", 0.0)),
            )
        )
    return tuple(out)


def _load_repo(config: CampaignConfig) -> Repository:
    if config.repo_path is None:
        return build_seed_repository()
    repo = load_repository(config.repo_path)
    if not repo.components:
        raise ConfigInvalid(f"repository at {config.repo_path!r} holds no usable components")
    return repo


def _resolve_scenarios(config: CampaignConfig) -> tuple[dict, list[str]]:
    table = load_scenarios(config.scenario_file)
    names = list(config.scenarios) if config.scenarios else list(table)
    unknown = [n for n in names if n not in table]
    if unknown:
        raise ConfigInvalid(f"unknown scenario names: {unknown}")
    return table, names


def fuzz_loop(config: CampaignConfig) -> CampaignReport:
    """Run one differential-fuzzing campaign and write all artifacts.

    Each iteration draws a scenario round-robin, generates a sketch and
    inputs, selects components by contribution weight, mutates the chosen
    backbone (one mutant per block group), and assembles, executes, and
    judges every mutant. Outcomes feed the contribution ledger and the
    component repository. Only configuration and repository problems are
    fatal; anything that breaks a single model is recorded and skipped. The
    run is fully determined by the configuration.
    """
    config.validate()
    table, names = _resolve_scenarios(config)
    try:
        faults = load_faults(config.faults_file)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read fault file {config.faults_file!r}: {exc}") from exc
    opt_cfg = config.optimizer(faults)
    repo = _load_repo(config)
    ledger = ContributionLedger.from_state(repo.ledger_state)
    for cid in repo.components:
        ledger.ensure_component(cid)
    patterns = load_bug_patterns()
    rng = np.random.default_rng(config.seed)
    state = CampaignState(repo=repo, ledger=ledger, clusterer=CrashClusterer(config.sim_threshold))

    out = Path(config.out_dir)
    for sub in ("models", "records", "figures"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    bugs_path = out / "bugs.jsonl"
    bugs_path.write_text("")

    history: list[dict] = []
    cap = config.budget_iterations()
    clock_start = time.monotonic()
    i = 0
    while True:
        if cap is not None and i >= cap:
            break
        if cap is None and time.monotonic() - clock_start >= config.duration:
            break
        scenario = table[names[i % len(names)]]
        try:
            _run_iteration(config, state, scenario, rng, opt_cfg, patterns, i, out, bugs_path)
        except FuzzError as exc:
            state.failures.append(
                {"iteration": i, "stage": "iteration", "error": type(exc).__name__, "detail": str(exc)}
            )
        cov = coverage_metrics(state)
        history.append(
            {
                "iteration": i,
                "scenario": scenario.name,
                "assembled": state.assembled,
                "valid": state.valid,
                "valid_rate": state.valid_rate,
                "bugs": len(state.bug_records),
                "operator_coverage": cov.operator_coverage,
                "component_coverage": cov.component_coverage,
                "repository_size": len(state.repo.components),
            }
        )
        i += 1

    repo.ledger_state = ledger.to_state()
    save_repository(repo, str(out / "repository"))
    coverage = coverage_metrics(state)
    write_history(out / "history.csv", history)
    write_json_report(
        out / "coverage.json",
        {
            **coverage.to_doc(),
            "assembled": state.assembled,
            "valid": state.valid,
            "valid_rate": state.valid_rate,
            "distinct_bugs": len(state.bug_records),
        },
    )
    write_json_report(
        out / "campaign.json",
        {
            "config": config.to_doc(),
            "iterations_run": i,
            "assembled": state.assembled,
            "valid": state.valid,
            "valid_rate": state.valid_rate,
            "distinct_bugs": len(state.bug_records),
            "rejected_components": [
                {"component_id": r.component_id, "reason": r.reason} for r in repo.rejects
            ],
            "failures": state.failures,
        },
    )
    render_figures(out / "figures", history, state.bug_records, ledger.component_scores)
    return CampaignReport(
        iterations=i,
        assembled=state.assembled,
        valid=state.valid,
        bug_records=state.bug_records,
        coverage=coverage,
        failures=state.failures,
        out_dir=out,
    )


def _run_iteration(
    config: CampaignConfig,
    state: CampaignState,
    scenario,
    rng: np.random.Generator,
    opt_cfg: OptimizerConfig,
    patterns,
    iteration: int,
    out: Path,
    bugs_path: Path,
) -> None:
    sketch = generate_sketch(scenario)
    input_seed = config.seed * INPUT_SEED_STRIDE + iteration
    raw_inputs = generate_inputs(scenario, input_seed)
    exec_inputs = prepare_execution_inputs(sketch, raw_inputs)

    repo = state.repo
    head = select_component(
        candidate_or_raise(components_for_scenario(repo, scenario, "head"), f"head/{scenario.name}"),
        state.ledger,
        rng,
    )
    neck = None
    if sketch.has_neck:
        neck = select_component(
            candidate_or_raise(components_for_scenario(repo, scenario, "neck"), f"neck/{scenario.name}"),
            state.ledger,
            rng,
        )
    parent = select_component(
        candidate_or_raise(components_for_scenario(repo, scenario, "backbone"), f"backbone/{scenario.name}"),
        state.ledger,
        rng,
    )
    mutants = mutate_backbone(parent, state.ledger, rng, iteration=iteration)

    for mutant in mutants:
        state.assembled += 1
        try:
            model = assemble(sketch, head, neck, mutant)
        except FuzzError as exc:
            state.failures.append(
                {
                    "iteration": iteration,
                    "stage": "assemble",
                    "error": type(exc).__name__,
                    "rule": getattr(exc, "rule", ""),
                    "detail": str(exc),
                }
            )
            continue
        try:
            ref = execute_reference(model, exec_inputs)
        except FuzzError as exc:
            state.failures.append(
                {"iteration": iteration, "stage": "reference", "error": type(exc).__name__, "detail": str(exc)}
            )
            continue
        if ref.status != "ok":
            state.failures.append(
                {
                    "iteration": iteration,
                    "stage": "reference",
                    "error": "ReferenceCrash",
                    "detail": ref.crash_log or "",
                }
            )
            continue

        state.valid += 1
        state.used_component_ids.add(head.id)
        if neck is not None:
            state.used_component_ids.add(neck.id)
        state.used_component_ids.add(parent.id)
        state.used_operator_kinds.update(edge.kind for edge in model.graph.edges)

        opt = execute_optimized(model, exec_inputs, opt_cfg)
        verdict = judge(ref, opt, config.epsilon)
        if verdict.kind == "crash":
            cluster_id, _ = state.clusterer.assign(verdict.evidence["crash_log"])
            verdict.crash_cluster = cluster_id
            verdict.pattern_label = match_bug_pattern(verdict.evidence["crash_log"], patterns)

        eff = compute_eff(verdict, exec_inputs)
        record = EffRecord(model.model_id, eff, state.last_eff.get(parent.id, 0.0))
        for key in [head.id] + ([neck.id] if neck is not None else []) + [parent.id]:
            update_contribution(state.ledger, key, record.delta)
        update_contribution(state.ledger, mutant.origin.operator, record.delta)
        state.last_eff[parent.id] = eff

        try:
            status, new_id = maybe_add_component(repo, mutant, verdict, record.delta)
        except DuplicateStructure:
            status, new_id = "duplicate", None
        if status == "added" and new_id is not None:
            state.ledger.ensure_component(new_id)
            state.last_eff[new_id] = eff
            state.used_component_ids.add(new_id)

        if verdict.kind != "none":
            _record_bug(config, state, scenario, model, verdict, iteration, input_seed, out, bugs_path, opt_cfg)

        run_postprocess(sketch, ref.outputs, raw_inputs)


def _record_bug(
    config: CampaignConfig,
    state: CampaignState,
    scenario,
    model: Model,
    verdict: Verdict,
    iteration: int,
    input_seed: int,
    out: Path,
    bugs_path: Path,
    opt_cfg: OptimizerConfig,
) -> None:
    if verdict.kind == "crash":
        dedup = ("crash", str(verdict.crash_cluster))
    else:
        dedup = (verdict.kind, model.model_id)
    if dedup in state.dedup_keys:
        return
    state.dedup_keys.add(dedup)
    bug = {
        "iteration": iteration,
        "model_id": model.model_id,
        "kind": verdict.kind,
        "value": verdict.max_inconsistency_value if verdict.kind == "inconsistency" else None,
        "cluster": verdict.crash_cluster,
        "label": verdict.pattern_label,
        "seed": input_seed,
    }
    state.bug_records.append(bug)
    with open(bugs_path, "a") as fh:
        fh.write(canonical_json(bug))

    model_file = out / "models" / f"{model.model_id}.json"
    if not model_file.exists():
        save_model(model, str(model_file))
    record_doc = {
        "bug": bug,
        "scenario": scenario.name,
        "scenario_file": config.scenario_file,
        "model_file": f"models/{model.model_id}.json",
        "epsilon": config.epsilon,
        "sim_threshold": config.sim_threshold,
        "optimizer": {
            "fuse_conv_bn": opt_cfg.fuse_conv_bn,
            "reduced_precision": opt_cfg.reduced_precision,
            "buffer_reuse": opt_cfg.buffer_reuse,
        },
        "faults": [_fault_doc(f) for f in opt_cfg.fault_injections],
        "crash_log": verdict.evidence.get("crash_log"),
    }
    write_json_report(out / "records" / f"bug-{len(state.bug_records):04d}.json", record_doc)


def replay(
    record_path: str,
    repo_path: str | None = None,
    out_dir: str | None = None,
    inputs_file: str | None = None,
) -> Verdict:
    """Re-run one recorded bug and re-judge it.

    Inputs are regenerated from the recorded seed unless a tensor-exchange
    file overrides them. The verdict's evidence carries a "reproduced" flag:
    same verdict kind, and for crashes a crash log whose similarity to the
    recorded log clears the recorded threshold.
    """
    record_file = Path(record_path)
    if not record_file.is_file():
        raise MissingArtifact(f"bug record not found: {record_file}")
    doc = json.loads(record_file.read_text())
    base = record_file.parent.parent
    model_file = base / doc["model_file"]
    if not model_file.is_file():
        raise MissingArtifact(f"model file referenced by the record is gone: {model_file}")

    scenarios = load_scenarios(doc.get("scenario_file"))
    if doc["scenario"] not in scenarios:
        raise UnknownScenario(f"recorded scenario {doc['scenario']!r} is not configured")
    scenario = scenarios[doc["scenario"]]
    model = load_model(str(model_file), scenarios)
    sketch = generate_sketch(scenario)

    if inputs_file is not None:
        exec_inputs = read_tensors(inputs_file)
    else:
        raw = generate_inputs(scenario, int(doc["bug"]["seed"]))
        exec_inputs = prepare_execution_inputs(sketch, raw)

    opt_flags = doc["optimizer"]
    cfg = OptimizerConfig(
        fuse_conv_bn=bool(opt_flags["fuse_conv_bn"]),
        reduced_precision=bool(opt_flags["reduced_precision"]),
        buffer_reuse=bool(opt_flags["buffer_reuse"]),
        fault_injections=_faults_from_docs(doc.get("faults", [])),
    )
    ref = execute_reference(model, exec_inputs)
    if ref.status != "ok":
        return Verdict("none", evidence={"reference_crash_log": ref.crash_log or ""})
    opt = execute_optimized(model, exec_inputs, cfg)
    verdict = judge(ref, opt, float(doc["epsilon"]))
    if verdict.kind == "crash":
        verdict.pattern_label = match_bug_pattern(verdict.evidence["crash_log"], load_bug_patterns())

    recorded_kind = doc["bug"]["kind"]
    reproduced = verdict.kind == recorded_kind
    if reproduced and verdict.kind == "crash" and doc.get("crash_log"):
        similarity = cosine_similarity(verdict.evidence["crash_log"], doc["crash_log"])
        reproduced = similarity > float(doc.get("sim_threshold", DEFAULT_SIMILARITY))
        verdict.evidence["recorded_log_similarity"] = similarity
    verdict.evidence["reproduced"] = reproduced
    verdict.evidence["recorded_kind"] = recorded_kind

    if out_dir is not None:
        target = Path(out_dir)
        target.mkdir(parents=True, exist_ok=True)
        write_tensors(str(target / "replay_reference.txt"), ref.outputs)
        if opt.status == "ok":
            write_tensors(str(target / "replay_optimized.txt"), opt.outputs)
    return verdict
