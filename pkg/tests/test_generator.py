"""Weighted selection, backbone mutation, and model assembly."""

import collections

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import modelfuzz as mf
from modelfuzz import ops
from modelfuzz.errors import (
    ChannelMismatch,
    EmptyCandidates,
    NoMutableEdge,
    PortCountMismatch,
    SlotMismatch,
)
from modelfuzz.generator import group_blocks, model_structure_id
from modelfuzz.graph import Block
from modelfuzz.repository import Origin


# --- weighted selection ----------------------------------------------------


def fake_component(ident):
    b = mf.GraphBuilder(np.random.default_rng(0))
    v = b.input(4)
    v = b.op("ReLU", v)
    b.output(v)
    return mf.Component(
        id=ident,
        kind="head",
        graph=b.graph(),
        scenarios=frozenset({"camera_only"}),
        interface=mf.Interface((4,), (4,)),
        origin=Origin("seed"),
    )


def test_selection_follows_contribution_weights():
    comps = [fake_component("a"), fake_component("b"), fake_component("c")]
    ledger = mf.ContributionLedger({"a": 1.0, "b": 1.0, "c": 2.0}, {})
    rng = np.random.default_rng(0)
    counts = collections.Counter(
        mf.select_component(comps, ledger, rng).id for _ in range(20_000)
    )
    assert abs(counts["a"] / 20_000 - 0.25) < 0.02
    assert abs(counts["b"] / 20_000 - 0.25) < 0.02
    assert abs(counts["c"] / 20_000 - 0.50) < 0.02


def test_selection_on_empty_candidates():
    with pytest.raises(EmptyCandidates):
        mf.select_component([], mf.ContributionLedger(), np.random.default_rng(0))


def test_operator_selection_never_returns_original():
    ledger = mf.ContributionLedger()
    rng = np.random.default_rng(1)
    for _ in range(500):
        assert mf.select_operator(ops.CATALOG, ledger, rng, "ReLU") != "ReLU"


def test_operator_selection_excludes_binary_kinds():
    ledger = mf.ContributionLedger()
    rng = np.random.default_rng(2)
    seen = {mf.select_operator(ops.CATALOG, ledger, rng, "Identity") for _ in range(2_000)}
    assert "Add" not in seen and "Concat" not in seen
    unary = {k for k, spec in ops.CATALOG.items() if spec.arity == (1, 1)}
    assert seen == unary - {"Identity"}


def test_operator_selection_is_conditional_on_exclusion():
    # With the original's weight pushed sky high, the redraw loop must still
    # return some other kind, distributed by the remaining weights.
    ledger = mf.ContributionLedger({}, {k: 1.0 for k in ops.CATALOG})
    ledger.operator_scores["Tanh"] = 1e9
    rng = np.random.default_rng(3)
    seen = collections.Counter(
        mf.select_operator(ops.CATALOG, ledger, rng, "Tanh") for _ in range(300)
    )
    assert "Tanh" not in seen
    assert len(seen) > 5


# --- backbone mutation -------------------------------------------------------


def test_mutation_yields_one_mutant_per_block_group(seed_repo, rng):
    ledger = mf.ContributionLedger.from_state(seed_repo.ledger_state)
    for bid in ("bb-residual", "bb-chain", "bb-pool"):
        parent = seed_repo.components[bid]
        groups = group_blocks(list(parent.blocks))
        mutants = mf.mutate_backbone(parent, ledger, rng)
        assert len(mutants) == len(groups)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=100_000))
def test_mutants_always_validate_and_infer(seed):
    repo = mf.build_seed_repository()
    ledger = mf.ContributionLedger.from_state(repo.ledger_state)
    rng = np.random.default_rng(seed)
    parent = repo.components[["bb-residual", "bb-chain", "bb-pool"][seed % 3]]
    for mutant in mf.mutate_backbone(parent, ledger, rng, iteration=seed):
        for block in mutant.blocks:
            assert mf.validate_structure(block) == []
        entry = mutant.interface.inputs[0]
        mf.infer_shapes(mutant.graph, [(entry, 32, 32)])
        assert mutant.origin.parent == parent.id
        assert mutant.origin.operator in ops.CATALOG


def test_mutation_replaces_whole_group(seed_repo, rng):
    ledger = mf.ContributionLedger.from_state(seed_repo.ledger_state)
    parent = seed_repo.components["bb-residual"]  # stem + three identical blocks
    groups = group_blocks(list(parent.blocks))
    body = next(g for g in groups if len(g[1]) == 3)
    mutants = mf.mutate_backbone(parent, ledger, rng)
    body_mutant = mutants[groups.index(body)]
    hashes = [mf.structural_hash(b) for b in body_mutant.blocks]
    assert len({hashes[i] for i in body[1]}) == 1  # group stays uniform
    assert hashes[body[1][0]] != mf.structural_hash(parent.blocks[body[1][0]])


def test_mutation_changes_exactly_one_edge_kind(seed_repo, rng):
    ledger = mf.ContributionLedger.from_state(seed_repo.ledger_state)
    parent = seed_repo.components["bb-chain"]
    for mutant in mf.mutate_backbone(parent, ledger, rng):
        for idx, (old, new) in enumerate(zip(parent.blocks, mutant.blocks)):
            old_kinds = [e.kind for e in old.edges]
            new_kinds = [e.kind for e in new.edges]
            assert len(old_kinds) == len(new_kinds)
            diffs = sum(a != b for a, b in zip(old_kinds, new_kinds))
            assert diffs in (0, 1)


def test_mutation_requires_unary_edge(rng):
    entry_only = Block(
        {"a": 4, "b": 8},
        (mf.OpEdge("Concat", {}, ("a", "a"), "b", {}),),
        "a",
        "b",
    )
    comp = mf.Component(
        id="bb-x",
        kind="backbone",
        graph=entry_only.as_graph(),
        scenarios=frozenset({"camera_only"}),
        interface=mf.Interface((4,), (8,)),
        origin=Origin("seed"),
        blocks=(entry_only,),
        taps=(0,),
    )
    with pytest.raises(NoMutableEdge):
        mf.mutate_backbone(comp, mf.ContributionLedger(), rng)


def test_mutant_ids_carry_parent_and_group(seed_repo, rng):
    ledger = mf.ContributionLedger.from_state(seed_repo.ledger_state)
    mutants = mf.mutate_backbone(seed_repo.components["bb-pool"], ledger, rng, iteration=17)
    assert [m.id for m in mutants] == ["bb-pool~i17g0", "bb-pool~i17g1"]


# --- assembly ----------------------------------------------------------------


def pick(repo, kind, scenario):
    return mf.components_for_scenario(repo, scenario, kind)[0]


def test_assemble_camera_model(seed_repo, scenarios, rng):
    scen = scenarios["camera_only"]
    sketch = mf.generate_sketch(scen)
    model = mf.assemble(sketch, pick(seed_repo, "head", scen), None, pick(seed_repo, "backbone", scen))
    assert model.entry_labels == ("image",)
    assert model.output_labels == ("det_0", "det_1")
    assert len(model.model_id) == 16
    shapes = mf.infer_shapes(model.graph, [(3, 32, 32)])
    assert all(v in shapes for v in model.graph.exits)


def test_assemble_necked_model(seed_repo, scenarios):
    scen = scenarios["lidar_only"]
    sketch = mf.generate_sketch(scen)
    model = mf.assemble(
        sketch,
        pick(seed_repo, "head", scen),
        pick(seed_repo, "neck", scen),
        pick(seed_repo, "backbone", scen),
    )
    assert model.entry_labels == ("pointcloud",)
    assert model.neck is not None


def test_neck_required_when_sketch_has_one(seed_repo, scenarios):
    scen = scenarios["lidar_only"]
    sketch = mf.generate_sketch(scen)
    with pytest.raises(SlotMismatch):
        mf.assemble(sketch, pick(seed_repo, "head", scen), None, pick(seed_repo, "backbone", scen))


def test_neck_rejected_when_sketch_lacks_one(seed_repo, scenarios):
    scen = scenarios["camera_only"]
    lidar = scenarios["lidar_only"]
    sketch = mf.generate_sketch(scen)
    with pytest.raises(SlotMismatch):
        mf.assemble(
            sketch,
            pick(seed_repo, "head", scen),
            pick(seed_repo, "neck", lidar),
            pick(seed_repo, "backbone", scen),
        )


def necked_stub(kind, inputs, outputs, scenario="lidar_only"):
    b = mf.GraphBuilder(np.random.default_rng(0))
    vins = [b.input(c) for c in inputs]
    if len(vins) > 1:
        v = b.op("Concat", tuple(vins[:2]))
    else:
        v = vins[0]
    outs = [b.op("Conv2D", v, channels=c, kernel=1) for c in outputs]
    for o in outs:
        b.output(o)
    return mf.Component(
        id=f"{kind}-stub",
        kind=kind,
        graph=b.graph(),
        scenarios=frozenset({scenario}),
        interface=mf.Interface(tuple(inputs), tuple(outputs)),
        origin=Origin("seed"),
    )


def test_port_count_check_runs_before_channel_check(seed_repo, scenarios):
    # A neck expecting three backbone feeds fails on counts (rule 3), even
    # though its channel tuple also disagrees with the backbone's.
    scen = scenarios["lidar_only"]
    sketch = mf.generate_sketch(scen)
    neck = necked_stub("neck", (8, 8, 8), (16,))
    with pytest.raises(PortCountMismatch) as exc:
        mf.assemble(sketch, pick(seed_repo, "head", scen), neck, pick(seed_repo, "backbone", scen))
    assert exc.value.rule == "3"


def test_channel_rules_cite_their_numbers(seed_repo, scenarios):
    scen = scenarios["lidar_only"]
    sketch = mf.generate_sketch(scen)
    # rule 1: neck -> head channel agreement
    neck_wrong_out = necked_stub("neck", (8, 8), (12,))
    with pytest.raises(ChannelMismatch) as exc1:
        mf.assemble(sketch, pick(seed_repo, "head", scen), neck_wrong_out, pick(seed_repo, "backbone", scen))
    assert exc1.value.rule == "1"
    # rule 2: backbone -> neck channel agreement
    neck_wrong_in = necked_stub("neck", (8, 6), (16,))
    with pytest.raises(ChannelMismatch) as exc2:
        mf.assemble(sketch, pick(seed_repo, "head", scen), neck_wrong_in, pick(seed_repo, "backbone", scen))
    assert exc2.value.rule == "2"


def test_neckless_rules_cite_their_numbers(seed_repo, scenarios):
    scen = scenarios["camera_only"]
    sketch = mf.generate_sketch(scen)
    head_three = necked_stub("head", (8, 8, 8), (4,), scenario="camera_only")
    with pytest.raises(PortCountMismatch) as exc:
        mf.assemble(sketch, head_three, None, pick(seed_repo, "backbone", scen))
    assert exc.value.rule == "2"
    head_wrong = necked_stub("head", (8, 6), (4,), scenario="camera_only")
    with pytest.raises(ChannelMismatch) as exc2:
        mf.assemble(sketch, head_wrong, None, pick(seed_repo, "backbone", scen))
    assert exc2.value.rule == "1"


def test_model_id_depends_on_structure_not_weights(seed_repo, scenarios):
    scen = scenarios["camera_only"]
    sketch = mf.generate_sketch(scen)
    head = pick(seed_repo, "head", scen)
    bb = pick(seed_repo, "backbone", scen)
    m1 = mf.assemble(sketch, head, None, bb)
    m2 = mf.assemble(sketch, head, None, bb)
    assert m1.model_id == m2.model_id

    other = mf.components_for_scenario(seed_repo, scen, "backbone")[1]
    m3 = mf.assemble(sketch, head, None, other)
    assert m3.model_id != m1.model_id

    # same graph assembled under a different scenario name hashes differently
    alt = model_structure_id(m1.graph, "other_scenario", m1.output_labels)
    assert alt != m1.model_id


def test_model_save_load_round_trip(tmp_path, seed_repo, scenarios):
    scen = scenarios["camera_only"]
    sketch = mf.generate_sketch(scen)
    model = mf.assemble(sketch, pick(seed_repo, "head", scen), None, pick(seed_repo, "backbone", scen))
    path = tmp_path / "model.json"
    mf.save_model(model, str(path))
    again = mf.load_model(str(path), scenarios)
    assert again.model_id == model.model_id
    assert again.entry_labels == model.entry_labels
    assert again.output_labels == model.output_labels
    inputs = {"image": mf.Tensor(np.random.default_rng(0).random((3, 32, 32), dtype=np.float32), "image")}
    a = mf.execute_reference(model, inputs)
    b = mf.execute_reference(again, inputs)
    for label in a.outputs:
        np.testing.assert_array_equal(a.outputs[label].values, b.outputs[label].values)
