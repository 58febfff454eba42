"""Component repository: validation, dedup, persistence."""

import json

import numpy as np
import pytest

import modelfuzz as mf
from modelfuzz.errors import ComponentInvalid, DuplicateStructure, ManifestMissing
from modelfuzz.repository import Origin, validate_component


def small_head(ident="h-test"):
    b = mf.GraphBuilder(np.random.default_rng(1), prefix="t")
    v = b.input(8)
    v = b.op("Conv2D", v, channels=4, kernel=1)
    b.output(v)
    graph = b.graph()
    return mf.Component(
        id=ident,
        kind="head",
        graph=graph,
        scenarios=frozenset({"camera_only"}),
        interface=mf.Interface((8,), (4,)),
        origin=Origin("seed"),
    )


def test_seed_repository_is_complete_and_valid(seed_repo):
    assert len(seed_repo.components) == 9
    kinds = sorted((c.kind, c.id) for c in seed_repo.components.values())
    assert sum(1 for k, _ in kinds if k == "backbone") == 3
    assert sum(1 for k, _ in kinds if k == "neck") == 2
    assert sum(1 for k, _ in kinds if k == "head") == 4
    for comp in seed_repo.components.values():
        validate_component(comp)  # raises on any defect
    assert seed_repo.rejects == []


def test_every_scenario_has_all_component_kinds(seed_repo, scenarios):
    for scen in scenarios.values():
        assert mf.components_for_scenario(seed_repo, scen, "backbone")
        assert mf.components_for_scenario(seed_repo, scen, "head")
        if scen.needs_neck:
            assert mf.components_for_scenario(seed_repo, scen, "neck")


def test_components_for_scenario_sorted_and_filtered(seed_repo):
    heads = mf.components_for_scenario(seed_repo, "camera_only", "head")
    ids = [c.id for c in heads]
    assert ids == sorted(ids)
    assert all("camera_only" in c.scenarios for c in heads)


def test_add_component_mints_sequential_ids(seed_repo):
    new_id = mf.add_component(seed_repo, small_head())
    assert new_id == "m0001"
    assert new_id in seed_repo.components
    assert seed_repo.components[new_id].id == new_id
    assert seed_repo.ledger_state["components"][new_id] == 1.0


def test_add_rejects_structural_duplicates(seed_repo):
    first = mf.add_component(seed_repo, small_head("h-one"))
    with pytest.raises(DuplicateStructure) as exc:
        mf.add_component(seed_repo, small_head("h-two"))  # same structure, new id
    assert exc.value.existing_id == first


def test_add_rejects_invalid_component(seed_repo):
    comp = small_head()
    bad = mf.Component(
        id=comp.id,
        kind="head",
        graph=comp.graph,
        scenarios=comp.scenarios,
        interface=mf.Interface((8,), (99,)),  # wrong declared outputs
        origin=comp.origin,
    )
    with pytest.raises(ComponentInvalid):
        mf.add_component(seed_repo, bad)


def test_save_load_round_trip(tmp_path, seed_repo):
    where = tmp_path / "repo"
    mf.save_repository(seed_repo, str(where))
    again = mf.load_repository(str(where))
    assert sorted(again.components) == sorted(seed_repo.components)
    assert again.rejects == []
    assert again.ledger_state == seed_repo.ledger_state
    for cid, comp in again.components.items():
        validate_component(comp)
        if comp.kind == "backbone":
            assert comp.blocks is not None and comp.taps is not None

    # a second save must be byte-identical
    second = tmp_path / "repo2"
    mf.save_repository(again, str(second))
    assert (where / "manifest.json").read_bytes() == (second / "manifest.json").read_bytes()
    for f in sorted((where / "graphs").iterdir()):
        assert f.read_bytes() == (second / "graphs" / f.name).read_bytes()


def test_load_missing_manifest(tmp_path):
    with pytest.raises(ManifestMissing):
        mf.load_repository(str(tmp_path / "nowhere"))


def test_load_collects_rejects_for_broken_entries(tmp_path, seed_repo):
    where = tmp_path / "repo"
    mf.save_repository(seed_repo, str(where))
    manifest = json.loads((where / "manifest.json").read_text())
    # point one component at a missing graph file
    manifest["components"][0]["graph_file"] = "graphs/gone.json"
    (where / "manifest.json").write_text(json.dumps(manifest))
    repo = mf.load_repository(str(where))
    assert len(repo.components) == 8
    assert len(repo.rejects) == 1
    assert isinstance(repo.rejects[0], ComponentInvalid)


def test_mutated_backbone_can_be_added_and_reloaded(tmp_path, seed_repo, rng):
    ledger = mf.ContributionLedger.from_state(seed_repo.ledger_state)
    parent = seed_repo.components["bb-chain"]
    mutants = mf.mutate_backbone(parent, ledger, rng)
    added = []
    for m in mutants:
        try:
            added.append(mf.add_component(seed_repo, m))
        except DuplicateStructure:
            pass
    assert added
    where = tmp_path / "repo"
    mf.save_repository(seed_repo, str(where))
    again = mf.load_repository(str(where))
    assert again.rejects == []
    for new_id in added:
        comp = again.components[new_id]
        assert comp.kind == "backbone" and comp.origin.kind == "mutated"
        assert comp.origin.parent == "bb-chain"
