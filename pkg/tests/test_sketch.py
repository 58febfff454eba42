"""Scenario table and sketch derivation."""

import json

import pytest

import modelfuzz as mf
from modelfuzz.errors import UnknownScenario


def test_default_scenario_table(scenarios):
    assert set(scenarios) == {"camera_only", "lidar_only", "camera_lidar"}
    cam = scenarios["camera_only"]
    assert cam.modalities == ("image",)
    assert not cam.needs_neck and cam.needs_postprocess
    lidar = scenarios["lidar_only"]
    assert lidar.preprocess_for("pointcloud") and lidar.needs_neck


def test_camera_sketch_wires_input_straight_to_backbone(scenarios):
    sk = mf.generate_sketch(scenarios["camera_only"])
    assert ("input:image", "backbone") in sk.wiring
    assert not sk.has_neck
    assert mf.graph_entry_label(sk) == "image"
    assert "camera_config" in sk.meta_inputs


def test_lidar_sketch_inserts_preprocess_chain(scenarios):
    sk = mf.generate_sketch(scenarios["lidar_only"])
    names = sk.slot_names()
    assert "preprocess:pillar_encoder" in names and "preprocess:middle_encoder" in names
    assert ("input:pointcloud", "preprocess:pillar_encoder") in sk.wiring
    assert ("preprocess:middle_encoder", "backbone") in sk.wiring
    assert sk.has_neck
    assert mf.graph_entry_label(sk) == "pointcloud"


def test_fusion_sketch_routes_cloud_to_postprocess(scenarios):
    sk = mf.generate_sketch(scenarios["camera_lidar"])
    assert mf.graph_entry_label(sk) == "image"
    assert ("input:pointcloud", "postprocess") in sk.wiring
    post = [s for s in sk.slots if s.role == "postprocess"]
    assert post and not post[0].mandatory
    assert set(sk.meta_inputs) == {"camera_config", "lidar_config"}


def test_sketch_is_deterministic(scenarios):
    a = mf.generate_sketch(scenarios["camera_lidar"])
    b = mf.generate_sketch(scenarios["camera_lidar"])
    assert a == b


def test_custom_scenario_file(tmp_path):
    doc = {
        "scenarios": [
            {
                "name": "cam_min",
                "modalities": ["image"],
                "needs_preprocess": {"image": False},
                "needs_postprocess": False,
                "needs_neck": False,
            }
        ]
    }
    path = tmp_path / "scen.json"
    path.write_text(json.dumps(doc))
    table = mf.load_scenarios(str(path))
    assert list(table) == ["cam_min"]
    sk = mf.generate_sketch(table["cam_min"])
    assert sk.slot_names() == ("input:image", "backbone", "head")


def test_empty_scenario_file_rejected(tmp_path):
    path = tmp_path / "none.json"
    path.write_text(json.dumps({"scenarios": []}))
    with pytest.raises(UnknownScenario):
        mf.load_scenarios(str(path))
