import json

import pytest

from capmix.errors import SchemaError
from capmix.geometry import Pose, Trajectory
from capmix.scene_io import Scene, load_scene, parse_scene, save_scene, window_scenes
from helpers import three_lane_graph


def scene_dict(**overrides):
    data = {
        "schema_version": 1,
        "ego_id": "ego",
        "scene_context": {"near_intersection": True},
        "lanes": [
            {"lane_id": "A", "centerline": [[0.0, 0.0], [50.0, 0.0]],
             "right_neighbor": "B", "successors": [], "predecessors": []},
            {"lane_id": "B", "centerline": [[0.0, -3.5], [50.0, -3.5]],
             "left_neighbor": "A"},
        ],
        "agents": [
            {"agent_id": "ego", "category": "vehicle",
             "poses": [{"t": 0.0, "x": 0.0, "y": 0.0, "heading": 0.0, "speed": 5.0},
                       {"t": 0.5, "x": 2.5, "y": 0.0, "heading": 0.0, "speed": 5.0}]},
        ],
    }
    data.update(overrides)
    return data


def test_parse_and_roundtrip(tmp_path):
    scene = parse_scene(scene_dict(), scene_id="s1")
    assert scene.ego().agent_id == "ego"
    assert scene.scene_context == {"near_intersection": True}
    assert len(scene.graph) == 2

    path = tmp_path / "s1.json"
    save_scene(scene, path)
    loaded = load_scene(path)
    assert loaded.scene_id == "s1"
    assert [l.lane_id for l in loaded.graph] == [l.lane_id for l in scene.graph]
    assert loaded.ego().poses == scene.ego().poses


def test_schema_version_and_missing_fields():
    with pytest.raises(SchemaError):
        parse_scene(scene_dict(schema_version=99))
    bad = scene_dict()
    del bad["lanes"]
    with pytest.raises(SchemaError):
        parse_scene(bad)
    bad = scene_dict()
    del bad["agents"][0]["poses"][0]["heading"]
    with pytest.raises(SchemaError):
        parse_scene(bad)


def test_inconsistent_neighbors_rejected():
    bad = scene_dict()
    bad["lanes"][1]["left_neighbor"] = None  # breaks A.right = B reciprocity
    with pytest.raises(SchemaError):
        parse_scene(bad)


def test_missing_ego_raises():
    scene = parse_scene(scene_dict(ego_id="ghost"))
    with pytest.raises(SchemaError):
        scene.ego()


def make_long_scene(span=20.0, dt=0.5):
    graph = three_lane_graph(length=400.0)
    n = int(span / dt) + 1
    ego = Trajectory(
        "ego", "vehicle",
        [Pose(t=i * dt, x=i * dt * 8.0, y=0.0, heading=0.0, speed=8.0) for i in range(n)],
    )
    other = Trajectory(
        "car-2", "vehicle",
        [Pose(t=i * dt, x=30.0, y=3.5, heading=0.0, speed=0.0) for i in range(n)],
    )
    return Scene("long", graph, [ego, other], "ego", {})


def test_twenty_second_scene_splits_into_four_windows():
    windows = window_scenes(make_long_scene(20.0), 5.0)
    assert len(windows) == 4
    assert [w.scene_id for w in windows] == ["long_w0", "long_w1", "long_w2", "long_w3"]
    for w in windows:
        ego = w.ego()
        assert ego.t_end - ego.t_start <= 5.0


def test_windows_preserve_agents_with_enough_poses():
    windows = window_scenes(make_long_scene(20.0), 5.0)
    for w in windows:
        assert {t.agent_id for t in w.agents} == {"ego", "car-2"}


def test_window_requires_positive_length():
    with pytest.raises(ValueError):
        window_scenes(make_long_scene(), 0.0)
