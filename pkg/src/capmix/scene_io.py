"""Scene JSON schema: lane graphs, agent trajectories, scene context.

Schema (version 1):

    {
      "schema_version": 1,
      "ego_id": "ego",                      # optional, defaults to "ego"
      "scene_context": {"near_intersection": true},   # optional flags
      "lanes": [
        {"lane_id": "A", "centerline": [[x, y], ...],
         "left_neighbor": "B" | null, "right_neighbor": null,
         "successors": ["C"], "predecessors": []}
      ],
      "agents": [
        {"agent_id": "ego", "category": "vehicle",
         "poses": [{"t": 0.0, "x": 0.0, "y": 0.0, "heading": 0.0,
                    "speed": 5.0, "reversing": false}, ...]}
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SchemaError
from .geometry import Lane, LaneGraph, Pose, Trajectory

SCENE_SCHEMA_VERSION = 1


@dataclass
class Scene:
    scene_id: str
    graph: LaneGraph
    agents: list[Trajectory]
    ego_id: str = "ego"
    scene_context: dict = field(default_factory=dict)

    def ego(self) -> Trajectory:
        for traj in self.agents:
            if traj.agent_id == self.ego_id:
                return traj
        raise SchemaError(f"scene {self.scene_id!r} has no agent {self.ego_id!r}")

    def others(self) -> list[Trajectory]:
        return [t for t in self.agents if t.agent_id != self.ego_id]


def _require(mapping, key, context):
    if key not in mapping:
        raise SchemaError(f"{context}: missing required field {key!r}")
    return mapping[key]


def parse_scene(data: dict, scene_id: str = "scene") -> Scene:
    version = _require(data, "schema_version", scene_id)
    if version != SCENE_SCHEMA_VERSION:
        raise SchemaError(f"{scene_id}: unsupported schema_version {version!r}")
    try:
        lanes = [
            Lane(
                lane_id=str(_require(entry, "lane_id", f"{scene_id}.lanes[{i}]")),
                centerline=_require(entry, "centerline", f"{scene_id}.lanes[{i}]"),
                left_neighbor=entry.get("left_neighbor"),
                right_neighbor=entry.get("right_neighbor"),
                successors=entry.get("successors", ()),
                predecessors=entry.get("predecessors", ()),
            )
            for i, entry in enumerate(_require(data, "lanes", scene_id))
        ]
        graph = LaneGraph(lanes)
        agents = []
        for i, entry in enumerate(_require(data, "agents", scene_id)):
            ctx = f"{scene_id}.agents[{i}]"
            poses = [
                Pose(
                    t=float(_require(p, "t", ctx)),
                    x=float(_require(p, "x", ctx)),
                    y=float(_require(p, "y", ctx)),
                    heading=float(_require(p, "heading", ctx)),
                    speed=float(_require(p, "speed", ctx)),
                    reversing=bool(p.get("reversing", False)),
                )
                for p in _require(entry, "poses", ctx)
            ]
            agents.append(
                Trajectory(
                    agent_id=str(_require(entry, "agent_id", ctx)),
                    category=str(_require(entry, "category", ctx)),
                    poses=poses,
                )
            )
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{scene_id}: {exc}") from exc
    return Scene(
        scene_id=scene_id,
        graph=graph,
        agents=agents,
        ego_id=str(data.get("ego_id", "ego")),
        scene_context=dict(data.get("scene_context", {})),
    )


def load_scene(path) -> Scene:
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    return parse_scene(data, scene_id=path.stem)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCENE_SCHEMA_VERSION,
        "ego_id": scene.ego_id,
        "scene_context": scene.scene_context,
        "lanes": [
            {
                "lane_id": lane.lane_id,
                "centerline": [list(pt) for pt in lane.centerline],
                "left_neighbor": lane.left_neighbor,
                "right_neighbor": lane.right_neighbor,
                "successors": list(lane.successors),
                "predecessors": list(lane.predecessors),
            }
            for lane in scene.graph
        ],
        "agents": [
            {
                "agent_id": traj.agent_id,
                "category": traj.category,
                "poses": [
                    {
                        "t": p.t,
                        "x": p.x,
                        "y": p.y,
                        "heading": p.heading,
                        "speed": p.speed,
                        "reversing": p.reversing,
                    }
                    for p in traj.poses
                ],
            }
            for traj in scene.agents
        ],
    }


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2, sort_keys=True)
        fh.write("\n")


def window_scenes(scene: Scene, window: float) -> list[Scene]:
    """Split a scene into fixed-length time windows (last one closed).

    Agents with fewer than two poses inside a window are dropped there;
    windows in which the ego itself has fewer than two poses are skipped.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    ego = scene.ego()
    out = []
    edge = ego.t_start
    index = 0
    while edge < ego.t_end:
        hi = min(edge + window, ego.t_end)
        last = hi >= ego.t_end
        agents = []
        for traj in scene.agents:
            poses = [
                p
                for p in traj.poses
                if edge <= p.t < hi or (last and p.t == hi)
            ]
            if len(poses) >= 2:
                agents.append(Trajectory(traj.agent_id, traj.category, poses))
        windowed = Scene(
            scene_id=f"{scene.scene_id}_w{index}",
            graph=scene.graph,
            agents=agents,
            ego_id=scene.ego_id,
            scene_context=dict(scene.scene_context),
        )
        if any(t.agent_id == scene.ego_id for t in agents):
            out.append(windowed)
        edge += window
        index += 1
    return out
