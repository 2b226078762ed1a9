"""Ego-centric interaction annotation.

Per aligned timestep, each traffic agent gets a topological lane mode
relative to the ego lane; per clip, a winding-angle homotopy class of the
agent-minus-ego relative motion. A fixed-precedence rule set turns those
signals plus the motion channels into one interaction category per agent,
and a deterministic template (optionally rewritten by a text backend)
renders the scene description.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import CoincidentAgentsError
from .geometry import (
    DEFAULT_MAX_HOPS,
    DEFAULT_MAX_LATERAL,
    LaneGraph,
    Pose,
    Trajectory,
    assign_lane,
    longitudinal_chain,
    neighbor_chain,
    project_frenet,
    reachable,
    wrap_angle,
)
from .motion import ActionLabel, AgentAnnotation, MotionParams, annotate_agent, label_at


class LaneMode(Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"
    AHEAD = "AHEAD"
    BEHIND = "BEHIND"
    NOTON = "NOTON"


class Homotopy(Enum):
    S = "S"
    CW = "CW"
    CCW = "CCW"


class InteractionCategory(Enum):
    BYPASS_CONES = "BYPASS-CONES"
    YIELD_PEDESTRIAN = "YIELD-PEDESTRIAN"
    YIELD_INCOMING = "YIELD-INCOMING"
    OVERTAKE_STRADDLE = "OVERTAKE-STRADDLE"
    OVERTAKE_LANE_CHANGE = "OVERTAKE-LANE-CHANGE"
    OTHER = "OTHER"


@dataclass(frozen=True)
class InteractionParams:
    winding_threshold: float = math.pi / 2
    grid_dt: float = 0.5              # max aligned-timestep spacing, seconds
    max_hops: int = DEFAULT_MAX_HOPS
    max_lateral: float = DEFAULT_MAX_LATERAL
    half_lane_width: float = 1.75     # straddle threshold on |d|
    straddle_min_duration: float = 0.5
    opposite_heading: float = 3 * math.pi / 4
    coincident_dist: float = 0.01     # meters


@dataclass
class InteractionRecord:
    agent_id: str
    category: InteractionCategory
    lane_mode_sequence: list[LaneMode]
    homotopy: Homotopy
    evidence: str

    def to_dict(self):
        return {
            "agent_id": self.agent_id,
            "category": self.category.value,
            "lane_mode_sequence": [m.value for m in self.lane_mode_sequence],
            "homotopy": self.homotopy.value,
            "evidence": self.evidence,
        }


def resample_poses(traj: Trajectory, times: np.ndarray) -> list[Pose]:
    """Linear interpolation of a trajectory onto explicit timestamps."""
    src_t = np.array([p.t for p in traj.poses])
    xs = np.interp(times, src_t, [p.x for p in traj.poses])
    ys = np.interp(times, src_t, [p.y for p in traj.poses])
    speeds = np.interp(times, src_t, [p.speed for p in traj.poses])
    steps = [wrap_angle(b.heading - a.heading) for a, b in zip(traj.poses, traj.poses[1:])]
    unwrapped = np.concatenate([[traj.poses[0].heading], traj.poses[0].heading + np.cumsum(steps)])
    headings = np.interp(times, src_t, unwrapped)
    return [
        Pose(t=float(t), x=float(x), y=float(y), heading=wrap_angle(float(h)), speed=float(v))
        for t, x, y, h, v in zip(times, xs, ys, headings, speeds)
    ]


def common_grid(ego: Trajectory, agent: Trajectory, grid_dt: float) -> np.ndarray:
    """Evenly spaced timestamps over the overlapping span, spacing <= grid_dt."""
    t0 = max(ego.t_start, agent.t_start)
    t1 = min(ego.t_end, agent.t_end)
    if t1 <= t0:
        raise ValueError("trajectories do not overlap in time")
    n = max(2, int(math.ceil((t1 - t0) / grid_dt)) + 1)
    return np.linspace(t0, t1, n)


def _wrap_array(angles: np.ndarray) -> np.ndarray:
    wrapped = (angles + np.pi) % (2 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def winding_angle(ego_xy: np.ndarray, agent_xy: np.ndarray, coincident_dist: float = 0.01) -> float:
    """Accumulated wrapped angular increments of the relative vector agent - ego."""
    rel = np.asarray(agent_xy, dtype=float) - np.asarray(ego_xy, dtype=float)
    radii = np.hypot(rel[:, 0], rel[:, 1])
    if np.any(radii < coincident_dist):
        raise CoincidentAgentsError(
            f"relative distance fell below {coincident_dist} m; winding undefined"
        )
    angles = np.arctan2(rel[:, 1], rel[:, 0])
    return float(np.sum(_wrap_array(np.diff(angles))))


def classify_homotopy(
    ego_traj: Trajectory,
    agent_traj: Trajectory,
    winding_threshold: float = math.pi / 2,
    grid_dt: float = 0.5,
) -> tuple[Homotopy, float]:
    """Classify relative motion as static / clockwise / counterclockwise.

    Returns (class, total winding angle). CCW is positive winding at or
    above the threshold, CW is negative at or below minus the threshold.
    """
    grid = common_grid(ego_traj, agent_traj, grid_dt)
    ego_poses = resample_poses(ego_traj, grid)
    agent_poses = resample_poses(agent_traj, grid)
    delta = winding_angle(
        np.array([[p.x, p.y] for p in ego_poses]),
        np.array([[p.x, p.y] for p in agent_poses]),
    )
    if delta >= winding_threshold:
        return Homotopy.CCW, delta
    if delta <= -winding_threshold:
        return Homotopy.CW, delta
    return Homotopy.S, delta


def lane_mode_at(
    ego_pose: Pose,
    agent_pose: Pose,
    graph: LaneGraph,
    max_hops: int = DEFAULT_MAX_HOPS,
    max_lateral: float = DEFAULT_MAX_LATERAL,
) -> LaneMode:
    """Topological relation of the agent's lane to the ego lane at one step.

    NOTON when either pose has no lane or the two lanes cannot reach each
    other in either direction. Same lane orders by arc length; pure
    neighbor chains map to LEFT/RIGHT; pure successor/predecessor chains
    map to AHEAD/BEHIND. Lanes reachable only via mixed paths fall back to
    the sign of the agent's lateral offset in the ego lane frame.
    """
    ego_lane = assign_lane(ego_pose, graph, max_lateral)
    agent_lane = assign_lane(agent_pose, graph, max_lateral)
    if ego_lane is None or agent_lane is None:
        return LaneMode.NOTON
    if not reachable(ego_lane, agent_lane, graph, max_hops) and not reachable(
        agent_lane, ego_lane, graph, max_hops
    ):
        return LaneMode.NOTON
    ego_frenet = project_frenet(ego_pose, graph.lane(ego_lane))
    if agent_lane == ego_lane:
        agent_frenet = project_frenet(agent_pose, graph.lane(ego_lane))
        return LaneMode.AHEAD if agent_frenet.s >= ego_frenet.s else LaneMode.BEHIND
    if agent_lane in neighbor_chain(graph, ego_lane, "left", max_hops):
        return LaneMode.LEFT
    if agent_lane in neighbor_chain(graph, ego_lane, "right", max_hops):
        return LaneMode.RIGHT
    if agent_lane in longitudinal_chain(graph, ego_lane, "forward", max_hops):
        return LaneMode.AHEAD
    if agent_lane in longitudinal_chain(graph, ego_lane, "backward", max_hops):
        return LaneMode.BEHIND
    # mixed-path fallback: side of the ego lane the agent sits on
    agent_in_ego_frame = project_frenet(agent_pose, graph.lane(ego_lane))
    if abs(agent_in_ego_frame.d) <= 1e-9:
        return LaneMode.AHEAD if agent_in_ego_frame.s >= ego_frenet.s else LaneMode.BEHIND
    return LaneMode.LEFT if agent_in_ego_frame.d > 0 else LaneMode.RIGHT


@dataclass
class AgentObservation:
    """Everything the interaction rules need about one agent, time-aligned."""

    agent_id: str
    category: str
    annotation: Optional[AgentAnnotation]
    lane_modes: list[LaneMode]
    mode_times: np.ndarray
    homotopy: Homotopy
    winding: float
    heading: Optional[np.ndarray] = None   # agent heading on mode_times
    distance: Optional[np.ndarray] = None  # ego-agent range on mode_times


@dataclass
class EgoObservation:
    """Ego-side signals the rules consult."""

    annotation: AgentAnnotation
    heading: Optional[np.ndarray] = None       # on its own grid below
    grid: Optional[np.ndarray] = None
    straddles: list[tuple[float, float]] = field(default_factory=list)


def _find_transit(modes: list[LaneMode], times) -> Optional[tuple[int, int, int, LaneMode]]:
    """First AHEAD -> (LEFT|RIGHT) -> BEHIND subsequence, greedy."""
    try:
        i = modes.index(LaneMode.AHEAD)
    except ValueError:
        return None
    j = next((k for k in range(i + 1, len(modes)) if modes[k] in (LaneMode.LEFT, LaneMode.RIGHT)), None)
    if j is None:
        return None
    k = next((m for m in range(j + 1, len(modes)) if modes[m] == LaneMode.BEHIND), None)
    if k is None:
        return None
    return i, j, k, modes[j]


def _lane_change_segments(annotation: AgentAnnotation):
    return [
        s
        for s in annotation.lateral
        if s.label in (ActionLabel.LEFT_LANE_CHANGE, ActionLabel.RIGHT_LANE_CHANGE)
    ]


def _overlaps(seg, t_lo, t_hi):
    return seg.t_start <= t_hi and seg.t_end >= t_lo


def _ego_slows_at(ego: AgentAnnotation, t: float) -> bool:
    try:
        return label_at(ego.longitudinal, t) in (ActionLabel.DECELERATE, ActionLabel.STOP)
    except ValueError:
        return False


def _classify_agent(
    ego: EgoObservation,
    obs: AgentObservation,
    params: InteractionParams,
) -> tuple[InteractionCategory, str]:
    """Apply the rule set in fixed precedence; returns (category, evidence)."""
    transit = _find_transit(obs.lane_modes, obs.mode_times)
    category = obs.category.lower()
    lane_changes = _lane_change_segments(ego.annotation)

    if transit is not None:
        i, j, k, side_mode = transit
        t_lo, t_hi = float(obs.mode_times[i]), float(obs.mode_times[k])
        side = side_mode.value
        transit_note = (
            f"lane mode transit AHEAD->{side}->BEHIND over [{t_lo:.2f}, {t_hi:.2f}] s"
        )
        overlapping_changes = [s for s in lane_changes if _overlaps(s, t_lo, t_hi)]
        overlapping_straddles = [
            (a, b) for a, b in ego.straddles if a <= t_hi and b >= t_lo
        ]

        if "cone" in category and (overlapping_changes or overlapping_straddles):
            how = "lane change" if overlapping_changes else "straddle"
            return (
                InteractionCategory.BYPASS_CONES,
                f"{transit_note}; ego bypasses the blocking cone via {how} on the {side} side",
            )

    if "pedestrian" in category:
        for t, mode in zip(obs.mode_times, obs.lane_modes):
            if mode == LaneMode.AHEAD and _ego_slows_at(ego.annotation, float(t)):
                return (
                    InteractionCategory.YIELD_PEDESTRIAN,
                    f"pedestrian AHEAD at t={float(t):.2f} s while ego decelerates/stops",
                )

    if ("vehicle" in category or "car" in category) and obs.heading is not None and ego.heading is not None:
        closing = (
            np.diff(obs.distance) < 0 if obs.distance is not None and len(obs.distance) > 1 else None
        )
        for idx in range(len(obs.mode_times) - 1):
            t = float(obs.mode_times[idx])
            heading_gap = abs(wrap_angle(float(obs.heading[idx]) - float(ego.heading[idx])))
            if (
                heading_gap > params.opposite_heading
                and closing is not None
                and bool(closing[idx])
                and _ego_slows_at(ego.annotation, t)
            ):
                return (
                    InteractionCategory.YIELD_INCOMING,
                    f"oncoming vehicle (heading gap {heading_gap:.2f} rad, closing) "
                    f"at t={t:.2f} s while ego decelerates/stops",
                )

    if transit is not None:
        i, j, k, side_mode = transit
        t_lo, t_hi = float(obs.mode_times[i]), float(obs.mode_times[k])
        side = side_mode.value
        transit_note = (
            f"lane mode transit AHEAD->{side}->BEHIND over [{t_lo:.2f}, {t_hi:.2f}] s"
        )
        overlapping_straddles = [
            (a, b) for a, b in ego.straddles if a <= t_hi and b >= t_lo
        ]
        if overlapping_straddles:
            a, b = overlapping_straddles[0]
            return (
                InteractionCategory.OVERTAKE_STRADDLE,
                f"{transit_note}; ego straddles the lane divider over [{a:.2f}, {b:.2f}] s "
                f"without a lane change, passing on the {side} side",
            )
        out_then_back = None
        for a_idx in range(len(lane_changes)):
            for b_idx in range(a_idx + 1, len(lane_changes)):
                if lane_changes[a_idx].label != lane_changes[b_idx].label:
                    out_then_back = (lane_changes[a_idx], lane_changes[b_idx])
                    break
            if out_then_back:
                break
        if out_then_back:
            first, second = out_then_back
            return (
                InteractionCategory.OVERTAKE_LANE_CHANGE,
                f"{transit_note}; ego lane-change pair {first.label.value} then "
                f"{second.label.value}, passing on the {side} side",
            )

    return InteractionCategory.OTHER, "no interaction rule matched"


def detect_interactions(
    ego: EgoObservation,
    agents: list[AgentObservation],
    scene_context: Optional[dict] = None,
    params: InteractionParams = InteractionParams(),
) -> list[InteractionRecord]:
    """One record per agent; deterministic and order-independent."""
    records = []
    for obs in agents:
        category, evidence = _classify_agent(ego, obs, params)
        records.append(
            InteractionRecord(
                agent_id=obs.agent_id,
                category=category,
                lane_mode_sequence=list(obs.lane_modes),
                homotopy=obs.homotopy,
                evidence=evidence,
            )
        )
    records.sort(key=lambda r: r.agent_id)
    return records


_LONG_PHRASES = {
    ActionLabel.STOP: "stops",
    ActionLabel.ACCELERATE: "accelerates",
    ActionLabel.DECELERATE: "decelerates",
    ActionLabel.CRUISE: "cruises",
    ActionLabel.REVERSE: "reverses",
}

_LAT_PHRASES = {
    ActionLabel.KEEP_LANE: "keeps its lane",
    ActionLabel.LEFT_LANE_CHANGE: "changes lanes to the left",
    ActionLabel.RIGHT_LANE_CHANGE: "changes lanes to the right",
    ActionLabel.LEFT_TURN: "turns left",
    ActionLabel.RIGHT_TURN: "turns right",
    ActionLabel.U_TURN: "makes a U-turn",
}


def _join_phrases(phrases: list[str]) -> str:
    if len(phrases) == 1:
        return phrases[0]
    return ", ".join(phrases[:-1]) + ", then " + phrases[-1]


def _transit_side(record: InteractionRecord) -> str:
    transit = _find_transit(record.lane_mode_sequence, None)
    return transit[3].value.lower() if transit else "unknown"


def render_description(
    ego: AgentAnnotation,
    records: list[InteractionRecord],
    scene_context: Optional[dict] = None,
) -> str:
    """Deterministic template: ego behavior, non-OTHER interactions, context."""
    sentences = [
        "The ego vehicle "
        + _join_phrases([_LONG_PHRASES[s.label] for s in ego.longitudinal])
        + "; it "
        + _join_phrases([_LAT_PHRASES[s.label] for s in ego.lateral])
        + "."
    ]
    for record in records:
        side = _transit_side(record)
        if record.category == InteractionCategory.OVERTAKE_LANE_CHANGE:
            sentences.append(
                f"It overtakes the {record.agent_id} via a lane change, "
                f"passing it on the {side} side."
            )
        elif record.category == InteractionCategory.OVERTAKE_STRADDLE:
            sentences.append(
                f"It overtakes the {record.agent_id} by straddling the lane divider, "
                f"passing it on the {side} side."
            )
        elif record.category == InteractionCategory.BYPASS_CONES:
            sentences.append(
                f"It bypasses the blocking traffic cone {record.agent_id} on the {side} side."
            )
        elif record.category == InteractionCategory.YIELD_PEDESTRIAN:
            sentences.append(f"It yields to the crossing pedestrian {record.agent_id}.")
        elif record.category == InteractionCategory.YIELD_INCOMING:
            sentences.append(f"It yields to the incoming vehicle {record.agent_id}.")
    flags = [k.replace("_", " ") for k, v in sorted((scene_context or {}).items()) if v is True]
    notes = [f"{k.replace('_', ' ')}: {v}" for k, v in sorted((scene_context or {}).items()) if isinstance(v, str)]
    if flags or notes:
        sentences.append("Scene context: " + "; ".join(flags + notes) + ".")
    return " ".join(sentences)


@dataclass
class SceneCaption:
    text: str
    source: str          # "template" or the rewriting backend's name
    warning: bool = False

    def to_dict(self):
        return {"text": self.text, "source": self.source, "warning": self.warning}


def aggregate_description(
    ego: AgentAnnotation,
    records: list[InteractionRecord],
    scene_context: Optional[dict] = None,
    aggregator=None,
) -> SceneCaption:
    """Render the template; optionally rewrite it through a text backend.

    On backend failure the template text is returned with a warning flag.
    """
    from .backends.core import ChatRequest
    from .errors import BackendError
    from .prompts import PROMPTS

    text = render_description(ego, records, scene_context)
    if aggregator is None:
        return SceneCaption(text=text, source="template")
    request = ChatRequest(
        backend_name=aggregator.name,
        prompt_parts=[PROMPTS["scene_rewrite"], text],
    )
    try:
        response = aggregator.complete(request)
    except BackendError:
        return SceneCaption(text=text, source="template", warning=True)
    return SceneCaption(text=response.text, source=aggregator.name)


@dataclass
class SceneAnnotation:
    scene_id: str
    ego: AgentAnnotation
    agents: list[AgentAnnotation]
    interactions: list[InteractionRecord]
    caption: SceneCaption

    def to_dict(self):
        return {
            "scene_id": self.scene_id,
            "ego": self.ego.to_dict(),
            "agents": [a.to_dict() for a in self.agents],
            "interactions": [r.to_dict() for r in self.interactions],
            "caption": self.caption.to_dict(),
        }


def observe_scene(scene, motion_params: MotionParams, params: InteractionParams):
    """Annotate the ego and every usable agent, aligned on the ego grid.

    Agents with fewer than two poses or fewer than two aligned timesteps
    are skipped (too transient to classify).
    """
    ego_traj = scene.ego()
    ego_annotation = annotate_agent(ego_traj, scene.graph, motion_params)

    span = ego_traj.t_end - ego_traj.t_start
    n = max(2, int(math.ceil(span / params.grid_dt)) + 1)
    grid = np.linspace(ego_traj.t_start, ego_traj.t_end, n)
    ego_poses = resample_poses(ego_traj, grid)
    ego_heading = np.array([p.heading for p in ego_poses])
    ego_xy = np.array([[p.x, p.y] for p in ego_poses])

    lane_ids = [assign_lane(p, scene.graph, params.max_lateral) for p in ego_poses]
    offsets = [
        abs(project_frenet(p, scene.graph.lane(lid)).d) if lid is not None else math.nan
        for p, lid in zip(ego_poses, lane_ids)
    ]
    straddles = []
    run_start = None
    for idx in range(n + 1):
        inside = (
            idx < n
            and lane_ids[idx] is not None
            and offsets[idx] > params.half_lane_width
            and (run_start is None or lane_ids[idx] == lane_ids[run_start])
        )
        if inside and run_start is None:
            run_start = idx
        elif not inside and run_start is not None:
            if grid[idx - 1] - grid[run_start] >= params.straddle_min_duration:
                straddles.append((float(grid[run_start]), float(grid[idx - 1])))
            run_start = idx if idx < n and lane_ids[idx] is not None and offsets[idx] > params.half_lane_width else None

    ego_obs = EgoObservation(
        annotation=ego_annotation, heading=ego_heading, grid=grid, straddles=straddles
    )

    observations = []
    for agent_traj in scene.others():
        if len(agent_traj.poses) < 2:
            continue
        mask = (grid >= agent_traj.t_start) & (grid <= agent_traj.t_end)
        times = grid[mask]
        if len(times) < 2:
            continue
        agent_poses = resample_poses(agent_traj, times)
        ego_at = [ego_poses[i] for i in np.flatnonzero(mask)]
        modes = [
            lane_mode_at(e, a, scene.graph, params.max_hops, params.max_lateral)
            for e, a in zip(ego_at, agent_poses)
        ]
        homotopy, winding = classify_homotopy(
            ego_traj, agent_traj, params.winding_threshold, params.grid_dt
        )
        distance = np.hypot(
            *(np.array([[p.x, p.y] for p in agent_poses]) - np.array([[p.x, p.y] for p in ego_at])).T
        )
        observations.append(
            AgentObservation(
                agent_id=agent_traj.agent_id,
                category=agent_traj.category,
                annotation=annotate_agent(agent_traj, scene.graph, motion_params),
                lane_modes=modes,
                mode_times=times,
                homotopy=homotopy,
                winding=winding,
                heading=np.array([p.heading for p in agent_poses]),
                distance=distance,
            )
        )
    observations.sort(key=lambda o: o.agent_id)
    return ego_obs, observations


def annotate_scene(
    scene,
    motion_params: MotionParams = MotionParams(),
    params: InteractionParams = InteractionParams(),
    aggregator=None,
) -> SceneAnnotation:
    """Full per-scene annotation: motion channels, interactions, description."""
    ego_obs, agent_obs = observe_scene(scene, motion_params, params)
    records = detect_interactions(ego_obs, agent_obs, scene.scene_context, params)
    caption = aggregate_description(
        ego_obs.annotation, records, scene.scene_context, aggregator
    )
    return SceneAnnotation(
        scene_id=scene.scene_id,
        ego=ego_obs.annotation,
        agents=[o.annotation for o in agent_obs],
        interactions=records,
        caption=caption,
    )
