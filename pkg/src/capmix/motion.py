"""Per-agent action classification from trajectories.

Two independent channels per agent: a longitudinal channel driven by
smoothed speed/acceleration and a lateral channel driven by lane-assignment
flips and accumulated heading change. Each channel covers the trajectory
span with non-overlapping segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InsufficientDataError
from .geometry import LaneGraph, Trajectory, assign_lane, tangent_heading, wrap_angle

# Per-step heading increment below this is treated as "not turning".
HEADING_RUN_EPS = 1e-4
# A lane-assignment flip only counts as a lane change when the agent is
# roughly tracking the lane; crossing a lane perpendicularly is not one.
LANE_ALIGN_TOLERANCE = math.pi / 4


class ActionLabel(Enum):
    STOP = "STOP"
    ACCELERATE = "ACCELERATE"
    DECELERATE = "DECELERATE"
    CRUISE = "CRUISE"
    REVERSE = "REVERSE"
    KEEP_LANE = "KEEP-LANE"
    LEFT_LANE_CHANGE = "LEFT-LANE-CHANGE"
    RIGHT_LANE_CHANGE = "RIGHT-LANE-CHANGE"
    LEFT_TURN = "LEFT-TURN"
    RIGHT_TURN = "RIGHT-TURN"
    U_TURN = "U-TURN"


LONGITUDINAL_LABELS = frozenset(
    {ActionLabel.STOP, ActionLabel.ACCELERATE, ActionLabel.DECELERATE, ActionLabel.CRUISE, ActionLabel.REVERSE}
)
LATERAL_LABELS = frozenset(
    {
        ActionLabel.KEEP_LANE,
        ActionLabel.LEFT_LANE_CHANGE,
        ActionLabel.RIGHT_LANE_CHANGE,
        ActionLabel.LEFT_TURN,
        ActionLabel.RIGHT_TURN,
        ActionLabel.U_TURN,
    }
)


@dataclass(frozen=True)
class ActionSegment:
    label: ActionLabel
    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"segment needs t_start < t_end, got [{self.t_start}, {self.t_end}]")

    def to_dict(self):
        return {"label": self.label.value, "t_start": self.t_start, "t_end": self.t_end}


@dataclass(frozen=True)
class MotionParams:
    stop_speed: float = 0.5          # m/s
    accel_threshold: float = 0.5     # m/s^2
    decel_threshold: float = 0.5     # m/s^2
    turn_heading_delta: float = math.pi / 3
    uturn_heading_delta: float = 5 * math.pi / 6
    smoothing_window: float = 1.0    # s
    min_segment: float = 0.5         # s

    def __post_init__(self):
        values = (
            self.stop_speed,
            self.accel_threshold,
            self.decel_threshold,
            self.turn_heading_delta,
            self.uturn_heading_delta,
            self.smoothing_window,
            self.min_segment,
        )
        if any(v <= 0 for v in values):
            raise ValueError("all motion parameters must be positive")
        if self.uturn_heading_delta <= self.turn_heading_delta:
            raise ValueError("uturn_heading_delta must exceed turn_heading_delta")


@dataclass
class AgentAnnotation:
    """Both classified channels for one agent, time-aligned to its trajectory."""

    agent_id: str
    category: str
    longitudinal: list[ActionSegment]
    lateral: list[ActionSegment]

    def to_dict(self):
        return {
            "agent_id": self.agent_id,
            "category": self.category,
            "longitudinal": [s.to_dict() for s in self.longitudinal],
            "lateral": [s.to_dict() for s in self.lateral],
        }


def label_at(segments: list[ActionSegment], t: float) -> ActionLabel:
    """Label covering time t; a shared boundary resolves to the earlier segment."""
    for seg in segments:
        if seg.t_start <= t <= seg.t_end:
            return seg.label
    raise ValueError(f"t={t} outside annotated span")


def _moving_average(times: np.ndarray, values: np.ndarray, window: float) -> np.ndarray:
    """Centered moving average over a time window (irregular sampling ok)."""
    lo = np.searchsorted(times, times - window / 2.0, side="left")
    hi = np.searchsorted(times, times + window / 2.0, side="right")
    csum = np.concatenate([[0.0], np.cumsum(values)])
    return (csum[hi] - csum[lo]) / (hi - lo)


def _central_diff(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (times[2:] - times[:-2])
    out[0] = (values[1] - values[0]) / (times[1] - times[0])
    out[-1] = (values[-1] - values[-2]) / (times[-1] - times[-2])
    return out


def _runs(labels: list) -> list[tuple[int, int]]:
    """Index ranges [i, j] (inclusive) of equal consecutive labels."""
    runs = []
    start = 0
    for i in range(1, len(labels)):
        if labels[i] != labels[start]:
            runs.append((start, i - 1))
            start = i
    runs.append((start, len(labels) - 1))
    return runs


def _segments_from_pose_labels(times: np.ndarray, labels: list[ActionLabel]) -> list[ActionSegment]:
    """Compress per-pose labels into segments covering [t0, tN].

    Boundaries sit at the midpoint between the last pose of one run and the
    first pose of the next.
    """
    segments = []
    runs = _runs(labels)
    for k, (i, j) in enumerate(runs):
        t_start = times[0] if k == 0 else (times[runs[k - 1][1]] + times[i]) / 2.0
        t_end = times[-1] if k == len(runs) - 1 else (times[j] + times[runs[k + 1][0]]) / 2.0
        segments.append(ActionSegment(labels[i], float(t_start), float(t_end)))
    return segments


def classify_longitudinal(traj: Trajectory, params: MotionParams = MotionParams()) -> list[ActionSegment]:
    """Segment the trajectory into STOP/ACCELERATE/DECELERATE/CRUISE/REVERSE."""
    if len(traj.poses) < 2:
        raise InsufficientDataError(f"agent {traj.agent_id!r}: need >= 2 poses")
    times = np.array([p.t for p in traj.poses])
    # speed magnitude: reversing poses may carry signed speed
    speeds = _moving_average(times, np.abs([p.speed for p in traj.poses]), params.smoothing_window)
    accel = _central_diff(times, speeds)
    reversing = [p.reversing for p in traj.poses]

    labels = []
    for i in range(len(times)):
        if speeds[i] < params.stop_speed:
            labels.append(ActionLabel.STOP)
        elif accel[i] > params.accel_threshold:
            labels.append(ActionLabel.ACCELERATE)
        elif accel[i] < -params.decel_threshold:
            labels.append(ActionLabel.DECELERATE)
        elif reversing[i]:
            labels.append(ActionLabel.REVERSE)
        else:
            labels.append(ActionLabel.CRUISE)

    labels = _merge_short_runs(times, labels, accel, params.min_segment)
    return _segments_from_pose_labels(times, labels)


def _merge_short_runs(times, labels, accel, min_segment):
    """Fold runs shorter than min_segment into the neighbor whose mean
    acceleration is closest (ties go left)."""
    labels = list(labels)
    for _ in range(len(labels)):
        runs = _runs(labels)
        if len(runs) == 1:
            break
        merged = False
        for k, (i, j) in enumerate(runs):
            t_start = times[0] if k == 0 else (times[runs[k - 1][1]] + times[i]) / 2.0
            t_end = times[-1] if k == len(runs) - 1 else (times[j] + times[runs[k + 1][0]]) / 2.0
            if t_end - t_start >= min_segment:
                continue
            mean_here = float(np.mean(accel[i : j + 1]))
            choices = []
            if k > 0:
                li, lj = runs[k - 1]
                choices.append((abs(mean_here - float(np.mean(accel[li : lj + 1]))), 0, labels[li]))
            if k < len(runs) - 1:
                ri, rj = runs[k + 1]
                choices.append((abs(mean_here - float(np.mean(accel[ri : rj + 1]))), 1, labels[ri]))
            target = min(choices)[2]
            for idx in range(i, j + 1):
                labels[idx] = target
            merged = True
            break
        if not merged:
            break
    return labels


def classify_lateral(
    traj: Trajectory,
    graph: LaneGraph,
    params: MotionParams = MotionParams(),
) -> list[ActionSegment]:
    """Segment the trajectory into lane keeps, lane changes, and turns.

    Turns are maximal constant-sign runs of the smoothed heading increment
    whose total exceeds the turn threshold; lane changes are assignment
    flips onto a neighbor lane, bracketed by half a smoothing window per
    side. Turns take precedence where the two overlap.
    """
    if len(traj.poses) < 2:
        raise InsufficientDataError(f"agent {traj.agent_id!r}: need >= 2 poses")
    times = np.array([p.t for p in traj.poses])
    n = len(times)

    # unwrap headings via per-step wrapped increments, then smooth
    raw_steps = [
        wrap_angle(b.heading - a.heading) for a, b in zip(traj.poses, traj.poses[1:])
    ]
    unwrapped = np.concatenate([[traj.poses[0].heading], traj.poses[0].heading + np.cumsum(raw_steps)])
    smooth = _moving_average(times, unwrapped, params.smoothing_window)
    steps = np.diff(smooth)

    labels: list[ActionLabel | None] = [None] * n

    # turn intervals from constant-sign runs of the heading increment
    signs = np.where(steps > HEADING_RUN_EPS, 1, np.where(steps < -HEADING_RUN_EPS, -1, 0))
    start = 0
    for end in range(1, len(signs) + 1):
        if end < len(signs) and signs[end] == signs[start]:
            continue
        if signs[start] != 0:
            total = float(np.sum(steps[start:end]))
            label = None
            if abs(total) >= params.uturn_heading_delta:
                label = ActionLabel.U_TURN
            elif abs(total) >= params.turn_heading_delta:
                label = ActionLabel.LEFT_TURN if total > 0 else ActionLabel.RIGHT_TURN
            if label is not None:
                for idx in range(start, end + 1):
                    labels[idx] = label
        start = end

    # lane-change events: assignment flip onto a neighbor lane while the
    # agent's heading tracks the new lane's tangent
    lane_ids = [assign_lane(p, graph) for p in traj.poses]
    events = []
    for k in range(1, n):
        prev, cur = lane_ids[k - 1], lane_ids[k]
        if prev is None or cur is None or prev == cur:
            continue
        prev_lane = graph.lanes.get(prev)
        if prev_lane is None:
            continue
        deviation = abs(
            wrap_angle(traj.poses[k].heading - tangent_heading(traj.poses[k], graph.lanes[cur]))
        )
        if deviation > LANE_ALIGN_TOLERANCE:
            continue
        if cur == prev_lane.right_neighbor:
            events.append(((times[k - 1] + times[k]) / 2.0, ActionLabel.RIGHT_LANE_CHANGE))
        elif cur == prev_lane.left_neighbor:
            events.append(((times[k - 1] + times[k]) / 2.0, ActionLabel.LEFT_LANE_CHANGE))

    half = params.smoothing_window / 2.0
    for i in range(n):
        if labels[i] is not None:
            continue  # turn wins over lane change
        covering = [(abs(times[i] - tb), tb, lab) for tb, lab in events if abs(times[i] - tb) <= half]
        if covering:
            labels[i] = min(covering)[2]

    for i in range(n):
        if labels[i] is None:
            labels[i] = ActionLabel.KEEP_LANE

    return _segments_from_pose_labels(times, labels)


def annotate_agent(
    traj: Trajectory,
    graph: LaneGraph,
    params: MotionParams = MotionParams(),
) -> AgentAnnotation:
    """Run both channels for one agent."""
    return AgentAnnotation(
        agent_id=traj.agent_id,
        category=traj.category,
        longitudinal=classify_longitudinal(traj, params),
        lateral=classify_lateral(traj, graph, params),
    )
