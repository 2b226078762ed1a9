"""Lane-graph and trajectory geometry.

Shared substrate for the rule annotators: closed-form polyline projection
(Frenet coordinates), lane assignment with a heading tie-break, and bounded
topological reachability over successor + neighbor edges.

Conventions: map frame in meters, headings in radians normalized to
(-pi, pi], lateral offset `d` positive to the left of the centerline
tangent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import InvalidLaneError, LaneLookupError

DEFAULT_MAX_LATERAL = 2.0  # ~half a lane width
DEFAULT_MAX_HOPS = 8


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = (angle + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class Pose:
    """Kinematic state of one agent at time t."""

    t: float
    x: float
    y: float
    heading: float
    speed: float
    reversing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass(frozen=True)
class Trajectory:
    """Timestamped pose sequence for one agent."""

    agent_id: str
    category: str
    poses: tuple[Pose, ...]

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        times = [p.t for p in self.poses]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"timestamps must strictly increase for agent {self.agent_id!r}")

    @property
    def t_start(self) -> float:
        return self.poses[0].t

    @property
    def t_end(self) -> float:
        return self.poses[-1].t


@dataclass(frozen=True)
class Lane:
    """One lane: centerline polyline plus topological links."""

    lane_id: str
    centerline: tuple[tuple[float, float], ...]
    left_neighbor: Optional[str] = None
    right_neighbor: Optional[str] = None
    successors: tuple[str, ...] = ()
    predecessors: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "centerline", tuple((float(x), float(y)) for x, y in self.centerline))
        object.__setattr__(self, "successors", tuple(self.successors))
        object.__setattr__(self, "predecessors", tuple(self.predecessors))
        if len(self.centerline) < 2:
            raise ValueError(f"lane {self.lane_id!r} needs >= 2 centerline points")

    @property
    def arc_length(self) -> float:
        return sum(
            math.hypot(bx - ax, by - ay)
            for (ax, ay), (bx, by) in zip(self.centerline, self.centerline[1:])
        )


@dataclass(frozen=True)
class FrenetPoint:
    """Arc length s and signed lateral offset d relative to one lane."""

    lane_id: str
    s: float
    d: float


class LaneGraph:
    """Collection of lanes keyed by id, validated for referential consistency."""

    def __init__(self, lanes):
        self.lanes: dict[str, Lane] = {}
        for lane in lanes:
            if lane.lane_id in self.lanes:
                raise ValueError(f"duplicate lane id {lane.lane_id!r}")
            self.lanes[lane.lane_id] = lane
        self._validate()

    def _validate(self):
        for lane in self.lanes.values():
            refs = [lane.left_neighbor, lane.right_neighbor, *lane.successors, *lane.predecessors]
            for ref in refs:
                if ref is None:
                    continue
                if ref == lane.lane_id:
                    raise ValueError(f"lane {lane.lane_id!r} references itself")
                if ref not in self.lanes:
                    raise ValueError(f"lane {lane.lane_id!r} references unknown lane {ref!r}")
            if lane.left_neighbor is not None:
                other = self.lanes[lane.left_neighbor]
                if other.right_neighbor != lane.lane_id:
                    raise ValueError(
                        f"neighbor mismatch: {lane.lane_id!r}.left = {other.lane_id!r} "
                        f"but {other.lane_id!r}.right = {other.right_neighbor!r}"
                    )
            if lane.right_neighbor is not None:
                other = self.lanes[lane.right_neighbor]
                if other.left_neighbor != lane.lane_id:
                    raise ValueError(
                        f"neighbor mismatch: {lane.lane_id!r}.right = {other.lane_id!r} "
                        f"but {other.lane_id!r}.left = {other.left_neighbor!r}"
                    )

    def lane(self, lane_id: str) -> Lane:
        try:
            return self.lanes[lane_id]
        except KeyError:
            raise LaneLookupError(f"unknown lane id {lane_id!r}") from None

    def __len__(self):
        return len(self.lanes)

    def __contains__(self, lane_id):
        return lane_id in self.lanes

    def __iter__(self):
        return iter(self.lanes.values())


def project_frenet(pose: Pose, lane: Lane) -> FrenetPoint:
    """Project a pose onto a lane centerline (closed-form, per segment).

    Returns the FrenetPoint of the globally closest centerline point;
    s is clamped to [0, arc_length], d is signed left-positive.
    """
    result = _project_xy(pose.x, pose.y, lane)
    if result is None:
        raise InvalidLaneError(f"lane {lane.lane_id!r} has a zero-length centerline")
    s, d, _ = result
    return FrenetPoint(lane_id=lane.lane_id, s=s, d=d)


def _project_xy(x: float, y: float, lane: Lane):
    """Closest-point projection; returns (s, d, tangent_angle) or None if degenerate."""
    best = None
    s_offset = 0.0
    for (ax, ay), (bx, by) in zip(lane.centerline, lane.centerline[1:]):
        vx, vy = bx - ax, by - ay
        seg_len = math.hypot(vx, vy)
        if seg_len == 0.0:
            continue
        t = ((x - ax) * vx + (y - ay) * vy) / (seg_len * seg_len)
        t = min(1.0, max(0.0, t))
        cx, cy = ax + t * vx, ay + t * vy
        dist = math.hypot(x - cx, y - cy)
        # cross(v_hat, p - closest): positive means left of the tangent
        cross = (vx * (y - cy) - vy * (x - cx)) / seg_len
        cand = (dist, s_offset + t * seg_len, math.copysign(dist, cross) if dist > 0 else 0.0,
                math.atan2(vy, vx))
        if best is None or cand[0] < best[0]:
            best = cand
        s_offset += seg_len
    if best is None:
        return None
    return best[1], best[2], best[3]


def tangent_heading(pose: Pose, lane: Lane) -> float:
    """Heading of the centerline tangent at the pose's closest point."""
    result = _project_xy(pose.x, pose.y, lane)
    if result is None:
        raise InvalidLaneError(f"lane {lane.lane_id!r} has a zero-length centerline")
    return result[2]


def assign_lane(
    pose: Pose,
    graph: LaneGraph,
    max_lateral: float = DEFAULT_MAX_LATERAL,
    tie_eps: float = 1e-9,
) -> Optional[str]:
    """Pick the lane whose centerline is laterally closest to the pose.

    Ties in |d| (within tie_eps) break toward the smaller deviation between
    the pose heading and the local centerline tangent, then lane id for
    determinism. Returns None when no lane is within max_lateral.
    """
    if max_lateral <= 0:
        raise ValueError("max_lateral must be positive")
    candidates = []
    for lane in graph:
        result = _project_xy(pose.x, pose.y, lane)
        if result is None:
            continue
        _, d, tangent = result
        heading_dev = abs(wrap_angle(pose.heading - tangent))
        candidates.append((abs(d), heading_dev, lane.lane_id))
    if not candidates:
        return None
    min_d = min(c[0] for c in candidates)
    if min_d > max_lateral:
        return None
    tied = [c for c in candidates if c[0] - min_d <= tie_eps]
    tied.sort(key=lambda c: (c[1], c[2]))
    return tied[0][2]


def reachable(
    from_lane: str,
    to_lane: str,
    graph: LaneGraph,
    max_hops: int = DEFAULT_MAX_HOPS,
) -> bool:
    """True iff to_lane is reachable from from_lane within max_hops.

    Edges: successors (directed) and left/right neighbors (lane changes).
    """
    graph.lane(from_lane)
    graph.lane(to_lane)
    if from_lane == to_lane:
        return True
    frontier = {from_lane}
    seen = {from_lane}
    for _ in range(max_hops):
        nxt = set()
        for lane_id in frontier:
            lane = graph.lanes[lane_id]
            for ref in (lane.left_neighbor, lane.right_neighbor, *lane.successors):
                if ref is None or ref in seen:
                    continue
                if ref == to_lane:
                    return True
                seen.add(ref)
                nxt.add(ref)
        if not nxt:
            return False
        frontier = nxt
    return False


def neighbor_chain(graph: LaneGraph, start: str, side: str, max_hops: int) -> list[str]:
    """Lane ids along the pure left or right neighbor chain from start."""
    chain = []
    current = graph.lane(start)
    for _ in range(max_hops):
        ref = current.left_neighbor if side == "left" else current.right_neighbor
        if ref is None or ref in chain or ref == start:
            break
        chain.append(ref)
        current = graph.lanes[ref]
    return chain


def longitudinal_chain(graph: LaneGraph, start: str, direction: str, max_hops: int) -> set[str]:
    """Lane ids reachable from start via successors only (or predecessors only)."""
    graph.lane(start)
    frontier = {start}
    seen: set[str] = set()
    for _ in range(max_hops):
        nxt = set()
        for lane_id in frontier:
            lane = graph.lanes[lane_id]
            refs = lane.successors if direction == "forward" else lane.predecessors
            for ref in refs:
                if ref not in seen and ref != start:
                    seen.add(ref)
                    nxt.add(ref)
        if not nxt:
            break
        frontier = nxt
    return seen
