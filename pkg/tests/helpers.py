"""Shared builders and independent oracles for the test suite.

Everything here is deliberately written with machinery different from the
package (dense sampling instead of closed-form projection, networkx BFS
instead of the hand-rolled frontier walk) so the dual-route checks stay
independent.
"""

from __future__ import annotations

import math
import random

import networkx as nx
import numpy as np

from capmix.geometry import Lane, LaneGraph, Pose, Trajectory

LANE_WIDTH = 3.5


def make_pose(t=0.0, x=0.0, y=0.0, heading=0.0, speed=0.0, reversing=False):
    return Pose(t=t, x=x, y=y, heading=heading, speed=speed, reversing=reversing)


def straight_lane(lane_id, y, x0=0.0, x1=100.0, n=11, **links):
    xs = np.linspace(x0, x1, n)
    return Lane(lane_id=lane_id, centerline=[(float(x), y) for x in xs], **links)


def three_lane_graph(length=100.0):
    """Parallel lanes A (left, +y), B (middle), C (right, -y)."""
    return LaneGraph(
        [
            straight_lane("A", LANE_WIDTH, x1=length, right_neighbor="B"),
            straight_lane("B", 0.0, x1=length, left_neighbor="A", right_neighbor="C"),
            straight_lane("C", -LANE_WIDTH, x1=length, left_neighbor="B"),
        ]
    )


def grid_graph(rng: random.Random, max_rows=3, max_cols=4, segment=40.0, detached=True):
    """Random highway-style graph: rows of sequential segments, row links.

    Row r sits at y = -LANE_WIDTH * r (row 0 is leftmost). Some successor
    and neighbor links are randomly dropped; optionally one disconnected
    lane far away.
    """
    rows = rng.randint(1, max_rows)
    cols = rng.randint(1, max_cols)
    keep_succ = {}
    keep_neigh = {}
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                keep_succ[(r, c)] = rng.random() < 0.8
            if r + 1 < rows:
                keep_neigh[(r, c)] = rng.random() < 0.8
    lanes = []
    for r in range(rows):
        for c in range(cols):
            lane_id = f"L{r}_{c}"
            left = f"L{r-1}_{c}" if r > 0 and keep_neigh.get((r - 1, c)) else None
            right = f"L{r+1}_{c}" if r + 1 < rows and keep_neigh.get((r, c)) else None
            succ = [f"L{r}_{c+1}"] if keep_succ.get((r, c)) else []
            pred = [f"L{r}_{c-1}"] if c > 0 and keep_succ.get((r, c - 1)) else []
            lanes.append(
                Lane(
                    lane_id=lane_id,
                    centerline=[(c * segment, -LANE_WIDTH * r), ((c + 1) * segment, -LANE_WIDTH * r)],
                    left_neighbor=left,
                    right_neighbor=right,
                    successors=succ,
                    predecessors=pred,
                )
            )
    if detached and rng.random() < 0.5:
        lanes.append(
            Lane(lane_id="orphan", centerline=[(0.0, 500.0), (segment, 500.0)])
        )
    return LaneGraph(lanes)


def pose_on_lane(
    rng: random.Random, lane, max_offset=0.3, heading_jitter=0.2, t=0.0, speed=5.0,
    min_offset=0.0,
):
    """Pose near a random point of the lane centerline, heading ~tangent."""
    pts = lane.centerline
    seg = rng.randrange(len(pts) - 1)
    (ax, ay), (bx, by) = pts[seg], pts[seg + 1]
    u = rng.uniform(0.05, 0.95)
    px, py = ax + u * (bx - ax), ay + u * (by - ay)
    tangent = math.atan2(by - ay, bx - ax)
    normal = tangent + math.pi / 2
    offset = rng.choice([-1, 1]) * rng.uniform(min_offset, max_offset)
    return Pose(
        t=t,
        x=px + offset * math.cos(normal),
        y=py + offset * math.sin(normal),
        heading=tangent + rng.uniform(-heading_jitter, heading_jitter),
        speed=speed,
    )


def traj_from_xy(agent_id, xy, dt=0.5, category="vehicle", t0=0.0, speed=None):
    """Trajectory from an (n, 2) path; headings/speeds from differences."""
    xy = np.asarray(xy, dtype=float)
    headings = []
    speeds = []
    for i in range(len(xy)):
        j = min(i, len(xy) - 2)
        dx, dy = xy[j + 1] - xy[j]
        headings.append(math.atan2(dy, dx) if (dx or dy) else 0.0)
        speeds.append(math.hypot(dx, dy) / dt)
    if speed is not None:
        speeds = [speed] * len(xy)
    poses = [
        Pose(t=t0 + i * dt, x=float(x), y=float(y), heading=headings[i], speed=speeds[i])
        for i, (x, y) in enumerate(xy)
    ]
    return Trajectory(agent_id=agent_id, category=category, poses=poses)


# --- independent oracles -------------------------------------------------


def dense_frenet(x, y, lane, step=0.01):
    """(s, signed d) via dense sampling of the centerline at `step` meters."""
    best_dist = math.inf
    best_s = 0.0
    best_tangent = 0.0
    s_base = 0.0
    for (ax, ay), (bx, by) in zip(lane.centerline, lane.centerline[1:]):
        seg_len = math.hypot(bx - ax, by - ay)
        if seg_len == 0:
            continue
        tangent = math.atan2(by - ay, bx - ax)
        count = max(2, int(seg_len / step) + 1)
        u = np.linspace(0.0, 1.0, count)
        dists = np.hypot(x - (ax + u * (bx - ax)), y - (ay + u * (by - ay)))
        i = int(np.argmin(dists))
        if dists[i] < best_dist:
            best_dist = float(dists[i])
            best_s = s_base + u[i] * seg_len
            best_tangent = tangent
        s_base += seg_len
    # sign: left of the tangent is positive, taken at the point best_s lands on
    cross = 0.0
    s_remaining = best_s
    for (ax, ay), (bx, by) in zip(lane.centerline, lane.centerline[1:]):
        seg_len = math.hypot(bx - ax, by - ay)
        if seg_len == 0:
            continue
        if s_remaining <= seg_len + 1e-12:
            u = max(0.0, min(1.0, s_remaining / seg_len))
            cx, cy = ax + u * (bx - ax), ay + u * (by - ay)
            vx, vy = (bx - ax) / seg_len, (by - ay) / seg_len
            cross = vx * (y - cy) - vy * (x - cx)
            break
        s_remaining -= seg_len
    d = math.copysign(best_dist, cross) if best_dist > 0 else 0.0
    return best_s, d, best_tangent


def oracle_assign_lane(pose, graph, max_lateral, step=0.005):
    """Dense-sampling reimplementation of the assignment + tie-break rule.

    Returns (lane_id or None, margin between best and second-best |d|).
    """
    scored = []
    for lane in graph:
        s, d, tangent = dense_frenet(pose.x, pose.y, lane, step=step)
        heading_dev = abs(_wrap(pose.heading - tangent))
        scored.append((abs(d), heading_dev, lane.lane_id))
    if not scored:
        return None, math.inf
    dists = sorted(c[0] for c in scored)
    margin = dists[1] - dists[0] if len(dists) > 1 else math.inf
    best = min(c[0] for c in scored)
    if best > max_lateral:
        return None, margin
    tied = sorted((c for c in scored if c[0] - best <= 1e-6), key=lambda c: (c[1], c[2]))
    return tied[0][2], margin


def _wrap(a):
    w = (a + math.pi) % (2 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


def graph_as_networkx(graph):
    g = nx.DiGraph()
    for lane in graph:
        g.add_node(lane.lane_id)
    for lane in graph:
        for ref in (lane.left_neighbor, lane.right_neighbor, *lane.successors):
            if ref is not None:
                g.add_edge(lane.lane_id, ref)
    return g


def oracle_reachable(graph, src, dst, max_hops):
    lengths = nx.single_source_shortest_path_length(graph_as_networkx(graph), src, cutoff=max_hops)
    return dst in lengths


def oracle_winding(ego_xy, agent_xy):
    """Plain-python accumulation of wrapped atan2 increments."""
    total = 0.0
    prev = None
    for (ex, ey), (ax, ay) in zip(ego_xy, agent_xy):
        angle = math.atan2(ay - ey, ax - ex)
        if prev is not None:
            total += _wrap(angle - prev)
        prev = angle
    return total


def _interp_path(traj, times):
    """Plain linear interpolation of (x, y), independent of the package.

    Two-pointer sweep; `times` must be sorted and within the pose span.
    """
    src = [(p.t, p.x, p.y) for p in traj.poses]
    out = []
    seg = 0
    for t in times:
        while seg < len(src) - 2 and src[seg + 1][0] < t:
            seg += 1
        t0, x0, y0 = src[seg]
        t1, x1, y1 = src[seg + 1]
        u = 0.0 if t1 == t0 else min(1.0, max(0.0, (t - t0) / (t1 - t0)))
        out.append((x0 + u * (x1 - x0), y0 + u * (y1 - y0)))
    return out


def oracle_homotopy(ego_traj, agent_traj, threshold, grid_dt):
    """Winding classification on a 10x denser grid, all independent code."""
    t0 = max(ego_traj.t_start, agent_traj.t_start)
    t1 = min(ego_traj.t_end, agent_traj.t_end)
    n = max(2, int(math.ceil((t1 - t0) / (grid_dt / 10.0))) + 1)
    times = [t0 + (t1 - t0) * i / (n - 1) for i in range(n)]
    delta = oracle_winding(_interp_path(ego_traj, times), _interp_path(agent_traj, times))
    if delta >= threshold:
        return "CCW", delta
    if delta <= -threshold:
        return "CW", delta
    return "S", delta


def smooth_pair(rng: random.Random, span=10.0, dt=0.2):
    """Random smooth trajectory pair (low-order sinusoid paths), kept apart."""
    from capmix.geometry import Trajectory  # local to keep header tidy

    def smooth_path(cx, cy):
        a = [rng.uniform(-8, 8) for _ in range(4)]
        w = [rng.uniform(0.2, 0.9) for _ in range(4)]
        ph = [rng.uniform(0, 2 * math.pi) for _ in range(4)]
        v = (rng.uniform(-4, 4), rng.uniform(-4, 4))
        times = np.arange(0.0, span + 1e-9, dt)
        xs = cx + v[0] * times + a[0] * np.sin(w[0] * times + ph[0]) + a[1] * np.sin(w[1] * times + ph[1])
        ys = cy + v[1] * times + a[2] * np.sin(w[2] * times + ph[2]) + a[3] * np.sin(w[3] * times + ph[3])
        return np.stack([xs, ys], axis=1)

    while True:
        ego_xy = smooth_path(0.0, 0.0)
        agent_xy = smooth_path(rng.uniform(-20, 20), rng.uniform(-20, 20))
        rel = agent_xy - ego_xy
        gap = np.hypot(rel[:, 0], rel[:, 1])
        # winding is only defined for sampling-dense motion: keep the pair far
        # enough apart that the relative vector sweeps well under pi per 0.5 s
        k = int(round(0.6 / dt))
        max_chord = float(np.hypot(*(rel[k:] - rel[:-k]).T).max())
        if gap.min() > max(0.5, max_chord):
            ego = traj_from_xy("ego", ego_xy, dt=dt)
            agent = traj_from_xy("agent", agent_xy, dt=dt)
            return ego, agent


def oracle_lane_mode(ego_pose, agent_pose, graph, max_hops, max_lateral=2.0):
    """Independent decision-tree evaluation: networkx reachability, iterative
    chain walks, dense-sampled ordering and offsets. Returns a plain string."""
    from capmix.geometry import assign_lane  # assignment is shared machinery

    ego_lane = assign_lane(ego_pose, graph, max_lateral)
    agent_lane = assign_lane(agent_pose, graph, max_lateral)
    if ego_lane is None or agent_lane is None:
        return "NOTON"
    g = graph_as_networkx(graph)
    fwd = nx.single_source_shortest_path_length(g, ego_lane, cutoff=max_hops)
    back = nx.single_source_shortest_path_length(g, agent_lane, cutoff=max_hops)
    if agent_lane not in fwd and ego_lane not in back:
        return "NOTON"
    ego_lane_obj = graph.lanes[ego_lane]
    ego_s, _, _ = dense_frenet(ego_pose.x, ego_pose.y, ego_lane_obj, step=0.005)
    if agent_lane == ego_lane:
        agent_s, _, _ = dense_frenet(agent_pose.x, agent_pose.y, ego_lane_obj, step=0.005)
        return "AHEAD" if agent_s >= ego_s else "BEHIND"
    for side, attr in (("LEFT", "left_neighbor"), ("RIGHT", "right_neighbor")):
        current = ego_lane
        seen = set()
        for _ in range(max_hops):
            nxt = getattr(graph.lanes[current], attr)
            if nxt is None or nxt in seen or nxt == ego_lane:
                break
            if nxt == agent_lane:
                return side
            seen.add(nxt)
            current = nxt
    succ_graph = nx.DiGraph()
    pred_graph = nx.DiGraph()
    for lane in graph:
        succ_graph.add_node(lane.lane_id)
        pred_graph.add_node(lane.lane_id)
        for s in lane.successors:
            succ_graph.add_edge(lane.lane_id, s)
        for p in lane.predecessors:
            pred_graph.add_edge(lane.lane_id, p)
    if agent_lane in nx.single_source_shortest_path_length(succ_graph, ego_lane, cutoff=max_hops):
        return "AHEAD"
    if agent_lane in nx.single_source_shortest_path_length(pred_graph, ego_lane, cutoff=max_hops):
        return "BEHIND"
    agent_s, agent_d, _ = dense_frenet(agent_pose.x, agent_pose.y, ego_lane_obj, step=0.005)
    if abs(agent_d) <= 1e-9:
        return "AHEAD" if agent_s >= ego_s else "BEHIND"
    return "LEFT" if agent_d > 0 else "RIGHT"
