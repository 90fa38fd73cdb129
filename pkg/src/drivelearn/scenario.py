"""Road maps, track logs, scenario extraction and the synthetic generator.

A scenario binds one learning actor to a road map, a reference path toward
its goal, its recorded trajectory, and the surrounding worker tracks.
Scenario values are immutable once built and are shared freely across
concurrent rollouts.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .constants import DS_CAP, DT
from .geometry import ArcPath, arc_project, positions_at

HORIZON_TIERS = (25, 50, 75, 100, 125, 150)

# projections with larger lateral offset are treated as ambiguous
MAX_REFERENCE_LATERAL = 2.0


class MapFormatError(ValueError):
    pass


class TrackFormatError(ValueError):
    pass


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# data model
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Corridor:
    id: str
    centerline: ArcPath
    left_bound: ArcPath
    right_bound: ArcPath
    successors: tuple[str, ...]

    def __post_init__(self):
        n = len(self.centerline)
        if len(self.left_bound) != n or len(self.right_bound) != n:
            raise MapFormatError(f"corridor {self.id!r}: bounds and centerline point counts differ")
        c = self.centerline.points
        seg = np.vstack([c[1:] - c[:-1], c[-1:] - c[-2:-1]])
        off = self.left_bound.points - c
        cross = seg[:, 0] * off[:, 1] - seg[:, 1] * off[:, 0]
        if np.any(cross <= 0.0):
            raise MapFormatError(f"corridor {self.id!r}: left bound is not left of travel direction")

    @property
    def half_width(self) -> float:
        gap = np.hypot(*(self.left_bound.points - self.right_bound.points).T)
        return float(gap.mean()) / 2.0


@dataclass(frozen=True)
class RoadMap:
    corridors: dict[str, Corridor]
    goals: tuple[str, ...]

    def __post_init__(self):
        for cid, c in self.corridors.items():
            if cid != c.id:
                raise MapFormatError(f"corridor key {cid!r} does not match id {c.id!r}")
            for succ in c.successors:
                if succ not in self.corridors:
                    raise MapFormatError(f"corridor {cid!r}: unknown successor {succ!r}")
        for g in self.goals:
            if g not in self.corridors:
                raise MapFormatError(f"unknown goal corridor {g!r}")


class TrackLog:
    """Time-ordered kinematic record of one agent at a fixed 0.1 s step."""

    __slots__ = ("agent_id", "t", "xy", "v", "heading", "length", "width")

    def __init__(self, agent_id, t, xy, v, heading, length, width):
        t = np.asarray(t, dtype=float)
        xy = np.asarray(xy, dtype=float).reshape(len(t), 2)
        v = np.asarray(v, dtype=float).reshape(len(t), 2)
        heading = np.asarray(heading, dtype=float)
        if len(t) < 1:
            raise TrackFormatError(f"agent {agent_id!r}: empty track")
        dts = np.diff(t)
        if np.any(dts <= 0.0):
            raise TrackFormatError(f"agent {agent_id!r}: timestamps not strictly increasing")
        if len(dts) and not np.allclose(dts, DT, atol=1e-6):
            raise TrackFormatError(f"agent {agent_id!r}: non-uniform timestep (expected {DT} s)")
        self.agent_id = str(agent_id)
        self.t = t
        self.xy = xy
        self.v = v
        self.heading = heading
        self.length = float(length)
        self.width = float(width)
        for a in (self.t, self.xy, self.v, self.heading):
            a.flags.writeable = False

    def __len__(self):
        return len(self.t)

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def index_at(self, time: float) -> int:
        """Nearest frame index for a time, clamped to the recorded span."""
        return int(np.clip(round((time - self.t0) / DT), 0, len(self.t) - 1))

    def covers(self, start: float, stop: float) -> bool:
        return self.t0 - 1e-6 <= start and stop <= self.t_end + 1e-6


@dataclass(frozen=True)
class Scenario:
    id: str
    map: RoadMap
    actor_id: str
    worker_ids: tuple[str, ...]
    reference_path: ArcPath
    expert_track: TrackLog
    worker_tracks: dict[str, TrackLog]
    horizon_steps: int
    initial_time: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.horizon_steps not in HORIZON_TIERS:
            raise ScenarioError(f"scenario {self.id!r}: horizon {self.horizon_steps} not in {HORIZON_TIERS}")
        stop = self.initial_time + self.horizon_steps * DT
        if not self.expert_track.covers(self.initial_time, stop):
            raise ScenarioError(f"scenario {self.id!r}: expert track does not cover the horizon")
        for p in self._expert_window_positions():
            s, _ = arc_project(self.reference_path, p)
            q = positions_at(self.reference_path, [s])[0]
            d = float(np.hypot(p[0] - q[0], p[1] - q[1]))
            if d > MAX_REFERENCE_LATERAL:
                raise ScenarioError(f"scenario {self.id!r}: reference path strays {d:.2f} m from the expert track")

    def _expert_window_positions(self) -> np.ndarray:
        i0 = self.expert_track.index_at(self.initial_time)
        return self.expert_track.xy[i0 : i0 + self.horizon_steps + 1]

    def expert_positions(self) -> np.ndarray:
        """Recorded actor positions at episode steps 0..horizon."""
        return self._expert_window_positions()

    def expert_actions(self) -> np.ndarray:
        """Longitudinal shifts recovered by arc-length differencing."""
        key = "expert_actions"
        if key not in self._cache:
            pos = self._expert_window_positions()
            s = np.array([arc_project(self.reference_path, p)[0] for p in pos])
            self._cache[key] = np.clip(np.diff(s), 0.0, DS_CAP)
        return self._cache[key]


@dataclass
class ExpertBuffer:
    """Flattened (observation, action) demonstration pairs."""

    observations: np.ndarray  # (N, 262)
    actions: np.ndarray  # (N,)

    def __post_init__(self):
        if self.observations.ndim != 2 or len(self.observations) != len(self.actions):
            raise ValueError("observation/action count mismatch")
        if np.any(self.actions < 0.0) or np.any(self.actions > DS_CAP):
            raise ValueError("expert actions must lie in [0, DS_CAP]")

    def __len__(self):
        return len(self.actions)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------
def load_map(path) -> RoadMap:
    """Parse the line-oriented corridor map format."""
    blocks: dict[str, dict] = {}
    goals: list[str] = []
    cur: dict | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kw = parts[0]
            try:
                if kw == "corridor":
                    cid = parts[1]
                    if cid in blocks:
                        raise MapFormatError(f"line {lineno}: duplicate corridor id {cid!r}")
                    cur = {"id": cid, "center": [], "left": [], "right": [], "succ": []}
                    blocks[cid] = cur
                elif kw in ("center", "left", "right"):
                    if cur is None:
                        raise MapFormatError(f"line {lineno}: {kw!r} outside a corridor block")
                    cur[kw].append((float(parts[1]), float(parts[2])))
                elif kw == "succ":
                    if cur is None:
                        raise MapFormatError(f"line {lineno}: 'succ' outside a corridor block")
                    cur["succ"].extend(parts[1:])
                elif kw == "goal":
                    if cur is None:
                        raise MapFormatError(f"line {lineno}: 'goal' outside a corridor block")
                    goals.append(cur["id"])
                else:
                    raise MapFormatError(f"line {lineno}: unknown keyword {kw!r}")
            except (IndexError, ValueError) as exc:
                if isinstance(exc, MapFormatError):
                    raise
                raise MapFormatError(f"line {lineno}: malformed {kw!r} line") from exc
    corridors = {}
    for cid, blk in blocks.items():
        try:
            corridors[cid] = Corridor(
                id=cid,
                centerline=ArcPath(blk["center"]),
                left_bound=ArcPath(blk["left"]),
                right_bound=ArcPath(blk["right"]),
                successors=tuple(blk["succ"]),
            )
        except ValueError as exc:
            raise MapFormatError(f"corridor {cid!r}: {exc}") from exc
    return RoadMap(corridors=corridors, goals=tuple(goals))


def save_map(path, road_map: RoadMap) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cid in road_map.corridors:
            c = road_map.corridors[cid]
            fh.write(f"corridor {cid}\n")
            for kw, p in (("center", c.centerline), ("left", c.left_bound), ("right", c.right_bound)):
                for x, y in p.points:
                    fh.write(f"{kw} {x:.6f} {y:.6f}\n")
            if c.successors:
                fh.write("succ " + " ".join(c.successors) + "\n")
            if cid in road_map.goals:
                fh.write("goal\n")


TRACK_HEADER = ["agent_id", "t", "x", "y", "vx", "vy", "heading", "length", "width"]


def load_tracks(path) -> list[TrackLog]:
    """Read a track CSV, grouping rows per agent and sorting by time."""
    rows: dict[str, list] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACK_HEADER:
            raise TrackFormatError(f"{path}: expected header {','.join(TRACK_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACK_HEADER):
                raise TrackFormatError(f"{path}: line {lineno}: expected {len(TRACK_HEADER)} fields")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise TrackFormatError(f"{path}: line {lineno}: non-numeric field") from exc
            rows.setdefault(row[0], []).append(vals)
    logs = []
    for agent_id in rows:
        data = sorted(rows[agent_id], key=lambda r: r[0])
        arr = np.array(data)
        lengths, widths = arr[:, 6], arr[:, 7]
        if np.ptp(lengths) > 1e-9 or np.ptp(widths) > 1e-9:
            raise TrackFormatError(f"agent {agent_id!r}: length/width must be constant")
        logs.append(
            TrackLog(
                agent_id,
                t=arr[:, 0],
                xy=arr[:, 1:3],
                v=arr[:, 3:5],
                heading=arr[:, 5],
                length=lengths[0],
                width=widths[0],
            )
        )
    return logs


def save_tracks(path, logs) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACK_HEADER)
        for log in logs:
            for i in range(len(log)):
                writer.writerow(
                    [
                        log.agent_id,
                        f"{log.t[i]:.1f}",
                        f"{log.xy[i, 0]:.6f}",
                        f"{log.xy[i, 1]:.6f}",
                        f"{log.v[i, 0]:.6f}",
                        f"{log.v[i, 1]:.6f}",
                        f"{log.heading[i]:.6f}",
                        f"{log.length:.3f}",
                        f"{log.width:.3f}",
                    ]
                )


MANIFEST_HEADER = ["scenario_id", "actor_id", "initial_time", "horizon_steps"]


def save_manifest(path, scenarios) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for sc in scenarios:
            writer.writerow([sc.id, sc.actor_id, f"{sc.initial_time:.1f}", sc.horizon_steps])


def load_manifest(path) -> list[dict]:
    entries = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ScenarioError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for row in reader:
            if not row:
                continue
            entries.append(
                {
                    "scenario_id": row[0],
                    "actor_id": row[1],
                    "initial_time": float(row[2]),
                    "horizon_steps": int(row[3]),
                }
            )
    return entries


# ---------------------------------------------------------------------------
# corridor chaining and scenario assembly
# ---------------------------------------------------------------------------
def _projection_distance(path: ArcPath, p) -> float:
    s, _ = arc_project(path, p)
    q = positions_at(path, [s])[0]
    return float(np.hypot(p[0] - q[0], p[1] - q[1]))


def chain_corridors(road_map: RoadMap, positions) -> list[str]:
    """Greedy nearest-centerline chaining of corridors along a track."""
    positions = np.asarray(positions, dtype=float)
    ids = sorted(road_map.corridors)
    start = min(ids, key=lambda cid: _projection_distance(road_map.corridors[cid].centerline, positions[0]))
    chain = [start]
    cur = start
    for p in positions[1:]:
        best_d = _projection_distance(road_map.corridors[cur].centerline, p)
        best = cur
        for succ in sorted(road_map.corridors[cur].successors):
            d = _projection_distance(road_map.corridors[succ].centerline, p)
            if d < best_d - 1e-9:
                best_d, best = d, succ
        if best != cur:
            chain.append(best)
            cur = best
    return chain


class RoutePath(ArcPath):
    """ArcPath annotated with the corridor chain it was concatenated from.

    `segments` holds (corridor_id, s_start, s_end) in route arc-length.
    """

    __slots__ = ("segments",)

    def __init__(self, points, starts_and_ids):
        super().__init__(points)
        segments = []
        for i, (cid, idx) in enumerate(starts_and_ids):
            s_start = float(self.cum_s[idx])
            s_end = (
                float(self.cum_s[starts_and_ids[i + 1][1]])
                if i + 1 < len(starts_and_ids)
                else self.total_length
            )
            segments.append((cid, s_start, s_end))
        self.segments = tuple(segments)


def path_from_chain(road_map: RoadMap, chain, lookahead: float = 20.0) -> RoutePath:
    """Concatenate chained centerlines, extending past the last corridor so
    the route keeps `lookahead` meters of headroom."""
    seen = set(chain)
    chain = list(chain)
    extended = 0.0
    while extended < lookahead:
        succ = [s for s in sorted(road_map.corridors[chain[-1]].successors) if s not in seen]
        if not succ:
            break
        chain.append(succ[0])
        seen.add(succ[0])
        extended += road_map.corridors[succ[0]].centerline.total_length
    pts = [road_map.corridors[chain[0]].centerline.points]
    starts = [(chain[0], 0)]
    count = len(pts[0])
    for cid in chain[1:]:
        nxt = road_map.corridors[cid].centerline.points
        if np.hypot(*(nxt[0] - pts[-1][-1])) < 1e-9:
            starts.append((cid, count - 1))
            nxt = nxt[1:]
        else:
            starts.append((cid, count))
        pts.append(nxt)
        count += len(nxt)
    return RoutePath(np.vstack(pts), starts)


def reference_path_for_track(road_map: RoadMap, positions, lookahead: float = 20.0) -> ArcPath:
    return path_from_chain(road_map, chain_corridors(road_map, positions), lookahead)


def make_scenario(scenario_id, road_map, tracks_by_id, actor_id, initial_time, horizon_steps) -> Scenario:
    actor = tracks_by_id[actor_id]
    i0 = actor.index_at(initial_time)
    window = actor.xy[i0 : i0 + horizon_steps + 1]
    ref = reference_path_for_track(road_map, window)
    stop = initial_time + horizon_steps * DT
    workers = {
        aid: trk
        for aid, trk in tracks_by_id.items()
        if aid != actor_id and trk.t0 <= stop + 1e-6 and trk.t_end >= initial_time - 1e-6
    }
    return Scenario(
        id=scenario_id,
        map=road_map,
        actor_id=actor_id,
        worker_ids=tuple(sorted(workers)),
        reference_path=ref,
        expert_track=actor,
        worker_tracks=workers,
        horizon_steps=horizon_steps,
        initial_time=initial_time,
    )


def extract_scenarios(tracks, road_map, horizons, per_horizon: int, rng_seed: int) -> list[Scenario]:
    """Cut training scenarios out of track logs, up to per_horizon each tier.

    Deterministic under the seed; returns an empty list when no track covers
    the smallest horizon.
    """
    for h in horizons:
        if h not in HORIZON_TIERS:
            raise ScenarioError(f"horizon {h} not in {HORIZON_TIERS}")
    tracks_by_id = {t.agent_id: t for t in tracks}
    rng = np.random.default_rng(rng_seed)
    out = []
    for h in sorted(horizons):
        combos = []
        for aid in sorted(tracks_by_id):
            trk = tracks_by_id[aid]
            n_starts = len(trk) - 1 - h
            if n_starts < 0:
                continue
            stride = max(1, h // 2)
            combos.extend((aid, j) for j in range(0, n_starts + 1, stride))
        rng.shuffle(combos)
        taken = 0
        for aid, j in combos:
            if taken >= per_horizon:
                break
            trk = tracks_by_id[aid]
            t0 = float(trk.t[j])
            sid = f"{aid}-h{h}-f{j}"
            try:
                out.append(make_scenario(sid, road_map, tracks_by_id, aid, t0, h))
            except ScenarioError:
                continue
            taken += 1
    return out


# ---------------------------------------------------------------------------
# synthetic roundabout generator
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SyntheticConfig:
    radius: float = 20.0
    entries: int = 4
    lane_width: float = 4.0
    leg_length: float = 8.0
    agents_min: int = 3
    agents_max: int = 6
    horizons: tuple[int, ...] = HORIZON_TIERS
    per_horizon: int = 20
    n_validation: int = 20
    windows_per_episode: int = 2
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    desired_speed_kmh: tuple[float, float] = (30.0, 50.0)

    def __post_init__(self):
        if self.radius <= 0 or self.entries < 2 or self.lane_width <= 0 or self.leg_length <= 0:
            raise ScenarioError("invalid roundabout geometry")
        if not 1 <= self.agents_min <= self.agents_max:
            raise ScenarioError("invalid agent count range")
        for h in self.horizons:
            if h not in HORIZON_TIERS:
                raise ScenarioError(f"horizon {h} not in {HORIZON_TIERS}")


def _arc_points(radius, a0, a1, spacing=0.1):
    n = max(2, int(math.ceil(abs(a1 - a0) * radius / spacing)) + 1)
    ang = np.linspace(a0, a1, n)
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)]), ang


def build_roundabout_map(cfg: SyntheticConfig) -> RoadMap:
    """Single-lane roundabout: one entry, one exit and one ring arc per node.

    Entries and exits join the ring tangentially, so every route is a smooth
    polyline: entry_k -> ring_k -> ... -> exit_j.
    """
    e = cfg.entries
    hw = cfg.lane_width / 2.0
    corridors = {}
    goals = []
    for k in range(e):
        th0 = 2.0 * math.pi * k / e
        th1 = 2.0 * math.pi * (k + 1) / e
        node = np.array([cfg.radius * math.cos(th0), cfg.radius * math.sin(th0)])
        tangent = np.array([-math.sin(th0), math.cos(th0)])

        center, ang = _arc_points(cfg.radius, th0, th1)
        inner = np.column_stack([(cfg.radius - hw) * np.cos(ang), (cfg.radius - hw) * np.sin(ang)])
        outer = np.column_stack([(cfg.radius + hw) * np.cos(ang), (cfg.radius + hw) * np.sin(ang)])
        corridors[f"ring{k}"] = Corridor(
            id=f"ring{k}",
            centerline=ArcPath(center),
            left_bound=ArcPath(inner),  # counterclockwise travel: left is inward
            right_bound=ArcPath(outer),
            successors=(f"ring{(k + 1) % e}", f"exit{(k + 1) % e}"),
        )

        n_leg = max(2, int(math.ceil(cfg.leg_length / 0.5)) + 1)
        t = np.linspace(0.0, 1.0, n_leg)[:, None]
        left_n = np.array([-tangent[1], tangent[0]])
        entry_pts = node - cfg.leg_length * tangent + t * cfg.leg_length * tangent
        corridors[f"entry{k}"] = Corridor(
            id=f"entry{k}",
            centerline=ArcPath(entry_pts),
            left_bound=ArcPath(entry_pts + hw * left_n),
            right_bound=ArcPath(entry_pts - hw * left_n),
            successors=(f"ring{k}",),
        )
        exit_pts = node + t * cfg.leg_length * tangent
        corridors[f"exit{k}"] = Corridor(
            id=f"exit{k}",
            centerline=ArcPath(exit_pts),
            left_bound=ArcPath(exit_pts + hw * left_n),
            right_bound=ArcPath(exit_pts - hw * left_n),
            successors=(),
        )
        goals.append(f"exit{k}")
    return RoadMap(corridors=corridors, goals=tuple(goals))


def route_path(road_map: RoadMap, entry: int, n_arcs: int, entries: int) -> ArcPath:
    """entry_k, n_arcs ring segments, then the exit at the landing node."""
    chain = [f"entry{entry}"]
    chain += [f"ring{(entry + i) % entries}" for i in range(n_arcs)]
    chain.append(f"exit{(entry + n_arcs) % entries}")
    return path_from_chain(road_map, chain, lookahead=0.0)


def _simulate_scripted_episode(road_map, cfg, rng, total_steps):
    """Roll one all-IDM episode; returns TrackLogs or None on any collision."""
    from .simulator import IdmParams, idm_acceleration, scripted_virtual_leader

    n_agents = int(rng.integers(cfg.agents_min, cfg.agents_max + 1))
    lo, hi = (v / 3.6 for v in cfg.desired_speed_kmh)
    agents = []
    for i in range(n_agents):
        entry = int(rng.integers(0, cfg.entries))
        if i == 0:
            # one long, slow agent per episode so 15 s windows exist
            n_arcs = cfg.entries
            v0 = lo + (min(hi, lo + 1.7) - lo) * rng.random()
            spawn = 0
        else:
            n_arcs = int(rng.integers(1, cfg.entries))
            v0 = lo + (hi - lo) * rng.random()
            spawn = int(rng.integers(0, 51))
        agents.append(
            {
                "id": f"a{i}",
                "path": route_path(road_map, entry, n_arcs, cfg.entries),
                "params": IdmParams(v0=v0),
                "spawn": spawn,
                "s": None,
                "v": 0.6 * v0,
                "frames": [],
            }
        )

    from .geometry import OrientedBox, obb_overlap, pose_at, tangent_at

    def snapshot(a):
        pose = pose_at(a["path"], a["s"])
        tan = tangent_at(a["path"], a["s"])
        return pose, tan

    for step in range(total_steps):
        # spawn when the entry mouth is clear
        for a in agents:
            if a["s"] is None and not a.get("done") and step >= a["spawn"]:
                clear = True
                for b in agents:
                    if b is a or b["s"] is None:
                        continue
                    bp, _ = snapshot(b)
                    if np.hypot(bp.x - a["path"].points[0, 0], bp.y - a["path"].points[0, 1]) < cfg.vehicle_length + 2.0:
                        clear = False
                        break
                if clear:
                    a["s"] = 0.0
        active = [a for a in agents if a["s"] is not None]
        states = {}
        for a in active:
            pose, tan = snapshot(a)
            states[a["id"]] = (pose, tan, a["s"], a["v"])
            a["frames"].append((step * DT, pose.x, pose.y, a["v"] * tan[0], a["v"] * tan[1], pose.heading))
        boxes = {
            aid: OrientedBox(p.x, p.y, p.heading, cfg.vehicle_length, cfg.vehicle_width)
            for aid, (p, _, _, _) in states.items()
        }
        ids = sorted(boxes)
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                if obb_overlap(boxes[ids[i]], boxes[ids[j]]):
                    return None
        accels = {}
        for a in active:
            lead = scripted_virtual_leader(a, active, states, boxes, cfg.vehicle_length)
            gap, lead_v = lead if lead is not None else (math.inf, 0.0)
            accels[a["id"]] = idm_acceleration(a["v"], gap, lead_v, a["params"])
        for a in active:
            a["v"] = max(0.0, a["v"] + accels[a["id"]] * DT)
            a["s"] += a["v"] * DT
            if a["s"] >= a["path"].total_length - 1e-9:
                a["s"] = None  # reached its exit: stop recording
                a["done"] = True
    logs = []
    for a in agents:
        if len(a["frames"]) < 2:
            continue
        fr = np.array(a["frames"])
        logs.append(
            TrackLog(
                a["id"],
                t=fr[:, 0],
                xy=fr[:, 1:3],
                v=fr[:, 3:5],
                heading=fr[:, 5],
                length=cfg.vehicle_length,
                width=cfg.vehicle_width,
            )
        )
    return logs


def _windows_from_episode(road_map, logs, horizon, max_windows, rng):
    """Scenario windows where the actor track fully covers the horizon."""
    from .simulator import PlacementError, reset

    tracks = {t.agent_id: t for t in logs}
    combos = []
    for aid in sorted(tracks):
        n_starts = len(tracks[aid]) - 1 - horizon
        if n_starts < 0:
            continue
        stride = max(1, horizon // 2)
        combos.extend((aid, j) for j in range(0, n_starts + 1, stride))
    rng.shuffle(combos)
    out = []
    for aid, j in combos:
        if len(out) >= max_windows:
            break
        t0 = float(tracks[aid].t[j])
        sid = f"{aid}-h{horizon}-f{j}"
        try:
            sc = make_scenario(sid, road_map, tracks, aid, t0, horizon)
        except ScenarioError:
            continue
        try:
            reset(sc, "replay", np.random.default_rng(0))
        except PlacementError:
            continue
        out.append(sc)
    return out


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> tuple[RoadMap, list[Scenario], list[Scenario]]:
    """Build a roundabout map plus training and validation scenario sets.

    Scripted experts are advanced-IDM agents with randomized desired speeds;
    episodes containing any collision are rejected and reseeded. Everything
    is a pure function of the seed.
    """
    road_map = build_roundabout_map(cfg)
    seq = np.random.SeedSequence(seed)
    need = {h: cfg.per_horizon for h in cfg.horizons}
    train: list[Scenario] = []
    val: list[Scenario] = []
    episode = 0
    attempts = 0
    total_steps = int(50 + (max(cfg.horizons) + 60) + 120)  # spawn span + window + slack
    while (any(n > 0 for n in need.values()) or len(val) < cfg.n_validation) and attempts < 4000:
        attempts += 1
        rng = np.random.default_rng(seq.spawn(1)[0])
        logs = _simulate_scripted_episode(road_map, cfg, rng, total_steps)
        if logs is None:
            continue
        tag = f"ep{episode}"
        episode += 1
        # episode tracks get globally unique agent ids
        logs = [
            TrackLog(f"{tag}-{t.agent_id}", t.t, t.xy, t.v, t.heading, t.length, t.width) for t in logs
        ]
        if any(n > 0 for n in need.values()):
            for h in cfg.horizons:
                if need[h] <= 0:
                    continue
                got = _windows_from_episode(road_map, logs, h, min(cfg.windows_per_episode, need[h]), rng)
                need[h] -= len(got)
                train.extend(got)
        elif len(val) < cfg.n_validation:
            got = _windows_from_episode(
                road_map, logs, 150, min(cfg.windows_per_episode, cfg.n_validation - len(val)), rng
            )
            val.extend(got)
    if any(n > 0 for n in need.values()) or len(val) < cfg.n_validation:
        raise ScenarioError("synthetic generation could not fill the requested scenario counts")
    return road_map, train, val


# ---------------------------------------------------------------------------
# expert demonstrations
# ---------------------------------------------------------------------------
def build_expert_buffer(scenarios, observation_builder=None) -> ExpertBuffer:
    """Replay each scenario and pair actor observations with expert actions.

    The action at step t is the arc-length difference of consecutive
    projected expert positions, clamped to [0, DS_CAP]; steps whose
    projection is ambiguous (lateral offset > 2 m) are skipped with a
    warning. A horizon-H scenario contributes at most H-1 pairs: the final
    frame only closes the last difference.
    """
    from .observation import default_observation_vector
    from .simulator import reset, step

    if observation_builder is None:
        observation_builder = default_observation_vector

    obs_rows = []
    act_rows = []
    for sc in scenarios:
        actions = sc.expert_actions()
        pos = sc.expert_positions()
        laterals = [abs(arc_project(sc.reference_path, p)[1]) for p in pos]
        world = reset(sc, "replay", np.random.default_rng(0))
        for t in range(sc.horizon_steps - 1):
            obs = observation_builder(world, sc)
            if laterals[t] > MAX_REFERENCE_LATERAL or laterals[t + 1] > MAX_REFERENCE_LATERAL:
                warnings.warn(f"scenario {sc.id}: skipping ambiguous projection at step {t}")
            else:
                obs_rows.append(obs)
                act_rows.append(actions[t])
            world, _ = step(world, float(actions[t]))
    if not obs_rows:
        return ExpertBuffer(np.zeros((0, 262)), np.zeros(0))
    return ExpertBuffer(np.array(obs_rows), np.array(act_rows))


# ---------------------------------------------------------------------------
# scenario set directories (as written by the CLI `gen` subcommand)
# ---------------------------------------------------------------------------
def load_scenario_set(directory):
    """Load (map, train scenarios, validation scenarios) from a gen directory."""
    import os

    road_map = load_map(os.path.join(directory, "map.txt"))
    tracks = {t.agent_id: t for t in load_tracks(os.path.join(directory, "tracks.csv"))}
    out = []
    for name in ("scenarios_train.csv", "scenarios_val.csv"):
        scs = []
        for entry in load_manifest(os.path.join(directory, name)):
            scs.append(
                make_scenario(
                    entry["scenario_id"],
                    road_map,
                    tracks,
                    entry["actor_id"],
                    entry["initial_time"],
                    entry["horizon_steps"],
                )
            )
        out.append(scs)
    return road_map, out[0], out[1]
