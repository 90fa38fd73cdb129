"""POMDP traffic environment: longitudinal actor, replay/IDM workers.

One WorldState is owned by exactly one rollout. Stepping is functional (a
new WorldState is returned), all randomness comes in through the caller's
generator, and policy parameters are only ever read, so any number of
rollouts may run concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import DS_CAP, DT
from .geometry import (
    ArcPath,
    OrientedBox,
    Pose2,
    arc_project,
    arc_project_window,
    in_front_cone,
    pose_at,
    tangent_at,
)
from .scenario import Scenario, reference_path_for_track

# 60-degree front cone used for virtual IDM leaders and front collisions
CONE_HALF_ANGLE = math.pi / 6.0
# projections farther than half a corridor width off the path are ignored
VIRTUAL_LATERAL_ACCEPT = 2.5
MIN_GAP = 0.01


class PlacementError(RuntimeError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IdmParams:
    """Intelligent-driver-model parameters (desired speed in m/s)."""

    v0: float = 50.0 / 3.6
    T: float = 1.5
    a_max: float = 1.5
    b: float = 2.0
    s0: float = 2.0
    delta: float = 4.0
    cone_half_angle: float = CONE_HALF_ANGLE
    detection_radius: float = 30.0

    def __post_init__(self):
        vals = (self.v0, self.T, self.a_max, self.b, self.s0, self.cone_half_angle, self.detection_radius)
        if any(v <= 0.0 for v in vals) or self.delta < 1.0:
            raise ValueError("IDM parameters must be positive with delta >= 1")


@dataclass(frozen=True)
class AgentState:
    id: str
    mode: str  # actor | replay_worker | idm_worker
    pose: Pose2
    velocity: np.ndarray
    speed: float
    length: float
    width: float
    s: float | None = None
    path: ArcPath | None = None
    track: object = None
    idm: IdmParams | None = None

    @property
    def box(self) -> OrientedBox:
        return OrientedBox(self.pose.x, self.pose.y, self.pose.heading, self.length, self.width)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.pose.x, self.pose.y])


@dataclass(frozen=True)
class WorldState:
    clock_step: int
    agents: tuple[AgentState, ...]  # agents[0] is the actor
    actor_collided: bool
    collision_partners: frozenset
    horizon: int
    scenario: Scenario
    worker_mode: str
    actor_history: tuple
    last_action: float

    @property
    def actor(self) -> AgentState:
        return self.agents[0]


@dataclass(frozen=True)
class StepOutcome:
    next_observation: np.ndarray
    new_collision: bool
    front_collision: bool
    done: bool
    ds_applied: float


def idm_acceleration(v: float, gap: float, leader_v: float, p: IdmParams) -> float:
    """IDM acceleration, clamped to [-2b, a_max]; the desired gap is floored
    at the jam distance so a fast-receding leader cannot produce suction."""
    if not math.isinf(gap) and gap <= 0.0:
        raise ValueError("gap must be positive or infinite")
    v = max(v, 0.0)
    free = (v / p.v0) ** p.delta
    if math.isinf(gap):
        interaction = 0.0
    else:
        s_star = max(p.s0, p.s0 + v * p.T + v * (v - leader_v) / (2.0 * math.sqrt(p.a_max * p.b)))
        interaction = (s_star / gap) ** 2
    a = p.a_max * (1.0 - free - interaction)
    return min(max(a, -2.0 * p.b), p.a_max)


def _leader_candidates(pose, path, s, length, others, p: IdmParams):
    """Yield (gap, leader_speed) for cone-projected and same-path leaders."""
    ppos = np.array([pose.x, pose.y])
    for opos, ovel, olen, opath, os_ in others:
        if opath is path and os_ is not None and os_ > s:
            gap = max(os_ - s - 0.5 * (length + olen), MIN_GAP)
            tan = tangent_at(path, os_)
            yield gap, float(ovel @ tan)
        d = float(np.hypot(*(opos - ppos)))
        if d <= p.detection_radius and in_front_cone(pose, opos, p.cone_half_angle):
            s_proj, lat = arc_project_window(path, opos, s - 5.0, s + p.detection_radius + 10.0)
            if abs(lat) < VIRTUAL_LATERAL_ACCEPT:
                gap = max(s_proj - s - 0.5 * (length + olen), MIN_GAP)
                tan = tangent_at(path, s_proj)
                yield gap, float(ovel @ tan)


def find_virtual_leader(pose, path, s, length, others, p: IdmParams):
    """Closest real or virtual front neighbor, or None."""
    best = None
    for gap, speed in _leader_candidates(pose, path, s, length, others, p):
        if best is None or gap < best[0]:
            best = (gap, speed)
    return best


def virtual_leader(world: WorldState, agent: AgentState):
    """Spec entry point over a world snapshot."""
    others = [
        (o.position, o.velocity, o.length, o.path, o.s)
        for o in world.agents
        if o.id != agent.id
    ]
    return find_virtual_leader(agent.pose, agent.path, agent.s, agent.length, others, agent.idm or IdmParams())


def scripted_virtual_leader(agent, active, states, boxes, veh_len):
    """Generator-side variant over scripted-episode records."""
    pose, _, s, _ = states[agent["id"]]
    others = []
    for b in active:
        if b is agent:
            continue
        bpose, btan, bs, bv = states[b["id"]]
        others.append((np.array([bpose.x, bpose.y]), bv * btan, veh_len, b["path"], bs))
    return find_virtual_leader(pose, agent["path"], s, veh_len, others, agent["params"])


def _tangential_speed(path, s, v):
    return max(0.0, float(np.asarray(v, dtype=float) @ tangent_at(path, s)))


def advance_idm_worker(agent: AgentState, others) -> AgentState:
    """Semi-implicit Euler step of one IDM worker against a world snapshot.

    `others` holds (position, velocity, length, path, s) tuples. Workers
    reaching their path end freeze there.
    """
    lead = find_virtual_leader(agent.pose, agent.path, agent.s, agent.length, others, agent.idm)
    gap, lead_v = lead if lead is not None else (math.inf, 0.0)
    a = idm_acceleration(agent.speed, gap, lead_v, agent.idm)
    v = max(0.0, agent.speed + a * DT)
    s = agent.s + v * DT
    if s >= agent.path.total_length:
        s, v = agent.path.total_length, 0.0
    pose = pose_at(agent.path, s)
    return replace(agent, s=s, pose=pose, speed=v, velocity=v * tangent_at(agent.path, s))


def reset(scenario: Scenario, worker_mode: str, rng: np.random.Generator) -> WorldState:
    """Place the actor on its reference path and spawn all workers.

    In idm mode every worker gets a path chained from its recorded corridors
    and a desired speed drawn uniformly from 30-50 km/h.
    """
    if worker_mode not in ("replay", "idm"):
        raise ValueError("worker_mode must be 'replay' or 'idm'")
    trk = scenario.expert_track
    i0 = trk.index_at(scenario.initial_time)
    ref = scenario.reference_path
    s0, _ = arc_project(ref, trk.xy[i0])
    pose = pose_at(ref, s0)
    speed = _tangential_speed(ref, s0, trk.v[i0])
    actor = AgentState(
        id=scenario.actor_id,
        mode="actor",
        pose=pose,
        velocity=speed * tangent_at(ref, s0),
        speed=speed,
        length=trk.length,
        width=trk.width,
        s=s0,
        path=ref,
        track=trk,
    )
    workers = []
    route_cache: dict[int, ArcPath] = {}
    kmh = 1.0 / 3.6
    for wid in scenario.worker_ids:
        wtrk = scenario.worker_tracks[wid]
        j = wtrk.index_at(scenario.initial_time)
        if worker_mode == "replay":
            workers.append(
                AgentState(
                    id=wid,
                    mode="replay_worker",
                    pose=Pose2(float(wtrk.xy[j, 0]), float(wtrk.xy[j, 1]), float(wtrk.heading[j])),
                    velocity=wtrk.v[j].copy(),
                    speed=float(np.hypot(*wtrk.v[j])),
                    length=wtrk.length,
                    width=wtrk.width,
                    track=wtrk,
                )
            )
        else:
            path = reference_path_for_track(scenario.map, wtrk.xy)
            key = hash(path.points.tobytes())
            path = route_cache.setdefault(key, path)  # share equal routes for same-path leader checks
            ws, _ = arc_project(path, wtrk.xy[j])
            wpose = pose_at(path, ws)
            wspeed = _tangential_speed(path, ws, wtrk.v[j])
            params = IdmParams(v0=(30.0 + 20.0 * rng.random()) * kmh)
            workers.append(
                AgentState(
                    id=wid,
                    mode="idm_worker",
                    pose=wpose,
                    velocity=wspeed * tangent_at(path, ws),
                    speed=wspeed,
                    length=wtrk.length,
                    width=wtrk.width,
                    s=ws,
                    path=path,
                    track=wtrk,
                    idm=params,
                )
            )
    agents = (actor,) + tuple(workers)
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            if _overlap(agents[i], agents[j]):
                raise PlacementError(
                    f"scenario {scenario.id!r}: initial overlap between {agents[i].id!r} and {agents[j].id!r}"
                )
    return WorldState(
        clock_step=0,
        agents=agents,
        actor_collided=False,
        collision_partners=frozenset(),
        horizon=scenario.horizon_steps,
        scenario=scenario,
        worker_mode=worker_mode,
        actor_history=(actor.position,),
        last_action=0.0,
    )


def _overlap(a: AgentState, b: AgentState) -> bool:
    from .geometry import obb_overlap

    rough = np.hypot(*(a.position - b.position))
    if rough > 0.5 * (math.hypot(a.length, a.width) + math.hypot(b.length, b.width)):
        return False
    return obb_overlap(a.box, b.box)


def step(world: WorldState, actor_ds: float) -> tuple[WorldState, StepOutcome]:
    """Advance one timestep: actor shift, worker motion, collision flags.

    Collisions never terminate the episode; each partner id is counted once.
    """
    from .observation import default_observation_vector

    if world.clock_step >= world.horizon:
        raise SimulationError("cannot step a finished episode")
    actor = world.actor
    ds_req = min(max(float(actor_ds), 0.0), DS_CAP)
    new_s = min(actor.s + ds_req, actor.path.total_length)
    ds_applied = new_s - actor.s
    speed = ds_applied / DT
    pose = pose_at(actor.path, new_s)
    new_actor = replace(
        actor,
        s=new_s,
        pose=pose,
        speed=speed,
        velocity=speed * tangent_at(actor.path, new_s),
    )

    new_time = world.scenario.initial_time + (world.clock_step + 1) * DT
    # synchronous IDM update: accelerations read the pre-step world
    snapshot = [(a.position, a.velocity, a.length, a.path, a.s) for a in world.agents]
    new_workers = []
    for idx, agent in enumerate(world.agents[1:], start=1):
        if agent.mode == "replay_worker":
            trk = agent.track
            j = trk.index_at(new_time)
            new_workers.append(
                replace(
                    agent,
                    pose=Pose2(float(trk.xy[j, 0]), float(trk.xy[j, 1]), float(trk.heading[j])),
                    velocity=trk.v[j].copy(),
                    speed=float(np.hypot(*trk.v[j])),
                )
            )
        else:
            others = snapshot[:idx] + snapshot[idx + 1 :]
            new_workers.append(advance_idm_worker(agent, others))

    partners = set(world.collision_partners)
    new_collision = False
    front_collision = False
    for w in new_workers:
        if w.id in partners:
            continue
        if _overlap(new_actor, w):
            partners.add(w.id)
            new_collision = True
            if in_front_cone(new_actor.pose, (w.pose.x, w.pose.y), CONE_HALF_ANGLE):
                front_collision = True

    clock = world.clock_step + 1
    new_world = WorldState(
        clock_step=clock,
        agents=(new_actor,) + tuple(new_workers),
        actor_collided=world.actor_collided or new_collision,
        collision_partners=frozenset(partners),
        horizon=world.horizon,
        scenario=world.scenario,
        worker_mode=world.worker_mode,
        actor_history=world.actor_history + (new_actor.position,),
        last_action=ds_applied,
    )
    outcome = StepOutcome(
        next_observation=default_observation_vector(new_world, world.scenario),
        new_collision=new_collision,
        front_collision=front_collision,
        done=clock == world.horizon,
        ds_applied=ds_applied,
    )
    return new_world, outcome


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------
@dataclass
class EpisodeRollout:
    """Per-step records of one simulated episode."""

    scenario_id: str
    worker_mode: str
    observations: np.ndarray  # (H, 262), observation before each step
    actions: np.ndarray  # raw policy outputs (pre-clamp)
    ds_applied: np.ndarray
    logps: np.ndarray
    new_collisions: np.ndarray  # bool
    front_collisions: np.ndarray  # bool
    dones: np.ndarray  # bool
    positions: np.ndarray  # (H, 2) actor position after each step
    rewards_synthetic: np.ndarray | None = None
    collision_events: list = field(default_factory=list)  # (step, front_flag)

    def __len__(self):
        return len(self.actions)


class ZeroPolicy:
    """Stands still; useful as a divergence baseline."""

    def begin_episode(self, scenario):
        pass

    def act(self, obs, rng):
        return 0.0, 0.0


class ExpertReplayPolicy:
    """Replays the demonstrated longitudinal shifts of the current scenario."""

    def __init__(self):
        self._actions = None
        self._t = 0

    def begin_episode(self, scenario):
        self._actions = scenario.expert_actions()
        self._t = 0

    def act(self, obs, rng):
        a = float(self._actions[self._t]) if self._t < len(self._actions) else 0.0
        self._t += 1
        return a, 0.0


def rollout(policy, scenario: Scenario, worker_mode: str, H: int, rng: np.random.Generator,
            reward_fns=None) -> EpisodeRollout:
    """Run one episode of exactly H steps and record the trajectory."""
    if H > scenario.horizon_steps:
        raise SimulationError(f"H={H} exceeds scenario horizon {scenario.horizon_steps}")
    from .observation import default_observation_vector

    world = reset(scenario, worker_mode, rng)
    world = replace(world, horizon=H)
    if hasattr(policy, "begin_episode"):
        policy.begin_episode(scenario)
    obs = default_observation_vector(world, scenario)
    n = H
    observations = np.empty((n, obs.shape[0]))
    actions = np.empty(n)
    ds_applied = np.empty(n)
    logps = np.empty(n)
    new_col = np.zeros(n, dtype=bool)
    front_col = np.zeros(n, dtype=bool)
    dones = np.zeros(n, dtype=bool)
    positions = np.empty((n, 2))
    events = []
    for t in range(n):
        observations[t] = obs
        a, logp = policy.act(obs, rng)
        world, out = step(world, a)
        actions[t] = a
        ds_applied[t] = out.ds_applied
        logps[t] = logp
        new_col[t] = out.new_collision
        front_col[t] = out.front_collision
        dones[t] = out.done
        positions[t] = world.actor.position
        if out.new_collision:
            events.append((t, out.front_collision))
        obs = out.next_observation
    rewards = None
    if reward_fns is not None and "synthetic" in reward_fns:
        fn = reward_fns["synthetic"]
        rewards = np.array([fn(bool(new_col[t]), float(ds_applied[t])) for t in range(n)])
    return EpisodeRollout(
        scenario_id=scenario.id,
        worker_mode=worker_mode,
        observations=observations,
        actions=actions,
        ds_applied=ds_applied,
        logps=logps,
        new_collisions=new_col,
        front_collisions=front_col,
        dones=dones,
        positions=positions,
        rewards_synthetic=rewards,
        collision_events=events,
    )
