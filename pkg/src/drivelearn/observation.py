"""Fixed-layout 262-dimensional observation vector, built per step.

Layout (all positions in the actor's ego frame, actor at the origin heading
along +x):

  [0:60)    route: 30 points of the reference path, 0.5 m apart
  [60:100)  right corridor bound: 20 points, 0.5 m apart
  [100:140) left corridor bound: 20 points
  [140:210) 5 neighbor blocks of 14: mask, x, y, vx, vy, d, 4 corner points
  [210:252) ego history: 21 positions covering the past 2 seconds
  [252]     last action
  [253]     collision flag
  [254:262) ego footprint corners
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .constants import DS_CAP
from .geometry import arc_project, positions_at, sample_ahead

if TYPE_CHECKING:
    from .scenario import Scenario
    from .simulator import WorldState

OBS_DIM = 262
N_ROUTE = 30
N_BOUND = 20
N_NEIGHBORS = 5
NEIGHBOR_BLOCK = 14
N_HISTORY = 21
SAMPLE_SPACING = 0.5


@dataclass(frozen=True)
class NormalizationSpec:
    position_scale: float = 15.0
    speed_scale: float = 13.89
    distance_scale: float = 30.0
    action_scale: float = DS_CAP

    def __post_init__(self):
        if min(self.position_scale, self.speed_scale, self.distance_scale, self.action_scale) <= 0:
            raise ValueError("normalization scales must be positive")


DEFAULT_NORMALIZATION = NormalizationSpec()


@dataclass
class Observation:
    route: np.ndarray  # (30, 2)
    corridor_right: np.ndarray  # (20, 2)
    corridor_left: np.ndarray  # (20, 2)
    neighbor_mask: np.ndarray  # (5,)
    neighbor_vals: np.ndarray  # (5, 13): x, y, vx, vy, d, corners
    ego_history: np.ndarray  # (21, 2)
    last_action: float
    collision_flag: float
    ego_corners: np.ndarray  # (4, 2)


def _ego_transform(pose):
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    rot = np.array([[c, s], [-s, c]])  # world -> ego rotation
    origin = np.array([pose.x, pose.y])

    def to_ego(pts):
        return (np.asarray(pts, dtype=float) - origin) @ rot.T

    return to_ego


def _containing_corridor(world, scenario):
    """Corridor the actor currently drives in, with its bound arc-lengths."""
    ref = scenario.reference_path
    segments = getattr(ref, "segments", None)
    actor = world.actor
    if segments is not None:
        starts = [seg[1] for seg in segments]
        idx = int(np.searchsorted(starts, actor.s, side="right")) - 1
        idx = min(max(idx, 0), len(segments) - 1)
        cid = segments[idx][0]
    else:
        # no route metadata: nearest centerline, preferring interior
        # projections over clamped path ends on near-ties
        pos = actor.position
        best = None
        for cid_ in sorted(scenario.map.corridors):
            path = scenario.map.corridors[cid_].centerline
            s, _ = arc_project(path, pos)
            q = positions_at(path, [s])[0]
            d = float(np.hypot(*(pos - q)))
            at_end = s >= path.total_length - 1e-9
            key = (round(d, 6), at_end, cid_)
            if best is None or key < best:
                best = key
        cid = best[2]
    return scenario.map.corridors[cid]


def build_observation(world: "WorldState", scenario: "Scenario") -> Observation:
    actor = world.actor
    to_ego = _ego_transform(actor.pose)

    route = to_ego(sample_ahead(scenario.reference_path, actor.s, SAMPLE_SPACING, N_ROUTE))

    corridor = _containing_corridor(world, scenario)
    pos = actor.position
    s_r, _ = arc_project(corridor.right_bound, pos)
    s_l, _ = arc_project(corridor.left_bound, pos)
    corr_right = to_ego(sample_ahead(corridor.right_bound, s_r, SAMPLE_SPACING, N_BOUND))
    corr_left = to_ego(sample_ahead(corridor.left_bound, s_l, SAMPLE_SPACING, N_BOUND))

    workers = world.agents[1:]
    mask = np.zeros(N_NEIGHBORS)
    vals = np.zeros((N_NEIGHBORS, NEIGHBOR_BLOCK - 1))
    if workers:
        dists = np.array([float(np.hypot(*(w.position - pos))) for w in workers])
        order = np.argsort(dists, kind="stable")[:N_NEIGHBORS]
        for slot, wi in enumerate(order):
            w = workers[wi]
            rel = to_ego(w.position[None, :])[0]
            vel = to_ego(w.position[None, :] + w.velocity[None, :])[0] - rel
            corners = to_ego(w.box.corners()).ravel()
            mask[slot] = 1.0
            vals[slot, 0:2] = rel
            vals[slot, 2:4] = vel
            vals[slot, 4] = dists[wi]
            vals[slot, 5:13] = corners

    hist = np.asarray(world.actor_history[-N_HISTORY:])
    if len(hist) < N_HISTORY:
        pad = np.tile(world.actor_history[0], (N_HISTORY - len(hist), 1))
        hist = np.vstack([pad, hist])
    ego_history = to_ego(hist)

    ego_corners = to_ego(actor.box.corners())
    return Observation(
        route=route,
        corridor_right=corr_right,
        corridor_left=corr_left,
        neighbor_mask=mask,
        neighbor_vals=vals,
        ego_history=ego_history,
        last_action=float(world.last_action),
        collision_flag=1.0 if world.actor_collided else 0.0,
        ego_corners=ego_corners,
    )


def normalize(obs: Observation, spec: NormalizationSpec = DEFAULT_NORMALIZATION) -> np.ndarray:
    """Flatten to the 262-vector; masks and the collision flag stay unscaled."""
    out = np.empty(OBS_DIM)
    ps = spec.position_scale
    out[0:60] = obs.route.ravel() / ps
    out[60:100] = obs.corridor_right.ravel() / ps
    out[100:140] = obs.corridor_left.ravel() / ps
    blocks = np.empty((N_NEIGHBORS, NEIGHBOR_BLOCK))
    blocks[:, 0] = obs.neighbor_mask
    blocks[:, 1:3] = obs.neighbor_vals[:, 0:2] / ps
    blocks[:, 3:5] = obs.neighbor_vals[:, 2:4] / spec.speed_scale
    blocks[:, 5] = obs.neighbor_vals[:, 4] / spec.distance_scale
    blocks[:, 6:14] = obs.neighbor_vals[:, 5:13] / ps
    out[140:210] = blocks.ravel()
    out[210:252] = obs.ego_history.ravel() / ps
    out[252] = obs.last_action / spec.action_scale
    out[253] = obs.collision_flag
    out[254:262] = obs.ego_corners.ravel() / ps
    return out


def default_observation_vector(world, scenario) -> np.ndarray:
    return normalize(build_observation(world, scenario), DEFAULT_NORMALIZATION)
