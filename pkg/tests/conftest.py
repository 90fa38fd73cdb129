import numpy as np
import pytest

from drivelearn.constants import DT
from drivelearn.geometry import ArcPath
from drivelearn.scenario import (
    Corridor,
    RoadMap,
    SyntheticConfig,
    TrackLog,
    generate_synthetic,
)


def straight_corridor(cid="lane", length=100.0, width=4.0, y=0.0, succ=()):
    xs = np.arange(0.0, length + 0.5, 0.5)
    center = np.column_stack([xs, np.full_like(xs, y)])
    return Corridor(
        id=cid,
        centerline=ArcPath(center),
        left_bound=ArcPath(center + [0.0, width / 2]),
        right_bound=ArcPath(center - [0.0, width / 2]),
        successors=tuple(succ),
    )


def straight_map(length=100.0):
    c = straight_corridor(length=length)
    return RoadMap(corridors={c.id: c}, goals=(c.id,))


def make_track(agent_id, xs, ys=None, vx=10.0, vy=0.0, heading=0.0, t0=0.0, length=4.5, width=2.0):
    xs = np.asarray(xs, dtype=float)
    ys = np.zeros_like(xs) if ys is None else np.asarray(ys, dtype=float)
    n = len(xs)
    return TrackLog(
        agent_id,
        t=t0 + DT * np.arange(n),
        xy=np.column_stack([xs, ys]),
        v=np.tile([vx, vy], (n, 1)),
        heading=np.full(n, heading),
        length=length,
        width=width,
    )


def driving_track(agent_id, speed=10.0, n=200, x0=0.0, t0=0.0, y=0.0):
    xs = x0 + speed * DT * np.arange(n)
    return make_track(agent_id, xs, ys=np.full(n, y), vx=speed, t0=t0)


@pytest.fixture(scope="session")
def small_synthetic_set():
    """One shared small roundabout scenario set, generated once per session."""
    cfg = SyntheticConfig(per_horizon=2, n_validation=2)
    road_map, train, val = generate_synthetic(cfg, seed=11)
    return cfg, road_map, train, val
