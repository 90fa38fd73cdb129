"""Imitation (ADE) and safety (CR/FCR) metrics over scenario sets.

The non-interactive (NI) setting replays recorded workers and supports all
four metrics; the interactive (I) setting replaces every worker with an IDM
agent, in which case there is no expert reference to compare against and
only the collision metrics are reported.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .constants import DT
from .simulator import rollout

EVAL_HORIZON_STEPS = 150


@dataclass(frozen=True)
class EpisodeRecord:
    scenario_id: str
    sim_positions: np.ndarray  # (H+1, 2), step-aligned, index 0 = start
    expert_positions: np.ndarray | None  # same alignment; None in I setting
    collision_events: tuple  # ((step, front_flag), ...)


@dataclass(frozen=True)
class EvalReport:
    setting: str  # NI | I
    episodes: int
    ade5: float | None
    ade15: float | None
    cr: float
    fcr: float

    def __post_init__(self):
        if not 0.0 <= self.fcr <= self.cr <= 100.0:
            raise ValueError("expected 0 <= FCR <= CR <= 100")


def ade(sim_positions, expert_positions, horizon_seconds: float) -> float:
    """Mean Euclidean error over steps 1..horizon (index 0 is the start)."""
    k = math.ceil(horizon_seconds / DT)
    sim = np.asarray(sim_positions, dtype=float)
    exp = np.asarray(expert_positions, dtype=float)
    if len(sim) < k + 1 or len(exp) < k + 1:
        raise ValueError(f"need {k + 1} step-aligned positions, got {len(sim)} and {len(exp)}")
    d = np.hypot(*(sim[1 : k + 1] - exp[1 : k + 1]).T)
    return float(d.mean())


def collision_stats(records) -> tuple[float, float]:
    """CR: share of episodes with any collision. FCR: share whose first
    collision happened inside the front cone."""
    records = list(records)
    if not records:
        raise ValueError("no episodes to aggregate")
    n = len(records)
    collided = sum(1 for r in records if r.collision_events)
    front_first = sum(1 for r in records if r.collision_events and r.collision_events[0][1])
    return 100.0 * collided / n, 100.0 * front_first / n


def run_episode(policy, scenario, setting: str, rng) -> EpisodeRecord:
    mode = "replay" if setting == "NI" else "idm"
    r = rollout(policy, scenario, mode, scenario.horizon_steps, rng)
    start = scenario.expert_positions()[:1]
    return EpisodeRecord(
        scenario_id=scenario.id,
        sim_positions=np.vstack([start, r.positions]),
        expert_positions=scenario.expert_positions() if setting == "NI" else None,
        collision_events=tuple(r.collision_events),
    )


def evaluate(policy, scenarios, setting: str, rng: np.random.Generator) -> EvalReport:
    """Deterministic evaluation at 15 s; the policy runs mean actions."""
    if setting not in ("NI", "I"):
        raise ValueError("setting must be 'NI' or 'I'")
    scenarios = sorted(scenarios, key=lambda s: s.id)
    if not scenarios:
        raise ValueError("no evaluation scenarios")
    for sc in scenarios:
        if sc.horizon_steps != EVAL_HORIZON_STEPS:
            raise ValueError(f"evaluation needs {EVAL_HORIZON_STEPS}-step scenarios, got {sc.horizon_steps}")
    if hasattr(policy, "deterministic"):
        policy.deterministic = True
    seeds = np.random.SeedSequence(entropy=int(rng.integers(0, 2**63 - 1)))
    records = []
    for child, sc in zip(seeds.spawn(len(scenarios)), scenarios):
        records.append(run_episode(policy, sc, setting, np.random.default_rng(child)))
    cr, fcr = collision_stats(records)
    if setting == "NI":
        ade5 = float(np.mean([ade(r.sim_positions, r.expert_positions, 5.0) for r in records]))
        ade15 = float(np.mean([ade(r.sim_positions, r.expert_positions, 15.0) for r in records]))
    else:
        ade5 = ade15 = None
    return EvalReport(setting=setting, episodes=len(records), ade5=ade5, ade15=ade15, cr=cr, fcr=fcr)


REPORT_HEADER = ["algorithm", "setting", "episodes", "ade5", "ade15", "cr", "fcr"]


def write_report(path, algorithm: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        writer.writerow(
            [
                algorithm,
                report.setting,
                report.episodes,
                "" if report.ade5 is None else f"{report.ade5:.6g}",
                "" if report.ade15 is None else f"{report.ade15:.6g}",
                f"{report.cr:.6g}",
                f"{report.fcr:.6g}",
            ]
        )
