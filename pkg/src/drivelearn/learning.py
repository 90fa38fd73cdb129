"""Rewards, advantage estimation, losses, PCGrad and the training loops.

Implements six trainable algorithms over the same rollout machinery:

  BC      supervised regression on demonstration pairs, no simulation
  GAIL    PPO on the discriminator log-odds reward only
  BCGAIL  GAIL plus an annealed behavior-cloning term in the policy loss
  SGAIL   PPO on the 0.5/0.5 weighted sum of both rewards, single stream
  PPO     PPO on the hand-designed collision/progress reward only
  MOPPO   two PPO objectives (one per reward stream) with separate value
          heads, combined per minibatch through PCGrad gradient surgery

All simulation algorithms share the horizon curriculum: training starts at
2.5 s episodes and each tier unlocks once the rolling imitation error at the
current horizon drops below a threshold.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import DS_CAP, DS_MAX_REWARD
from .nets import (
    AdamState,
    DriveNets,
    gaussian_entropy,
    gaussian_logp,
    sample_and_logprob,
)
from .scenario import HORIZON_TIERS, ExpertBuffer, build_expert_buffer
from .simulator import rollout

ALGORITHMS = ("BC", "GAIL", "BCGAIL", "SGAIL", "PPO", "MOPPO")
WORKER_VARIANTS = ("M", "I", "mix")

CURRICULUM_ADE_THRESHOLD = 3.0
CURRICULUM_WINDOW = 20

LOG_COLUMNS = [
    "iter",
    "steps",
    "mean_return_S",
    "mean_return_D",
    "disc_loss",
    "policy_obj",
    "value_loss_S",
    "value_loss_D",
    "entropy_coef",
    "curriculum_tier",
    "grad_conflict_rate",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "PPO"
    worker_variant: str = "M"
    gamma: float = 0.99
    lam: float = 0.95
    eps_pi: float = 0.2
    eps_v: float = 0.2
    entropy_init: float = 0.01
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    lr_disc: float = 3e-4
    rollout_steps: int = 4096
    ppo_epochs: int = 4
    minibatch: int = 256
    disc_epochs: int = 2
    alpha: float = 0.1
    sgail_mix: float = 0.5
    r_col: float = -2.0
    ds_max_step: float = 1.389
    rd_clip: float = 10.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.worker_variant not in WORKER_VARIANTS:
            raise ConfigError(f"variant must be one of {WORKER_VARIANTS}, got {self.worker_variant!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 < self.lam <= 1.0:
            raise ConfigError(f"lam must lie in (0, 1], got {self.lam}")
        for name in ("eps_pi", "eps_v", "lr_policy", "lr_value", "lr_disc", "ds_max_step", "rd_clip"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        for name in ("rollout_steps", "ppo_epochs", "minibatch", "disc_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.entropy_init < 0.0:
            raise ConfigError("entropy_init must be non-negative")
        if not 0.0 <= self.sgail_mix <= 1.0:
            raise ConfigError("sgail_mix must lie in [0, 1]")


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------
def synthetic_reward(new_collision: bool, ds_applied: float, cfg: TrainConfig) -> float:
    """Collision penalty plus a forward-progress bonus saturating at 50 km/h."""
    if ds_applied < 0.0:
        raise ValueError("ds_applied must be non-negative")
    bonus = cfg.alpha * min(ds_applied / cfg.ds_max_step, 1.0)
    return (cfg.r_col if new_collision else 0.0) + bonus


def data_driven_reward(logit, cfg: TrainConfig):
    """log D - log(1-D) is exactly the discriminator logit, clamped."""
    return np.clip(logit, -cfg.rd_clip, cfg.rd_clip)


# ---------------------------------------------------------------------------
# advantage estimation
# ---------------------------------------------------------------------------
def gae(rewards, values, bootstrap: float, gamma: float, lam: float):
    """Generalized advantage estimation over one episode.

    delta_t = r_t + gamma*V_{t+1} - V_t, accumulated backward with decay
    gamma*lam; returns are advantages plus values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError("rewards/values length mismatch")
    v_next = np.append(values[1:], bootstrap)
    deltas = rewards + gamma * v_next - values
    adv = np.empty_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        adv[t] = acc
    return adv, adv + values


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance; short or constant inputs are centered only."""
    x = np.asarray(x, dtype=float)
    mu = x.mean()
    sd = x.std()
    if sd < 1e-12:
        return x - mu
    return (x - mu) / sd


# ---------------------------------------------------------------------------
# objectives (each returns the scalar and its full parameter gradient)
# ---------------------------------------------------------------------------
def ppo_policy_objective(nets: DriveNets, params, obs, actions, logp_old, advantages,
                         eps_pi: float, c_e: float):
    """Clipped-surrogate policy objective plus entropy bonus (maximized)."""
    (mu, sigma), rec = nets.policy_forward(params, obs, want_cache=True)
    logp_new = gaussian_logp(mu, sigma, actions)
    ratio = np.exp(logp_new - logp_old)
    if not np.all(np.isfinite(ratio)):
        raise FloatingPointError("non-finite likelihood ratio")
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - eps_pi, 1.0 + eps_pi) * advantages
    per = np.minimum(unclipped, clipped)
    objective = float(per.mean()) + c_e * gaussian_entropy(sigma)

    n = len(per)
    active = (unclipped <= clipped).astype(float)  # clipped branch has zero slope
    d_ratio = advantages * active / n
    d_logp = d_ratio * ratio
    d_mu = d_logp * (actions - mu) / sigma**2
    d_sigma = float(np.sum(d_logp * ((actions - mu) ** 2 / sigma**3 - 1.0 / sigma)))
    d_sigma += c_e / sigma  # entropy term
    d_log_std = d_sigma * nets.d_sigma_d_log_std(params)
    grad = nets.policy_backward(params, rec, d_mu, d_log_std=d_log_std)
    return objective, grad


def value_objective(nets: DriveNets, params, obs, returns, v_old, head: str, eps_v: float):
    """Pessimistically clipped value regression (minimized)."""
    v, rec = nets.value_forward(params, obs, head, want_cache=True)
    v_clip = np.clip(v, v_old - eps_v, v_old + eps_v)
    raw = (v - returns) ** 2
    clipped = (v_clip - returns) ** 2
    per = np.maximum(raw, clipped)
    loss = float(per.mean())
    n = len(per)
    d_v = np.where(raw >= clipped, 2.0 * (v - returns), 0.0) / n
    grad = nets.value_backward(params, rec, d_v)
    return loss, grad


def discriminator_objective(nets: DriveNets, params, policy_obs, policy_actions,
                            expert_obs, expert_actions):
    """Cross-entropy with D = P(expert); minimized by the discriminator."""
    if len(policy_obs) == 0 or len(expert_obs) == 0:
        raise ValueError("discriminator needs non-empty policy and expert sets")
    p_min, p_max = 1e-6, 1.0 - 1e-6
    grad = np.zeros(nets.n_params)

    le, rec_e = nets.disc_forward(params, expert_obs, np.asarray(expert_actions) / DS_CAP, want_cache=True)
    de = 1.0 / (1.0 + np.exp(-le))
    de_c = np.clip(de, p_min, p_max)
    loss_e = -np.log(de_c)
    d_le = np.where((de > p_min) & (de < p_max), -(1.0 - de), 0.0) / len(le)
    nets.disc_backward(params, rec_e, d_le, out=grad)

    lp, rec_p = nets.disc_forward(params, policy_obs, np.asarray(policy_actions) / DS_CAP, want_cache=True)
    dp = 1.0 / (1.0 + np.exp(-lp))
    dp_c = np.clip(dp, p_min, p_max)
    loss_p = -np.log(1.0 - dp_c)
    d_lp = np.where((dp > p_min) & (dp < p_max), dp, 0.0) / len(lp)
    nets.disc_backward(params, rec_p, d_lp, out=grad)

    loss = float(loss_e.mean() + loss_p.mean())
    return loss, grad


def bc_objective(nets: DriveNets, params, obs, actions):
    """Mean Gaussian negative log-likelihood of expert actions (minimized)."""
    if len(obs) == 0:
        raise ValueError("behavior cloning needs a non-empty pair set")
    (mu, sigma), rec = nets.policy_forward(params, obs, want_cache=True)
    z = (np.asarray(actions) - mu) / sigma
    loss = float(np.mean(0.5 * z * z) + math.log(sigma) + 0.5 * math.log(2.0 * math.pi))
    n = len(z)
    d_mu = (mu - np.asarray(actions)) / sigma**2 / n
    d_sigma = float(np.mean(1.0 / sigma - z * z / sigma))
    d_log_std = d_sigma * nets.d_sigma_d_log_std(params)
    grad = nets.policy_backward(params, rec, d_mu, d_log_std=d_log_std)
    return loss, grad


def pcgrad_combine(g_s: np.ndarray, g_d: np.ndarray) -> np.ndarray:
    """Sum of the two gradients after projecting out conflicting components.

    Non-conflicting (or zero) inputs pass through as the exact sum.
    """
    if g_s.shape != g_d.shape:
        raise ValueError("gradient length mismatch")
    dot = float(g_s @ g_d)
    n_s = float(g_s @ g_s)
    n_d = float(g_d @ g_d)
    if dot >= 0.0 or n_s == 0.0 or n_d == 0.0:
        return g_s + g_d
    proj_s = g_s - (dot / n_d) * g_d
    proj_d = g_d - (dot / n_s) * g_s
    return proj_s + proj_d


def entropy_coefficient(cfg: TrainConfig, steps_done: int, budget_steps: int) -> float:
    """Linear anneal of the entropy bonus from its initial value to zero."""
    if budget_steps <= 0:
        return 0.0
    f = min(1.0, steps_done / budget_steps)
    return cfg.entropy_init * (1.0 - f)


# ---------------------------------------------------------------------------
# curriculum
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CurriculumState:
    tier_index: int = 0
    ade_window: tuple = ()

    @property
    def horizon(self) -> int:
        return HORIZON_TIERS[self.tier_index]


def curriculum_update(state: CurriculumState, recent_eval_ade: float) -> CurriculumState:
    """Advance one tier once the full rolling ADE window clears the bar."""
    window = (state.ade_window + (float(recent_eval_ade),))[-CURRICULUM_WINDOW:]
    if (
        len(window) == CURRICULUM_WINDOW
        and float(np.mean(window)) < CURRICULUM_ADE_THRESHOLD
        and state.tier_index < len(HORIZON_TIERS) - 1
    ):
        return CurriculumState(tier_index=state.tier_index + 1, ade_window=())
    return replace(state, ade_window=window)


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------
class GaussianPolicy:
    """Stochastic policy over a parameter snapshot; optionally mean-action."""

    def __init__(self, nets: DriveNets, params: np.ndarray, deterministic: bool = False):
        self.nets = nets
        self.params = params
        self.deterministic = deterministic

    def begin_episode(self, scenario):
        pass

    def act(self, obs, rng):
        mu, sigma = self.nets.policy_forward(self.params, obs)
        if self.deterministic:
            return mu, gaussian_logp(mu, sigma, mu)
        return sample_and_logprob(mu, sigma, rng)


# ---------------------------------------------------------------------------
# trajectory batches
# ---------------------------------------------------------------------------
@dataclass
class TrajectoryBatch:
    obs: np.ndarray
    actions: np.ndarray  # raw (pre-clamp) samples; the ratio uses these
    ds_applied: np.ndarray  # executed shifts; discriminator pairs use these
    logp_old: np.ndarray
    reward_S: np.ndarray
    reward_D: np.ndarray
    value_S: np.ndarray
    value_D: np.ndarray
    done: np.ndarray
    episode_id: np.ndarray
    worker_mode: np.ndarray  # 0 replay, 1 idm
    episode_slices: list
    adv_S: np.ndarray | None = None
    ret_S: np.ndarray | None = None
    adv_D: np.ndarray | None = None
    ret_D: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)


def assemble_batch(rollouts, cfg: TrainConfig, nets: DriveNets, params) -> TrajectoryBatch:
    obs = np.concatenate([r.observations for r in rollouts])
    actions = np.concatenate([r.actions for r in rollouts])
    ds_exec = np.concatenate([r.ds_applied for r in rollouts])
    logp_old = np.concatenate([r.logps for r in rollouts])
    done = np.concatenate([r.dones for r in rollouts])
    mode = np.concatenate([np.full(len(r), 1 if r.worker_mode == "idm" else 0) for r in rollouts])
    eid = np.concatenate([np.full(len(r), k) for k, r in enumerate(rollouts)])
    r_s = np.concatenate(
        [
            np.array([synthetic_reward(bool(c), float(d), cfg) for c, d in zip(r.new_collisions, r.ds_applied)])
            for r in rollouts
        ]
    )
    slices = []
    start = 0
    for r in rollouts:
        slices.append(slice(start, start + len(r)))
        start += len(r)
    v_s = nets.value_forward(params, obs, "S")
    v_d = nets.value_forward(params, obs, "D")
    return TrajectoryBatch(
        obs=obs,
        actions=actions,
        ds_applied=ds_exec,
        logp_old=logp_old,
        reward_S=r_s,
        reward_D=np.zeros(len(actions)),
        value_S=np.atleast_1d(v_s),
        value_D=np.atleast_1d(v_d),
        done=done,
        episode_id=eid,
        worker_mode=mode,
        episode_slices=slices,
    )


def compute_advantages(batch: TrajectoryBatch, cfg: TrainConfig) -> None:
    """Per-episode GAE for both streams, standardized batch-wide per stream.

    Episodes always end at the horizon, so the bootstrap value is zero.
    """
    adv_s = np.empty(len(batch))
    ret_s = np.empty(len(batch))
    adv_d = np.empty(len(batch))
    ret_d = np.empty(len(batch))
    for sl in batch.episode_slices:
        a, r = gae(batch.reward_S[sl], batch.value_S[sl], 0.0, cfg.gamma, cfg.lam)
        adv_s[sl], ret_s[sl] = a, r
        a, r = gae(batch.reward_D[sl], batch.value_D[sl], 0.0, cfg.gamma, cfg.lam)
        adv_d[sl], ret_d[sl] = a, r
    batch.adv_S = standardize(adv_s)
    batch.ret_S = ret_s
    batch.adv_D = standardize(adv_d)
    batch.ret_D = ret_d


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------
@dataclass
class TrainResult:
    params: np.ndarray
    nets: DriveNets
    log_rows: list
    curriculum: CurriculumState


def _format_log_value(v):
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    return f"{v:.6g}"


class Trainer:
    """Owns parameters, optimizer state and the training loop for one run."""

    EVAL_EPISODES_PER_ITERATION = 4

    def __init__(self, cfg: TrainConfig, scenarios, budget_steps: int, seed: int,
                 workers: int = 1, nets: DriveNets | None = None):
        if not scenarios and cfg.algorithm != "BC":
            raise ConfigError("no training scenarios")
        self.cfg = cfg
        self.scenarios = list(scenarios)
        self.budget = int(budget_steps)
        self.seed = int(seed)
        self.workers = max(1, int(workers))
        self.nets = nets or DriveNets()
        self.rng = np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(0,)))
        self.params = self.nets.init_params(self.rng)
        self.adam_policy = AdamState(lr=cfg.lr_policy)
        self.adam_value = AdamState(lr=cfg.lr_value)
        self.adam_disc = AdamState(lr=cfg.lr_disc)
        self.curriculum = CurriculumState()
        self.steps_done = 0
        self.iteration = 0
        self.log_rows: list[dict] = []
        self._eval_cursor = 0
        self._scenario_cursor = 0
        self._expert_buffer: ExpertBuffer | None = None
        self._rd_override = None  # test hook: callable(batch) -> reward_D array

    # -- helpers ----------------------------------------------------------
    def expert_buffer(self) -> ExpertBuffer:
        if self._expert_buffer is None:
            self._expert_buffer = build_expert_buffer(self.scenarios)
            if len(self._expert_buffer) == 0:
                raise ConfigError("expert buffer is empty")
        return self._expert_buffer

    def _eligible(self, horizon):
        out = [s for s in self.scenarios if s.horizon_steps >= horizon]
        return out or self.scenarios

    def _episode_plan(self, horizon):
        """Deterministic (scenario, worker_mode) schedule for one iteration."""
        eligible = self._eligible(horizon)
        modes = {"M": ("replay",), "I": ("idm",), "mix": ("replay", "idm")}[self.cfg.worker_variant]
        n_units = math.ceil(self.cfg.rollout_steps / (horizon * len(modes)))
        plan = []
        for k in range(n_units):
            sc = eligible[(self._scenario_cursor + k) % len(eligible)]
            for mode in modes:
                plan.append((sc, mode))
        self._scenario_cursor = (self._scenario_cursor + n_units) % len(eligible)
        return plan

    def _collect(self, horizon):
        plan = self._episode_plan(horizon)
        policy = GaussianPolicy(self.nets, self.params)

        def run(task):
            k, (sc, mode) = task
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.iteration + 1, k))
            return rollout(policy, sc, mode, horizon, np.random.default_rng(ss))

        tasks = list(enumerate(plan))
        if self.workers == 1:
            return [run(t) for t in tasks]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(run, tasks))

    def _train_discriminator(self, batch: TrajectoryBatch) -> float:
        buf = self.expert_buffer()
        losses = []
        n = len(batch)
        for _ in range(self.cfg.disc_epochs):
            order = self.rng.permutation(n)
            for lo in range(0, n, self.cfg.minibatch):
                mb = order[lo : lo + self.cfg.minibatch]
                idx_e = self.rng.integers(0, len(buf), size=len(mb))
                loss, grad = discriminator_objective(
                    self.nets,
                    self.params,
                    batch.obs[mb],
                    batch.ds_applied[mb],
                    buf.observations[idx_e],
                    buf.actions[idx_e],
                )
                self.params = self._apply(self.adam_disc, grad)
                losses.append(loss)
        return float(np.mean(losses))

    def _apply(self, state: AdamState, grad):
        from .nets import apply_update

        return apply_update(self.params, grad, state)

    def _fill_reward_d(self, batch: TrajectoryBatch):
        if self._rd_override is not None:
            batch.reward_D = np.asarray(self._rd_override(batch), dtype=float)
            return
        logits = self.nets.disc_forward(self.params, batch.obs, batch.ds_applied / DS_CAP)
        batch.reward_D = data_driven_reward(np.atleast_1d(logits), self.cfg)

    def _policy_minibatch_update(self, batch, mb, c_e, f_budget):
        """One policy + value update; returns (policy_obj, vS, vD, conflicted)."""
        cfg = self.cfg
        algo = cfg.algorithm
        conflicted = None
        if algo == "MOPPO":
            obj_s, g_s = ppo_policy_objective(
                self.nets, self.params, batch.obs[mb], batch.actions[mb], batch.logp_old[mb],
                batch.adv_S[mb], cfg.eps_pi, c_e,
            )
            obj_d, g_d = ppo_policy_objective(
                self.nets, self.params, batch.obs[mb], batch.actions[mb], batch.logp_old[mb],
                batch.adv_D[mb], cfg.eps_pi, c_e,
            )
            conflicted = float(g_s @ g_d) < 0.0
            grad = pcgrad_combine(g_s, g_d)
            obj = 0.5 * (obj_s + obj_d)
        else:
            adv = {"PPO": batch.adv_S, "SGAIL": batch.adv_S, "GAIL": batch.adv_D, "BCGAIL": batch.adv_D}[algo]
            obj, grad = ppo_policy_objective(
                self.nets, self.params, batch.obs[mb], batch.actions[mb], batch.logp_old[mb],
                adv[mb], cfg.eps_pi, c_e,
            )
            if algo == "BCGAIL":
                lam_bc = max(0.0, 1.0 - 2.0 * f_budget)
                if lam_bc > 0.0:
                    buf = self.expert_buffer()
                    idx = self.rng.integers(0, len(buf), size=min(cfg.minibatch, len(buf)))
                    bc_loss, g_bc = bc_objective(self.nets, self.params, buf.observations[idx], buf.actions[idx])
                    grad = grad - lam_bc * g_bc
                    obj = obj - lam_bc * bc_loss
        self.params = self._apply(self.adam_policy, -grad)  # maximize

        v_losses = {}
        heads = {"PPO": ("S",), "SGAIL": ("S",), "GAIL": ("D",), "BCGAIL": ("D",), "MOPPO": ("S", "D")}[algo]
        for head in heads:
            ret = batch.ret_S if head == "S" else batch.ret_D
            v_old = batch.value_S if head == "S" else batch.value_D
            loss, grad_v = value_objective(
                self.nets, self.params, batch.obs[mb], ret[mb], v_old[mb], head, cfg.eps_v
            )
            self.params = self._apply(self.adam_value, grad_v)
            v_losses[head] = loss
        return obj, v_losses.get("S"), v_losses.get("D"), conflicted

    def _curriculum_eval(self):
        """Deterministic imitation probes at the current horizon."""
        from .evaluation import ade

        horizon = self.curriculum.horizon
        eligible = self._eligible(horizon)
        policy = GaussianPolicy(self.nets, self.params, deterministic=True)
        for k in range(self.EVAL_EPISODES_PER_ITERATION):
            sc = eligible[(self._eval_cursor + k) % len(eligible)]
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(0, self.iteration + 1, k))
            r = rollout(policy, sc, "replay", horizon, np.random.default_rng(ss))
            err = ade(
                np.vstack([sc.expert_positions()[:1], r.positions]),
                sc.expert_positions(),
                horizon * 0.1,
            )
            self.curriculum = curriculum_update(self.curriculum, err)
        self._eval_cursor = (self._eval_cursor + self.EVAL_EPISODES_PER_ITERATION) % len(eligible)

    # -- main loops ---------------------------------------------------------
    def run(self) -> TrainResult:
        if self.cfg.algorithm == "BC":
            self._run_bc()
        else:
            self._run_simulation()
        return TrainResult(
            params=self.params, nets=self.nets, log_rows=self.log_rows, curriculum=self.curriculum
        )

    def _log(self, **kw):
        row = {c: kw.get(c) for c in LOG_COLUMNS}
        self.log_rows.append(row)

    def _run_bc(self):
        n_iters = math.ceil(self.budget / self.cfg.rollout_steps) if self.budget > 0 else 0
        updates_per_iter = max(1, self.cfg.rollout_steps // self.cfg.minibatch)
        buf = self.expert_buffer() if n_iters > 0 else None
        for it in range(n_iters):
            losses = []
            for _ in range(updates_per_iter):
                idx = self.rng.integers(0, len(buf), size=min(self.cfg.minibatch, len(buf)))
                loss, grad = bc_objective(self.nets, self.params, buf.observations[idx], buf.actions[idx])
                self.params = self._apply(self.adam_policy, grad)
                losses.append(loss)
            self.steps_done += self.cfg.rollout_steps
            self.iteration += 1
            self._log(
                iter=self.iteration,
                steps=self.steps_done,
                policy_obj=-float(np.mean(losses)),
                entropy_coef=0.0,
                curriculum_tier=self.curriculum.horizon,
                grad_conflict_rate=0.0,
            )

    def _run_simulation(self):
        cfg = self.cfg
        uses_disc = cfg.algorithm in ("GAIL", "BCGAIL", "SGAIL", "MOPPO")
        n_iters = math.ceil(self.budget / cfg.rollout_steps) if self.budget > 0 else 0
        for _ in range(n_iters):
            c_e = entropy_coefficient(cfg, self.steps_done, self.budget)
            f_budget = min(1.0, self.steps_done / self.budget) if self.budget else 1.0
            horizon = self.curriculum.horizon

            rollouts = self._collect(horizon)
            batch = assemble_batch(rollouts, cfg, self.nets, self.params)
            disc_loss = self._train_discriminator(batch) if uses_disc else None
            if uses_disc:
                self._fill_reward_d(batch)
            if cfg.algorithm == "SGAIL":
                batch.reward_S = cfg.sgail_mix * batch.reward_S + (1.0 - cfg.sgail_mix) * batch.reward_D
            compute_advantages(batch, cfg)

            objs, vs_losses, vd_losses, conflicts = [], [], [], []
            n = len(batch)
            for _ in range(cfg.ppo_epochs):
                order = self.rng.permutation(n)
                for lo in range(0, n, cfg.minibatch):
                    mb = order[lo : lo + cfg.minibatch]
                    obj, v_s, v_d, conflicted = self._policy_minibatch_update(batch, mb, c_e, f_budget)
                    objs.append(obj)
                    if v_s is not None:
                        vs_losses.append(v_s)
                    if v_d is not None:
                        vd_losses.append(v_d)
                    if conflicted is not None:
                        conflicts.append(conflicted)

            ep_ret_s = [float(batch.reward_S[sl].sum()) for sl in batch.episode_slices]
            ep_ret_d = [float(batch.reward_D[sl].sum()) for sl in batch.episode_slices]
            self.steps_done += cfg.rollout_steps
            self.iteration += 1
            self._curriculum_eval()
            self._log(
                iter=self.iteration,
                steps=self.steps_done,
                mean_return_S=float(np.mean(ep_ret_s)),
                mean_return_D=float(np.mean(ep_ret_d)) if uses_disc else None,
                disc_loss=disc_loss,
                policy_obj=float(np.mean(objs)),
                value_loss_S=float(np.mean(vs_losses)) if vs_losses else None,
                value_loss_D=float(np.mean(vd_losses)) if vd_losses else None,
                entropy_coef=c_e,
                curriculum_tier=horizon,
                grad_conflict_rate=float(np.mean(conflicts)) if conflicts else 0.0,
            )


def moppo_iteration(trainer: Trainer) -> dict:
    """Run exactly one MOPPO iteration and return its log row."""
    if trainer.cfg.algorithm != "MOPPO":
        raise ConfigError("moppo_iteration requires a MOPPO config")
    before = trainer.iteration
    budget_backup = trainer.budget
    trainer.budget = trainer.steps_done + trainer.cfg.rollout_steps
    try:
        trainer._run_simulation()
    finally:
        trainer.budget = budget_backup
    assert trainer.iteration == before + 1
    return trainer.log_rows[-1]


def train(cfg: TrainConfig, scenarios, budget_steps: int, seed: int, workers: int = 1,
          nets: DriveNets | None = None) -> TrainResult:
    """Train one policy per the configured algorithm and worker variant."""
    trainer = Trainer(cfg, scenarios, budget_steps, seed, workers=workers, nets=nets)
    return trainer.run()


def write_training_log(path, log_rows) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log_rows:
            writer.writerow([_format_log_value(row.get(c)) for c in LOG_COLUMNS])
