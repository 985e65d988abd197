"""Inner loop: independent advantage actor-critic learners trained to an
approximate equilibrium of the (reward-modified) game.

Finite games use per-agent tabular softmax policies and tabular critics;
the crowd game uses one shared cell-conditioned Gaussian policy and critic
(mean-field mode).  Each agent's update touches only its own reward stream
and observations.  Convergence is declared when action distributions stop
moving across a window of policy snapshots.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import crowd as crowd_mod
from .games import (
    GameConfigError,
    GaussianGridPolicy,
    JointPolicy,
    MarkovGameSpec,
    TabularPolicy,
    ValueEstimate,
)
from .incentives import ModifierParams


class TrainingError(RuntimeError):
    """Training diverged (non-finite parameters); carries the iteration."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class TrainerConfig:
    max_iterations: int = 1500
    batch_episodes: int = 16
    actor_learning_rate: float = 0.05
    critic_learning_rate: float = 0.1
    convergence_tol: float = 0.01
    convergence_window: int = 5
    seed: int = 0
    entropy_coef: float = 0.05  # annealed linearly to 0
    snapshot_every: int = 10
    check_convergence: bool = True
    track_potential: bool = False

    def __post_init__(self):
        if self.actor_learning_rate <= 0 or self.critic_learning_rate <= 0:
            raise GameConfigError("learning rates must be positive")
        if self.convergence_window < 2:
            raise GameConfigError("convergence window must be >= 2")


@dataclass
class CriticTable:
    """Per-agent state-value estimates over observation indices."""

    values: np.ndarray  # (n_agents_or_1, n_obs)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


@dataclass
class Diagnostics:
    mean_returns: np.ndarray  # (iterations, n_agents)
    welfare: np.ndarray  # (iterations,)
    policy_change: np.ndarray  # (iterations,)
    converged: bool
    converged_iteration: Optional[int]
    iterations: int
    potential: Optional[np.ndarray] = None  # exact potential per iteration

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            n_agents = self.mean_returns.shape[1]
            header = ["iteration"] + [f"return_{i}" for i in range(n_agents)]
            header += ["welfare", "policy_change"]
            if self.potential is not None:
                header.append("potential")
            writer.writerow(header)
            for it in range(self.iterations):
                row = [it] + [repr(float(r)) for r in self.mean_returns[it]]
                row += [repr(float(self.welfare[it])), repr(float(self.policy_change[it]))]
                if self.potential is not None:
                    row.append(repr(float(self.potential[it])))
                writer.writerow(row)


def has_converged(policy_history, tol: float, window: int) -> bool:
    """True iff the max pairwise sup-distance between the action
    distributions of the last ``window`` snapshots is at most ``tol``."""
    if len(policy_history) < window:
        raise GameConfigError(
            f"history of {len(policy_history)} snapshots is shorter than window {window}"
        )
    recent = policy_history[-window:]
    for i in range(len(recent)):
        for j in range(i + 1, len(recent)):
            if np.max(np.abs(recent[i] - recent[j])) > tol:
                return False
    return True


def social_welfare(values: ValueEstimate) -> float:
    """Sum of per-agent values."""
    return float(np.sum(values.per_agent_values))


# ---------------------------------------------------------------------------
# Finite games: per-agent tabular actor-critic
# ---------------------------------------------------------------------------


def _initial_tabular_joint(game: MarkovGameSpec) -> JointPolicy:
    n_obs = game.obs_count
    agents = []
    for i in range(game.n_agents):
        mask = None if game.action_mask is None else game.action_mask.copy()
        agents.append(TabularPolicy.uniform(n_obs, game.n_actions[i], mask))
    return JointPolicy(agents)


def _batch_episodes_generic(game, policy, modifier, horizon, seed, iteration, batch, transform):
    """Sampled experience as per-agent streams of (obs, act, rew, next_obs, last)."""
    from .games import rollout

    episodes = []
    for b in range(batch):
        traj = rollout(game, policy, modifier, horizon, seed, episode=iteration * batch + b)
        if transform is not None:
            traj = transform(traj)
        obs = np.array(
            [[game.obs_of(s, i) for i in range(game.n_agents)] for (s, _a, _r, _n) in traj.steps]
        )
        next_obs = np.array(
            [[game.obs_of(n, i) for i in range(game.n_agents)] for (_s, _a, _r, n) in traj.steps]
        )
        acts = np.array([a for (_s, a, _r, _n) in traj.steps])
        rews = traj.rewards_matrix()
        episodes.append((obs, acts, rews, next_obs))
    return episodes


def _entropy_grad(probs: np.ndarray) -> np.ndarray:
    safe = np.where(probs > 0, probs, 1.0)
    logp = np.log(safe)
    ent = -np.sum(np.where(probs > 0, probs * logp, 0.0), axis=-1, keepdims=True)
    return np.where(probs > 0, -probs * (logp + ent), 0.0)


def train(
    game: MarkovGameSpec,
    cfg: TrainerConfig,
    modifier: Optional[ModifierParams] = None,
    reward_transform=None,
    mean_field: bool = False,
) -> tuple[JointPolicy, Diagnostics]:
    """Train independent learners on the (already reward-modified) game.

    Dispatches on the game's action model: finite-action games get tabular
    softmax learners; the crowd game gets the shared Gaussian learner.
    Returns the final joint policy and per-iteration diagnostics.
    """
    if getattr(game, "crowd_world", None) is not None:
        return _train_crowd(game, cfg, modifier)
    return _train_finite(game, cfg, modifier, reward_transform, mean_field)


def _train_finite(game, cfg, modifier, reward_transform, mean_field):
    policy = _initial_tabular_joint(game)
    critics = CriticTable(np.zeros((game.n_agents, game.obs_count)))
    horizon = game.effective_horizon()
    gammas = game.discounts
    routing_net = getattr(game, "network", None)

    snapshots = [policy.distributions()]
    mean_returns, welfare_hist, change_hist, potential_hist = [], [], [], []
    converged, converged_at = False, None

    for it in range(cfg.max_iterations):
        beta = cfg.entropy_coef * max(0.0, 1.0 - it / max(cfg.max_iterations - 1, 1))
        if routing_net is not None:
            episodes = _batch_routing(routing_net, policy, modifier, cfg.seed, it, cfg.batch_episodes)
        else:
            episodes = _batch_episodes_generic(
                game, policy, modifier, horizon, cfg.seed, it, cfg.batch_episodes, reward_transform
            )
        returns = np.zeros((len(episodes), game.n_agents))
        # critic and actor updates, one agent at a time on its own stream
        probs_all = [policy.policy_for(i).probs() for i in range(game.n_agents)]
        logit_grads = [np.zeros_like(policy.policy_for(i).logits) for i in range(game.n_agents)]
        value_grads = np.zeros_like(critics.values)
        visit_counts = np.zeros_like(critics.values)
        for e_i, (obs, acts, rews, next_obs) in enumerate(episodes):
            T = rews.shape[0]
            disc = gammas[None, :] ** np.arange(T)[:, None]
            returns[e_i] = np.sum(disc * rews, axis=0)
            for i in range(game.n_agents):
                v = critics.values[i]
                o, a, r, no = obs[:, i], acts[:, i], rews[:, i], next_obs[:, i]
                nonterm = np.ones(T)
                nonterm[-1] = 0.0  # episodes end at the horizon
                td_target = r + gammas[i] * nonterm * v[no]
                adv = td_target - v[o]
                np.add.at(value_grads[i], o, adv)
                np.add.at(visit_counts[i], o, 1.0)
                p = probs_all[i][o]  # (T, A)
                g = -p.copy()
                g[np.arange(T), a] += 1.0
                np.add.at(logit_grads[i], o, adv[:, None] * g)
        with np.errstate(invalid="ignore"):
            critic_step = np.where(visit_counts > 0, value_grads / np.maximum(visit_counts, 1.0), 0.0)
        critics.values += cfg.critic_learning_rate * critic_step
        n_eps = len(episodes)
        if mean_field:
            pooled = sum(logit_grads) / game.n_agents
            for i in range(game.n_agents):
                logit_grads[i] = pooled
        for i in range(game.n_agents):
            pol = policy.policy_for(i)
            grad = logit_grads[i] / n_eps + beta * _entropy_grad(probs_all[i])
            if pol.mask is not None:
                grad = np.where(pol.mask, grad, 0.0)
            pol.logits += cfg.actor_learning_rate * grad
            np.clip(pol.logits, -50.0, 50.0, out=pol.logits)
            if not np.all(np.isfinite(pol.logits)):
                raise TrainingError(f"agent {i} policy diverged", it)
        if not np.all(np.isfinite(critics.values)):
            raise TrainingError("critic diverged", it)

        mean_returns.append(returns.mean(axis=0))
        welfare_hist.append(float(returns.mean(axis=0).sum()))
        if cfg.track_potential and game.exact_potential is not None:
            potential_hist.append(game.exact_potential(policy, modifier))
        if (it + 1) % cfg.snapshot_every == 0:
            snapshots.append(policy.distributions())
            change_hist.append(float(np.max(np.abs(snapshots[-1] - snapshots[-2]))))
            if (
                cfg.check_convergence
                and len(snapshots) >= cfg.convergence_window
                and has_converged(snapshots, cfg.convergence_tol, cfg.convergence_window)
            ):
                converged, converged_at = True, it + 1
                break
        else:
            change_hist.append(change_hist[-1] if change_hist else 0.0)

    diags = Diagnostics(
        mean_returns=np.array(mean_returns),
        welfare=np.array(welfare_hist),
        policy_change=np.array(change_hist),
        converged=converged,
        converged_iteration=converged_at,
        iterations=len(mean_returns),
        potential=np.array(potential_hist) if potential_hist else None,
    )
    return policy, diags


# ---------------------------------------------------------------------------
# Routing: batched atomic-parcel sampling
# ---------------------------------------------------------------------------


def _batch_routing(net, policy, modifier, seed, iteration, batch):
    """Vectorised sampled episodes; same experience-tuple layout as the
    generic sampler.  One iteration-keyed stream drives the whole batch."""
    from .incentives import ModifierParams as _MP  # noqa: F401 (doc anchor)
    from .routing import toll_features

    n, T, E = net.n_agents, net.horizon, net.n_edges
    max_deg = net.max_out_degree()
    probs = np.stack([policy.policy_for(i).probs() for i in range(n)])  # (n, V, A)
    slot_edge = np.zeros((net.n_nodes, max_deg), dtype=int)
    out_count = np.zeros(net.n_nodes, dtype=int)
    for v in range(net.n_nodes):
        out = net.out_edges(v)
        out_count[v] = len(out)
        slot_edge[v, : len(out)] = out
    rng = np.random.default_rng([seed, 0xA5, iteration])
    uniforms = rng.random((T, batch, n))

    pos = np.full((batch, n), net.source, dtype=int)
    obs_t = np.zeros((T, batch, n), dtype=int)
    act_t = np.zeros((T, batch, n), dtype=int)
    nxt_t = np.zeros((T, batch, n), dtype=int)
    edge_t = np.full((T, batch, n), -1, dtype=int)
    flows = np.zeros((T, batch, E))
    agent_idx = np.tile(np.arange(n), (batch, 1))
    for t in range(T):
        obs_t[t] = pos
        p = probs[agent_idx, pos]  # (batch, n, A)
        cdf = np.cumsum(p, axis=-1)
        slot = np.sum(uniforms[t][..., None] > cdf, axis=-1)
        slot = np.minimum(slot, max_deg - 1)
        at_sink = pos == net.sink
        slot[at_sink] = 0
        act_t[t] = slot
        eid = slot_edge[pos, slot]
        eid[at_sink] = -1
        edge_t[t] = eid
        moving = ~at_sink
        np.add.at(
            flows[t], (np.where(moving)[0], eid[moving]), net.commodity_per_agent
        )
        dst = np.array([e.dst for e in net.edges])
        pos = np.where(moving, dst[np.clip(eid, 0, E - 1)], pos)
        nxt_t[t] = pos
    totals = flows.sum(axis=0)  # (batch, E)
    a = np.array([e.a for e in net.edges])
    b = np.array([e.b for e in net.edges])
    pw = np.array([e.p for e in net.edges])
    prices = a[None, :] + b[None, :] * np.power(totals, pw[None, :])  # (batch, E)
    rew_t = np.zeros((T, batch, n))
    for t in range(T):
        moving = edge_t[t] >= 0
        bidx = np.tile(np.arange(batch)[:, None], (1, n))
        rew_t[t][moving] = -net.commodity_per_agent * prices[
            bidx[moving], edge_t[t][moving]
        ]
        if modifier is not None:
            theta = np.array(
                [modifier.evaluate(toll_features(net, flows[t, bb])) for bb in range(batch)]
            )
            rew_t[t] += theta[:, None]
    episodes = []
    for bb in range(batch):
        episodes.append((obs_t[:, bb], act_t[:, bb], rew_t[:, bb], nxt_t[:, bb]))
    return episodes


# ---------------------------------------------------------------------------
# Crowd: shared Gaussian policy, shared tabular critic
# ---------------------------------------------------------------------------

LOG_STD_RANGE = (-4.0, -0.5)


def _train_crowd(game, cfg, modifier):
    world = game.crowd_world
    targets = game.crowd_targets
    n_obs = crowd_mod.n_crowd_observations(world)
    pol = GaussianGridPolicy(mean=np.zeros((n_obs, 2)), log_std=np.log(0.2) * np.ones(2))
    critic = np.zeros(n_obs)
    gamma = world.discount

    snapshots = [_gaussian_snapshot(pol)]
    mean_returns, welfare_hist, change_hist = [], [], []
    converged, converged_at = False, None

    for it in range(cfg.max_iterations):
        beta = cfg.entropy_coef * max(0.0, 1.0 - it / max(cfg.max_iterations - 1, 1))
        mean_grad = np.zeros_like(pol.mean)
        cnt = np.zeros(n_obs)
        logstd_grad = np.zeros(2)
        value_grad = np.zeros(n_obs)
        batch_returns = np.zeros((cfg.batch_episodes, world.n_agents))
        std2 = pol.std() ** 2
        for bb in range(cfg.batch_episodes):
            ep = crowd_mod.simulate_episode(
                world,
                pol,
                modifier,
                targets,
                cfg.seed,
                episode=it * cfg.batch_episodes + bb,
            )
            T = world.horizon
            disc = gamma ** np.arange(T)
            batch_returns[bb] = disc @ ep.rewards
            next_obs = np.stack(
                [
                    crowd_mod.observation_index(world, ep.positions[t + 1], min(t + 1, T - 1))
                    for t in range(T)
                ]
            )
            nonterm = np.ones(T)
            nonterm[-1] = 0.0
            td_target = ep.rewards + gamma * nonterm[:, None] * critic[next_obs]
            adv = td_target - critic[ep.obs]
            np.add.at(value_grad, ep.obs.ravel(), adv.ravel())
            np.add.at(cnt, ep.obs.ravel(), 1.0)
            score = (ep.actions - pol.mean[ep.obs]) / std2  # (T, N, 2)
            np.add.at(mean_grad, ep.obs.ravel(), (adv[..., None] * score).reshape(-1, 2))
            z2 = ((ep.actions - pol.mean[ep.obs]) ** 2) / std2 - 1.0
            logstd_grad += np.sum(adv[..., None] * z2, axis=(0, 1))
        samples = max(cnt.sum(), 1.0)
        critic += cfg.critic_learning_rate * np.where(cnt > 0, value_grad / np.maximum(cnt, 1.0), 0.0)
        pol.mean += cfg.actor_learning_rate * np.where(
            cnt[:, None] > 0, mean_grad / np.maximum(cnt[:, None], 1.0), 0.0
        )
        pol.log_std += cfg.actor_learning_rate * (logstd_grad / samples + beta)
        np.clip(pol.log_std, LOG_STD_RANGE[0], LOG_STD_RANGE[1], out=pol.log_std)
        if not (np.all(np.isfinite(pol.mean)) and np.all(np.isfinite(critic))):
            raise TrainingError("crowd learner diverged", it)

        mean_returns.append(batch_returns.mean(axis=0))
        welfare_hist.append(float(batch_returns.mean(axis=0).sum()))
        if (it + 1) % cfg.snapshot_every == 0:
            snapshots.append(_gaussian_snapshot(pol))
            change_hist.append(float(np.max(np.abs(snapshots[-1] - snapshots[-2]))))
            if (
                cfg.check_convergence
                and len(snapshots) >= cfg.convergence_window
                and has_converged(snapshots, cfg.convergence_tol, cfg.convergence_window)
            ):
                converged, converged_at = True, it + 1
                break
        else:
            change_hist.append(change_hist[-1] if change_hist else 0.0)

    joint = JointPolicy([pol], shared=True, n_agents=world.n_agents)
    diags = Diagnostics(
        mean_returns=np.array(mean_returns),
        welfare=np.array(welfare_hist),
        policy_change=np.array(change_hist),
        converged=converged,
        converged_iteration=converged_at,
        iterations=len(mean_returns),
    )
    return joint, diags


def _gaussian_snapshot(pol: GaussianGridPolicy) -> np.ndarray:
    return np.concatenate([pol.mean.ravel(), pol.log_std.ravel()])
