"""Markov game core: game specs, tabular policies, rollouts, value estimation,
and exact verification oracles for potential-game and equilibrium properties.

Games are functional: a spec bundles callables for transitions, intrinsic
rewards and (optionally) modifier features, exact policy evaluation and an
exact potential.  Small table-driven fixtures get the exact hooks for free;
large environments (routing, crowd) plug in their own samplers and oracles.
"""
from __future__ import annotations

import csv
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .incentives import ModifierParams

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

TRUNCATION_EPS = 1e-6  # discounted-tail mass dropped when truncating T = inf
ENV_STREAM = 0x7FFFFFFF  # stream tag separating env noise from agent streams


class GameConfigError(ValueError):
    """Raised when a game spec or policy is internally inconsistent."""


class UnsupportedFixtureError(ValueError):
    """Raised when an exact oracle is requested from a game that lacks one."""


def agent_rng(seed: int, agent: int, episode: int) -> np.random.Generator:
    """Independent per-agent stream keyed on (seed, agent, episode)."""
    return np.random.default_rng([seed, agent, episode])


def env_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, ENV_STREAM, episode])


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class TabularPolicy:
    """Softmax-over-logits policy for one agent over finite observations.

    ``mask[o, a]`` False marks actions unavailable at observation o (their
    logits are pinned to -inf and probabilities to 0).
    """

    logits: np.ndarray  # (n_obs, n_actions)
    mask: Optional[np.ndarray] = None  # (n_obs, n_actions) bool

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.logits.shape:
                raise GameConfigError("mask shape must match logits shape")

    @property
    def n_obs(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def probs(self) -> np.ndarray:
        """Action distribution per observation; rows sum to 1."""
        logits = self.logits
        if self.mask is not None:
            logits = np.where(self.mask, logits, -np.inf)
        return softmax(logits, axis=1)

    def sample(self, obs: int, rng: np.random.Generator) -> int:
        p = self.probs()[obs]
        return int(rng.choice(len(p), p=p))

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.logits.copy(), None if self.mask is None else self.mask.copy())

    @classmethod
    def uniform(cls, n_obs: int, n_actions: int, mask=None) -> "TabularPolicy":
        return cls(np.zeros((n_obs, n_actions)), mask)

    @classmethod
    def pure(cls, n_obs: int, n_actions: int, action_by_obs, mask=None) -> "TabularPolicy":
        """Near-deterministic policy playing ``action_by_obs[o]`` at each o."""
        logits = np.full((n_obs, n_actions), -1e3)
        for o in range(n_obs):
            logits[o, int(np.asarray(action_by_obs)[o] if np.ndim(action_by_obs) else action_by_obs)] = 1e3
        return cls(logits, mask)


@dataclass
class GaussianGridPolicy:
    """Location-scale policy for continuous actions, mean conditioned on a
    discretised observation cell (and optionally the time step)."""

    mean: np.ndarray  # (n_obs, act_dim)
    log_std: np.ndarray  # (act_dim,)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.log_std = np.asarray(self.log_std, dtype=float)
        if not np.all(np.isfinite(self.log_std)):
            raise GameConfigError("log_std must be finite")

    @property
    def n_obs(self) -> int:
        return self.mean.shape[0]

    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def sample(self, obs, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean[obs]
        return mu + self.std() * rng.standard_normal(mu.shape)

    def copy(self) -> "GaussianGridPolicy":
        return GaussianGridPolicy(self.mean.copy(), self.log_std.copy())


@dataclass
class JointPolicy:
    """Per-agent policies; with ``shared=True`` a single policy is used by all
    agents (mean-field mode) and ``agents`` holds exactly one entry."""

    agents: list
    shared: bool = False
    n_agents: Optional[int] = None  # required when shared

    def __post_init__(self):
        if self.shared:
            if len(self.agents) != 1:
                raise GameConfigError("shared policy must hold exactly one table")
            if self.n_agents is None:
                raise GameConfigError("shared policy requires n_agents")
        else:
            self.n_agents = len(self.agents)

    def policy_for(self, agent: int):
        return self.agents[0] if self.shared else self.agents[agent]

    def copy(self) -> "JointPolicy":
        return JointPolicy([p.copy() for p in self.agents], self.shared, self.n_agents)

    def replace_agent(self, agent: int, policy) -> "JointPolicy":
        """Unilateral deviation: agent's policy swapped, others untouched."""
        if self.shared:
            # deviating from a shared profile materialises per-agent copies
            agents = [self.agents[0].copy() for _ in range(self.n_agents)]
        else:
            agents = [p.copy() for p in self.agents]
        agents[agent] = policy
        return JointPolicy(agents, shared=False)

    def distributions(self) -> np.ndarray:
        """Stacked action distributions, used for convergence detection."""
        return np.stack([p.probs() for p in self.agents])


# ---------------------------------------------------------------------------
# Game spec and trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkovGameSpec:
    """A Markov game defined by callables.

    transition(state, joint_action, rng) -> next state; must be a pure
    function of its arguments and the rng stream.  intrinsic_reward(state,
    joint_action) -> (n_agents,) finite array.  modifier_features(state,
    joint_action) -> (n_features,) array shared by all agents, or
    (n_agents, n_features) for per-agent modifiers.
    """

    n_agents: int
    n_states: int  # 0 marks a non-enumerated (continuous) state space
    n_actions: tuple
    horizon: Optional[int]  # None = unbounded, truncated via discounts
    discounts: np.ndarray  # (n_agents,)
    initial_state: Callable[[np.random.Generator], object]
    transition: Callable
    intrinsic_reward: Callable
    modifier_features: Optional[Callable] = None
    features_common: bool = True
    features_on_arrival: bool = False  # price the modifier on the post-step state
    arrival_reward: Optional[Callable] = None  # (state, action, next_state) -> (N,)
    feature_names: tuple = ()
    n_observations: Optional[int] = None  # defaults to n_states
    observe: Optional[Callable] = None  # (state, agent) -> obs index
    action_mask: Optional[np.ndarray] = None  # (n_obs, n_actions) bool
    exact_values: Optional[Callable] = None  # (JointPolicy, modifier) -> (N,)
    exact_potential: Optional[Callable] = None  # (JointPolicy, modifier) -> float
    episode_sampler: Optional[Callable] = None  # custom rollout
    label: str = "game"

    def __post_init__(self):
        gammas = np.asarray(self.discounts, dtype=float)
        if gammas.shape != (self.n_agents,):
            raise GameConfigError(f"discounts must have shape ({self.n_agents},)")
        if self.horizon is None and np.any(gammas >= 1.0):
            raise GameConfigError("unbounded horizon requires all discounts < 1")
        if np.any(gammas < 0.0) or np.any(gammas > 1.0):
            raise GameConfigError("discounts must lie in [0, 1]")
        object.__setattr__(self, "discounts", gammas)

    @property
    def obs_count(self) -> int:
        return self.n_observations if self.n_observations is not None else self.n_states

    def obs_of(self, state, agent: int) -> int:
        return self.observe(state, agent) if self.observe is not None else int(state)

    def effective_horizon(self) -> int:
        """Episode length; unbounded games truncate where the discounted tail
        falls below TRUNCATION_EPS."""
        if self.horizon is not None:
            return int(self.horizon)
        gmax = float(np.max(self.discounts))
        return int(np.ceil(np.log(TRUNCATION_EPS) / np.log(gmax)))

    def step_rewards(self, state, joint_action, modifier: Optional[ModifierParams]) -> np.ndarray:
        """Intrinsic rewards plus the additive modifier (if any)."""
        r = np.asarray(self.intrinsic_reward(state, joint_action), dtype=float)
        if r.shape != (self.n_agents,):
            raise GameConfigError("intrinsic_reward must return one value per agent")
        if modifier is not None:
            if self.modifier_features is None:
                raise GameConfigError(f"{self.label} declares no modifier features")
            theta = modifier.evaluate(self.modifier_features(state, joint_action))
            r = r + theta  # scalar broadcast (common) or per-agent vector
        return r


@dataclass
class Trajectory:
    """One episode: ordered (state, joint_action, modified rewards, next_state)."""

    steps: list  # of (state, joint_action, np.ndarray rewards, next_state)
    seed: int

    def __len__(self) -> int:
        return len(self.steps)

    def rewards_matrix(self) -> np.ndarray:
        return np.stack([s[2] for s in self.steps])  # (T, n_agents)

    def to_csv(self, path) -> None:
        """Flat per-step export: t, state, actions..., rewards... ."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            n_agents = len(self.steps[0][2])
            header = ["t", "state"]
            header += [f"action_{i}" for i in range(n_agents)]
            header += [f"reward_{i}" for i in range(n_agents)]
            writer.writerow(header)
            for t, (state, action, rewards, _next) in enumerate(self.steps):
                acts = list(np.ravel(np.asarray(action, dtype=object)))
                writer.writerow([t, _fmt_state(state)] + [_fmt(a) for a in acts] + [repr(float(r)) for r in rewards])


def _fmt(x):
    if isinstance(x, np.ndarray):
        return "|".join(repr(float(v)) for v in x.ravel())
    return repr(float(x)) if isinstance(x, (float, np.floating)) else x


def _fmt_state(state):
    if isinstance(state, (int, np.integer)):
        return int(state)
    return "|".join(repr(float(v)) for v in np.ravel(state))


@dataclass
class ValueEstimate:
    """Monte-Carlo per-agent value estimates with standard errors."""

    per_agent_values: np.ndarray
    std_errors: np.ndarray
    n_episodes: int


# ---------------------------------------------------------------------------
# Rollouts and value estimation
# ---------------------------------------------------------------------------


def rollout(
    game: MarkovGameSpec,
    policy: JointPolicy,
    modifier: Optional[ModifierParams],
    horizon: Optional[int] = None,
    seed: int = 0,
    episode: int = 0,
) -> Trajectory:
    """Sample one episode; deterministic in (seed, episode).

    Rewards in the returned trajectory include the additive modifier when one
    is supplied.  Games with a custom episode sampler (e.g. flow propagation)
    delegate to it.
    """
    _check_policy_dims(game, policy)
    horizon = horizon if horizon is not None else game.effective_horizon()
    if horizon < 1:
        raise GameConfigError("horizon must be >= 1")
    if game.episode_sampler is not None:
        return game.episode_sampler(policy, modifier, horizon, seed, episode)
    rng_env = env_rng(seed, episode)
    rngs = [agent_rng(seed, i, episode) for i in range(game.n_agents)]
    state = game.initial_state(rng_env)
    steps = []
    for _t in range(horizon):
        action = tuple(
            policy.policy_for(i).sample(game.obs_of(state, i), rngs[i]) for i in range(game.n_agents)
        )
        nxt = game.transition(state, action, rng_env)
        if game.arrival_reward is not None:
            rewards = np.asarray(game.arrival_reward(state, action, nxt), dtype=float)
            if modifier is not None:
                rewards = rewards + modifier.evaluate(game.modifier_features(nxt, action))
        else:
            rewards = game.step_rewards(state, action, modifier)
        steps.append((state, action, rewards, nxt))
        state = nxt
    return Trajectory(steps=steps, seed=seed)


def estimate_values(
    game: MarkovGameSpec,
    policy: JointPolicy,
    modifier: Optional[ModifierParams],
    n_episodes: int,
    seed: int = 0,
) -> ValueEstimate:
    """Monte-Carlo estimate of each agent's discounted return from the start
    state, with standard errors across episodes."""
    if n_episodes < 1:
        raise GameConfigError("n_episodes must be >= 1")
    horizon = game.effective_horizon()
    gammas = game.discounts
    disc = gammas[None, :] ** np.arange(horizon)[:, None]  # (T, N)
    returns = np.empty((n_episodes, game.n_agents))
    for ep in range(n_episodes):
        traj = rollout(game, policy, modifier, horizon, seed, episode=ep)
        rew = traj.rewards_matrix()
        returns[ep] = np.sum(disc[: rew.shape[0]] * rew, axis=0)
    mean = returns.mean(axis=0)
    stderr = returns.std(axis=0, ddof=1) / np.sqrt(n_episodes) if n_episodes > 1 else np.zeros(game.n_agents)
    return ValueEstimate(per_agent_values=mean, std_errors=stderr, n_episodes=n_episodes)


def _check_policy_dims(game: MarkovGameSpec, policy: JointPolicy) -> None:
    if policy.n_agents != game.n_agents:
        raise GameConfigError(
            f"policy covers {policy.n_agents} agents, game has {game.n_agents}"
        )
    probe = policy.policy_for(0)
    if isinstance(probe, TabularPolicy) and game.obs_count and probe.n_obs != game.obs_count:
        raise GameConfigError(
            f"policy table has {probe.n_obs} observations, game exposes {game.obs_count}"
        )


def policy_values(
    game: MarkovGameSpec,
    policy: JointPolicy,
    modifier: Optional[ModifierParams],
    n_episodes: int = 256,
    seed: int = 0,
) -> np.ndarray:
    """Exact per-agent values when the game carries an exact evaluator,
    Monte-Carlo otherwise."""
    if game.exact_values is not None:
        return np.asarray(game.exact_values(policy, modifier), dtype=float)
    return estimate_values(game, policy, modifier, n_episodes, seed).per_agent_values


# ---------------------------------------------------------------------------
# Modifier plumbing on trajectories and game specs
# ---------------------------------------------------------------------------


def modified_reward(game: MarkovGameSpec, w: ModifierParams) -> MarkovGameSpec:
    """Game identical to the input except every agent's reward carries the
    additive modifier; the intrinsic reward of the original is untouched."""
    if game.modifier_features is None:
        raise GameConfigError(f"{game.label} declares no modifier features")

    def reward(state, action):
        return game.step_rewards(state, action, w)

    def arrival(state, action, next_state):
        r = np.asarray(game.arrival_reward(state, action, next_state), dtype=float)
        return r + w.evaluate(game.modifier_features(next_state, action))

    def sampler(policy, extra, horizon, seed, episode):
        if extra is not None:
            raise GameConfigError("game already carries a baked-in modifier")
        return game.episode_sampler(policy, w, horizon, seed, episode)

    def exact_values(policy, extra):
        if extra is not None:
            raise GameConfigError("game already carries a baked-in modifier")
        return game.exact_values(policy, w)

    def exact_potential(policy, extra):
        if extra is not None:
            raise GameConfigError("game already carries a baked-in modifier")
        return game.exact_potential(policy, w)

    spec = MarkovGameSpec(
        n_agents=game.n_agents,
        n_states=game.n_states,
        n_actions=game.n_actions,
        horizon=game.horizon,
        discounts=game.discounts,
        initial_state=game.initial_state,
        transition=game.transition,
        intrinsic_reward=reward,
        modifier_features=game.modifier_features,
        features_common=game.features_common,
        features_on_arrival=game.features_on_arrival,
        arrival_reward=arrival if game.arrival_reward is not None else None,
        feature_names=game.feature_names,
        n_observations=game.n_observations,
        observe=game.observe,
        action_mask=game.action_mask,
        episode_sampler=sampler if game.episode_sampler is not None else None,
        label=f"{game.label}+modifier",
    )
    if game.exact_values is not None:
        object.__setattr__(spec, "exact_values", exact_values)
    if game.exact_potential is not None:
        object.__setattr__(spec, "exact_potential", exact_potential)
    return spec


def cumulative_incentive(traj: "Trajectory", game: MarkovGameSpec, w: ModifierParams):
    """Re-evaluate the modifier along a stored trajectory: per-step payments
    summed over agents, and the episode total."""
    from .incentives import IncentiveLedger

    payments = []
    for state, action, _rewards, next_state in traj.steps:
        if game.features_on_arrival:
            theta = w.evaluate(game.modifier_features(next_state, action))
        else:
            theta = w.evaluate(game.modifier_features(state, action))
        theta = np.asarray(theta, dtype=float)
        total = float(theta) * game.n_agents if theta.ndim == 0 else float(theta.sum())
        payments.append(total)
    return IncentiveLedger.from_payments(payments)


# ---------------------------------------------------------------------------
# Equilibrium and potential oracles
# ---------------------------------------------------------------------------


def best_response_gap(
    game: MarkovGameSpec,
    policy: JointPolicy,
    modifier: Optional[ModifierParams],
    agent: int,
    deviation_policies: Sequence,
    n_episodes: int = 256,
    seed: int = 0,
) -> float:
    """Largest value gain the agent can obtain from the supplied unilateral
    deviations; <= eps certifies an eps-equilibrium against that set."""
    if not deviation_policies:
        raise GameConfigError("deviation_policies must be nonempty")
    base = policy_values(game, policy, modifier, n_episodes, seed)[agent]
    best = -np.inf
    for dev in deviation_policies:
        joint = policy.replace_agent(agent, dev.copy() if hasattr(dev, "copy") else dev)
        val = policy_values(game, joint, modifier, n_episodes, seed)[agent]
        best = max(best, val - base)
    return float(best)


def verify_potential(
    game: MarkovGameSpec,
    policy_pairs: Sequence,
    modifier: Optional[ModifierParams] = None,
) -> float:
    """Max |(v_i(pi) - v_i(pi')) - (Phi(pi) - Phi(pi'))| over unilateral
    deviation pairs, computed from the game's exact evaluators.

    ``policy_pairs`` holds (pi, pi') pairs where pi' differs from pi in one
    agent's policy (or (pi, pi', agent) triples naming the deviating agent).
    """
    if game.exact_values is None or game.exact_potential is None:
        raise UnsupportedFixtureError(
            f"{game.label} carries no exact potential evaluator"
        )
    worst = 0.0
    for item in policy_pairs:
        if len(item) == 3:
            pi, pi_prime, agent = item
        else:
            pi, pi_prime = item
            agent = _deviating_agent(pi, pi_prime)
        v = game.exact_values(pi, modifier)[agent]
        v_prime = game.exact_values(pi_prime, modifier)[agent]
        phi = game.exact_potential(pi, modifier)
        phi_prime = game.exact_potential(pi_prime, modifier)
        worst = max(worst, abs((v - v_prime) - (phi - phi_prime)))
    return float(worst)


def _deviating_agent(pi: JointPolicy, pi_prime: JointPolicy) -> int:
    """Index of the single agent whose action distributions differ."""
    changed = [
        i
        for i in range(pi.n_agents)
        if not np.allclose(
            pi.policy_for(i).probs(), pi_prime.policy_for(i).probs(), atol=1e-12
        )
    ]
    if len(changed) != 1:
        raise GameConfigError(
            f"policy pair must differ in exactly one agent, differs in {changed}"
        )
    return changed[0]


def pareto_dominates(
    game: MarkovGameSpec,
    pi: JointPolicy,
    pi_prime: JointPolicy,
    modifier: Optional[ModifierParams] = None,
) -> bool:
    """True iff pi is at least as good for every agent as pi_prime and
    strictly better for at least one, on exact values."""
    if game.exact_values is None:
        raise UnsupportedFixtureError(f"{game.label} has no exact value evaluator")
    v = game.exact_values(pi, modifier)
    v_prime = game.exact_values(pi_prime, modifier)
    return bool(np.all(v >= v_prime - 1e-12) and np.any(v > v_prime + 1e-12))


def is_payoff_dominant(
    game: MarkovGameSpec,
    pi: JointPolicy,
    ne_set: Sequence[JointPolicy],
    modifier: Optional[ModifierParams] = None,
    candidate_profiles: Optional[Sequence[JointPolicy]] = None,
) -> bool:
    """True iff pi is in the enumerated equilibrium set and no enumerated
    profile Pareto-dominates it."""
    if game.exact_values is None:
        raise UnsupportedFixtureError(f"{game.label} has no exact value evaluator")
    v_pi = game.exact_values(pi, modifier)
    in_set = any(
        np.allclose(game.exact_values(ne, modifier), v_pi, atol=1e-12)
        and _same_distributions(ne, pi)
        for ne in ne_set
    )
    if not in_set:
        return False
    pool = candidate_profiles if candidate_profiles is not None else ne_set
    return not any(pareto_dominates(game, other, pi, modifier) for other in pool)


def _same_distributions(a: JointPolicy, b: JointPolicy) -> bool:
    try:
        return np.allclose(a.distributions(), b.distributions(), atol=1e-9)
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Table-driven fixtures (exact evaluation via enumeration / linear solve)
# ---------------------------------------------------------------------------


def _joint_actions(n_actions) -> list:
    grids = np.meshgrid(*[np.arange(k) for k in n_actions], indexing="ij")
    return [tuple(int(g.flat[i]) for g in grids) for i in range(grids[0].size)]


def _profile_prob(policy: JointPolicy, obs: int, action: tuple) -> float:
    p = 1.0
    for i, a in enumerate(action):
        p *= policy.policy_for(i).probs()[obs, a]
    return p


@dataclass(frozen=True)
class TableGame:
    """Dense tables for tiny fixtures: rewards[(i, s) + joint_action] and
    deterministic or stochastic transitions."""

    rewards: np.ndarray  # (N, S, A_0, ..., A_{N-1})
    transitions: Optional[np.ndarray]  # (S, A...) int  or (S, A..., S) probs
    discounts: np.ndarray
    horizon: Optional[int]
    initial: int = 0


def table_game_spec(
    table: TableGame,
    feature_fn: Optional[Callable] = None,
    feature_names: tuple = (),
    potential_table: Optional[np.ndarray] = None,
    label: str = "table-game",
) -> MarkovGameSpec:
    """Wrap dense tables into a game spec with exact evaluation hooks.

    ``potential_table`` has the reward-table layout minus the agent axis; when
    given, the exact potential is its expected discounted sum (plus the
    modifier stream, which is common to all agents on table fixtures).
    """
    rewards = np.asarray(table.rewards, dtype=float)
    n_agents = rewards.shape[0]
    n_states = rewards.shape[1]
    n_actions = tuple(rewards.shape[2:])

    def initial_state(_rng):
        return table.initial

    def transition(state, action, rng):
        if table.transitions is None:
            return state
        cell = table.transitions[(int(state),) + tuple(action)]
        if np.ndim(cell) == 0:
            return int(cell)
        return int(rng.choice(n_states, p=np.asarray(cell, dtype=float)))

    def intrinsic_reward(state, action):
        return rewards[(slice(None), int(state)) + tuple(action)]

    def features(state, action):
        return feature_fn(state, action)

    spec_kwargs = dict(
        n_agents=n_agents,
        n_states=n_states,
        n_actions=n_actions,
        horizon=table.horizon,
        discounts=np.asarray(table.discounts, dtype=float),
        initial_state=initial_state,
        transition=transition,
        intrinsic_reward=intrinsic_reward,
        modifier_features=features if feature_fn is not None else None,
        features_common=True,
        feature_names=feature_names,
        label=label,
    )

    def exact_values(policy: JointPolicy, modifier: Optional[ModifierParams]) -> np.ndarray:
        return _table_policy_values(table, spec, policy, modifier)

    def exact_potential(policy: JointPolicy, modifier: Optional[ModifierParams]) -> float:
        if potential_table is None:
            raise UnsupportedFixtureError(f"{label} carries no potential table")
        return _table_policy_potential(table, spec, policy, modifier, potential_table)

    spec = MarkovGameSpec(**spec_kwargs)
    object.__setattr__(spec, "exact_values", exact_values)
    if potential_table is not None:
        object.__setattr__(spec, "exact_potential", exact_potential)
    return spec


def _expected_step(table: TableGame, spec: MarkovGameSpec, policy: JointPolicy, modifier):
    """Per-state expected rewards (incl. modifier) and transition matrix."""
    n_states = spec.n_states
    joint = _joint_actions(spec.n_actions)
    r_pi = np.zeros((n_states, spec.n_agents))
    p_pi = np.zeros((n_states, n_states))
    for s in range(n_states):
        for u in joint:
            prob = _profile_prob(policy, s, u)
            if prob == 0.0:
                continue
            r_pi[s] += prob * spec.step_rewards(s, u, modifier)
            if table.transitions is None:
                p_pi[s, s] += prob
            else:
                cell = table.transitions[(s,) + u]
                if np.ndim(cell) == 0:
                    p_pi[s, int(cell)] += prob
                else:
                    p_pi[s] += prob * np.asarray(cell, dtype=float)
    return r_pi, p_pi


def _table_policy_values(table, spec, policy, modifier) -> np.ndarray:
    r_pi, p_pi = _expected_step(table, spec, policy, modifier)
    vals = np.zeros(spec.n_agents)
    for i in range(spec.n_agents):
        g = spec.discounts[i]
        if table.horizon is None:
            v = np.linalg.solve(np.eye(spec.n_states) - g * p_pi, r_pi[:, i])
        else:
            v = np.zeros(spec.n_states)
            for _ in range(table.horizon):
                v = r_pi[:, i] + g * p_pi @ v
        vals[i] = v[table.initial]
    return vals


def _table_policy_potential(table, spec, policy, modifier, potential_table) -> float:
    """Expected discounted potential stream; the common modifier is absorbed
    into the potential (potential of the modified game = potential + modifier
    stream). Requires a common discount."""
    if not np.allclose(spec.discounts, spec.discounts[0]):
        raise UnsupportedFixtureError("potential stream needs a common discount")
    g = float(spec.discounts[0])
    pot = np.asarray(potential_table, dtype=float)
    joint = _joint_actions(spec.n_actions)
    phi_pi = np.zeros(spec.n_states)
    p_pi = np.zeros((spec.n_states, spec.n_states))
    for s in range(spec.n_states):
        for u in joint:
            prob = _profile_prob(policy, s, u)
            if prob == 0.0:
                continue
            val = pot[(s,) + u]
            if modifier is not None:
                val += modifier.evaluate(spec.modifier_features(s, u))
            phi_pi[s] += prob * val
            if table.transitions is None:
                p_pi[s, s] += prob
            else:
                cell = table.transitions[(s,) + u]
                if np.ndim(cell) == 0:
                    p_pi[s, int(cell)] += prob
                else:
                    p_pi[s] += prob * np.asarray(cell, dtype=float)
    if table.horizon is None:
        phi = np.linalg.solve(np.eye(spec.n_states) - g * p_pi, phi_pi)
    else:
        phi = np.zeros(spec.n_states)
        for _ in range(table.horizon):
            phi = phi_pi + g * p_pi @ phi
    return float(phi[table.initial])


# ---------------------------------------------------------------------------
# Matrix-game fixtures
# ---------------------------------------------------------------------------


def matrix_game(
    payoffs: np.ndarray,
    discount: float = 0.9,
    potential: Optional[np.ndarray] = None,
    label: str = "matrix-game",
) -> MarkovGameSpec:
    """Embed a one-shot matrix game as a two-step Markov game.

    State 0 is the decision state where the payoff matrices apply; play then
    moves to an absorbing state with zero reward where modifier features
    vanish, so shaping-mode reward transforms leave equilibria untouched.
    ``payoffs`` has shape (n_agents, A_0, ..., A_{n-1}).
    """
    payoffs = np.asarray(payoffs, dtype=float)
    n_agents = payoffs.shape[0]
    n_actions = payoffs.shape[1:]
    rewards = np.zeros((n_agents, 2) + n_actions)
    rewards[:, 0] = payoffs
    transitions = np.ones((2,) + n_actions, dtype=int)  # everything -> state 1

    def feature_fn(state, action):
        # fraction of agents playing each action index; zero at the terminal
        if int(state) != 0:
            return np.zeros(max(n_actions))
        counts = np.bincount(np.asarray(action), minlength=max(n_actions))
        return counts / n_agents

    pot_table = None
    if potential is not None:
        pot_table = np.zeros((2,) + n_actions)
        pot_table[0] = np.asarray(potential, dtype=float)

    table = TableGame(
        rewards=rewards,
        transitions=transitions,
        discounts=np.full(n_agents, discount),
        horizon=2,
        initial=0,
    )
    return table_game_spec(
        table,
        feature_fn=feature_fn,
        feature_names=tuple(f"action_share_{a}" for a in range(max(n_actions))),
        potential_table=pot_table,
        label=label,
    )


def pure_profiles(game: MarkovGameSpec) -> list[JointPolicy]:
    """All pure strategy profiles of a matrix fixture (decision state only;
    the terminal-state action is pinned to 0)."""
    profiles = []
    for u in _joint_actions(game.n_actions):
        agents = []
        for i, a in enumerate(u):
            acts = np.zeros(game.obs_count, dtype=int)
            acts[0] = a
            agents.append(TabularPolicy.pure(game.obs_count, game.n_actions[i], acts))
        profiles.append(JointPolicy(agents))
    return profiles


def pure_equilibria(
    game: MarkovGameSpec,
    modifier: Optional[ModifierParams] = None,
    tol: float = 1e-9,
) -> list[tuple]:
    """Pure equilibrium action profiles of a matrix fixture, by exhaustive
    best-response sweep over pure profiles."""
    joint = _joint_actions(game.n_actions)
    values = {}
    for u in joint:
        pol = _pure_joint(game, u)
        values[u] = game.exact_values(pol, modifier)
    equilibria = []
    for u in joint:
        is_ne = True
        for i in range(game.n_agents):
            for a in range(game.n_actions[i]):
                if a == u[i]:
                    continue
                dev = u[:i] + (a,) + u[i + 1 :]
                if values[dev][i] > values[u][i] + tol:
                    is_ne = False
                    break
            if not is_ne:
                break
        if is_ne:
            equilibria.append(u)
    return equilibria


def _pure_joint(game: MarkovGameSpec, action_profile: tuple) -> JointPolicy:
    agents = []
    for i, a in enumerate(action_profile):
        acts = np.zeros(game.obs_count, dtype=int)
        acts[0] = a
        agents.append(TabularPolicy.pure(game.obs_count, game.n_actions[i], acts))
    return JointPolicy(agents)


def random_potential_matrix_game(
    rng: np.random.Generator,
    n_actions: tuple = (2, 2),
    discount: float = 0.9,
    scale: float = 1.0,
) -> MarkovGameSpec:
    """Random exact-potential matrix game: payoff_i = Phi + dummy_i(u_{-i}).

    The dummy terms depend only on opponents' actions, so unilateral payoff
    differences equal potential differences exactly.
    """
    phi = scale * rng.standard_normal(n_actions)
    n_agents = len(n_actions)
    payoffs = np.zeros((n_agents,) + n_actions)
    for i in range(n_agents):
        other_shape = n_actions[:i] + (1,) + n_actions[i + 1 :]
        dummy = scale * rng.standard_normal(other_shape)
        payoffs[i] = phi + dummy
    return matrix_game(payoffs, discount=discount, potential=phi, label="random-potential")


def identical_interest_game(
    common_payoff: np.ndarray, discount: float = 0.9, label: str = "identical-interest"
) -> MarkovGameSpec:
    common = np.asarray(common_payoff, dtype=float)
    payoffs = np.stack([common] * common.ndim)
    return matrix_game(payoffs, discount=discount, potential=common, label=label)


def stag_hunt_game(discount: float = 0.9) -> MarkovGameSpec:
    """2x2 coordination fixture with a payoff-dominant and a safer equilibrium.

    Action 0 = hunt together (high payoff if coordinated), action 1 = forage
    alone (safe).  Both diagonal profiles are equilibria.
    """
    payoffs = np.array(
        [
            [[4.0, 0.0], [3.0, 3.0]],
            [[4.0, 3.0], [0.0, 3.0]],
        ]
    )
    # exact potential: unilateral payoff differences match Phi differences
    potential = np.array([[-2.0, -3.0], [-3.0, 0.0]])
    return matrix_game(payoffs, discount=discount, potential=potential, label="stag-hunt")


# ---------------------------------------------------------------------------
# Declarative fixture configs
# ---------------------------------------------------------------------------

GAME_SCHEMA = "game/v1"
_GAME_KEYS = {
    "schema",
    "n_agents",
    "n_states",
    "n_actions",
    "discounts",
    "horizon",
    "initial_state",
    "rewards",
    "transitions",
    "potential",
}


def load_game_config(path) -> MarkovGameSpec:
    """Load a two-agent table fixture from a TOML config.

    Schema (game/v1): n_agents, n_states, n_actions (list), discounts (list),
    horizon (int or 0 for unbounded), initial_state, rewards[agent][state] as
    nested action tables, optional transitions[state] tables of next-state
    indices, optional potential[state] tables.  Unknown keys are hard errors.
    """
    with open(path, "rb") as fh:
        data = _toml.load(fh)
    unknown = set(data) - _GAME_KEYS
    if unknown:
        raise GameConfigError(f"unknown keys in game config: {sorted(unknown)}")
    if data.get("schema") != GAME_SCHEMA:
        raise GameConfigError(f"expected schema {GAME_SCHEMA!r}, got {data.get('schema')!r}")
    rewards = np.asarray(data["rewards"], dtype=float)
    n_agents = int(data["n_agents"])
    if rewards.shape[0] != n_agents or rewards.shape[1] != int(data["n_states"]):
        raise GameConfigError("rewards table shape does not match n_agents/n_states")
    if tuple(rewards.shape[2:]) != tuple(data["n_actions"]):
        raise GameConfigError("rewards table shape does not match n_actions")
    transitions = None
    if "transitions" in data:
        transitions = np.asarray(data["transitions"], dtype=int)
    horizon = int(data["horizon"]) or None
    table = TableGame(
        rewards=rewards,
        transitions=transitions,
        discounts=np.asarray(data["discounts"], dtype=float),
        horizon=horizon,
        initial=int(data.get("initial_state", 0)),
    )
    pot = np.asarray(data["potential"], dtype=float) if "potential" in data else None
    return table_game_spec(table, potential_table=pot, label=str(path))
