"""Spatial supply-demand game: agents with linear-Gaussian dynamics seek
desirable locations while a congestion penalty disperses them.

All agents share one policy (mean-field mode).  The population density is a
smoothed histogram over the arena; the designer's objective compares it to a
target density schedule with a KL divergence per step.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .games import GameConfigError, JointPolicy, MarkovGameSpec, Trajectory, agent_rng
from .incentives import ModifierParams

DENSITY_FLOOR = 1e-8  # target cells floored before KL to avoid division by 0
DENSITY_FEATURE_SCALE = 8.0  # relative density at which the feature saturates


class CrowdConfigError(ValueError):
    """Raised when a crowd-world description is inconsistent."""


@dataclass(frozen=True)
class CrowdWorld:
    """Arena, dynamics and reward coefficients for the location game.

    Dynamics: x' = alpha * x + beta * u + eps, eps ~ N(0, Sigma), clipped to
    the arena box.  Desirability at x falls with squared distance to the
    step's attraction point and with the squared local density; actions are
    charged the quadratic control cost u' K u / 2.
    """

    n_agents: int = 200
    horizon: int = 8
    alpha: float = 0.9
    beta: float = 1.0
    noise_cov: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(2))
    attraction_points: np.ndarray = field(default_factory=lambda: np.array([0.3, 0.3]))
    congestion_weight: float = 1.0
    control_cost: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(2))
    arena: tuple = ((0.0, 0.0), (1.0, 1.0))
    grid_size: int = 32
    bandwidth: float = 1.5  # histogram smoothing, in cells
    policy_grid: int = 8
    init_center: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    init_spread: float = 0.15
    time_conditioned: bool = False  # policy/critic condition on the step index
    discount: float = 0.95
    label: str = "crowd"

    def __post_init__(self):
        cov = np.asarray(self.noise_cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise CrowdConfigError("noise covariance must be symmetric 2x2")
        if np.any(np.linalg.eigvalsh(cov) < -1e-12):
            raise CrowdConfigError("noise covariance must be positive semidefinite")
        K = np.asarray(self.control_cost, dtype=float)
        if K.shape != (2, 2) or np.any(np.linalg.eigvalsh((K + K.T) / 2) < -1e-12):
            raise CrowdConfigError("control cost must be a PSD 2x2 matrix")
        if self.horizon < 1:
            raise CrowdConfigError("horizon must be >= 1")
        if self.congestion_weight < 0:
            raise CrowdConfigError("congestion weight must be >= 0")
        object.__setattr__(self, "noise_cov", cov)
        object.__setattr__(self, "control_cost", K)
        pts = np.asarray(self.attraction_points, dtype=float)
        if pts.ndim == 1:
            pts = np.tile(pts, (self.horizon + 1, 1))
        if pts.shape != (self.horizon + 1, 2):
            raise CrowdConfigError(
                "attraction_points must be one 2-vector or one per step (horizon+1)"
            )
        object.__setattr__(self, "attraction_points", pts)
        object.__setattr__(self, "init_center", np.asarray(self.init_center, dtype=float))
        chol = np.linalg.cholesky(cov + 1e-15 * np.eye(2))
        object.__setattr__(self, "_noise_chol", chol)

    @property
    def arena_lo(self) -> np.ndarray:
        return np.asarray(self.arena[0], dtype=float)

    @property
    def arena_hi(self) -> np.ndarray:
        return np.asarray(self.arena[1], dtype=float)

    def attraction_at(self, t: int) -> np.ndarray:
        return self.attraction_points[min(t, self.horizon)]

    def cell_of(self, positions: np.ndarray, grid: Optional[int] = None) -> np.ndarray:
        """Grid cell index (row-major) of each position."""
        g = grid or self.grid_size
        lo, hi = self.arena_lo, self.arena_hi
        scaled = (np.asarray(positions) - lo) / (hi - lo)
        ij = np.clip((scaled * g).astype(int), 0, g - 1)
        return ij[..., 0] * g + ij[..., 1]


def crowd_step(
    world: CrowdWorld,
    positions: np.ndarray,
    actions: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One transition of all agents, clipped to the arena; deterministic in
    the generator state."""
    positions = np.asarray(positions, dtype=float)
    actions = np.asarray(actions, dtype=float)
    if positions.shape != actions.shape or positions.shape[-1] != 2:
        raise GameConfigError("positions and actions must both be (n_agents, 2)")
    if not np.all(np.isfinite(actions)):
        raise GameConfigError("non-finite action")
    eps = rng.standard_normal(positions.shape) @ world._noise_chol.T
    nxt = world.alpha * positions + world.beta * actions + eps
    return np.clip(nxt, world.arena_lo, world.arena_hi)


# ---------------------------------------------------------------------------
# Density fields
# ---------------------------------------------------------------------------


@dataclass
class DensityField:
    """Smoothed, mass-1 histogram over the arena grid."""

    grid: np.ndarray  # (G, G), row-major over dimension 0
    bandwidth: float

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        total = self.grid.sum()
        if total <= 0:
            raise CrowdConfigError("density field must carry positive mass")
        self.grid = self.grid / total

    @property
    def size(self) -> int:
        return self.grid.shape[0]

    def mass_at_cells(self, cells: np.ndarray) -> np.ndarray:
        return self.grid.reshape(-1)[cells]


def estimate_density(world: CrowdWorld, positions: np.ndarray) -> DensityField:
    """Histogram of agent positions with Gaussian smoothing; mass renormalised
    to 1 after smoothing."""
    g = world.grid_size
    cells = world.cell_of(positions)
    hist = np.bincount(cells, minlength=g * g).astype(float).reshape(g, g)
    smooth = gaussian_filter(hist, sigma=world.bandwidth, mode="constant")
    return DensityField(grid=smooth, bandwidth=world.bandwidth)


def relative_density(world: CrowdWorld, density: DensityField, positions: np.ndarray) -> np.ndarray:
    """Probability-density value at each agent's cell (uniform occupancy = 1)."""
    cells = world.cell_of(positions, density.size)
    return density.mass_at_cells(cells) * density.size**2


def gaussian_target(
    world: CrowdWorld, center, sigma: float, grid: Optional[int] = None
) -> DensityField:
    """Isotropic Gaussian blob rendered on the arena grid."""
    g = grid or world.grid_size
    lo, hi = world.arena_lo, world.arena_hi
    xs = lo[0] + (np.arange(g) + 0.5) / g * (hi[0] - lo[0])
    ys = lo[1] + (np.arange(g) + 0.5) / g * (hi[1] - lo[1])
    cx, cy = np.asarray(center, dtype=float)
    d2 = (xs[:, None] - cx) ** 2 + (ys[None, :] - cy) ** 2
    return DensityField(grid=np.exp(-0.5 * d2 / sigma**2), bandwidth=world.bandwidth)


@dataclass
class TargetSchedule:
    """One target density per evaluated step."""

    targets: list

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, t: int) -> DensityField:
        return self.targets[min(t, len(self.targets) - 1)]


def kl_divergence(p: DensityField, q: DensityField) -> float:
    """KL(p || q) in nats over matching grids, with the target floored at
    DENSITY_FLOOR and renormalised; 0 * log(0/q) taken as 0."""
    if p.grid.shape != q.grid.shape:
        raise GameConfigError(
            f"density grids differ: {p.grid.shape} vs {q.grid.shape}"
        )
    qf = np.maximum(q.grid, DENSITY_FLOOR)
    qf = qf / qf.sum()
    mask = p.grid > 0
    return float(np.sum(p.grid[mask] * np.log(p.grid[mask] / qf[mask])))


def designer_reward_crowd(densities: Sequence[DensityField], targets: TargetSchedule) -> float:
    """Negated sum of per-step KL divergences (the designer maximises)."""
    if len(densities) != len(targets):
        raise GameConfigError(
            f"{len(densities)} densities vs {len(targets)} targets"
        )
    return -sum(kl_divergence(d, targets[t]) for t, d in enumerate(densities))


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------


def desirability(world: CrowdWorld, x: np.ndarray, m, t: int = 0):
    """Negative squared distance to the step's attraction point minus the
    squared-density congestion penalty; 0 at the point with empty ground."""
    x = np.asarray(x, dtype=float)
    target = world.attraction_at(t)
    dist2 = np.sum((x - target) ** 2, axis=-1)
    return -dist2 - world.congestion_weight * np.square(m)


def intrinsic_reward(world: CrowdWorld, x, u, m, t: int = 0):
    """Desirability at the agent's location minus the quadratic control cost."""
    u = np.asarray(u, dtype=float)
    cost = 0.5 * np.einsum("...i,ij,...j->...", u, world.control_cost, u)
    return desirability(world, x, m, t) - cost


def modifier_feature_matrix(
    world: CrowdWorld,
    positions: np.ndarray,
    density: DensityField,
    target: Optional[DensityField],
) -> np.ndarray:
    """Per-agent features (target mass at cell, saturating local density),
    both normalised to [0, 1]."""
    cells = world.cell_of(positions)
    if target is not None:
        tmass = target.mass_at_cells(cells) / target.grid.max()
    else:
        tmass = np.zeros(len(positions))
    rel = relative_density(world, density, positions)
    dens = np.minimum(rel / DENSITY_FEATURE_SCALE, 1.0)
    return np.stack([tmass, dens], axis=-1)


CROWD_FEATURES = ("target_mass", "local_density")


def crowd_modifier_template(order: int = 2, bound: float = 10.0) -> ModifierParams:
    bounds = np.tile([-bound, bound], (len(CROWD_FEATURES) * (order + 1), 1))
    return ModifierParams.zeros(CROWD_FEATURES, order, bounds)


# ---------------------------------------------------------------------------
# Episode simulation (vectorised across agents)
# ---------------------------------------------------------------------------


def initial_positions(world: CrowdWorld, rng: np.random.Generator) -> np.ndarray:
    pos = world.init_center + world.init_spread * rng.standard_normal((world.n_agents, 2))
    return np.clip(pos, world.arena_lo, world.arena_hi)


@dataclass
class CrowdEpisode:
    """Full per-step record of one simulated episode."""

    positions: np.ndarray  # (T+1, N, 2)
    actions: np.ndarray  # (T, N, 2)
    rewards: np.ndarray  # (T, N)
    densities: list  # T+1 DensityFields
    obs: np.ndarray  # (T, N) observation indices at decision time


def observation_index(world: CrowdWorld, positions: np.ndarray, t: int) -> np.ndarray:
    cell = world.cell_of(positions, world.policy_grid)
    if world.time_conditioned:
        return t * world.policy_grid**2 + cell
    return cell


def n_crowd_observations(world: CrowdWorld) -> int:
    base = world.policy_grid**2
    return base * world.horizon if world.time_conditioned else base


def simulate_episode(
    world: CrowdWorld,
    policy,
    modifier: Optional[ModifierParams],
    targets: Optional[TargetSchedule],
    seed: int,
    episode: int = 0,
) -> CrowdEpisode:
    """Roll one episode under the shared policy.

    Rewards are priced on arrival: the reward for the action taken at step t
    combines the desirability and modifier at the post-step positions with the
    control cost of the action.
    """
    rng = agent_rng(seed, 0, episode)
    pos = initial_positions(world, rng)
    density = estimate_density(world, pos)
    positions = [pos]
    densities = [density]
    actions, rewards, obs_list = [], [], []
    for t in range(world.horizon):
        obs = observation_index(world, pos, t)
        mu = policy.mean[obs]
        u = mu + policy.std() * rng.standard_normal(mu.shape)
        nxt = crowd_step(world, pos, u, rng)
        density = estimate_density(world, nxt)
        m = relative_density(world, density, nxt)
        r = intrinsic_reward(world, nxt, u, m, t + 1)
        if modifier is not None:
            target = targets[t + 1] if targets is not None else None
            phi = modifier_feature_matrix(world, nxt, density, target)
            r = r + modifier.evaluate(phi)
        positions.append(nxt)
        densities.append(density)
        actions.append(u)
        rewards.append(r)
        obs_list.append(obs)
        pos = nxt
    return CrowdEpisode(
        positions=np.array(positions),
        actions=np.array(actions),
        rewards=np.array(rewards),
        densities=densities,
        obs=np.array(obs_list),
    )


def episode_kl_trace(world: CrowdWorld, episode: CrowdEpisode, targets: TargetSchedule, eval_steps):
    """Per-step KL between the realised densities and the targets."""
    return [kl_divergence(episode.densities[t], targets[i]) for i, t in enumerate(eval_steps)]


# ---------------------------------------------------------------------------
# Markov game wrapper
# ---------------------------------------------------------------------------


def crowd_game(
    world: CrowdWorld,
    targets: Optional[TargetSchedule] = None,
) -> MarkovGameSpec:
    """Wrap the crowd world as a Markov game with a shared-policy sampler.

    State: (t, positions array).  The modifier features are per-agent, so the
    potential-preserving common-modifier construction does not apply here;
    configs must not request MPG-strict mode for this game.
    """

    def initial_state(rng):
        return (0, initial_positions(world, rng))

    def transition(state, action, rng):
        t, pos = state
        u = np.asarray(action, dtype=float).reshape(pos.shape)
        return (t + 1, crowd_step(world, pos, u, rng))

    def arrival_reward(state, action, next_state):
        t_next, pos_next = next_state
        u = np.asarray(action, dtype=float).reshape(pos_next.shape)
        density = estimate_density(world, pos_next)
        m = relative_density(world, density, pos_next)
        return intrinsic_reward(world, pos_next, u, m, t_next)

    def modifier_features(state, action):
        t, pos = state
        density = estimate_density(world, pos)
        target = targets[t] if targets is not None else None
        return modifier_feature_matrix(world, pos, density, target)

    def sampler(policy, modifier, horizon, seed, episode):
        ep = simulate_episode(world, policy.policy_for(0), modifier, targets, seed, episode)
        steps = []
        for t in range(world.horizon):
            state = (t, ep.positions[t])
            nxt = (t + 1, ep.positions[t + 1])
            steps.append((state, tuple(ep.actions[t]), ep.rewards[t], nxt))
        return Trajectory(steps=steps, seed=seed)

    return MarkovGameSpec(
        n_agents=world.n_agents,
        n_states=0,
        n_actions=tuple([2] * world.n_agents),  # action dimension, not a count
        horizon=world.horizon,
        discounts=np.full(world.n_agents, world.discount),
        initial_state=initial_state,
        transition=transition,
        intrinsic_reward=lambda s, a: arrival_reward(s, a, s),
        arrival_reward=arrival_reward,
        modifier_features=modifier_features,
        features_common=False,
        features_on_arrival=True,
        n_observations=n_crowd_observations(world),
        observe=lambda state, agent: int(
            observation_index(world, state[1][agent : agent + 1], state[0])[0]
        ),
        episode_sampler=sampler,
        label=world.label,
    )


def make_world(overrides: Optional[dict] = None) -> CrowdWorld:
    return replace(CrowdWorld(), **(overrides or {}))
