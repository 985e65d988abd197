"""Selfish routing over a directed network with convex congestion latencies.

Agents each steer one unit of infinitely-divisible commodity from a source to
a sink, splitting at every node over outgoing edges.  Congestion on an edge
is priced on the flow aggregated over the episode (a commute window), which
makes the game a splittable congestion game with the classical static
equilibria; per-step flows are still traced for the designer's imbalance
objective and for flow-dependent tolls.

Policy evaluation is exact: commodity propagates fractionally, so values and
flows are deterministic functions of the joint policy.  Training samples
atomic parcels (one sampled route per agent per episode), which approximates
the same game to O(1/n_agents).
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .games import (
    GameConfigError,
    JointPolicy,
    MarkovGameSpec,
    TabularPolicy,
    Trajectory,
    UnsupportedFixtureError,
    agent_rng,
)
from .incentives import ModifierParams

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

NETWORK_SCHEMA = "network/v1"


class NetworkValidationError(ValueError):
    """Raised when a network description violates the schema contracts."""


@dataclass(frozen=True)
class Edge:
    """Directed edge with latency a + b * flow**p (convex, nondecreasing)."""

    src: int
    dst: int
    a: float = 0.0
    b: float = 0.0
    p: float = 1.0

    def latency(self, flow):
        return self.a + self.b * np.power(flow, self.p)


@dataclass(frozen=True)
class RoutingNetwork:
    """Network description plus the designer's monitored and tollable edges.

    Nodes are 0-based internally; config files label them 1..n_nodes.
    """

    n_nodes: int
    edges: tuple
    source: int
    sink: int
    monitored_edges: tuple  # edge indices watched by the flow objective
    n_agents: int
    commodity_per_agent: float
    toll_edges: tuple = ()  # candidate edges for flow-dependent tolls
    horizon: Optional[int] = None
    label: str = "network"

    def __post_init__(self):
        if self.commodity_per_agent <= 0:
            raise NetworkValidationError("commodity_per_agent must be positive")
        if not self.monitored_edges:
            raise NetworkValidationError("monitored edge set must be nonempty")
        for k, e in enumerate(self.edges):
            if e.a < 0:
                raise NetworkValidationError(f"edge {k}: a must be >= 0, got {e.a}")
            if e.b < 0:
                raise NetworkValidationError(f"edge {k}: b must be >= 0, got {e.b}")
            if e.p < 1:
                raise NetworkValidationError(f"edge {k}: p must be >= 1, got {e.p}")
            if not (0 <= e.src < self.n_nodes and 0 <= e.dst < self.n_nodes):
                raise NetworkValidationError(f"edge {k}: endpoints outside node range")
        if not self._sink_reachable():
            raise NetworkValidationError("sink is not reachable from the source")
        for v in self._reachable():
            if v != self.sink and not self.out_edges(v):
                raise NetworkValidationError(f"node {v + 1} is a dead end")
        if self.toll_edges == ():
            object.__setattr__(self, "toll_edges", tuple(range(len(self.edges))))
        object.__setattr__(self, "monitored_edges", tuple(self.monitored_edges))
        if self.horizon is None:
            object.__setattr__(self, "horizon", self._hop_bound())

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def total_commodity(self) -> float:
        return self.n_agents * self.commodity_per_agent

    def out_edges(self, node: int) -> list[int]:
        return [k for k, e in enumerate(self.edges) if e.src == node]

    def _reachable(self) -> set[int]:
        seen, stack = {self.source}, [self.source]
        while stack:
            v = stack.pop()
            for k in self.out_edges(v):
                d = self.edges[k].dst
                if d not in seen:
                    seen.add(d)
                    stack.append(d)
        return seen

    def _sink_reachable(self) -> bool:
        return self.sink in self._reachable()

    def _hop_bound(self) -> int:
        # longest simple path bound; exact for acyclic networks
        return self.n_nodes

    def max_out_degree(self) -> int:
        return max(len(self.out_edges(v)) for v in range(self.n_nodes))


@dataclass
class FlowState:
    """Per-edge flow observed at one time step."""

    per_edge_flow: np.ndarray
    time: int


# ---------------------------------------------------------------------------
# One-hop stepping (instantaneous pricing) and the designer objective
# ---------------------------------------------------------------------------


def step(net: RoutingNetwork, masses: np.ndarray, joint_splits) -> tuple:
    """Advance every agent's commodity one hop.

    ``masses[i, v]`` is agent i's commodity at node v; ``joint_splits[i][v]``
    is a distribution over the outgoing edges of v (ignored at the sink and at
    nodes without mass).  Returns (next masses, FlowState, per-agent costs)
    with costs priced at this step's flows.
    """
    masses = np.asarray(masses, dtype=float)
    n_agents = masses.shape[0]
    edge_mass = np.zeros((n_agents, net.n_edges))
    nxt = np.zeros_like(masses)
    nxt[:, net.sink] = masses[:, net.sink]
    for v in range(net.n_nodes):
        if v == net.sink:
            continue
        out = net.out_edges(v)
        for i in range(n_agents):
            m = masses[i, v]
            if m == 0.0:
                continue
            split = np.asarray(joint_splits[i][v], dtype=float)
            if split.shape != (len(out),):
                raise GameConfigError(
                    f"agent {i}: split at node {v + 1} must cover its {len(out)} outgoing edges"
                )
            if np.any(split < -1e-12) or abs(split.sum() - 1.0) > 1e-9:
                raise GameConfigError(f"agent {i}: split at node {v + 1} is not a distribution")
            for j, k in enumerate(out):
                edge_mass[i, k] += m * split[j]
                nxt[i, net.edges[k].dst] += m * split[j]
    flows = edge_mass.sum(axis=0)
    latencies = np.array([e.latency(f) for e, f in zip(net.edges, flows)])
    costs = edge_mass @ latencies
    return nxt, FlowState(per_edge_flow=flows, time=0), costs


def designer_reward_flow(flows: Sequence, monitored: Sequence[int]) -> float:
    """Negative root-sum-square imbalance of monitored flows, summed over
    steps; 0 exactly when monitored flows are equal at every step."""
    monitored = list(monitored)
    if not monitored:
        raise NetworkValidationError("monitored edge set must be nonempty")
    total = 0.0
    for fs in flows:
        f = np.asarray(fs.per_edge_flow if isinstance(fs, FlowState) else fs, dtype=float)
        fm = f[monitored]
        fstar = fm.mean()
        total -= float(np.sqrt(np.sum((fstar - fm) ** 2)))
    return total


# ---------------------------------------------------------------------------
# Exact fractional propagation
# ---------------------------------------------------------------------------


def _split_matrix(net: RoutingNetwork, policy: JointPolicy) -> np.ndarray:
    """split[i, k] = probability agent i sends mass at src(k) along edge k."""
    split = np.zeros((net.n_agents, net.n_edges))
    for i in range(net.n_agents):
        probs = policy.policy_for(i).probs()  # (n_nodes, max_deg)
        for v in range(net.n_nodes):
            for j, k in enumerate(net.out_edges(v)):
                split[i, k] = probs[v, j]
    return split


def expected_flows(net: RoutingNetwork, policy: JointPolicy):
    """Deterministic fractional propagation of all commodity.

    Returns (per-step flows (T, E), per-step per-agent edge mass (T, N, E)).
    """
    split = _split_matrix(net, policy)
    src = np.array([e.src for e in net.edges])
    dst = np.array([e.dst for e in net.edges])
    masses = np.zeros((net.n_agents, net.n_nodes))
    masses[:, net.source] = net.commodity_per_agent
    flows, agent_mass = [], []
    for _t in range(net.horizon):
        movable = masses.copy()
        movable[:, net.sink] = 0.0
        em = movable[:, src] * split  # (N, E)
        flows.append(em.sum(axis=0))
        agent_mass.append(em)
        nxt = np.zeros_like(masses)
        nxt[:, net.sink] = masses[:, net.sink]
        np.add.at(nxt.T, dst, em.T)
        masses = nxt
    return np.array(flows), np.array(agent_mass)


def episode_prices(net: RoutingNetwork, flows: np.ndarray) -> np.ndarray:
    """Per-edge latency at the episode-aggregated flows."""
    totals = flows.sum(axis=0)
    return np.array([e.latency(f) for e, f in zip(net.edges, totals)])


def exact_agent_values(
    net: RoutingNetwork,
    policy: JointPolicy,
    modifier: Optional[ModifierParams] = None,
) -> np.ndarray:
    """Exact per-agent value: negative episode travel cost plus the common
    per-step toll stream (undiscounted over the finite episode)."""
    flows, agent_mass = expected_flows(net, policy)
    prices = episode_prices(net, flows)
    values = -np.einsum("tie,e->i", agent_mass, prices)
    if modifier is not None:
        theta = sum(modifier.evaluate(toll_features(net, f)) for f in flows)
        values = values + theta
    return values


def toll_features(net: RoutingNetwork, per_edge_flow: np.ndarray) -> np.ndarray:
    """Flows on the tollable edges, normalised by total commodity to [0, 1]."""
    f = np.asarray(per_edge_flow, dtype=float)
    return f[list(net.toll_edges)] / net.total_commodity


def toll_feature_names(net: RoutingNetwork) -> tuple:
    return tuple(
        f"flow:{net.edges[k].src + 1}->{net.edges[k].dst + 1}" for k in net.toll_edges
    )


def exact_splittable_potential(
    net: RoutingNetwork,
    policy: JointPolicy,
    modifier: Optional[ModifierParams] = None,
) -> float:
    """Exact potential of the splittable game with affine latencies.

    For latency a + b*f the per-edge potential term is
    a*F + (b/2) * (F^2 + sum_i m_i^2), whose unilateral-deviation differences
    equal the deviating agent's cost change exactly; a common toll stream is
    absorbed additively.  Requires every edge to have p == 1.
    """
    if any(e.p != 1.0 for e in net.edges):
        raise UnsupportedFixtureError(
            f"{net.label}: exact potential needs affine latencies (p == 1)"
        )
    flows, agent_mass = expected_flows(net, policy)
    totals = flows.sum(axis=0)
    per_agent_totals = agent_mass.sum(axis=0)  # (N, E)
    a = np.array([e.a for e in net.edges])
    b = np.array([e.b for e in net.edges])
    phi = -np.sum(a * totals + 0.5 * b * (totals**2 + np.sum(per_agent_totals**2, axis=0)))
    if modifier is not None:
        phi += sum(modifier.evaluate(toll_features(net, f)) for f in flows)
    return float(phi)


def beckmann_potential(net: RoutingNetwork, flows) -> float:
    """Negative sum over edges of the latency integral from 0 to the flow:
    -(a*f + b*f**(p+1)/(p+1)); the nonatomic-limit potential."""
    f = np.asarray(flows.per_edge_flow if isinstance(flows, FlowState) else flows, dtype=float)
    total = 0.0
    for e, fe in zip(net.edges, f):
        total -= e.a * fe + e.b * fe ** (e.p + 1) / (e.p + 1)
    return float(total)


def beckmann_stationarity_gap(
    net: RoutingNetwork, policy: JointPolicy, eps: float = 1e-4
) -> float:
    """Largest per-unit increase of the aggregate-flow potential along a
    feasible split perturbation (mass moved between outgoing edges of one
    node, all agents jointly).  Near zero at a converged equilibrium."""
    flows, _ = expected_flows(net, policy)
    base = beckmann_potential(net, flows.sum(axis=0))
    split = _split_matrix(net, policy)
    worst = -np.inf
    for v in range(net.n_nodes):
        out = net.out_edges(v)
        if len(out) < 2 or v == net.sink:
            continue
        for k_from in out:
            if np.all(split[:, k_from] < 1e-6):
                continue
            for k_to in out:
                if k_to == k_from:
                    continue
                shifted = _shift_split(policy, net, v, k_from, k_to, eps)
                f2, _ = expected_flows(net, shifted)
                gain = (beckmann_potential(net, f2.sum(axis=0)) - base) / eps
                worst = max(worst, gain)
    return float(worst) if np.isfinite(worst) else 0.0


def _shift_split(net, policy, node, k_from, k_to, eps) -> JointPolicy:
    out = net.out_edges(node)
    j_from, j_to = out.index(k_from), out.index(k_to)
    shifted = policy.copy()
    for pol in shifted.agents:
        probs = pol.probs()
        move = min(eps, probs[node, j_from])
        row = probs[node].copy()
        row[j_from] -= move
        row[j_to] += move
        with np.errstate(divide="ignore"):
            pol.logits[node] = np.where(row > 0, np.log(row), -1e3)
    return shifted


# ---------------------------------------------------------------------------
# Markov game wrapper (sampled atomic parcels for training)
# ---------------------------------------------------------------------------


def routing_game(net: RoutingNetwork) -> MarkovGameSpec:
    """Wrap a network as a Markov game.

    State: per-agent parcel positions (tuple of node indices).  Action: an
    outgoing-edge slot for the agent's current node.  Episode rewards are
    priced on episode-aggregate flows, so the sampler builds whole episodes.
    """
    n_nodes, max_deg = net.n_nodes, net.max_out_degree()
    mask = np.zeros((n_nodes, max_deg), dtype=bool)
    slot_edge = np.zeros((n_nodes, max_deg), dtype=int)
    for v in range(n_nodes):
        out = net.out_edges(v)
        mask[v, : len(out)] = True
        slot_edge[v, : len(out)] = out
    mask[net.sink, 0] = True  # sink: single no-op slot

    def initial_state(_rng):
        return tuple([net.source] * net.n_agents)

    def transition(state, action, _rng):
        nxt = []
        for pos, slot in zip(state, action):
            if pos == net.sink:
                nxt.append(pos)
            else:
                nxt.append(net.edges[slot_edge[pos, slot]].dst)
        return tuple(nxt)

    def step_flows(state, action) -> np.ndarray:
        f = np.zeros(net.n_edges)
        for pos, slot in zip(state, action):
            if pos != net.sink:
                f[slot_edge[pos, slot]] += net.commodity_per_agent
        return f

    def intrinsic_reward(state, action):
        # instantaneous pricing; the episode sampler reprices on aggregates
        f = step_flows(state, action)
        prices = np.array([e.latency(x) for e, x in zip(net.edges, f)])
        out = np.zeros(net.n_agents)
        for i, (pos, slot) in enumerate(zip(state, action)):
            if pos != net.sink:
                out[i] = -net.commodity_per_agent * prices[slot_edge[pos, slot]]
        return out

    def modifier_features(state, action):
        return toll_features(net, step_flows(state, action))

    def episode_sampler(policy, modifier, horizon, seed, episode) -> Trajectory:
        rngs = [agent_rng(seed, i, episode) for i in range(net.n_agents)]
        state = initial_state(None)
        states, actions = [], []
        for _t in range(horizon):
            act = []
            for i, pos in enumerate(state):
                if pos == net.sink:
                    act.append(0)
                else:
                    act.append(policy.policy_for(i).sample(pos, rngs[i]))
            act = tuple(act)
            states.append(state)
            actions.append(act)
            state = transition(state, act, None)
        states.append(state)
        # aggregate pricing over the episode
        flow_t = np.array([step_flows(s, a) for s, a in zip(states, actions)])
        prices = np.array([e.latency(f) for e, f in zip(net.edges, flow_t.sum(axis=0))])
        steps = []
        for t, (s, a) in enumerate(zip(states, actions)):
            r = np.zeros(net.n_agents)
            for i, (pos, slot) in enumerate(zip(s, a)):
                if pos != net.sink:
                    r[i] = -net.commodity_per_agent * prices[slot_edge[pos, slot]]
            if modifier is not None:
                r = r + modifier.evaluate(toll_features(net, flow_t[t]))
            steps.append((s, a, r, states[t + 1]))
        return Trajectory(steps=steps, seed=seed)

    def exact_values(policy, modifier):
        return exact_agent_values(net, policy, modifier)

    def exact_potential(policy, modifier):
        return exact_splittable_potential(net, policy, modifier)

    spec = MarkovGameSpec(
        n_agents=net.n_agents,
        n_states=0,
        n_actions=tuple([max_deg] * net.n_agents),
        horizon=net.horizon,
        discounts=np.ones(net.n_agents),
        initial_state=initial_state,
        transition=transition,
        intrinsic_reward=intrinsic_reward,
        modifier_features=modifier_features,
        features_common=True,
        feature_names=toll_feature_names(net),
        n_observations=n_nodes,
        observe=lambda state, agent: int(state[agent]),
        action_mask=mask,
        episode_sampler=episode_sampler,
        label=net.label,
    )
    object.__setattr__(spec, "exact_values", exact_values)
    if all(e.p == 1.0 for e in net.edges):
        object.__setattr__(spec, "exact_potential", exact_potential)
    object.__setattr__(spec, "network", net)
    return spec


def uniform_routing_policy(net: RoutingNetwork) -> JointPolicy:
    max_deg = net.max_out_degree()
    mask = np.zeros((net.n_nodes, max_deg), dtype=bool)
    for v in range(net.n_nodes):
        out = net.out_edges(v)
        mask[v, : max(len(out), 1)] = True
    mask[net.sink, :] = False
    mask[net.sink, 0] = True
    return JointPolicy(
        [TabularPolicy.uniform(net.n_nodes, max_deg, mask.copy()) for _ in range(net.n_agents)]
    )


def route_policy(net: RoutingNetwork, edge_by_node: dict) -> TabularPolicy:
    """Pure single-agent policy following ``edge_by_node[node] = edge index``."""
    max_deg = net.max_out_degree()
    mask = np.zeros((net.n_nodes, max_deg), dtype=bool)
    actions = np.zeros(net.n_nodes, dtype=int)
    for v in range(net.n_nodes):
        out = net.out_edges(v)
        mask[v, : max(len(out), 1)] = True
        if v in edge_by_node:
            actions[v] = out.index(edge_by_node[v])
    mask[net.sink, :] = False
    mask[net.sink, 0] = True
    return TabularPolicy.pure(net.n_nodes, max_deg, actions, mask)


def pure_route_policies(net: RoutingNetwork) -> list[TabularPolicy]:
    """All deterministic node-to-edge maps over nodes that can reach the sink."""
    choice_nodes = [v for v in sorted(net._reachable()) if v != net.sink and len(net.out_edges(v)) >= 1]
    combos = [{}]
    for v in choice_nodes:
        combos = [dict(c, **{v: k}) for c in combos for k in net.out_edges(v)]
    return [route_policy(net, c) for c in combos]


# ---------------------------------------------------------------------------
# Shipped fixtures
# ---------------------------------------------------------------------------


def braess_network(n_agents: int = 20, commodity: float = None) -> RoutingNetwork:
    """Four-node diamond with a free shortcut between the branch midpoints.

    Node labels (1-based): source 1, sink 4, shortcut 3->2.  Load-proportional
    side links 1->3 and 2->4, constant cross links 1->2 and 3->4, free
    shortcut.  Selfish play concentrates all commodity on the route
    1->3->2->4; balanced branch flows need a shortcut toll.
    """
    commodity = 1.0 / n_agents if commodity is None else commodity
    edges = (
        Edge(src=0, dst=1, a=1.0, b=0.0, p=1.0),  # 1->2 constant
        Edge(src=0, dst=2, a=0.0, b=1.0, p=1.0),  # 1->3 load-proportional
        Edge(src=2, dst=1, a=0.0, b=0.0, p=1.0),  # 3->2 shortcut
        Edge(src=1, dst=3, a=0.0, b=1.0, p=1.0),  # 2->4 load-proportional
        Edge(src=2, dst=3, a=1.0, b=0.0, p=1.0),  # 3->4 constant
    )
    return RoutingNetwork(
        n_nodes=4,
        edges=edges,
        source=0,
        sink=3,
        monitored_edges=(0, 1),  # the two first-hop branches
        n_agents=n_agents,
        commodity_per_agent=commodity,
        toll_edges=(2,),  # the shortcut
        horizon=3,
        label="braess",
    )


BRAESS_SHORTCUT_EDGE = 2


def parallel_links_network(
    latencies: Sequence[tuple], n_agents: int = 4, commodity: float = None, label: str = "parallel"
) -> RoutingNetwork:
    """Two-node network with parallel source->sink links; latencies is a list
    of (a, b, p) coefficient triples."""
    commodity = 1.0 / n_agents if commodity is None else commodity
    edges = tuple(Edge(src=0, dst=1, a=a, b=b, p=p) for a, b, p in latencies)
    return RoutingNetwork(
        n_nodes=2,
        edges=edges,
        source=0,
        sink=1,
        monitored_edges=tuple(range(len(edges))),
        n_agents=n_agents,
        commodity_per_agent=commodity,
        horizon=1,
        label=label,
    )


def pigou_network(n_agents: int = 4) -> RoutingNetwork:
    """Constant link vs load-proportional link; selfish play overloads the
    variable link, the social optimum splits evenly."""
    return parallel_links_network(
        [(1.0, 0.0, 1.0), (0.0, 1.0, 1.0)], n_agents=n_agents, label="pigou"
    )


# ---------------------------------------------------------------------------
# Network config files
# ---------------------------------------------------------------------------

_NETWORK_KEYS = {
    "schema",
    "label",
    "n_nodes",
    "source",
    "sink",
    "n_agents",
    "commodity_per_agent",
    "monitored_edges",
    "toll_edges",
    "horizon",
    "edges",
}


def load_network(path) -> RoutingNetwork:
    """Load a network from a TOML config (schema network/v1, 1-based labels).

    Required keys: schema, n_nodes, source, sink, n_agents,
    commodity_per_agent, monitored_edges, edges (list of tables with keys
    src, dst, a, b, p).  Optional: toll_edges, horizon, label.  Unknown keys
    and invalid coefficients are hard errors naming the offending field.
    """
    with open(path, "rb") as fh:
        data = _toml.load(fh)
    return network_from_dict(data, default_label=str(path))


def network_from_dict(data: dict, default_label: str = "network") -> RoutingNetwork:
    unknown = set(data) - _NETWORK_KEYS
    if unknown:
        raise NetworkValidationError(f"unknown keys in network config: {sorted(unknown)}")
    if data.get("schema") != NETWORK_SCHEMA:
        raise NetworkValidationError(
            f"expected schema {NETWORK_SCHEMA!r}, got {data.get('schema')!r}"
        )
    edges = []
    for k, row in enumerate(data["edges"]):
        extra = set(row) - {"src", "dst", "a", "b", "p"}
        if extra:
            raise NetworkValidationError(f"edge {k}: unknown keys {sorted(extra)}")
        edges.append(
            Edge(
                src=int(row["src"]) - 1,
                dst=int(row["dst"]) - 1,
                a=float(row.get("a", 0.0)),
                b=float(row.get("b", 0.0)),
                p=float(row.get("p", 1.0)),
            )
        )
    return RoutingNetwork(
        n_nodes=int(data["n_nodes"]),
        edges=tuple(edges),
        source=int(data["source"]) - 1,
        sink=int(data["sink"]) - 1,
        monitored_edges=tuple(int(k) for k in data["monitored_edges"]),
        n_agents=int(data["n_agents"]),
        commodity_per_agent=float(data["commodity_per_agent"]),
        toll_edges=tuple(int(k) for k in data.get("toll_edges", ())),
        horizon=int(data["horizon"]) if "horizon" in data else None,
        label=str(data.get("label", default_label)),
    )


def save_network(net: RoutingNetwork, path) -> None:
    """Emit the TOML config for a network; load_network round-trips it."""
    lines = [
        f'schema = "{NETWORK_SCHEMA}"',
        f'label = "{net.label}"',
        f"n_nodes = {net.n_nodes}",
        f"source = {net.source + 1}",
        f"sink = {net.sink + 1}",
        f"n_agents = {net.n_agents}",
        f"commodity_per_agent = {net.commodity_per_agent!r}",
        f"monitored_edges = [{', '.join(str(k) for k in net.monitored_edges)}]",
        f"toll_edges = [{', '.join(str(k) for k in net.toll_edges)}]",
        f"horizon = {net.horizon}",
    ]
    for e in net.edges:
        lines.append("")
        lines.append("[[edges]]")
        lines.append(f"src = {e.src + 1}")
        lines.append(f"dst = {e.dst + 1}")
        lines.append(f"a = {e.a!r}")
        lines.append(f"b = {e.b!r}")
        lines.append(f"p = {e.p!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def toll_template(net: RoutingNetwork, order: int = 5, bound: float = 10.0) -> ModifierParams:
    """Zero-initialised per-edge power series over normalised tolled flows."""
    names = toll_feature_names(net)
    bounds = np.tile([-bound, bound], (len(names) * (order + 1), 1))
    return ModifierParams.zeros(names, order, bounds)


def flow_trace(net: RoutingNetwork, policy: JointPolicy):
    """Per-step FlowStates of the exact fractional propagation."""
    flows, _ = expected_flows(net, policy)
    return [FlowState(per_edge_flow=f, time=t) for t, f in enumerate(flows)]
