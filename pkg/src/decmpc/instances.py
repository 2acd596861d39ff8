"""Benchmark instance generators: the two-agent illustrative system, the
spring-mass-damper chain, supply chains with quantity-flexibility style
forecast communication, and seeded random networks for property testing.

Every generator is a pure function of its parameters and seed. Instances
carry an exact simulation model (which may differ from the prediction model,
as with the Euler/zero-order-hold pair for the mass chain) and a seeded
disturbance sampler whose draws provably lie in the declared sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .model import (
    AgentModel,
    Constraints,
    CostAtom,
    CostSpec,
    CouplingGraph,
    Network,
    PolyhedralSet,
    StageDynamics,
    box_set,
    make_primitive,
    norm_cost,
)

__all__ = [
    "BenchmarkInstance",
    "toy_example",
    "smd_chain",
    "supply_chain",
    "random_network",
    "box_primitives",
]


@dataclass
class StageBoxSampler:
    """Per-agent, per-stage box bounds; draws are uniform (or vertex) points."""

    lo: dict  # agent -> (T, n_xi_max) ragged list of arrays
    hi: dict

    def draw_stage(self, rng: np.random.Generator, i: int, t: int, vertex: bool = False):
        lo, hi = self.lo[i][t - 1], self.hi[i][t - 1]
        if lo.size == 0:
            return np.zeros(0)
        if vertex:
            pick = rng.integers(0, 2, size=lo.size)
            return np.where(pick == 1, hi, lo)
        return rng.uniform(lo, hi)

    def draw_horizon(self, rng: np.random.Generator, i: int, vertex: bool = False) -> np.ndarray:
        T = len(self.lo[i])
        parts = [self.draw_stage(rng, i, t, vertex) for t in range(1, T + 1)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def vertex_pattern(self, i: int, bits: np.ndarray) -> np.ndarray:
        """Deterministic vertex from a 0/1 pattern over the stacked coordinates."""
        lo = np.concatenate(self.lo[i]) if self.lo[i] else np.zeros(0)
        hi = np.concatenate(self.hi[i]) if self.hi[i] else np.zeros(0)
        return np.where(bits[: lo.size] == 1, hi, lo)

    def stacked_dim(self, i: int) -> int:
        return int(sum(a.size for a in self.lo[i]))


@dataclass
class BenchmarkInstance:
    """A network plus everything needed to simulate and score it."""

    name: str
    net: Network
    primitives: dict
    sampler: StageBoxSampler
    seed: int
    sim: object | None = None  # None: simulate with the prediction model
    meta: dict = field(default_factory=dict)

    def sim_step(self, x: dict, u: dict, xi: dict) -> dict:
        if self.sim is not None:
            return self.sim.step(x, u, xi)
        out = {}
        for i in range(self.net.M):
            ag = self.net.agents[i]
            st = ag.stages[0]
            nb = np.concatenate([x[j] for j in self.net.graph.neighbors[i]]) if self.net.graph.neighbors[i] else np.zeros(0)
            out[i] = st.A @ x[i] + st.B @ nb + st.D @ u[i] + st.E @ xi[i]
        return out


def box_primitives(net: Network, kind: str = "box", angle: float = 0.0,
                   axis_ratio: float = 1.5) -> dict:
    """One primitive per forecast agent, matching its trajectory geometry."""
    from .synthesis import forecast_agents

    return {
        j: make_primitive(kind, net.agents[j].n_x, net.horizon, angle=angle,
                          axis_ratio=axis_ratio)
        for j in forecast_agents(net)
    }


# ---------------------------------------------------------------------------
# illustrative two-agent example
# ---------------------------------------------------------------------------

TOY_C = np.array([1.0, -1.0])
TOY_B = np.array([[1.0], [0.8]])
TOY_E = np.array([[1.0, -1.0], [-1.0, 1.0]])
TOY_D = np.array([[1.0, 0.0], [0.0, -2.0]])
TOY_STATE_BOUND = 5.0
TOY_INPUT_BOUND = 2.5


def toy_example() -> BenchmarkInstance:
    """Two coupled agents with planar states, one scalar decision each, and a
    one-shot disturbance, embedded over three stages.

    Stage 1 injects the disturbance, stage 2 carries agent 1's decision,
    stage 3 carries agent 2's decision and the cross coupling D x_1. Inputs
    see exactly the disturbances the one-shot formulation allows. Each agent
    pays the worst-case skew |x_final,1 - x_final,2| and keeps its trajectory
    inside a +-5 box with inputs bounded by 2.5.
    """
    T = 3
    n = 2
    Z = np.zeros((n, n))
    I2 = np.eye(n)
    e02 = np.zeros((n, 0))

    def agent(i: int) -> AgentModel:
        nb_w = 0 if i == 0 else n
        Znb = np.zeros((n, nb_w))
        stages = [
            StageDynamics(Z, Znb, e02, TOY_E),  # x2 = E xi1
            StageDynamics(I2, Znb, TOY_B if i == 0 else np.zeros((n, 0)), np.zeros((n, 0))),
            StageDynamics(
                I2,
                Znb if i == 0 else TOY_D,  # agent 2 couples on the neighbor's stage-3 state
                np.zeros((n, 0)) if i == 0 else TOY_B,
                np.zeros((n, 0)),
            ),
        ]
        N_x = (T + 1) * n
        stage_u = [st.D.shape[1] for st in stages]
        N_u = sum(stage_u)
        # state box on every stage after the first, input box on the decision
        Hx_rows, h_rows = [], []
        for t in range(2, T + 2):
            sel = np.zeros((n, N_x))
            sel[:, (t - 1) * n : t * n] = np.eye(n)
            Hx_rows += [sel, -sel]
            h_rows += [np.full(n, TOY_STATE_BOUND)] * 2
        H_x = np.vstack(Hx_rows)
        H_u = np.zeros((H_x.shape[0], N_u))
        h = np.concatenate(h_rows)
        H_u = np.vstack([H_u, np.eye(N_u), -np.eye(N_u)])
        H_x = np.vstack([H_x, np.zeros((2 * N_u, N_x))])
        h = np.concatenate([h, np.full(2 * N_u, TOY_INPUT_BOUND)])
        final_stage = 3 if i == 0 else 4
        cost = norm_cost(TOY_C[None, :], np.zeros((1, 1)), "inf", T, n, stage_u,
                         state_stages=[final_stage])
        dist = box_set(-np.ones(2), np.ones(2))  # only stage 1 carries disturbance
        return AgentModel(i, np.zeros(n), stages, Constraints(H_x, H_u, h), cost, dist)

    graph = CouplingGraph(2, [[], [0]])
    net = Network(graph, [agent(0), agent(1)], horizon=T)
    sampler = StageBoxSampler(
        lo={0: [np.full(2, -1.0), np.zeros(0), np.zeros(0)],
            1: [np.full(2, -1.0), np.zeros(0), np.zeros(0)]},
        hi={0: [np.full(2, 1.0), np.zeros(0), np.zeros(0)],
            1: [np.full(2, 1.0), np.zeros(0), np.zeros(0)]},
    )
    meta = {
        "topology": "toy",
        "final_stage": {0: 3, 1: 4},
        "state_bound": TOY_STATE_BOUND,
        "input_bound": TOY_INPUT_BOUND,
    }
    return BenchmarkInstance("toy", net, box_primitives(net), sampler, seed=0, meta=meta)


# ---------------------------------------------------------------------------
# spring-mass-damper chain
# ---------------------------------------------------------------------------


@dataclass
class ZohSim:
    """Exact zero-order-hold step of the coupled continuous system."""

    Ad: np.ndarray
    Bd: np.ndarray
    Ed: np.ndarray
    n_x: int
    n_u: int

    def step(self, x: dict, u: dict, xi: dict) -> dict:
        M = len(x)
        xg = np.concatenate([x[i] for i in range(M)])
        ug = np.concatenate([u[i] for i in range(M)])
        wg = np.concatenate([xi[i] for i in range(M)])
        nxt = self.Ad @ xg + self.Bd @ ug + self.Ed @ wg
        return {i: nxt[i * self.n_x : (i + 1) * self.n_x] for i in range(M)}


def _smd_continuous(n: int, masses, springs, dampers):
    """Global continuous matrices of the chain (positions, velocities per mass)."""
    nx = 2 * n
    A = np.zeros((nx, nx))
    B = np.zeros((nx, n))
    E = np.eye(nx)
    for i in range(n):
        p, v = 2 * i, 2 * i + 1
        A[p, v] = 1.0
        B[v, i] = 1.0 / masses[i]
        for j, edge in ((i - 1, i - 1), (i + 1, i)):
            if 0 <= j < n:
                k, c = springs[edge], dampers[edge]
                A[v, p] -= k / masses[i]
                A[v, 2 * j] += k / masses[i]
                A[v, v] -= c / masses[i]
                A[v, 2 * j + 1] += c / masses[i]
    return A, B, E


def smd_chain(n_masses: int, horizon: int, seed: int, dt: float = 0.1) -> BenchmarkInstance:
    """Chain of masses joined by springs and dampers; one agent per mass.

    The prediction model is the forward-Euler discretization (it preserves the
    chain's coupling sparsity); the simulation model is the exact zero-order
    hold of the coupled system. Masses are drawn in [5, 10] kg, spring
    constants and damping coefficients in [0.8, 1.2]. States (position,
    velocity deviations) are confined to ||x||_inf <= 6, forces to
    ||u||_inf <= 4, and each mass sees a unit-box disturbance channel held
    over the sampling interval.
    """
    if n_masses < 1:
        raise ValueError("need at least one mass")
    rng = np.random.default_rng(seed)
    masses = rng.uniform(5.0, 10.0, size=n_masses)
    springs = rng.uniform(0.8, 1.2, size=max(n_masses - 1, 1))
    dampers = rng.uniform(0.8, 1.2, size=max(n_masses - 1, 1))
    Ac, Bc, Ec = _smd_continuous(n_masses, masses, springs, dampers)

    neighbors = [
        [j for j in (i - 1, i + 1) if 0 <= j < n_masses] for i in range(n_masses)
    ]
    graph = CouplingGraph(n_masses, neighbors)
    T = horizon
    agents = []
    for i in range(n_masses):
        own = slice(2 * i, 2 * i + 2)
        A_e = np.eye(2) + dt * Ac[own, own]
        B_blocks = [dt * Ac[own, 2 * j : 2 * j + 2] for j in neighbors[i]]
        B_e = np.hstack(B_blocks) if B_blocks else np.zeros((2, 0))
        D_e = dt * Bc[own, i : i + 1]
        E_e = dt * np.eye(2)
        st = StageDynamics(A_e, B_e, D_e, E_e)
        stages = [st] * T
        N_x, N_u = (T + 1) * 2, T
        Hx_rows, h_rows = [], []
        for t in range(2, T + 2):
            sel = np.zeros((2, N_x))
            sel[:, (t - 1) * 2 : t * 2] = np.eye(2)
            Hx_rows += [sel, -sel]
            h_rows += [np.full(2, 6.0)] * 2
        H_x = np.vstack(Hx_rows + [np.zeros((2 * N_u, N_x))])
        H_u = np.vstack([np.zeros((len(h_rows) * 2, N_u)), np.eye(N_u), -np.eye(N_u)])
        h = np.concatenate(h_rows + [np.full(2 * N_u, 4.0)])
        cost = norm_cost(np.diag([1.0, 0.0]), np.array([[0.1]]), "inf", T, 2, [1] * T)
        dist = box_set(-np.ones(2 * T), np.ones(2 * T))
        agents.append(AgentModel(i, np.zeros(2), stages, Constraints(H_x, H_u, h), cost, dist))
    net = Network(graph, agents, horizon=T)

    M2 = np.zeros((4 * n_masses, 4 * n_masses))
    M2[: 2 * n_masses, : 2 * n_masses] = Ac
    M2[: 2 * n_masses, 2 * n_masses :] = np.eye(2 * n_masses)
    eM = expm(M2 * dt)
    Ad = expm(Ac * dt)
    Phi = eM[: 2 * n_masses, 2 * n_masses :]  # integral of expm(Ac s) ds
    sim = ZohSim(Ad, Phi @ Bc, Phi @ Ec, n_x=2, n_u=1)

    sampler = StageBoxSampler(
        lo={i: [np.full(2, -1.0)] * T for i in range(n_masses)},
        hi={i: [np.full(2, 1.0)] * T for i in range(n_masses)},
    )
    meta = {
        "topology": "smd_chain",
        "n_masses": n_masses,
        "dt": dt,
        "state_bound": 6.0,
        "input_bound": 4.0,
        "cl_state_weight": [1.0, 0.0],
        "cl_input_weight": 0.1,
        "masses": masses.tolist(),
        "springs": springs.tolist(),
        "dampers": dampers.tolist(),
    }
    return BenchmarkInstance(f"smd{n_masses}", net, box_primitives(net), sampler, seed,
                             sim=sim, meta=meta)


# ---------------------------------------------------------------------------
# supply chain with communicated order bounds
# ---------------------------------------------------------------------------


def _topology_arcs(topology: str, n_agents: int) -> list:
    """neighbors[i] = downstream agents whose order pipelines drive i's demand.

    Agent 0 is the (first) retailer; goods flow high id -> low id. "mesh" is
    a chain with skip links (i supplies i+2 as well); "star" is a single hub
    (the last agent) supplied by direct retailers; "ring" closes the chain
    cycle so agent 0 both faces the market and supplies the tail agent.
    """
    if n_agents < 2:
        raise ValueError("supply chains need at least two agents")
    nb = [[] for _ in range(n_agents)]
    if topology == "chain":
        for i in range(1, n_agents):
            nb[i] = [i - 1]
    elif topology == "ring":
        for i in range(1, n_agents):
            nb[i] = [i - 1]
        nb[0] = [n_agents - 1]
    elif topology == "star":
        nb[n_agents - 1] = list(range(n_agents - 1))
    elif topology == "mesh":
        for i in range(1, n_agents):
            nb[i] = [i - 1]
            if i >= 2:
                nb[i].append(i - 2)
    else:
        raise ValueError(f"unknown topology {topology!r}")
    return nb


def supply_chain(topology: str, n_agents: int, n_products: int, horizon: int, seed: int,
                 uncertainty_scale: float = 1.0, n_factors: int = 3) -> BenchmarkInstance:
    """Multi-echelon inventory network with order pipelines as coupling states.

    Each agent's state is (inventory I, incoming order pipeline O) per
    product; its input is the order placed this period (arriving next
    period, shrunk by a loss disturbance in [-0.2, 0]). Market demand at
    retailers follows 2 + sin/cos(2 pi t / (T-1)) plus averaged factor
    loadings of box disturbances, so demand stays in [0, 4]. A non-retail
    agent's demand mixes its downstream customers' pipelines with a
    row-stochastic blend. Costs are per-period holding/backlog charges on
    inventory, encoded as two-sided linear epigraph atoms.
    """
    if not 0 < uncertainty_scale <= 1.0:
        raise ValueError("uncertainty_scale must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    nb = _topology_arcs(topology, n_agents)
    P, T, k = n_products, horizon, n_factors
    retailers = [i for i in range(n_agents) if not nb[i] or (topology == "ring" and i == 0)]

    agents = []
    lo_map, hi_map = {}, {}
    c_hold = rng.uniform(0.0, 2.0, size=n_agents)
    c_back = rng.uniform(0.0, 2.0, size=n_agents)
    loadings = {i: rng.uniform(-1.0, 1.0, size=(P, k)) for i in retailers}
    mix = {}
    for i in range(n_agents):
        if nb[i]:
            raw = rng.uniform(0.0, 1.0, size=(P, len(nb[i])))
            mix[i] = raw / raw.sum(axis=1, keepdims=True)

    for i in range(n_agents):
        is_retail = i in retailers
        n_x = 2 * P  # (I, O) per product
        A = np.eye(n_x)
        A[:P, P:] = np.eye(P)  # I_{t+1} gets the arriving pipeline O_t
        A[P:, P:] = 0.0  # next pipeline is this period's order
        D = np.vstack([np.zeros((P, P)), np.eye(P)])
        nb_w = 2 * P * len(nb[i])
        B = np.zeros((n_x, nb_w))
        if nb[i]:
            for col, _j in enumerate(sorted(nb[i])):
                # demand = mix of the downstream pipeline states (their O block)
                B[:P, col * 2 * P + P : (col + 1) * 2 * P] = -np.diag(mix[i][:, col])
        # disturbances: loss w in [-0.2, 0] on arriving goods; market factors for retailers
        if is_retail:
            E = np.zeros((n_x, P + k))
            E[:P, :P] = np.eye(P)  # loss enters the inventory balance
            E[:P, P:] = -loadings[i] / k  # minus demand fluctuation
        else:
            E = np.zeros((n_x, P))
            E[:P, :P] = np.eye(P)
        st = StageDynamics(A, B, D, E)
        stages = [st] * T

        # disturbance boxes per stage; retailer market block is shifted so that
        # E xi reproduces -mean demand (no offset term needed in the dynamics)
        lo_stages, hi_stages = [], []
        for t in range(1, T + 1):
            lo_vec = np.full(P, -0.2)
            hi_vec = np.zeros(P)
            if is_retail:
                mu = np.array([
                    2.0 + (math.sin if p % 2 == 1 else math.cos)(2 * math.pi * t / (T - 1))
                    for p in range(1, P + 1)
                ])
                # shift nu solves (loadings/k) nu = mu  => E (xi + nu') = -demand
                nu, *_ = np.linalg.lstsq(loadings[i] / k, mu, rcond=None)
                lo_vec = np.concatenate([lo_vec, nu - uncertainty_scale])
                hi_vec = np.concatenate([hi_vec, nu + uncertainty_scale])
            lo_stages.append(lo_vec)
            hi_stages.append(hi_vec)
        lo_map[i], hi_map[i] = lo_stages, hi_stages
        dist = box_set(np.concatenate(lo_stages), np.concatenate(hi_stages))

        N_x, N_u = (T + 1) * n_x, T * P
        # orders in [0, 6]
        H_u = np.vstack([np.eye(N_u), -np.eye(N_u)])
        H_x = np.zeros((2 * N_u, N_x))
        h = np.concatenate([np.full(N_u, 6.0), np.zeros(N_u)])
        atoms = []
        for t in range(2, T + 2):
            for p in range(P):
                Fx = np.zeros((2, N_x))
                Fx[0, (t - 1) * n_x + p] = c_hold[i]
                Fx[1, (t - 1) * n_x + p] = -c_back[i]
                atoms.append(CostAtom(Fx, np.zeros((2, N_u)), np.zeros(2)))
        cost = CostSpec(tuple(atoms))
        x1 = np.concatenate([np.full(P, 2.0), np.full(P, 2.0)])  # stock and pipeline
        agents.append(AgentModel(i, x1, stages, Constraints(H_x, H_u, h), cost, dist))

    graph = CouplingGraph(n_agents, nb)
    net = Network(graph, agents, horizon=T)
    sampler = StageBoxSampler(lo=lo_map, hi=hi_map)
    meta = {
        "topology": topology,
        "n_products": P,
        "retailers": retailers,
        "uncertainty_scale": uncertainty_scale,
        "input_bound": 6.0,
        "holding": c_hold.tolist(),
        "backlog": c_back.tolist(),
    }
    return BenchmarkInstance(f"sc_{topology}{n_agents}", net, box_primitives(net), sampler,
                             seed, meta=meta)


# ---------------------------------------------------------------------------
# random networks for property suites
# ---------------------------------------------------------------------------


def random_network(M: int, T: int, seed: int, edge_prob: float = 0.5,
                   dist_radius: float = 0.3) -> BenchmarkInstance:
    """Seeded random stable network with box disturbances and box primitives.

    Tuned to be robustly feasible with high probability: Schur-stable A
    blocks, weak couplings, full-rank input and disturbance channels, roomy
    state/input boxes.
    """
    rng = np.random.default_rng(seed)
    n_x, n_u = 2, 1
    nb = []
    for i in range(M):
        others = [j for j in range(M) if j != i]
        nb.append([j for j in others if rng.random() < edge_prob])
    graph = CouplingGraph(M, nb)
    agents = []
    for i in range(M):
        A = rng.normal(size=(n_x, n_x))
        rad = max(np.abs(np.linalg.eigvals(A)))
        A = 0.8 * A / max(rad, 0.8)
        B = 0.1 * rng.normal(size=(n_x, n_x * len(nb[i]))) if nb[i] else np.zeros((n_x, 0))
        D = rng.normal(size=(n_x, n_u))
        D /= max(np.linalg.norm(D), 0.5)
        E = dist_radius * np.eye(n_x)
        st = StageDynamics(A, B, D, E)
        N_x, N_u = (T + 1) * n_x, T * n_u
        H_x = np.vstack([np.eye(N_x), -np.eye(N_x)])
        H_u = np.vstack([np.zeros((2 * N_x, N_u)), np.eye(N_u), -np.eye(N_u)])
        H_x = np.vstack([H_x, np.zeros((2 * N_u, N_x))])
        h = np.concatenate([np.full(2 * N_x, 8.0), np.full(2 * N_u, 4.0)])
        cost = norm_cost(np.eye(n_x), 0.1 * np.eye(n_u), "inf", T, n_x, [n_u] * T)
        dist = box_set(-np.ones(T * n_x), np.ones(T * n_x))
        x1 = rng.uniform(-1.0, 1.0, size=n_x)
        agents.append(AgentModel(i, x1, [st] * T, Constraints(H_x, H_u, h), cost, dist))
    net = Network(graph, agents, horizon=T)
    sampler = StageBoxSampler(
        lo={i: [np.full(n_x, -1.0)] * T for i in range(M)},
        hi={i: [np.full(n_x, 1.0)] * T for i in range(M)},
    )
    meta = {"topology": "random", "state_bound": 8.0, "input_bound": 4.0}
    return BenchmarkInstance(f"rand{M}x{T}s{seed}", net, box_primitives(net), sampler, seed,
                             meta=meta)
