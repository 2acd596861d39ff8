"""Synthesis of robust affine policies under three information structures.

* ``synthesize_centralized`` — every input may feed back on the full
  disturbance history of all agents (strictly causal).
* ``synthesize_partially_nested`` — feedback restricted to the disturbance
  histories of the agent's precedent set.
* ``synthesize_local`` — feedback on the agent's own disturbances plus the
  primitive-set coordinates of its neighbors' communicated forecast sets;
  each agent's trajectory is constrained to its own forecast set, and the
  only cross-agent coupling is through the forecast scales/translations.

All three reduce to one conic program via the robust counterpart engine.
Programs are assembled once with the initial states as parameters, so
receding-horizon loops re-solve without re-assembly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .affine import (
    DecAffine,
    UncertainAffineExpr,
    expr_add,
    expr_compose,
    expr_scale,
    expr_take,
    expr_vstack,
)
from .conic import ProgramBuilder, SolverHandle, default_solver, elastic_relaxation_report
from .model import AgentModel, ConeSpec, Network, PrimitiveSetSpec, precedent_closure, stack_dynamics
from .robust import UncertaintyBlock, add_robust_upper_bounds, dualize_cone_constraint, epigraph_objective

__all__ = [
    "AffinePolicy",
    "ForecastSetDecision",
    "SynthesisReport",
    "synthesize_centralized",
    "synthesize_partially_nested",
    "synthesize_local",
    "assemble_centralized",
    "assemble_partially_nested",
    "assemble_local",
    "scaled_projection_matrix",
    "pseudo_inverse_map",
    "to_belief_feedback",
    "evaluate_policy",
    "reconstruct_disturbance",
    "causality_mask",
    "forecast_agents",
    "forecast_violation",
    "primitive_coordinates",
    "block_component_rules",
]

FORECAST_TIEBREAK = 1e-6  # tiny weight on sum(y): reported widths are minimal
ZERO_SCALE_TOL = 1e-9

dist_block = "dist{}".format
coord_block = "coord{}".format
belief_block = "belief{}".format


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


def causality_mask(u_stage_dims, obs_stage_dims, shift: int) -> np.ndarray:
    """Boolean (N_u x d_obs) mask: the stage-t input rows may read observation
    stages tau with tau <= t - shift (shift 1 = strictly causal, 0 = causal)."""
    u_stages = np.repeat(np.arange(1, len(u_stage_dims) + 1), u_stage_dims)
    o_stages = np.repeat(np.arange(1, len(obs_stage_dims) + 1), obs_stage_dims)
    return o_stages[None, :] <= (u_stages[:, None] - shift)


@dataclass
class AffinePolicy:
    """Affine feedback u = intercept + sum_b coeffs[b] @ history_b with exact
    structural zeros outside the causality mask of each observed block."""

    agent_id: int
    structure: str  # centralized | partially_nested | local_primitive | local_belief
    stage_u_dims: list
    intercept: np.ndarray
    coeffs: dict  # block name -> (N_u, d_b)
    obs_stage_dims: dict  # block name -> per-stage widths
    shifts: dict  # block name -> 0 or 1

    @property
    def horizon(self) -> int:
        return len(self.stage_u_dims)

    def mask(self, name: str) -> np.ndarray:
        return causality_mask(self.stage_u_dims, self.obs_stage_dims[name], self.shifts[name])

    def causality_violation(self) -> float:
        """Largest |coefficient| outside any causality mask (should be 0.0)."""
        worst = 0.0
        for name, C in self.coeffs.items():
            masked_out = ~self.mask(name)
            if masked_out.any():
                worst = max(worst, float(np.max(np.abs(C[masked_out]), initial=0.0)))
        return worst

    def u_stage_slice(self, t: int) -> slice:
        off = int(np.sum(self.stage_u_dims[: t - 1]))
        return slice(off, off + self.stage_u_dims[t - 1])


def evaluate_policy(policy: AffinePolicy, history: dict, t: int) -> np.ndarray:
    """Stage-t input from per-block stage histories.

    ``history[name]`` is a list of per-stage vectors; block ``name`` must
    provide at least t - shift stages. Extra stages are ignored.
    """
    if not 1 <= t <= policy.horizon:
        raise ValueError(f"stage {t} outside horizon 1..{policy.horizon}")
    rows = policy.u_stage_slice(t)
    u = policy.intercept[rows].copy()
    for name, C in policy.coeffs.items():
        need = t - policy.shifts[name]
        stages = history.get(name, [])
        if len(stages) < need:
            raise ValueError(f"insufficient history for block {name!r}: have {len(stages)}, need {need}")
        if need == 0:
            continue
        dims = policy.obs_stage_dims[name]
        obs = np.concatenate([np.asarray(stages[k], dtype=float).ravel() for k in range(need)])
        u = u + C[rows, : obs.size] @ obs
    return u


# ---------------------------------------------------------------------------
# forecast decisions
# ---------------------------------------------------------------------------


@dataclass
class ForecastSetDecision:
    """Scales y (one per primitive block, >= 0) and translation z defining the
    communicated forecast set of one agent."""

    agent_id: int
    y: np.ndarray
    z: np.ndarray
    primitive: PrimitiveSetSpec

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.z = np.asarray(self.z, dtype=float).ravel()
        if self.y.size != self.primitive.n_blocks or self.z.size != self.primitive.dim:
            raise ValueError("forecast decision dims disagree with primitive")
        if np.any(self.y < -1e-9):
            raise ValueError("forecast scales must be nonnegative")
        self.y = np.maximum(self.y, 0.0)


def scaled_projection_matrix(dec: ForecastSetDecision):
    """Block-scaled projection Y = sum_k y_k P_k (diagonal, PSD) and its
    per-stage diagonal blocks."""
    d = np.zeros(dec.primitive.dim)
    for k, b in enumerate(dec.primitive.blocks):
        d[b.proj] = dec.y[k]
    Y = np.diag(d)
    n_stage = dec.primitive.stage_width or dec.primitive.dim
    stages = [Y[i : i + n_stage, i : i + n_stage] for i in range(0, dec.primitive.dim, n_stage)]
    return Y, stages


def pseudo_inverse_map(Y: np.ndarray, tol: float = ZERO_SCALE_TOL) -> np.ndarray:
    """Moore-Penrose inverse of the diagonal scaling: inverts nonzero scales,
    zeroes null blocks."""
    d = np.diag(Y).copy()
    inv = np.where(np.abs(d) > tol, 1.0 / np.where(np.abs(d) > tol, d, 1.0), 0.0)
    return np.diag(inv)


def forecast_agents(net: Network) -> list:
    """Agents whose forecast set is actually communicated (have a consumer)."""
    return [j for j in range(net.M) if net.graph.consumers(j)]


def block_component_rules(dec: ForecastSetDecision, x_expr: UncertainAffineExpr) -> list:
    """Per-block auxiliary trajectory rules implied by coefficient matching.

    The projections partition coordinates, so the identity
    x = frame @ (sum_k component_k) + z pins component_k = P_k frame' (x - z)
    uniquely; returns those expressions (P_k component_k = component_k holds
    structurally)."""
    Qt = dec.primitive.frame_matrix().T
    w = expr_compose(Qt, expr_add(x_expr, UncertainAffineExpr.constant(-dec.z)))
    rules = []
    for b in dec.primitive.blocks:
        P = np.zeros((dec.primitive.dim, dec.primitive.dim))
        P[b.proj, b.proj] = 1.0
        rules.append(expr_compose(P, w))
    return rules


def forecast_violation(dec: ForecastSetDecision, x_traj: np.ndarray) -> float:
    """Worst cone violation of a realized trajectory against the convex
    forecast-set description (0.0 means member)."""
    w = dec.primitive.frame_matrix().T @ (np.asarray(x_traj, dtype=float) - dec.z)
    worst = 0.0
    for k, b in enumerate(dec.primitive.blocks):
        v = dec.y[k] * b.g - b.G @ w
        worst = max(worst, b.cone.violation(v))
    return worst


def primitive_coordinates(dec: ForecastSetDecision, x_traj: np.ndarray,
                          tol: float = 1e-6):
    """Explicit primitive point s with x = frame (Y s) + z, or None.

    This is the direct (non-convex-form) membership test: blocks with zero
    scale require the matching component of x - z to vanish."""
    w = dec.primitive.frame_matrix().T @ (np.asarray(x_traj, dtype=float) - dec.z)
    s = np.zeros(dec.primitive.dim)
    for k, b in enumerate(dec.primitive.blocks):
        comp = w[b.proj]
        if dec.y[k] <= ZERO_SCALE_TOL:
            if np.max(np.abs(comp), initial=0.0) > tol:
                return None
            continue
        cand = comp / dec.y[k]
        full = np.zeros(dec.primitive.dim)
        full[b.proj] = cand
        if b.cone.violation(b.residual(full)) > tol:
            return None
        s[b.proj] = cand
    return s


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class SynthesisReport:
    status: str
    method: str
    mode: str
    objective: float | None = None
    per_agent_objective: dict = field(default_factory=dict)
    policies: dict = field(default_factory=dict)
    forecasts: dict = field(default_factory=dict)
    build_time: float = 0.0
    solve_time: float = 0.0
    exactness: dict = field(default_factory=dict)
    infeasibility_hint: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        out = {
            "status": self.status,
            "method": self.method,
            "mode": self.mode,
            "objective": self.objective,
            "per_agent_objective": {str(k): v for k, v in self.per_agent_objective.items()},
            "build_time": self.build_time,
            "solve_time": self.solve_time,
            "exactness": self.exactness,
            "infeasibility_hint": [[lab, val] for lab, val in self.infeasibility_hint],
            "message": self.message,
            "policies": {},
            "forecasts": {},
        }
        for i, p in self.policies.items():
            out["policies"][str(i)] = {
                "structure": p.structure,
                "stage_u_dims": list(p.stage_u_dims),
                "intercept": p.intercept.tolist(),
                "coeffs": {n: C.tolist() for n, C in p.coeffs.items()},
                "obs_stage_dims": {n: list(v) for n, v in p.obs_stage_dims.items()},
                "shifts": dict(p.shifts),
            }
        for j, f in self.forecasts.items():
            out["forecasts"][str(j)] = {
                "y": f.y.tolist(),
                "z": f.z.tolist(),
                "primitive_kind": f.primitive.kind,
            }
        return out


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


class _PolicyVars:
    """Decision variables of one agent's affine policy, with causality masks
    baked in (masked-out coefficients are never allocated)."""

    def __init__(self, pb: ProgramBuilder, agent: AgentModel, observed: dict, shifts: dict):
        self.agent = agent
        self.observed = dict(observed)  # name -> per-stage widths
        self.shifts = dict(shifts)
        N_u = agent.N_u
        self.intercept_idx = pb.add_vars(f"agent:{agent.id}/policy/v", N_u)
        self.masks = {}
        self.flat_idx = {}
        self.coeff_aff = {}
        for name in sorted(observed):
            mask = causality_mask(agent.stage_u_dims, observed[name], shifts[name])
            flat = pb.add_vars(f"agent:{agent.id}/policy/{name}", int(mask.sum()))
            idx = np.zeros(mask.shape, dtype=np.int64)
            idx[mask] = flat
            self.masks[name] = mask
            self.flat_idx[name] = flat
            self.coeff_aff[name] = DecAffine.from_vars(idx, mask)

    def u_expr(self) -> UncertainAffineExpr:
        return UncertainAffineExpr(
            self.agent.N_u, DecAffine.from_vars(self.intercept_idx), dict(self.coeff_aff)
        )

    def extract(self, sol: np.ndarray, structure: str) -> AffinePolicy:
        coeffs = {}
        for name, mask in self.masks.items():
            C = np.zeros(mask.shape)
            C[mask] = sol[self.flat_idx[name]]
            coeffs[name] = C
        return AffinePolicy(
            self.agent.id,
            structure,
            list(self.agent.stage_u_dims),
            sol[self.intercept_idx].copy(),
            coeffs,
            dict(self.observed),
            dict(self.shifts),
        )


def _stage_xi_expr(agent: AgentModel, t: int) -> UncertainAffineExpr:
    """E_t xi_t as an expression over the agent's stacked disturbance block."""
    E = agent.stages[t - 1].E
    C = np.zeros((agent.n_x, agent.N_xi))
    off = int(np.sum(agent.stage_xi_dims[: t - 1]))
    C[:, off : off + E.shape[1]] = E
    return UncertainAffineExpr(agent.n_x, DecAffine.zeros((agent.n_x,)),
                               {dist_block(agent.id): DecAffine.constant(C)})


def _x1_expr(pb: ProgramBuilder, agent: AgentModel) -> UncertainAffineExpr:
    pidx = pb.add_params(f"x1_{agent.id}", agent.n_x)
    return UncertainAffineExpr(
        agent.n_x,
        DecAffine.from_vars(pb.param_col(pidx)),
        {},
    )


def _coupled_state_exprs(pb: ProgramBuilder, net: Network, u_exprs: dict) -> dict:
    """Network trajectory expressions under endogenous coupling (the stage
    recursion resolves neighbor states through all agents' policies)."""
    x_stage = {i: [_x1_expr(pb, net.agents[i])] for i in range(net.M)}
    for t in range(1, net.horizon + 1):
        new = {}
        for i in range(net.M):
            ag = net.agents[i]
            st = ag.stages[t - 1]
            expr = expr_compose(st.A, x_stage[i][t - 1])
            off = 0
            for j in net.graph.neighbors[i]:
                nxj = net.agents[j].n_x
                expr = expr_add(expr, expr_compose(st.B[:, off : off + nxj], x_stage[j][t - 1]))
                off += nxj
            if ag.stage_u_dims[t - 1]:
                u_rows = expr_take(u_exprs[i], np.arange(*_u_range(ag, t)))
                expr = expr_add(expr, expr_compose(st.D, u_rows))
            if ag.stage_xi_dims[t - 1]:
                expr = expr_add(expr, _stage_xi_expr(ag, t))
            new[i] = expr
        for i in range(net.M):
            x_stage[i].append(new[i])
    return {i: expr_vstack(x_stage[i]) for i in range(net.M)}


def _u_range(agent: AgentModel, t: int):
    off = int(np.sum(agent.stage_u_dims[: t - 1]))
    return off, off + agent.stage_u_dims[t - 1]


def _dist_blocks(net: Network) -> dict:
    return {dist_block(i): UncertaintyBlock(dist_block(i), net.agents[i].disturbance_set)
            for i in range(net.M)}


@dataclass
class SynthesisProgram:
    """Assembled synthesis program: build once, solve many (initial states are
    parameters)."""

    net: Network
    method: str
    mode: str
    builder: ProgramBuilder
    policy_vars: dict
    structure: str
    blocks: dict
    agent_t_vars: dict
    exactness: dict
    build_time: float
    forecast_vars: dict = field(default_factory=dict)  # j -> (y_idx, z_idx, primitive)
    tiebreak_vars: np.ndarray | None = None

    def solve(self, solver: SolverHandle | None = None, x1: dict | None = None,
              diagnose: bool = True) -> SynthesisReport:
        solver = solver or default_solver()
        params = {}
        for i in range(self.net.M):
            val = self.net.agents[i].x1 if x1 is None or i not in x1 else np.asarray(x1[i])
            params[f"x1_{i}"] = val
        t0 = time.perf_counter()
        prog = self.builder.build(params)
        res = solver.solve(prog)
        solve_time = time.perf_counter() - t0
        rep = SynthesisReport(res.status, self.method, self.mode,
                              build_time=self.build_time, solve_time=solve_time,
                              exactness=dict(self.exactness), message=res.message)
        if res.status != "optimal":
            if res.status == "infeasible" and diagnose and not prog.soc:
                rep.infeasibility_hint = _agent_hints(prog)
            return rep
        sol = res.x
        rep.per_agent_objective = {
            i: float(np.sum(sol[t])) for i, t in self.agent_t_vars.items()
        }
        rep.objective = float(sum(rep.per_agent_objective.values()))
        rep.policies = {
            i: pv.extract(sol, self.structure) for i, pv in self.policy_vars.items()
        }
        for j, (y_idx, z_idx, prim) in self.forecast_vars.items():
            rep.forecasts[j] = ForecastSetDecision(
                j, np.maximum(sol[y_idx], 0.0), sol[z_idx], prim
            )
        return rep


def _agent_hints(prog) -> list:
    hints = {}
    for label, mass in elastic_relaxation_report(prog):
        agent = label.split("/")[0] if label.startswith("agent:") else label
        hints[agent] = hints.get(agent, 0.0) + mass
    return sorted(hints.items(), key=lambda kv: -kv[1])


def _ops_rows(agent: AgentModel, x_expr, u_expr) -> UncertainAffineExpr:
    rows = expr_add(expr_compose(agent.constraints.H_x, x_expr),
                    expr_compose(agent.constraints.H_u, u_expr))
    return expr_add(rows, UncertainAffineExpr.constant(-agent.constraints.h))


def _assemble_disturbance_feedback(net: Network, observed_of: dict, structure: str,
                                   mode: str) -> SynthesisProgram:
    """Common assembly for the centralized and partially nested problems."""
    t0 = time.perf_counter()
    pb = ProgramBuilder()
    blocks = _dist_blocks(net)
    policy_vars = {}
    for i in range(net.M):
        ag = net.agents[i]
        observed = {dist_block(j): net.agents[j].stage_xi_dims for j in observed_of[i]}
        shifts = {name: 1 for name in observed}
        policy_vars[i] = _PolicyVars(pb, ag, observed, shifts)
    u_exprs = {i: pv.u_expr() for i, pv in policy_vars.items()}
    x_exprs = _coupled_state_exprs(pb, net, u_exprs)
    agent_t = {}
    exact_obj = True
    for i in range(net.M):
        ag = net.agents[i]
        add_robust_upper_bounds(pb, _ops_rows(ag, x_exprs[i], u_exprs[i]), blocks,
                                f"agent:{i}/ops")
        info = epigraph_objective(pb, ag.cost.atoms, x_exprs[i], u_exprs[i], blocks, mode,
                                  label=f"agent:{i}/obj")
        agent_t[i] = info["t_vars"]
        exact_obj = exact_obj and info["exact"]
    return SynthesisProgram(
        net, structure, mode, pb, policy_vars, structure, blocks, agent_t,
        {"objective": "exact" if exact_obj else "upper_bound"},
        time.perf_counter() - t0,
    )


def assemble_centralized(net: Network, mode: str = "exact_polyhedral") -> SynthesisProgram:
    observed = {i: list(range(net.M)) for i in range(net.M)}
    return _assemble_disturbance_feedback(net, observed, "centralized", mode)


def assemble_partially_nested(net: Network, mode: str = "exact_polyhedral") -> SynthesisProgram:
    closure = precedent_closure(net.graph)
    observed = {i: sorted(closure[i]) for i in range(net.M)}
    return _assemble_disturbance_feedback(net, observed, "partially_nested", mode)


def assemble_local(net: Network, primitives: dict, mode: str = "exact_polyhedral",
                   conservative_facets: int = 16, pin_forecasts: dict | None = None) -> SynthesisProgram:
    """Assemble the local-information problem.

    ``primitives`` maps every forecast agent (one with at least one consumer)
    to its PrimitiveSetSpec over the trajectory space. Modes:
    "exact_polyhedral" (polyhedral primitives only, exact), "conservative"
    (SOC containment via inner polyhedral approximation), "vertex" (exact SOC
    handling on polyhedral uncertainty at small scale).
    """
    t0 = time.perf_counter()
    pb = ProgramBuilder()
    blocks = _dist_blocks(net)
    f_agents = forecast_agents(net)
    for j in f_agents:
        if j not in primitives:
            raise ValueError(f"agent {j} is consumed by a neighbor but has no primitive set")
        if primitives[j].dim != net.agents[j].N_x:
            raise ValueError(f"agent {j}: primitive dim {primitives[j].dim} != N_x {net.agents[j].N_x}")
        blocks[coord_block(j)] = UncertaintyBlock(coord_block(j), primitives[j])

    # forecast decision variables
    yz = {}
    for j in f_agents:
        y = pb.add_vars(f"agent:{j}/forecast/y", primitives[j].n_blocks, nonneg=True)
        z = pb.add_vars(f"agent:{j}/forecast/z", net.agents[j].N_x)
        yz[j] = (y, z)
        if pin_forecasts and j in pin_forecasts:
            y_val, z_val = pin_forecasts[j]
            pb.add_eq(np.arange(y.size), y, np.ones(y.size), np.asarray(y_val, dtype=float),
                      f"agent:{j}/pin_y")
            pb.add_eq(np.arange(z.size), z, np.ones(z.size), np.asarray(z_val, dtype=float),
                      f"agent:{j}/pin_z")

    policy_vars = {}
    agent_t = {}
    exact_obj = True
    exact_cont = True
    for i in range(net.M):
        out = _emit_local_agent(pb, net, i, primitives, mode, conservative_facets, yz, blocks)
        policy_vars[i] = out["policy_vars"]
        agent_t[i] = out["t_vars"]
        exact_obj = exact_obj and out["exact_obj"]
        exact_cont = exact_cont and out["exact_containment"]

    tie_vars = np.concatenate([yz[j][0] for j in f_agents]) if f_agents else None
    if tie_vars is not None and tie_vars.size:
        pb.add_obj(tie_vars, np.full(tie_vars.size, FORECAST_TIEBREAK))

    prog = SynthesisProgram(
        net, "local", mode, pb, policy_vars, "local_primitive", blocks, agent_t,
        {
            "objective": "exact" if exact_obj else "upper_bound",
            "containment": "exact" if exact_cont else "conservative",
        },
        time.perf_counter() - t0,
        tiebreak_vars=tie_vars,
    )
    prog.forecast_vars = {j: (yz[j][0], yz[j][1], primitives[j]) for j in f_agents}
    return prog


def _emit_local_agent(pb: ProgramBuilder, net: Network, i: int, primitives: dict, mode: str,
                      facets: int, yz: dict, blocks: dict) -> dict:
    """Constraints, objective and containment of one agent in the local
    problem. `yz[j]` supplies the (possibly agent-local) forecast variable
    indices used for agent j's scales/translation."""
    ag = net.agents[i]
    nbrs = net.graph.neighbors[i]
    observed = {dist_block(i): ag.stage_xi_dims}
    shifts = {dist_block(i): 1}
    for j in nbrs:
        observed[coord_block(j)] = [net.agents[j].n_x] * (net.horizon + 1)
        shifts[coord_block(j)] = 0
    pv = _PolicyVars(pb, ag, observed, shifts)
    u_expr = pv.u_expr()

    # beliefs: zeta_j = frame_j Y_j s_j + z_j over the full neighbor trajectory
    zeta = {}
    for j in nbrs:
        prim = primitives[j]
        y_idx, z_idx = yz[j]
        Nj = prim.dim
        d = prim.dim
        rows, cols, vals = [], [], []
        for k, b in enumerate(prim.blocks):
            rows.extend((b.proj * d + b.proj).tolist())
            cols.extend([y_idx[k]] * b.proj.size)
            vals.extend([1.0] * b.proj.size)
        Y_aff = DecAffine((Nj, Nj), np.array(rows), np.array(cols), np.array(vals),
                          np.zeros(Nj * Nj))
        coeff = Y_aff if prim.frame is None else Y_aff.lmul(prim.frame)
        zeta[j] = UncertainAffineExpr(Nj, DecAffine.from_vars(z_idx),
                                      {coord_block(j): coeff})

    # trajectory via the stacked per-agent map (belief coupling is exogenous)
    sd = stack_dynamics(ag, net.graph)
    x_expr = expr_compose(sd.A, _x1_expr(pb, ag))
    if nbrs:
        stage_parts = []
        for t in range(1, net.horizon + 1):
            for j in nbrs:
                nxj = net.agents[j].n_x
                stage_parts.append(expr_take(zeta[j], np.arange((t - 1) * nxj, t * nxj)))
        x_expr = expr_add(x_expr, expr_compose(sd.B, expr_vstack(stage_parts)))
    x_expr = expr_add(x_expr, expr_compose(sd.D, u_expr))
    ECoeff = UncertainAffineExpr(ag.N_x, DecAffine.zeros((ag.N_x,)),
                                 {dist_block(i): DecAffine.constant(sd.E)})
    x_expr = expr_add(x_expr, ECoeff)

    add_robust_upper_bounds(pb, _ops_rows(ag, x_expr, u_expr), blocks, f"agent:{i}/ops")
    # Vertex mode makes the objective an exact worst-case-of-sum, but only
    # over polyhedral blocks; with conic neighbor primitives the per-atom
    # dual-support path (also exact per atom) is used instead.
    obj_mode = mode
    if mode == "vertex":
        own_names = [dist_block(i)] + [coord_block(j) for j in nbrs]
        if not all(blocks[nm].is_polyhedral for nm in own_names):
            if ag.cost.needs_vertex_mode:
                raise ValueError(
                    f"agent {i}: 2-norm objective needs vertex enumeration, but its "
                    "uncertainty includes non-polyhedral primitive blocks"
                )
            obj_mode = "exact_polyhedral"
    info = epigraph_objective(pb, ag.cost.atoms, x_expr, u_expr, blocks, obj_mode,
                              label=f"agent:{i}/obj")

    # own containment: frame'(x - z) decomposes into per-block cone rows
    exact_cont = True
    if i in yz:
        prim = primitives[i]
        y_idx, z_idx = yz[i]
        z_expr = UncertainAffineExpr(ag.N_x, DecAffine.from_vars(z_idx), {})
        w = expr_compose(prim.frame_matrix().T, expr_add(x_expr, expr_scale(-1.0, z_expr)))
        for k, b in enumerate(prim.blocks):
            # cone row: y_k g_k - G_k w in K_k, robust over the agent's blocks
            gk = b.g
            nzg = np.nonzero(gk)[0]
            y_term = DecAffine((gk.size,), nzg, np.repeat(y_idx[k], nzg.size), gk[nzg],
                               np.zeros(gk.size))
            v = expr_add(
                UncertainAffineExpr(gk.size, y_term, {}),
                expr_compose(-b.G, w),
            )
            flags = dualize_cone_constraint(pb, v, b.cone, blocks, mode=mode, facets=facets,
                                            label=f"agent:{i}/contain/b{k}")
            exact_cont = exact_cont and flags["exact"]

    return {
        "policy_vars": pv,
        "t_vars": info["t_vars"],
        "exact_obj": info["exact"],
        "exact_containment": exact_cont,
        "x_expr": x_expr,
        "u_expr": u_expr,
    }


def synthesize_centralized(net: Network, solver: SolverHandle | None = None,
                           mode: str = "exact_polyhedral") -> SynthesisReport:
    """Robust affine disturbance feedback over the full network disturbance."""
    return assemble_centralized(net, mode).solve(solver)


def synthesize_partially_nested(net: Network, solver: SolverHandle | None = None,
                                mode: str = "exact_polyhedral") -> SynthesisReport:
    """Feedback masked to each agent's precedent disturbances."""
    return assemble_partially_nested(net, mode).solve(solver)


def synthesize_local(net: Network, primitives: dict, solver: SolverHandle | None = None,
                     mode: str = "exact_polyhedral", conservative_facets: int = 16,
                     pin_forecasts: dict | None = None) -> SynthesisReport:
    """Local-information synthesis with communicated forecast sets."""
    return assemble_local(net, primitives, mode, conservative_facets, pin_forecasts).solve(solver)


# ---------------------------------------------------------------------------
# policy translation and online execution helpers
# ---------------------------------------------------------------------------


def to_belief_feedback(policy: AffinePolicy, forecasts: dict) -> AffinePolicy:
    """Translate a primitive-coordinate policy into belief feedback.

    The returned policy reads realized neighbor belief trajectories: each
    neighbor block is precomposed with the inverse forecast map
    s_j = Y_j^+ frame_j' (zeta_j - z_j). On the range of the forecast map the
    two policies produce identical inputs.
    """
    if policy.structure != "local_primitive":
        raise ValueError("expected a local primitive-coordinate policy")
    intercept = policy.intercept.copy()
    coeffs = {}
    obs = {}
    shifts = {}
    for name, C in policy.coeffs.items():
        if not name.startswith("coord"):
            coeffs[name] = C.copy()
            obs[name] = list(policy.obs_stage_dims[name])
            shifts[name] = policy.shifts[name]
            continue
        j = int(name[len("coord"):])
        dec = forecasts[j]
        Y, _ = scaled_projection_matrix(dec)
        R = pseudo_inverse_map(Y) @ dec.primitive.frame_matrix().T
        bname = belief_block(j)
        coeffs[bname] = C @ R
        intercept = intercept - C @ (R @ dec.z)
        obs[bname] = list(policy.obs_stage_dims[name])
        shifts[bname] = policy.shifts[name]
    return AffinePolicy(policy.agent_id, "local_belief", list(policy.stage_u_dims),
                        intercept, coeffs, obs, shifts)


def reconstruct_disturbance(agent: AgentModel, t: int, x_next, x_cur, x_nb, u):
    """Least-squares disturbance consistent with one observed transition.

    Returns (xi_t, residual_norm). A residual beyond ~1e-6 signals
    prediction/simulation model mismatch; reconstruction is then the
    projection onto the column space of E_t.
    """
    st = agent.stages[t - 1]
    resid = (np.asarray(x_next, dtype=float) - st.A @ np.asarray(x_cur, dtype=float)
             - st.B @ np.asarray(x_nb, dtype=float).ravel() - st.D @ np.asarray(u, dtype=float))
    if st.E.shape[1] == 0:
        return np.zeros(0), float(np.linalg.norm(resid))
    xi, *_ = np.linalg.lstsq(st.E, resid, rcond=None)
    return xi, float(np.linalg.norm(st.E @ xi - resid))
