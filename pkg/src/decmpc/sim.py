"""Open-loop rollouts, receding-horizon closed loop, Monte Carlo studies,
shape/uncertainty sweeps, and table/trace export.

Everything is a pure function of (instance parameters, seeds); tables and
traces round-trip losslessly through CSV/JSON (floats serialized via repr).
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .instances import BenchmarkInstance, supply_chain, toy_example
from .model import PrimitiveSetSpec, make_primitive
from .synthesis import (
    AffinePolicy,
    SynthesisProgram,
    SynthesisReport,
    assemble_centralized,
    assemble_local,
    assemble_partially_nested,
    coord_block,
    dist_block,
    evaluate_policy,
    forecast_violation,
    pseudo_inverse_map,
    reconstruct_disturbance,
    scaled_projection_matrix,
)

__all__ = [
    "ClosedLoopTrace",
    "MetricTable",
    "open_loop_rollout",
    "closed_loop",
    "monte_carlo",
    "rotation_sweep",
    "uncertainty_sweep",
    "vertex_draws",
    "export",
    "read_back",
    "assemble",
    "clamp_to_primitive",
]

METHODS = ("centralized", "partially_nested", "local", "admm")


def assemble(instance: BenchmarkInstance, method: str, mode: str = "exact_polyhedral",
             primitives: dict | None = None) -> SynthesisProgram:
    prim = primitives if primitives is not None else instance.primitives
    if method == "centralized":
        return assemble_centralized(instance.net, mode)
    if method == "partially_nested":
        return assemble_partially_nested(instance.net, mode)
    if method == "local":
        return assemble_local(instance.net, prim, mode)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# open loop
# ---------------------------------------------------------------------------


def clamp_to_primitive(spec: PrimitiveSetSpec, s: np.ndarray, tol: float = 1e-9):
    """Project a nearly-member point into the primitive set, blockwise.

    Box/inf blocks are clipped, norm-type blocks radially shrunk. Returns
    (clamped point, True if any block actually moved)."""
    s = np.asarray(s, dtype=float).copy()
    moved = False
    for b in spec.blocks:
        viol = b.cone.violation(b.residual(s))
        if viol <= tol:
            continue
        moved = True
        comp = s[b.proj]
        if b.cone.kind == "inf":
            s[b.proj] = np.clip(comp, -1.0, 1.0) if b.g[0] == 1.0 else comp / (1.0 + viol)
        else:
            s[b.proj] = comp / (1.0 + viol / max(np.abs(b.g[0]), 1e-12))
    return s, moved


def _belief_coordinates(dec, x_stage: np.ndarray, t: int):
    """Stage-t primitive coordinates of a realized neighbor state."""
    n = dec.primitive.stage_width or dec.primitive.dim
    Y, _ = scaled_projection_matrix(dec)
    R = pseudo_inverse_map(Y) @ dec.primitive.frame_matrix().T
    rows = slice((t - 1) * n, t * n)
    full = np.zeros(dec.primitive.dim)
    full[rows] = np.asarray(x_stage) - dec.z[rows]
    return (R @ full)[rows]


@dataclass
class RolloutResult:
    x: dict  # agent -> stacked trajectory (T+1 stages)
    u: dict  # agent -> stacked inputs
    cost: dict  # agent -> realized cost
    clamp_events: int = 0

    @property
    def total_cost(self) -> float:
        return float(sum(self.cost.values()))


def open_loop_rollout(instance: BenchmarkInstance, report: SynthesisReport,
                      draws: dict) -> RolloutResult:
    """Evaluate synthesized policies stage-by-stage on the prediction model.

    ``draws[i]`` is agent i's stacked disturbance trajectory (must lie in its
    declared set). Local policies read realized neighbor states through the
    communicated forecast map; nearly-member coordinates are clamped into the
    primitive set and counted.
    """
    if report.status != "optimal":
        raise ValueError("rollout needs an optimal report")
    net = instance.net
    T = net.horizon
    x_stages = {i: [net.agents[i].x1.copy()] for i in range(net.M)}
    u_stages = {i: [] for i in range(net.M)}
    xi_hist = {i: [] for i in range(net.M)}
    coord_hist = {i: {j: [] for j in net.graph.neighbors[i]} for i in range(net.M)}
    clamps = 0
    local = report.method == "local"

    def xi_stage(i, t):
        ag = net.agents[i]
        off = int(np.sum(ag.stage_xi_dims[: t - 1]))
        return np.asarray(draws[i], dtype=float)[off : off + ag.stage_xi_dims[t - 1]]

    for t in range(1, T + 1):
        # beliefs at stage t become available before inputs are chosen
        if local:
            for i in range(net.M):
                for j in net.graph.neighbors[i]:
                    dec = report.forecasts[j]
                    s_t = _belief_coordinates(dec, x_stages[j][t - 1], t)
                    full = np.zeros(dec.primitive.dim)
                    n = dec.primitive.stage_width or dec.primitive.dim
                    full[(t - 1) * n : t * n] = s_t
                    clamped, moved = clamp_to_primitive(dec.primitive, full, tol=1e-7)
                    if moved:
                        clamps += 1
                    coord_hist[i][j].append(clamped[(t - 1) * n : t * n])
        for i in range(net.M):
            pol = report.policies[i]
            if local:
                hist = {dist_block(i): xi_hist[i]}
                for j in net.graph.neighbors[i]:
                    hist[coord_block(j)] = coord_hist[i][j]
            else:
                hist = {dist_block(j): xi_hist[j] for j in range(net.M)}
            u_stages[i].append(evaluate_policy(pol, hist, t))
        for i in range(net.M):
            ag = net.agents[i]
            st = ag.stages[t - 1]
            nb = (np.concatenate([x_stages[j][t - 1] for j in net.graph.neighbors[i]])
                  if net.graph.neighbors[i] else np.zeros(0))
            xi_t = xi_stage(i, t)
            x_next = st.A @ x_stages[i][t - 1] + st.B @ nb + st.D @ u_stages[i][t - 1] + st.E @ xi_t
            x_stages[i].append(x_next)
        for i in range(net.M):
            xi_hist[i].append(xi_stage(i, t))

    x = {i: np.concatenate(x_stages[i]) for i in range(net.M)}
    u = {i: (np.concatenate(u_stages[i]) if net.agents[i].N_u else np.zeros(0))
         for i in range(net.M)}
    cost = {i: net.agents[i].cost.evaluate(x[i], u[i]) for i in range(net.M)}
    return RolloutResult(x, u, cost, clamps)


def vertex_draws(instance: BenchmarkInstance, limit: int = 1024, seed: int = 7,
                 n_random: int = 1000):
    """Vertex draws of the product disturbance set: exhaustive when the count
    fits under `limit`, otherwise seeded random sign patterns."""
    net = instance.net
    dims = [instance.sampler.stacked_dim(i) for i in range(net.M)]
    total_bits = int(np.sum(dims))
    draws = []
    if total_bits <= np.log2(limit):
        for code in range(2 ** total_bits):
            bits = np.array([(code >> b) & 1 for b in range(total_bits)])
            off = 0
            d = {}
            for i in range(net.M):
                d[i] = instance.sampler.vertex_pattern(i, bits[off : off + dims[i]])
                off += dims[i]
            draws.append(d)
        return draws
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        d = {}
        for i in range(net.M):
            bits = rng.integers(0, 2, size=dims[i])
            d[i] = instance.sampler.vertex_pattern(i, bits)
        draws.append(d)
    return draws


def constraint_violation(instance: BenchmarkInstance, x: dict, u: dict) -> float:
    """Worst operational-constraint violation of realized stacked trajectories."""
    worst = 0.0
    for i in range(instance.net.M):
        ag = instance.net.agents[i]
        rows = ag.constraints.H_x @ x[i] + ag.constraints.H_u @ u[i] - ag.constraints.h
        worst = max(worst, float(np.max(rows, initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------


@dataclass
class ClosedLoopTrace:
    instance: str
    method: str
    seed: int
    states: list = field(default_factory=list)  # per step: dict agent -> state
    inputs: list = field(default_factory=list)
    disturbances: list = field(default_factory=list)
    step_times: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    step_costs: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)  # step indices where synthesis failed
    clamp_events: int = 0
    status: str = "ok"

    @property
    def steps(self) -> int:
        return len(self.inputs)

    def stage_cost(self) -> float:
        """Accumulated realized one-step costs along the closed-loop run."""
        return float(np.sum(self.step_costs))

    def rows(self) -> list:
        out = []
        for k in range(self.steps):
            row = {
                "step": k,
                "time": self.step_times[k],
                "violation": self.violations[k],
                "fallback": int(k in self.fallbacks),
            }
            for i in sorted(self.states[k]):
                for c, val in enumerate(np.asarray(self.states[k][i]).ravel()):
                    row[f"x{i}_{c}"] = float(val)
                for c, val in enumerate(np.asarray(self.inputs[k][i]).ravel()):
                    row[f"u{i}_{c}"] = float(val)
            out.append(row)
        return out


def _stage_box_violation(instance, x: dict, u: dict) -> float:
    sb = instance.meta.get("state_bound")
    ub = instance.meta.get("input_bound")
    worst = 0.0
    if sb is not None:
        worst = max(worst, max(float(np.max(np.abs(v) - sb, initial=0.0)) for v in x.values()))
    if ub is not None:
        worst = max(worst, max(
            float(np.max(np.abs(v) - ub, initial=0.0)) if np.asarray(v).size else 0.0
            for v in u.values()))
    return worst


def _step_cost(instance, x: dict, u: dict) -> float:
    """Realized one-step cost: stage-weight norms from the instance metadata
    (defaults to the infinity norm of the states)."""
    wx = instance.meta.get("cl_state_weight")
    wu = instance.meta.get("cl_input_weight", 0.0)
    total = 0.0
    for i, xv in x.items():
        xv = np.asarray(xv, dtype=float)
        v = (np.asarray(wx) * xv if wx is not None else xv)
        total += float(np.linalg.norm(v, np.inf))
        uv = np.asarray(u[i], dtype=float)
        if uv.size and wu:
            total += wu * float(np.linalg.norm(uv, np.inf))
    return total


def closed_loop(instance: BenchmarkInstance, method: str, steps: int, seed: int,
                solver=None, mode: str = "exact_polyhedral", x1: dict | None = None,
                program: SynthesisProgram | None = None,
                zero_disturbance_after: int | None = None) -> ClosedLoopTrace:
    """Receding-horizon run: re-synthesize each step on the prediction model
    with the measured state, apply the first inputs to the exact simulation
    model under sampled disturbances.

    If a step's synthesis fails, the previous policy is shifted (its next
    planned input is applied, reconstructing disturbances from observed
    transitions) and the event is recorded.
    """
    net = instance.net
    prog = program if program is not None else assemble(instance, method, mode)
    rng = np.random.default_rng(np.random.SeedSequence([instance.seed, seed, 0xC105ED]))
    x = {i: (np.asarray(x1[i], dtype=float) if x1 and i in x1 else net.agents[i].x1.copy())
         for i in range(net.M)}
    trace = ClosedLoopTrace(instance.name, method, seed)
    last_good: SynthesisReport | None = None
    last_good_hist = None
    offset = 0

    for k in range(steps):
        t0 = time.perf_counter()
        rep = prog.solve(solver, x1=x, diagnose=False)
        if rep.status == "optimal":
            last_good = rep
            offset = 1
            last_good_hist = {i: {"x": [x[i].copy()], "xi": [], "u": []} for i in range(net.M)}
        else:
            if last_good is None:
                trace.status = f"failed:{rep.status}"
                break
            trace.fallbacks.append(k)
            offset += 1
            if offset > net.horizon:
                trace.status = "fallback_exhausted"
                break
        u = {}
        for i in range(net.M):
            pol = last_good.policies[i]
            hist, n_clamped = _fallback_history(instance, last_good, last_good_hist, i, offset)
            trace.clamp_events += n_clamped
            u[i] = evaluate_policy(pol, hist, offset) if net.agents[i].stage_u_dims[offset - 1] else np.zeros(0)
        trace.step_times.append(time.perf_counter() - t0)
        xi = {i: instance.sampler.draw_stage(rng, i, 1) for i in range(net.M)}
        if zero_disturbance_after is not None and k >= zero_disturbance_after:
            xi = {i: np.zeros_like(v) for i, v in xi.items()}
        x_next = instance.sim_step(x, u, xi)
        trace.states.append({i: x[i].copy() for i in range(net.M)})
        trace.inputs.append(u)
        trace.disturbances.append(xi)
        trace.violations.append(_stage_box_violation(instance, x_next, u))
        trace.step_costs.append(_step_cost(instance, x, u))
        for i in range(net.M):
            last_good_hist[i]["x"].append(np.asarray(x_next[i], dtype=float))
            last_good_hist[i]["u"].append(u[i])
        x = {i: np.asarray(x_next[i], dtype=float) for i in range(net.M)}
    return trace


def _fallback_history(instance, report, hist, i, offset):
    """Policy input history for stage `offset` of the last good plan,
    reconstructed from observed transitions. Returns (history, clamp_count)."""
    net = instance.net
    clamps = 0
    out = {}
    # disturbance history (strictly causal: offset-1 stages)
    xi_list = []
    for t in range(1, offset):
        nb = (np.concatenate([hist[j]["x"][t - 1] for j in net.graph.neighbors[i]])
              if net.graph.neighbors[i] else np.zeros(0))
        xi, _resid = reconstruct_disturbance(net.agents[i], t, hist[i]["x"][t],
                                             hist[i]["x"][t - 1], nb, hist[i]["u"][t - 1])
        xi_list.append(xi)
    if report.method == "local":
        out[dist_block(i)] = xi_list
        for j in net.graph.neighbors[i]:
            dec = report.forecasts[j]
            coords = []
            for t in range(1, offset + 1):
                s_t = _belief_coordinates(dec, hist[j]["x"][t - 1], t)
                n = dec.primitive.stage_width or dec.primitive.dim
                full = np.zeros(dec.primitive.dim)
                full[(t - 1) * n : t * n] = s_t
                clamped, moved = clamp_to_primitive(dec.primitive, full, tol=1e-7)
                clamps += int(moved)
                coords.append(clamped[(t - 1) * n : t * n])
            out[coord_block(j)] = coords
    else:
        for j in range(net.M):
            if dist_block(j) in report.policies[i].coeffs:
                xi_j = []
                for t in range(1, offset):
                    nbj = (np.concatenate([hist[m]["x"][t - 1] for m in net.graph.neighbors[j]])
                           if net.graph.neighbors[j] else np.zeros(0))
                    xi, _ = reconstruct_disturbance(net.agents[j], t, hist[j]["x"][t],
                                                    hist[j]["x"][t - 1], nbj, hist[j]["u"][t - 1])
                    xi_j.append(xi)
                out[dist_block(j)] = xi_j
    return out, clamps


# ---------------------------------------------------------------------------
# Monte Carlo studies and sweeps
# ---------------------------------------------------------------------------


@dataclass
class MetricTable:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, **kw):
        self.rows.append({c: kw.get(c) for c in self.columns})

    def column(self, name, where: dict | None = None) -> list:
        out = []
        for r in self.rows:
            if where and any(r[k] != v for k, v in where.items()):
                continue
            out.append(r[name])
        return out

    def summarize(self, group_by, value) -> dict:
        groups = {}
        for r in self.rows:
            key = tuple(r[g] for g in group_by)
            groups.setdefault(key, []).append(r[value])
        return {
            k: {"min": float(np.min(v)), "max": float(np.max(v)), "mean": float(np.mean(v))}
            for k, v in groups.items() if all(x is not None for x in v)
        }


MC_COLUMNS = ["instance", "method", "run", "objective", "subopt_pct", "build_time",
              "solve_time", "closed_loop_cost", "status"]


def monte_carlo(instance: BenchmarkInstance, methods, n_runs: int, seed: int,
                x1_sampler=None, solver=None, mode: str = "exact_polyhedral",
                closed_loop_steps: int | None = None) -> MetricTable:
    """Repeated synthesis (and optional closed loop) across seeded draws.

    Suboptimality is reported against the centralized objective of the same
    run whenever "centralized" is among the methods. Runs use common random
    numbers across methods.
    """
    table = MetricTable(MC_COLUMNS)
    progs = {m: assemble(instance, m, mode) for m in methods}
    rng = np.random.default_rng(np.random.SeedSequence([seed, instance.seed]))
    run_seeds = rng.integers(0, 2**31 - 1, size=n_runs)
    for run in range(n_runs):
        x1 = x1_sampler(instance, np.random.default_rng(run_seeds[run])) if x1_sampler else None
        reports = {}
        for m in methods:
            rep = progs[m].solve(solver, x1=x1, diagnose=False)
            reports[m] = rep
        base = reports.get("centralized")
        for m in methods:
            rep = reports[m]
            sub = None
            if base is not None and base.status == "optimal" and rep.status == "optimal":
                sub = 100.0 * (rep.objective - base.objective) / abs(base.objective)
            cl_cost = None
            if closed_loop_steps:
                tr = closed_loop(instance, m, closed_loop_steps, int(run_seeds[run]),
                                 solver=solver, mode=mode, x1=x1, program=progs[m])
                cl_cost = tr.stage_cost() if tr.status == "ok" else None
            table.add(instance=instance.name, method=m, run=run,
                      objective=rep.objective, subopt_pct=sub,
                      build_time=progs[m].build_time, solve_time=rep.solve_time,
                      closed_loop_cost=cl_cost, status=rep.status)
    return table


SWEEP_COLUMNS = ["shape", "angle_deg", "status", "objective"]


def rotation_sweep(angles, solver=None, axis_ratio: float = 1.5) -> MetricTable:
    """Cost of the two-agent example as the communicated-set orientation turns.

    Sweeps independently scalable rotated rectangles (exact polyhedral mode)
    and fixed-ratio rotated ellipses (vertex mode for the conic containment);
    infeasible orientations are recorded as such.
    """
    inst = toy_example()
    table = MetricTable(SWEEP_COLUMNS)
    for shape, mode in (("rotated_rect", "exact_polyhedral"), ("rotated_ellipse", "vertex")):
        for ang in angles:
            prim = {0: make_primitive(shape, 2, inst.net.horizon, angle=float(ang),
                                      axis_ratio=axis_ratio)}
            prog = assemble_local(inst.net, prim, mode=mode)
            rep = prog.solve(solver)
            table.add(shape=shape, angle_deg=float(ang), status=rep.status,
                      objective=rep.objective)
    return table


UNC_COLUMNS = ["scale", "stage", "product", "width", "objective"]


def uncertainty_sweep(scales, n_agents: int = 3, n_products: int = 1, horizon: int = 24,
                      seed: int = 11, solver=None) -> MetricTable:
    """Communicated order-bound widths of the retailer as market uncertainty
    grows, per stage (the quantity-flexibility contract view)."""
    table = MetricTable(UNC_COLUMNS)
    for scale in scales:
        inst = supply_chain("chain", n_agents, n_products, horizon, seed,
                            uncertainty_scale=float(scale))
        rep = assemble_local(inst.net, inst.primitives).solve(solver)
        if rep.status != "optimal":
            table.add(scale=float(scale), stage=None, product=None, width=None,
                      objective=None)
            continue
        retailer = inst.meta["retailers"][0]
        dec = rep.forecasts[retailer]
        P = n_products
        nx = 2 * P
        for t in range(1, horizon + 2):
            for p in range(P):
                # block layout: per stage, per coordinate; order pipeline = coords P..2P-1
                width = float(dec.y[(t - 1) * nx + P + p])
                table.add(scale=float(scale), stage=t, product=p, width=width,
                          objective=rep.objective)
    return table


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def _to_rows(obj):
    if isinstance(obj, MetricTable):
        return list(obj.columns), obj.rows
    if isinstance(obj, ClosedLoopTrace):
        rows = obj.rows()
        cols = sorted({k for r in rows for k in r}, key=lambda c: (c != "step", c))
        return cols, rows
    raise TypeError(f"cannot export {type(obj)!r}")


def export(obj, path: str, fmt: str = "csv") -> str:
    """Write a table or trace; floats keep full precision (repr round-trip)."""
    cols, rows = _to_rows(obj)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                w.writerow([_cell(r.get(c)) for c in cols])
    elif fmt == "json":
        doc = {"schema": "decmpc-table-v1", "columns": cols, "rows": rows}
        if isinstance(obj, ClosedLoopTrace):
            doc.update({"schema": "decmpc-trace-v1", "instance": obj.instance,
                        "method": obj.method, "seed": obj.seed, "status": obj.status,
                        "clamp_events": obj.clamp_events})
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def read_back(path: str, fmt: str = "csv"):
    """Inverse of :func:`export`: returns (columns, rows) with numbers parsed."""
    if fmt == "json":
        with open(path) as fh:
            doc = json.load(fh)
        return doc["columns"], doc["rows"]
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        cols = next(rd)
        rows = []
        for raw in rd:
            row = {}
            for c, v in zip(cols, raw):
                if v == "":
                    row[c] = None
                else:
                    try:
                        row[c] = int(v)
                    except ValueError:
                        try:
                            row[c] = float(v)
                        except ValueError:
                            row[c] = v
            rows.append(row)
        return cols, rows
