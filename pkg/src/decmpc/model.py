"""Network model: agents, coupling graph, stacked dynamics, uncertainty sets,
and the primitive geometry behind communicated state forecast sets.

Conventions
-----------
* Stages are 1-based in the math; arrays are 0-based. An agent with horizon T
  has states x_1 .. x_{T+1} (x_1 known), inputs u_1 .. u_T and disturbances
  xi_1 .. xi_T. Input/disturbance widths may vary per stage (width 0 allowed).
* A coupling arc j -> i means the states of agent j enter agent i's dynamics;
  j is then a neighbor of i. Neighbor column blocks are ordered by ascending
  agent id.
* Cone constraints are written "u preceq_K v", meaning v - u lies in K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StageDynamics",
    "Constraints",
    "CostAtom",
    "CostSpec",
    "norm_cost",
    "PolyhedralSet",
    "box_set",
    "ConeSpec",
    "PrimitiveBlock",
    "PrimitiveSetSpec",
    "CouplingGraph",
    "AgentModel",
    "Network",
    "StackedDynamics",
    "stack_dynamics",
    "precedent_closure",
    "make_primitive",
    "check_bounded",
]

_RANK_RTOL = 1e-8  # smallest/largest singular value threshold for rank checks


@dataclass(frozen=True)
class StageDynamics:
    """One stage of x_{t+1} = A x_t + B x_{N,t} + D u_t + E xi_t."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "D", "E"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        for name in ("B", "D", "E"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} row count must match state dimension {n}")

    def rank_deficient(self) -> list:
        """Names of D/E blocks that fail the full-column-rank check."""
        out = []
        for name in ("D", "E"):
            M = getattr(self, name)
            if M.shape[1] == 0:
                continue
            s = np.linalg.svd(M, compute_uv=False)
            if s[-1] <= _RANK_RTOL * s[0]:
                out.append(name)
        return out


@dataclass(frozen=True)
class Constraints:
    """Linear operational constraints H_x x + H_u u <= h over stacked trajectories."""

    H_x: np.ndarray
    H_u: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "H_x", np.atleast_2d(np.asarray(self.H_x, dtype=float)))
        object.__setattr__(self, "H_u", np.atleast_2d(np.asarray(self.H_u, dtype=float)))
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float).ravel())
        if self.H_x.shape[0] != self.h.size or self.H_u.shape[0] != self.h.size:
            raise ValueError("constraint row counts disagree")


@dataclass(frozen=True)
class CostAtom:
    """One piecewise-linear objective term: max over rows of Fx x + Fu u + g."""

    Fx: np.ndarray
    Fu: np.ndarray
    g: np.ndarray
    soc: bool = False  # True: value = ||Fx x + Fu u + g||_2 (vertex mode only)


@dataclass(frozen=True)
class CostSpec:
    """Objective = sum of atoms; each atom is robustified independently."""

    atoms: tuple

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))

    @property
    def needs_vertex_mode(self) -> bool:
        return any(a.soc for a in self.atoms)

    def evaluate(self, x: np.ndarray, u: np.ndarray) -> float:
        total = 0.0
        for a in self.atoms:
            v = a.Fx @ x + a.Fu @ u + a.g
            total += float(np.linalg.norm(v)) if a.soc else float(np.max(v))
        return total


def norm_cost(Q, R, p, T: int, n_x: int, stage_u_dims, state_stages=None) -> CostSpec:
    """Stagewise norm objective: sum_t ||Q x_t||_p + ||R u_t||_p.

    `p` is one of inf, 1, 2 (math.inf or the strings "inf"/"1"/"2" accepted).
    `state_stages` selects which state stages are penalized (default 1..T,
    matching the printed objective; pass e.g. range(2, T+2) to include the
    terminal stage instead of the known initial one).
    """
    p = {"inf": math.inf, "1": 1, "2": 2, math.inf: math.inf, 1: 1, 2: 2}[p]
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    N_x = (T + 1) * n_x
    stage_u_dims = list(stage_u_dims)
    N_u = sum(stage_u_dims)
    u_off = np.concatenate([[0], np.cumsum(stage_u_dims)]).astype(int)
    atoms = []
    if state_stages is None:
        state_stages = range(1, T + 1)

    def _place_x(M, t):  # stage t (1-based) rows into stacked x columns
        F = np.zeros((M.shape[0], N_x))
        F[:, (t - 1) * n_x : t * n_x] = M
        return F

    def _place_u(M, t):
        F = np.zeros((M.shape[0], N_u))
        F[:, u_off[t - 1] : u_off[t]] = M
        return F

    def _emit(M, place, t):
        if M.shape[1] == 0 or not np.any(M):
            return
        if p == math.inf:
            F = place(np.vstack([M, -M]), t)
            atoms.append(CostAtom(F if place is _place_x else np.zeros((F.shape[0], N_x)),
                                  F if place is _place_u else np.zeros((F.shape[0], N_u)),
                                  np.zeros(F.shape[0])))
        elif p == 1:
            for r in range(M.shape[0]):
                F = place(np.vstack([M[r : r + 1], -M[r : r + 1]]), t)
                atoms.append(CostAtom(F if place is _place_x else np.zeros((2, N_x)),
                                      F if place is _place_u else np.zeros((2, N_u)),
                                      np.zeros(2)))
        else:  # p == 2
            F = place(M, t)
            atoms.append(CostAtom(F if place is _place_x else np.zeros((F.shape[0], N_x)),
                                  F if place is _place_u else np.zeros((F.shape[0], N_u)),
                                  np.zeros(F.shape[0]), soc=True))

    for t in state_stages:
        _emit(Q, _place_x, t)
    for t in range(1, T + 1):
        if stage_u_dims[t - 1] and R.shape[1] == stage_u_dims[t - 1] and np.any(R):
            _emit(R, _place_u, t)
    return CostSpec(tuple(atoms))


# ---------------------------------------------------------------------------
# uncertainty sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolyhedralSet:
    """Polytope {v : W v >= w}; validated nonempty and bounded on construction."""

    W: np.ndarray
    w: np.ndarray
    skip_validation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "W", np.atleast_2d(np.asarray(self.W, dtype=float)))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).ravel())
        if self.W.shape[0] != self.w.size:
            raise ValueError("W/w row mismatch")
        if not self.skip_validation:
            if self.interior_point() is None:
                raise ValueError("polyhedral set is empty")
            ok, direction = check_bounded(self)
            if not ok:
                raise ValueError(f"polyhedral set unbounded along {direction}")

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def contains(self, v, tol: float = 1e-9) -> bool:
        return bool(np.all(self.W @ np.asarray(v, dtype=float) >= self.w - tol))

    def violation(self, v) -> float:
        return float(np.max(self.w - self.W @ np.asarray(v, dtype=float), initial=0.0))

    def support(self, c) -> float:
        """sup { c.v : v in set } via LP."""
        from scipy.optimize import linprog

        res = linprog(-np.asarray(c, dtype=float), A_ub=-self.W, b_ub=-self.w,
                      bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 3:
            return math.inf
        if res.status != 0:
            raise RuntimeError(f"support LP failed: {res.message}")
        return float(-res.fun)

    def interior_point(self):
        """Chebyshev-style feasible point, or None if empty."""
        from scipy.optimize import linprog

        norms = np.linalg.norm(self.W, axis=1)
        # max r s.t. W v - r*||W_row|| >= w
        A = np.hstack([-self.W, norms[:, None]])
        res = linprog(
            np.concatenate([np.zeros(self.dim), [-1.0]]),
            A_ub=A,
            b_ub=-self.w,
            bounds=[(None, None)] * self.dim + [(0, None)],
            method="highs",
        )
        if res.status != 0:
            return None
        return np.asarray(res.x[: self.dim])


def box_set(lo, hi) -> PolyhedralSet:
    """Axis-aligned box {v : lo <= v <= hi} as a PolyhedralSet."""
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    if lo.size != hi.size or np.any(hi < lo):
        raise ValueError("invalid box bounds")
    n = lo.size
    I = np.eye(n)
    return PolyhedralSet(np.vstack([I, -I]), np.concatenate([lo, -hi]), skip_validation=True)


@dataclass(frozen=True)
class ConeSpec:
    """Supported cones: nonnegative orthant, infinity-norm cone, second-order cone.

    For "inf" and "soc" the first component is the bound: (t, v) in K iff
    ||v||_inf <= t resp. ||v||_2 <= t.
    """

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in ("orthant", "inf", "soc"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("cone dim must be >= 1")

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        if self.kind == "orthant":
            return bool(np.all(v >= -tol))
        if self.kind == "inf":
            return bool(v[0] >= np.max(np.abs(v[1:]), initial=0.0) - tol)
        return bool(v[0] >= np.linalg.norm(v[1:]) - tol)

    def violation(self, v) -> float:
        v = np.asarray(v, dtype=float)
        if self.kind == "orthant":
            return float(np.max(-v, initial=0.0))
        if self.kind == "inf":
            return float(max(np.max(np.abs(v[1:]), initial=0.0) - v[0], 0.0))
        return float(max(np.linalg.norm(v[1:]) - v[0], 0.0))


@dataclass(frozen=True)
class PrimitiveBlock:
    """One block of a primitive set: G (proj s) preceq_K g on the coordinates
    selected by `proj` (indices where the 0/1-diagonal projection is one)."""

    proj: np.ndarray  # sorted coordinate indices
    G: np.ndarray  # (len(g), dim) rows supported on proj columns
    g: np.ndarray
    cone: ConeSpec

    def __post_init__(self):
        object.__setattr__(self, "proj", np.asarray(self.proj, dtype=np.int64))
        object.__setattr__(self, "G", np.atleast_2d(np.asarray(self.G, dtype=float)))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float).ravel())
        if self.G.shape[0] != self.g.size or self.g.size != self.cone.dim:
            raise ValueError("block row counts disagree with cone dim")

    def residual(self, s) -> np.ndarray:
        """Cone-space vector g - G s; membership means it lies in the cone."""
        return self.g - self.G @ np.asarray(s, dtype=float)


@dataclass(frozen=True)
class PrimitiveSetSpec:
    """Primitive set S plus an optional fixed orthogonal frame.

    S = {s : G_k (P_k s) preceq_{K_k} g_k, k = 1..K}. The induced forecast set
    is X(y, z) = { frame @ (sum_k y_k P_k s) + z : s in S }; the frame realizes
    rotated variants and defaults to the identity.
    """

    dim: int
    blocks: tuple
    frame: np.ndarray | None = None
    kind: str = "custom"
    stage_width: int = 0  # per-stage coordinate count; 0 means single-block/unknown

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        cover = np.concatenate([b.proj for b in self.blocks]) if self.blocks else np.zeros(0, int)
        if np.unique(cover).size != cover.size or cover.size != self.dim:
            raise ValueError("projections must partition the coordinates exactly")
        if self.frame is not None:
            F = np.asarray(self.frame, dtype=float)
            object.__setattr__(self, "frame", F)
            if F.shape != (self.dim, self.dim) or not np.allclose(F.T @ F, np.eye(self.dim), atol=1e-10):
                raise ValueError("frame must be orthogonal")
        for k, b in enumerate(self.blocks):
            off_proj = np.setdiff1d(np.arange(self.dim), b.proj)
            if off_proj.size and np.any(b.G[:, off_proj]):
                raise ValueError(f"block {k} has G support outside its projection")
            if not b.cone.contains(b.g):
                raise ValueError(f"block {k} does not contain the origin (g must lie in K)")
        ok, direction = check_bounded(self)
        if not ok:
            raise ValueError(f"primitive set unbounded along {direction}")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def frame_matrix(self) -> np.ndarray:
        return np.eye(self.dim) if self.frame is None else self.frame

    def contains(self, s, tol: float = 1e-8) -> bool:
        return all(b.cone.contains(b.residual(s), tol) for b in self.blocks)

    def block_violation(self, s) -> float:
        return max(b.cone.violation(b.residual(s)) for b in self.blocks)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Random points of S (interior and boundary mixed), shape (n, dim)."""
        out = np.zeros((n, self.dim))
        for b in self.blocks:
            m = b.proj.size
            if b.cone.kind == "soc" and b.G.shape[0] == m + 1:
                # ||N s|| <= 1 pattern: push through N^{-1}
                N = -b.G[1:][:, b.proj]
                raw = rng.normal(size=(n, m))
                raw /= np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
                radii = rng.uniform(0, 1, size=(n, 1)) ** (1.0 / m)
                pts = (radii * raw) @ np.linalg.inv(N).T
            else:
                # accept-reject from the bounding box of the block
                pts = np.zeros((n, m))
                lo, hi = _block_box(self, b)
                filled = 0
                while filled < n:
                    cand = rng.uniform(lo, hi, size=(4 * (n - filled), m))
                    full = np.zeros((cand.shape[0], self.dim))
                    full[:, b.proj] = cand
                    ok = np.array([b.cone.contains(b.residual(v)) for v in full])
                    take = cand[ok][: n - filled]
                    pts[filled : filled + take.shape[0]] = take
                    filled += take.shape[0]
            out[:, b.proj] = pts
        return out


def _block_box(spec: PrimitiveSetSpec, b: PrimitiveBlock):
    """Per-coordinate support bounds of one block (used for sampling)."""
    lo, hi = [], []
    for c in b.proj:
        e = np.zeros(spec.dim)
        e[c] = 1.0
        hi.append(_block_support(b, e))
        lo.append(-_block_support(b, -e))
    return np.array(lo), np.array(hi)


def _block_support(b: PrimitiveBlock, c: np.ndarray) -> float:
    """sup { c.s : g - G s in K } for a single block, by small conic solve."""
    from .conic import CvxoptSolver, ProgramBuilder

    pb = ProgramBuilder()
    s = pb.add_vars("s", b.proj.size)
    Gp = b.G[:, b.proj]
    if b.cone.kind == "orthant":
        rows, cols = np.nonzero(Gp)
        pb.add_ub(rows, s[cols], Gp[rows, cols], b.g, "blk")
    elif b.cone.kind == "inf":
        # g - G s in K_inf  <=>  |(g - G s)_i| <= (g - G s)_0 for i >= 1
        t_row, t_g = Gp[0], b.g[0]
        for i in range(1, b.g.size):
            for sgn in (1.0, -1.0):
                row = sgn * Gp[i] - t_row
                pb.add_ub(np.zeros(b.proj.size), s, row, [t_g - sgn * b.g[i]], "blk")
    else:
        F = -Gp
        rows, cols = np.nonzero(F)
        pb.add_soc(rows, s[cols], F[rows, cols], b.g, b.g.size, "blk")
    pb.add_obj(s, -c[b.proj])
    res = CvxoptSolver().solve(pb.build())
    if res.status == "unbounded":
        return math.inf
    if res.status != "optimal":
        raise RuntimeError(f"block support solve failed: {res.status}")
    return -res.objective


# ---------------------------------------------------------------------------
# graph / agents / network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingGraph:
    """Directed coupling structure: neighbors[i] lists the agents whose states
    enter agent i's dynamics, in ascending id order."""

    M: int
    neighbors: tuple

    def __post_init__(self):
        nb = []
        for i in range(self.M):
            lst = sorted(self.neighbors[i]) if i < len(self.neighbors) else []
            if i in lst:
                raise ValueError(f"agent {i} cannot neighbor itself")
            if any(j < 0 or j >= self.M for j in lst):
                raise ValueError("neighbor id out of range")
            nb.append(tuple(lst))
        object.__setattr__(self, "neighbors", tuple(nb))

    def consumers(self, j: int) -> list:
        """Agents whose dynamics consume agent j's states."""
        return [i for i in range(self.M) if j in self.neighbors[i]]


@dataclass
class AgentModel:
    """Per-agent data: initial state, stage dynamics, constraints, cost,
    disturbance set over the stacked disturbance trajectory."""

    id: int
    x1: np.ndarray
    stages: list
    constraints: Constraints
    cost: CostSpec
    disturbance_set: PolyhedralSet
    rank_flags: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=float).ravel()
        self.stages = list(self.stages)
        n_x = self.x1.size
        for t, st in enumerate(self.stages):
            if st.A.shape[0] != n_x:
                raise ValueError(f"agent {self.id} stage {t + 1}: state dim mismatch")
            for name in st.rank_deficient():
                self.rank_flags.append(f"stage {t + 1}: {name} rank deficient")

    @property
    def n_x(self) -> int:
        return self.x1.size

    @property
    def T(self) -> int:
        return len(self.stages)

    @property
    def N_x(self) -> int:
        return (self.T + 1) * self.n_x

    @property
    def stage_u_dims(self) -> list:
        return [st.D.shape[1] for st in self.stages]

    @property
    def stage_xi_dims(self) -> list:
        return [st.E.shape[1] for st in self.stages]

    @property
    def N_u(self) -> int:
        return sum(self.stage_u_dims)

    @property
    def N_xi(self) -> int:
        return sum(self.stage_xi_dims)

    def state_stage_slice(self, t: int) -> slice:
        """Columns of stage-t states (1-based) in the stacked trajectory."""
        return slice((t - 1) * self.n_x, t * self.n_x)


@dataclass
class Network:
    """Validated collection of agents over a shared horizon."""

    graph: CouplingGraph
    agents: list
    horizon: int

    def __post_init__(self):
        if len(self.agents) != self.graph.M:
            raise ValueError("agent count mismatch with graph")
        for i, ag in enumerate(self.agents):
            if ag.id != i:
                raise ValueError("agents must be listed in id order")
            if ag.T != self.horizon:
                raise ValueError(f"agent {i} horizon {ag.T} != network horizon {self.horizon}")
            nb_dim = sum(self.agents[j].n_x for j in self.graph.neighbors[i])
            for t, st in enumerate(ag.stages):
                if st.B.shape[1] != nb_dim:
                    raise ValueError(
                        f"agent {i} stage {t + 1}: B has {st.B.shape[1]} columns, "
                        f"neighbor states total {nb_dim}"
                    )
            if ag.constraints.H_x.shape[1] != ag.N_x or ag.constraints.H_u.shape[1] != ag.N_u:
                raise ValueError(f"agent {i}: constraint matrix widths disagree with trajectory dims")
            if ag.disturbance_set.dim != ag.N_xi:
                raise ValueError(f"agent {i}: disturbance set dim {ag.disturbance_set.dim} != {ag.N_xi}")
            for a in ag.cost.atoms:
                if a.Fx.shape[1] != ag.N_x or a.Fu.shape[1] != ag.N_u:
                    raise ValueError(f"agent {i}: cost atom widths disagree")

    @property
    def M(self) -> int:
        return self.graph.M

    def neighbor_state_dim(self, i: int) -> int:
        return sum(self.agents[j].n_x for j in self.graph.neighbors[i])


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StackedDynamics:
    """Trajectory map x = A x_1 + B x_nb + D u + E xi (x includes stages 1..T+1;
    the neighbor trajectory covers stages 1..T)."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    E: np.ndarray


def stack_dynamics(agent: AgentModel, graph: CouplingGraph) -> StackedDynamics:
    """Unroll the stage recursion into one affine trajectory map."""
    n, T = agent.n_x, agent.T
    nb_dim = agent.stages[0].B.shape[1]
    N_x = (T + 1) * n
    A = np.zeros((N_x, n))
    B = np.zeros((N_x, T * nb_dim))
    D = np.zeros((N_x, agent.N_u))
    E = np.zeros((N_x, agent.N_xi))
    A[:n] = np.eye(n)
    u_off = np.concatenate([[0], np.cumsum(agent.stage_u_dims)]).astype(int)
    xi_off = np.concatenate([[0], np.cumsum(agent.stage_xi_dims)]).astype(int)
    for t in range(1, T + 1):  # fill rows of x_{t+1}
        st = agent.stages[t - 1]
        rprev = slice((t - 1) * n, t * n)
        rnext = slice(t * n, (t + 1) * n)
        A[rnext] = st.A @ A[rprev]
        B[rnext] = st.A @ B[rprev]
        B[rnext, (t - 1) * nb_dim : t * nb_dim] += st.B
        D[rnext] = st.A @ D[rprev]
        D[rnext, u_off[t - 1] : u_off[t]] += st.D
        E[rnext] = st.A @ E[rprev]
        E[rnext, xi_off[t - 1] : xi_off[t]] += st.E
    return StackedDynamics(A, B, D, E)


def precedent_closure(graph: CouplingGraph) -> dict:
    """Reflexive-transitive closure: i |-> set of i and all agents upstream of it."""
    closure = {}
    for i in range(graph.M):
        seen = {i}
        frontier = [i]
        while frontier:
            nxt = []
            for v in frontier:
                for p in graph.neighbors[v]:
                    if p not in seen:
                        seen.add(p)
                        nxt.append(p)
            frontier = nxt
        closure[i] = frozenset(seen)
    return closure


def _rot2(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def make_primitive(
    kind: str,
    n_x: int,
    T: int,
    grouping: str = "per_stage",
    angle: float = 0.0,
    axis_ratio: float = 1.5,
) -> PrimitiveSetSpec:
    """Build a primitive set over the (T+1)*n_x trajectory space.

    Kinds: "box" (unit box, one scale per stage per coordinate), "rhombus"
    (unit cross-polytope per stage), "ball" (unit 2-ball per stage),
    "rotated_rect(angle)" (box blocks in a rotated frame, n_x = 2),
    "rotated_ellipse(angle, axis_ratio)" (minor axis = 1/axis_ratio, n_x = 2).
    `grouping` = "per_stage" gives independent scales per stage; "all_stages"
    shares one scale across the horizon per coordinate group.
    """
    if axis_ratio <= 0:
        raise ValueError("axis_ratio must be positive")
    if kind in ("rotated_rect", "rotated_ellipse") and n_x != 2:
        raise ValueError(f"{kind} requires two-dimensional stage states")
    if kind == "rhombus" and n_x > 3:
        raise ValueError("rhombus blocks are limited to stage dimension <= 3")
    if grouping not in ("per_stage", "all_stages"):
        raise ValueError(f"unknown grouping {grouping!r}")
    S = T + 1
    N = S * n_x
    stage_groups = [[t] for t in range(S)] if grouping == "per_stage" else [list(range(S))]
    blocks = []

    def coords(stages, local):
        return np.array([t * n_x + c for t in stages for c in local], dtype=np.int64)

    for stages in stage_groups:
        if kind in ("box", "rotated_rect"):
            for c in range(n_x):
                proj = coords(stages, [c])
                G = np.zeros((1 + proj.size, N))
                G[1:, proj] = -np.eye(proj.size)
                g = np.zeros(1 + proj.size)
                g[0] = 1.0
                blocks.append(PrimitiveBlock(proj, G, g, ConeSpec("inf", g.size)))
        elif kind == "rhombus":
            proj = coords(stages, range(n_x))
            signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * n_x))).T.reshape(-1, n_x)
            rows = []
            for t_local in range(len(stages)):
                block_rows = np.zeros((signs.shape[0], N))
                block_rows[:, proj[t_local * n_x : (t_local + 1) * n_x]] = signs
                rows.append(block_rows)
            G = np.vstack(rows)
            blocks.append(PrimitiveBlock(proj, G, np.ones(G.shape[0]), ConeSpec("orthant", G.shape[0])))
        elif kind in ("ball", "rotated_ellipse"):
            scale = np.eye(n_x) if kind == "ball" else np.diag([1.0, axis_ratio])
            proj = coords(stages, range(n_x))
            G = np.zeros((1 + proj.size, N))
            for k in range(len(stages)):
                G[1 + k * n_x : 1 + (k + 1) * n_x, proj[k * n_x : (k + 1) * n_x]] = -scale
            g = np.zeros(1 + proj.size)
            g[0] = 1.0
            blocks.append(PrimitiveBlock(proj, G, g, ConeSpec("soc", g.size)))
        else:
            raise ValueError(f"unknown primitive kind {kind!r}")

    frame = None
    if kind in ("rotated_rect", "rotated_ellipse") and angle % 360.0 != 0.0:
        R = _rot2(angle)
        frame = np.kron(np.eye(S), R)
    return PrimitiveSetSpec(N, tuple(blocks), frame, kind=kind, stage_width=n_x)


def check_bounded(spec) -> tuple:
    """Boundedness certificate.

    Returns (True, None) when every coordinate direction has finite support
    value, else (False, witnessing_direction).
    """
    if isinstance(spec, PolyhedralSet):
        from scipy.optimize import linprog

        for c in range(spec.dim):
            for sgn in (1.0, -1.0):
                obj = np.zeros(spec.dim)
                obj[c] = -sgn
                res = linprog(obj, A_ub=-spec.W, b_ub=-spec.w,
                              bounds=[(None, None)] * spec.dim, method="highs")
                if res.status == 3:
                    d = np.zeros(spec.dim)
                    d[c] = sgn
                    return False, d
        return True, None
    if isinstance(spec, PrimitiveSetSpec) or (hasattr(spec, "blocks") and hasattr(spec, "dim")):
        for b in spec.blocks:
            Gp = b.G[:, b.proj]
            if b.cone.kind == "orthant":
                # recession direction d with G d <= 0, found by LP on the unit box
                from scipy.optimize import linprog

                m = b.proj.size
                for c in range(m):
                    for sgn in (1.0, -1.0):
                        obj = np.zeros(m)
                        obj[c] = -sgn
                        res = linprog(obj, A_ub=Gp, b_ub=np.zeros(b.g.size),
                                      bounds=[(-1, 1)] * m, method="highs")
                        if res.status == 0 and -res.fun > 1e-9:
                            d = np.zeros(spec.dim)
                            d[b.proj] = res.x
                            return False, d
            else:
                # (g - G d)-recession needs norm-part rows to kill d: check injectivity
                norm_rows = Gp[1:] if not np.any(Gp[0]) else Gp
                s = np.linalg.svd(norm_rows, compute_uv=False) if norm_rows.size else np.zeros(0)
                if s.size < b.proj.size or (s.size and s[-1] <= 1e-10 * max(s[0], 1.0)):
                    null = np.linalg.svd(norm_rows)[2][-1] if norm_rows.size else np.zeros(b.proj.size)
                    d = np.zeros(spec.dim)
                    d[b.proj] = null if np.asarray(null).size == b.proj.size else 0.0
                    return False, d
        return True, None
    raise TypeError(f"cannot check boundedness of {type(spec)!r}")
