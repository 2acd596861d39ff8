import itertools

import numpy as np
import pytest

from decmpc.affine import DecAffine, UncertainAffineExpr
from decmpc.conic import CvxoptSolver, HighsSolver, ProgramBuilder, default_solver
from decmpc.model import (
    ConeSpec,
    CostAtom,
    PolyhedralSet,
    box_set,
    make_primitive,
)
from decmpc.robust import (
    UncertaintyBlock,
    add_robust_upper_bounds,
    dualize_cone_constraint,
    dualize_linear_row,
    enumerate_vertices,
    epigraph_objective,
    primitive_vertices,
    sample_polytope,
    worst_case_value,
)

from conftest import random_polytope


def min_t_worst_case(coeffs: dict, blocks: dict, const: float = 0.0) -> float:
    """min t subject to (const + sum_b c_b.omega_b - t <= 0 for all omega):
    the counterpart optimum equals the worst-case value."""
    pb = ProgramBuilder()
    t = pb.add_vars("t", 1)
    cexpr = DecAffine((1,), np.array([0]), t, np.array([-1.0]), np.array([float(const)]))
    expr = UncertainAffineExpr(
        1, cexpr, {n: DecAffine.constant(np.atleast_2d(c)) for n, c in coeffs.items()}
    )
    add_robust_upper_bounds(pb, expr, blocks, "wc")
    pb.add_obj(t, [1.0])
    res = default_solver().solve(pb.build())
    assert res.status == "optimal", res.status
    return res.objective


def test_dualize_one_norm_worst_case():
    # sup over unit inf-ball of c.xi = ||c||_1; c = (1, -2) -> 3
    blocks = {"xi": UncertaintyBlock("xi", box_set([-1, -1], [1, 1]))}
    assert min_t_worst_case({"xi": [1.0, -2.0]}, blocks) == pytest.approx(3.0, abs=1e-8)


def test_dualize_zero_coefficients_reduces_to_constant():
    blocks = {"xi": UncertaintyBlock("xi", box_set([-1], [1]))}
    assert min_t_worst_case({"xi": [0.0]}, blocks, const=-2.5) == pytest.approx(-2.5, abs=1e-9)


def test_dualize_singleton_set():
    v0 = np.array([0.7, -0.3])
    singleton = PolyhedralSet(np.vstack([np.eye(2), -np.eye(2)]),
                              np.concatenate([v0, -v0]), skip_validation=True)
    blocks = {"xi": UncertaintyBlock("xi", singleton)}
    c = np.array([2.0, 1.0])
    assert min_t_worst_case({"xi": c}, blocks) == pytest.approx(float(c @ v0), abs=1e-8)


def test_dualize_primitive_ball_support():
    # worst case of c.s over a per-stage unit ball equals ||c||_2 per stage
    spec = make_primitive("ball", n_x=2, T=0)
    blocks = {"s": UncertaintyBlock("s", spec)}
    c = np.array([3.0, 4.0])
    assert min_t_worst_case({"s": c}, blocks) == pytest.approx(5.0, abs=1e-7)


def test_dualize_primitive_box_and_rhombus():
    box = make_primitive("box", n_x=2, T=0)
    rho = make_primitive("rhombus", n_x=2, T=0)
    c = np.array([1.0, -2.0])
    assert min_t_worst_case({"s": c}, {"s": UncertaintyBlock("s", box)}) == pytest.approx(3.0, abs=1e-7)
    # rhombus (cross-polytope) support = ||c||_inf
    assert min_t_worst_case({"s": c}, {"s": UncertaintyBlock("s", rho)}) == pytest.approx(2.0, abs=1e-7)


def test_dualize_linear_row_requires_scalar(rng):
    pb = ProgramBuilder()
    expr = UncertainAffineExpr(2, DecAffine.constant(np.zeros(2)), {})
    with pytest.raises(ValueError):
        dualize_linear_row(pb, expr, {})


# ---------------------------------------------------------------------------
# vertex enumeration
# ---------------------------------------------------------------------------


def test_vertices_unit_box():
    v = enumerate_vertices(box_set([-1, -1], [1, 1]))
    assert v.shape == (4, 2)
    assert {tuple(x) for x in v} == {(1, 1), (1, -1), (-1, 1), (-1, -1)}


def test_vertices_simplex():
    W = np.vstack([np.eye(3), -np.ones((1, 3))])
    w = np.array([0.0, 0.0, 0.0, -1.0])
    v = enumerate_vertices(PolyhedralSet(W, w, skip_validation=True))
    assert v.shape == (4, 3)


def test_vertices_active_rows():
    pset = box_set([-1, -1], [1, 1])
    for v in enumerate_vertices(pset):
        active = np.sum(np.abs(pset.W @ v - pset.w) <= 1e-8)
        assert active >= pset.dim


def test_vertices_degenerate_segment():
    # flat set: x + y = 1, 0 <= x <= 1 (a segment in R^2)
    W = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, 0.0], [-1.0, 0.0]])
    w = np.array([1.0, -1.0, 0.0, -1.0])
    v = enumerate_vertices(PolyhedralSet(W, w, skip_validation=True))
    assert v.shape == (2, 2)
    assert {tuple(np.round(x, 8)) for x in v} == {(0.0, 1.0), (1.0, 0.0)}


def test_vertices_dim_guard():
    with pytest.raises(ValueError):
        enumerate_vertices(box_set(-np.ones(13), np.ones(13)))


def test_vertices_match_lp_support(rng):
    for _ in range(10):
        pset = random_polytope(rng, int(rng.integers(2, 5)))
        verts = enumerate_vertices(pset)
        for _ in range(20):
            c = rng.normal(size=pset.dim)
            assert np.max(verts @ c) == pytest.approx(pset.support(c), abs=1e-7)


def test_primitive_vertices_box():
    spec = make_primitive("box", n_x=2, T=0)
    v = primitive_vertices(spec)
    assert v.shape == (4, 2)


# ---------------------------------------------------------------------------
# worst_case_value oracle
# ---------------------------------------------------------------------------


def test_worst_case_constant():
    e = UncertainAffineExpr.constant([4.2])
    assert worst_case_value(e, {}) == pytest.approx(4.2)


def test_worst_case_box():
    blocks = {"xi": UncertaintyBlock("xi", box_set([-1, -1], [1, 1]))}
    e = UncertainAffineExpr(1, DecAffine.constant([0.0]),
                            {"xi": DecAffine.constant([[1.0, 1.0]])})
    assert worst_case_value(e, blocks) == pytest.approx(2.0)


def test_worst_case_matches_vertex_max(rng):
    for _ in range(50):
        dim = int(rng.integers(1, 4))
        pset = random_polytope(rng, dim, extra_cuts=int(rng.integers(0, 3)))
        blocks = {"xi": UncertaintyBlock("xi", pset)}
        c = rng.normal(size=dim)
        e = UncertainAffineExpr(1, DecAffine.constant([rng.normal()]),
                                {"xi": DecAffine.constant(c[None, :])})
        verts = enumerate_vertices(pset)
        oracle = float(np.max(verts @ c)) + float(e.const.const[0])
        assert worst_case_value(e, blocks) == pytest.approx(oracle, abs=1e-7)


def test_counterpart_duality_tightness(rng):
    # counterpart optimum equals vertex-enumeration worst case within 1e-6
    for _ in range(25):
        dim = int(rng.integers(1, 5))
        pset = random_polytope(rng, dim, extra_cuts=int(rng.integers(0, 3)))
        blocks = {"xi": UncertaintyBlock("xi", pset)}
        c = rng.normal(size=dim)
        counterpart = min_t_worst_case({"xi": c}, blocks)
        verts = enumerate_vertices(pset)
        assert counterpart == pytest.approx(float(np.max(verts @ c)), abs=1e-6)


# ---------------------------------------------------------------------------
# robust cone constraints
# ---------------------------------------------------------------------------


def _feasible_scale(cone_kind, mode, facets=16):
    """max alpha s.t. (1, alpha*omega) robustly in cone, omega in unit box.

    For the true SOC constraint the answer is 1/sqrt(2); polyhedral inner
    approximations must return less (conservative) or equal (exact).
    """
    pb = ProgramBuilder()
    alpha = pb.add_vars("alpha", 1, nonneg=True)
    const = DecAffine.constant(np.array([1.0, 0.0, 0.0]))
    coeff = DecAffine((3, 2), np.array([2, 5]), np.array([alpha[0], alpha[0]]),
                      np.array([1.0, 1.0]), np.zeros(6))
    expr = UncertainAffineExpr(3, const, {"xi": coeff})
    blocks = {"xi": UncertaintyBlock("xi", box_set([-1, -1], [1, 1]))}
    flags = dualize_cone_constraint(pb, expr, ConeSpec(cone_kind, 3), blocks, mode=mode,
                                    facets=facets)
    pb.add_obj(alpha, [-1.0])
    res = default_solver().solve(pb.build())
    assert res.status == "optimal"
    return float(res.x[alpha[0]]), flags


def test_cone_orthant_matches_rowwise():
    # (1 + a*w1, a*w2) >= 0 robustly over unit box -> a <= 1 on row 1, free row 2 forces a = 0
    pb = ProgramBuilder()
    a = pb.add_vars("a", 1, nonneg=True)
    coeff = DecAffine((2, 2), np.array([0, 3]), np.array([a[0], a[0]]),
                      np.array([1.0, 1.0]), np.zeros(4))
    expr = UncertainAffineExpr(2, DecAffine.constant([1.0, 1.0]), {"xi": coeff})
    blocks = {"xi": UncertaintyBlock("xi", box_set([-1, -1], [1, 1]))}
    dualize_cone_constraint(pb, expr, ConeSpec("orthant", 2), blocks)
    pb.add_obj(a, [-1.0])
    res = default_solver().solve(pb.build())
    assert res.objective == pytest.approx(-1.0, abs=1e-8)


def test_cone_soc_vertex_mode_exact():
    val, flags = _feasible_scale("soc", "vertex")
    assert flags["exact"]
    assert val == pytest.approx(1 / np.sqrt(2), abs=1e-6)


def test_cone_soc_conservative_is_inner(rng):
    val, flags = _feasible_scale("soc", "conservative", facets=8)
    assert not flags["exact"]
    assert val <= 1 / np.sqrt(2) + 1e-9
    # every approximation-feasible point satisfies the true constraint
    for w in sample_polytope(box_set([-1, -1], [1, 1]), rng, 1000):
        assert np.linalg.norm(val * w) <= 1.0 + 1e-9
    # and the gap closes as facets grow
    val64, _ = _feasible_scale("soc", "conservative", facets=64)
    assert val64 > val - 1e-9


def test_cone_soc_exact_polyhedral_mode_rejected():
    with pytest.raises(ValueError, match="SOC"):
        _feasible_scale("soc", "exact_polyhedral")


def test_cone_inf_exact():
    val, flags = _feasible_scale("inf", "exact_polyhedral")
    assert flags["exact"]
    assert val == pytest.approx(1.0, abs=1e-8)


def test_cone_vertex_mode_rejects_soc_uncertainty():
    spec = make_primitive("ball", n_x=2, T=0)
    pb = ProgramBuilder()
    a = pb.add_vars("a", 1, nonneg=True)
    coeff = DecAffine((3, 2), np.array([2, 5]), np.array([a[0], a[0]]),
                      np.array([1.0, 1.0]), np.zeros(6))
    expr = UncertainAffineExpr(3, DecAffine.constant([1.0, 0.0, 0.0]), {"s": coeff})
    with pytest.raises(ValueError, match="polyhedral"):
        dualize_cone_constraint(pb, expr, ConeSpec("soc", 3), {"s": UncertaintyBlock("s", spec)},
                                mode="vertex")


# ---------------------------------------------------------------------------
# robust counterpart soundness (feasibility equivalence on small instances)
# ---------------------------------------------------------------------------


def test_counterpart_soundness_random(rng):
    for trial in range(30):
        dim = int(rng.integers(1, 4))
        pset = random_polytope(rng, dim, extra_cuts=int(rng.integers(0, 3)))
        verts = enumerate_vertices(pset)
        blocks = {"xi": UncertaintyBlock("xi", pset)}
        m = int(rng.integers(1, 4))
        C = rng.normal(size=(m, dim))
        # decision: shift vector b, feasibility of (C omega - b <= 0 forall omega)
        pb = ProgramBuilder()
        b = pb.add_vars("b", m)
        const = DecAffine((m,), np.arange(m), b, -np.ones(m), np.zeros(m))
        expr = UncertainAffineExpr(m, const, {"xi": DecAffine.constant(C)})
        add_robust_upper_bounds(pb, expr, blocks, "row")
        pb.add_obj(b, np.ones(m))  # minimize sum b -> tight counterpart
        res = default_solver().solve(pb.build())
        assert res.status == "optimal"
        b_val = res.x[b]
        worst = np.max(verts @ C.T, axis=0)
        # counterpart-feasible (and optimal) b equals the vertex-wise worst case
        assert np.max(np.abs(b_val - worst)) < 1e-6


# ---------------------------------------------------------------------------
# epigraph objective
# ---------------------------------------------------------------------------


def _const_exprs(xvec, uvec):
    return UncertainAffineExpr.constant(xvec), UncertainAffineExpr.constant(uvec)


def test_epigraph_deterministic_norms():
    from decmpc.model import norm_cost

    cost = norm_cost(np.eye(2), np.zeros((1, 1)), "inf", 1, 2, [1], state_stages=[2])
    x = np.array([0.0, 0.0, 3.0, -4.0])
    pb = ProgramBuilder()
    xe, ue = _const_exprs(x, np.zeros(1))
    info = epigraph_objective(pb, cost.atoms, xe, ue, {}, mode="exact_polyhedral")
    res = default_solver().solve(pb.build())
    assert res.objective == pytest.approx(4.0, abs=1e-9)
    cost1 = norm_cost(np.eye(2), np.zeros((1, 1)), 1, 1, 2, [1], state_stages=[2])
    pb = ProgramBuilder()
    info = epigraph_objective(pb, cost1.atoms, xe, ue, {}, mode="exact_polyhedral")
    res = default_solver().solve(pb.build())
    assert res.objective == pytest.approx(7.0, abs=1e-9)


def test_epigraph_scalar_uncertain():
    # x(xi) = xi over [-1, 1], p = inf -> worst value 1, equal in both modes
    atom = CostAtom(np.array([[1.0], [-1.0]]), np.zeros((2, 0)), np.zeros(2))
    blocks = {"xi": UncertaintyBlock("xi", box_set([-1], [1]))}
    for mode in ("exact_polyhedral", "vertex"):
        pb = ProgramBuilder()
        xe = UncertainAffineExpr(1, DecAffine.constant([0.0]),
                                 {"xi": DecAffine.constant([[1.0]])})
        ue = UncertainAffineExpr.constant(np.zeros(0))
        info = epigraph_objective(pb, [atom], xe, ue, blocks, mode=mode)
        res = default_solver().solve(pb.build())
        assert res.objective == pytest.approx(1.0, abs=1e-8)
        assert info["exact"]


def test_epigraph_upper_bounds_sampled_cost(rng):
    # reported objective >= realized cost for every sample (soundness)
    blocks = {"xi": UncertaintyBlock("xi", box_set([-1, -1], [1, 1]))}
    C = rng.normal(size=(2, 2))
    xe = UncertainAffineExpr(2, DecAffine.constant(np.zeros(2)), {"xi": DecAffine.constant(C)})
    ue = UncertainAffineExpr.constant(np.zeros(0))
    atoms = [
        CostAtom(np.vstack([np.eye(2), -np.eye(2)]), np.zeros((4, 0)), np.zeros(4)),
        CostAtom(np.array([[1.0, 1.0], [-1.0, -1.0]]), np.zeros((2, 0)), np.zeros(2)),
    ]
    pb = ProgramBuilder()
    epigraph_objective(pb, atoms, xe, ue, blocks, mode="exact_polyhedral")
    res = default_solver().solve(pb.build())
    for w in sample_polytope(box_set([-1, -1], [1, 1]), rng, 1000):
        x = C @ w
        realized = max(np.max(np.abs(x)), 0) + abs(x.sum())
        assert realized <= res.objective + 1e-6
    # vertex mode gives the exact (possibly smaller) worst case
    pb = ProgramBuilder()
    epigraph_objective(pb, atoms, xe, ue, blocks, mode="vertex")
    res_v = default_solver().solve(pb.build())
    corners = np.array(list(itertools.product([-1, 1], repeat=2)))
    oracle = max(max(np.max(np.abs(C @ w)), 0) + abs((C @ w).sum()) for w in corners)
    assert res_v.objective == pytest.approx(oracle, abs=1e-7)
    assert res_v.objective <= res.objective + 1e-9


def test_epigraph_soc_atom_requires_vertex_mode():
    atom = CostAtom(np.eye(2), np.zeros((2, 0)), np.zeros(2), soc=True)
    xe, ue = _const_exprs(np.array([3.0, 4.0]), np.zeros(0))
    pb = ProgramBuilder()
    with pytest.raises(ValueError, match="vertex"):
        epigraph_objective(pb, [atom], xe, ue, {}, mode="exact_polyhedral")
    pb = ProgramBuilder()
    epigraph_objective(pb, [atom], xe, ue, {}, mode="vertex")
    res = default_solver().solve(pb.build())
    assert res.objective == pytest.approx(5.0, abs=1e-7)
