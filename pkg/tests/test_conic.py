import numpy as np
import pytest

from decmpc.conic import (
    CvxoptSolver,
    HighsSolver,
    ProgramBuilder,
    default_solver,
    elastic_relaxation_report,
    export_program_text,
)


def small_lp():
    # min x + 2y  s.t. x + y >= 1, x,y >= 0   -> optimum 1 at (1, 0)
    pb = ProgramBuilder()
    v = pb.add_vars("v", 2, nonneg=True)
    pb.add_ub([0, 0], v, [-1.0, -1.0], [-1.0], "cover")
    pb.add_obj(v, [1.0, 2.0])
    return pb.build()


@pytest.mark.parametrize("solver", [HighsSolver(), CvxoptSolver()])
def test_lp_backends_agree(solver):
    res = solver.solve(small_lp())
    assert res.status == "optimal"
    assert abs(res.objective - 1.0) < 1e-7
    assert np.allclose(res.x, [1.0, 0.0], atol=1e-6)


def test_soc_projection():
    # min t s.t. (t, x - a) in SOC, x = b  -> t = ||b - a||
    a = np.array([1.0, -2.0, 0.5])
    b = np.array([-0.3, 0.4, 2.0])
    pb = ProgramBuilder()
    t = pb.add_vars("t", 1)
    x = pb.add_vars("x", 3)
    pb.add_eq(np.arange(3), x, np.ones(3), b, "fix")
    rows = np.arange(4)
    cols = np.concatenate([t, x])
    vals = np.ones(4)
    pb.add_soc(rows, cols, vals, np.concatenate([[0.0], -a]), 4, "dist")
    pb.add_obj(t, [1.0])
    res = CvxoptSolver().solve(pb.build())
    assert res.status == "optimal"
    assert abs(res.objective - np.linalg.norm(b - a)) < 1e-6


def test_highs_rejects_soc():
    pb = ProgramBuilder()
    t = pb.add_vars("t", 1)
    pb.add_soc([0], t, [1.0], [0.0], 1, "s")
    pb.add_obj(t, [1.0])
    with pytest.raises(ValueError):
        HighsSolver().solve(pb.build())


@pytest.mark.parametrize("solver", [HighsSolver(), CvxoptSolver()])
def test_infeasible_detected(solver):
    pb = ProgramBuilder()
    v = pb.add_vars("v", 1, nonneg=True)
    pb.add_ub([0], v, [1.0], [-1.0], "impossible")  # v <= -1 with v >= 0
    pb.add_obj(v, [1.0])
    assert solver.solve(pb.build()).status == "infeasible"


def test_unbounded_detected():
    pb = ProgramBuilder()
    v = pb.add_vars("v", 1)
    pb.add_obj(v, [-1.0])
    assert HighsSolver().solve(pb.build()).status == "unbounded"


def test_param_folding_matches_direct():
    def build(rhs, via_param):
        pb = ProgramBuilder()
        v = pb.add_vars("v", 2, nonneg=True)
        if via_param:
            p = pb.add_params("p", 1)
            pb.add_ub([0, 0, 0], np.concatenate([v, pb.param_col(p)]), [-1.0, -1.0, 1.0],
                      [0.0], "cover")
            # -v1 - v2 + p <= 0  <=>  v1 + v2 >= p
            return pb, {"p": [rhs]}
        pb.add_ub([0, 0], v, [-1.0, -1.0], [-rhs], "cover")
        return pb, None

    for rhs in (1.0, 3.5):
        pb, params = build(rhs, True)
        pb.add_obj(np.arange(2), [1.0, 2.0])
        res_p = HighsSolver().solve(pb.build(params))
        pb2, _ = build(rhs, False)
        pb2.add_obj(np.arange(2), [1.0, 2.0])
        res_d = HighsSolver().solve(pb2.build())
        assert abs(res_p.objective - res_d.objective) < 1e-9


def test_export_deterministic_and_reparsable():
    t1 = export_program_text(small_lp())
    t2 = export_program_text(small_lp())
    assert t1 == t2
    assert "decmpc-conic-v1" in t1 and "VARS" in t1 and "UB rows=" in t1


def test_elastic_report_names_offender():
    pb = ProgramBuilder()
    v = pb.add_vars("v", 1, nonneg=True)
    pb.add_ub([0], v, [1.0], [5.0], "agent:0/fine")
    pb.add_ub([0], v, [1.0], [-2.0], "agent:1/impossible")
    pb.add_obj(v, [1.0])
    prog = pb.build()
    assert HighsSolver().solve(prog).status == "infeasible"
    report = elastic_relaxation_report(prog)
    assert report and report[0][0] == "agent:1/impossible"
    assert report[0][1] == pytest.approx(2.0, abs=1e-6)


def test_default_solver_env(monkeypatch):
    monkeypatch.setenv("DECMPC_SOLVER", "highs")
    assert default_solver().name == "highs"
    monkeypatch.delenv("DECMPC_SOLVER")
    assert default_solver().name == "auto"
    with pytest.raises(ValueError):
        default_solver("nope")


def test_solution_respects_tolerance():
    # returned primal satisfies constraints within the reported tolerance
    prog = small_lp()
    for solver in (HighsSolver(), CvxoptSolver()):
        res = solver.solve(prog)
        viol = prog.residuals(res.x)
        assert max(viol.values()) <= 1e-6
