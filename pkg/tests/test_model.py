import numpy as np
import pytest

from decmpc.model import (
    AgentModel,
    ConeSpec,
    Constraints,
    CouplingGraph,
    Network,
    PolyhedralSet,
    StageDynamics,
    box_set,
    check_bounded,
    make_primitive,
    norm_cost,
    precedent_closure,
    stack_dynamics,
)


def scalar_agent(a, d, e, T, agent_id=0, nb_dim=0):
    stages = [
        StageDynamics(np.array([[a]]), np.zeros((1, nb_dim)), np.array([[d]]), np.array([[e]]))
        for _ in range(T)
    ]
    cons = Constraints(np.zeros((1, (T + 1))), np.zeros((1, T)), np.ones(1))
    cost = norm_cost(np.eye(1), np.zeros((1, 1)), "inf", T, 1, [1] * T)
    dist = box_set(-np.ones(T), np.ones(T))
    return AgentModel(agent_id, np.zeros(1), stages, cons, cost, dist)


def simulate_recursion(agent, x1, xnb_stages, u_stages, xi_stages):
    """Direct stage-by-stage recursion used as oracle for the stacked map."""
    xs = [np.asarray(x1, dtype=float)]
    for t in range(agent.T):
        st = agent.stages[t]
        xs.append(st.A @ xs[-1] + st.B @ xnb_stages[t] + st.D @ u_stages[t] + st.E @ xi_stages[t])
    return np.concatenate(xs)


def test_stack_one_step_scalar():
    ag = scalar_agent(a=0.7, d=2.0, e=3.0, T=1)
    sd = stack_dynamics(ag, CouplingGraph(1, [[]]))
    assert np.allclose(sd.A, [[1.0], [0.7]])
    assert np.allclose(sd.D, [[0.0], [2.0]])
    assert np.allclose(sd.E, [[0.0], [3.0]])


def test_stack_integrator_cumsum(rng):
    T = 2
    ag = scalar_agent(a=1.0, d=1.0, e=1.0, T=T)
    sd = stack_dynamics(ag, CouplingGraph(1, [[]]))
    x1 = rng.normal(size=1)
    u = rng.normal(size=(T, 1))
    xi = rng.normal(size=(T, 1))
    xnb = [np.zeros(0)] * T
    direct = simulate_recursion(ag, x1, xnb, u, xi)
    stacked = sd.A @ x1 + sd.D @ u.ravel() + sd.E @ xi.ravel()
    assert np.allclose(stacked, direct)
    # integrator trajectory = cumulative sums of (u + xi) prefixed by x1
    assert np.allclose(direct, np.concatenate([x1, x1 + np.cumsum(u.ravel() + xi.ravel())]))


def test_stack_neighbor_block_order():
    # agent 3 (id 2) with neighbors {2, 5} (ids 1 and 4): id-1 block precedes id-4
    graph = CouplingGraph(5, [[], [], [1, 4], [], []])
    T = 1
    B = np.hstack([np.full((2, 2), 10.0), np.full((2, 2), 20.0)])  # nb dims 2 + 2
    st = StageDynamics(np.zeros((2, 2)), B, np.eye(2), np.eye(2))
    cons = Constraints(np.zeros((1, 4)), np.zeros((1, 2)), np.ones(1))
    cost = norm_cost(np.eye(2), np.zeros((1, 2)), "inf", T, 2, [2])
    ag = AgentModel(2, np.zeros(2), [st], cons, cost, box_set(-np.ones(2), np.ones(2)))
    sd = stack_dynamics(ag, graph)
    xnb = np.array([1.0, 1.0, 0.0, 0.0])  # only the id-1 neighbor active
    assert np.allclose((sd.B @ xnb)[2:], [20.0, 20.0])
    xnb = np.array([0.0, 0.0, 1.0, 1.0])  # only the id-4 neighbor
    assert np.allclose((sd.B @ xnb)[2:], [40.0, 40.0])


def test_stack_random_recursion_property(rng):
    for _ in range(100):
        T = int(rng.integers(1, 11))
        n = int(rng.integers(1, 5))
        stages = []
        for _t in range(T):
            stages.append(
                StageDynamics(
                    rng.normal(size=(n, n)) * 0.5,
                    np.zeros((n, 0)),
                    rng.normal(size=(n, max(1, n - 1))),
                    rng.normal(size=(n, n)),
                )
            )
        cons = Constraints(np.zeros((1, (T + 1) * n)), np.zeros((1, T * max(1, n - 1))), np.ones(1))
        cost = norm_cost(np.eye(n), np.zeros((1, max(1, n - 1))), "inf", T, n, [max(1, n - 1)] * T)
        ag = AgentModel(0, rng.normal(size=n), stages, cons, cost,
                        box_set(-np.ones(T * n), np.ones(T * n)))
        sd = stack_dynamics(ag, CouplingGraph(1, [[]]))
        u = [rng.normal(size=max(1, n - 1)) for _ in range(T)]
        xi = [rng.normal(size=n) for _ in range(T)]
        direct = simulate_recursion(ag, ag.x1, [np.zeros(0)] * T, u, xi)
        stacked = sd.A @ ag.x1 + sd.D @ np.concatenate(u) + sd.E @ np.concatenate(xi)
        denom = max(1.0, np.max(np.abs(direct)))
        assert np.max(np.abs(stacked - direct)) / denom < 1e-9


# ---------------------------------------------------------------------------
# precedent closure
# ---------------------------------------------------------------------------


def closure_oracle(graph):
    """Boolean reachability-matrix closure."""
    M = graph.M
    R = np.eye(M, dtype=bool)
    for i in range(M):
        for j in graph.neighbors[i]:
            R[i, j] = True  # j reaches i in one hop
    for _ in range(M):
        R = R | (R @ R)
    return {i: frozenset(np.nonzero(R[i])[0].tolist()) for i in range(M)}


def test_closure_trivial_and_chain():
    g = CouplingGraph(3, [[], [], []])
    assert precedent_closure(g) == {0: {0}, 1: {1}, 2: {2}}
    chain = CouplingGraph(3, [[], [0], [1]])
    cl = precedent_closure(chain)
    assert cl[2] == {0, 1, 2} and cl[1] == {0, 1} and cl[0] == {0}


def test_closure_working_example():
    # five agents; agent 3 (id 2) has neighbors {2, 5} (ids 1, 4)
    g = CouplingGraph(5, [[], [0], [1, 4], [2], [3]])
    cl = precedent_closure(g)
    assert cl[2] == {0, 1, 2, 3, 4}  # cycle 2->3->4->2 pulls everything in
    assert closure_oracle(g) == cl


def test_closure_random_matches_oracle(rng):
    for _ in range(50):
        M = int(rng.integers(1, 9))
        nb = [list(np.nonzero(rng.random(M) < 0.3)[0]) for _ in range(M)]
        nb = [[j for j in lst if j != i] for i, lst in enumerate(nb)]
        g = CouplingGraph(M, nb)
        assert precedent_closure(g) == closure_oracle(g)


# ---------------------------------------------------------------------------
# primitive sets
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["box", "rhombus", "ball", "rotated_rect", "rotated_ellipse"])
def test_make_primitive_invariants(kind):
    spec = make_primitive(kind, n_x=2, T=2, angle=15.0, axis_ratio=1.5)
    cover = np.concatenate([b.proj for b in spec.blocks])
    assert np.array_equal(np.sort(cover), np.arange(spec.dim))  # partition = I, orthogonal
    ok, _ = check_bounded(spec)
    assert ok
    assert spec.contains(np.zeros(spec.dim))


def test_box_primitive_matches_example_structure():
    # unit box in R^2 per stage via two infinity-cone blocks
    spec = make_primitive("box", n_x=2, T=0)
    assert spec.n_blocks == 2
    for b in spec.blocks:
        assert b.cone.kind == "inf"
        assert b.g[0] == 1.0 and np.all(b.g[1:] == 0)
    assert spec.contains([1.0, -1.0])
    assert not spec.contains([1.2, 0.0])


def test_ball_interval_primitive():
    # 2-ball on coords (0,1) and interval on coord 2, second-order cones
    from decmpc.model import PrimitiveBlock, PrimitiveSetSpec

    G1 = np.zeros((3, 3))
    G1[1:, :2] = -np.eye(2)
    G2 = np.zeros((2, 3))
    G2[1, 2] = -1.0
    spec = PrimitiveSetSpec(
        3,
        (
            PrimitiveBlock([0, 1], G1, [1.0, 0.0, 0.0], ConeSpec("soc", 3)),
            PrimitiveBlock([2], G2, [1.0, 0.0], ConeSpec("soc", 2)),
        ),
    )
    ok, _ = check_bounded(spec)
    assert ok
    assert spec.contains([0.6, 0.7, -1.0])
    assert not spec.contains([0.8, 0.7, 0.0])


def test_rotated_rect_zero_angle_equals_box(rng):
    box = make_primitive("box", n_x=2, T=1)
    rect0 = make_primitive("rotated_rect", n_x=2, T=1, angle=0.0)
    pts = rng.uniform(-1.3, 1.3, size=(1000, box.dim))
    for p in pts:
        assert box.contains(p) == rect0.contains(p)


def test_check_bounded_violations():
    orthant = PolyhedralSet(np.eye(2), np.zeros(2), skip_validation=True)
    ok, d = check_bounded(orthant)
    assert not ok and d is not None
    assert orthant.contains(10 * d)  # the witness really recedes
    ok, _ = check_bounded(box_set(-np.ones(3), np.ones(3)))
    assert ok


def test_polyhedral_set_validation():
    with pytest.raises(ValueError):  # empty
        PolyhedralSet(np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):  # unbounded
        PolyhedralSet(np.eye(2), np.zeros(2))
    s = box_set([-1, -2], [3, 4])
    assert s.contains([3, 4]) and not s.contains([3.1, 0])
    assert s.support([1.0, 0.0]) == pytest.approx(3.0)


def test_primitive_sampler_stays_inside(rng):
    for kind in ("box", "rhombus", "ball", "rotated_ellipse"):
        spec = make_primitive(kind, n_x=2, T=1, angle=30.0)
        pts = spec.sample(rng, 50)
        for p in pts:
            assert spec.contains(p, tol=1e-8)


# ---------------------------------------------------------------------------
# costs, agents, network validation
# ---------------------------------------------------------------------------


def test_norm_cost_values():
    T, n = 1, 2
    cost_inf = norm_cost(np.eye(2), np.zeros((1, 1)), "inf", T, n, [1], state_stages=[2])
    x = np.array([0.0, 0.0, 3.0, -4.0])
    assert cost_inf.evaluate(x, np.zeros(1)) == pytest.approx(4.0)
    cost_1 = norm_cost(np.eye(2), np.zeros((1, 1)), 1, T, n, [1], state_stages=[2])
    assert cost_1.evaluate(x, np.zeros(1)) == pytest.approx(7.0)


def test_rank_flags_recorded():
    # rank-1 disturbance matrix is flagged but does not block construction
    E = np.array([[1.0, -1.0], [-1.0, 1.0]])
    st = StageDynamics(np.zeros((2, 2)), np.zeros((2, 0)), np.eye(2), E)
    cons = Constraints(np.zeros((1, 4)), np.zeros((1, 2)), np.ones(1))
    cost = norm_cost(np.eye(2), np.zeros((1, 2)), "inf", 1, 2, [2])
    ag = AgentModel(0, np.zeros(2), [st], cons, cost, box_set(-np.ones(2), np.ones(2)))
    assert any("E rank deficient" in f for f in ag.rank_flags)


def test_network_validation_errors():
    g = CouplingGraph(2, [[], [0]])
    st0 = StageDynamics(np.eye(1), np.zeros((1, 0)), np.eye(1), np.eye(1))
    st1_bad = StageDynamics(np.eye(1), np.zeros((1, 0)), np.eye(1), np.eye(1))  # B missing
    cons = Constraints(np.zeros((1, 2)), np.zeros((1, 1)), np.ones(1))
    cost = norm_cost(np.eye(1), np.zeros((1, 1)), "inf", 1, 1, [1])
    a0 = AgentModel(0, np.zeros(1), [st0], cons, cost, box_set([-1], [1]))
    a1 = AgentModel(1, np.zeros(1), [st1_bad], cons, cost, box_set([-1], [1]))
    with pytest.raises(ValueError, match="B has"):
        Network(g, [a0, a1], horizon=1)


def test_coupling_graph_invariants():
    with pytest.raises(ValueError):
        CouplingGraph(2, [[0], []])  # self-loop
    with pytest.raises(ValueError):
        CouplingGraph(2, [[5], []])  # out of range
    g = CouplingGraph(3, [[2, 1], [], []])
    assert g.neighbors[0] == (1, 2)  # canonical ascending order
    assert g.consumers(1) == [0]
