import numpy as np
import pytest

from decmpc.affine import (
    DecAffine,
    UncertainAffineExpr,
    expr_add,
    expr_compose,
    expr_scale,
    expr_take,
    expr_vstack,
)


def random_decaffine(rng, shape, ndec):
    dense_lin = rng.normal(size=(int(np.prod(shape)), ndec)) * (rng.random((int(np.prod(shape)), ndec)) < 0.4)
    rows, cols = np.nonzero(dense_lin)
    const = rng.normal(size=int(np.prod(shape)))
    return DecAffine(shape, rows, cols, dense_lin[rows, cols], const), dense_lin, const


def test_decaffine_value_matches_dense(rng):
    X, L, c = random_decaffine(rng, (4, 3), 6)
    d = rng.normal(size=6)
    assert np.allclose(X.value(d).ravel(), L @ d + c)


def test_decaffine_lmul_rmul_take(rng):
    X, L, c = random_decaffine(rng, (4, 3), 6)
    d = rng.normal(size=6)
    M = rng.normal(size=(2, 4))
    N = rng.normal(size=(3, 5))
    assert np.allclose(X.lmul(M).value(d), M @ X.value(d))
    assert np.allclose(X.rmul(N).value(d), X.value(d) @ N)
    assert np.allclose(X.take_rows([2, 0]).value(d), X.value(d)[[2, 0]])
    Y = DecAffine.vstack([X, X * 2.0])
    assert np.allclose(Y.value(d), np.vstack([X.value(d), 2 * X.value(d)]))


def test_decaffine_add_sub_scale(rng):
    X, _, _ = random_decaffine(rng, (5,), 4)
    Y, _, _ = random_decaffine(rng, (5,), 4)
    d = rng.normal(size=4)
    assert np.allclose((X + Y).value(d), X.value(d) + Y.value(d))
    assert np.allclose((X - Y).value(d), X.value(d) - Y.value(d))
    assert np.allclose((-2.5 * X).value(d), -2.5 * X.value(d))


def test_decaffine_params(rng):
    # parameter columns are encoded as negative indices
    idx = np.array([0, 1])
    X = DecAffine((2,), np.array([0, 1]), np.array([-1, -2]), np.array([1.0, 2.0]), np.zeros(2))
    p = np.array([3.0, 5.0])
    assert np.allclose(X.value(np.zeros(0), p), [3.0, 10.0])
    with pytest.raises(ValueError):
        X.value(np.zeros(0))


def test_from_vars_mask():
    idx = np.arange(6).reshape(2, 3)
    mask = np.array([[True, False, True], [False, False, True]])
    X = DecAffine.from_vars(idx, mask)
    d = np.arange(6, dtype=float) + 1
    v = X.value(d)
    assert v[0, 0] == 1 and v[0, 2] == 3 and v[1, 2] == 6
    assert v[0, 1] == 0 and v[1, 0] == 0 and v[1, 1] == 0


def _random_expr(rng, dim, block_dims, ndec):
    const, _, _ = random_decaffine(rng, (dim,), ndec)
    coeffs = {}
    for name, d in block_dims.items():
        C, _, _ = random_decaffine(rng, (dim, d), ndec)
        coeffs[name] = C
    return UncertainAffineExpr(dim, const, coeffs)


def test_eval_homomorphism(rng):
    # eval(compose(M, e), w) == M @ eval(e, w) for random data
    for _ in range(20):
        e = _random_expr(rng, 4, {"a": 3, "b": 2}, 5)
        M = rng.normal(size=(3, 4))
        dec = rng.normal(size=5)
        omega = {"a": rng.normal(size=3), "b": rng.normal(size=2)}
        lhs = expr_compose(M, e).eval(omega, dec)
        rhs = M @ e.eval(omega, dec)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_compose_identity_and_zero_scale(rng):
    e = _random_expr(rng, 3, {"a": 2}, 4)
    dec = rng.normal(size=4)
    omega = {"a": rng.normal(size=2)}
    same = expr_compose(np.eye(3), e)
    assert np.allclose(same.eval(omega, dec), e.eval(omega, dec))
    z = expr_scale(0.0, e)
    assert not z.coeffs
    assert np.allclose(z.eval(omega, dec), 0.0)


def test_expr_add_union_blocks(rng):
    e1 = _random_expr(rng, 3, {"a": 2}, 4)
    e2 = _random_expr(rng, 3, {"b": 5}, 4)
    dec = rng.normal(size=4)
    omega = {"a": rng.normal(size=2), "b": rng.normal(size=5)}
    s = expr_add(e1, e2)
    assert set(s.coeffs) == {"a", "b"}
    assert np.allclose(s.eval(omega, dec), e1.eval(omega, dec) + e2.eval(omega, dec))


def test_expr_take_and_vstack(rng):
    e1 = _random_expr(rng, 3, {"a": 2}, 4)
    e2 = _random_expr(rng, 2, {"b": 3}, 4)
    dec = rng.normal(size=4)
    omega = {"a": rng.normal(size=2), "b": rng.normal(size=3)}
    st = expr_vstack([e1, e2])
    v = st.eval(omega, dec)
    assert np.allclose(v[:3], e1.eval(omega, dec))
    assert np.allclose(v[3:], e2.eval(omega, dec))
    tk = expr_take(st, [4, 0])
    assert np.allclose(tk.eval(omega, dec), v[[4, 0]])


def test_dim_mismatch_raises(rng):
    e = _random_expr(rng, 3, {"a": 2}, 4)
    with pytest.raises(ValueError):
        expr_compose(np.eye(4), e)
    with pytest.raises(ValueError):
        expr_add(e, _random_expr(rng, 2, {}, 4))
