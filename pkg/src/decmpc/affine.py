"""Affine expression algebra used to assemble robust counterparts.

Two layers:

* ``DecAffine`` — a vector or matrix whose entries are affine functions of the
  program's decision variables (and parameter placeholders). Stored as sparse
  triplets over the row-major vectorization, with columns in the
  :class:`~decmpc.conic.ProgramBuilder` encoding (params as negative codes),
  so expressions flow straight into constraint emission.

* ``UncertainAffineExpr`` — a vector-valued expression affine in named
  uncertainty blocks, whose constant and coefficient matrices are themselves
  ``DecAffine``. This is the universal currency: states, inputs, beliefs and
  containment rows are all built as these and then robustified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = ["DecAffine", "UncertainAffineExpr", "expr_add", "expr_scale", "expr_compose"]


def _as_triplets(rows, cols, vals):
    return (
        np.asarray(rows, dtype=np.int64),
        np.asarray(cols, dtype=np.int64),
        np.asarray(vals, dtype=float),
    )


@dataclass(frozen=True)
class DecAffine:
    """Decision-affine array: value = unfold(triplets) @ d  +  const.

    ``shape`` is (m,) for vectors or (m, d) for matrices; triplets index the
    row-major vectorization. Immutable; every operation returns a new object.
    """

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    const: np.ndarray

    # -- constructors --------------------------------------------------

    @staticmethod
    def constant(arr) -> "DecAffine":
        arr = np.asarray(arr, dtype=float)
        e = np.zeros(0, dtype=np.int64)
        return DecAffine(arr.shape, e, e, np.zeros(0), arr.ravel().copy())

    @staticmethod
    def zeros(shape) -> "DecAffine":
        return DecAffine.constant(np.zeros(shape))

    @staticmethod
    def from_vars(idx, mask=None) -> "DecAffine":
        """Identity map of a variable (or parameter-encoded) index array.

        ``mask`` (same shape, bool) keeps only selected entries as variables;
        masked-out entries are structurally zero.
        """
        idx = np.asarray(idx, dtype=np.int64)
        if mask is None:
            keep = np.ones(idx.size, dtype=bool)
        else:
            keep = np.asarray(mask, dtype=bool).ravel()
        rows = np.nonzero(keep)[0].astype(np.int64)
        return DecAffine(idx.shape, rows, idx.ravel()[rows], np.ones(rows.size), np.zeros(idx.size))

    # -- internals -------------------------------------------------------

    def _local(self):
        """Sparse (nvec x nlocal) matrix plus the local->encoded column map."""
        nvec = int(np.prod(self.shape))
        if self.cols.size == 0:
            return sp.csr_matrix((nvec, 0)), np.zeros(0, dtype=np.int64)
        uniq, inv = np.unique(self.cols, return_inverse=True)
        T = sp.coo_matrix((self.vals, (self.rows, inv)), shape=(nvec, uniq.size)).tocsr()
        return T, uniq

    @staticmethod
    def _from_local(shape, T, colmap, const) -> "DecAffine":
        T = T.tocoo()
        return DecAffine(shape, T.row.astype(np.int64), colmap[T.col], T.data.copy(), const.ravel())

    # -- algebra -----------------------------------------------------------

    def __add__(self, other) -> "DecAffine":
        if isinstance(other, DecAffine):
            if other.shape != self.shape:
                raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
            return DecAffine(
                self.shape,
                np.concatenate([self.rows, other.rows]),
                np.concatenate([self.cols, other.cols]),
                np.concatenate([self.vals, other.vals]),
                self.const + other.const,
            )
        arr = np.asarray(other, dtype=float)
        if arr.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {arr.shape}")
        return DecAffine(self.shape, self.rows, self.cols, self.vals, self.const + arr.ravel())

    def __sub__(self, other) -> "DecAffine":
        return self + (other * -1.0 if isinstance(other, DecAffine) else -np.asarray(other))

    def __mul__(self, alpha: float) -> "DecAffine":
        return DecAffine(self.shape, self.rows, self.cols, self.vals * float(alpha),
                         self.const * float(alpha))

    __rmul__ = __mul__

    def __neg__(self) -> "DecAffine":
        return self * -1.0

    def lmul(self, M) -> "DecAffine":
        """Left multiply by a constant matrix: M @ self."""
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[1] != self.shape[0]:
            raise ValueError(f"lmul dims {M.shape} x {self.shape}")
        d = self.shape[1] if len(self.shape) == 2 else 1
        K = sp.kron(sp.csr_matrix(M), sp.eye(d, format="csr"), format="csr")
        T, colmap = self._local()
        newshape = (M.shape[0],) if len(self.shape) == 1 else (M.shape[0], d)
        const = (M @ self.const.reshape(self.shape[0], d)).ravel()
        return DecAffine._from_local(newshape, K @ T, colmap, const)

    def rmul(self, N) -> "DecAffine":
        """Right multiply by a constant matrix: self @ N (matrix-shaped only)."""
        N = np.asarray(N, dtype=float)
        if len(self.shape) != 2 or N.shape[0] != self.shape[1]:
            raise ValueError(f"rmul dims {self.shape} x {N.shape}")
        m = self.shape[0]
        K = sp.kron(sp.eye(m, format="csr"), sp.csr_matrix(N.T), format="csr")
        T, colmap = self._local()
        const = (self.const.reshape(self.shape) @ N).ravel()
        return DecAffine._from_local((m, N.shape[1]), K @ T, colmap, const)

    def dot_vector(self, v) -> "DecAffine":
        """Contract a matrix-shaped expression with a constant vector: self @ v."""
        if len(self.shape) != 2:
            raise ValueError("dot_vector needs a matrix-shaped expression")
        m, d = self.shape
        v = np.asarray(v, dtype=float).ravel()
        if v.size != d:
            raise ValueError(f"dot_vector dims {self.shape} x ({v.size},)")
        return DecAffine((m,), self.rows // d, self.cols, self.vals * v[self.rows % d],
                         self.const.reshape(m, d) @ v)

    def take_rows(self, sel) -> "DecAffine":
        """Row selection (gather) of the value."""
        sel = np.asarray(sel, dtype=np.int64)
        d = self.shape[1] if len(self.shape) == 2 else 1
        vec_sel = (sel[:, None] * d + np.arange(d)[None, :]).ravel()
        S = sp.coo_matrix(
            (np.ones(vec_sel.size), (np.arange(vec_sel.size), vec_sel)),
            shape=(vec_sel.size, int(np.prod(self.shape))),
        ).tocsr()
        T, colmap = self._local()
        newshape = (sel.size,) if len(self.shape) == 1 else (sel.size, d)
        return DecAffine._from_local(newshape, S @ T, colmap, self.const[vec_sel])

    @staticmethod
    def vstack(parts) -> "DecAffine":
        parts = list(parts)
        d = {p.shape[1] if len(p.shape) == 2 else 1 for p in parts}
        if len(d) != 1:
            raise ValueError("vstack needs equal column counts")
        (d,) = d
        m = sum(p.shape[0] for p in parts)
        rows, cols, vals, consts = [], [], [], []
        off = 0
        for p in parts:
            rows.append(p.rows + off * d)
            cols.append(p.cols)
            vals.append(p.vals)
            consts.append(p.const)
            off += p.shape[0]
        shape = (m,) if len(parts[0].shape) == 1 else (m, d)
        return DecAffine(
            shape,
            np.concatenate(rows),
            np.concatenate(cols),
            np.concatenate(vals),
            np.concatenate(consts),
        )

    # -- evaluation ----------------------------------------------------

    def value(self, dec: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        """Materialize numerically at a decision (and parameter) vector."""
        out = self.const.copy()
        if self.cols.size:
            is_par = self.cols < 0
            if is_par.any():
                if params is None:
                    raise ValueError("expression references parameters; none given")
                p = np.asarray(params, dtype=float)
                np.add.at(out, self.rows[is_par], self.vals[is_par] * p[-self.cols[is_par] - 1])
            keep = ~is_par
            np.add.at(out, self.rows[keep], self.vals[keep] * np.asarray(dec)[self.cols[keep]])
        return out.reshape(self.shape)

    def is_structurally_zero(self) -> bool:
        return self.cols.size == 0 and not np.any(self.const)


@dataclass
class UncertainAffineExpr:
    """Vector expression affine in named uncertainty blocks.

    value(omega) = const + sum_b coeffs[b] @ omega_b, where const and each
    coefficient matrix are decision-affine. Absent blocks mean zero.
    """

    dim: int
    const: DecAffine
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.const.shape != (self.dim,):
            raise ValueError("const length must equal expression dim")
        for name, C in self.coeffs.items():
            if C.shape[0] != self.dim:
                raise ValueError(f"coefficient block {name!r} row count != dim")

    @staticmethod
    def constant(vec) -> "UncertainAffineExpr":
        vec = np.asarray(vec, dtype=float)
        return UncertainAffineExpr(vec.size, DecAffine.constant(vec))

    def eval(self, omega: dict, dec=None, params=None) -> np.ndarray:
        """Evaluate at an uncertainty realization (and decision values)."""
        dec = np.zeros(0) if dec is None else dec
        out = self.const.value(dec, params)
        for name, C in self.coeffs.items():
            if name in omega:
                out = out + C.value(dec, params) @ np.asarray(omega[name], dtype=float)
            # absent blocks in omega are treated as zero
        return out

    def block_dim(self, name: str) -> int:
        return self.coeffs[name].shape[1]


def expr_add(a: UncertainAffineExpr, b: UncertainAffineExpr) -> UncertainAffineExpr:
    """Sum of two expressions over the union of their uncertainty blocks."""
    if a.dim != b.dim:
        raise ValueError(f"dim mismatch {a.dim} vs {b.dim}")
    coeffs = dict(a.coeffs)
    for name, C in b.coeffs.items():
        coeffs[name] = coeffs[name] + C if name in coeffs else C
    return UncertainAffineExpr(a.dim, a.const + b.const, coeffs)


def expr_scale(alpha: float, e: UncertainAffineExpr) -> UncertainAffineExpr:
    res = UncertainAffineExpr(e.dim, e.const * alpha, {n: C * alpha for n, C in e.coeffs.items()})
    if alpha == 0.0:
        res.coeffs = {}
    return res


def expr_compose(M, e: UncertainAffineExpr) -> UncertainAffineExpr:
    """Left-compose with a constant matrix: value = M @ e(omega)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[1] != e.dim:
        raise ValueError(f"compose dims {M.shape} x ({e.dim},)")
    return UncertainAffineExpr(
        M.shape[0], e.const.lmul(M), {n: C.lmul(M) for n, C in e.coeffs.items()}
    )


def expr_take(e: UncertainAffineExpr, sel) -> UncertainAffineExpr:
    """Gather rows of an expression (stage slicing)."""
    sel = np.asarray(sel, dtype=np.int64)
    return UncertainAffineExpr(
        sel.size, e.const.take_rows(sel), {n: C.take_rows(sel) for n, C in e.coeffs.items()}
    )


def expr_vstack(parts) -> UncertainAffineExpr:
    """Concatenate expressions; missing blocks are padded with zeros."""
    parts = list(parts)
    names = []
    for p in parts:
        for n in p.coeffs:
            if n not in names:
                names.append(n)
    dims = {}
    for p in parts:
        for n, C in p.coeffs.items():
            dims[n] = C.shape[1]
    coeffs = {}
    for n in names:
        coeffs[n] = DecAffine.vstack(
            [p.coeffs.get(n, DecAffine.zeros((p.dim, dims[n]))) for p in parts]
        )
    return UncertainAffineExpr(
        sum(p.dim for p in parts), DecAffine.vstack([p.const for p in parts]), coeffs
    )
