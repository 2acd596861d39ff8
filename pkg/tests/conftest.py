import numpy as np
import pytest

from decmpc.model import PolyhedralSet, box_set


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_polytope(rng, dim, extra_cuts=2):
    """Bounded full-dimensional polytope: unit box plus random cuts through it."""
    base = box_set(-np.ones(dim), np.ones(dim))
    if extra_cuts == 0:
        return base
    A = rng.normal(size=(extra_cuts, dim))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    # keep the origin feasible: A v >= -offset with offset in (0.3, 1)
    off = rng.uniform(0.3, 1.0, size=extra_cuts)
    W = np.vstack([base.W, A])
    w = np.concatenate([base.w, -off])
    return PolyhedralSet(W, w, skip_validation=True)
