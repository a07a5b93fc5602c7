"""Hankel lift/adjoint/projection against index-enumeration and dense SVD oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msepi.hankel import (
    RankBudget,
    hankel_adjoint,
    hankel_adjoint_normalized,
    hankel_forward,
    hankel_multiplicity,
    lowrank_project,
    rank_from_neff,
)


def lift_bruteforce(shots: np.ndarray, r: int) -> np.ndarray:
    """Entry-by-entry lift straight from the window enumeration."""
    n_s, n1, n2 = shots.shape
    n1w, n2w = n1 - r + 1, n2 - r + 1
    h = np.zeros((n1w * n2w, n_s * r * r), dtype=complex)
    for p1 in range(n1w):
        for p2 in range(n2w):
            row = p1 * n2w + p2
            for t in range(n_s):
                for a in range(r):
                    for b in range(r):
                        h[row, t * r * r + a * r + b] = shots[t, p1 + a, p2 + b]
    return h


def adjoint_bruteforce(h: np.ndarray, grid_shape, r: int, n_s: int) -> np.ndarray:
    n1, n2 = grid_shape
    n1w, n2w = n1 - r + 1, n2 - r + 1
    out = np.zeros((n_s, n1, n2), dtype=complex)
    for p1 in range(n1w):
        for p2 in range(n2w):
            row = p1 * n2w + p2
            for t in range(n_s):
                for a in range(r):
                    for b in range(r):
                        out[t, p1 + a, p2 + b] += h[row, t * r * r + a * r + b]
    return out


def _cgrid(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_lift_matches_index_oracle_5x5_r2_two_shots():
    rng = np.random.default_rng(0)
    shots = _cgrid(rng, 2, 5, 5)
    h = hankel_forward(shots, 2)
    assert h.shape == (16, 8)
    assert np.array_equal(h, lift_bruteforce(shots, 2))


def test_single_window_is_vectorized_grid():
    rng = np.random.default_rng(1)
    shots = _cgrid(rng, 3, 4, 4)
    h = hankel_forward(shots, 4)
    assert h.shape == (1, 3 * 16)
    assert np.array_equal(h[0], shots.reshape(3, -1).ravel())


def test_constant_kspace_lifts_to_constant_matrix():
    shots = np.full((2, 6, 5), 1.5 - 0.5j)
    assert np.all(hankel_forward(shots, 3) == 1.5 - 0.5j)


def test_adjoint_matches_index_oracle():
    rng = np.random.default_rng(2)
    h = _cgrid(rng, 16, 8)
    got = hankel_adjoint(h, (5, 5), 2, 2)
    assert np.allclose(got, adjoint_bruteforce(h, (5, 5), 2, 2), atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(
    n_s=st.integers(1, 3),
    n1=st.integers(2, 8),
    n2=st.integers(2, 8),
    r=st.integers(1, 5),
    seed=st.integers(0, 2**32 - 1),
)
def test_adjoint_identity_random_geometries(n_s, n1, n2, r, seed):
    """<H(x), Y> == <x, H*(Y)> at 1e-10 across geometries."""
    if r > min(n1, n2):
        r = min(n1, n2)
    rng = np.random.default_rng(seed)
    x = _cgrid(rng, n_s, n1, n2)
    rows, cols = (n1 - r + 1) * (n2 - r + 1), n_s * r * r
    y = _cgrid(rng, rows, cols)
    lhs = np.vdot(y, hankel_forward(x, r))
    rhs = np.vdot(hankel_adjoint(y, (n1, n2), r, n_s), x)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@settings(max_examples=40, deadline=None)
@given(
    n_s=st.integers(1, 3),
    n1=st.integers(3, 8),
    n2=st.integers(3, 8),
    r=st.integers(1, 3),
    seed=st.integers(0, 2**32 - 1),
)
def test_normalized_adjoint_inverts_lift(n_s, n1, n2, r, seed):
    rng = np.random.default_rng(seed)
    x = _cgrid(rng, n_s, n1, n2)
    back = hankel_adjoint_normalized(hankel_forward(x, r), (n1, n2), r, n_s)
    assert np.allclose(back, x, atol=1e-13, rtol=0)


def test_multiplicity_counts_windows():
    m = hankel_multiplicity((5, 5), 2)
    # corners touched by 1 window, interior by 4
    assert m[0, 0] == 1 and m[2, 2] == 4 and m[0, 2] == 2
    assert m.sum() == 16 * 4  # every matrix entry accounted for


def test_rank_from_neff_paper_settings():
    assert rank_from_neff(6, 1.25) == 45
    assert rank_from_neff(5, 1.0) == 25
    assert rank_from_neff(7, 1.25) == 61  # 61.25 rounds down
    assert rank_from_neff(2, 0.1) == 1  # 0.4 clamps up to 1
    assert rank_from_neff(3, 0.5) == 5  # 4.5 rounds half-up


def test_rank_budget_defaults_and_validation():
    b = RankBudget(r=5, n_eff=1.0)
    assert b.k == 25
    assert RankBudget(r=5, n_eff=1.0, k=7).k == 7
    with pytest.raises(ValueError):
        RankBudget(r=0, n_eff=1.0)
    with pytest.raises(ValueError):
        RankBudget(r=3, n_eff=-1.0)


def test_fullrank_budget_returns_input_bitexact():
    rng = np.random.default_rng(3)
    x = _cgrid(rng, 2, 6, 6)
    out = lowrank_project(x, RankBudget(r=2, n_eff=2.0))  # k=8 == cols
    assert np.array_equal(out, x)
    assert out is not x  # a copy, not an alias


def test_already_lowrank_input_is_fixed_point():
    # identical constant shots lift to a rank-1 matrix
    x = np.full((3, 6, 5), 2.0 - 1.0j)
    out = lowrank_project(x, RankBudget(r=2, n_eff=0.25, k=1))
    assert np.allclose(out, x, atol=1e-12)


def test_project_matches_dense_svd_oracle():
    rng = np.random.default_rng(4)
    x = _cgrid(rng, 2, 8, 8)
    r, k = 3, 4
    h = lift_bruteforce(x, r)
    u, s, vh = np.linalg.svd(h, full_matrices=False)
    hk = (u[:, :k] * s[:k]) @ vh[:k]
    n1w = n2w = 8 - r + 1
    counts = np.zeros((2, 8, 8))
    counts[:] = hankel_multiplicity((8, 8), r)
    want = adjoint_bruteforce(hk, (8, 8), r, 2) / counts
    got = lowrank_project(x, RankBudget(r=r, n_eff=1.0, k=k))
    assert np.allclose(got, want, atol=1e-8)


def test_gram_path_matches_svd_path():
    # tall lift (rows >> cols) takes the normal-matrix eigendecomposition route
    rng = np.random.default_rng(5)
    x = _cgrid(rng, 1, 12, 12)
    r, k = 2, 2
    h = lift_bruteforce(x, r)
    assert h.shape[0] >= 4 * h.shape[1]
    u, s, vh = np.linalg.svd(h, full_matrices=False)
    hk = (u[:, :k] * s[:k]) @ vh[:k]
    want = adjoint_bruteforce(hk, (12, 12), r, 1) / hankel_multiplicity((12, 12), r)
    got = lowrank_project(x, RankBudget(r=r, n_eff=1.0, k=k))
    assert np.allclose(got, want, atol=1e-8)


def test_identical_shots_rank_bound():
    rng = np.random.default_rng(6)
    one = _cgrid(rng, 7, 8)
    x = np.stack([one, one, one])
    s = np.linalg.svd(hankel_forward(x, 3), compute_uv=False)
    assert np.all(s[9:] <= 1e-10 * s[0])  # at most r*r nonzero


@settings(max_examples=40, deadline=None)
@given(
    n_s=st.integers(1, 3),
    n1=st.integers(4, 8),
    n2=st.integers(4, 8),
    r=st.integers(2, 4),
    frac=st.floats(0.1, 0.9),
    seed=st.integers(0, 2**32 - 1),
)
def test_projection_never_increases_nuclear_norm(n_s, n1, n2, r, frac, seed):
    rng = np.random.default_rng(seed)
    x = _cgrid(rng, n_s, n1, n2)
    rows, cols = (n1 - r + 1) * (n2 - r + 1), n_s * r * r
    k = max(1, int(frac * min(rows, cols)))
    out = lowrank_project(x, RankBudget(r=r, n_eff=1.0, k=k))
    before = np.linalg.svd(hankel_forward(x, r), compute_uv=False).sum()
    after = np.linalg.svd(hankel_forward(out, r), compute_uv=False).sum()
    assert after <= before * (1 + 1e-10)


def test_window_too_large_rejected():
    with pytest.raises(ValueError):
        hankel_forward(np.zeros((1, 4, 4), dtype=complex), 5)
