"""Block-Hankel lifting of multishot k-space and the rank-k SVD projection.

The lift slides an r x r window over each shot's k-space grid (valid interior
positions only, no wraparound) and stores one window position per row, with
the N_s shots' vectorized windows concatenated along the columns.  A grid of
shape (N1_ext, N2) therefore lifts to a matrix with

    rows = (N1_ext - r + 1) * (N2 - r + 1),   cols = N_s * r * r.

Window positions and the pixels inside a window are both enumerated row-major.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RankBudget",
    "rank_from_neff",
    "hankel_forward",
    "hankel_adjoint",
    "hankel_adjoint_normalized",
    "hankel_multiplicity",
    "lowrank_project",
]

# Gram path (eigendecomposition of the cols x cols normal matrix) switches on
# when the lift is this many times taller than wide.
_GRAM_RATIO = 4


def rank_from_neff(r: int, n_eff: float) -> int:
    """Retained singular values for window size r and effective shot count.

    k = n_eff * r^2, rounded half-up, never below 1.  The effective shot
    count is a real number: fractional values keep slightly more than an
    integer number of shot-subspaces worth of energy.
    """
    if r < 1:
        raise ValueError(f"window size must be >= 1, got {r}")
    if not np.isfinite(n_eff) or n_eff <= 0:
        raise ValueError(f"effective shot count must be positive, got {n_eff}")
    return max(1, int(np.floor(n_eff * r * r + 0.5)))


@dataclass(frozen=True)
class RankBudget:
    """Window size, effective shot count, and the resulting rank k.

    ``k`` defaults to rank_from_neff(r, n_eff); passing it explicitly is
    allowed for experiments.  The final clamp to min(rows, cols) happens at
    projection time when the lift geometry is known.
    """

    r: int
    n_eff: float
    k: int | None = None

    def __post_init__(self):
        computed = rank_from_neff(self.r, self.n_eff)
        if self.k is None:
            object.__setattr__(self, "k", computed)
        elif self.k < 1:
            raise ValueError(f"rank must be >= 1, got {self.k}")


def _check_window(shape: tuple[int, int], r: int) -> None:
    if r < 1:
        raise ValueError(f"window size must be >= 1, got {r}")
    if r > min(shape):
        raise ValueError(f"window {r}x{r} does not fit a {shape[0]}x{shape[1]} grid")


def hankel_forward(shots: np.ndarray, r: int) -> np.ndarray:
    """Lift (N_s, N1_ext, N2) k-space grids to the block-Hankel matrix."""
    shots = np.asarray(shots, dtype=np.complex128)
    if shots.ndim == 2:
        shots = shots[None]
    n_s, n1, n2 = shots.shape
    _check_window((n1, n2), r)
    win = np.lib.stride_tricks.sliding_window_view(shots, (r, r), axis=(1, 2))
    # (N_s, n1w, n2w, r, r) -> rows of vectorized windows, shot blocks side by side
    n_win = (n1 - r + 1) * (n2 - r + 1)
    return np.concatenate([win[t].reshape(n_win, r * r) for t in range(n_s)], axis=1)


def hankel_multiplicity(grid_shape: tuple[int, int], r: int) -> np.ndarray:
    """How many r x r windows contain each k-space location (integer grid)."""
    _check_window(grid_shape, r)

    def axis_counts(n: int) -> np.ndarray:
        i = np.arange(n)
        return np.minimum(i, n - r) - np.maximum(i - r + 1, 0) + 1

    return np.outer(axis_counts(grid_shape[0]), axis_counts(grid_shape[1]))


def hankel_adjoint(h: np.ndarray, grid_shape: tuple[int, int], r: int, n_s: int) -> np.ndarray:
    """True adjoint of the lift: each location receives the SUM of its copies."""
    n1, n2 = grid_shape
    _check_window(grid_shape, r)
    n1w, n2w = n1 - r + 1, n2 - r + 1
    if h.shape != (n1w * n2w, n_s * r * r):
        raise ValueError(
            f"lift shape {h.shape} inconsistent with grid {grid_shape}, r={r}, N_s={n_s}"
        )
    out = np.zeros((n_s, n1, n2), dtype=np.complex128)
    blocks = h.reshape(n1w, n2w, n_s, r, r).transpose(2, 0, 1, 3, 4)
    for a in range(r):
        for b in range(r):
            out[:, a : a + n1w, b : b + n2w] += blocks[:, :, :, a, b]
    return out


def hankel_adjoint_normalized(
    h: np.ndarray, grid_shape: tuple[int, int], r: int, n_s: int
) -> np.ndarray:
    """Multiplicity-averaged adjoint: the orthogonal projection back to grids.

    Averaging the copies of each location is the least-squares inverse of the
    lift, so normalized_adjoint(forward(x)) == x up to roundoff.
    """
    return hankel_adjoint(h, grid_shape, r, n_s) / hankel_multiplicity(grid_shape, r)


def _truncate_rank(h: np.ndarray, k: int) -> np.ndarray:
    rows, cols = h.shape
    try:
        if rows >= _GRAM_RATIO * cols:
            # eigendecomposition of the small cols x cols normal matrix;
            # H V_k V_k^H equals the rank-k SVD truncation
            _, vecs = np.linalg.eigh(h.conj().T @ h)
            vk = vecs[:, -k:]
            return (h @ vk) @ vk.conj().T
        u, s, vh = np.linalg.svd(h, full_matrices=False)
        return (u[:, :k] * s[:k]) @ vh[:k]
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError(
            f"SVD failed on the {rows}x{cols} block-Hankel lift: {e}"
        ) from e


def lowrank_project(shots: np.ndarray, budget: RankBudget) -> np.ndarray:
    """Hard-threshold the lift to its k largest singular values, map back.

    Pipeline: lift -> keep k largest singular values -> multiplicity-averaged
    adjoint.  When k covers the full spectrum the input is returned as an
    exact copy, skipping the SVD entirely; this makes the full-rank setting
    bit-identical to no projection at all.
    """
    shots = np.asarray(shots, dtype=np.complex128)
    squeeze = shots.ndim == 2
    if squeeze:
        shots = shots[None]
    n_s, n1, n2 = shots.shape
    r = budget.r
    _check_window((n1, n2), r)
    rows, cols = (n1 - r + 1) * (n2 - r + 1), n_s * r * r
    k = min(budget.k, rows, cols)
    if k >= min(rows, cols):
        out = shots.copy()
        return out[0] if squeeze else out
    hk = _truncate_rank(hankel_forward(shots, r), k)
    out = hankel_adjoint_normalized(hk, (n1, n2), r, n_s)
    return out[0] if squeeze else out
