"""Multishot low-rank solver: alternate a rank projection on the joint
k-space of all shots with exact resubstitution of the acquired samples.

Each iteration takes the current shot stack y, projects its k-space lift to
the rank budget, then per shot re-encodes through the coils, overwrites the
acquired k-space samples with the measured data, and combines back to one
shot image.  A momentum (FISTA) variant extrapolates between iterates; the
plain variant is a POCS-style alternating projection.

When the rank budget covers the full lift spectrum the projection is the
identity and the solver skips the lift and the FFT round trip outright, so
that setting is bit-identical to a shot-by-shot SENSE data-consistency loop.
"""

import json
import sys
from dataclasses import dataclass, field

import numpy as np

from .encoding import CoilMaps, KSpaceShotSet, coil_combine_lsq, coil_expand, sense_adjoint
from .fourier import fft2c, ifft2c
from .hankel import RankBudget, lowrank_project

__all__ = [
    "MusselsConfig",
    "MusselsResult",
    "FistaState",
    "DivergenceError",
    "relative_update",
    "solve_mussels",
]

# voxels with coil energy below this fraction of the peak are treated as
# background by the least-squares combine
COIL_ENERGY_REL_THRESHOLD = 1e-6


@dataclass(frozen=True)
class MusselsConfig:
    budget: RankBudget
    n_iter: int = 200
    rel_tol: float = 1e-3  # 0.1%; relax to 3e-3 for strong-phase (diffusion) data
    use_fista: bool = True

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError(f"n_iter must be >= 1, got {self.n_iter}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")


@dataclass
class FistaState:
    """Momentum bookkeeping: tau starts at 1 and never decreases."""

    tau: float = 1.0
    x_prev: np.ndarray | None = None
    y: np.ndarray | None = None

    def advance(self, x_new: np.ndarray) -> None:
        tau_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * self.tau * self.tau))
        self.y = x_new + ((self.tau - 1.0) / tau_next) * (x_new - self.x_prev)
        self.tau = tau_next
        self.x_prev = x_new


@dataclass
class MusselsResult:
    images: np.ndarray  # (N_s, N1_ext, N2) shot images
    rel_updates: list[float] = field(default_factory=list)
    dc_residuals: list[float] = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0


class DivergenceError(RuntimeError):
    """Iteration blew up; ``state`` holds the last finite iterate and log."""

    def __init__(self, message: str, state: MusselsResult):
        super().__init__(message)
        self.state = state


def relative_update(x_new: np.ndarray, x_old: np.ndarray) -> float:
    """||x_new - x_old|| / ||x_old||; +inf when the old iterate is zero."""
    denom = np.linalg.norm(x_old)
    if denom == 0.0:
        return np.inf
    return float(np.linalg.norm(x_new - x_old) / denom)


def _diverged(history: list[float]) -> bool:
    # growth of the update by 10x across 5 iterations, with an absolute floor
    # so benign fluctuation near convergence never trips the guard
    return (
        len(history) >= 6
        and history[-1] > 1.0
        and history[-1] > 10.0 * history[-6]
    )


def _check_coil_energy(coils: CoilMaps) -> None:
    if coils.support is None:
        return
    sos = coils.sos()
    bad = coils.support & (sos <= COIL_ENERGY_REL_THRESHOLD * sos.max())
    if np.any(bad):
        where = np.argwhere(bad)
        shown = ", ".join(f"({i},{j})" for i, j in where[:8])
        more = f" and {len(where) - 8} more" if len(where) > 8 else ""
        raise ValueError(
            f"coil energy is not invertible on support at voxels {shown}{more}"
        )


def _default_init(d: KSpaceShotSet, coils: CoilMaps) -> np.ndarray:
    return np.stack(
        [sense_adjoint(d.data[t], coils, d.masks[t]) for t in range(d.n_shots)]
    )


def solve_mussels(
    d: KSpaceShotSet,
    coils: CoilMaps,
    cfg: MusselsConfig,
    x0: np.ndarray | None = None,
    verbose: bool = False,
) -> MusselsResult:
    """Run the alternating low-rank / data-consistency iteration.

    Returns the shot image stack together with the per-iteration relative
    updates and data-consistency residuals.  Raises DivergenceError (carrying
    the last state) if the updates blow up.
    """
    if d.grid_shape != coils.grid_shape:
        raise ValueError(f"data grid {d.grid_shape} != coil grid {coils.grid_shape}")
    _check_coil_energy(coils)

    n_s = d.n_shots
    n1, n2 = d.grid_shape
    r = cfg.budget.r
    rows, cols = (n1 - r + 1) * (n2 - r + 1), n_s * r * r
    fullrank = min(cfg.budget.k, rows, cols) >= min(rows, cols)

    x = np.asarray(x0, dtype=np.complex128).copy() if x0 is not None else _default_init(d, coils)
    if x.shape != (n_s, n1, n2):
        raise ValueError(f"x0 shape {x.shape} != ({n_s}, {n1}, {n2})")

    d_norm = np.linalg.norm(d.data)
    momentum = FistaState(x_prev=x, y=x)
    result = MusselsResult(images=x)

    for it in range(1, cfg.n_iter + 1):
        try:
            y = momentum.y
            if fullrank:
                z = y  # identity projection, skip the lift and FFT round trip
            else:
                z = ifft2c(lowrank_project(fft2c(y), cfg.budget))

            x_new = np.empty_like(z)
            dc_sq = 0.0
            for t in range(n_s):
                keep = d.masks[t].keep
                xc = coil_expand(z[t], coils)
                k = np.where(keep, d.data[t], fft2c(xc))
                xc = ifft2c(k)
                x_new[t] = coil_combine_lsq(xc, coils, COIL_ENERGY_REL_THRESHOLD)
                # re-encode the resubstituted coil images: acquired samples
                # must still carry the measured values
                dc_sq += np.sum(np.abs((fft2c(xc) - d.data[t]) * keep) ** 2)
        except ValueError as e:
            # a finiteness guard tripped mid-iteration; surface the last
            # completed state instead of losing it
            raise DivergenceError(f"iteration {it} failed: {e}", result) from e
        dc_rel = float(np.sqrt(dc_sq) / d_norm) if d_norm > 0 else 0.0

        rel = relative_update(x_new, momentum.x_prev)
        result.rel_updates.append(rel)
        result.dc_residuals.append(dc_rel)
        result.images = x_new
        result.n_iter = it
        if verbose:
            print(
                json.dumps({"iter": it, "rel_update": rel, "dc_residual": dc_rel}),
                file=sys.stderr,
            )
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"non-finite iterate at iteration {it}", result)
        if _diverged(result.rel_updates):
            raise DivergenceError(
                f"update grew >10x over 5 iterations at iteration {it} "
                f"(relative update {rel:.3g})",
                result,
            )

        if cfg.use_fista:
            momentum.advance(x_new)
        else:
            momentum.x_prev = x_new
            momentum.y = x_new

        if rel < cfg.rel_tol:
            result.converged = True
            break

    return result
