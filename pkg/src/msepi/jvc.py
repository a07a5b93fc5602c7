"""Joint virtual-coil reconstruction of a single real-valued image.

Given per-shot phase maps, every shot is described by combined sensitivities
C * exp(i*phi_t).  Because the unknown image is real, each shot also yields a
conjugate-symmetric companion block: sampling the mirrored k-space locations
through conj(C * exp(i*phi_t)) must reproduce conj_mirror(d_t).  Stacking
primary and virtual blocks gives one overdetermined linear system

    min_m  sum_k || F_k C_k m - d_k ||^2  +  beta * R(m),   m real,

solved either with Tikhonov regularization (conjugate gradient on the
real-restricted normal equations Re(A^H A) + beta*I) or with isotropic total
variation (proximal gradient with inertial acceleration, inner prox by a
dual fixed-point iteration).

The solution is signed real: positivity is a display choice, not a
constraint, since enforcing it would leave the linear least-squares class.
"""

from dataclasses import dataclass

import numpy as np

from .encoding import CoilMaps, KSpaceShotSet, sense_adjoint, sense_forward, vc_augment
from .mussels import FistaState

__all__ = [
    "JvcConfig",
    "JvcResult",
    "solve_jvc",
    "jvc_system",
    "tv_norm",
    "tv_prox",
]

REG_KINDS = ("tikhonov", "tv")


@dataclass(frozen=True)
class JvcConfig:
    beta: float = 0.0
    reg_kind: str = "tikhonov"
    cg_iters: int = 100
    cg_tol: float = 1e-8
    pd_iters: int = 80  # outer proximal-gradient budget for TV
    pd_tol: float = 1e-6
    tv_inner_iters: int = 60
    use_virtual_coils: bool = True
    real_constraint: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.reg_kind not in REG_KINDS:
            raise ValueError(f"reg_kind must be one of {REG_KINDS}")
        for name in ("cg_iters", "pd_iters", "tv_inner_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (self.cg_tol > 0 and self.pd_tol > 0):
            raise ValueError("tolerances must be > 0")


@dataclass
class JvcResult:
    image: np.ndarray  # signed real (complex if real_constraint=False)
    converged: bool
    n_iter: int
    rel_residual: float
    warning: str | None = None


def _blocks(phi, d: KSpaceShotSet, coils: CoilMaps, use_vc: bool):
    """Expand the shot set into (coil-maps, mask, data) measurement blocks."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (d.n_shots,) + d.grid_shape:
        raise ValueError(
            f"phase stack shape {phi.shape} does not match "
            f"{(d.n_shots,) + d.grid_shape}"
        )
    out = []
    for t in range(d.n_shots):
        maps_t = CoilMaps(coils.maps * np.exp(1j * phi[t])[None])
        out.append((maps_t, d.masks[t], d.data[t]))
        if use_vc:
            d_vc, mask_vc = vc_augment(d.data[t], d.masks[t])
            out.append((CoilMaps(np.conj(maps_t.maps)), mask_vc, d_vc))
    return out


def jvc_system(phi, d: KSpaceShotSet, coils: CoilMaps, use_virtual_coils: bool = True):
    """Normal-equation pieces of the stacked system: (apply A^H A, A^H d).

    Both are complex; the real-restricted solver takes real parts afterwards.
    """
    blocks = _blocks(phi, d, coils, use_virtual_coils)

    def apply_normal(m):
        acc = np.zeros(m.shape, dtype=np.complex128)
        for maps_k, mask_k, _ in blocks:
            acc += sense_adjoint(sense_forward(m, maps_k, mask_k), maps_k, mask_k)
        return acc

    rhs = np.zeros(d.grid_shape, dtype=np.complex128)
    for maps_k, mask_k, d_k in blocks:
        rhs += sense_adjoint(d_k, maps_k, mask_k)
    return apply_normal, rhs


def _cg(apply_op, rhs, x0, n_iters, tol):
    """Plain conjugate gradient; keeps the iterate with the smallest residual."""
    x = x0.copy()
    r = rhs - apply_op(x)
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    b_norm = float(np.linalg.norm(rhs))
    if b_norm == 0.0:
        return np.zeros_like(rhs), True, 0, 0.0, None
    best_x, best_res = x.copy(), float(np.sqrt(rs)) / b_norm
    warning = None
    for it in range(n_iters):
        if np.sqrt(rs) / b_norm <= tol:
            return best_x, True, it, best_res, None
        ap = apply_op(p)
        pap = float(np.vdot(p, ap).real)
        if pap <= 0 or not np.isfinite(pap):
            warning = f"cg breakdown at iteration {it} (curvature {pap:.3e})"
            break
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.vdot(r, r).real)
        rel = float(np.sqrt(rs_new)) / b_norm
        if rel < best_res:
            best_res, best_x = rel, x.copy()
        p = r + (rs_new / rs) * p
        rs = rs_new
    else:
        warning = f"cg budget of {n_iters} iterations exhausted at {best_res:.3e}"
    if best_res <= tol:
        return best_x, True, n_iters, best_res, None
    return best_x, False, n_iters, best_res, warning


def _forward_diff(u):
    """Forward differences with a symmetric (zero-slope) boundary."""
    g1 = np.zeros_like(u)
    g2 = np.zeros_like(u)
    g1[:-1, :] = u[1:, :] - u[:-1, :]
    g2[:, :-1] = u[:, 1:] - u[:, :-1]
    return g1, g2


def _divergence(p1, p2):
    """Negative adjoint of :func:`_forward_diff`."""
    d1 = np.zeros_like(p1)
    d1[0, :] = p1[0, :]
    d1[1:-1, :] = p1[1:-1, :] - p1[:-2, :]
    d1[-1, :] = -p1[-2, :]
    d2 = np.zeros_like(p2)
    d2[:, 0] = p2[:, 0]
    d2[:, 1:-1] = p2[:, 1:-1] - p2[:, :-2]
    d2[:, -1] = -p2[:, -2]
    return d1 + d2


def tv_norm(m: np.ndarray) -> float:
    """Isotropic total variation, forward differences, symmetric boundary."""
    g1, g2 = _forward_diff(np.asarray(m, dtype=np.float64))
    return float(np.sum(np.sqrt(g1 * g1 + g2 * g2)))


def tv_prox(z: np.ndarray, lam: float, n_iters: int = 60, tol: float = 1e-6) -> np.ndarray:
    """argmin_u 0.5*||u - z||^2 + lam * tv_norm(u), by dual fixed-point iteration."""
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    z = np.asarray(z, dtype=np.float64)
    if lam == 0.0:
        return z.copy()
    p1 = np.zeros_like(z)
    p2 = np.zeros_like(z)
    tau = 0.125  # dual step bound for this discretization
    for _ in range(n_iters):
        g1, g2 = _forward_diff(_divergence(p1, p2) - z / lam)
        denom = 1.0 + tau * np.sqrt(g1 * g1 + g2 * g2)
        p1_new = (p1 + tau * g1) / denom
        p2_new = (p2 + tau * g2) / denom
        change = max(np.max(np.abs(p1_new - p1)), np.max(np.abs(p2_new - p2)))
        p1, p2 = p1_new, p2_new
        if change <= tol:
            break
    return z - lam * _divergence(p1, p2)


def _power_lipschitz(apply_grad_op, shape, n_iters=30, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(n_iters):
        hv = apply_grad_op(v)
        norm = float(np.linalg.norm(hv))
        if norm == 0.0:
            return 1.0
        lam = norm
        v = hv / norm
    return lam


def solve_jvc(
    m0: np.ndarray,
    phi: np.ndarray,
    d: KSpaceShotSet,
    coils: CoilMaps,
    cfg: JvcConfig,
) -> JvcResult:
    """Reconstruct the shared image from all shots given their phase maps.

    ``m0`` seeds the iteration (its real part under the real constraint).
    """
    apply_normal, rhs = jvc_system(phi, d, coils, cfg.use_virtual_coils)
    m0 = np.asarray(m0)
    if m0.shape != d.grid_shape:
        raise ValueError(f"m0 shape {m0.shape} != grid shape {d.grid_shape}")

    if cfg.real_constraint:
        x0 = np.real(m0).astype(np.float64)

        def normal_re(m):
            return np.real(apply_normal(m.astype(np.complex128)))

        rhs_eff = np.real(rhs)
        project = np.real
    else:
        x0 = m0.astype(np.complex128)
        normal_re = apply_normal
        rhs_eff = rhs

        def project(x):
            return x

    if cfg.reg_kind == "tikhonov":
        def regularized(m):
            return normal_re(m) + cfg.beta * m

        x, ok, n_it, res, warning = _cg(
            regularized, rhs_eff, x0, cfg.cg_iters, cfg.cg_tol
        )
        return JvcResult(x, ok, n_it, res, warning)

    # TV path: f(m) = ||A m - d||^2 has gradient 2*(normal_re(m) - rhs_eff)
    if not cfg.real_constraint:
        raise ValueError("tv regularization requires the real constraint")
    lip = 2.0 * _power_lipschitz(lambda v: project(normal_re(v)), x0.shape)
    step = 1.0 / lip
    m = x0.copy()
    state = FistaState(x_prev=m.copy(), y=m.copy())
    rel = np.inf
    for it in range(cfg.pd_iters):
        grad = 2.0 * (normal_re(state.y) - rhs_eff)
        cand = state.y - step * grad
        if cfg.beta > 0:
            cand = tv_prox(cand, step * cfg.beta, cfg.tv_inner_iters, cfg.pd_tol)
        if not np.all(np.isfinite(cand)):
            return JvcResult(
                m, False, it, rel, warning=f"non-finite iterate at iteration {it}"
            )
        denom = float(np.linalg.norm(cand))
        rel = float(np.linalg.norm(cand - m)) / denom if denom > 0 else 0.0
        m = cand
        state.advance(m)
        if rel <= cfg.pd_tol:
            return JvcResult(m, True, it + 1, rel, None)
    return JvcResult(
        m,
        False,
        cfg.pd_iters,
        rel,
        warning=f"tv budget of {cfg.pd_iters} iterations exhausted at {rel:.3e}",
    )
