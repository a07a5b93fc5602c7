"""Per-shot phase estimation with a fixed magnitude image.

Solves, independently for each shot,

    min_phi  || F_t C (m * exp(i*phi)) - d_t ||^2  +  alpha * ||W phi||_1

over the real phase map phi, by proximal gradient descent: an explicit step
on the data term followed by the exact wavelet-l1 prox.  The data-term
gradient at voxel j is

    2 * Im( conj(m_j e^{i phi_j}) * [A^H (A(m e^{i phi}) - d)]_j )

with A the masked SENSE forward operator.  The step length comes from a
power-iteration estimate of the curvature operator v -> 2 Re(conj(x) A^H A
(x v)), optionally refined by backtracking (which also makes the objective
provably non-increasing).

Because phi lives on the real line while the data only see exp(i*phi), the
solver can restart itself through re-wrapped representatives: add a random
constant, wrap into (-pi, pi], subtract the constant again.  The data term
cannot tell the difference but the wavelet term can, which lets the
iteration escape poor unwrapped representatives.
"""

from dataclasses import dataclass, field

import numpy as np

from .encoding import CoilMaps, SamplingMask, sense_adjoint, sense_forward
from .wavelets import prox_wavelet_l1, wavelet_l1

__all__ = [
    "PhaseCycleConfig",
    "PhaseCycleResult",
    "estimate_shot_phase",
    "estimate_all_phases",
    "wrap_phase",
    "wavelet_l1",
    "prox_wavelet_l1",
]

STEP_RULES = ("backtracking", "fixed-1/L")


def wrap_phase(phi: np.ndarray) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    return phi - 2 * np.pi * np.ceil((phi - np.pi) / (2 * np.pi))


@dataclass(frozen=True)
class PhaseCycleConfig:
    alpha: float = 1e-5  # wavelet-l1 weight; 1e-3 suits strong-phase data
    iters: int = 100  # per restart
    levels: int = 4
    n_wraps: int = 1  # 1 = plain proximal gradient, no re-wrapping
    step_rule: str = "backtracking"
    seed: int = 0  # drives the restart offsets and the power iteration start

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if not 1 <= self.n_wraps <= 8:
            raise ValueError(f"n_wraps must be in [1, 8], got {self.n_wraps}")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")


@dataclass
class PhaseCycleResult:
    phi: np.ndarray
    objectives: list[float] = field(default_factory=list)  # accepted values, all restarts
    best_objective: float = np.inf
    step: float = 0.0
    aborted: bool = False


def _curvature_step(m, phi, coils, mask, rng) -> float:
    """1/L from power iteration on v -> 2 Re(conj(x) A^H A (x v))."""
    x = m * np.exp(1j * phi)
    v = rng.standard_normal(m.shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(25):
        hv = 2.0 * np.real(
            np.conj(x) * sense_adjoint(sense_forward(x * v, coils, mask), coils, mask)
        )
        norm = np.linalg.norm(hv)
        if norm == 0.0:
            return 1.0  # flat curvature; any step works, gradient is zero
        lam = float(np.vdot(v, hv).real)
        v = hv / norm
    lam = max(lam, norm)
    if lam <= 0.0:
        return 1.0
    return 1.0 / lam


def _objective_and_gradient(phi, m, d, coils, mask):
    x = m * np.exp(1j * phi)
    resid = sense_forward(x, coils, mask) - d
    g = float(np.vdot(resid, resid).real)
    grad = 2.0 * np.imag(np.conj(x) * sense_adjoint(resid, coils, mask))
    return g, grad


def _data_term(phi, m, d, coils, mask) -> float:
    x = m * np.exp(1j * phi)
    resid = sense_forward(x, coils, mask) - d
    return float(np.vdot(resid, resid).real)


def estimate_shot_phase(
    m: np.ndarray,
    d_t: np.ndarray,
    coils: CoilMaps,
    mask: SamplingMask,
    cfg: PhaseCycleConfig,
    phi0: np.ndarray | None = None,
) -> PhaseCycleResult:
    """Estimate one shot's phase map given the magnitude estimate ``m``.

    ``d_t`` is the (N_c, N1_ext, N2) masked shot k-space.  ``phi0`` defaults
    to zero; in the pipeline it comes from the angle of the denoised shot
    image.  Returns the phi with the lowest objective seen.
    """
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("magnitude image must be nonnegative")
    phi = (
        np.zeros(m.shape) if phi0 is None else np.asarray(phi0, dtype=np.float64).copy()
    )
    if phi.shape != m.shape:
        raise ValueError(f"phi0 shape {phi.shape} != magnitude shape {m.shape}")
    rng = np.random.default_rng(cfg.seed)

    def full_objective(p, data_part):
        return data_part + (cfg.alpha * wavelet_l1(p, cfg.levels) if cfg.alpha > 0 else 0.0)

    base_step = _curvature_step(m, phi, coils, mask, rng)
    result = PhaseCycleResult(phi=phi.copy(), step=base_step)
    g0 = _data_term(phi, m, d_t, coils, mask)
    result.best_objective = full_objective(phi, g0)
    if not np.isfinite(result.best_objective):
        result.aborted = True
        return result

    for restart in range(cfg.n_wraps):
        if restart > 0:
            c = rng.uniform(-np.pi, np.pi)
            phi = wrap_phase(phi + c) - c  # data term blind to this, l1 term not
        g_cur, grad = _objective_and_gradient(phi, m, d_t, coils, mask)
        f_cur = full_objective(phi, g_cur)
        if not np.isfinite(f_cur):
            result.aborted = True
            break

        for _ in range(cfg.iters):
            step = base_step
            accepted = False
            for _ in range(40):
                cand = phi - step * grad
                if cfg.alpha > 0:
                    cand = prox_wavelet_l1(cand, step * cfg.alpha, cfg.levels)
                g_new = _data_term(cand, m, d_t, coils, mask)
                if cfg.step_rule == "fixed-1/L":
                    accepted = np.isfinite(g_new)
                    break
                delta = cand - phi
                bound = g_cur + float(np.vdot(grad, delta).real) + float(
                    np.vdot(delta, delta).real
                ) / (2 * step)
                if np.isfinite(g_new) and g_new <= bound + 1e-12 * max(1.0, abs(bound)):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break  # no usable step; stationary to machine precision
            f_new = full_objective(cand, g_new)
            if not np.isfinite(f_new):
                result.aborted = True
                break
            phi = cand
            g_cur = g_new
            f_cur = f_new
            result.objectives.append(f_cur)
            if f_cur < result.best_objective:
                result.best_objective = f_cur
                result.phi = phi.copy()
                result.step = step
            _, grad = _objective_and_gradient(phi, m, d_t, coils, mask)
        if result.aborted:
            break

    return result


def estimate_all_phases(
    m: np.ndarray,
    d,  # KSpaceShotSet
    coils: CoilMaps,
    cfg: PhaseCycleConfig,
    phi0: np.ndarray | None = None,
) -> np.ndarray:
    """Run :func:`estimate_shot_phase` for every shot; (N_s, N1_ext, N2) phases."""
    out = np.empty((d.n_shots,) + m.shape)
    for t in range(d.n_shots):
        init = None if phi0 is None else phi0[t]
        out[t] = estimate_shot_phase(m, d.data[t], coils, d.masks[t], cfg, phi0=init).phi
    return out
