"""Parameter fitting and error metrics.

SAGE fitting solves, per voxel, the two-regime echo model

    pre:   S(TE) = S0_I  * exp(-TE * R2s)
    post:  S(TE) = S0_II * exp(-TE_SE * (R2s - R2)) * exp(-TE * (2*R2 - R2s))

by Levenberg-Marquardt over theta = (ln S0_I, ln S0_II, R2s, R2), vectorized
across voxels, seeded by log-linear estimates (first two echoes give R2s, the
spin echo gives an R2 seed).  Nonconvergence flags a voxel; it never aborts
the volume.

DTI fitting is one shared log-linear least-squares design applied to every
voxel, followed by eigen-decomposition, clamping of negative eigenvalues
(flagged), and the usual rotation-invariant summaries

    MD = (l1 + l2 + l3) / 3
    FA = sqrt(3/2) * sqrt(sum (l_i - MD)^2) / sqrt(sum l_i^2)
"""

from dataclasses import dataclass

import numpy as np

from .simulate import SAGE_TE_LIST, SAGE_TE_SE

__all__ = [
    "SageFitResult",
    "DtiFitResult",
    "fit_sage",
    "fit_dti",
    "rmse_percent",
    "rsos_error",
]


@dataclass
class SageFitResult:
    t2: np.ndarray  # ms, 0 where invalid
    t2_star: np.ndarray
    s0_pre: np.ndarray
    s0_post: np.ndarray
    valid: np.ndarray  # bool: fit attempted, converged, positive times


@dataclass
class DtiFitResult:
    tensors: np.ndarray  # (n1, n2, 3, 3) after PSD clamping
    s0: np.ndarray
    md: np.ndarray
    fa: np.ndarray
    principal: np.ndarray  # (n1, n2, 3) unit eigenvector of the largest eigenvalue
    valid: np.ndarray
    psd_clamped: np.ndarray  # bool: negative eigenvalue was clipped to zero


def _sage_model(theta, te, te_se, pre):
    """Signals and Jacobian for theta = (ln s0_pre, ln s0_post, r2s, r2)."""
    n_vox = theta.shape[0]
    n_e = len(te)
    sig = np.empty((n_vox, n_e))
    jac = np.zeros((n_vox, n_e, 4))
    p1, p2, r2s, r2 = theta.T
    for k, t in enumerate(te):
        if pre[k]:
            s = np.exp(p1 - t * r2s)
            jac[:, k, 0] = s
            jac[:, k, 2] = -t * s
        else:
            s = np.exp(p2 - te_se * (r2s - r2) - t * (2.0 * r2 - r2s))
            jac[:, k, 1] = s
            jac[:, k, 2] = (t - te_se) * s
            jac[:, k, 3] = (te_se - 2.0 * t) * s
        sig[:, k] = s
    return sig, jac


def fit_sage(
    echoes: np.ndarray,
    te_list=SAGE_TE_LIST,
    te_se: float = SAGE_TE_SE,
    mask: np.ndarray | None = None,
    max_iter: int = 60,
) -> SageFitResult:
    """Voxelwise relaxometry from an (n_echo, n1, n2) magnitude stack."""
    echoes = np.asarray(echoes, dtype=np.float64)
    te = np.asarray(te_list, dtype=np.float64)
    if echoes.ndim != 3 or echoes.shape[0] != te.size:
        raise ValueError(
            f"echoes must be (n_echo, n1, n2) matching {te.size} echo times"
        )
    if te.size < 4:
        raise ValueError(f"need at least 4 echoes for 4 unknowns, got {te.size}")
    pre = te <= te_se / 2
    if pre.sum() < 2 or (~pre).sum() < 2:
        raise ValueError("need at least two echoes on each side of the refocusing pulse")
    grid = echoes.shape[1:]
    if mask is None:
        mask = np.ones(grid, dtype=bool)

    y_all = echoes.reshape(te.size, -1).T  # (n_vox, n_echo)
    fit_idx = np.where(
        mask.ravel() & np.all(y_all > 0, axis=1) & np.all(np.isfinite(y_all), axis=1)
    )[0]
    n_vox = y_all.shape[0]
    maps = {name: np.zeros(n_vox) for name in ("t2", "t2_star", "s0_pre", "s0_post")}
    valid = np.zeros(n_vox, dtype=bool)
    if fit_idx.size == 0:
        return SageFitResult(
            **{k: v.reshape(grid) for k, v in maps.items()}, valid=valid.reshape(grid)
        )
    y = y_all[fit_idx]
    log_y = np.log(y)

    # log-linear seeds: first two (pre) echoes for r2s, the spin echo for r2
    i_pre = np.where(pre)[0][:2]
    r2s0 = (log_y[:, i_pre[0]] - log_y[:, i_pre[1]]) / (te[i_pre[1]] - te[i_pre[0]])
    p1_0 = log_y[:, i_pre[0]] + te[i_pre[0]] * r2s0
    i_se = int(np.argmin(np.abs(te - te_se)))
    r2_0 = (p1_0 - log_y[:, i_se]) / te_se
    theta = np.stack([p1_0, p1_0, r2s0, r2_0], axis=1)

    sig, _ = _sage_model(theta, te, te_se, pre)
    cost = np.sum((sig - y) ** 2, axis=1)
    lam = np.full(fit_idx.size, 1e-3)
    converged = np.zeros(fit_idx.size, dtype=bool)
    eye4 = np.eye(4)
    for _ in range(max_iter):
        sig, jac = _sage_model(theta, te, te_se, pre)
        resid = sig - y
        grad = np.einsum("vki,vk->vi", jac, resid)
        hess = np.einsum("vki,vkj->vij", jac, jac)
        diag = np.maximum(np.einsum("vii->vi", hess), 1e-30)
        aug = hess + lam[:, None, None] * diag[:, :, None] * eye4
        try:
            delta = -np.linalg.solve(aug, grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            aug = aug + 1e-9 * eye4
            delta = -np.linalg.solve(aug, grad[..., None])[..., 0]
        theta_new = theta + delta
        sig_new, _ = _sage_model(theta_new, te, te_se, pre)
        cost_new = np.sum((sig_new - y) ** 2, axis=1)
        better = np.isfinite(cost_new) & (cost_new <= cost)
        theta = np.where(better[:, None], theta_new, theta)
        cost = np.where(better, cost_new, cost)
        lam = np.where(better, lam / 3.0, lam * 10.0)
        step = np.max(np.abs(delta) / (1.0 + np.abs(theta)), axis=1)
        converged |= better & (step < 1e-12)
        if converged.all():
            break

    p1, p2, r2s, r2 = theta.T
    good = converged & np.all(np.isfinite(theta), axis=1) & (r2s > 0) & (r2 > 0)
    safe_r2 = np.where(r2 > 0, r2, 1.0)
    safe_r2s = np.where(r2s > 0, r2s, 1.0)
    maps["t2"][fit_idx] = np.where(good, 1.0 / safe_r2, 0.0)
    maps["t2_star"][fit_idx] = np.where(good, 1.0 / safe_r2s, 0.0)
    maps["s0_pre"][fit_idx] = np.where(good, np.exp(p1), 0.0)
    maps["s0_post"][fit_idx] = np.where(good, np.exp(p2), 0.0)
    valid[fit_idx] = good
    return SageFitResult(
        **{k: v.reshape(grid) for k, v in maps.items()}, valid=valid.reshape(grid)
    )


def fit_dti(
    images: np.ndarray,
    bvals,
    bvecs,
    mask: np.ndarray | None = None,
) -> DtiFitResult:
    """Log-linear tensor fit from (1 + n_dir, n1, n2): b0 first, then DWIs."""
    images = np.asarray(images, dtype=np.float64)
    bvals = np.asarray(bvals, dtype=np.float64)
    bvecs = np.asarray(bvecs, dtype=np.float64)
    if images.ndim != 3 or images.shape[0] != 1 + bvals.size:
        raise ValueError(
            f"images must be (1 + n_dir, n1, n2) matching {bvals.size} directions"
        )
    if bvecs.shape != (bvals.size, 3):
        raise ValueError(f"bvecs shape {bvecs.shape} != ({bvals.size}, 3)")
    design = np.zeros((1 + bvals.size, 7))
    design[:, 0] = 1.0
    gx, gy, gz = bvecs[:, 0], bvecs[:, 1], bvecs[:, 2]
    design[1:, 1] = -bvals * gx * gx
    design[1:, 2] = -bvals * gy * gy
    design[1:, 3] = -bvals * gz * gz
    design[1:, 4] = -2.0 * bvals * gx * gy
    design[1:, 5] = -2.0 * bvals * gx * gz
    design[1:, 6] = -2.0 * bvals * gy * gz
    if np.linalg.matrix_rank(design) < 7:
        raise ValueError("gradient scheme does not determine the tensor")
    solver = np.linalg.pinv(design)

    grid = images.shape[1:]
    if mask is None:
        mask = np.ones(grid, dtype=bool)
    y_all = images.reshape(images.shape[0], -1).T
    usable = mask.ravel() & np.all(y_all > 0, axis=1) & np.all(np.isfinite(y_all), axis=1)
    fit_idx = np.where(usable)[0]

    out = DtiFitResult(
        tensors=np.zeros(grid + (3, 3)),
        s0=np.zeros(grid),
        md=np.zeros(grid),
        fa=np.zeros(grid),
        principal=np.zeros(grid + (3,)),
        valid=np.zeros(grid, dtype=bool),
        psd_clamped=np.zeros(grid, dtype=bool),
    )
    if fit_idx.size == 0:
        return out

    theta = np.log(y_all[fit_idx]) @ solver.T  # (n_vox, 7)
    tensors = np.empty((fit_idx.size, 3, 3))
    tensors[:, 0, 0] = theta[:, 1]
    tensors[:, 1, 1] = theta[:, 2]
    tensors[:, 2, 2] = theta[:, 3]
    tensors[:, 0, 1] = tensors[:, 1, 0] = theta[:, 4]
    tensors[:, 0, 2] = tensors[:, 2, 0] = theta[:, 5]
    tensors[:, 1, 2] = tensors[:, 2, 1] = theta[:, 6]

    evals, evecs = np.linalg.eigh(tensors)
    scale = np.maximum(np.max(np.abs(evals), axis=1), 1e-30)
    clamped = evals[:, 0] < -1e-10 * scale
    evals = np.maximum(evals, 0.0)
    md = evals.mean(axis=1)
    dev = evals - md[:, None]
    denom = np.sqrt(np.sum(evals**2, axis=1))
    fa = np.where(
        denom > 0,
        np.sqrt(1.5) * np.sqrt(np.sum(dev**2, axis=1)) / np.where(denom > 0, denom, 1.0),
        0.0,
    )

    tensors_psd = np.einsum("vab,vb,vcb->vac", evecs, evals, evecs)

    flat_tensors = out.tensors.reshape(-1, 3, 3)
    flat_tensors[fit_idx] = tensors_psd
    flat_principal = out.principal.reshape(-1, 3)
    flat_principal[fit_idx] = evecs[:, :, 2]  # eigh sorts ascending
    out.s0.ravel()[fit_idx] = np.exp(theta[:, 0])
    out.md.ravel()[fit_idx] = md
    out.fa.ravel()[fit_idx] = fa
    out.valid.ravel()[fit_idx] = np.all(np.isfinite(theta), axis=1)
    out.psd_clamped.ravel()[fit_idx] = clamped
    return out


def rmse_percent(recon: np.ndarray, reference: np.ndarray, mask: np.ndarray | None = None) -> float:
    """100 * ||mask*(recon - ref)|| / ||mask*ref||; complex inputs stay complex."""
    recon = np.asarray(recon)
    reference = np.asarray(reference)
    if recon.shape != reference.shape:
        raise ValueError(f"shape mismatch {recon.shape} vs {reference.shape}")
    if mask is None:
        mask = np.ones(recon.shape, dtype=bool)
    if not np.any(mask):
        raise ValueError("mask selects no voxels")
    diff = np.where(mask, recon - reference, 0)
    ref = np.where(mask, reference, 0)
    ref_norm = np.linalg.norm(ref.ravel())
    if ref_norm == 0:
        raise ValueError("reference is zero on the mask")
    return 100.0 * float(np.linalg.norm(diff.ravel())) / float(ref_norm)


def rsos_error(error_stack: np.ndarray) -> np.ndarray:
    """Root-sum-of-squares over the leading (frame) axis."""
    error_stack = np.asarray(error_stack)
    if error_stack.ndim < 2:
        raise ValueError("expected a stack of error images")
    return np.sqrt(np.sum(np.abs(error_stack) ** 2, axis=0))
