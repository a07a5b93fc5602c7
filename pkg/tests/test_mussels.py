"""Multishot low-rank solver: recovery, equivalences, guards."""

import json

import numpy as np
import pytest

import synth
from msepi.encoding import CoilMaps, KSpaceShotSet, coil_combine_lsq, coil_expand, make_mask, sense_adjoint, sense_forward
from msepi.fourier import fft2c, ifft2c
from msepi.hankel import RankBudget
from msepi.mussels import (
    COIL_ENERGY_REL_THRESHOLD,
    DivergenceError,
    MusselsConfig,
    _diverged,
    relative_update,
    solve_mussels,
)


def test_relative_update_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 4, 4)) + 1j * rng.standard_normal((3, 4, 4))
    assert relative_update(x, x) == 0.0
    assert np.isclose(relative_update(1.003 * x, x), 0.003, atol=1e-12)
    y = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    assert np.isclose(
        relative_update(y, x), np.linalg.norm(y - x) / np.linalg.norm(x), atol=1e-14
    )
    assert relative_update(x, np.zeros_like(x)) == np.inf


def test_config_validation():
    b = RankBudget(r=3, n_eff=1.0)
    with pytest.raises(ValueError):
        MusselsConfig(budget=b, n_iter=0)
    with pytest.raises(ValueError):
        MusselsConfig(budget=b, rel_tol=0.0)


def test_exact_recovery_fully_sampled_single_shot():
    """Full sampling determines everything; any rank budget must not matter."""
    img = synth.blob_image(16, 16, seed=1)
    coils = synth.gaussian_coils(4, 16, 16)
    mask = make_mask(1, 16, 16, 1, 1, 0)
    d = KSpaceShotSet(sense_forward(img, coils, mask)[None], (mask,))
    for budget in [RankBudget(3, 0.3), RankBudget(2, 0.5), RankBudget(4, 4.0)]:
        res = solve_mussels(d, coils, MusselsConfig(budget=budget, n_iter=10, rel_tol=1e-12))
        err = np.linalg.norm(res.images[0] - img) / np.linalg.norm(img)
        assert err <= 1e-8
        assert res.converged


def pocs_sense_reference(d: KSpaceShotSet, coils, x0, n_iter):
    """Plain shot-by-shot SENSE data-consistency loop, no lift anywhere."""
    x = x0.copy()
    for _ in range(n_iter):
        for t in range(d.n_shots):
            xc = coil_expand(x[t], coils)
            k = np.where(d.masks[t].keep, d.data[t], fft2c(xc))
            x[t] = coil_combine_lsq(ifft2c(k), coils, COIL_ENERGY_REL_THRESHOLD)
    return x


def test_full_rank_budget_equals_shot_by_shot_sense_bitexact():
    """k = N_s r^2 keeps the whole spectrum; every iterate must match a pure
    per-shot SENSE loop bit for bit."""
    img = synth.blob_image(16, 16, seed=2)
    coils = synth.gaussian_coils(3, 16, 16)
    d, _ = synth.acquire_shots(img, coils, n_s=2, r_inplane=2, phase_amplitude=0.3)
    budget = RankBudget(r=3, n_eff=2.0)  # k = 18 = N_s * r^2
    x0 = np.stack([sense_adjoint(d.data[t], coils, d.masks[t]) for t in range(2)])
    for n_iter in (1, 2, 5):
        res = solve_mussels(
            d, coils, MusselsConfig(budget=budget, n_iter=n_iter, rel_tol=1e-30, use_fista=False)
        )
        ref = pocs_sense_reference(d, coils, x0, n_iter)
        assert np.array_equal(res.images, ref)


def test_acquired_samples_consistent_after_every_iteration():
    img = synth.blob_image(16, 16, seed=3)
    coils = synth.gaussian_coils(4, 16, 16)
    d, _ = synth.acquire_shots(img, coils, n_s=2, r_inplane=2, phase_amplitude=0.3)
    cfg = MusselsConfig(budget=RankBudget(r=3, n_eff=1.0), n_iter=15, rel_tol=1e-30)
    res = solve_mussels(d, coils, cfg)
    assert len(res.dc_residuals) == 15
    assert max(res.dc_residuals) <= 1e-10


def test_undersampled_recovery_beats_adjoint_init():
    img = synth.blob_image(24, 24, seed=4)
    coils = synth.gaussian_coils(6, 24, 24)
    d, _ = synth.acquire_shots(img, coils, n_s=2, r_inplane=2, phase_amplitude=0.3)
    x0 = np.stack([sense_adjoint(d.data[t], coils, d.masks[t]) for t in range(2)])
    cfg = MusselsConfig(budget=RankBudget(r=3, n_eff=1.0), n_iter=60, rel_tol=1e-9)
    res = solve_mussels(d, coils, cfg)

    def err(x):
        # compare magnitudes: shots carry their own phases
        return np.linalg.norm(np.abs(x) - np.abs(img)) / np.linalg.norm(np.abs(img))

    assert err(res.images[0]) < err(x0[0])
    assert np.all(np.isfinite(res.images))


def test_divergence_guard_logic():
    assert not _diverged([0.5, 0.4, 0.3, 0.2, 0.1, 0.05])
    assert not _diverged([1e-6, 1e-6, 1e-6, 1e-6, 1e-6, 1e-4])  # above 10x but tiny
    assert not _diverged([0.2, 0.3, 0.4, 0.5, 0.6, 1.5])  # big but not 10x
    assert _diverged([0.2, 0.3, 0.4, 0.5, 0.6, 2.5])
    assert not _diverged([0.2, 0.3, 0.4, 0.5, 2.5])  # too short


def test_nonfinite_inputs_rejected_or_abort_with_state():
    img = synth.blob_image(8, 8, seed=5)
    coils = synth.gaussian_coils(2, 8, 8)
    mask = make_mask(1, 8, 8, 2, 1, 0)
    data = sense_forward(img, coils, mask)[None]
    bad = data.copy()
    bad[0, 0][mask.keep] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        KSpaceShotSet(bad, (mask,))  # bad measurements die at construction

    d = KSpaceShotSet(data, (mask,))
    x0 = np.full((1, 8, 8), np.nan, dtype=complex)
    with pytest.raises(DivergenceError) as exc:
        solve_mussels(d, coils, MusselsConfig(budget=RankBudget(2, 1.0), n_iter=5), x0=x0)
    assert exc.value.state.n_iter == 0  # nothing completed, state is the init


def test_noninvertible_coil_energy_diagnostic():
    maps = synth.gaussian_coils(3, 8, 8).maps.copy()
    maps[:, 4, 5] = 1e-20  # technically nonzero, far below the 1e-6 threshold
    support = np.ones((8, 8), dtype=bool)
    coils = CoilMaps(maps, support=support)
    mask = make_mask(1, 8, 8, 2, 1, 0)
    d = KSpaceShotSet(np.zeros((1, 3, 8, 8), dtype=complex), (mask,))
    with pytest.raises(ValueError, match=r"\(4,5\)"):
        solve_mussels(d, coils, MusselsConfig(budget=RankBudget(2, 1.0)))


def test_verbose_emits_json_log_lines(capsys):
    img = synth.blob_image(8, 8, seed=6)
    coils = synth.gaussian_coils(2, 8, 8)
    d, _ = synth.acquire_shots(img, coils, n_s=2, r_inplane=2)
    cfg = MusselsConfig(budget=RankBudget(2, 1.0), n_iter=3, rel_tol=1e-30)
    solve_mussels(d, coils, cfg, verbose=True)
    lines = [ln for ln in capsys.readouterr().err.splitlines() if ln.strip()]
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert rec["iter"] == 1 and "rel_update" in rec and "dc_residual" in rec


def test_fista_momentum_runs_and_logs():
    img = synth.blob_image(16, 16, seed=7)
    coils = synth.gaussian_coils(4, 16, 16)
    d, _ = synth.acquire_shots(img, coils, n_s=2, r_inplane=2, phase_amplitude=0.3)
    cfg = MusselsConfig(budget=RankBudget(3, 1.0), n_iter=20, rel_tol=1e-30, use_fista=True)
    res = solve_mussels(d, coils, cfg)
    assert res.n_iter == 20
    assert len(res.rel_updates) == 20
    assert np.all(np.isfinite(res.images))
