"""Synthetic ground-truth generation: phantoms, coils, phases, signals, noise.

Everything downstream of this module is verified against data produced here,
so every generator is seeded and every dataset ships with its exact ground
truth (image, per-shot phases, tissue parameters).

Signal models:
  multi-echo spin-and-gradient-echo, with the refocusing pulse splitting the
  echo train into two regimes (R2 = 1/T2, R2s = 1/T2*):

      pre:   S(TE) = S0_I  * exp(-TE * R2s)
      post:  S(TE) = S0_II * exp(-TE_SE * (R2s - R2)) * exp(-TE * (2*R2 - R2s))

  diffusion:  S_i = S0 * exp(-b_i * g_i^T D g_i)

Shot-to-shot phase fields come in two amplitude regimes: mild structural
variation (about 0.3 rad) and strong diffusion-driven variation (about pi).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .container import read_container, write_container
from .encoding import CoilMaps, KSpaceShotSet, make_mask, sense_forward, sms_extend

__all__ = [
    "Ellipse",
    "PhantomSpec",
    "make_phantom",
    "shepp_logan_like",
    "make_coil_maps",
    "ShotPhaseModel",
    "STRUCTURAL_PHASES",
    "DIFFUSION_PHASES",
    "make_shot_phases",
    "SageModelParams",
    "synthesize_sage",
    "DiffusionModel",
    "synthesize_dwi",
    "acquire",
    "simulate_dataset",
    "SimulatedDataset",
    "load_dataset",
]

SAGE_TE_LIST = (26.0, 61.0, 95.0, 130.0, 165.0)  # ms
SAGE_TE_SE = 165.0

# six noncollinear unit directions, the classic pairwise scheme
DWI_DIRECTIONS = np.array(
    [
        [1, 0, 1],
        [-1, 0, 1],
        [0, 1, 1],
        [0, 1, -1],
        [1, 1, 0],
        [-1, 1, 0],
    ],
    dtype=float,
) / np.sqrt(2.0)
DWI_BVALUE = 1000.0  # s/mm^2


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]  # (y, x) in [-1, 1] box coordinates
    axes: tuple[float, float]  # semi-axes in the same units
    angle: float = 0.0  # radians, counterclockwise
    amplitude: complex = 1.0

    def __post_init__(self):
        if not (self.axes[0] > 0 and self.axes[1] > 0):
            raise ValueError(f"ellipse axes must be positive, got {self.axes}")
        if not np.isfinite(self.amplitude):
            raise ValueError("ellipse amplitude must be finite")


@dataclass(frozen=True)
class PhantomSpec:
    n1: int
    n2: int
    ellipses: tuple[Ellipse, ...] = ()

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("grid must be at least 1x1")


def make_phantom(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render overlapping ellipses; amplitudes add. Returns (image, support)."""
    y = (np.arange(spec.n1)[:, None] - spec.n1 / 2) / (spec.n1 / 2)
    x = (np.arange(spec.n2)[None, :] - spec.n2 / 2) / (spec.n2 / 2)
    img = np.zeros((spec.n1, spec.n2), dtype=np.complex128)
    support = np.zeros((spec.n1, spec.n2), dtype=bool)
    for e in spec.ellipses:
        dy, dx = y - e.center[0], x - e.center[1]
        cos_a, sin_a = np.cos(e.angle), np.sin(e.angle)
        u = cos_a * dx + sin_a * dy
        v = -sin_a * dx + cos_a * dy
        inside = (u / e.axes[1]) ** 2 + (v / e.axes[0]) ** 2 <= 1.0
        img[inside] += e.amplitude
        support |= inside
    return img, support


def shepp_logan_like(n1: int, n2: int) -> PhantomSpec:
    """Head-phantom-flavored preset with real positive net amplitudes."""
    return PhantomSpec(
        n1,
        n2,
        ellipses=(
            Ellipse((0.0, 0.0), (0.90, 0.70), 0.0, 1.0),
            Ellipse((0.0, 0.0), (0.82, 0.62), 0.0, -0.35),
            Ellipse((0.12, 0.25), (0.40, 0.14), -0.3, 0.25),
            Ellipse((0.12, -0.25), (0.42, 0.18), 0.35, 0.20),
            Ellipse((-0.35, 0.0), (0.20, 0.24), 0.0, 0.30),
            Ellipse((0.45, 0.0), (0.10, 0.10), 0.0, 0.40),
            Ellipse((0.55, 0.35), (0.05, 0.05), 0.0, 0.45),
        ),
    )


def make_coil_maps(n_c: int, n1: int, n2: int, width: float = 0.6) -> CoilMaps:
    """Smooth Gaussian lobes around the perimeter with gentle linear phases.

    ``width`` is the lobe standard deviation as a fraction of min(n1, n2).
    A single coil degenerates to the uniform map C == 1.
    """
    if n_c < 1:
        raise ValueError(f"need at least one coil, got {n_c}")
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    if n_c == 1:
        return CoilMaps(np.ones((1, n1, n2), dtype=np.complex128))
    i = np.arange(n1)[:, None]
    j = np.arange(n2)[None, :]
    w = width * min(n1, n2)
    maps = np.empty((n_c, n1, n2), dtype=np.complex128)
    for c in range(n_c):
        ang = 2 * np.pi * c / n_c
        ci = n1 / 2 + 0.45 * n1 * np.sin(ang)
        cj = n2 / 2 + 0.45 * n2 * np.cos(ang)
        mag = np.exp(-((i - ci) ** 2 + (j - cj) ** 2) / (2 * w * w))
        ph = 2 * np.pi * (0.03 * np.cos(ang) * i / n1 + 0.03 * np.sin(ang) * j / n2)
        maps[c] = mag * np.exp(1j * ph)
    return CoilMaps(maps)


@dataclass(frozen=True)
class ShotPhaseModel:
    """Per-shot phase field: bounded polynomial plus smooth random part.

    The random part is a Gaussian-filtered white field scaled to unit
    standard deviation and clipped at three sigma, so the total field is
    hard-bounded by ``amplitude`` while its statistics stay seed-stable.
    """

    amplitude: float  # radians
    poly_order: int = 2  # 0, 1, or 2
    poly_weight: float = 0.5  # fraction of amplitude carried by the polynomial
    smooth_width: float = 8.0  # filter sigma in voxels

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")
        if self.poly_order not in (0, 1, 2):
            raise ValueError(f"poly_order must be 0, 1 or 2, got {self.poly_order}")
        if not 0.0 <= self.poly_weight <= 1.0:
            raise ValueError(f"poly_weight must be in [0, 1], got {self.poly_weight}")
        if self.smooth_width <= 0:
            raise ValueError(f"smooth_width must be > 0, got {self.smooth_width}")


STRUCTURAL_PHASES = ShotPhaseModel(amplitude=0.3)
DIFFUSION_PHASES = ShotPhaseModel(amplitude=np.pi)


def _poly_basis(order: int, n1: int, n2: int) -> list[np.ndarray]:
    y = np.broadcast_to(((np.arange(n1) - n1 / 2) / (n1 / 2))[:, None], (n1, n2))
    x = np.broadcast_to(((np.arange(n2) - n2 / 2) / (n2 / 2))[None, :], (n1, n2))
    terms = [np.ones((n1, n2))]
    if order >= 1:
        terms += [x, y]
    if order >= 2:
        terms += [x * x, x * y, y * y]
    return terms


def make_shot_phases(
    model: ShotPhaseModel, n_s: int, n1: int, n2: int, seed: int = 0
) -> np.ndarray:
    """Draw independent (n_s, n1, n2) phase fields, |phi| <= amplitude."""
    if n_s < 1:
        raise ValueError(f"need at least one shot, got {n_s}")
    out = np.zeros((n_s, n1, n2))
    if model.amplitude == 0.0:
        return out
    rng = np.random.default_rng(seed)
    basis = _poly_basis(model.poly_order, n1, n2)
    for t in range(n_s):
        poly = sum(c * b for c, b in zip(rng.uniform(-1, 1, len(basis)), basis))
        peak = np.max(np.abs(poly))
        if peak > 0:
            poly = poly / peak
        rough = rng.standard_normal((n1, n2))
        smooth = gaussian_filter(rough, sigma=model.smooth_width, mode="wrap")
        sd = np.std(smooth)
        if sd > 0:
            smooth = np.clip(smooth / (3.0 * sd), -1.0, 1.0)
        out[t] = model.amplitude * (
            model.poly_weight * poly + (1.0 - model.poly_weight) * smooth
        )
    return out


@dataclass(frozen=True)
class SageModelParams:
    """Voxelwise relaxation parameters; zero S0 marks background."""

    t2: np.ndarray  # ms
    t2_star: np.ndarray  # ms
    s0_pre: np.ndarray
    s0_post: np.ndarray
    te_list: tuple[float, ...] = SAGE_TE_LIST
    te_se: float = SAGE_TE_SE

    def __post_init__(self):
        shapes = {np.shape(a) for a in (self.t2, self.t2_star, self.s0_pre, self.s0_post)}
        if len(shapes) != 1:
            raise ValueError(f"parameter maps must share one shape, got {shapes}")
        if self.te_se <= 0 or any(te <= 0 for te in self.te_list):
            raise ValueError("echo times must be positive")
        if list(self.te_list) != sorted(self.te_list):
            raise ValueError("te_list must be ascending")
        support = self.support
        for name, arr in (("t2", self.t2), ("t2_star", self.t2_star)):
            if np.any(np.asarray(arr)[support] <= 0):
                raise ValueError(f"{name} must be positive on the support")
        if np.any(np.asarray(self.t2_star)[support] > np.asarray(self.t2)[support] + 1e-12):
            raise ValueError("t2_star must not exceed t2")

    @property
    def support(self) -> np.ndarray:
        return (np.asarray(self.s0_pre) > 0) | (np.asarray(self.s0_post) > 0)


def synthesize_sage(params: SageModelParams) -> np.ndarray:
    """Echo-train magnitudes, (n_echo, n1, n2); refocusing splits the train."""
    support = params.support
    r2 = np.where(support, 1.0 / np.where(support, params.t2, 1.0), 0.0)
    r2s = np.where(support, 1.0 / np.where(support, params.t2_star, 1.0), 0.0)
    echoes = np.zeros((len(params.te_list),) + support.shape)
    for k, te in enumerate(params.te_list):
        if te <= params.te_se / 2:
            echoes[k] = params.s0_pre * np.exp(-te * r2s)
        else:
            echoes[k] = (
                params.s0_post
                * np.exp(-params.te_se * (r2s - r2))
                * np.exp(-te * (2.0 * r2 - r2s))
            )
    return echoes


@dataclass(frozen=True)
class DiffusionModel:
    """Voxelwise symmetric diffusion tensors plus the gradient scheme."""

    tensors: np.ndarray  # (n1, n2, 3, 3), mm^2/s
    bvals: tuple[float, ...] = (DWI_BVALUE,) * 6
    bvecs: np.ndarray = field(default_factory=lambda: DWI_DIRECTIONS.copy())

    def __post_init__(self):
        t = np.asarray(self.tensors)
        if t.ndim != 4 or t.shape[-2:] != (3, 3):
            raise ValueError(f"tensors must be (n1, n2, 3, 3), got {t.shape}")
        if not np.allclose(t, np.swapaxes(t, -1, -2), atol=1e-12):
            raise ValueError("tensors must be symmetric")
        evals = np.linalg.eigvalsh(t)
        if np.min(evals) < -1e-12 * max(np.max(np.abs(evals)), 1e-30):
            raise ValueError("tensors must be positive semidefinite")
        vecs = np.asarray(self.bvecs, dtype=float)
        if vecs.shape != (len(self.bvals), 3):
            raise ValueError(
                f"bvecs shape {vecs.shape} does not match {len(self.bvals)} bvals"
            )
        if not np.allclose(np.linalg.norm(vecs, axis=1), 1.0, atol=1e-8):
            raise ValueError("bvecs must be unit norm")
        if any(b < 0 for b in self.bvals):
            raise ValueError("bvals must be nonnegative")


def synthesize_dwi(s0: np.ndarray, model: DiffusionModel) -> np.ndarray:
    """(1 + n_dir, n1, n2) stack: the b=0 image followed by weighted images."""
    s0 = np.asarray(s0, dtype=np.float64)
    out = np.empty((1 + len(model.bvals),) + s0.shape)
    out[0] = s0
    for k, (b, g) in enumerate(zip(model.bvals, model.bvecs)):
        adc = np.einsum("ijab,a,b->ij", model.tensors, g, g)
        out[1 + k] = s0 * np.exp(-b * adc)
    return out


def acquire(
    shot_images: np.ndarray,
    coils: CoilMaps,
    masks,
    noise_std: float = 0.0,
    seed: int = 0,
) -> KSpaceShotSet:
    """Sample phase-modulated shot images; optional k-space Gaussian noise.

    ``noise_std`` is the standard deviation per real and imaginary channel,
    applied to acquired samples only.
    """
    shot_images = np.asarray(shot_images, dtype=np.complex128)
    if shot_images.ndim != 3 or shot_images.shape[0] != len(masks):
        raise ValueError(
            f"shot_images must be (n_shots, n1, n2) matching {len(masks)} masks"
        )
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    data = np.stack(
        [sense_forward(shot_images[t], coils, masks[t]) for t in range(len(masks))]
    )
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        noise = noise_std * (
            rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape)
        )
        keep = np.stack([np.broadcast_to(m.keep, data.shape[1:]) for m in masks])
        data = data + noise * keep
    return KSpaceShotSet(data, tuple(masks))


def _sage_params_for(magnitude: np.ndarray) -> SageModelParams:
    """Plausible smooth relaxation maps derived from a phantom magnitude."""
    support = magnitude > 0
    peak = magnitude.max() if magnitude.max() > 0 else 1.0
    level = magnitude / peak
    t2_star = np.where(support, 30.0 + 50.0 * level, 0.0)
    t2 = np.where(support, t2_star + 15.0 + 25.0 * level, 0.0)
    return SageModelParams(
        t2=t2, t2_star=t2_star, s0_pre=magnitude, s0_post=0.9 * magnitude
    )


def _dwi_model_for(magnitude: np.ndarray) -> DiffusionModel:
    """Tensors whose principal direction rotates smoothly across the grid."""
    n1, n2 = magnitude.shape
    theta = np.pi * (np.arange(n1)[:, None] / n1 + np.arange(n2)[None, :] / n2)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    lam = np.array([1.7e-3, 0.3e-3, 0.3e-3])
    tensors = np.zeros((n1, n2, 3, 3))
    e1 = np.stack([cos_t, sin_t, np.zeros_like(cos_t)], axis=-1)
    e2 = np.stack([-sin_t, cos_t, np.zeros_like(cos_t)], axis=-1)
    e3 = np.broadcast_to(np.array([0.0, 0.0, 1.0]), (n1, n2, 3))
    for lam_k, ev in zip(lam, (e1, e2, e3)):
        tensors += lam_k * ev[..., :, None] * ev[..., None, :]
    return DiffusionModel(tensors=tensors)


@dataclass
class SimulatedDataset:
    root: Path
    manifest: dict
    kspace: np.ndarray  # (n_frames, n_shots, n_coils, n1_ext, n2) complex
    coils: CoilMaps
    masks: tuple
    truth_image: np.ndarray  # (n_frames, n1_ext, n2) real
    truth_phases: np.ndarray  # (n_frames, n_shots, n1_ext, n2) real

    @property
    def n_frames(self) -> int:
        return self.kspace.shape[0]

    def frame_shots(self, f: int) -> KSpaceShotSet:
        return KSpaceShotSet(self.kspace[f], self.masks)


def simulate_dataset(
    out_dir,
    kind: str = "sage",
    regime: str = "structural",
    n1: int = 96,
    n2: int = 96,
    n_coils: int = 8,
    n_shots: int = 2,
    r_inplane: int = 4,
    mb: int = 1,
    n_frames: int | None = None,
    noise_std: float = 0.0,
    seed: int = 0,
) -> Path:
    """Write a complete synthetic study to ``out_dir``; returns manifest path.

    Frames are SAGE echoes or the b0-plus-directions stack. Ground truth
    (image, phases, parameters) is written alongside the k-space container.
    """
    if kind not in ("sage", "dwi"):
        raise ValueError(f"kind must be 'sage' or 'dwi', got {kind!r}")
    if regime not in ("structural", "diffusion"):
        raise ValueError(f"regime must be 'structural' or 'diffusion', got {regime!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    phase_model = STRUCTURAL_PHASES if regime == "structural" else DIFFUSION_PHASES

    rng = np.random.default_rng(seed)
    slices = []
    for s in range(mb):
        img, _ = make_phantom(shepp_logan_like(n1, n2))
        mag = np.abs(img)
        if s > 0:  # make simultaneous slices distinguishable
            mag = np.roll(mag, shift=int(rng.integers(3, max(4, n1 // 6))), axis=0)
            mag = mag * rng.uniform(0.7, 1.0)
        slices.append(mag)
    magnitude = sms_extend(np.stack(slices)) if mb > 1 else slices[0]
    magnitude = np.real(magnitude)
    n1_ext = mb * n1

    if kind == "sage":
        params = _sage_params_for(magnitude)
        frames_all = synthesize_sage(params)
        param_stack = np.stack([params.t2, params.t2_star, params.s0_pre, params.s0_post])
        param_names = ["t2", "t2_star", "s0_pre", "s0_post"]
        model_info = {"te_list": list(params.te_list), "te_se": params.te_se}
    else:
        model = _dwi_model_for(magnitude)
        frames_all = synthesize_dwi(magnitude, model)
        iu = np.triu_indices(3)
        param_stack = np.stack([model.tensors[..., a, b] for a, b in zip(*iu)])
        param_names = ["dxx", "dxy", "dxz", "dyy", "dyz", "dzz"]
        model_info = {
            "bvals": list(model.bvals),
            "bvecs": np.asarray(model.bvecs).tolist(),
        }
    if n_frames is not None:
        if not 1 <= n_frames <= frames_all.shape[0]:
            raise ValueError(
                f"n_frames must be in [1, {frames_all.shape[0]}], got {n_frames}"
            )
        frames_all = frames_all[:n_frames]
    n_f = frames_all.shape[0]

    coils = make_coil_maps(n_coils, n1_ext, n2)
    delta_ky = [t * max(1, r_inplane // n_shots) % r_inplane for t in range(n_shots)]
    masks = tuple(
        make_mask(t, n1_ext, n2, r_inplane, mb, delta_ky=delta_ky[t])
        for t in range(n_shots)
    )

    kspace = np.empty((n_f, n_shots, n_coils, n1_ext, n2), dtype=np.complex128)
    phases = np.empty((n_f, n_shots, n1_ext, n2))
    for f in range(n_f):
        phases[f] = make_shot_phases(phase_model, n_shots, n1_ext, n2, seed=seed + 101 * f)
        shot_imgs = frames_all[f][None] * np.exp(1j * phases[f])
        kspace[f] = acquire(shot_imgs, coils, masks, noise_std, seed=seed + 7919 * (f + 1)).data

    geometry = {
        "mb": mb,
        "r_inplane": r_inplane,
        "delta_ky": delta_ky,
        "base_n1": n1,
    }
    provenance = {"seed": seed, "kind": kind, "regime": regime}
    write_container(
        out_dir / "kspace.bin", kspace, "complex-shots", geometry, provenance
    )
    write_container(
        out_dir / "coils.bin",
        coils.maps[None, None],
        "complex-shots",
        geometry,
        provenance,
    )
    write_container(
        out_dir / "truth_image.bin",
        frames_all[:, None, None],
        "magnitude",
        geometry,
        provenance,
    )
    write_container(
        out_dir / "truth_phase.bin", phases[:, :, None], "phase", geometry, provenance
    )
    write_container(
        out_dir / "truth_params.bin",
        param_stack[:, None, None],
        "magnitude",
        geometry,
        provenance,
    )

    manifest = {
        "kind": kind,
        "regime": regime,
        "seed": seed,
        "noise_std": noise_std,
        "grid": {
            "n1": n1,
            "n2": n2,
            "n1_ext": n1_ext,
            "n_coils": n_coils,
            "n_shots": n_shots,
            "n_frames": n_f,
        },
        "geometry": geometry,
        "model": model_info,
        "param_names": param_names,
        "files": {
            "kspace": "kspace.bin",
            "coils": "coils.bin",
            "truth_image": "truth_image.bin",
            "truth_phase": "truth_phase.bin",
            "truth_params": "truth_params.bin",
        },
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_dataset(path) -> SimulatedDataset:
    """Read a study written by :func:`simulate_dataset` (dir or manifest path)."""
    path = Path(path)
    root = path.parent if path.name == "manifest.json" else path
    manifest = json.loads((root / "manifest.json").read_text())
    files = manifest["files"]
    _, kspace = read_container(root / files["kspace"])
    _, coil_arr = read_container(root / files["coils"])
    _, truth_img = read_container(root / files["truth_image"])
    _, truth_phase = read_container(root / files["truth_phase"])
    geo = manifest["geometry"]
    grid = manifest["grid"]
    masks = tuple(
        make_mask(
            t,
            grid["n1_ext"],
            grid["n2"],
            geo["r_inplane"],
            geo["mb"],
            delta_ky=geo["delta_ky"][t],
        )
        for t in range(grid["n_shots"])
    )
    return SimulatedDataset(
        root=root,
        manifest=manifest,
        kspace=np.ascontiguousarray(kspace.astype(np.complex128)),
        coils=CoilMaps(coil_arr[0, 0].astype(np.complex128)),
        masks=masks,
        truth_image=truth_img[:, 0, 0].astype(np.float64),
        truth_phases=truth_phase[:, :, 0].astype(np.float64),
    )
