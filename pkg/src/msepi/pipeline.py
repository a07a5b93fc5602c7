"""Stage orchestration: MUSSELS -> denoise -> phase cycling -> joint recon.

Stages run stage-major: each stage processes every frame (optionally on a
thread pool), persists its output container, then hands to the next stage.
A failing stage therefore leaves the last completed stage on disk, and
``resume`` picks up from whatever containers already exist.

Error taxonomy (mapped to CLI exit codes): ConfigError for bad or
inconsistent configuration, DataError for unreadable or malformed inputs,
NumericalError for solver divergence or a failing denoiser process.
"""

import dataclasses
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import ContainerError, read_container, write_container
from .denoise import (
    DenoiserSpec,
    ExternalDenoiserError,
    combine_magnitude,
    denoise_shots,
)
from .hankel import RankBudget
from .jvc import JvcConfig, solve_jvc
from .mussels import DivergenceError, MusselsConfig, solve_mussels
from .phase_cycle import PhaseCycleConfig, estimate_shot_phase, wrap_phase
from .quantify import rmse_percent
from .simulate import SimulatedDataset, load_dataset

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "PipelineConfig",
    "PipelineResult",
    "run_pipeline",
    "config_from_dict",
    "config_hash",
]


class ConfigError(ValueError):
    """Configuration is malformed or internally inconsistent."""


class DataError(ValueError):
    """Input files are missing, unreadable, or structurally wrong."""


class NumericalError(RuntimeError):
    """A solver diverged or a denoiser process failed."""


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str
    out_dir: str
    mussels: MusselsConfig = field(
        default_factory=lambda: MusselsConfig(budget=RankBudget(r=3, n_eff=1.2), n_iter=60)
    )
    denoiser: DenoiserSpec = field(default_factory=DenoiserSpec.reference)
    phase: PhaseCycleConfig = field(default_factory=lambda: PhaseCycleConfig(iters=60))
    jvc: JvcConfig = field(default_factory=lambda: JvcConfig(beta=1e-4))
    skip_denoise: bool = False
    stop_after_mussels: bool = False
    resume: bool = False
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def validate_paths(self):
        root = Path(self.dataset)
        manifest = root if root.name == "manifest.json" else root / "manifest.json"
        if not manifest.exists():
            raise ConfigError(f"dataset manifest not found: {manifest}")


_CONFIG_SECTIONS = ("mussels", "denoiser", "phase", "jvc")
_TOP_LEVEL_KEYS = {
    "dataset",
    "out_dir",
    "skip_denoise",
    "stop_after_mussels",
    "resume",
    "workers",
    "seed",
} | set(_CONFIG_SECTIONS)


def config_from_dict(raw: dict) -> PipelineConfig:
    """Build a config from parsed JSON; unknown keys are hard errors."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("dataset", "out_dir"):
        if key not in raw:
            raise ConfigError(f"config is missing required key {key!r}")
    kwargs = {k: raw[k] for k in _TOP_LEVEL_KEYS - set(_CONFIG_SECTIONS) if k in raw}
    try:
        if "mussels" in raw:
            sect = dict(raw["mussels"])
            budget = RankBudget(
                r=sect.pop("r", 3),
                n_eff=sect.pop("n_eff", 1.2),
                k=sect.pop("k", None),
            )
            kwargs["mussels"] = MusselsConfig(budget=budget, **sect)
        if "denoiser" in raw:
            sect = dict(raw["denoiser"])
            if "command" in sect:
                sect["command"] = tuple(sect["command"])
            kwargs["denoiser"] = DenoiserSpec(**sect)
        if "phase" in raw:
            kwargs["phase"] = PhaseCycleConfig(**raw["phase"])
        if "jvc" in raw:
            kwargs["jvc"] = JvcConfig(**raw["jvc"])
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from e


def _config_canonical(cfg: PipelineConfig) -> str:
    def unwrap(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: unwrap(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, (tuple, list)):
            return [unwrap(v) for v in obj]
        if isinstance(obj, Path):
            return str(obj)
        return obj

    doc = unwrap(cfg)
    # execution details do not change what gets computed
    for key in ("dataset", "out_dir", "workers", "resume"):
        doc.pop(key, None)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: PipelineConfig) -> str:
    """Digest of the algorithmic parameters (paths and worker count excluded)."""
    return hashlib.sha256(_config_canonical(cfg).encode()).hexdigest()[:12]


@dataclass
class PipelineResult:
    out_dir: Path
    metrics: dict
    files: dict


def _frame_pool(workers: int, fn, n_frames: int, verbose: bool, label: str):
    if verbose:
        print(f"stage {label}: {n_frames} frame(s)", file=sys.stderr)
    if workers == 1:
        return [fn(f) for f in range(n_frames)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_frames)))


def _support_mask(truth_frame: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(truth_frame)))
    if peak == 0.0:
        raise DataError("ground-truth frame is identically zero")
    return np.abs(truth_frame) > 1e-6 * peak


def _aligned_phase_error(phi_est, phi_true, support) -> float:
    """Median wrapped error after removing the per-shot global constant."""
    errors = []
    for t in range(phi_est.shape[0]):
        delta = phi_est[t] - phi_true[t]
        offset = np.angle(np.sum(np.exp(1j * delta)[support]))
        err = wrap_phase(delta - offset)
        errors.append(np.median(np.abs(err[support])))
    return float(np.mean(errors))


def _load_stage(path: Path, expected_shape) -> np.ndarray | None:
    if not path.exists():
        return None
    try:
        _, arr = read_container(path)
    except ContainerError as e:
        raise DataError(f"cannot resume from {path}: {e}") from e
    if arr.shape != expected_shape:
        raise DataError(
            f"cannot resume from {path}: shape {arr.shape} != expected {expected_shape}"
        )
    return arr


def run_pipeline(cfg: PipelineConfig, verbose: bool = False) -> PipelineResult:
    """Execute the configured stages over all frames; returns metrics bundle."""
    cfg.validate_paths()
    try:
        ds = load_dataset(cfg.dataset)
    except (OSError, KeyError, ValueError) as e:
        raise DataError(f"cannot load dataset {cfg.dataset}: {e}") from e

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_f = ds.n_frames
    n_s = ds.kspace.shape[1]
    n1, n2 = ds.truth_image.shape[1:]
    geometry = dict(ds.manifest["geometry"])
    provenance = {"seed": cfg.seed, "config": config_hash(cfg)}
    files: dict[str, str] = {}

    def persist(name: str, arr: np.ndarray, layout: str) -> None:
        write_container(out_dir / name, arr, layout, geometry, provenance)
        files[name.split(".")[0]] = name

    # ---- stage 1: structured low-rank shot reconstruction -----------------
    shots_shape = (n_f, n_s, 1, n1, n2)
    mussels_out = _load_stage(out_dir / "mussels.bin", shots_shape) if cfg.resume else None
    if mussels_out is None:
        def run_mussels(f: int) -> np.ndarray:
            try:
                res = solve_mussels(ds.frame_shots(f), ds.coils, cfg.mussels, verbose=verbose)
            except DivergenceError as e:
                raise NumericalError(f"frame {f}: {e}") from e
            return res.images
        # storage-dtype round trip keeps a resumed run bit-identical to a fresh one
        stacked = np.stack(_frame_pool(cfg.workers, run_mussels, n_f, verbose, "mussels"))
        mussels_out = stacked[:, :, None].astype(np.complex64)
        persist("mussels.bin", mussels_out, "complex-shots")
    else:
        files["mussels"] = "mussels.bin"
    mussels_imgs = mussels_out[:, :, 0].astype(np.complex128)

    supports = [_support_mask(ds.truth_image[f]) for f in range(n_f)]
    metrics_frames = [
        {
            "frame": f,
            "rmse_mussels": rmse_percent(
                combine_magnitude(mussels_imgs[f]), ds.truth_image[f], supports[f]
            ),
        }
        for f in range(n_f)
    ]

    if cfg.stop_after_mussels:
        return _finish(cfg, out_dir, files, metrics_frames, ds)

    # ---- stage 2: shot-image denoising ------------------------------------
    if cfg.skip_denoise:
        denoised_imgs = mussels_imgs
    else:
        denoised_out = (
            _load_stage(out_dir / "denoised.bin", shots_shape) if cfg.resume else None
        )
        if denoised_out is None:
            def run_denoise(f: int) -> np.ndarray:
                try:
                    return denoise_shots(mussels_imgs[f], cfg.denoiser)
                except ExternalDenoiserError as e:
                    raise NumericalError(f"frame {f}: denoiser failed: {e}") from e
            stacked = np.stack(_frame_pool(cfg.workers, run_denoise, n_f, verbose, "denoise"))
            denoised_out = stacked[:, :, None].astype(np.complex64)
            persist("denoised.bin", denoised_out, "complex-shots")
        else:
            files["denoised"] = "denoised.bin"
        denoised_imgs = denoised_out[:, :, 0].astype(np.complex128)
        for f in range(n_f):
            metrics_frames[f]["rmse_denoised"] = rmse_percent(
                combine_magnitude(denoised_imgs[f]), ds.truth_image[f], supports[f]
            )

    # ---- stage 3: per-shot phase estimation --------------------------------
    phases_shape = (n_f, n_s, 1, n1, n2)
    phases_out = _load_stage(out_dir / "phases.bin", phases_shape) if cfg.resume else None
    if phases_out is None:
        def run_phases(f: int) -> np.ndarray:
            m = combine_magnitude(denoised_imgs[f])
            shots = ds.frame_shots(f)
            phi = np.empty((n_s, n1, n2))
            for t in range(n_s):
                res = estimate_shot_phase(
                    m,
                    shots.data[t],
                    ds.coils,
                    shots.masks[t],
                    cfg.phase,
                    phi0=np.angle(denoised_imgs[f, t]),
                )
                if res.aborted:
                    raise NumericalError(f"frame {f} shot {t}: phase estimation aborted")
                phi[t] = res.phi
            return phi
        stacked = np.stack(_frame_pool(cfg.workers, run_phases, n_f, verbose, "phases"))
        phases_out = stacked[:, :, None].astype(np.float32)
        persist("phases.bin", phases_out, "phase")
    else:
        files["phases"] = "phases.bin"
    phases = phases_out[:, :, 0].astype(np.float64)
    for f in range(n_f):
        metrics_frames[f]["phase_median_rad"] = _aligned_phase_error(
            phases[f], ds.truth_phases[f], supports[f]
        )

    # ---- stage 4: joint virtual-coil reconstruction ------------------------
    final_shape = (n_f, 1, 1, n1, n2)
    final_out = _load_stage(out_dir / "final.bin", final_shape) if cfg.resume else None
    if final_out is None:
        def run_jvc(f: int) -> np.ndarray:
            m0 = combine_magnitude(denoised_imgs[f])
            res = solve_jvc(m0, phases[f], ds.frame_shots(f), ds.coils, cfg.jvc)
            if not np.all(np.isfinite(res.image)):
                raise NumericalError(f"frame {f}: joint solve produced non-finite values")
            if verbose and res.warning:
                print(f"frame {f}: {res.warning}", file=sys.stderr)
            return res.image
        stacked = np.stack(_frame_pool(cfg.workers, run_jvc, n_f, verbose, "jvc"))
        final_out = stacked[:, None, None].astype(np.float32)
        persist("final.bin", final_out, "magnitude")
    else:
        files["final"] = "final.bin"
    final_imgs = final_out[:, 0, 0].astype(np.float64)
    for f in range(n_f):
        metrics_frames[f]["rmse_final"] = rmse_percent(
            np.abs(final_imgs[f]), ds.truth_image[f], supports[f]
        )

    return _finish(cfg, out_dir, files, metrics_frames, ds)


def _finish(cfg, out_dir: Path, files: dict, metrics_frames: list, ds: SimulatedDataset):
    stage_keys = sorted(
        {k for fm in metrics_frames for k in fm if k.startswith(("rmse_", "phase_"))}
    )
    means = {
        key: float(np.mean([fm[key] for fm in metrics_frames if key in fm]))
        for key in stage_keys
    }
    metrics = {
        "config": config_hash(cfg),
        "dataset": ds.manifest.get("kind", "unknown"),
        "regime": ds.manifest.get("regime", "unknown"),
        "seed": cfg.seed,
        "skip_denoise": cfg.skip_denoise,
        "stop_after_mussels": cfg.stop_after_mussels,
        "frames": metrics_frames,
        "mean": means,
    }
    text = json.dumps(metrics, sort_keys=True, indent=2) + "\n"
    (out_dir / "metrics.json").write_text(text)
    files["metrics"] = "metrics.json"
    return PipelineResult(out_dir=out_dir, metrics=metrics, files=files)
