"""Command-line front end: simulate, recon, fit, metrics, export-png.

Exit codes:
    0  success
    2  usage error (unknown flag or subcommand, malformed argument)
    3  configuration error (bad config file, inconsistent parameters)
    4  data error (missing or malformed input files)
    5  numerical failure (solver divergence, denoiser crash)

Global flags may appear before or after the subcommand.  Environment
variables override flag defaults: MSEPI_SEED, MSEPI_THREADS, MSEPI_VERBOSE.
"""

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .container import ContainerError, read_container, write_container
from .pipeline import (
    ConfigError,
    DataError,
    NumericalError,
    config_from_dict,
    run_pipeline,
)
from .quantify import fit_dti, fit_sage, rmse_percent
from .simulate import simulate_dataset

__all__ = ["main", "build_parser"]

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERICAL = 5

_ENV_PREFIX = "MSEPI_"


def _env_int(name: str):
    raw = os.environ.get(_ENV_PREFIX + name)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{_ENV_PREFIX}{name} must be an integer, got {raw!r}") from None


def _env_flag(name: str):
    raw = os.environ.get(_ENV_PREFIX + name)
    if raw is None:
        return None
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"{_ENV_PREFIX}{name} must be a boolean flag, got {raw!r}")


@contextlib.contextmanager
def _thread_cap(threads):
    if threads is None:
        yield
        return
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        yield


def _common_parser(for_subcommand: bool) -> argparse.ArgumentParser:
    # Subcommand copies default to SUPPRESS so an absent flag does not
    # clobber a value already parsed at the top level.
    default = argparse.SUPPRESS if for_subcommand else None
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default, help="master RNG seed")
    common.add_argument("--threads", type=int, default=default, help="cap BLAS thread pools")
    common.add_argument(
        "--verbose", action="store_true", default=default, help="progress on stderr"
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser(for_subcommand=True)
    parser = argparse.ArgumentParser(
        prog="msepi",
        description="Multishot EPI reconstruction toolkit.",
        epilog=(
            "Environment overrides: MSEPI_SEED, MSEPI_THREADS, MSEPI_VERBOSE "
            "set the defaults for --seed, --threads, --verbose."
        ),
        parents=[_common_parser(for_subcommand=False)],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic study")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--kind", choices=("sage", "dwi"), default="sage")
    p.add_argument("--regime", choices=("structural", "diffusion"), default="structural")
    p.add_argument("--n1", type=int, default=96)
    p.add_argument("--n2", type=int, default=96)
    p.add_argument("--coils", type=int, default=8)
    p.add_argument("--shots", type=int, default=2)
    p.add_argument("--r", type=int, default=4, help="in-plane acceleration")
    p.add_argument("--mb", type=int, default=1, help="multiband factor")
    p.add_argument("--frames", type=int, default=None, help="limit echo/direction count")
    p.add_argument("--noise-std", type=float, default=0.0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("recon", parents=[common], help="run the reconstruction stages")
    p.add_argument("--config", default=None, help="JSON pipeline config")
    p.add_argument("--dataset", default=None, help="dataset directory or manifest")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--skip-denoise", action="store_true", default=None)
    p.add_argument("--stop-after-mussels", action="store_true", default=None)
    p.add_argument("--resume", action="store_true", default=None)
    p.add_argument("--workers", type=int, default=None, help="frame worker pool size")
    p.set_defaults(func=_cmd_recon)

    p = sub.add_parser("fit", parents=[common], help="fit a signal model to frames")
    p.add_argument("model", choices=("sage", "dti"))
    p.add_argument("--input", required=True, help="reconstructed frame container")
    p.add_argument("--dataset", required=True, help="dataset with model constants")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("metrics", parents=[common], help="compare two containers")
    p.add_argument("--recon", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", default=None, help="also write the JSON here")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("export-png", parents=[common], help="render a container frame")
    p.add_argument("input", help="container file")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--shot", type=int, default=0)
    p.add_argument("--coil", type=int, default=0)
    p.add_argument("--mode", choices=("auto", "magnitude", "phase"), default="auto")
    p.add_argument(
        "--color-fa",
        default=None,
        metavar="PRINCIPAL",
        help="render input as an FA map colored by this principal-direction container",
    )
    p.set_defaults(func=_cmd_export_png)

    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_simulate(args, seed: int, verbose: bool) -> int:
    try:
        manifest = simulate_dataset(
            args.out,
            kind=args.kind,
            regime=args.regime,
            n1=args.n1,
            n2=args.n2,
            n_coils=args.coils,
            n_shots=args.shots,
            r_inplane=args.r,
            mb=args.mb,
            n_frames=args.frames,
            noise_std=args.noise_std,
            seed=seed,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    except OSError as e:
        raise DataError(str(e)) from e
    print(manifest)
    return 0


def _cmd_recon(args, seed: int, verbose: bool) -> int:
    raw = {}
    if args.config is not None:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise ConfigError(f"config file not found: {cfg_path}")
        try:
            raw = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
    for key, value in (
        ("dataset", args.dataset),
        ("out_dir", args.out),
        ("skip_denoise", args.skip_denoise),
        ("stop_after_mussels", args.stop_after_mussels),
        ("resume", args.resume),
        ("workers", args.workers),
    ):
        if value is not None:
            raw[key] = value
    if args.seed is not None or _ENV_PREFIX + "SEED" in os.environ:
        raw["seed"] = seed
    result = run_pipeline(config_from_dict(raw), verbose=verbose)
    print(json.dumps({"out_dir": str(result.out_dir), "mean": result.metrics["mean"]}, sort_keys=True))
    return 0


def _load_frames(path) -> np.ndarray:
    try:
        _, arr = read_container(path)
    except (OSError, ContainerError) as e:
        raise DataError(f"cannot read container {path}: {e}") from e
    if arr.shape[1] != 1 or arr.shape[2] != 1:
        raise DataError(
            f"expected a combined container (shots=coils=1), got dims {arr.shape}"
        )
    return np.abs(arr[:, 0, 0]).astype(np.float64)


def _cmd_fit(args, seed: int, verbose: bool) -> int:
    frames = _load_frames(args.input)
    ds_root = Path(args.dataset)
    manifest_path = ds_root if ds_root.name == "manifest.json" else ds_root / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as e:
        raise DataError(f"cannot read dataset manifest: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"dataset manifest is not valid JSON: {e}") from e
    kind = manifest.get("kind")
    want = "sage" if args.model == "sage" else "dwi"
    if kind != want:
        raise DataError(f"fit model {args.model!r} needs a {want!r} dataset, got {kind!r}")
    model = manifest.get("model", {})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    geometry = dict(manifest.get("geometry", {}))

    support = np.mean(frames, axis=0) > 0.05 * np.max(np.mean(frames, axis=0))
    try:
        if args.model == "sage":
            fit = fit_sage(frames, te_list=tuple(model["te_list"]), te_se=model["te_se"], mask=support)
            maps = np.stack([fit.t2, fit.t2_star, fit.s0_pre, fit.s0_post])
            names = ["t2", "t2_star", "s0_pre", "s0_post"]
            valid = fit.valid
        else:
            bvals = np.asarray(model["bvals"], dtype=float)
            bvecs = np.asarray(model["bvecs"], dtype=float)
            fit = fit_dti(frames, bvals, bvecs, mask=support)
            maps = np.stack([fit.md, fit.fa])
            names = ["md", "fa"]
            valid = fit.valid
            principal = np.transpose(fit.principal, (2, 0, 1))[:, None, None]
            write_container(
                out_dir / "principal.bin",
                principal.astype(np.float32),
                "magnitude",
                geometry,
                {"frames": ["v1_x", "v1_y", "v1_z"]},
            )
    except (KeyError, ValueError) as e:
        raise DataError(f"fit failed: {e}") from e

    write_container(
        out_dir / f"{args.model}_maps.bin",
        maps[:, None, None].astype(np.float32),
        "magnitude",
        geometry,
        {"frames": names},
    )
    write_container(
        out_dir / "valid.bin",
        valid[None, None, None].astype(np.float32),
        "magnitude",
        geometry,
        {"frames": ["valid"]},
    )
    summary = {
        "model": args.model,
        "maps": names,
        "valid_fraction": float(np.mean(valid[support])),
    }
    (out_dir / "fit.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_metrics(args, seed: int, verbose: bool) -> int:
    recon = _load_frames(args.recon)
    reference = _load_frames(args.reference)
    if recon.shape != reference.shape:
        raise DataError(f"shape mismatch: {recon.shape} vs {reference.shape}")
    per_frame = []
    for f in range(recon.shape[0]):
        peak = float(np.max(reference[f]))
        if peak == 0.0:
            raise DataError(f"reference frame {f} is identically zero")
        mask = reference[f] > 1e-6 * peak
        per_frame.append(rmse_percent(recon[f], reference[f], mask))
    doc = {"rmse_percent": per_frame, "mean": float(np.mean(per_frame))}
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out is not None:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def _to_u8(plane: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.zeros(plane.shape, dtype=np.uint8)
    scaled = np.clip((plane - lo) / span, 0.0, 1.0)
    return np.round(255.0 * scaled).astype(np.uint8)


def _cmd_export_png(args, seed: int, verbose: bool) -> int:
    from PIL import Image

    try:
        header, arr = read_container(args.input)
    except (OSError, ContainerError) as e:
        raise DataError(f"cannot read container {args.input}: {e}") from e
    nf, ns, nc = arr.shape[:3]
    if not (0 <= args.frame < nf and 0 <= args.shot < ns and 0 <= args.coil < nc):
        raise DataError(
            f"index (frame={args.frame}, shot={args.shot}, coil={args.coil}) "
            f"out of range for dims {arr.shape}"
        )
    plane = arr[args.frame, args.shot, args.coil]

    if args.color_fa is not None:
        try:
            _, principal = read_container(args.color_fa)
        except (OSError, ContainerError) as e:
            raise DataError(f"cannot read principal-direction container: {e}") from e
        if principal.shape[0] != 3 or principal.shape[3:] != arr.shape[3:]:
            raise DataError(
                "principal-direction container must hold 3 component frames "
                "on the same grid as the FA map"
            )
        fa = np.clip(np.abs(plane), 0.0, 1.0)
        rgb = np.abs(principal[:, 0, 0]) * fa[None]
        img = np.transpose(_to_u8(rgb, 0.0, 1.0), (1, 2, 0))
        Image.fromarray(img, mode="RGB").save(args.out)
        print(args.out)
        return 0

    mode = args.mode
    if mode == "auto":
        mode = "phase" if header.layout == "phase" else "magnitude"
    if mode == "phase":
        img = _to_u8(np.angle(plane) if np.iscomplexobj(plane) else plane, -np.pi, np.pi)
    else:
        mag = np.abs(plane)
        img = _to_u8(mag, 0.0, float(np.percentile(mag, 99.5)))
    Image.fromarray(img, mode="L").save(args.out)
    print(args.out)
    return 0


# ---------------------------------------------------------------------------
# dispatch


def _pick(flag_value, env_value, default):
    if flag_value is not None:
        return flag_value
    if env_value is not None:
        return env_value
    return default


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    if extras:
        parser.print_usage(sys.stderr)
        print(f"error: unrecognized arguments: {' '.join(extras)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        seed = _pick(args.seed, _env_int("SEED"), 0)
        threads = _pick(args.threads, _env_int("THREADS"), None)
        verbose = _pick(args.verbose, _env_flag("VERBOSE"), False)
        with _thread_cap(threads):
            return args.func(args, seed=seed, verbose=verbose)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
