"""Command-line front end.

Two subcommands:

    unet-denoiser train --data DIR --out DIR [tuning flags]
    unet-denoiser infer --in FILE --out FILE --model FILE

``train`` expects DIR to hold ``input.bin`` and ``reference.bin``, two
containers with identical dims and layout ("complex-shots" or
"magnitude-shots", coil axis combined to size 1).  The channel mode is
taken from the layout tag.  ``infer`` denoises a container in place of the
reconstruction pipeline's external-denoiser hook, which substitutes the
input path for ``{in}`` and the output path for ``{out}``.

Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 bad or
mismatched data, 5 numerical failure.
"""

import argparse
import json
import sys

from .container import read_container
from .errors import ConfigError, DataError, NumericalError
from .infer import WINDOW_STRIDE, denoise_container
from .model import NetSpec
from .patches import LAYOUT_MODES
from .train import TrainSpec, train

__all__ = ["main", "build_parser"]

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERICAL = 5


def _parse_scales(text: str) -> tuple[float, ...]:
    try:
        scales = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as e:
        raise ConfigError(f"invalid --scales {text!r}: {e}") from e
    if not scales:
        raise ConfigError(f"invalid --scales {text!r}: empty list")
    return scales


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unet-denoiser",
        description="Residual U-Net denoiser for shot-stack containers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model on an input/reference container pair")
    p_train.add_argument("--data", required=True, help="directory with input.bin and reference.bin")
    p_train.add_argument("--out", required=True, help="output directory for model.pt and training_curve.json")
    p_train.add_argument("--levels", type=int, default=5)
    p_train.add_argument("--base-filters", type=int, default=64)
    p_train.add_argument("--kernel-size", type=int, default=3)
    p_train.add_argument("--dropout", type=float, default=0.05)
    p_train.add_argument("--epochs", type=int, default=200)
    p_train.add_argument("--batch", type=int, default=128)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--decay", type=float, default=1e-3)
    p_train.add_argument("--patch", type=int, default=64)
    p_train.add_argument("--stride", type=int, default=16)
    p_train.add_argument("--scales", default="0.5,1,2", help="comma-separated pyramid scales")
    p_train.add_argument("--no-augment", action="store_true", help="skip 16-fold augmentation")
    p_train.add_argument("--val-fraction", type=float, default=0.1)
    p_train.add_argument("--seed", type=int, default=0)

    p_infer = sub.add_parser("infer", help="denoise a container with a trained model")
    p_infer.add_argument("--in", dest="infile", required=True, help="input container")
    p_infer.add_argument("--out", required=True, help="output container")
    p_infer.add_argument("--model", required=True, help="model checkpoint from train")
    p_infer.add_argument("--window-stride", type=int, default=WINDOW_STRIDE)
    p_infer.add_argument("--batch-windows", type=int, default=64)
    return parser


def _load_pair(data_dir: str):
    from pathlib import Path

    d = Path(data_dir)
    if not d.is_dir():
        raise DataError(f"--data directory {d} does not exist")
    h_in, a_in = read_container(d / "input.bin")
    h_ref, a_ref = read_container(d / "reference.bin")
    if h_in.layout not in LAYOUT_MODES:
        raise DataError(f"input layout {h_in.layout!r} is not a shot-stack layout")
    if h_ref.layout != h_in.layout or h_ref.dims != h_in.dims:
        raise DataError(
            f"input and reference disagree: {h_in.layout!r} {h_in.dims} "
            f"vs {h_ref.layout!r} {h_ref.dims}"
        )
    if h_in.dims[2] != 1:
        raise DataError(f"coil axis must be combined (size 1), got {h_in.dims[2]}")
    return LAYOUT_MODES[h_in.layout], h_in.dims[1], a_in[:, :, 0], a_ref[:, :, 0]


def _run_train(args: argparse.Namespace) -> int:
    mode, n_shots, x, ref = _load_pair(args.data)
    net_spec = NetSpec(
        levels=args.levels,
        base_filters=args.base_filters,
        kernel_size=args.kernel_size,
        dropout=args.dropout,
        mode=mode,
        shots=n_shots,
    )
    spec = TrainSpec(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        decay=args.decay,
        patch=args.patch,
        stride=args.stride,
        scales=_parse_scales(args.scales),
        augment=not args.no_augment,
        val_fraction=args.val_fraction,
        seed=args.seed,
    )
    result = train(x, ref, net_spec, spec, args.out)
    print(
        json.dumps(
            {
                "model": result.model_path,
                "curve": result.curve_path,
                "best_epoch": result.best_epoch,
                "best_val_loss": result.best_val_loss,
                "n_train": result.n_train,
                "n_val": result.n_val,
            },
            sort_keys=True,
        )
    )
    return 0


def _run_infer(args: argparse.Namespace) -> int:
    if args.window_stride < 1:
        raise ConfigError(f"--window-stride must be positive, got {args.window_stride}")
    if args.batch_windows < 1:
        raise ConfigError(f"--batch-windows must be positive, got {args.batch_windows}")
    denoise_container(
        args.infile, args.out, args.model, stride=args.window_stride, batch=args.batch_windows
    )
    print(json.dumps({"out": args.out}, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        if args.command == "train":
            return _run_train(args)
        return _run_infer(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
