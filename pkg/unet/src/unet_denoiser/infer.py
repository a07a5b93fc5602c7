"""Sliding-window inference over container files.

Each frame's shot stack is normalized (x / max|x|), packed into channels,
and covered by patch-sized windows on a stride-10 grid with the last window
flush against each edge.  The network's residual prediction for every
window is accumulated and divided by the per-pixel window count, so the
effective window weights form a partition of unity and a network that
outputs zero leaves the input untouched.  The averaged residual is added to
the input and the result is rescaled and written with the input's layout,
geometry, and dims.

Inference is stateless: everything it needs rides in the checkpoint and the
input container.
"""

from pathlib import Path

import numpy as np
import torch

from .container import read_container, write_container
from .errors import DataError, NumericalError
from .model import NetSpec, ResidualUNet, build_net
from .patches import LAYOUT_MODES, from_channels, normalize_scale, patch_grid, to_channels

__all__ = ["WINDOW_STRIDE", "load_model", "slide_residual", "denoise_frames", "denoise_container"]

WINDOW_STRIDE = 10


def load_model(path: str | Path) -> tuple[ResidualUNet, dict]:
    """Rebuild the network from a checkpoint; returns (net in eval mode, meta)."""
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, ValueError) as e:
        raise DataError(f"cannot load model {path}: {e}") from e
    for key in ("state_dict", "net", "patch", "layout"):
        if key not in ckpt:
            raise DataError(f"model {path} is missing checkpoint key {key!r}")
    net = build_net(NetSpec(**ckpt["net"]))
    try:
        net.load_state_dict(ckpt["state_dict"])
    except RuntimeError as e:
        raise DataError(f"model {path} weights do not fit its own spec: {e}") from e
    net.eval()
    return net, ckpt


def _window_starts(n: int, patch: int, stride: int) -> list[int]:
    """Stride grid plus a final window flush with the edge."""
    starts = patch_grid(n, patch, stride)
    if not starts:
        return []
    if starts[-1] != n - patch:
        starts.append(n - patch)
    return starts


def slide_residual(
    apply_fn,
    channels: np.ndarray,
    patch: int,
    stride: int = WINDOW_STRIDE,
    batch: int = 64,
) -> np.ndarray:
    """Overlap-averaged residual field for one (C, N1, N2) channel stack.

    ``apply_fn`` maps a (b, C, patch, patch) float32 tensor to the predicted
    residual of the same shape.  Every pixel is covered by at least one
    window; dividing the accumulated predictions by the per-pixel window
    count makes the effective weights sum to one everywhere.
    """
    c, n1, n2 = channels.shape
    rows = _window_starts(n1, patch, stride)
    cols = _window_starts(n2, patch, stride)
    if not rows or not cols:
        raise DataError(f"image {n1}x{n2} is smaller than the model patch {patch}")
    acc = np.zeros((c, n1, n2), dtype=np.float64)
    hits = np.zeros((n1, n2), dtype=np.float64)
    offsets = [(i, j) for i in rows for j in cols]
    x = torch.from_numpy(np.ascontiguousarray(channels.astype(np.float32)))
    with torch.no_grad():
        for lo in range(0, len(offsets), batch):
            group = offsets[lo : lo + batch]
            windows = torch.stack([x[:, i : i + patch, j : j + patch] for i, j in group])
            pred = apply_fn(windows).numpy()
            for k, (i, j) in enumerate(group):
                acc[:, i : i + patch, j : j + patch] += pred[k]
                hits[i : i + patch, j : j + patch] += 1.0
    return (acc / hits).astype(np.float32)


def denoise_frames(
    net: ResidualUNet,
    frames: np.ndarray,
    patch: int,
    stride: int = WINDOW_STRIDE,
    batch: int = 64,
) -> np.ndarray:
    """Apply the network to (n_frames, N_s, N1, N2) shot stacks."""
    mode = net.spec.mode
    out = np.empty_like(frames)
    for f in range(frames.shape[0]):
        xn, scale = normalize_scale(frames[f])
        c = to_channels(xn, mode)
        residual = slide_residual(net, c, patch, stride=stride, batch=batch)
        if not np.all(np.isfinite(residual)):
            raise NumericalError("network produced non-finite residuals")
        out[f] = from_channels(c + residual, mode) * scale
    return out


def denoise_container(
    in_path: str | Path,
    out_path: str | Path,
    model_path: str | Path,
    stride: int = WINDOW_STRIDE,
    batch: int = 64,
) -> None:
    """Read a shot container, denoise every frame, write the result.

    The container's channel-layout tag must match the layout the model was
    trained on, the shot count must match, and the coil axis must already be
    combined away (size 1).
    """
    net, ckpt = load_model(model_path)
    header, arr = read_container(in_path)
    if header.layout != ckpt["layout"]:
        raise DataError(
            f"{in_path}: layout {header.layout!r} does not match the model's "
            f"{ckpt['layout']!r}"
        )
    if header.layout not in LAYOUT_MODES:
        raise DataError(f"{in_path}: layout {header.layout!r} is not a shot-stack layout")
    n_f, n_s, n_c, _, _ = header.dims
    if n_s != net.spec.shots:
        raise DataError(f"{in_path}: {n_s} shot(s) but the model expects {net.spec.shots}")
    if n_c != 1:
        raise DataError(f"{in_path}: coil axis must be combined (size 1), got {n_c}")
    frames = arr[:, :, 0]
    out = denoise_frames(net, frames, int(ckpt["patch"]), stride=stride, batch=batch)
    provenance = dict(header.provenance)
    provenance["denoiser"] = {"kind": "residual-unet", "model": Path(model_path).name}
    write_container(
        out_path,
        out[:, :, None].astype(header.numpy_dtype),
        header.layout,
        geometry=header.geometry,
        provenance=provenance,
    )
