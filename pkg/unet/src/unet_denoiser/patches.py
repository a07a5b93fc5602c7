"""Patch extraction, normalization, and geometric augmentation.

Training operates on pairs of channel stacks: the network input and a
residual target (reference minus input).  Complex shot stacks are packed
into real channels as interleaved real/imaginary planes, so a stack of N_s
shots becomes 2*N_s channels; magnitude stacks map one shot to one channel.

Normalization is scale-only, x / max|x|, computed from the input stack and
applied to both sides of a pair.  This is the same convention the
reconstruction pipeline uses when it hands a shot stack to an external
denoiser, so a model trained here sees inference inputs on the scale it was
trained on.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError

__all__ = [
    "PatchSpec",
    "MODE_LAYOUTS",
    "LAYOUT_MODES",
    "normalize_scale",
    "to_channels",
    "from_channels",
    "patch_grid",
    "extract_patches",
    "augment_pair",
    "AUGMENT_FOLD",
    "build_training_pairs",
]

# size of the orbit generated by quarter/eighth-turn rotations and mirroring
AUGMENT_FOLD = 16

# channel packing mode <-> container channel-layout tag
MODE_LAYOUTS = {"complex": "complex-shots", "magnitude": "magnitude-shots"}
LAYOUT_MODES = {v: k for k, v in MODE_LAYOUTS.items()}


@dataclass(frozen=True)
class PatchSpec:
    patch: int = 64
    stride: int = 16
    scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    augment: bool = True

    def __post_init__(self):
        if self.patch < 4:
            raise ConfigError(f"patch must be at least 4, got {self.patch}")
        if self.stride < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigError(f"scales must be positive, got {self.scales}")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))


def normalize_scale(x: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale-only normalization x / max|x|; returns (normalized, scale)."""
    scale = float(np.max(np.abs(x)))
    if scale == 0.0:
        return x.copy(), 1.0
    return x / scale, scale


def to_channels(stack: np.ndarray, mode: str) -> np.ndarray:
    """Pack a (N_s, N1, N2) shot stack into a real (C, N1, N2) channel stack."""
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise ValueError(f"expected (N_s, N1, N2), got shape {stack.shape}")
    if mode == "complex":
        n_s = stack.shape[0]
        out = np.empty((2 * n_s,) + stack.shape[1:], dtype=np.float32)
        out[0::2] = stack.real
        out[1::2] = stack.imag
        return out
    if mode == "magnitude":
        if np.iscomplexobj(stack):
            raise ValueError("magnitude mode expects real data")
        return stack.astype(np.float32)
    raise ConfigError(f"unknown mode {mode!r}; expected 'complex' or 'magnitude'")


def from_channels(channels: np.ndarray, mode: str) -> np.ndarray:
    """Invert to_channels back to a (N_s, N1, N2) shot stack."""
    channels = np.asarray(channels)
    if mode == "complex":
        if channels.shape[0] % 2:
            raise ValueError(f"complex mode needs an even channel count, got {channels.shape[0]}")
        return channels[0::2].astype(np.complex64) + 1j * channels[1::2].astype(np.complex64)
    if mode == "magnitude":
        return channels.astype(np.float32)
    raise ConfigError(f"unknown mode {mode!r}; expected 'complex' or 'magnitude'")


def channels_for(mode: str, n_shots: int) -> int:
    return 2 * n_shots if mode == "complex" else n_shots


def patch_grid(n: int, patch: int, stride: int) -> list[int]:
    """Window start offsets along one axis: every full window on the stride grid."""
    if n < patch:
        return []
    return list(range(0, n - patch + 1, stride))


def extract_patches(
    inputs: np.ndarray, reference: np.ndarray, patch: int, stride: int
) -> tuple[np.ndarray, np.ndarray]:
    """Cut aligned windows from an input stack and its residual target.

    ``inputs`` and ``reference`` are (C, N1, N2) channel stacks on a common
    scale; the target of each pair is the residual reference - input, so a
    perfect network output added back to its input reproduces the reference.
    Returns (x, y) with shape (n_patches, C, patch, patch); the patch count
    is len(patch_grid(N1)) * len(patch_grid(N2)).
    """
    inputs = np.asarray(inputs, dtype=np.float32)
    reference = np.asarray(reference, dtype=np.float32)
    if inputs.shape != reference.shape or inputs.ndim != 3:
        raise ValueError(
            f"input and reference stacks must share a (C, N1, N2) shape, "
            f"got {inputs.shape} and {reference.shape}"
        )
    residual = reference - inputs
    _, n1, n2 = inputs.shape
    rows = patch_grid(n1, patch, stride)
    cols = patch_grid(n2, patch, stride)
    x = np.empty((len(rows) * len(cols), inputs.shape[0], patch, patch), dtype=np.float32)
    y = np.empty_like(x)
    k = 0
    for i in rows:
        for j in cols:
            x[k] = inputs[:, i : i + patch, j : j + patch]
            y[k] = residual[:, i : i + patch, j : j + patch]
            k += 1
    return x, y


def _transform(p: np.ndarray, eighth_turns: int, mirror: bool) -> np.ndarray:
    """One element of the order-16 symmetry group on a (C, p, p) patch.

    Quarter-turn multiples are exact index permutations; odd eighth turns
    interpolate bilinearly with reflected padding.
    """
    out = p[:, :, ::-1] if mirror else p
    if eighth_turns % 2 == 0:
        return np.ascontiguousarray(np.rot90(out, eighth_turns // 2, axes=(-2, -1)))
    return ndimage.rotate(
        out, 45.0 * eighth_turns, axes=(-1, -2), reshape=False, order=1, mode="reflect"
    ).astype(np.float32)


def augment_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand one patch pair into its 16 rotated/mirrored variants.

    The orbit is the group generated by 45-degree rotations and axis flips:
    eight rotations, each with and without a mirror.  Input and target get
    the identical transform so the residual relation is preserved.
    """
    xs = np.empty((AUGMENT_FOLD,) + x.shape, dtype=np.float32)
    ys = np.empty((AUGMENT_FOLD,) + y.shape, dtype=np.float32)
    k = 0
    for mirror in (False, True):
        for turns in range(8):
            xs[k] = _transform(x, turns, mirror)
            ys[k] = _transform(y, turns, mirror)
            k += 1
    return xs, ys


def build_training_pairs(
    inputs: np.ndarray,
    reference: np.ndarray,
    mode: str,
    spec: PatchSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Turn frame stacks into a full training set of patch pairs.

    ``inputs`` and ``reference`` are (n_frames, N_s, N1, N2).  Each frame is
    normalized by its input's max magnitude (both sides, so residuals live on
    the input scale), packed into channels, resampled to each pyramid scale,
    cut into patches, and optionally expanded 16-fold by augmentation.
    Scales that shrink the frame below one patch are skipped.
    """
    if inputs.shape != reference.shape or inputs.ndim != 4:
        raise ValueError(
            f"expected matching (n_frames, N_s, N1, N2) stacks, "
            f"got {inputs.shape} and {reference.shape}"
        )
    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    for f in range(inputs.shape[0]):
        xn, scale = normalize_scale(inputs[f])
        rn = reference[f] / scale
        cx = to_channels(xn, mode)
        cr = to_channels(rn, mode)
        for s in spec.scales:
            if s == 1.0:
                sx, sr = cx, cr
            else:
                sx = ndimage.zoom(cx, (1, s, s), order=1)
                sr = ndimage.zoom(cr, (1, s, s), order=1)
            if min(sx.shape[1], sx.shape[2]) < spec.patch:
                continue
            px, py = extract_patches(sx, sr, spec.patch, spec.stride)
            if not spec.augment:
                xs.append(px)
                ys.append(py)
                continue
            for k in range(px.shape[0]):
                ax, ay = augment_pair(px[k], py[k])
                xs.append(ax)
                ys.append(ay)
    if not xs:
        raise ValueError(
            f"no patches: frames of shape {inputs.shape[-2:]} admit no "
            f"{spec.patch}x{spec.patch} window at any scale {spec.scales}"
        )
    return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0)
