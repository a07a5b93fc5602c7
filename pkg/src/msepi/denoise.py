"""Shot-image refinement between the low-rank solver and phase estimation.

Three interchangeable kinds behind one call:

* ``identity``: pass-through (the no-refinement arm),
* ``reference-wavelet``: in-process soft thresholding of wavelet detail
  coefficients, real and imaginary parts independently,
* ``external-process``: hand the stack to an external command (typically the
  neural denoiser) through container files.

All kinds share one normalization protocol: the stack is scaled so its peak
magnitude is 1 before denoising and scaled back after.  A pure scale (no
offset) keeps complex phase intact and makes the round trip exact to
machine precision; thresholds are therefore expressed on the [0, 1]
intensity scale.
"""

import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .wavelets import prox_wavelet_l1

__all__ = ["DenoiserSpec", "ExternalDenoiserError", "denoise_shots", "combine_magnitude"]

KINDS = ("identity", "reference-wavelet", "external-process")


class ExternalDenoiserError(RuntimeError):
    """The external command failed or returned an unusable result.

    Never silently swallowed: a fallback to the identity would corrupt any
    experiment comparing denoiser arms.
    """


@dataclass(frozen=True)
class DenoiserSpec:
    """Which denoiser runs and with what parameters; exactly one kind."""

    kind: str
    sigma_w: float = 0.02  # reference kind: threshold on the [0,1] scale
    levels: int = 4  # reference kind: decomposition depth
    command: tuple[str, ...] = ()  # external kind: argv with {in} and {out}
    exchange_dir: str | None = None  # external kind: container directory

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown denoiser kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "reference-wavelet" and self.sigma_w < 0:
            raise ValueError(f"sigma_w must be >= 0, got {self.sigma_w}")
        if self.kind == "external-process":
            if not self.command:
                raise ValueError("external-process kind needs a command")
            joined = " ".join(self.command)
            if "{in}" not in joined or "{out}" not in joined:
                raise ValueError("external command must use the {in} and {out} placeholders")
        object.__setattr__(self, "command", tuple(self.command))

    @classmethod
    def identity(cls) -> "DenoiserSpec":
        return cls(kind="identity")

    @classmethod
    def reference(cls, sigma_w: float = 0.02, levels: int = 4) -> "DenoiserSpec":
        return cls(kind="reference-wavelet", sigma_w=sigma_w, levels=levels)

    @classmethod
    def external(cls, command: tuple[str, ...], exchange_dir: str | None = None) -> "DenoiserSpec":
        return cls(kind="external-process", command=tuple(command), exchange_dir=exchange_dir)


def _normalize(x: np.ndarray) -> tuple[np.ndarray, float]:
    scale = float(np.max(np.abs(x)))
    if scale == 0.0:
        return x.copy(), 1.0
    return x / scale, scale


def _denoise_reference(xn: np.ndarray, spec: DenoiserSpec) -> np.ndarray:
    out = np.empty_like(xn)
    for t in range(xn.shape[0]):
        out[t] = prox_wavelet_l1(
            xn[t].real, spec.sigma_w, spec.levels, detail_only=True
        ) + 1j * prox_wavelet_l1(xn[t].imag, spec.sigma_w, spec.levels, detail_only=True)
    return out


def _denoise_external(xn: np.ndarray, spec: DenoiserSpec) -> np.ndarray:
    n_s, n1, n2 = xn.shape
    with tempfile.TemporaryDirectory(dir=spec.exchange_dir) as tmp:
        fin = str(Path(tmp) / "shots_in.msepi")
        fout = str(Path(tmp) / "shots_out.msepi")
        write_container(
            fin,
            xn.astype(np.complex64)[None, :, None, :, :],
            "complex-shots",
        )
        argv = [a.replace("{in}", fin).replace("{out}", fout) for a in spec.command]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ExternalDenoiserError(
                f"denoiser command exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        if not Path(fout).exists():
            raise ExternalDenoiserError(f"denoiser command produced no output file {fout}")
        try:
            header, arr = read_container(fout)
        except ValueError as e:
            raise ExternalDenoiserError(f"denoiser output unreadable: {e}") from e
    if header.layout != "complex-shots" or header.dims != (1, n_s, 1, n1, n2):
        raise ExternalDenoiserError(
            f"denoiser output has layout {header.layout!r} dims {header.dims}, "
            f"expected complex-shots (1, {n_s}, 1, {n1}, {n2})"
        )
    out = arr[0, :, 0].astype(np.complex128)
    if not np.all(np.isfinite(out)):
        raise ExternalDenoiserError("denoiser output contains non-finite values")
    return out


def denoise_shots(x: np.ndarray, spec: DenoiserSpec) -> np.ndarray:
    """Refine a shot stack (N_s, N1_ext, N2); shape and finiteness preserved."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 3:
        raise ValueError(f"expected (N_s, N1_ext, N2), got {x.shape}")
    xn, scale = _normalize(x)
    if spec.kind == "identity":
        out = xn
    elif spec.kind == "reference-wavelet":
        out = _denoise_reference(xn, spec)
    else:
        out = _denoise_external(xn, spec)
    out = out * scale
    if not np.all(np.isfinite(out)):
        raise ValueError("denoiser produced non-finite values")
    return out


def combine_magnitude(u: np.ndarray) -> np.ndarray:
    """Voxelwise mean of the shot magnitudes: the fixed-magnitude estimate."""
    u = np.asarray(u)
    if u.ndim != 3 or u.shape[0] < 1:
        raise ValueError(f"expected a nonempty (N_s, N1_ext, N2) stack, got {u.shape}")
    return np.mean(np.abs(u), axis=0)
