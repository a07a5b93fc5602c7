"""Centered unitary 2-D FFTs and the conjugate-mirror operator.

Conventions used everywhere in this package:

* Image and k-space grids are complex ndarrays whose last two axes are
  (readout, phase-encode).  Leading axes (shots, coils, frames) are carried
  through untouched.
* The DC sample sits at index ``(N1 // 2, N2 // 2)`` of the centered grid.
* Both transform directions carry a ``1/sqrt(N1*N2)`` factor, so
  ``fft2c``/``ifft2c`` are unitary and exact adjoints of each other.
"""

import numpy as np

__all__ = ["fft2c", "ifft2c", "conj_mirror"]


def _require_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        bad = int(np.count_nonzero(~np.isfinite(a)))
        raise ValueError(f"{name} contains {bad} non-finite entries")


def fft2c(img: np.ndarray) -> np.ndarray:
    """Centered unitary 2-D DFT over the last two axes.

    The input is shifted so that the center voxel maps to the DFT origin,
    transformed with ``norm="ortho"``, and shifted back so DC lands at the
    grid center.  Norm-preserving: ``||fft2c(x)|| == ||x||``.
    """
    img = np.asarray(img, dtype=np.complex128)
    _require_finite(img, "fft2c input")
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(img, axes=(-2, -1)), axes=(-2, -1), norm="ortho"),
        axes=(-2, -1),
    )


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`fft2c` (also its adjoint, by unitarity)."""
    k = np.asarray(k, dtype=np.complex128)
    _require_finite(k, "ifft2c input")
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(k, axes=(-2, -1)), axes=(-2, -1), norm="ortho"),
        axes=(-2, -1),
    )


def mirror_index(n: int) -> np.ndarray:
    """Index permutation realizing frequency negation on a centered axis.

    On the uncentered axis the map is ``u -> (n - u) % n``; expressed on the
    centered grid this keeps the DC sample (index ``n // 2``) fixed for even
    and odd ``n`` alike.
    """
    center = n // 2
    u = (np.arange(n) - center) % n
    return (np.negative(u) % n + center) % n


def conj_mirror(k: np.ndarray) -> np.ndarray:
    """Conjugate-symmetric counterpart of a centered k-space grid.

    The sample at (kx, ky) is the conjugate of the input sample at
    (-kx, -ky).  Self-inverse, and equal to the identity on k-space of a
    purely real image (Hermitian symmetry).
    """
    k = np.asarray(k)
    _require_finite(k, "conj_mirror input")
    i1 = mirror_index(k.shape[-2])
    i2 = mirror_index(k.shape[-1])
    return np.conj(k[..., i1[:, None], i2[None, :]])
