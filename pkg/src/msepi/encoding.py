"""Per-shot SENSE encoding with in-plane and slice-group undersampling.

Simultaneous-slice acquisition is modeled on a readout-extended grid: the MB
excited slices (each N1 x N2) are stacked along the readout axis into one
N1_ext x N2 image with N1_ext = MB * N1, and the slice collapse observed at
the scanner becomes undersampling of every MB-th kx row of that grid.  All
operators here act on the extended grid; ``sms_row_map`` states the exact
row/phase correspondence between the two pictures and is the convention the
masks are built against.

Axis convention: arrays end in (..., N1_ext, N2) = (readout, phase-encode);
coil stacks add a leading coil axis, shot sets a leading shot axis.
"""

from dataclasses import dataclass, replace

import numpy as np

from .fourier import fft2c, ifft2c, conj_mirror, mirror_index

__all__ = [
    "SamplingMask",
    "CoilMaps",
    "KSpaceShotSet",
    "make_mask",
    "sense_forward",
    "sense_adjoint",
    "coil_expand",
    "coil_combine_lsq",
    "sms_collapse",
    "sms_extend",
    "sms_split",
    "sms_row_map",
    "vc_augment",
]


@dataclass(frozen=True)
class SamplingMask:
    """Boolean keep-grid for one shot plus the acquisition geometry behind it.

    ``keep`` is authoritative; the integer fields record how it was built
    (mirrored masks produced by :func:`vc_augment` keep the originals).  A
    negative ``shot_index`` marks the conjugate-mirrored companion of shot
    ``-shot_index``.
    """

    keep: np.ndarray
    shot_index: int
    delta_ky: int
    r_inplane: int
    mb: int

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim != 2:
            raise ValueError(f"mask grid must be 2-D, got shape {keep.shape}")
        object.__setattr__(self, "keep", keep)

    @property
    def shape(self) -> tuple[int, int]:
        return self.keep.shape

    @property
    def n_kept_columns(self) -> int:
        return int(np.count_nonzero(self.keep.any(axis=0)))

    @property
    def n_kept_rows(self) -> int:
        return int(np.count_nonzero(self.keep.any(axis=1)))


@dataclass(frozen=True)
class CoilMaps:
    """Complex coil sensitivities on the extended grid, shape (N_c, N1_ext, N2).

    ``support`` (optional boolean grid) declares where the object can live;
    construction checks that the coil array has signal everywhere on it, so
    the least-squares coil combine is well posed on support.
    """

    maps: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.complex128)
        if maps.ndim != 3:
            raise ValueError(f"coil maps must be (N_c, N1_ext, N2), got {maps.shape}")
        if not np.all(np.isfinite(maps)):
            raise ValueError("coil maps contain non-finite entries")
        object.__setattr__(self, "maps", maps)
        if self.support is not None:
            support = np.asarray(self.support, dtype=bool)
            if support.shape != maps.shape[1:]:
                raise ValueError("support shape does not match the grid")
            if np.any(self.sos()[support] <= 0.0):
                raise ValueError("coil maps vanish somewhere on the declared support")
            object.__setattr__(self, "support", support)

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]

    def sos(self) -> np.ndarray:
        """Pointwise sum of squared coil magnitudes (real, >= 0)."""
        return np.sum(np.abs(self.maps) ** 2, axis=0)


@dataclass(frozen=True)
class KSpaceShotSet:
    """Measured multishot k-space: (N_s, N_c, N1_ext, N2) with per-shot masks.

    Invariant enforced at construction: entries off the mask are exactly zero,
    so zero-filled grids and masks stay interchangeable downstream.
    """

    data: np.ndarray
    masks: tuple[SamplingMask, ...]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 4:
            raise ValueError(f"shot set must be (N_s, N_c, N1_ext, N2), got {data.shape}")
        masks = tuple(self.masks)
        if len(masks) != data.shape[0]:
            raise ValueError(f"{data.shape[0]} shots but {len(masks)} masks")
        if not np.all(np.isfinite(data)):
            raise ValueError("shot data contains non-finite entries")
        for t, m in enumerate(masks):
            if m.shape != data.shape[2:]:
                raise ValueError(f"mask {t} shape {m.shape} != grid {data.shape[2:]}")
            if np.any(data[t][:, ~m.keep] != 0):
                raise ValueError(f"shot {t} has nonzero samples outside its mask")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "masks", masks)

    @property
    def n_shots(self) -> int:
        return self.data.shape[0]

    @property
    def n_coils(self) -> int:
        return self.data.shape[1]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.data.shape[2:]


def make_mask(
    shot_index: int,
    n1_ext: int,
    n2: int,
    r_inplane: int,
    mb: int,
    delta_ky: int = 0,
) -> SamplingMask:
    """Build the sampling mask for one shot on the extended grid.

    Rows: every MB-th kx row, phased so the DC row (index N1_ext//2) is kept;
    this is the row set :func:`sms_row_map` maps the collapsed acquisition to.
    Columns: a fixed echo train of floor(N2/R_inplane) ky lines at
    ``(delta_ky mod R) + n*R``, the same line count for every shift.
    """
    if r_inplane < 1 or mb < 1:
        raise ValueError(f"acceleration factors must be >= 1, got R={r_inplane} MB={mb}")
    if n1_ext < 1 or n2 < 1:
        raise ValueError(f"grid must be nonempty, got {n1_ext}x{n2}")
    if n1_ext % mb != 0:
        raise ValueError(f"extended rows {n1_ext} not a multiple of MB={mb}")
    if r_inplane > n2:
        raise ValueError(f"R={r_inplane} leaves no ky line on a {n2}-column grid")

    rows = np.arange((n1_ext // 2) % mb, n1_ext, mb)
    n_lines = n2 // r_inplane
    cols = (delta_ky % r_inplane) + np.arange(n_lines) * r_inplane
    keep = np.zeros((n1_ext, n2), dtype=bool)
    keep[np.ix_(rows, cols)] = True
    return SamplingMask(keep, shot_index, delta_ky, r_inplane, mb)


def _check_grid(x: np.ndarray, coils: CoilMaps, mask: SamplingMask, what: str) -> None:
    if x.shape[-2:] != coils.grid_shape or mask.shape != coils.grid_shape:
        raise ValueError(
            f"{what}: grid mismatch image {x.shape[-2:]} coils {coils.grid_shape} "
            f"mask {mask.shape}"
        )


def coil_expand(img: np.ndarray, coils: CoilMaps) -> np.ndarray:
    """Weight one image by each coil sensitivity: (N1_ext, N2) -> (N_c, N1_ext, N2)."""
    return coils.maps * np.asarray(img, dtype=np.complex128)


def coil_combine_lsq(
    coil_imgs: np.ndarray, coils: CoilMaps, rel_threshold: float = 0.0
) -> np.ndarray:
    """Least-squares coil combine: sum_c conj(C_c) y_c / sum_c |C_c|^2.

    Voxels whose sensitivity energy is zero (or below ``rel_threshold`` times
    the peak energy) are defined as 0 rather than divided by ~0.
    """
    num = np.sum(np.conj(coils.maps) * coil_imgs, axis=-3)
    sos = coils.sos()
    out = np.zeros_like(num)
    np.divide(num, sos, out=out, where=sos > rel_threshold * sos.max())
    return out


def sense_forward(img: np.ndarray, coils: CoilMaps, mask: SamplingMask) -> np.ndarray:
    """Masked per-coil spectrum of a coil-weighted image; linear in ``img``."""
    img = np.asarray(img, dtype=np.complex128)
    _check_grid(img, coils, mask, "sense_forward")
    return fft2c(coil_expand(img, coils)) * mask.keep


def sense_adjoint(d: np.ndarray, coils: CoilMaps, mask: SamplingMask) -> np.ndarray:
    """Exact adjoint of :func:`sense_forward`: sum_c conj(C_c) ifft2c(mask d_c)."""
    d = np.asarray(d, dtype=np.complex128)
    _check_grid(d, coils, mask, "sense_adjoint")
    return np.sum(np.conj(coils.maps) * ifft2c(d * mask.keep), axis=-3)


def sms_collapse(slices: np.ndarray) -> np.ndarray:
    """Voxelwise sum of the MB simultaneously excited slices (MB, N1, N2) -> (N1, N2)."""
    slices = np.asarray(slices)
    return np.sum(slices, axis=0)


def sms_extend(slices: np.ndarray) -> np.ndarray:
    """Stack MB slices along readout into the extended grid (MB, N1, N2) -> (MB*N1, N2)."""
    slices = np.asarray(slices)
    return np.concatenate([slices[m] for m in range(slices.shape[0])], axis=-2)


def sms_split(extended: np.ndarray, mb: int) -> np.ndarray:
    """Inverse bookkeeping of :func:`sms_extend`: (MB*N1, N2) -> (MB, N1, N2)."""
    extended = np.asarray(extended)
    if mb < 1 or extended.shape[-2] % mb != 0:
        raise ValueError(f"{extended.shape[-2]} rows do not split into MB={mb} slices")
    return np.stack(np.split(extended, mb, axis=-2))


def sms_row_map(n1: int, mb: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices and phases tying the collapsed spectrum to the extended one.

    For slices stacked by :func:`sms_extend`,

        fft2c(sms_collapse(s))[v, :]
            = sqrt(MB) * phases[v] * fft2c(sms_extend(s))[rows[v], :]

    with rows[v] = (c_e + MB*(v - c_s)) mod MB*N1 and
    phases[v] = exp(2j*pi*(v - c_s)*(c_s - c_e)/N1), where c_s = N1//2 and
    c_e = (MB*N1)//2.  Every rows[v] is congruent to c_e mod MB, the row set
    :func:`make_mask` keeps.  For even N1 this reduces to rows[v] = MB*v mod
    MB*N1 and phases[v] = (-1)^((v - N1//2)*(MB-1)).
    """
    if n1 < 1 or mb < 1:
        raise ValueError(f"need n1 >= 1 and mb >= 1, got {n1}, {mb}")
    n1_ext = mb * n1
    c_s, c_e = n1 // 2, n1_ext // 2
    v = np.arange(n1)
    rows = (c_e + mb * (v - c_s)) % n1_ext
    phases = np.exp(2j * np.pi * (v - c_s) * (c_s - c_e) / n1)
    return rows, phases


def vc_augment(d: np.ndarray, mask: SamplingMask) -> tuple[np.ndarray, SamplingMask]:
    """Conjugate-mirrored companion of one shot's data and mask.

    The returned pair is what the virtual-coil rows of the joint system
    consume, together with conjugated sensitivities and negated shot phase.
    Applying it twice returns the original (mirroring is an involution).
    """
    d = np.asarray(d, dtype=np.complex128)
    if d.shape[-2:] != mask.shape:
        raise ValueError(f"data grid {d.shape[-2:]} != mask grid {mask.shape}")
    i1 = mirror_index(mask.shape[0])
    i2 = mirror_index(mask.shape[1])
    keep_mirror = mask.keep[i1[:, None], i2[None, :]]
    return conj_mirror(d), replace(mask, keep=keep_mirror, shot_index=-mask.shot_index)
