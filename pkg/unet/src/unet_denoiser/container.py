"""Reader/writer for the shot-stack exchange format.

This is an independent implementation of the on-disk contract used to hand
image stacks between tools; it deliberately imports nothing from the
reconstruction package so the two sides only agree through the bytes.

File layout:

    8 bytes   magic b"MSEPIC01"
    4 bytes   header length (uint32, little-endian)
    N bytes   header, UTF-8 JSON
    rest      payload: little-endian raw array, row-major, frames outermost

The header carries dims [frames, shots, coils, N1_ext, N2], the payload
dtype ("c64" complex64 / "f32" float32), a channel-layout tag, acquisition
geometry, and provenance.  The payload length must match the dims exactly.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = ["ContainerError", "ExchangeHeader", "LAYOUT_DTYPES", "read_container", "write_container"]

MAGIC = b"MSEPIC01"
SCHEMA_VERSION = 1

# channel-layout tag -> required payload dtype
LAYOUT_DTYPES = {
    "complex-shots": "c64",
    "magnitude-shots": "f32",
    "phase": "f32",
    "magnitude": "f32",
}

_NUMPY_DTYPES = {"c64": np.dtype("<c8"), "f32": np.dtype("<f4")}


class ContainerError(DataError):
    """Malformed container file or inconsistent header/payload."""


@dataclass(frozen=True)
class ExchangeHeader:
    dims: tuple[int, int, int, int, int]  # frames, shots, coils, N1_ext, N2
    layout: str
    dtype: str = ""
    geometry: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.layout not in LAYOUT_DTYPES:
            raise ContainerError(
                f"unknown layout {self.layout!r}; expected one of {sorted(LAYOUT_DTYPES)}"
            )
        want = LAYOUT_DTYPES[self.layout]
        if self.dtype == "":
            object.__setattr__(self, "dtype", want)
        elif self.dtype != want:
            raise ContainerError(f"layout {self.layout!r} requires dtype {want}, got {self.dtype!r}")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 5 or any(d < 1 for d in dims):
            raise ContainerError(f"dims must be 5 positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def numpy_dtype(self) -> np.dtype:
        return _NUMPY_DTYPES[self.dtype]

    @property
    def payload_bytes(self) -> int:
        return int(np.prod(self.dims)) * self.numpy_dtype.itemsize

    def to_json(self) -> str:
        doc = {
            "schema_version": self.schema_version,
            "dims": list(self.dims),
            "dtype": self.dtype,
            "channel-layout": self.layout,
            "geometry": self.geometry,
            "provenance": self.provenance,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ExchangeHeader":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ContainerError(f"header is not valid JSON: {e}") from e
        for key in ("schema_version", "dims", "dtype", "channel-layout"):
            if key not in doc:
                raise ContainerError(f"header missing required key {key!r}")
        if doc["schema_version"] != SCHEMA_VERSION:
            raise ContainerError(f"unsupported schema_version {doc['schema_version']}")
        return cls(
            dims=tuple(doc["dims"]),
            layout=doc["channel-layout"],
            dtype=doc["dtype"],
            geometry=doc.get("geometry", {}),
            provenance=doc.get("provenance", {}),
        )


def write_container(
    path: str | Path,
    array: np.ndarray,
    layout: str,
    geometry: dict | None = None,
    provenance: dict | None = None,
) -> ExchangeHeader:
    """Write a 5-D array (frames, shots, coils, N1_ext, N2) to ``path``."""
    array = np.asarray(array)
    if array.ndim != 5:
        raise ContainerError(f"expected a 5-D array, got shape {array.shape}")
    header = ExchangeHeader(
        dims=array.shape,
        layout=layout,
        geometry=geometry or {},
        provenance=provenance or {},
    )
    if np.iscomplexobj(array) and header.dtype == "f32":
        raise ContainerError(f"layout {layout!r} is real-valued, got complex data")
    payload = np.ascontiguousarray(array.astype(header.numpy_dtype, copy=False))
    head = header.to_json().encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array(len(head), dtype="<u4").tobytes())
        f.write(head)
        f.write(payload.tobytes())
    return header


def read_container(path: str | Path) -> tuple[ExchangeHeader, np.ndarray]:
    """Read and validate a container; returns (header, array in declared dtype)."""
    try:
        with open(path, "rb") as f:
            magic = f.read(len(MAGIC))
            if magic != MAGIC:
                raise ContainerError(f"{path}: bad magic {magic!r}")
            raw_len = f.read(4)
            if len(raw_len) != 4:
                raise ContainerError(f"{path}: truncated before header length")
            head_len = int(np.frombuffer(raw_len, dtype="<u4")[0])
            head = f.read(head_len)
            if len(head) != head_len:
                raise ContainerError(f"{path}: truncated header")
            header = ExchangeHeader.from_json(head.decode("utf-8"))
            payload = f.read()
    except OSError as e:
        raise ContainerError(f"{path}: {e}") from e
    if len(payload) != header.payload_bytes:
        raise ContainerError(
            f"{path}: payload is {len(payload)} bytes, dims {header.dims} "
            f"require {header.payload_bytes}"
        )
    array = np.frombuffer(payload, dtype=header.numpy_dtype).reshape(header.dims)
    return header, array
