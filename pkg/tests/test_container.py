"""Container format: bit-exact round trips and hard validation."""

import json

import numpy as np
import pytest

from msepi.container import (
    MAGIC,
    ContainerError,
    ContainerHeader,
    read_container,
    write_container,
)


def test_roundtrip_bitexact_complex(tmp_path):
    rng = np.random.default_rng(0)
    a = (rng.standard_normal((2, 3, 1, 4, 5)) + 1j * rng.standard_normal((2, 3, 1, 4, 5))).astype(
        np.complex64
    )
    p = tmp_path / "x.msepi"
    h = write_container(p, a, "complex-shots", geometry={"MB": 2}, provenance={"seed": 7})
    h2, b = read_container(p)
    assert np.array_equal(a.view(np.uint8) if False else a, b) and a.tobytes() == b.tobytes()
    assert h2.dims == (2, 3, 1, 4, 5)
    assert h2.layout == "complex-shots" and h2.dtype == "c64"
    assert h2.geometry == {"MB": 2} and h2.provenance == {"seed": 7}


def test_roundtrip_bitexact_real(tmp_path):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((1, 1, 1, 8, 8)).astype(np.float32)
    p = tmp_path / "m.msepi"
    write_container(p, a, "magnitude")
    _, b = read_container(p)
    assert a.tobytes() == b.tobytes()


def test_header_layout_dtype_consistency():
    with pytest.raises(ContainerError):
        ContainerHeader(dims=(1, 1, 1, 4, 4), layout="phase", dtype="c64")
    with pytest.raises(ContainerError):
        ContainerHeader(dims=(1, 1, 1, 4, 4), layout="nope")
    with pytest.raises(ContainerError):
        ContainerHeader(dims=(1, 1, 4, 4), layout="phase")
    h = ContainerHeader(dims=(1, 2, 1, 4, 4), layout="complex-shots")
    assert h.dtype == "c64" and h.payload_bytes == 2 * 16 * 8


def test_write_rejects_bad_shapes_and_types(tmp_path):
    with pytest.raises(ContainerError):
        write_container(tmp_path / "a", np.zeros((4, 4)), "magnitude")
    with pytest.raises(ContainerError):
        write_container(tmp_path / "b", np.zeros((1, 1, 1, 4, 4), dtype=complex), "magnitude")


def test_read_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(ContainerError, match="magic"):
        read_container(p)


def test_read_rejects_truncated_payload(tmp_path):
    p = tmp_path / "t.msepi"
    a = np.zeros((1, 1, 1, 4, 4), dtype=np.float32)
    write_container(p, a, "magnitude")
    blob = p.read_bytes()
    p.write_bytes(blob[:-8])
    with pytest.raises(ContainerError, match="payload"):
        read_container(p)


def test_read_rejects_malformed_header_before_payload(tmp_path):
    head = b"{this is not json"
    p = tmp_path / "h.msepi"
    p.write_bytes(MAGIC + np.uint32(len(head)).tobytes() + head + b"\x00" * 64)
    with pytest.raises(ContainerError, match="JSON"):
        read_container(p)


def test_header_json_is_deterministic(tmp_path):
    a = np.zeros((1, 1, 1, 2, 2), dtype=np.float32)
    p1, p2 = tmp_path / "1", tmp_path / "2"
    write_container(p1, a, "phase", geometry={"MB": 1, "R_inplane": 8})
    write_container(p2, a, "phase", geometry={"R_inplane": 8, "MB": 1})
    assert p1.read_bytes() == p2.read_bytes()  # key order cannot leak into bytes


def test_float64_input_is_cast_then_roundtrips(tmp_path):
    rng = np.random.default_rng(2)
    a = rng.standard_normal((1, 2, 1, 4, 4)) + 1j * rng.standard_normal((1, 2, 1, 4, 4))
    p = tmp_path / "c.msepi"
    write_container(p, a, "complex-shots")
    _, b = read_container(p)
    assert b.dtype == np.complex64
    assert np.allclose(b, a, atol=1e-6)  # float32 precision, not float64
