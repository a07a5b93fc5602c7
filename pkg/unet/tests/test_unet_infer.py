"""Sliding-window inference: coverage, identity, validation, container IO."""

import numpy as np
import pytest
import torch

from unet_denoiser import (
    NetSpec,
    TrainSpec,
    build_net,
    denoise_container,
    read_container,
    slide_residual,
    train,
    write_container,
)
from unet_denoiser.errors import DataError, NumericalError
from unet_denoiser.infer import _window_starts


@pytest.fixture(scope="module")
def tiny_model(tmp_path_factory, blob_frames):
    out = tmp_path_factory.mktemp("model")
    spec = NetSpec(levels=2, base_filters=4, mode="magnitude", shots=1)
    res = train(
        blob_frames,
        blob_frames,
        spec,
        TrainSpec(epochs=2, batch_size=32, patch=16, stride=8, scales=(1.0,),
                  augment=False, seed=0),
        out,
    )
    return res.model_path


@pytest.fixture(scope="module")
def zero_model(tmp_path_factory, tiny_model):
    """Same architecture with every parameter zeroed: a pure identity denoiser."""
    from unet_denoiser import load_model

    net, ckpt = load_model(tiny_model)
    state = {k: torch.zeros_like(v) for k, v in net.state_dict().items()}
    ckpt = dict(ckpt, state_dict=state)
    path = tmp_path_factory.mktemp("zero") / "model.pt"
    torch.save(ckpt, path)
    return str(path)


def test_window_starts_reach_the_edge():
    assert _window_starts(48, 24, 10) == [0, 10, 20, 24]
    assert _window_starts(64, 64, 10) == [0]
    assert _window_starts(65, 64, 10) == [0, 1]
    assert _window_starts(96, 64, 16) == [0, 16, 32]
    assert _window_starts(10, 24, 10) == []


def test_window_weights_are_partition_of_unity():
    ones = lambda batch: torch.ones_like(batch)
    for n1, n2, patch, stride in [(48, 48, 24, 10), (64, 40, 16, 10), (33, 57, 16, 7)]:
        out = slide_residual(ones, np.zeros((2, n1, n2), dtype=np.float32), patch, stride=stride)
        assert out.shape == (2, n1, n2)
        assert np.all(out == 1.0)


def test_slide_rejects_undersized_images():
    with pytest.raises(DataError, match="smaller than"):
        slide_residual(lambda b: b, np.zeros((1, 8, 8), dtype=np.float32), 16)


def test_zero_network_is_identity(tmp_path, zero_model, blob_frames):
    src = tmp_path / "in.bin"
    dst = tmp_path / "out.bin"
    write_container(src, blob_frames[:, :, None], "magnitude-shots", geometry={"n": 48})
    denoise_container(src, dst, zero_model)
    h, out = read_container(dst)
    assert h.layout == "magnitude-shots" and h.dims == (3, 1, 1, 48, 48)
    assert h.geometry == {"n": 48}
    peak = np.max(np.abs(blob_frames))
    assert np.max(np.abs(out[:, :, 0] - blob_frames)) <= 1e-4 * peak


def test_trained_model_output_shape_and_provenance(tmp_path, tiny_model, blob_frames):
    src = tmp_path / "in.bin"
    dst = tmp_path / "out.bin"
    write_container(src, blob_frames[:, :, None], "magnitude-shots",
                    provenance={"stage": "init"})
    denoise_container(src, dst, tiny_model)
    h, out = read_container(dst)
    assert h.dims == (3, 1, 1, 48, 48)
    assert np.all(np.isfinite(out))
    assert h.provenance["stage"] == "init"
    assert h.provenance["denoiser"]["kind"] == "residual-unet"


def test_layout_mismatch_is_rejected(tmp_path, tiny_model):
    src = tmp_path / "in.bin"
    x = np.zeros((1, 1, 1, 48, 48), dtype=np.complex64)
    write_container(src, x, "complex-shots")
    with pytest.raises(DataError, match="layout"):
        denoise_container(src, tmp_path / "out.bin", tiny_model)


def test_shot_count_mismatch_is_rejected(tmp_path, tiny_model):
    src = tmp_path / "in.bin"
    write_container(src, np.zeros((1, 2, 1, 48, 48), dtype=np.float32), "magnitude-shots")
    with pytest.raises(DataError, match="shot"):
        denoise_container(src, tmp_path / "out.bin", tiny_model)


def test_uncombined_coils_are_rejected(tmp_path, tiny_model):
    src = tmp_path / "in.bin"
    write_container(src, np.zeros((1, 1, 4, 48, 48), dtype=np.float32), "magnitude-shots")
    with pytest.raises(DataError, match="coil"):
        denoise_container(src, tmp_path / "out.bin", tiny_model)


def test_missing_model_is_data_error(tmp_path):
    with pytest.raises(DataError, match="cannot load"):
        denoise_container(tmp_path / "in.bin", tmp_path / "out.bin", tmp_path / "nope.pt")


def test_truncated_checkpoint_is_data_error(tmp_path, tiny_model, blob_frames):
    bad = tmp_path / "bad.pt"
    bad.write_bytes(open(tiny_model, "rb").read()[:100])
    src = tmp_path / "in.bin"
    write_container(src, blob_frames[:, :, None], "magnitude-shots")
    with pytest.raises(DataError):
        denoise_container(src, tmp_path / "out.bin", bad)


def test_nonfinite_weights_raise_numerical_error(tmp_path, tiny_model, blob_frames):
    from unet_denoiser import load_model

    net, ckpt = load_model(tiny_model)
    state = dict(net.state_dict())
    key = next(k for k in state if k.endswith("weight"))
    state[key] = torch.full_like(state[key], float("nan"))
    poisoned = tmp_path / "nan.pt"
    torch.save(dict(ckpt, state_dict=state), poisoned)
    src = tmp_path / "in.bin"
    write_container(src, blob_frames[:, :, None], "magnitude-shots")
    with pytest.raises(NumericalError, match="non-finite"):
        denoise_container(src, tmp_path / "out.bin", poisoned)


def test_complex_mode_inference_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    x = (rng.normal(size=(2, 2, 32, 32)) + 1j * rng.normal(size=(2, 2, 32, 32)))
    spec = NetSpec(levels=2, base_filters=4, mode="complex", shots=2)
    res = train(
        x, x.copy(), spec,
        TrainSpec(epochs=1, batch_size=16, patch=16, stride=16, scales=(1.0,),
                  augment=False, seed=0),
        tmp_path,
    )
    src = tmp_path / "in.bin"
    write_container(src, x[:, :, None].astype(np.complex64), "complex-shots")
    denoise_container(src, tmp_path / "out.bin", res.model_path)
    h, out = read_container(tmp_path / "out.bin")
    assert h.layout == "complex-shots"
    assert h.dims == (2, 2, 1, 32, 32)
    assert np.all(np.isfinite(out.real)) and np.all(np.isfinite(out.imag))
