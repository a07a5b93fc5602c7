"""Training loop: persistence, curve bookkeeping, determinism, failure modes."""

import json
from pathlib import Path

import numpy as np
import pytest
import torch

from unet_denoiser import NetSpec, TrainSpec, load_model, train
from unet_denoiser.errors import ConfigError, NumericalError

TINY_NET = dict(levels=2, base_filters=4, mode="magnitude", shots=1)
TINY_TRAIN = dict(epochs=3, batch_size=32, patch=16, stride=8, scales=(1.0,), augment=False)


def test_default_train_spec():
    spec = TrainSpec()
    assert spec.epochs == 200
    assert spec.batch_size == 128
    assert spec.lr == pytest.approx(1e-3)
    assert spec.decay == pytest.approx(1e-3)
    assert spec.patch == 64
    assert spec.stride == 16
    assert spec.scales == (0.5, 1.0, 2.0)
    assert spec.augment is True


def test_train_spec_validation():
    with pytest.raises(ConfigError):
        TrainSpec(epochs=0)
    with pytest.raises(ConfigError):
        TrainSpec(batch_size=0)
    with pytest.raises(ConfigError):
        TrainSpec(lr=0.0)
    with pytest.raises(ConfigError):
        TrainSpec(decay=-0.1)
    with pytest.raises(ConfigError):
        TrainSpec(val_fraction=0.0)


def test_train_persists_model_and_curve(tmp_path, blob_frames):
    noisy = blob_frames + 0.1 * np.random.default_rng(0).normal(size=blob_frames.shape).astype(
        np.float32
    )
    res = train(noisy, blob_frames, NetSpec(**TINY_NET), TrainSpec(**TINY_TRAIN, seed=0), tmp_path)
    assert Path(res.model_path).exists()
    assert Path(res.curve_path).exists()
    curve = json.loads(Path(res.curve_path).read_text())
    assert len(curve["train_loss"]) == 3
    assert len(curve["val_loss"]) == 3
    assert curve["best_epoch"] == int(np.argmin(curve["val_loss"])) + 1
    assert curve["best_val_loss"] == pytest.approx(min(curve["val_loss"]))
    assert res.best_epoch == curve["best_epoch"]
    assert res.n_train + res.n_val == 3 * 25  # ((48-16)/8+1)^2 patches per frame
    assert all(np.isfinite(v) for v in curve["train_loss"] + curve["val_loss"])


def test_checkpoint_carries_inference_metadata(tmp_path, blob_frames):
    res = train(
        blob_frames, blob_frames, NetSpec(**TINY_NET), TrainSpec(**TINY_TRAIN, seed=1), tmp_path
    )
    net, ckpt = load_model(res.model_path)
    assert ckpt["layout"] == "magnitude-shots"
    assert ckpt["patch"] == 16
    assert ckpt["normalization"] == "max-abs"
    assert ckpt["net"]["levels"] == 2
    assert net.spec.shots == 1 and net.spec.mode == "magnitude"
    assert not net.training  # eval mode after load


def test_nan_input_aborts_with_diagnostics(tmp_path, blob_frames):
    poisoned = blob_frames.copy()
    poisoned[0, 0, 5, 5] = np.nan
    with pytest.raises(NumericalError, match=r"epoch 1"):
        train(
            poisoned, blob_frames, NetSpec(**TINY_NET), TrainSpec(**TINY_TRAIN, seed=0), tmp_path
        )
    assert not (tmp_path / "model.pt").exists()


def test_same_seed_reproduces_curve_and_weights(tmp_path, blob_frames):
    noisy = blob_frames + 0.1 * np.random.default_rng(1).normal(size=blob_frames.shape).astype(
        np.float32
    )
    spec_n, spec_t = NetSpec(**TINY_NET), TrainSpec(**TINY_TRAIN, seed=7)
    res_a = train(noisy, blob_frames, spec_n, spec_t, tmp_path / "a")
    res_b = train(noisy, blob_frames, spec_n, spec_t, tmp_path / "b")
    assert Path(res_a.curve_path).read_bytes() == Path(res_b.curve_path).read_bytes()
    net_a, _ = load_model(res_a.model_path)
    net_b, _ = load_model(res_b.model_path)
    for pa, pb in zip(net_a.parameters(), net_b.parameters()):
        assert torch.equal(pa, pb)


def test_different_seed_changes_training(tmp_path, blob_frames):
    noisy = blob_frames + 0.1 * np.random.default_rng(1).normal(size=blob_frames.shape).astype(
        np.float32
    )
    res_a = train(
        noisy, blob_frames, NetSpec(**TINY_NET), TrainSpec(**TINY_TRAIN, seed=0), tmp_path / "a"
    )
    res_b = train(
        noisy, blob_frames, NetSpec(**TINY_NET), TrainSpec(**TINY_TRAIN, seed=1), tmp_path / "b"
    )
    assert Path(res_a.curve_path).read_bytes() != Path(res_b.curve_path).read_bytes()


def test_patch_must_match_pooling_depth(tmp_path, blob_frames):
    spec = NetSpec(levels=4, base_filters=4, mode="magnitude", shots=1)  # needs multiples of 8
    with pytest.raises(ConfigError, match="divisible"):
        train(
            blob_frames,
            blob_frames,
            spec,
            TrainSpec(epochs=1, patch=20, stride=8, scales=(1.0,), augment=False),
            tmp_path,
        )


def test_shot_count_must_match_data(tmp_path, blob_frames):
    spec = NetSpec(levels=2, base_filters=4, mode="magnitude", shots=3)
    with pytest.raises(ConfigError, match="shot"):
        train(blob_frames, blob_frames, spec, TrainSpec(**TINY_TRAIN), tmp_path)


def test_complex_mode_roundtrip_training(tmp_path):
    rng = np.random.default_rng(5)
    x = (rng.normal(size=(2, 2, 32, 32)) + 1j * rng.normal(size=(2, 2, 32, 32)))
    ref = x + 0.05 * (rng.normal(size=x.shape) + 1j * rng.normal(size=x.shape))
    spec = NetSpec(levels=2, base_filters=4, mode="complex", shots=2)
    res = train(
        x, ref, spec, TrainSpec(epochs=2, batch_size=16, patch=16, stride=16,
                                scales=(1.0,), augment=False, seed=0), tmp_path
    )
    _, ckpt = load_model(res.model_path)
    assert ckpt["layout"] == "complex-shots"
    assert ckpt["net"]["shots"] == 2
