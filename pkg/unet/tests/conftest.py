"""Shared fixtures; the whole directory skips when torch is unavailable."""

import numpy as np
import pytest

pytest.importorskip("torch")
pytest.importorskip("unet_denoiser")

from synthdata import smooth_blobs  # noqa: E402


@pytest.fixture(scope="session")
def blob_frames():
    """(3, 1, 48, 48) magnitude frames shared by the cheap training tests."""
    return np.stack([smooth_blobs(48, 10 + i)[None] for i in range(3)]).astype(np.float32)
