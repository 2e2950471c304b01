# Shared fixtures
# ==============================================================================
import pytest

from core.arima_core import ArimaModel, Order
from core.synth import gen_arima_series
from core.utils import write_frame
from tests.helpers import sinusoid_image


@pytest.fixture
def ar1_model():
    return ArimaModel(Order(1, 0, 0), ar=[0.6], intercept=0.0, noise_variance=1.0)


@pytest.fixture
def ar1_series(ar1_model):
    return gen_arima_series(ar1_model, 500, seed=42)


@pytest.fixture
def static_frames_dir(tmp_path):
    """Twelve identical textured frames: no motion anywhere"""
    frame = sinusoid_image(60, 40)
    directory = tmp_path / "static"
    directory.mkdir()
    for k in range(12):
        write_frame(directory / f"frame_{k:06d}.pgm", frame)
    return directory
