# Test helpers
# ==============================================================================
import numpy as np

from core.calibration import CalibrationSet
from core.flow import FrameBuffer, MagnitudeField


def sinusoid_image(width=64, height=48, shift_x=0.0):
    """Smooth 2-D texture, optionally shifted right by ``shift_x`` pixels"""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs = xs - shift_x
    data = 0.5 + 0.2 * np.sin(2 * np.pi * xs / 16.0) * np.cos(2 * np.pi * ys / 20.0) \
        + 0.1 * np.sin(2 * np.pi * (xs + ys) / 23.0)
    return FrameBuffer(width, height, data)


def series_calibration_set(series, size=10):
    """CalibrationSet whose frame-level feature series equals ``series``"""
    series = np.asarray(series, dtype=np.float64)
    frames = [FrameBuffer(size, size, np.full((size, size), 0.5))] * (len(series) + 1)
    mags = [MagnitudeField(np.full((size, size), value, dtype=np.float32)) for value in series]
    foregrounds = [np.ones((size, size), dtype=bool)] * (len(series) + 1)
    return CalibrationSet(frames, mags, foregrounds)
