"""
Dense optical flow - pyramidal iterative Lucas-Kanade on grayscale frames,
flow magnitude fields and the binary flow file format
"""

import logging
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from config.config import (
    FLOW_LEVELS, FLOW_ITERATIONS, FLOW_WINDOW, FLOW_MIN_EIGENVALUE, FLOW_MAGIC
)
from core.exceptions import InvalidInputError, FormatError

logger = logging.getLogger(__name__)

_HEADER = struct.Struct('<4sII')

# ============================================================================
# FIELD TYPES
# ============================================================================

@dataclass(frozen=True)
class FrameBuffer:
    """One grayscale frame, row-major luminance in [0, 1]"""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.shape != (self.height, self.width):
            raise InvalidInputError(
                f"Frame data shape {data.shape} does not match {self.width}x{self.height}"
            )
        if not np.all(np.isfinite(data)) or data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
            raise InvalidInputError("Frame luminance must lie in [0, 1]")
        object.__setattr__(self, 'data', data)

    @classmethod
    def from_array(cls, array) -> 'FrameBuffer':
        """Build from a 2-D array; 8-bit input is rescaled to [0, 1]"""
        array = np.asarray(array)
        if array.ndim != 2:
            raise InvalidInputError(f"Expected a 2-D grayscale array, got shape {array.shape}")
        if array.dtype == np.uint8:
            array = array.astype(np.float32) / 255.0
        elif array.dtype == np.uint16:
            array = array.astype(np.float32) / 65535.0
        return cls(array.shape[1], array.shape[0], array)

    @property
    def shape(self):
        return (self.height, self.width)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (pixels/frame)"""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.float32)
        v = np.ascontiguousarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise InvalidInputError(f"Flow planes must share a 2-D shape, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise InvalidInputError("Flow field contains non-finite values")
        object.__setattr__(self, 'u', u)
        object.__setattr__(self, 'v', v)

    @property
    def width(self):
        return self.u.shape[1]

    @property
    def height(self):
        return self.u.shape[0]


@dataclass(frozen=True)
class MagnitudeField:
    """Per-pixel flow magnitude, the video feature"""

    mag: np.ndarray

    @property
    def width(self):
        return self.mag.shape[1]

    @property
    def height(self):
        return self.mag.shape[0]

    @classmethod
    def zeros(cls, height, width) -> 'MagnitudeField':
        return cls(np.zeros((height, width), dtype=np.float32))

# ============================================================================
# LUCAS-KANADE
# ============================================================================

def _build_pyramid(image, levels, window):
    pyramid = [image]
    for _ in range(levels - 1):
        h, w = pyramid[-1].shape
        if min(h, w) // 2 < window:
            break
        pyramid.append(cv2.pyrDown(pyramid[-1]))
    return pyramid


def _refine_level(I0, I1, u, v, iters, window):
    ksize = (window, window)
    Ix = cv2.Sobel(I0, cv2.CV_32F, 1, 0, ksize=3, scale=0.125)
    Iy = cv2.Sobel(I0, cv2.CV_32F, 0, 1, ksize=3, scale=0.125)

    Sxx = cv2.boxFilter(Ix * Ix, -1, ksize)
    Sxy = cv2.boxFilter(Ix * Iy, -1, ksize)
    Syy = cv2.boxFilter(Iy * Iy, -1, ksize)

    # smaller eigenvalue of the windowed structure tensor
    half_trace = 0.5 * (Sxx + Syy)
    spread = np.sqrt(0.25 * (Sxx - Syy) ** 2 + Sxy ** 2)
    valid = (half_trace - spread) >= FLOW_MIN_EIGENVALUE
    det = np.where(valid, Sxx * Syy - Sxy * Sxy, 1.0).astype(np.float32)

    h, w = I0.shape
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    for _ in range(iters):
        warped = cv2.remap(I1, xs + u, ys + v, cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_REPLICATE)
        It = warped - I0
        bx = -cv2.boxFilter(Ix * It, -1, ksize)
        by = -cv2.boxFilter(Iy * It, -1, ksize)
        du = (Syy * bx - Sxy * by) / det
        dv = (Sxx * by - Sxy * bx) / det
        u = np.where(valid, u + du, 0.0).astype(np.float32)
        v = np.where(valid, v + dv, 0.0).astype(np.float32)
    return u, v


def compute_flow(prev: FrameBuffer, nxt: FrameBuffer, levels: int = FLOW_LEVELS,
                 iters: int = FLOW_ITERATIONS, window: int = FLOW_WINDOW) -> FlowField:
    """
    Dense displacement from ``prev`` to ``nxt``

    Coarse-to-fine iterative local least squares over a window x window
    neighbourhood. Windows whose structure tensor has a smaller eigenvalue
    below FLOW_MIN_EIGENVALUE are aperture-degenerate and get zero flow.

    Args:
        prev (FrameBuffer): Frame n-1
        nxt (FrameBuffer): Frame n
        levels (int): Pyramid levels (>= 1)
        iters (int): Iterations per level
        window (int): Odd window side

    Returns:
        FlowField: Displacement attributed to frame n
    """
    if prev.shape != nxt.shape:
        raise InvalidInputError(f"Frame sizes differ: {prev.shape} vs {nxt.shape}")
    if levels < 1:
        raise InvalidInputError("Flow needs at least one pyramid level")

    pyr0 = _build_pyramid(prev.data, levels, window)
    pyr1 = _build_pyramid(nxt.data, levels, window)

    u = v = None
    for I0, I1 in zip(reversed(pyr0), reversed(pyr1)):
        h, w = I0.shape
        if u is None:
            u = np.zeros((h, w), dtype=np.float32)
            v = np.zeros((h, w), dtype=np.float32)
        else:
            u = cv2.resize(u, (w, h), interpolation=cv2.INTER_LINEAR) * 2.0
            v = cv2.resize(v, (w, h), interpolation=cv2.INTER_LINEAR) * 2.0
        u, v = _refine_level(I0, I1, u, v, iters, window)

    return FlowField(u, v)


def magnitude(field: FlowField) -> MagnitudeField:
    """Per-pixel sqrt(u^2 + v^2)"""
    return MagnitudeField(np.hypot(field.u, field.v).astype(np.float32))

# ============================================================================
# FLOW FILES
# ============================================================================

def write_flow(path, field: FlowField):
    """
    Write a flow field in the binary flow format

    Layout: magic "FSFL", width and height as little-endian uint32, then the
    u plane and the v plane as row-major little-endian float32.
    """
    path = Path(path)
    with open(path, 'wb') as f:
        f.write(_HEADER.pack(FLOW_MAGIC, field.width, field.height))
        f.write(field.u.astype('<f4').tobytes())
        f.write(field.v.astype('<f4').tobytes())


def load_flow(path) -> FlowField:
    """
    Read a flow field written by ``write_flow``

    Raises:
        FormatError: Bad magic, truncated file or payload/header mismatch,
            with the offending byte offset
    """
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        logger.error(f"Cannot read flow file {path}: {e}")
        raise FormatError(f"Cannot read flow file {path}: {e}")

    if len(payload) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(payload))
    magic, width, height = _HEADER.unpack_from(payload)
    if magic != FLOW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)

    plane = width * height * 4
    expected = _HEADER.size + 2 * plane
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes", offset=len(payload))
    if len(payload) > expected:
        raise FormatError(f"{path}: payload longer than {width}x{height} header", offset=expected)

    u = np.frombuffer(payload, dtype='<f4', count=width * height, offset=_HEADER.size)
    v = np.frombuffer(payload, dtype='<f4', count=width * height, offset=_HEADER.size + plane)
    try:
        return FlowField(u.reshape(height, width), v.reshape(height, width))
    except Exception as e:
        raise FormatError(f"{path}: {e}", offset=_HEADER.size)

# ============================================================================
# FLOW SOURCES
# ============================================================================

class FlowSource(ABC):
    """Supplies the flow field attributed to frame ``index``"""

    @abstractmethod
    def flow(self, index: int, prev: FrameBuffer, nxt: FrameBuffer) -> FlowField:
        ...


class InternalFlow(FlowSource):
    """Computes flow with the built-in pyramidal Lucas-Kanade solver"""

    def __init__(self, levels=FLOW_LEVELS, iters=FLOW_ITERATIONS, window=FLOW_WINDOW):
        self.levels = levels
        self.iters = iters
        self.window = window

    def flow(self, index, prev, nxt):
        return compute_flow(prev, nxt, self.levels, self.iters, self.window)


class ExternalFlowDirectory(FlowSource):
    """Reads ``flow_<index>.flo`` files produced by any external method"""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise InvalidInputError(f"Flow directory does not exist: {self.directory}")

    @staticmethod
    def filename(index: int) -> str:
        return f"flow_{index:06d}.flo"

    def flow(self, index, prev, nxt):
        field = load_flow(self.directory / self.filename(index))
        if (field.height, field.width) != prev.shape:
            raise InvalidInputError(
                f"External flow {index} is {field.width}x{field.height}, frames are "
                f"{prev.width}x{prev.height}"
            )
        return field


class RecordingFlow(FlowSource):
    """Wraps another source and writes every field it supplies as ``flow_<index>.flo``"""

    def __init__(self, source: FlowSource, directory):
        self.source = source
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def flow(self, index, prev, nxt):
        field = self.source.flow(index, prev, nxt)
        write_flow(self.directory / ExternalFlowDirectory.filename(index), field)
        return field
