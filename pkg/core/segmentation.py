"""
Foreground Segmentation - running-median background subtraction, block
binarization and forward occupancy
"""

import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import cv2
import numpy as np

from config.config import (
    BACKGROUND_STEP, DEVIATION_RATE, FOREGROUND_SIGMAS, MIN_DEVIATION_SCALE,
    STATIC_FLOW_THRESHOLD, UNRESOLVED_DEVIATION_SCALE, INPAINT_RADIUS
)
from core.exceptions import InvalidInputError
from core.flow import FrameBuffer, MagnitudeField
from core.utils import read_mask

logger = logging.getLogger(__name__)

# ============================================================================
# TYPES
# ============================================================================

@dataclass(frozen=True)
class BackgroundModel:
    """Per-pixel running median estimate and deviation scale"""

    width: int
    height: int
    median: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        for name in ('median', 'scale'):
            plane = np.asarray(getattr(self, name), dtype=np.float32)
            if plane.shape != (self.height, self.width):
                raise InvalidInputError(f"Background {name} shape {plane.shape} != {(self.height, self.width)}")
            object.__setattr__(self, name, plane)
        if np.any(self.scale <= 0):
            raise InvalidInputError("Deviation scale must be positive")

    def digest(self) -> str:
        """SHA-256 over the median and scale planes"""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.median, dtype='<f4').tobytes())
        h.update(np.ascontiguousarray(self.scale, dtype='<f4').tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class BlockMask:
    """N x N binary foreground pattern of one block"""

    n: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.shape != (self.n, self.n):
            raise InvalidInputError(f"Block mask must be {self.n}x{self.n}, got {bits.shape}")
        if np.any(bits > 1):
            raise InvalidInputError("Block mask entries must be 0 or 1")
        object.__setattr__(self, 'bits', bits)

# ============================================================================
# BACKGROUND MODEL
# ============================================================================

def _check_dims(model: BackgroundModel, frame: FrameBuffer):
    if (model.height, model.width) != frame.shape:
        raise InvalidInputError(
            f"Frame is {frame.width}x{frame.height}, background is {model.width}x{model.height}"
        )


def update_background(model: BackgroundModel, frame: FrameBuffer,
                      step: float = BACKGROUND_STEP,
                      rate: float = DEVIATION_RATE,
                      min_scale: float = MIN_DEVIATION_SCALE,
                      where: Optional[np.ndarray] = None) -> BackgroundModel:
    """
    One running-median update

    The median estimate moves one ``step`` toward the frame; the deviation
    scale is an exponential moving average of |frame - median| with factor
    ``rate``, floored at ``min_scale``.

    Args:
        model (BackgroundModel): Current model
        frame (FrameBuffer): New frame
        where (np.ndarray): Pixels to update (all when None)

    Returns:
        BackgroundModel: Updated copy
    """
    _check_dims(model, frame)
    residual = frame.data - model.median
    median = np.clip(model.median + step * np.sign(residual), 0.0, 1.0)
    scale = np.maximum((1.0 - rate) * model.scale + rate * np.abs(residual), min_scale)
    if where is not None:
        where = np.asarray(where, dtype=bool)
        if where.shape != frame.shape:
            raise InvalidInputError(f"Update mask shape {where.shape} != frame {frame.shape}")
        median = np.where(where, median, model.median)
        scale = np.where(where, scale, model.scale)
    return BackgroundModel(model.width, model.height, median, scale)


def static_masks(frames: Sequence[FrameBuffer],
                 magnitudes: Optional[Sequence[MagnitudeField]]) -> Optional[np.ndarray]:
    """
    Per-frame masks of pixels with flow magnitude below STATIC_FLOW_THRESHOLD

    ``magnitudes`` holds the len(frames) - 1 fields attributed to frames
    1..F-1; frame 0 borrows the field of frame 1. None without magnitudes.
    """
    if not magnitudes:
        return None
    if len(magnitudes) != len(frames) - 1:
        raise InvalidInputError(
            f"Expected {len(frames) - 1} magnitude fields, got {len(magnitudes)}"
        )
    mags = np.stack([magnitudes[0].mag] + [m.mag for m in magnitudes])
    return mags < STATIC_FLOW_THRESHOLD


def bootstrap_background(frames: Sequence[FrameBuffer],
                         magnitudes: Optional[Sequence[MagnitudeField]] = None,
                         unresolved_scale: float = UNRESOLVED_DEVIATION_SCALE) -> BackgroundModel:
    """
    Initial background from the calibration frames

    Per-pixel median and MAD of the samples that were static (see
    ``static_masks``). Pixels covered by moving objects in every frame are
    unresolved: their median is inpainted from the surrounding background
    and their scale set to ``unresolved_scale``.

    Returns:
        BackgroundModel: Median and MAD-based deviation scale
    """
    if not frames:
        raise InvalidInputError("Background bootstrap needs at least one frame")
    stack = np.stack([f.data for f in frames]).astype(np.float32)
    static = static_masks(frames, magnitudes)
    if static is None:
        static = np.ones(stack.shape, dtype=bool)
    resolved = static.any(axis=0)

    # unresolved pixels use every sample, so no column is all-NaN
    samples = np.where(static | ~resolved, stack, np.nan)
    median = np.nanmedian(samples, axis=0).astype(np.float32)
    scale = np.maximum(1.4826 * np.nanmedian(np.abs(samples - median), axis=0), MIN_DEVIATION_SCALE)

    if resolved.any() and not resolved.all():
        holes = (~resolved).astype(np.uint8)
        median = np.clip(cv2.inpaint(median, holes, INPAINT_RADIUS, cv2.INPAINT_TELEA), 0.0, 1.0)
        scale = np.where(resolved, scale, max(unresolved_scale, MIN_DEVIATION_SCALE))
        logger.info(f"Background inpainted at {int(holes.sum())} pixels never static during calibration")

    first = frames[0]
    return BackgroundModel(first.width, first.height, median, scale)


def foreground_mask(frame: FrameBuffer, model: BackgroundModel,
                    sigmas: float = FOREGROUND_SIGMAS) -> np.ndarray:
    """Boolean H x W mask: |frame - median| > sigmas * scale"""
    _check_dims(model, frame)
    return np.abs(frame.data - model.median) > sigmas * model.scale

# ============================================================================
# BLOCKS AND OCCUPANCY
# ============================================================================

def grid_shape(height: int, width: int, n: int) -> Tuple[int, int]:
    """Rows and columns of complete n x n blocks; trailing pixels are ignored"""
    return height // n, width // n


def block_view(plane: np.ndarray, n: int) -> np.ndarray:
    """(rows, n, cols, n) view of the complete blocks of a 2-D plane"""
    rows, cols = grid_shape(plane.shape[0], plane.shape[1], n)
    return plane[:rows * n, :cols * n].reshape(rows, n, cols, n)


def binarize_block(frame: FrameBuffer, model: BackgroundModel,
                   block_origin: Tuple[int, int], n: int,
                   sigmas: float = FOREGROUND_SIGMAS) -> BlockMask:
    """
    Foreground bits of one block

    Args:
        frame (FrameBuffer): Current frame
        model (BackgroundModel): Background model
        block_origin (tuple): (row, col) of the block's top-left pixel
        n (int): Block side
        sigmas (float): Deviation multiple, as in foreground_mask

    Returns:
        BlockMask: 1 where |frame - median| > sigmas * scale
    """
    _check_dims(model, frame)
    row, col = block_origin
    if row < 0 or col < 0 or row + n > frame.height or col + n > frame.width:
        raise InvalidInputError(f"Block at {block_origin} of side {n} leaves the frame")
    window = (slice(row, row + n), slice(col, col + n))
    residual = np.abs(frame.data[window] - model.median[window])
    return BlockMask(n, residual > sigmas * model.scale[window])


def occupancy(mask: BlockMask) -> float:
    """Forward occupancy (1 / N^2) * sum of foreground bits"""
    return float(mask.bits.sum()) / float(mask.n * mask.n)


def occupancy_grid(fg: np.ndarray, n: int) -> np.ndarray:
    """Occupancy of every complete block of a foreground mask"""
    counts = block_view(np.asarray(fg, dtype=np.float32), n).sum(axis=(1, 3))
    return counts / float(n * n)

# ============================================================================
# SEGMENTERS
# ============================================================================

class Segmenter(ABC):
    """Produces per-frame foreground masks"""

    def calibrate(self, frames: Sequence[FrameBuffer],
                  magnitudes: Sequence[MagnitudeField]):
        """Learn from the calibration frames; the model is frozen afterwards"""

    @abstractmethod
    def foreground(self, index: int, frame: FrameBuffer) -> np.ndarray:
        ...

    def digest(self) -> str:
        return ''


class BackgroundSubtractor(Segmenter):
    """Running-median background subtraction, frozen after calibration"""

    def __init__(self, step: float = BACKGROUND_STEP, rate: float = DEVIATION_RATE,
                 sigmas: float = FOREGROUND_SIGMAS, min_scale: float = MIN_DEVIATION_SCALE):
        self.step = step
        self.rate = rate
        self.sigmas = sigmas
        self.min_scale = min_scale
        self.model = None

    def calibrate(self, frames, magnitudes):
        model = bootstrap_background(frames, magnitudes)
        static = static_masks(frames, magnitudes)
        for k, frame in enumerate(frames):
            where = None if static is None else static[k]
            model = update_background(model, frame, self.step, self.rate, self.min_scale, where)
        self.model = model
        logger.info(f"Background model learned from {len(frames)} frames")

    def foreground(self, index, frame):
        if self.model is None:
            raise InvalidInputError("Background model used before calibration")
        return foreground_mask(frame, self.model, self.sigmas)

    def digest(self):
        return self.model.digest() if self.model is not None else ''


class MaskDirectorySegmenter(Segmenter):
    """Reads precomputed ``mask_<index>.pgm`` files (0 / 255)"""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise InvalidInputError(f"Mask directory does not exist: {self.directory}")

    @staticmethod
    def filename(index: int) -> str:
        return f"mask_{index:06d}.pgm"

    def foreground(self, index, frame):
        mask = read_mask(self.directory / self.filename(index))
        if mask.shape != frame.shape:
            raise InvalidInputError(
                f"Mask {index} is {mask.shape[1]}x{mask.shape[0]}, frame is {frame.width}x{frame.height}"
            )
        return mask

    def digest(self):
        return f"masks:{self.directory.name}"
