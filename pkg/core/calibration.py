"""
Calibration - initial model and feature gate from the first F frames, and
block-wise model refinement during detection
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from config.config import (
    P_MAX, D_MAX, Q_MAX, CALIBRATION_FRAMES, REFINE_WINDOW, MIN_CALIBRATION_MOTION,
    RECORD_PRECISION
)
from core.arima_core import (
    ArimaModel, Order, search_orders, select_order
)
from core.exceptions import (
    DegenerateCalibrationError, FormatError, InsufficientHistoryError, InvalidInputError
)
from core.flow import FlowSource, FrameBuffer, MagnitudeField, magnitude

if TYPE_CHECKING:
    from core.detector import BlockRecord
    from core.segmentation import Segmenter

logger = logging.getLogger(__name__)

# ============================================================================
# CALIBRATION SET
# ============================================================================

@dataclass
class CalibrationSet:
    """
    The F non-anomalous calibration frames with their derived fields

    ``magnitudes[k]`` is the flow magnitude attributed to ``frames[k + 1]``;
    ``foregrounds[k]`` is the foreground mask of ``frames[k]``.
    """

    frames: List[FrameBuffer]
    magnitudes: List[MagnitudeField]
    foregrounds: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) < 3:
            raise InvalidInputError(f"Calibration needs at least 3 frames, got {len(self.frames)}")
        if len(self.magnitudes) != len(self.frames) - 1:
            raise InvalidInputError(
                f"Calibration needs {len(self.frames) - 1} flow fields, got {len(self.magnitudes)}"
            )
        if self.foregrounds and len(self.foregrounds) != len(self.frames):
            raise InvalidInputError("One foreground mask per calibration frame is required")

    @property
    def size(self) -> int:
        return len(self.frames)

    @property
    def features(self) -> np.ndarray:
        """
        Frame-level feature series, one value per flow field: mean flow
        magnitude over the frame's foreground pixels (0 without foreground)
        """
        values = []
        for k, mag in enumerate(self.magnitudes, start=1):
            fg = self.foregrounds[k] if self.foregrounds else np.ones(mag.mag.shape, dtype=bool)
            count = int(np.count_nonzero(fg))
            values.append(float(mag.mag[fg].mean()) if count else 0.0)
        series = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(series)):
            raise InvalidInputError("Calibration features must be finite")
        return series


def build_calibration_set(frames: Sequence[FrameBuffer], flow_source: FlowSource,
                          segmenter: 'Segmenter',
                          magnitudes: Optional[Sequence[MagnitudeField]] = None) -> CalibrationSet:
    """
    Derive flow magnitudes and foreground masks for the calibration frames

    The segmenter is calibrated on these frames and frozen afterwards.

    Args:
        frames: The first F frames
        flow_source (FlowSource): Internal solver or external directory
        segmenter (Segmenter): Foreground segmenter to calibrate
        magnitudes: Precomputed magnitudes, skips the flow computation

    Returns:
        CalibrationSet: Frames, magnitudes and foreground masks
    """
    frames = list(frames)
    if magnitudes is None:
        magnitudes = [magnitude(flow_source.flow(k, frames[k - 1], frames[k]))
                      for k in range(1, len(frames))]
    magnitudes = list(magnitudes)
    segmenter.calibrate(frames, magnitudes)
    foregrounds = [segmenter.foreground(k, frame) for k, frame in enumerate(frames)]
    return CalibrationSet(frames, magnitudes, foregrounds)

# ============================================================================
# CALIBRATION
# ============================================================================

def calibrate(calibration: CalibrationSet, p_max: int = P_MAX, d_max: int = D_MAX,
              q_max: int = Q_MAX) -> Tuple[ArimaModel, float]:
    """
    Select the initial model by AIC and derive the feature gate

    Args:
        calibration (CalibrationSet): Non-anomalous calibration frames
        p_max, d_max, q_max (int): Inclusive order bounds

    Returns:
        tuple: (ArimaModel, lambda_f) where lambda_f is the mean of every
            per-pixel flow magnitude over the F - 1 flow fields

    Raises:
        DegenerateCalibrationError: No foreground motion in any calibration frame
    """
    features = calibration.features
    if float(features.max(initial=0.0)) <= MIN_CALIBRATION_MOTION:
        raise DegenerateCalibrationError(
            f"No foreground motion in the {calibration.size} calibration frames"
        )

    lambda_f = float(np.mean(np.stack([m.mag for m in calibration.magnitudes]), dtype=np.float64))
    order, model = select_order(features, p_max, d_max, q_max, window=calibration.size)
    logger.info(f"Calibrated order {order} on {len(features)} samples, lambda_f={lambda_f:.6f}")
    logger.debug(f"Calibration features: {np.array2string(features, precision=4)}")
    return model, lambda_f

# ============================================================================
# BLOCK-WISE REFINEMENT
# ============================================================================

def refinement_grid(order: Order, p_max: int = P_MAX, d_max: int = D_MAX, q_max: int = Q_MAX,
                    window: int = CALIBRATION_FRAMES) -> List[Order]:
    """Orders within +-1 of ``order`` in each component, clipped to the bounds and window"""
    grid = []
    for d in range(max(order.d - 1, 0), min(order.d + 1, d_max) + 1):
        for p in range(max(order.p - 1, 0), min(order.p + 1, p_max) + 1):
            for q in range(max(order.q - 1, 0), min(order.q + 1, q_max) + 1):
                candidate = Order(p, d, q)
                if candidate.fits_window(window):
                    grid.append(candidate)
    if order not in grid:
        grid.append(order)
    return grid


def refine_block(theta_init: ArimaModel, rec: 'BlockRecord', p_max: int = P_MAX,
                 d_max: int = D_MAX, q_max: int = Q_MAX, window: int = CALIBRATION_FRAMES,
                 history_window: int = REFINE_WINDOW) -> ArimaModel:
    """
    Re-fit a block model on the block's own non-anomalous history

    The order search covers the grid around theta_init's order; theta_init
    and the block's current model compete as fitted candidates, so the
    result never has a larger AIC on the history than either.

    Args:
        theta_init (ArimaModel): Calibrated model, centre of the order grid
        rec (BlockRecord): Block whose ``feature_history`` is refitted
        window (int): Calibration length F bounding the orders
        history_window (int): Most recent samples used

    Returns:
        ArimaModel: Refined model, or theta_init when history is too short
    """
    history = np.asarray(rec.feature_history, dtype=np.float64)[-history_window:]
    order = theta_init.order
    if len(history) < order.p + order.d + order.q + 2:
        return theta_init

    references = [theta_init]
    if rec.model is not None and rec.model != theta_init:
        references.append(rec.model)

    try:
        return search_orders(history, refinement_grid(order, p_max, d_max, q_max, window),
                             extra_models=references)
    except InsufficientHistoryError as e:
        logger.debug(f"Block {rec.index} keeps its model: {e}")
        return theta_init

# ============================================================================
# CALIBRATION ARTIFACT
# ============================================================================

@dataclass(frozen=True)
class CalibrationArtifact:
    """
    Reusable calibration result: frame geometry, model, feature gate,
    background digest and the calibration feature series
    """

    width: int
    height: int
    block_size: int
    f_frames: int
    model: ArimaModel
    lambda_f: float
    background_digest: str = ''
    features: Tuple[float, ...] = ()

    def to_text(self) -> str:
        fmt = f".{RECORD_PRECISION}g"
        header = [
            "# calibration artifact",
            f"width = {self.width}",
            f"height = {self.height}",
            f"block_size = {self.block_size}",
            f"f_frames = {self.f_frames}",
            f"lambda_f = {format(self.lambda_f, fmt)}",
            f"background_digest = {self.background_digest}",
            "features = " + ",".join(format(v, fmt) for v in self.features),
        ]
        return '\n'.join(header) + '\n' + self.model.to_record()

    def save(self, path):
        path = Path(path)
        try:
            path.write_text(self.to_text(), encoding='utf-8')
        except OSError as e:
            logger.error(f"Cannot write calibration artifact {path}: {e}")
            raise
        logger.info(f"Calibration artifact written to {path}")

    @classmethod
    def load(cls, path) -> 'CalibrationArtifact':
        """
        Read an artifact written by ``save``

        Raises:
            FormatError: Unreadable file, missing key or malformed value
        """
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as e:
            logger.error(f"Cannot read calibration artifact {path}: {e}")
            raise FormatError(f"Cannot read calibration artifact {path}: {e}")

        fields = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise FormatError(f"{path}: expected 'key = value'", line=line_no)
            key, value = (part.strip() for part in line.split('=', 1))
            fields[key] = value

        try:
            return cls(
                width=int(fields['width']),
                height=int(fields['height']),
                block_size=int(fields['block_size']),
                f_frames=int(fields['f_frames']),
                model=ArimaModel.from_record(fields),
                lambda_f=float(fields['lambda_f']),
                background_digest=fields.get('background_digest', ''),
                features=_parse_features(fields.get('features', '')),
            )
        except KeyError as e:
            raise FormatError(f"{path}: missing key {e}")
        except ValueError as e:
            raise FormatError(f"{path}: malformed value: {e}")


def _parse_features(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(',') if v.strip())
