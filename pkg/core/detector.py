"""
Anomaly Detection Engine - streaming block-grid detector

Each frame is split into N x N blocks. Active blocks feed a per-block
feature series that is differenced d times and predicted one step ahead by
an ARMA model. Every block history starts from the calibration feature
series; a block whose prediction error exceeds lambda_A times the calibrated
feature level (scaled by LAMBDA_A_SCALE) is anomalous when at least one of
its 8 neighbours agrees.
"""

import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import ndimage

from config.config import (
    BLOCK_SIZE, CALIBRATION_FRAMES, LAMBDA_A, LAMBDA_A_SCALE, P_MAX, D_MAX, Q_MAX,
    REFINE_CADENCE, REFINE_WINDOW, DETECTOR_THREADS, get_detector_config
)
from core.arima_core import ArimaModel, difference, forecast_one_step, residuals
from core.calibration import (
    CalibrationArtifact, build_calibration_set, calibrate, refine_block
)
from core.exceptions import (
    InsufficientHistoryError, InvalidInputError, NotActiveError
)
from core.flow import FlowSource, FrameBuffer, InternalFlow, MagnitudeField, magnitude
from core.segmentation import (
    BackgroundSubtractor, BlockMask, Segmenter, block_view, grid_shape, occupancy_grid
)

logger = logging.getLogger(__name__)

_NEIGHBOURS = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=np.int32)

# ============================================================================
# CONFIGURATION
# ============================================================================

_SETTING_ALIASES = {'block_size': 'n', 'frames_calib': 'f_frames'}


@dataclass
class DetectorConfig:
    """Detector parameters; lambda_f None means 'take it from calibration'"""

    n: int = BLOCK_SIZE
    f_frames: int = CALIBRATION_FRAMES
    lambda_f: Optional[float] = None
    lambda_a: float = LAMBDA_A
    lambda_a_scale: float = LAMBDA_A_SCALE
    p_max: int = P_MAX
    d_max: int = D_MAX
    q_max: int = Q_MAX
    refine_cadence: int = REFINE_CADENCE
    refine_window: int = REFINE_WINDOW
    threads: int = DETECTOR_THREADS

    def __post_init__(self):
        if self.n < 2:
            raise InvalidInputError(f"Block size must be >= 2, got {self.n}")
        if self.f_frames < 3:
            raise InvalidInputError(f"Calibration length must be >= 3, got {self.f_frames}")
        if not self.lambda_a > 0:
            raise InvalidInputError(f"lambda_a must be positive, got {self.lambda_a}")
        if not self.lambda_a_scale > 0:
            raise InvalidInputError(f"lambda_a_scale must be positive, got {self.lambda_a_scale}")
        if self.lambda_f is not None and self.lambda_f < 0:
            raise InvalidInputError(f"lambda_f must be >= 0, got {self.lambda_f}")
        if min(self.p_max, self.d_max, self.q_max) < 0:
            raise InvalidInputError("Order bounds must be non-negative")
        if self.refine_cadence < 1 or self.refine_window < 2:
            raise InvalidInputError("Refinement cadence must be >= 1 and window >= 2")
        if self.threads < 1:
            raise InvalidInputError("threads must be >= 1")

    @classmethod
    def from_layers(cls, file_settings: Optional[dict] = None,
                    overrides: Optional[dict] = None) -> 'DetectorConfig':
        """
        Merge module defaults, a parsed config file and CLI overrides

        Later layers win; None values in ``overrides`` are ignored.
        """
        settings = get_detector_config()
        for layer in (file_settings or {}, overrides or {}):
            for key, value in layer.items():
                key = _SETTING_ALIASES.get(key, key)
                if key in settings and value is not None:
                    settings[key] = value
        return cls(**settings)

# ============================================================================
# BLOCK STATE
# ============================================================================

@dataclass
class BlockRecord:
    """
    Per-block detector state

    ``feature_history`` only ever receives samples from frames where the
    block was active and judged non-anomalous.
    """

    index: Tuple[int, int]
    model: ArimaModel
    history_limit: int = REFINE_WINDOW
    feature_history: deque = None
    innovation_history: deque = None
    last_anomalous: bool = False
    accepted_since_refit: int = 0

    def __post_init__(self):
        self.feature_history = deque(self.feature_history or (), maxlen=self.history_limit)
        self.innovation_history = deque(self.innovation_history or (), maxlen=self.history_limit)

    def reset_innovations(self):
        """Recompute innovations as the model's residuals on the current history"""
        order = self.model.order
        self.innovation_history.clear()
        if len(self.feature_history) <= order.p + order.d:
            return
        s = difference(np.asarray(self.feature_history), order.d)
        self.innovation_history.extend(residuals(self.model, s).tolist())


class BlockDecision(NamedTuple):
    decision: bool
    score: float
    s_new: float


@dataclass
class AnomalyMap:
    """Decisions for one frame on the block grid"""

    frame_index: int
    anomalous: np.ndarray
    scores: np.ndarray
    active: np.ndarray
    decided: Optional[np.ndarray] = None
    foreground: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.anomalous & ~self.active):
            raise InvalidInputError("Anomalous blocks must be active")
        if np.any(self.scores < 0):
            raise InvalidInputError("Block scores must be >= 0")

    @property
    def frame_score(self) -> float:
        return float(self.scores.max(initial=0.0))

    @property
    def active_blocks(self) -> int:
        return int(np.count_nonzero(self.active))

    @property
    def anomalous_blocks(self) -> int:
        return int(np.count_nonzero(self.anomalous))

    def pixel_mask(self, n: int, height: int, width: int,
                   foreground_only: bool = False) -> np.ndarray:
        """Block decisions upsampled to pixels; trailing pixels stay clear"""
        mask = upsample_blocks(self.anomalous, n, height, width)
        if foreground_only and self.foreground is not None:
            mask &= self.foreground.astype(bool)
        return mask


def upsample_blocks(grid: np.ndarray, n: int, height: int, width: int) -> np.ndarray:
    """Fill every pixel of a block with the block's value"""
    mask = np.zeros((height, width), dtype=bool)
    rows, cols = grid.shape
    mask[:rows * n, :cols * n] = np.repeat(np.repeat(grid.astype(bool), n, axis=0), n, axis=1)
    return mask

# ============================================================================
# FEATURES AND ACTIVITY
# ============================================================================

def block_feature(mag: MagnitudeField, mask: BlockMask, block_origin: Tuple[int, int]) -> float:
    """
    Mean flow magnitude over the foreground pixels of one block

    Args:
        mag (MagnitudeField): Magnitude field of the frame
        mask (BlockMask): Foreground bits of the block
        block_origin (tuple): (row, col) of the block's top-left pixel

    Raises:
        NotActiveError: The block has no foreground pixel
    """
    row, col = block_origin
    n = mask.n
    if row < 0 or col < 0 or row + n > mag.height or col + n > mag.width:
        raise InvalidInputError(f"Block at {block_origin} of side {n} leaves the field")
    bits = mask.bits.astype(bool)
    if not bits.any():
        raise NotActiveError(f"Block at {block_origin} has no foreground pixel")
    return float(mag.mag[row:row + n, col:col + n][bits].mean(dtype=np.float64))


def block_features(mag: MagnitudeField, fg: np.ndarray, n: int) -> np.ndarray:
    """Grid of block_feature values; NaN where a block has no foreground"""
    fg_blocks = block_view(np.asarray(fg, dtype=np.float64), n)
    mag_blocks = block_view(mag.mag.astype(np.float64), n)
    counts = fg_blocks.sum(axis=(1, 3))
    sums = (mag_blocks * fg_blocks).sum(axis=(1, 3))
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(counts > 0, sums / counts, np.nan)


def block_max(mag: MagnitudeField, n: int) -> np.ndarray:
    return block_view(mag.mag, n).max(axis=(1, 3))


def active_grid(occ_prev: np.ndarray, occ_cur: np.ndarray, occ_next: np.ndarray,
                mag: MagnitudeField, lambda_f: float, n: int = BLOCK_SIZE) -> np.ndarray:
    """Boolean grid form of select_active"""
    occ_prev, occ_cur, occ_next = (np.asarray(o) for o in (occ_prev, occ_cur, occ_next))
    if not (occ_prev.shape == occ_cur.shape == occ_next.shape):
        raise InvalidInputError(
            f"Occupancy grids differ: {occ_prev.shape}, {occ_cur.shape}, {occ_next.shape}"
        )
    if grid_shape(mag.height, mag.width, n) != occ_cur.shape:
        raise InvalidInputError(
            f"Magnitude field {mag.width}x{mag.height} does not tile into {occ_cur.shape} blocks of {n}"
        )
    temporal = (occ_prev != 0) | (occ_next != 0)
    return (occ_cur != 0) & temporal & (block_max(mag, n) > lambda_f)


def select_active(occ_prev, occ_cur, occ_next, mag: MagnitudeField, lambda_f: float,
                  n: int = BLOCK_SIZE) -> Set[Tuple[int, int]]:
    """
    Active blocks of the current frame

    A block is active when it holds foreground now, held foreground in the
    previous or next frame, and its largest flow magnitude exceeds lambda_f.

    Returns:
        set: (row, col) block indices
    """
    grid = active_grid(occ_prev, occ_cur, occ_next, mag, lambda_f, n)
    return {(int(r), int(c)) for r, c in np.argwhere(grid)}

# ============================================================================
# DECISIONS
# ============================================================================

def detect_block(rec: BlockRecord, f_new: float, lambda_a: float) -> Optional[BlockDecision]:
    """
    Difference, predict and threshold one block sample

    While fewer than p + d non-anomalous samples exist the sample is
    appended and None is returned (warm-up). Otherwise the new sample is
    appended to the history only when judged non-anomalous.

    Args:
        rec (BlockRecord): Block state, updated in place
        f_new (float): Feature of the current frame
        lambda_a (float): Threshold on |s - s_hat|

    Returns:
        BlockDecision | None: (decision, score, s_new), None during warm-up
    """
    order = rec.model.order
    lag = order.p + order.d
    if len(rec.feature_history) < lag:
        rec.feature_history.append(float(f_new))
        return None

    recent = list(rec.feature_history)[len(rec.feature_history) - lag:]
    s = difference(np.asarray(recent + [float(f_new)]), order.d)
    s_new = float(s[-1])

    e_hist = list(rec.innovation_history)[-order.q:] if order.q else []
    e_hist = [0.0] * (order.q - len(e_hist)) + e_hist
    s_hat = forecast_one_step(rec.model, s[:-1], e_hist)

    score = abs(s_new - s_hat)
    decision = score > lambda_a
    if not decision:
        rec.feature_history.append(float(f_new))
        rec.innovation_history.append(s_new - s_hat)
        rec.accepted_since_refit += 1
    rec.last_anomalous = decision
    return BlockDecision(decision, score, s_new)


def spatial_consistency(raw: np.ndarray) -> np.ndarray:
    """Keep an anomalous block only if one of its 8 neighbours is anomalous too"""
    raw = np.asarray(raw, dtype=bool)
    if raw.ndim != 2:
        raise InvalidInputError(f"Expected a 2-D block grid, got shape {raw.shape}")
    support = ndimage.convolve(raw.astype(np.int32), _NEIGHBOURS, mode='constant', cval=0)
    return raw & (support > 0)

# ============================================================================
# DECISION STAGE
# ============================================================================

class DecisionStage:
    """
    Per-block prediction, thresholding, spatial consistency and refinement

    Consumes the block features of one frame at a time, so it can be driven
    by the live engine or replayed from recorded features. Every block
    history starts from ``prior``, the calibration feature series, and the
    residual threshold is expressed relative to its mean level.
    """

    def __init__(self, config: DetectorConfig, theta_init: ArimaModel, shape: Tuple[int, int],
                 prior: Sequence[float] = ()):
        self.config = config
        self.theta_init = theta_init
        self.shape = shape
        self.prior = tuple(float(v) for v in prior)
        if not all(np.isfinite(self.prior)):
            raise InvalidInputError("Prior feature series must be finite")
        self.level = float(np.mean(self.prior)) if self.prior else 0.0

        limit = max(config.refine_window,
                    config.p_max + config.d_max + config.q_max + 2,
                    theta_init.order.total + 2)
        template = BlockRecord((-1, -1), theta_init, history_limit=limit,
                               feature_history=list(self.prior))
        template.reset_innovations()
        self.records: Dict[Tuple[int, int], BlockRecord] = {
            (r, c): BlockRecord((r, c), theta_init, history_limit=limit,
                                feature_history=list(template.feature_history),
                                innovation_history=list(template.innovation_history))
            for r in range(shape[0]) for c in range(shape[1])
        }
        self.refinements = 0

    def threshold(self, lambda_a: Optional[float] = None) -> float:
        """
        Residual threshold in feature units for ``lambda_a``

        Returns:
            float: lambda_a * lambda_a_scale * level, or lambda_a itself when
                there is no prior or its level is zero
        """
        lambda_a = self.config.lambda_a if lambda_a is None else lambda_a
        if self.level > 0:
            return lambda_a * self.config.lambda_a_scale * self.level
        return lambda_a

    def step(self, frame_index: int, active: np.ndarray, features: np.ndarray,
             lambda_a: Optional[float] = None,
             foreground: Optional[np.ndarray] = None) -> AnomalyMap:
        """
        Decide every active block of one frame

        Args:
            frame_index (int): Index of the frame being decided
            active (np.ndarray): Boolean activity grid
            features (np.ndarray): Block features (finite on active blocks)
            lambda_a (float): Threshold override, defaults to the config value

        Returns:
            AnomalyMap: Spatially consistent decisions and raw scores
        """
        if active.shape != self.shape or features.shape != self.shape:
            raise InvalidInputError(f"Block grid {active.shape} != {self.shape}")
        tau = self.threshold(lambda_a)

        raw = np.zeros(self.shape, dtype=bool)
        decided = np.zeros(self.shape, dtype=bool)
        scores = np.zeros(self.shape, dtype=np.float64)
        due = []
        for r, c in np.argwhere(active):
            rec = self.records[(int(r), int(c))]
            result = detect_block(rec, features[r, c], tau)
            if result is not None:
                raw[r, c] = result.decision
                decided[r, c] = True
                scores[r, c] = result.score
            if rec.accepted_since_refit >= self.config.refine_cadence:
                due.append(rec)

        if due:
            self._refine(due)

        anomalous = spatial_consistency(raw)
        logger.debug(
            f"Frame {frame_index}: {int(active.sum())} active, {int(raw.sum())} raw, "
            f"{int(anomalous.sum())} anomalous blocks"
        )
        return AnomalyMap(frame_index, anomalous, scores, active.astype(bool), decided, foreground)

    def _refine_one(self, rec: BlockRecord) -> ArimaModel:
        cfg = self.config
        return refine_block(self.theta_init, rec, cfg.p_max, cfg.d_max, cfg.q_max,
                            cfg.f_frames, cfg.refine_window)

    def _refine(self, due: List[BlockRecord]):
        if self.config.threads > 1 and len(due) > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as executor:
                models = list(executor.map(self._refine_one, due))
        else:
            models = [self._refine_one(rec) for rec in due]

        for rec, model in zip(due, models):
            rec.model = model
            rec.accepted_since_refit = 0
            rec.reset_innovations()
        self.refinements += len(due)


def replay_decisions(records: dict, config: DetectorConfig, theta_init: ArimaModel,
                     lambda_a: Optional[float] = None) -> List[AnomalyMap]:
    """
    Re-run the decision stage on recorded block features

    Args:
        records (dict): Arrays as returned by AnomalyDetectionEngine.block_records
        config (DetectorConfig): Detector configuration
        theta_init (ArimaModel): Calibrated model
        lambda_a (float): Threshold for this replay

    Returns:
        list: AnomalyMap per recorded frame, in frame order
    """
    active = np.asarray(records['active'], dtype=bool)
    features = np.asarray(records['features'], dtype=np.float64)
    indices = np.asarray(records['frame_index'], dtype=np.int64)
    if active.ndim != 3:
        raise InvalidInputError(f"Recorded activity must be 3-D, got shape {active.shape}")

    prior = np.asarray(records.get('prior', ()), dtype=np.float64).ravel()
    stage = DecisionStage(config, theta_init, active.shape[1:], prior)
    return [stage.step(int(indices[k]), active[k], features[k], lambda_a)
            for k in range(len(indices))]

# ============================================================================
# STREAMING ENGINE
# ============================================================================

@dataclass
class _PendingFrame:
    index: int
    mag: MagnitudeField
    fg: np.ndarray
    occ: np.ndarray
    occ_prev: np.ndarray
    calibration: bool = False


class AnomalyDetectionEngine:
    """
    Streaming detector with one frame of lookahead

    The first F frames calibrate the background, the model and lambda_f;
    their feature series becomes the prior history of every block. Maps
    start at frame F, and the map for frame n is returned by the call that
    receives frame n + 1.
    """

    def __init__(self, config: Optional[DetectorConfig] = None,
                 flow_source: Optional[FlowSource] = None,
                 segmenter: Optional[Segmenter] = None,
                 artifact: Optional[CalibrationArtifact] = None):
        self.config = config or DetectorConfig()
        self.flow_source = flow_source or InternalFlow()
        self.segmenter = segmenter or BackgroundSubtractor()
        self.artifact = artifact

        self.theta_init: Optional[ArimaModel] = None
        self.lambda_f: Optional[float] = None
        self.stage: Optional[DecisionStage] = None
        self.shape: Optional[Tuple[int, int]] = None
        self.frame_count = 0
        self.elapsed = 0.0

        self._prev_frame: Optional[FrameBuffer] = None
        self._calib_frames: List[FrameBuffer] = []
        self._calib_mags: List[MagnitudeField] = []
        self._pending: Optional[_PendingFrame] = None
        self._records: List[tuple] = []

        if artifact is not None and artifact.block_size != self.config.n:
            raise InvalidInputError(
                f"Artifact block size {artifact.block_size} != configured {self.config.n}"
            )

    @property
    def calibrated(self) -> bool:
        return self.stage is not None

    @property
    def grid(self) -> Tuple[int, int]:
        return grid_shape(self.shape[0], self.shape[1], self.config.n)

    def _check_frame(self, frame: FrameBuffer):
        if self.shape is None:
            if self.artifact is not None and (self.artifact.height, self.artifact.width) != frame.shape:
                raise InvalidInputError(
                    f"Frame is {frame.width}x{frame.height}, calibration artifact is "
                    f"{self.artifact.width}x{self.artifact.height}"
                )
            if min(grid_shape(frame.height, frame.width, self.config.n)) < 1:
                raise InvalidInputError(f"Frame {frame.width}x{frame.height} is smaller than one block")
            self.shape = frame.shape
        elif frame.shape != self.shape:
            raise InvalidInputError(
                f"Frame {self.frame_count} is {frame.width}x{frame.height}, stream is "
                f"{self.shape[1]}x{self.shape[0]}"
            )

    def process_frame(self, frame: FrameBuffer) -> Optional[AnomalyMap]:
        """
        Consume the next frame

        Returns:
            AnomalyMap | None: Map of the previous frame, None during calibration
                and for the first frame after it
        """
        start = time.perf_counter()
        self._check_frame(frame)
        index = self.frame_count
        mag = None
        if self._prev_frame is not None:
            mag = magnitude(self.flow_source.flow(index, self._prev_frame, frame))
        self._prev_frame = frame
        self.frame_count += 1

        if not self.calibrated:
            self._calib_frames.append(frame)
            if mag is not None:
                self._calib_mags.append(mag)
            if len(self._calib_frames) == self.config.f_frames:
                self._complete_calibration()
            self.elapsed += time.perf_counter() - start
            return None

        fg = self.segmenter.foreground(index, frame)
        occ = occupancy_grid(fg, self.config.n)
        result = self._advance(occ)
        self._pending = _PendingFrame(index, mag, fg, occ, self._pending.occ)
        self.elapsed += time.perf_counter() - start
        return result

    def run(self, frames) -> List[AnomalyMap]:
        """
        Process a whole frame sequence

        Raises:
            InsufficientHistoryError: The stream ended before calibration completed
        """
        maps = []
        for frame in frames:
            result = self.process_frame(frame)
            if result is not None:
                maps.append(result)
        if not self.calibrated:
            raise InsufficientHistoryError(
                f"Stream ended after {self.frame_count} frames; calibration needs {self.config.f_frames}"
            )
        last = self.finish()
        if last is not None:
            maps.append(last)
        logger.info(f"Detected {len(maps)} frames at {self.throughput:.1f} frames/second")
        return maps

    def finish(self) -> Optional[AnomalyMap]:
        """Decide the last buffered frame, treating the next frame as empty"""
        if self._pending is None:
            return None
        result = self._advance(np.zeros_like(self._pending.occ))
        self._pending = None
        logger.info(
            f"Stream finished: {self.frame_count} frames, {self.stage.refinements} block refinements"
        )
        return result

    def _complete_calibration(self):
        cfg = self.config
        frames, mags = self._calib_frames, self._calib_mags
        calibration = build_calibration_set(frames, self.flow_source, self.segmenter, mags)

        prior = calibration.features
        if self.artifact is not None:
            model, lambda_f = self.artifact.model, self.artifact.lambda_f
            if self.artifact.features:
                prior = np.asarray(self.artifact.features, dtype=np.float64)
            digest = self.segmenter.digest()
            if self.artifact.background_digest and digest and digest != self.artifact.background_digest:
                logger.warning("Background model differs from the one recorded in the artifact")
        else:
            model, lambda_f = calibrate(calibration, cfg.p_max, cfg.d_max, cfg.q_max)
        if cfg.lambda_f is not None:
            lambda_f = cfg.lambda_f

        self.theta_init = model
        self.lambda_f = lambda_f
        self.stage = DecisionStage(cfg, model, self.grid, prior)

        last = len(frames) - 1
        fg = calibration.foregrounds[last]
        self._pending = _PendingFrame(last, mags[last - 1], fg, occupancy_grid(fg, cfg.n),
                                      occupancy_grid(calibration.foregrounds[last - 1], cfg.n),
                                      calibration=True)

        self._calib_frames, self._calib_mags = [], []
        logger.info(
            f"Calibration complete: theta order {model.order}, lambda_f={lambda_f:.6f}, "
            f"residual threshold {self.stage.threshold():.6f}"
        )

    def _advance(self, occ_next: np.ndarray) -> Optional[AnomalyMap]:
        pending = self._pending
        if pending.calibration:
            return None
        n = self.config.n
        active = active_grid(pending.occ_prev, pending.occ, occ_next, pending.mag, self.lambda_f, n)
        features = block_features(pending.mag, pending.fg, n)
        features = np.where(active, features, np.nan)

        result = self.stage.step(pending.index, active, features, foreground=pending.fg)
        self._record(pending.index, active, features, result)
        return result

    def _record(self, index, active, features, result):
        self._records.append((index, active, features, result.scores, result.decided,
                              result.anomalous))

    def block_records(self) -> dict:
        """
        Per-frame block activity, features, scores and decisions

        Returns:
            dict: Arrays keyed frame_index, active, features, scores, decided,
                anomalous, plus the prior series and the scalars needed to replay
                the decision stage
        """
        if not self._records:
            raise InsufficientHistoryError("No frame has been decided yet")
        index, active, features, scores, decided, anomalous = zip(*self._records)
        return {
            'frame_index': np.asarray(index, dtype=np.int64),
            'active': np.stack(active),
            'features': np.stack(features),
            'scores': np.stack(scores),
            'decided': np.stack(decided),
            'anomalous': np.stack(anomalous),
            'block_size': np.int64(self.config.n),
            'height': np.int64(self.shape[0]),
            'width': np.int64(self.shape[1]),
            'lambda_f': np.float64(self.lambda_f),
            'lambda_a': np.float64(self.config.lambda_a),
            'lambda_a_scale': np.float64(self.config.lambda_a_scale),
            'prior': np.asarray(self.stage.prior, dtype=np.float64),
            'f_frames': np.int64(self.config.f_frames),
            'order_bounds': np.asarray([self.config.p_max, self.config.d_max, self.config.q_max], dtype=np.int64),
            'refinement': np.asarray([self.config.refine_cadence, self.config.refine_window], dtype=np.int64),
            'model': np.asarray(self.theta_init.to_record()),
        }

    def artifact_for_run(self) -> CalibrationArtifact:
        """Calibration artifact describing this engine's calibration"""
        if not self.calibrated:
            raise InsufficientHistoryError("Engine is not calibrated")
        return CalibrationArtifact(
            width=self.shape[1], height=self.shape[0], block_size=self.config.n,
            f_frames=self.config.f_frames, model=self.theta_init, lambda_f=self.lambda_f,
            background_digest=self.segmenter.digest(), features=self.stage.prior,
        )

    @property
    def throughput(self) -> float:
        """Frames per second over the frames processed so far"""
        return self.frame_count / self.elapsed if self.elapsed > 0 else 0.0


def config_from_records(records: dict, **overrides) -> DetectorConfig:
    """DetectorConfig the recorded run was made with, with optional overrides"""
    try:
        p_max, d_max, q_max = (int(v) for v in records['order_bounds'])
        cadence, window = (int(v) for v in records['refinement'])
        settings = {
            'n': int(records['block_size']),
            'f_frames': int(records['f_frames']),
            'lambda_f': float(records['lambda_f']),
            'lambda_a': float(records['lambda_a']),
            'lambda_a_scale': float(records['lambda_a_scale']),
            'p_max': p_max, 'd_max': d_max, 'q_max': q_max,
            'refine_cadence': cadence, 'refine_window': window,
        }
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"Block records lack detector settings: {e}")
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return DetectorConfig(**settings)
