"""
Evaluation - frame-level ROC / AUC / EER and pixel-level EER under the
40% overlap criterion
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from config.config import PIXEL_OVERLAP_RATIO, MAX_SWEEP_THRESHOLDS
from core.exceptions import FormatError, InvalidInputError, UndefinedMetricError
from core.utils import read_mask

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ['frame_index', 'frame_score', 'active_blocks', 'anomalous_blocks']
GT_COLUMNS = ['frame_index', 'anomalous']

_NEIGHBOURS_3D = np.zeros((1, 3, 3), dtype=np.int32)
_NEIGHBOURS_3D[0] = [[1, 1, 1], [1, 0, 1], [1, 1, 1]]

# ============================================================================
# TYPES
# ============================================================================

@dataclass
class GroundTruth:
    """Per-frame anomaly flags with optional per-frame pixel masks"""

    flags: np.ndarray
    masks: Optional[np.ndarray] = None

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=bool)
            if self.masks.ndim != 3 or len(self.masks) != len(self.flags):
                raise InvalidInputError(
                    f"Expected one 2-D mask per frame ({len(self.flags)}), got shape {self.masks.shape}"
                )

    def __len__(self):
        return len(self.flags)

    @property
    def shape(self) -> Optional[Tuple[int, int]]:
        return None if self.masks is None else self.masks.shape[1:]


@dataclass
class EvalReport:
    """ROC points, AUC and equal error rates"""

    roc: List[Tuple[float, float]]
    auc: float
    frame_eer: float
    pixel_eer: Optional[float] = None
    frames: int = 0
    positives: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        report = {
            'auc': self.auc,
            'frame_eer': self.frame_eer,
            'pixel_eer': self.pixel_eer,
            'frames': self.frames,
            'positives': self.positives,
            'roc': [[fpr, tpr] for fpr, tpr in self.roc],
        }
        report.update(self.extra)
        return report

    @classmethod
    def from_dict(cls, data: dict) -> 'EvalReport':
        try:
            return cls(
                roc=[(float(a), float(b)) for a, b in data['roc']],
                auc=float(data['auc']),
                frame_eer=float(data['frame_eer']),
                pixel_eer=None if data.get('pixel_eer') is None else float(data['pixel_eer']),
                frames=int(data.get('frames', 0)),
                positives=int(data.get('positives', 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"Malformed evaluation report: {e}")

# ============================================================================
# FRAME-LEVEL METRICS
# ============================================================================

def _check_labels(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise InvalidInputError(f"{len(scores)} scores for {len(labels)} labels")
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("Scores must be finite")
    if labels.all() or not labels.any():
        raise UndefinedMetricError("Ground truth must contain both normal and anomalous frames")
    return scores, labels


def roc_curve(scores, labels) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    ROC over every distinct score, predicting 'anomalous' when score > t

    Thresholds run from the largest score (nothing flagged, point (0, 0))
    down to -inf (everything flagged, point (1, 1)).

    Returns:
        tuple: (fpr, tpr, thresholds)
    """
    scores, labels = _check_labels(scores, labels)
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    thresholds = np.r_[np.unique(scores)[::-1], -np.inf]
    tp = len(pos) - np.searchsorted(pos, thresholds, side='right')
    fp = len(neg) - np.searchsorted(neg, thresholds, side='right')
    return fp / len(neg), tp / len(pos), thresholds


def trapezoid_area(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


def pairwise_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(equal), by brute force"""
    scores, labels = _check_labels(scores, labels)
    pos = scores[labels][:, None]
    neg = scores[~labels][None, :]
    return float(np.mean(pos > neg) + 0.5 * np.mean(pos == neg))


def equal_error_rate(fpr, fnr) -> float:
    """
    Rate where FPR equals FNR

    ``fpr``/``fnr`` are ordered by decreasing threshold. The crossing is
    interpolated linearly between the two bracketing thresholds; without a
    crossing the result is the smallest max(FPR, FNR).
    """
    fpr = np.asarray(fpr, dtype=np.float64)
    fnr = np.asarray(fnr, dtype=np.float64)
    if fpr.shape != fnr.shape or fpr.size == 0:
        raise InvalidInputError("FPR and FNR must be non-empty and of equal length")

    gap = fpr - fnr
    crossed = np.flatnonzero(gap >= 0)
    if crossed.size:
        i = int(crossed[0])
        if gap[i] == 0:
            return float(fpr[i])
        if i > 0:
            t = -gap[i - 1] / (gap[i] - gap[i - 1])
            return float(fpr[i - 1] + t * (fpr[i] - fpr[i - 1]))
    return float(np.min(np.maximum(fpr, fnr)))


def frame_metrics(scores, labels) -> EvalReport:
    """
    Frame-level ROC, trapezoidal AUC and interpolated EER

    Raises:
        UndefinedMetricError: Single-class ground truth
    """
    fpr, tpr, _ = roc_curve(scores, labels)
    labels = np.asarray(labels, dtype=bool)
    report = EvalReport(
        roc=[(float(a), float(b)) for a, b in zip(fpr, tpr)],
        auc=trapezoid_area(fpr, tpr),
        frame_eer=equal_error_rate(fpr, 1.0 - tpr),
        frames=int(labels.size),
        positives=int(labels.sum()),
    )
    logger.info(f"Frame-level AUC={report.auc:.4f}, EER={report.frame_eer:.4f} over {report.frames} frames")
    return report

# ============================================================================
# PIXEL-LEVEL METRICS
# ============================================================================

def _overlap_ratio() -> Fraction:
    return Fraction(PIXEL_OVERLAP_RATIO).limit_denominator(1000)


def pixel_level_decision(pred_mask, gt_mask) -> bool:
    """
    Pixel-level detection flag of one frame

    For a frame with anomalous ground-truth pixels: True iff at least 40% of
    them are flagged. For a normal frame: True iff anything is flagged (a
    false positive).
    """
    pred = np.asarray(pred_mask, dtype=bool)
    gt = np.asarray(gt_mask, dtype=bool)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"Mask shapes differ: {pred.shape} vs {gt.shape}")
    truth = int(np.count_nonzero(gt))
    if truth == 0:
        return bool(pred.any())
    ratio = _overlap_ratio()
    overlap = int(np.count_nonzero(pred & gt))
    return overlap * ratio.denominator >= ratio.numerator * truth


def threshold_scores(scores, decided, lambda_a: float) -> np.ndarray:
    """
    Re-threshold recorded block scores and apply spatial consistency

    Args:
        scores: (K, R, C) or (R, C) block scores
        decided: Same shape; True where a decision was made
        lambda_a (float): Threshold, strict >

    Returns:
        np.ndarray: Anomalous block grids
    """
    scores = np.asarray(scores, dtype=np.float64)
    decided = np.asarray(decided, dtype=bool)
    if scores.shape != decided.shape:
        raise InvalidInputError(f"Score grid {scores.shape} != decision grid {decided.shape}")
    single = scores.ndim == 2
    if single:
        scores, decided = scores[None], decided[None]
    raw = decided & (scores > lambda_a)
    support = ndimage.convolve(raw.astype(np.int32), _NEIGHBOURS_3D, mode='constant', cval=0)
    result = raw & (support > 0)
    return result[0] if single else result


def pixel_masks_at(scores, decided, lambda_a: float, n: int, height: int, width: int) -> np.ndarray:
    """(K, H, W) block-filled pixel masks at one threshold"""
    blocks = threshold_scores(scores, decided, lambda_a)
    if blocks.ndim == 2:
        blocks = blocks[None]
    masks = np.zeros((len(blocks), height, width), dtype=bool)
    rows, cols = blocks.shape[1:]
    masks[:, :rows * n, :cols * n] = np.repeat(np.repeat(blocks, n, axis=1), n, axis=2)
    return masks


def sweep_thresholds(scores, decided, limit: int = MAX_SWEEP_THRESHOLDS) -> np.ndarray:
    """Decreasing thresholds over the decided scores, at most ``limit`` of them plus -inf"""
    values = np.unique(np.asarray(scores)[np.asarray(decided, dtype=bool)])[::-1]
    if len(values) > limit:
        picks = np.unique(np.linspace(0, len(values) - 1, limit).round().astype(int))
        values = values[picks]
    return np.r_[values, -np.inf]


def pixel_eer(scores, decided, gt: GroundTruth, n: int) -> float:
    """
    Pixel-level EER swept over the anomaly threshold

    At every threshold the block decisions are rebuilt from the recorded
    scores, upsampled to pixels and judged per frame with
    pixel_level_decision; FPR counts flagged normal frames and FNR counts
    anomalous frames below the overlap criterion.

    Args:
        scores, decided: (K, R, C) recorded block scores and decision flags
        gt (GroundTruth): Flags and masks aligned with the K frames
        n (int): Block size

    Returns:
        float: Equal error rate in [0, 1]
    """
    if gt.masks is None:
        raise InvalidInputError("Pixel-level EER needs ground-truth masks")
    scores = np.asarray(scores, dtype=np.float64)
    decided = np.asarray(decided, dtype=bool)
    if len(scores) != len(gt):
        raise InvalidInputError(f"{len(scores)} score grids for {len(gt)} ground-truth frames")

    truth = gt.masks.reshape(len(gt), -1).sum(axis=1)
    labels = truth > 0
    if labels.all() or not labels.any():
        raise UndefinedMetricError("Pixel ground truth must contain both normal and anomalous frames")

    # gt pixels per block; pixels outside the block grid can never be covered
    rows, cols = scores.shape[1:]
    gt_blocks = gt.masks[:, :rows * n, :cols * n].reshape(len(gt), rows, n, cols, n).sum(axis=(2, 4))
    ratio = _overlap_ratio()

    fpr, fnr = [], []
    for threshold in sweep_thresholds(scores, decided):
        flagged = threshold_scores(scores, decided, threshold)
        overlap = (flagged * gt_blocks).sum(axis=(1, 2))
        detected = overlap * ratio.denominator >= ratio.numerator * truth
        nonempty = flagged.reshape(len(flagged), -1).any(axis=1)
        fpr.append(float(np.mean(nonempty[~labels])))
        fnr.append(float(np.mean(~detected[labels])))

    value = equal_error_rate(fpr, fnr)
    logger.info(f"Pixel-level EER={value:.4f} over {len(fpr)} thresholds")
    return value

# ============================================================================
# INPUT FILES
# ============================================================================

def _numeric_frame(df: pd.DataFrame, path: Path, columns: Sequence[str]) -> pd.DataFrame:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise FormatError(f"{path}: missing column(s) {', '.join(missing)}", line=1)
    out = df[list(columns)].apply(pd.to_numeric, errors='coerce')
    bad = out.isna().any(axis=1).to_numpy()
    if bad.any():
        # header is line 1
        raise FormatError(f"{path}: non-numeric value", line=int(np.argmax(bad)) + 2)
    return out


def _read_csv(path) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path, dtype=str, skipinitialspace=True)
    except FileNotFoundError:
        logger.error(f"CSV file not found: {path}")
        raise
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path}: empty file", line=1)
    except pd.errors.ParserError as e:
        raise FormatError(f"{path}: {e}")


def load_scores_csv(path) -> pd.DataFrame:
    """
    Read a detector scores CSV

    Raises:
        FormatError: Missing columns or non-numeric cells, with the line number
    """
    path = Path(path)
    df = _numeric_frame(_read_csv(path), path, SCORE_COLUMNS)
    df['frame_index'] = df['frame_index'].astype(np.int64)
    return df


def load_ground_truth(csv_path, mask_dir=None) -> GroundTruth:
    """
    Read per-frame flags (``frame_index,anomalous``) and optional masks

    Frames must be listed densely from 0; masks are ``mask_<index>.pgm``.
    """
    csv_path = Path(csv_path)
    df = _numeric_frame(_read_csv(csv_path), csv_path, GT_COLUMNS)
    index = df['frame_index'].astype(np.int64).to_numpy()
    if not np.array_equal(index, np.arange(len(index))):
        raise FormatError(f"{csv_path}: frame_index must run 0..{len(index) - 1} in order")
    flags = df['anomalous'].to_numpy() != 0

    masks = None
    if mask_dir is not None:
        mask_dir = Path(mask_dir)
        masks = np.stack([read_mask(mask_dir / f"mask_{k:06d}.pgm") for k in index])
    return GroundTruth(flags, masks)


def align(scores: pd.DataFrame, gt: GroundTruth) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(frame indices, frame scores, gt flags) restricted to frames present in both"""
    index = scores['frame_index'].to_numpy(dtype=np.int64)
    keep = (index >= 0) & (index < len(gt))
    if not keep.all():
        logger.warning(f"{int((~keep).sum())} scored frames have no ground truth and are ignored")
    index = index[keep]
    return index, scores['frame_score'].to_numpy(dtype=np.float64)[keep], gt.flags[index]


def evaluate(frame_index, frame_scores, gt: GroundTruth, block_scores=None,
             decided=None, n: Optional[int] = None) -> EvalReport:
    """
    Frame-level report, plus pixel-level EER when masks and block scores are given

    Args:
        frame_index: Frame numbers of the scored frames
        frame_scores: One score per scored frame
        gt (GroundTruth): Ground truth of the whole video
        block_scores, decided: (K, R, C) recorded block data of the scored frames
        n (int): Block size
    """
    frame_index = np.asarray(frame_index, dtype=np.int64)
    if frame_index.size and (frame_index.min() < 0 or frame_index.max() >= len(gt)):
        raise InvalidInputError(f"Scored frames exceed the {len(gt)} ground-truth frames")
    report = frame_metrics(frame_scores, gt.flags[frame_index])
    if gt.masks is not None and block_scores is not None and decided is not None and n:
        subset = GroundTruth(gt.flags[frame_index], gt.masks[frame_index])
        report.pixel_eer = pixel_eer(block_scores, decided, subset, n)
    return report
