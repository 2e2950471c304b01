"""
Synthetic Data - seeded ARIMA series and moving-blob videos with injected,
ground-truthed anomalies
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from config.config import (
    CALIBRATION_FRAMES, SYNTH_WIDTH, SYNTH_HEIGHT, SYNTH_DURATION, SYNTH_NOISE,
    SYNTH_TEXTURE_AMPLITUDE, SYNTH_MAX_VELOCITY, SYNTH_ANOMALY_KINDS, load_config_file
)
from core.arima_core import ArimaModel
from core.evaluation import GroundTruth
from core.exceptions import InvalidInputError, ScenarioError
from core.flow import FrameBuffer
from core.utils import ensure_directory, export_to_csv, write_frame, write_mask

logger = logging.getLogger(__name__)

BACKGROUND_LEVEL = 0.35
BLOB_TEXTURE = 0.12

# ============================================================================
# ARIMA SERIES
# ============================================================================

def gen_arima_series(model: ArimaModel, n: int, seed: Optional[int] = None,
                     initial: Sequence[float] = ()) -> np.ndarray:
    """
    Simulate an ARIMA process

    The stationary part follows s_t = c + sum a_i s_{t-i} + sum b_j e_{t-j} + e_t
    with e_t = sigma * Z_t, Z_t standard normal from ``default_rng(seed)``
    and zero pre-sample values. ``initial`` fixes the first samples. The
    result is then integrated d times (each pass prepends a zero), so
    difference(result, d) returns the stationary part exactly.

    Args:
        model (ArimaModel): Generating model
        n (int): Length of the stationary part
        seed (int): Generator seed
        initial: Leading stationary samples

    Returns:
        np.ndarray: n + d samples
    """
    if n < 1:
        raise InvalidInputError(f"Series length must be >= 1, got {n}")
    initial = [float(v) for v in initial]
    if len(initial) > n:
        raise InvalidInputError(f"{len(initial)} initial values for a series of {n}")

    rng = np.random.default_rng(seed)
    e = math.sqrt(model.noise_variance) * rng.standard_normal(n)
    ar, ma = np.asarray(model.ar), np.asarray(model.ma)
    p, q = len(ar), len(ma)

    s = np.zeros(n)
    for t in range(n):
        if t < len(initial):
            s[t] = initial[t]
            continue
        value = model.intercept + e[t]
        for i in range(1, min(p, t) + 1):
            value += ar[i - 1] * s[t - i]
        for j in range(1, min(q, t) + 1):
            value += ma[j - 1] * e[t - j]
        s[t] = value

    x = s
    for _ in range(model.order.d):
        x = np.concatenate(([0.0], np.cumsum(x)))
    return x

# ============================================================================
# SCENARIOS
# ============================================================================

@dataclass(frozen=True)
class BlobSpec:
    """Disc-shaped object: start centre (px), radius (px), velocity (px/frame), luminance"""

    x: float
    y: float
    radius: float = 8.0
    vx: float = 1.0
    vy: float = 0.0
    luminance: float = 0.8

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @classmethod
    def parse(cls, text: str) -> 'BlobSpec':
        """From ``x,y,radius,vx,vy,luminance``"""
        try:
            values = [float(v) for v in str(text).split(',')]
            return cls(*values)
        except (TypeError, ValueError) as e:
            raise ScenarioError(f"Malformed blob '{text}': {e}")

    def to_text(self) -> str:
        return ','.join(repr(float(v)) for v in
                        (self.x, self.y, self.radius, self.vx, self.vy, self.luminance))


@dataclass(frozen=True)
class AnomalySpec:
    """
    Injected anomaly

    speed-change multiplies the target blob's velocity by ``magnitude``;
    direction-change rotates it by ``magnitude`` degrees; new-object makes
    ``new_blob`` appear at the onset frame.
    """

    kind: str
    onset: int
    magnitude: float = 2.0
    target: int = 0
    new_blob: Optional[BlobSpec] = None


@dataclass(frozen=True)
class Scenario:
    width: int = SYNTH_WIDTH
    height: int = SYNTH_HEIGHT
    duration: int = SYNTH_DURATION
    blobs: Tuple[BlobSpec, ...] = ()
    anomaly: Optional[AnomalySpec] = None
    noise: float = SYNTH_NOISE
    seed: int = 0
    texture: float = SYNTH_TEXTURE_AMPLITUDE
    warmup: int = CALIBRATION_FRAMES

    def validate(self):
        if self.width < 8 or self.height < 8 or self.duration < 2:
            raise ScenarioError(f"Scenario too small: {self.width}x{self.height}, {self.duration} frames")
        if self.noise < 0:
            raise ScenarioError("Noise level must be >= 0")
        for blob in self.blobs:
            if blob.speed > SYNTH_MAX_VELOCITY:
                raise ScenarioError(f"Blob speed {blob.speed:.2f} exceeds {SYNTH_MAX_VELOCITY} px/frame")
        a = self.anomaly
        if a is None:
            return
        if a.kind not in SYNTH_ANOMALY_KINDS:
            raise ScenarioError(f"Unknown anomaly kind '{a.kind}', expected one of {SYNTH_ANOMALY_KINDS}")
        if not self.warmup < a.onset < self.duration:
            raise ScenarioError(f"Onset {a.onset} must lie in ({self.warmup}, {self.duration})")
        if a.kind == 'new-object':
            if a.new_blob is None:
                raise ScenarioError("new-object anomaly needs new_blob")
            if a.new_blob.speed > SYNTH_MAX_VELOCITY:
                raise ScenarioError(f"New object speed exceeds {SYNTH_MAX_VELOCITY} px/frame")
        else:
            if not 0 <= a.target < len(self.blobs):
                raise ScenarioError(f"Anomaly target {a.target} is not a blob")
            if a.kind == 'speed-change' and self.blobs[a.target].speed * abs(a.magnitude) > SYNTH_MAX_VELOCITY:
                raise ScenarioError(f"Changed speed exceeds {SYNTH_MAX_VELOCITY} px/frame")


def _rotate(vx: float, vy: float, degrees: float) -> Tuple[float, float]:
    angle = math.radians(degrees)
    c, s = math.cos(angle), math.sin(angle)
    return vx * c - vy * s, vx * s + vy * c


def _track(blob: BlobSpec, duration: int, change_at: Optional[int] = None,
           velocity_after: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """(duration, 2) centre positions, piecewise linear in time"""
    velocity = np.tile([blob.vx, blob.vy], (duration, 1))
    if change_at is not None:
        velocity[change_at:] = velocity_after
    steps = np.vstack([[0.0, 0.0], velocity[1:]])
    path = np.cumsum(steps, axis=0)
    path[:, 0] += blob.x
    path[:, 1] += blob.y
    return path


def _object_tracks(sc: Scenario) -> Tuple[List[Tuple[BlobSpec, np.ndarray, int]], Optional[int]]:
    """Every object with its track and first visible frame, plus the index of the anomalous one"""
    a = sc.anomaly
    objects, anomalous = [], None
    for i, blob in enumerate(sc.blobs):
        if a is not None and a.kind in ('speed-change', 'direction-change') and i == a.target:
            if a.kind == 'speed-change':
                after = (blob.vx * a.magnitude, blob.vy * a.magnitude)
            else:
                after = _rotate(blob.vx, blob.vy, a.magnitude)
            track = _track(blob, sc.duration, a.onset, after)
            anomalous = len(objects)
        else:
            track = _track(blob, sc.duration)
        objects.append((blob, track, 0))

    if a is not None and a.kind == 'new-object':
        blob = a.new_blob
        track = np.full((sc.duration, 2), np.nan)
        track[a.onset:] = _track(blob, sc.duration - a.onset)
        anomalous = len(objects)
        objects.append((blob, track, a.onset))
    return objects, anomalous


def _check_inside(sc: Scenario, blob: BlobSpec, track: np.ndarray, start: int):
    visible = track[start:]
    lo = visible - blob.radius
    hi = visible + blob.radius
    if (lo < 0).any() or (hi[:, 0] > sc.width - 1).any() or (hi[:, 1] > sc.height - 1).any():
        frame = start + int(np.argmax((lo < 0).any(axis=1) | (hi[:, 0] > sc.width - 1)
                                      | (hi[:, 1] > sc.height - 1)))
        raise ScenarioError(f"Blob starting at ({blob.x}, {blob.y}) leaves the frame at frame {frame}")


def _background(sc: Scenario, rng: np.random.Generator) -> np.ndarray:
    texture = rng.standard_normal((sc.height, sc.width)).astype(np.float32)
    texture = cv2.GaussianBlur(texture, (0, 0), sigmaX=2.0)
    texture /= max(float(np.abs(texture).max()), 1e-6)
    return BACKGROUND_LEVEL + sc.texture * texture


def _render_blob(frame: np.ndarray, blob: BlobSpec, cx: float, cy: float,
                 xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Composite one anti-aliased textured disc; returns its coverage"""
    dx, dy = xs - cx, ys - cy
    alpha = np.clip(blob.radius + 0.5 - np.hypot(dx, dy), 0.0, 1.0)
    # texture moves with the object so flow has gradient support inside it
    value = blob.luminance + BLOB_TEXTURE * np.sin(dx / 1.7) * np.cos(dy / 2.1)
    frame *= 1.0 - alpha
    frame += alpha * value
    return alpha


def gen_video(sc: Scenario) -> Tuple[List[FrameBuffer], GroundTruth]:
    """
    Render a scenario

    Returns:
        tuple: (frames, GroundTruth) where frames at or after the onset are
            anomalous and masks cover the anomalous object (coverage > 0.5)

    Raises:
        ScenarioError: Invalid scenario or an object leaving the frame
    """
    sc.validate()
    objects, anomalous = _object_tracks(sc)
    for blob, track, start in objects:
        _check_inside(sc, blob, track, start)

    rng = np.random.default_rng(sc.seed)
    background = _background(sc, rng)
    ys, xs = np.mgrid[0:sc.height, 0:sc.width].astype(np.float32)

    frames = []
    flags = np.zeros(sc.duration, dtype=bool)
    masks = np.zeros((sc.duration, sc.height, sc.width), dtype=bool)
    for t in range(sc.duration):
        frame = background.copy()
        for k, (blob, track, start) in enumerate(objects):
            if t < start:
                continue
            alpha = _render_blob(frame, blob, track[t, 0], track[t, 1], xs, ys)
            if k == anomalous and t >= sc.anomaly.onset:
                masks[t] = alpha > 0.5
                flags[t] = True
        if sc.noise > 0:
            frame += sc.noise * rng.standard_normal(frame.shape).astype(np.float32)
        frames.append(FrameBuffer(sc.width, sc.height, np.clip(frame, 0.0, 1.0)))

    logger.info(
        f"Rendered {sc.duration} frames {sc.width}x{sc.height}, "
        f"anomaly={sc.anomaly.kind if sc.anomaly else 'none'}, {int(flags.sum())} anomalous frames"
    )
    return frames, GroundTruth(flags, masks)

# ============================================================================
# DEFAULT SCENARIOS
# ============================================================================

def _fit_start(extent_lo: float, extent_hi: float, radius: float, size: int,
               rng: np.random.Generator) -> float:
    margin = radius + 2.0
    slack = (size - 1 - 2 * margin) - (extent_hi - extent_lo)
    if slack < 0:
        raise ScenarioError(f"Trajectory spanning {extent_hi - extent_lo:.1f}px does not fit in {size}px")
    return margin - extent_lo + rng.uniform(0.0, slack)


def _placed(blob: BlobSpec, sc: Scenario, rng: np.random.Generator,
            change_at: Optional[int] = None, after=None, duration: Optional[int] = None) -> BlobSpec:
    """Shift a blob's start so its whole trajectory stays inside the frame"""
    duration = duration or sc.duration
    relative = _track(replace(blob, x=0.0, y=0.0), duration, change_at, after)
    x = _fit_start(relative[:, 0].min(), relative[:, 0].max(), blob.radius, sc.width, rng)
    y = _fit_start(relative[:, 1].min(), relative[:, 1].max(), blob.radius, sc.height, rng)
    return replace(blob, x=float(x), y=float(y))


def default_scenario(kind: str = 'speed-change', seed: int = 0, width: int = SYNTH_WIDTH,
                     height: int = SYNTH_HEIGHT, duration: int = SYNTH_DURATION,
                     onset: Optional[int] = None) -> Scenario:
    """
    Seeded single-blob scenario with one anomaly of ``kind`` ('none' for normal)

    The blob moves at about 1 px/frame; the anomaly starts halfway through.
    """
    if kind != 'none' and kind not in SYNTH_ANOMALY_KINDS:
        raise ScenarioError(f"Unknown anomaly kind '{kind}'")
    rng = np.random.default_rng(seed)
    onset = max(CALIBRATION_FRAMES + 5, duration // 2) if onset is None else onset

    heading = rng.uniform(-0.25, 0.25) + (math.pi if rng.random() < 0.5 else 0.0)
    speed = rng.uniform(0.8, 1.2)
    blob = BlobSpec(0.0, 0.0, radius=float(rng.uniform(6.0, 9.0)),
                    vx=speed * math.cos(heading), vy=speed * math.sin(heading),
                    luminance=float(rng.uniform(0.75, 0.9)))
    base = Scenario(width, height, duration, (blob,), None, seed=seed)

    anomaly = None
    if kind == 'speed-change':
        anomaly = AnomalySpec(kind, onset, 2.0)
        blob = _placed(blob, base, rng, onset, (blob.vx * 2.0, blob.vy * 2.0))
    elif kind == 'direction-change':
        anomaly = AnomalySpec(kind, onset, 90.0)
        blob = _placed(blob, base, rng, onset, _rotate(blob.vx, blob.vy, 90.0))
    else:
        blob = _placed(blob, base, rng)
        if kind == 'new-object':
            intruder = BlobSpec(0.0, 0.0, radius=float(rng.uniform(5.0, 7.0)),
                                vx=-2.0 * math.cos(heading), vy=2.0 * math.sin(heading),
                                luminance=float(rng.uniform(0.6, 0.7)))
            intruder = _placed(intruder, base, rng, duration=duration - onset)
            anomaly = AnomalySpec(kind, onset, 2.0, new_blob=intruder)

    return replace(base, blobs=(blob,), anomaly=anomaly)

# ============================================================================
# FILES
# ============================================================================

def scenario_to_text(sc: Scenario) -> str:
    lines = [
        f"width = {sc.width}",
        f"height = {sc.height}",
        f"duration = {sc.duration}",
        f"noise = {sc.noise!r}",
        f"texture = {sc.texture!r}",
        f"seed = {sc.seed}",
    ]
    lines += [f"blob{i} = {blob.to_text()}" for i, blob in enumerate(sc.blobs)]
    if sc.anomaly is not None:
        a = sc.anomaly
        lines += [f"anomaly = {a.kind}", f"onset = {a.onset}",
                  f"magnitude = {a.magnitude!r}", f"target = {a.target}"]
        if a.new_blob is not None:
            lines.append(f"new_blob = {a.new_blob.to_text()}")
    return '\n'.join(lines) + '\n'


def load_scenario(path) -> Scenario:
    """
    Read a ``key = value`` scenario file

    Keys: width, height, duration, noise, texture, seed, blob0..blobK
    (``x,y,radius,vx,vy,luminance``), anomaly, onset, magnitude, target,
    new_blob. A file with only ``anomaly`` and ``seed`` expands to the
    default scenario of that kind.
    """
    try:
        settings = load_config_file(path)
    except OSError as e:
        logger.error(f"Cannot read scenario {path}: {e}")
        raise ScenarioError(f"Cannot read scenario {path}: {e}")
    except ValueError as e:
        raise ScenarioError(str(e))

    kind = settings.get('anomaly', 'none') or 'none'
    blob_keys = sorted((k for k in settings if k.startswith('blob')), key=lambda k: int(k[4:] or 0))
    if not blob_keys:
        return default_scenario(kind, int(settings.get('seed', 0)),
                                int(settings.get('width', SYNTH_WIDTH)),
                                int(settings.get('height', SYNTH_HEIGHT)),
                                int(settings.get('duration', SYNTH_DURATION)),
                                settings.get('onset'))

    anomaly = None
    if kind != 'none':
        if 'onset' not in settings:
            raise ScenarioError(f"{path}: anomaly without onset")
        new_blob = BlobSpec.parse(settings['new_blob']) if 'new_blob' in settings else None
        anomaly = AnomalySpec(kind, int(settings['onset']), float(settings.get('magnitude', 2.0)),
                              int(settings.get('target', 0)), new_blob)

    return Scenario(
        width=int(settings.get('width', SYNTH_WIDTH)),
        height=int(settings.get('height', SYNTH_HEIGHT)),
        duration=int(settings.get('duration', SYNTH_DURATION)),
        blobs=tuple(BlobSpec.parse(settings[k]) for k in blob_keys),
        anomaly=anomaly,
        noise=float(settings.get('noise', SYNTH_NOISE)),
        seed=int(settings.get('seed', 0)),
        texture=float(settings.get('texture', SYNTH_TEXTURE_AMPLITUDE)),
    )


def write_dataset(sc: Scenario, out_dir) -> dict:
    """
    Render a scenario to disk

    Layout: frame_<index>.pgm, gt.csv (frame_index, anomalous),
    masks/mask_<index>.pgm and scenario.conf.

    Returns:
        dict: Summary with frame count, anomalous frame count and paths
    """
    out_dir = ensure_directory(out_dir)
    mask_dir = ensure_directory(out_dir / 'masks')
    frames, gt = gen_video(sc)

    for k, frame in enumerate(frames):
        write_frame(out_dir / f"frame_{k:06d}.pgm", frame)
        write_mask(mask_dir / f"mask_{k:06d}.pgm", gt.masks[k])

    rows = [{'frame_index': k, 'anomalous': int(flag)} for k, flag in enumerate(gt.flags)]
    export_to_csv(rows, out_dir / 'gt.csv', ['frame_index', 'anomalous'])
    (out_dir / 'scenario.conf').write_text(scenario_to_text(sc), encoding='utf-8')

    return {
        'frames': len(frames),
        'anomalous_frames': int(gt.flags.sum()),
        'frames_dir': str(out_dir),
        'gt_csv': str(out_dir / 'gt.csv'),
        'mask_dir': str(mask_dir),
    }
