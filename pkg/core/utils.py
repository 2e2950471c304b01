"""
Utility Functions - frame, mask and video file I/O plus export helpers
"""

import csv
import json
import logging
import re
from pathlib import Path
from typing import Iterator, List

import numpy as np
from PIL import Image, UnidentifiedImageError

from config.config import ALLOWED_FRAME_EXTENSIONS, VIDEO_EXTENSIONS
from core.exceptions import FormatError, UsageError
from core.flow import FrameBuffer

logger = logging.getLogger(__name__)

Y4M_MAGIC = b"YUV4MPEG2"
_DIGITS = re.compile(r'(\d+)')

# ============================================================================
# IMAGE FILES
# ============================================================================

def _load_gray(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode in ('I;16', 'I;16B', 'I;16L'):
                return np.array(img, dtype=np.uint16)
            return np.array(img.convert('L'), dtype=np.uint8)
    except FileNotFoundError:
        logger.error(f"Image not found: {path}")
        raise FormatError(f"Image not found: {path}")
    except (UnidentifiedImageError, OSError) as e:
        logger.error(f"Cannot decode image {path}: {e}")
        raise FormatError(f"Cannot decode image {path}: {e}")


def read_frame(path) -> FrameBuffer:
    """Read a PGM/PNG image as a grayscale frame in [0, 1]"""
    return FrameBuffer.from_array(_load_gray(path))


def write_frame(path, frame) -> Path:
    """
    Write a frame (FrameBuffer or array in [0, 1]) as an 8-bit image

    The format follows the file extension (``.pgm`` or ``.png``).
    """
    data = frame.data if isinstance(frame, FrameBuffer) else np.asarray(frame, dtype=np.float32)
    pixels = np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    Image.fromarray(pixels).save(path)
    return path


def read_mask(path) -> np.ndarray:
    """Read a binary mask image (0 / 255) as a boolean array"""
    return _load_gray(path) > 0


def write_mask(path, mask) -> Path:
    pixels = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    path = Path(path)
    Image.fromarray(pixels).save(path)
    return path

# ============================================================================
# FRAME SEQUENCES
# ============================================================================

def _natural_key(path: Path):
    return [int(part) if part.isdigit() else part for part in _DIGITS.split(path.name)]


def list_frame_files(directory) -> List[Path]:
    """Numbered frame images of a directory in numeric order"""
    directory = Path(directory)
    files = [p for p in directory.iterdir()
             if p.is_file() and p.suffix.lower() in ALLOWED_FRAME_EXTENSIONS]
    return sorted(files, key=_natural_key)


def read_y4m(path) -> Iterator[FrameBuffer]:
    """
    Stream the luma planes of an 8-bit YUV4MPEG2 file

    Supports the 420 family, 422, 444 and mono colour spaces; chroma is
    skipped.

    Raises:
        FormatError: Bad header or truncated frame, with the byte offset
    """
    path = Path(path)
    with open(path, 'rb') as f:
        header = f.readline()
        if not header.startswith(Y4M_MAGIC) or not header.endswith(b"\n"):
            raise FormatError(f"{path}: not a YUV4MPEG2 stream", offset=0)

        params = {}
        for token in header[len(Y4M_MAGIC):].split():
            params[chr(token[0])] = token[1:].decode('ascii', 'replace')
        try:
            width, height = int(params['W']), int(params['H'])
        except (KeyError, ValueError):
            raise FormatError(f"{path}: header lacks frame size", offset=0)

        colour = params.get('C', '420')
        half_w, half_h = (width + 1) // 2, (height + 1) // 2
        if colour.startswith('420'):
            chroma = 2 * half_w * half_h
        elif colour == '422':
            chroma = 2 * half_w * height
        elif colour == '444':
            chroma = 2 * width * height
        elif colour == 'mono':
            chroma = 0
        else:
            raise FormatError(f"{path}: unsupported colour space C{colour}", offset=0)

        luma = width * height
        count = 0
        while True:
            offset = f.tell()
            marker = f.readline()
            if not marker:
                break
            if not marker.startswith(b"FRAME"):
                raise FormatError(f"{path}: expected FRAME marker", offset=offset)
            plane = f.read(luma)
            skipped = f.read(chroma)
            if len(plane) < luma or len(skipped) < chroma:
                raise FormatError(f"{path}: truncated frame {count}", offset=f.tell())
            count += 1
            yield FrameBuffer.from_array(np.frombuffer(plane, dtype=np.uint8).reshape(height, width))
        logger.debug(f"Read {count} frames from {path}")


def iter_frames(source) -> Iterator[FrameBuffer]:
    """
    Frames of a numbered-image directory or a Y4M file, in order

    Raises:
        UsageError: The source does not exist or is not a supported input
    """
    source = Path(source)
    if not source.exists():
        raise UsageError(f"Input does not exist: {source}")
    if source.is_dir():
        files = list_frame_files(source)
        if not files:
            raise UsageError(f"No {'/'.join(ALLOWED_FRAME_EXTENSIONS)} frames in {source}")
        logger.info(f"Reading {len(files)} frames from {source}")
        for path in files:
            yield read_frame(path)
    elif source.suffix.lower() in VIDEO_EXTENSIONS:
        yield from read_y4m(source)
    else:
        raise UsageError(f"Unsupported input {source}: expected a frame directory or a Y4M file")


def ensure_directory(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path

# ============================================================================
# EXPORT HELPERS
# ============================================================================

def export_to_json(data, filepath):
    """Export data to a JSON file with sorted keys"""
    try:
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, sort_keys=True, default=str)
            f.write('\n')
        logger.info(f"Data exported to JSON: {filepath}")
        return True
    except (OSError, TypeError) as e:
        logger.error(f"JSON export error: {e}")
        return False


def export_to_csv(data, filepath, headers):
    """Export a list of row dicts to a CSV file"""
    try:
        with open(filepath, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=headers, lineterminator='\n')
            writer.writeheader()
            writer.writerows(data)
        logger.info(f"Data exported to CSV: {filepath}")
        return True
    except (OSError, ValueError) as e:
        logger.error(f"CSV export error: {e}")
        return False


def format_float(value: float) -> str:
    """Shortest round-tripping text for a float"""
    return repr(float(value))
