"""
Configuration Settings for the Non-Stationary Video Anomaly Detection Engine
Detector, flow, segmentation, estimation and evaluation defaults
"""

from pathlib import Path

# ============================================================================
# APPLICATION SETTINGS
# ============================================================================

APP_NAME = "Non-Stationary Video Anomaly Detector"
APP_VERSION = "1.0.0"

# ============================================================================
# PATHS
# ============================================================================

BASE_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = BASE_DIR / "data"
OUTPUT_DIR = DATA_DIR / "runs"
LOGS_DIR = DATA_DIR / "logs"
DEFAULT_CONFIG_FILE = DATA_DIR / "default.conf"

# Output file names inside a run directory
SCORES_FILE = "scores.csv"
BLOCK_RECORDS_FILE = "block_records.npz"
MAPS_SUBDIR = "maps"
ARTIFACT_FILE = "calibration.txt"
REPORT_FILE = "report.json"
ROC_FILE = "roc.csv"
SWEEP_FILE = "sweep.csv"

# ============================================================================
# DETECTOR SETTINGS
# ============================================================================

# Block side N (pixels) and calibration length F (frames)
BLOCK_SIZE = 10
CALIBRATION_FRAMES = 10

# Anomaly threshold on the differenced feature scale. The residual threshold in
# px/frame is lambda_a * LAMBDA_A_SCALE * calibrated feature level, so 0.01
# flags a block whose forecast misses by more than half its normal flow.
LAMBDA_A = 0.01
LAMBDA_A_SCALE = 50.0

# Order search bounds; further clipped so that p + d < F and q < F
P_MAX = 2
D_MAX = 2
Q_MAX = 1

# Fitted candidates need this many innovations per estimated parameter
MIN_INNOVATIONS_PER_PARAMETER = 2

# Block-wise refinement
REFINE_CADENCE = 16  # accepted samples between refits
REFINE_WINDOW = 64  # most recent non-anomalous samples used per refit

# Worker threads for per-block work (1 = sequential)
DETECTOR_THREADS = 1

# ============================================================================
# OPTICAL FLOW SETTINGS
# ============================================================================

FLOW_LEVELS = 3
FLOW_ITERATIONS = 5
FLOW_WINDOW = 7
FLOW_MIN_EIGENVALUE = 1e-4
FLOW_MAGIC = b"FSFL"

# ============================================================================
# SEGMENTATION SETTINGS
# ============================================================================

BACKGROUND_STEP = 1.0 / 255.0
DEVIATION_RATE = 0.05
FOREGROUND_SIGMAS = 4.0
MIN_DEVIATION_SCALE = 0.01
STATIC_FLOW_THRESHOLD = 0.25  # px/frame, samples below it seed the background
UNRESOLVED_DEVIATION_SCALE = 0.04  # pixels never static during calibration
INPAINT_RADIUS = 3
MIN_CALIBRATION_MOTION = 1e-3  # px/frame

# ============================================================================
# ESTIMATION SETTINGS
# ============================================================================

OPTIMIZER_TOLERANCE = 1e-8
OPTIMIZER_MAX_ITERATIONS = 200
MULTI_START_VALUES = (0.0, 0.3, -0.3)
MA_COEFFICIENT_BOUND = 0.999
VARIANCE_FLOOR = 1e-12
RECORD_PRECISION = 17  # significant digits in text records

# ============================================================================
# EVALUATION SETTINGS
# ============================================================================

PIXEL_OVERLAP_RATIO = 0.4
SWEEP_LAMBDAS = (0.001, 0.005, 0.01, 0.1, 1.0)
MAX_SWEEP_THRESHOLDS = 512

# ============================================================================
# BATCH SETTINGS
# ============================================================================

BATCH_THREAD_COUNT = 4
BENCHMARK_SCENARIOS = 20
BENCHMARK_FILE = "benchmark.csv"

# ============================================================================
# SYNTHETIC DATA SETTINGS
# ============================================================================

SYNTH_WIDTH = 160
SYNTH_HEIGHT = 120
SYNTH_DURATION = 60
SYNTH_NOISE = 0.005
SYNTH_TEXTURE_AMPLITUDE = 0.08
SYNTH_MAX_VELOCITY = 3.0
SYNTH_ANOMALY_KINDS = ("speed-change", "new-object", "direction-change")

# ============================================================================
# FILE EXTENSIONS
# ============================================================================

ALLOWED_FRAME_EXTENSIONS = ['.pgm', '.png']
VIDEO_EXTENSIONS = ['.y4m']

# ============================================================================
# LOGGING SETTINGS
# ============================================================================

LOG_LEVEL = 'INFO'
LOG_FILE = 'anomaly_engine.log'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
MAX_LOG_SIZE = 10 * 1024 * 1024  # 10MB
LOG_BACKUP_COUNT = 5

# ============================================================================
# STATUS CODES
# ============================================================================

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DEGENERATE = 4

# ============================================================================
# UTILITY FUNCTIONS
# ============================================================================

def create_directories():
    """Create all required directories if they don't exist"""
    for directory in (DATA_DIR, OUTPUT_DIR, LOGS_DIR):
        directory.mkdir(parents=True, exist_ok=True)

def get_detector_config():
    """Get detector defaults as a dict keyed like DetectorConfig fields"""
    return {
        'n': BLOCK_SIZE,
        'f_frames': CALIBRATION_FRAMES,
        'lambda_f': None,
        'lambda_a': LAMBDA_A,
        'lambda_a_scale': LAMBDA_A_SCALE,
        'p_max': P_MAX,
        'd_max': D_MAX,
        'q_max': Q_MAX,
        'refine_cadence': REFINE_CADENCE,
        'refine_window': REFINE_WINDOW,
        'threads': DETECTOR_THREADS,
    }

def get_flow_config():
    """Get optical flow configuration"""
    return {
        'levels': FLOW_LEVELS,
        'iters': FLOW_ITERATIONS,
        'window': FLOW_WINDOW,
    }

def get_segmentation_config():
    """Get background-subtraction configuration"""
    return {
        'step': BACKGROUND_STEP,
        'rate': DEVIATION_RATE,
        'sigmas': FOREGROUND_SIGMAS,
        'min_scale': MIN_DEVIATION_SCALE,
    }

def load_config_file(path):
    """
    Parse a flat ``key = value`` configuration file

    Blank lines and ``#`` comments are ignored. Values are converted to int,
    float or bool where they parse as such, otherwise kept as strings.

    Args:
        path (str | Path): Configuration file

    Returns:
        dict: Parsed key/value pairs

    Raises:
        ValueError: On a line without ``=`` (message carries the line number)
    """
    settings = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ValueError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split('=', 1))
            settings[key.replace('-', '_')] = _coerce(value)
    return settings

def _coerce(value):
    lowered = value.lower()
    if lowered in ('true', 'yes', 'on'):
        return True
    if lowered in ('false', 'no', 'off'):
        return False
    if lowered in ('none', ''):
        return None
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value

def validate_config():
    """Validate configuration settings"""
    errors = []

    if BLOCK_SIZE < 2:
        errors.append("BLOCK_SIZE must be at least 2")

    if CALIBRATION_FRAMES < 3:
        errors.append("CALIBRATION_FRAMES must be at least 3")

    if LAMBDA_A <= 0:
        errors.append("LAMBDA_A must be positive")
    if LAMBDA_A_SCALE <= 0:
        errors.append("LAMBDA_A_SCALE must be positive")

    if min(P_MAX, D_MAX, Q_MAX) < 0:
        errors.append("Order bounds must be non-negative")

    if FLOW_LEVELS < 1 or FLOW_WINDOW % 2 == 0:
        errors.append("FLOW_LEVELS must be >= 1 and FLOW_WINDOW odd")

    if not (0 < PIXEL_OVERLAP_RATIO <= 1):
        errors.append("PIXEL_OVERLAP_RATIO must be in (0, 1]")

    return len(errors) == 0, errors
