"""
Non-Stationary Video Anomaly Detector
Main Application Entry Point
"""

import sys
import argparse
import logging
from logging.handlers import RotatingFileHandler

from config.config import (
    APP_NAME, APP_VERSION, EXIT_USAGE, LOG_BACKUP_COUNT, LOG_FILE, LOG_FORMAT, LOG_LEVEL,
    LOGS_DIR, MAX_LOG_SIZE, SYNTH_ANOMALY_KINDS, create_directories, validate_config
)
from core.exceptions import AnomalyEngineError

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False):
    """Console and rotating file logging"""
    handlers = [logging.StreamHandler()]
    try:
        LOGS_DIR.mkdir(parents=True, exist_ok=True)
        handlers.append(RotatingFileHandler(
            LOGS_DIR / LOG_FILE, maxBytes=MAX_LOG_SIZE, backupCount=LOG_BACKUP_COUNT
        ))
    except OSError as e:
        file_error = e
    else:
        file_error = None

    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, LOG_LEVEL),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True
    )
    if file_error is not None:
        logger.warning(f"File logging disabled, cannot open {LOGS_DIR / LOG_FILE}: {file_error}")

# ============================================================================
# ARGUMENT PARSER
# ============================================================================

def _add_detector_options(parser):
    parser.add_argument('--config', help='key = value settings file')
    parser.add_argument('--block-size', type=int, help='block side N in pixels')
    parser.add_argument('--frames-calib', type=int, help='calibration length F in frames')
    parser.add_argument('--lambda-a', type=float, help='anomaly threshold on the differenced feature')
    parser.add_argument('--lambda-f', type=float, help='flow-activity threshold (default: from calibration)')
    parser.add_argument('--threads', type=int, help='worker threads for per-block refits')


def _add_seed_option(parser):
    parser.add_argument('--seed', type=int, help='seed for the NumPy and OpenCV generators')


def _add_source_options(parser):
    parser.add_argument('--flow-dir', help='precomputed flow_<index>.flo files')
    parser.add_argument('--save-flow', help='write the computed flow fields to this directory')
    parser.add_argument('--mask-dir', help='precomputed mask_<index>.pgm foreground masks')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='main.py', description=APP_NAME)
    parser.add_argument('--version', action='version', version=f"{APP_NAME} {APP_VERSION}")
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('calibrate', help='select the initial model from the first F frames')
    p.add_argument('--input', required=True, help='frame directory or .y4m file')
    p.add_argument('--out', help='output directory')
    _add_detector_options(p)
    _add_source_options(p)
    _add_seed_option(p)

    p = sub.add_parser('detect', help='run the streaming detector')
    p.add_argument('--input', required=True, help='frame directory or .y4m file')
    p.add_argument('--out', help='output directory')
    p.add_argument('--artifact', help='calibration artifact to reuse')
    _add_detector_options(p)
    _add_source_options(p)
    _add_seed_option(p)

    p = sub.add_parser('eval', help='frame and pixel level evaluation of a run')
    p.add_argument('--input', required=True, help='run directory or scores CSV')
    p.add_argument('--gt', required=True, help='ground-truth CSV (frame_index, anomalous)')
    p.add_argument('--gt-masks', help='ground-truth mask directory')
    p.add_argument('--out', help='output directory (default: next to the scores)')
    p.add_argument('--pdf', action='store_true', help='also write report.pdf')

    p = sub.add_parser('sweep', help='evaluate several lambda_A (and optionally F, N) values')
    p.add_argument('--input', required=True, help='run directory, or frame source with --f-grid/--n-grid')
    p.add_argument('--gt', required=True, help='ground-truth CSV')
    p.add_argument('--gt-masks', help='ground-truth mask directory')
    p.add_argument('--lambdas', help='comma separated lambda_A values')
    p.add_argument('--f-grid', help='comma separated calibration lengths')
    p.add_argument('--n-grid', help='comma separated block sizes')
    p.add_argument('--out', help='output directory')
    _add_detector_options(p)

    p = sub.add_parser('synth', help='render a synthetic dataset')
    p.add_argument('--input', help='scenario file (default: built-in scenario)')
    p.add_argument('--kind', default=SYNTH_ANOMALY_KINDS[0],
                   choices=list(SYNTH_ANOMALY_KINDS) + ['none'])
    p.add_argument('--seed', type=int)
    p.add_argument('--out', help='output directory')

    p = sub.add_parser('roc', help='ROC CSV from an evaluation report')
    p.add_argument('--input', required=True, help='report.json or its directory')
    p.add_argument('--out', help='output directory')

    p = sub.add_parser('benchmark', help='synthetic scenarios through detect and eval')
    p.add_argument('--scenarios', type=int, help='number of scenarios')
    p.add_argument('--seed', type=int, help='first seed')
    p.add_argument('--kinds', help='comma separated anomaly kinds')
    p.add_argument('--out', help='output directory')
    _add_detector_options(p)

    return parser

# ============================================================================
# MAIN
# ============================================================================

def main(argv=None) -> int:
    """Main application function"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0

    setup_logging(args.verbose)
    from cli.commands import COMMANDS

    try:
        logger.info(f"Starting {APP_NAME} v{APP_VERSION}: {args.command}")
        create_directories()
        valid, errors = validate_config()
        if not valid:
            for error in errors:
                logger.error(f"Configuration error: {error}")
            return EXIT_USAGE
        return COMMANDS[args.command](args)

    except AnomalyEngineError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code

    except Exception as e:
        logger.critical(f"Critical error in {args.command}: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
