"""
Command implementations: calibrate, detect, eval, sweep, synth, roc, benchmark

Each command takes the parsed argparse namespace, prints a short summary
and returns an exit code. Failures are raised as AnomalyEngineError
subclasses and mapped to exit codes by main().
"""

import itertools
import json
import logging
from dataclasses import replace
from pathlib import Path

import cv2
import numpy as np

from config.config import (
    ARTIFACT_FILE, BLOCK_RECORDS_FILE, BENCHMARK_FILE, BENCHMARK_SCENARIOS, EXIT_OK,
    OUTPUT_DIR, REPORT_FILE, SCORES_FILE, SWEEP_LAMBDAS, SYNTH_ANOMALY_KINDS,
    get_flow_config, get_segmentation_config, load_config_file
)
from core.arima_core import ArimaModel
from core.batch_processor import BatchProcessor, sweep_lambdas
from core.calibration import CalibrationArtifact, build_calibration_set, calibrate
from core.detector import AnomalyDetectionEngine, DetectorConfig, config_from_records
from core.evaluation import EvalReport, align, evaluate, load_ground_truth, load_scores_csv
from core.exceptions import FormatError, InsufficientHistoryError, InvalidInputError, UsageError
from core.export_manager import ExportManager, load_block_records
from core.flow import ExternalFlowDirectory, InternalFlow, RecordingFlow
from core.segmentation import BackgroundSubtractor, MaskDirectorySegmenter
from core.synth import default_scenario, load_scenario, write_dataset
from core.utils import export_to_csv, export_to_json, iter_frames

logger = logging.getLogger(__name__)

# ============================================================================
# SHARED HELPERS
# ============================================================================

def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} does not exist: {path}")
    return path


def _out_dir(args) -> Path:
    return Path(args.out) if getattr(args, 'out', None) else OUTPUT_DIR


def _file_settings(args) -> dict:
    if not getattr(args, 'config', None):
        return {}
    path = _require(args.config, "Config file")
    try:
        return load_config_file(path)
    except ValueError as e:
        raise UsageError(str(e))


def detector_config(args) -> DetectorConfig:
    """DetectorConfig from module defaults, --config file and CLI flags"""
    overrides = {
        'n': getattr(args, 'block_size', None),
        'f_frames': getattr(args, 'frames_calib', None),
        'lambda_a': getattr(args, 'lambda_a', None),
        'lambda_f': getattr(args, 'lambda_f', None),
        'threads': getattr(args, 'threads', None),
    }
    try:
        return DetectorConfig.from_layers(_file_settings(args), overrides)
    except (InvalidInputError, TypeError) as e:
        raise UsageError(f"Invalid detector configuration: {e}")


def _flow_source(args):
    if getattr(args, 'flow_dir', None):
        return ExternalFlowDirectory(_require(args.flow_dir, "Flow directory"))
    source = InternalFlow(**get_flow_config())
    if getattr(args, 'save_flow', None):
        source = RecordingFlow(source, args.save_flow)
    return source


def _segmenter(args):
    if getattr(args, 'mask_dir', None):
        return MaskDirectorySegmenter(_require(args.mask_dir, "Mask directory"))
    return BackgroundSubtractor(**get_segmentation_config())


def _seed_generators(args):
    """Seed the NumPy and OpenCV generators from --seed"""
    seed = getattr(args, 'seed', None)
    if seed is None:
        return
    np.random.seed(seed)
    cv2.setRNGSeed(seed)
    logger.info(f"Random generators seeded with {seed}")


def _parse_list(text, cast=float):
    if text is None:
        return None
    try:
        return [cast(part) for part in str(text).split(',') if part.strip()]
    except ValueError as e:
        raise UsageError(f"Malformed list '{text}': {e}")

# ============================================================================
# CALIBRATE
# ============================================================================

def cmd_calibrate(args) -> int:
    """Select the initial model on the first F frames and write the calibration artifact"""
    config = detector_config(args)
    _seed_generators(args)
    source = _require(args.input, "Input")
    frames = list(itertools.islice(iter_frames(source), config.f_frames))
    if len(frames) < config.f_frames:
        raise InsufficientHistoryError(
            f"Calibration needs {config.f_frames} frames, {source} has {len(frames)}"
        )

    segmenter = _segmenter(args)
    calibration = build_calibration_set(frames, _flow_source(args), segmenter)
    model, lambda_f = calibrate(calibration, config.p_max, config.d_max, config.q_max)
    if config.lambda_f is not None:
        lambda_f = config.lambda_f

    first = frames[0]
    artifact = CalibrationArtifact(first.width, first.height, config.n, config.f_frames,
                                   model, lambda_f, segmenter.digest(),
                                   tuple(calibration.features.tolist()))
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    artifact.save(out / ARTIFACT_FILE)

    print(f"order (p,d,q) = {model.order}")
    print(f"ar = {list(model.ar)}  ma = {list(model.ma)}  c = {model.intercept:.6g}  "
          f"sigma^2 = {model.noise_variance:.6g}")
    print(f"lambda_f = {lambda_f:.6g}")
    print(f"artifact: {out / ARTIFACT_FILE}")
    return EXIT_OK

# ============================================================================
# DETECT
# ============================================================================

def cmd_detect(args) -> int:
    """Stream the input through the detector and write scores, maps and block records"""
    config = detector_config(args)
    _seed_generators(args)
    source = _require(args.input, "Input")
    artifact = None
    if getattr(args, 'artifact', None):
        artifact = CalibrationArtifact.load(_require(args.artifact, "Calibration artifact"))
        if artifact.f_frames != config.f_frames:
            logger.info(f"Using F={artifact.f_frames} from the calibration artifact")
            config = replace(config, f_frames=artifact.f_frames)

    engine = AnomalyDetectionEngine(config, _flow_source(args), _segmenter(args), artifact)
    maps = engine.run(iter_frames(source))

    height, width = engine.shape
    exporter = ExportManager(_out_dir(args))
    exporter.write_scores(maps)
    exporter.write_maps(maps, config.n, height, width)
    exporter.write_block_records(engine.block_records())
    engine.artifact_for_run().save(exporter.out_dir / ARTIFACT_FILE)

    anomalous = sum(1 for m in maps if m.anomalous_blocks)
    print(f"frames decided: {len(maps)}  frames with anomalies: {anomalous}")
    print(f"throughput: {engine.throughput:.1f} frames/second")
    print(f"outputs: {exporter.out_dir}")
    return EXIT_OK

# ============================================================================
# EVAL / ROC
# ============================================================================

def _scores_path(path: Path) -> Path:
    return path / SCORES_FILE if path.is_dir() else path


def _records_for(scores_path: Path):
    """Block records next to a scores file, if any"""
    records_path = scores_path.parent / BLOCK_RECORDS_FILE
    if not records_path.exists():
        return None
    records = load_block_records(records_path)
    return {
        'frame_index': records['frame_index'],
        'scores': records['scores'],
        'decided': records['decided'],
        'block_size': int(records['block_size']),
    }


def cmd_eval(args) -> int:
    """Frame-level ROC/AUC/EER and, with masks and block records, pixel-level EER"""
    scores_path = _scores_path(_require(args.input, "Scores"))
    gt_path = _require(getattr(args, 'gt', None), "Ground-truth CSV")
    gt_masks = _require(args.gt_masks, "Ground-truth mask directory") if getattr(args, 'gt_masks', None) else None

    scores = load_scores_csv(scores_path)
    gt = load_ground_truth(gt_path, gt_masks)
    index, frame_scores, _ = align(scores, gt)

    block_scores = decided = n = None
    records = _records_for(scores_path) if gt_masks is not None else None
    if records is not None:
        if not np.array_equal(records['frame_index'], scores['frame_index'].to_numpy()):
            raise FormatError(f"Block records do not match the frames of {scores_path}")
        keep = np.isin(records['frame_index'], index)
        block_scores, decided = records['scores'][keep], records['decided'][keep]
        n = records['block_size']

    report = evaluate(index, frame_scores, gt, block_scores, decided, n)
    out = Path(args.out) if getattr(args, 'out', None) else scores_path.parent
    exporter = ExportManager(out)
    exporter.write_report(report)
    if getattr(args, 'pdf', False):
        exporter.export_report_pdf(report)

    print(f"auc = {report.auc:.4f}")
    print(f"frame_eer = {report.frame_eer:.4f}")
    if report.pixel_eer is not None:
        print(f"pixel_eer = {report.pixel_eer:.4f}")
    print(f"report: {exporter.out_dir / REPORT_FILE}")
    return EXIT_OK


def cmd_roc(args) -> int:
    """ROC CSV from a JSON evaluation report"""
    path = _require(args.input, "Report")
    if path.is_dir():
        path = path / REPORT_FILE
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"Cannot read report {path}: {e}")
    report = EvalReport.from_dict(data)
    out = Path(args.out) if getattr(args, 'out', None) else path.parent
    roc_path = ExportManager(out).write_roc(report)
    print(f"{len(report.roc)} ROC points written to {roc_path}")
    return EXIT_OK

# ============================================================================
# SWEEP
# ============================================================================

def cmd_sweep(args) -> int:
    """
    Evaluate a set of lambda_A values

    With --f-grid/--n-grid the input is a frame source and the detector is
    re-run for every (F, N); otherwise the input is a detect run directory
    and only the decision stage is replayed.
    """
    lambdas = _parse_list(getattr(args, 'lambdas', None)) or list(SWEEP_LAMBDAS)
    gt_path = _require(getattr(args, 'gt', None), "Ground-truth CSV")
    gt_masks = _require(args.gt_masks, "Ground-truth mask directory") if getattr(args, 'gt_masks', None) else None
    gt = load_ground_truth(gt_path, gt_masks)
    source = _require(args.input, "Input")

    f_grid = _parse_list(getattr(args, 'f_grid', None), int)
    n_grid = _parse_list(getattr(args, 'n_grid', None), int)
    if f_grid or n_grid:
        config = detector_config(args)
        frames = list(iter_frames(source))
        processor = BatchProcessor(config, max_workers=config.threads)
        rows = processor.run_parameter_grid(frames, gt, f_grid or [config.f_frames],
                                            n_grid or [config.n], lambdas)
    else:
        records_path = source / BLOCK_RECORDS_FILE if source.is_dir() else source
        records = load_block_records(_require(records_path, "Block records"))
        theta = ArimaModel.from_record(str(records['model']))
        try:
            config = config_from_records(records, threads=getattr(args, 'threads', None))
        except InvalidInputError as e:
            raise FormatError(str(e))
        rows = sweep_lambdas(records, config, theta, gt, lambdas)

    exporter = ExportManager(_out_dir(args) if getattr(args, 'out', None) else
                             (source if source.is_dir() else source.parent))
    path = exporter.write_sweep(rows)
    for row in rows:
        print(f"lambda_a={row['lambda_a']:<8g} F={row['f_frames']:<3} N={row['block_size']:<3} "
              f"auc={row.get('auc', float('nan')):.4f} eer={row.get('frame_eer', float('nan')):.4f}")
    print(f"sweep: {path}")
    return EXIT_OK

# ============================================================================
# SYNTH / BENCHMARK
# ============================================================================

def cmd_synth(args) -> int:
    """Render a scenario file (or a default scenario) to a dataset directory"""
    if getattr(args, 'input', None):
        scenario = load_scenario(_require(args.input, "Scenario file"))
    else:
        scenario = default_scenario(args.kind, args.seed if args.seed is not None else 0)
    summary = write_dataset(scenario, _out_dir(args))
    print(f"{summary['frames']} frames ({summary['anomalous_frames']} anomalous) "
          f"written to {summary['frames_dir']}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    """Seeded synth -> detect -> eval over a set of scenarios"""
    config = detector_config(args)
    count = args.scenarios or BENCHMARK_SCENARIOS
    first_seed = args.seed if args.seed is not None else 0
    kinds = _parse_list(getattr(args, 'kinds', None), str) or list(SYNTH_ANOMALY_KINDS)
    scenarios = [default_scenario(kinds[k % len(kinds)], first_seed + k) for k in range(count)]

    processor = BatchProcessor(config, max_workers=config.threads)
    summary = processor.run_scenarios(scenarios)

    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    columns = ['position', 'kind', 'seed', 'success', 'auc', 'frame_eer', 'pixel_eer', 'order', 'error']
    rows = [{k: r.get(k, '') for k in columns} for r in summary['results']]
    export_to_csv(rows, out / BENCHMARK_FILE, columns)
    export_to_json({k: v for k, v in summary.items() if k != 'results'}, out / 'benchmark_summary.json')

    print(f"scenarios: {summary['total']}  failed: {summary['failed']}")
    if summary['mean_auc'] is not None:
        print(f"mean auc = {summary['mean_auc']:.4f}  mean frame_eer = {summary['mean_frame_eer']:.4f}")
    return EXIT_OK


COMMANDS = {
    'calibrate': cmd_calibrate,
    'detect': cmd_detect,
    'eval': cmd_eval,
    'sweep': cmd_sweep,
    'synth': cmd_synth,
    'roc': cmd_roc,
    'benchmark': cmd_benchmark,
}
