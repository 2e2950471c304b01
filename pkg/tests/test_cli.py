# Unit test command line
# ==============================================================================
import json

import numpy as np
import pandas as pd
import pytest

from config.config import EXIT_DATA, EXIT_DEGENERATE, EXIT_OK, EXIT_USAGE, SWEEP_LAMBDAS
from main import main, setup_logging

SCENARIO = "anomaly = speed-change\nseed = 4\nwidth = 96\nheight = 72\nduration = 36\n"


@pytest.fixture(scope='module')
def detect_run(tmp_path_factory):
    """Synthetic dataset and one detect run on it"""
    root = tmp_path_factory.mktemp("cli")
    scenario = root / "scenario.conf"
    scenario.write_text(SCENARIO, encoding='utf-8')
    data, run = root / "data", root / "run"
    assert main(['synth', '--input', str(scenario), '--out', str(data)]) == EXIT_OK
    assert main(['detect', '--input', str(data), '--out', str(run),
                 '--save-flow', str(root / "flow")]) == EXIT_OK
    return {'root': root, 'data': data, 'run': run, 'flow': root / "flow"}


# =============================================================================
# Tests for argument handling
# =============================================================================
def test_version_exits_cleanly():
    assert main(['--version']) == EXIT_OK


def test_missing_subcommand_is_usage_error():
    assert main([]) == EXIT_USAGE


def test_missing_required_option_is_usage_error():
    assert main(['detect']) == EXIT_USAGE


def test_missing_input_is_usage_error(tmp_path):
    assert main(['detect', '--input', str(tmp_path / "absent"), '--out', str(tmp_path)]) == EXIT_USAGE


def test_malformed_config_is_usage_error(tmp_path, static_frames_dir):
    config = tmp_path / "bad.conf"
    config.write_text("block_size 10\n", encoding='utf-8')
    code = main(['calibrate', '--input', str(static_frames_dir), '--config', str(config),
                 '--out', str(tmp_path / "out")])
    assert code == EXIT_USAGE


def test_invalid_config_value_is_usage_error(tmp_path, static_frames_dir):
    code = main(['calibrate', '--input', str(static_frames_dir), '--frames-calib', '1',
                 '--out', str(tmp_path / "out")])
    assert code == EXIT_USAGE


# =============================================================================
# Tests for calibrate
# =============================================================================
def test_calibrate_static_frames_is_degenerate(tmp_path, static_frames_dir):
    code = main(['calibrate', '--input', str(static_frames_dir), '--out', str(tmp_path / "out")])
    assert code == EXIT_DEGENERATE


def test_calibrate_too_few_frames(tmp_path, static_frames_dir):
    code = main(['calibrate', '--input', str(static_frames_dir), '--frames-calib', '20',
                 '--out', str(tmp_path / "out")])
    assert code == EXIT_DATA


@pytest.mark.slow
def test_calibrate_writes_artifact(detect_run, tmp_path):
    out = tmp_path / "calib"
    assert main(['calibrate', '--input', str(detect_run['data']), '--out', str(out)]) == EXIT_OK
    text = (out / "calibration.txt").read_text(encoding='utf-8')
    assert "lambda_f" in text
    assert "noise_variance" in text
    assert "features = " in text


@pytest.mark.slow
def test_calibrate_and_detect_accept_seed(detect_run, tmp_path):
    assert main(['calibrate', '--input', str(detect_run['data']), '--seed', '5',
                 '--out', str(tmp_path / "calib")]) == EXIT_OK
    assert main(['detect', '--input', str(detect_run['data']), '--seed', '5',
                 '--flow-dir', str(detect_run['flow']), '--out', str(tmp_path / "run")]) == EXIT_OK
    first = (detect_run['run'] / "scores.csv").read_text(encoding='utf-8')
    assert (tmp_path / "run" / "scores.csv").read_text(encoding='utf-8') == first


def test_unwritable_log_directory_is_reported(tmp_path, monkeypatch):
    blocked = tmp_path / "not_a_directory"
    blocked.write_text("", encoding='utf-8')
    messages = []
    monkeypatch.setattr('main.LOGS_DIR', blocked / "logs")
    monkeypatch.setattr('main.logger.warning', messages.append)
    setup_logging()
    assert len(messages) == 1
    assert "File logging disabled" in messages[0]


# =============================================================================
# Tests for synth
# =============================================================================
def test_synth_default_scenario(tmp_path):
    out = tmp_path / "normal"
    assert main(['synth', '--kind', 'none', '--seed', '3', '--out', str(out)]) == EXIT_OK
    gt = pd.read_csv(out / "gt.csv")
    assert len(gt) == 60
    assert gt['anomalous'].sum() == 0
    assert len(list(out.glob("frame_*.pgm"))) == 60


def test_synth_bad_scenario_file(tmp_path):
    scenario = tmp_path / "scenario.conf"
    scenario.write_text("blob0 = 20,20,5,1,0,0.8\nanomaly = speed-change\n", encoding='utf-8')
    assert main(['synth', '--input', str(scenario), '--out', str(tmp_path / "out")]) == EXIT_DATA


# =============================================================================
# Tests for eval and roc
# =============================================================================
def write_scores(path, scores):
    rows = ["frame_index,frame_score,active_blocks,anomalous_blocks"]
    rows += [f"{k},{s},1,0" for k, s in enumerate(scores)]
    path.write_text('\n'.join(rows) + '\n', encoding='utf-8')


def write_gt(path, flags):
    rows = ["frame_index,anomalous"] + [f"{k},{f}" for k, f in enumerate(flags)]
    path.write_text('\n'.join(rows) + '\n', encoding='utf-8')


def test_eval_perfect_separation(tmp_path):
    write_scores(tmp_path / "scores.csv", [0.1, 0.2, 0.1, 0.9, 0.8, 0.95])
    write_gt(tmp_path / "gt.csv", [0, 0, 0, 1, 1, 1])
    code = main(['eval', '--input', str(tmp_path / "scores.csv"), '--gt', str(tmp_path / "gt.csv")])
    assert code == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text(encoding='utf-8'))
    assert report['auc'] == pytest.approx(1.0)
    assert report['frame_eer'] == pytest.approx(0.0)
    assert report['pixel_eer'] is None


def test_eval_single_class_ground_truth(tmp_path):
    write_scores(tmp_path / "scores.csv", [0.1, 0.2, 0.3])
    write_gt(tmp_path / "gt.csv", [0, 0, 0])
    code = main(['eval', '--input', str(tmp_path / "scores.csv"), '--gt', str(tmp_path / "gt.csv")])
    assert code == EXIT_DATA


def test_eval_malformed_scores(tmp_path):
    (tmp_path / "scores.csv").write_text("frame_index,frame_score\n0,x\n", encoding='utf-8')
    write_gt(tmp_path / "gt.csv", [0, 1])
    code = main(['eval', '--input', str(tmp_path / "scores.csv"), '--gt', str(tmp_path / "gt.csv")])
    assert code == EXIT_DATA


def test_roc_from_report(tmp_path):
    write_scores(tmp_path / "scores.csv", [0.9, 0.2, 0.8, 0.1])
    write_gt(tmp_path / "gt.csv", [1, 1, 0, 0])
    assert main(['eval', '--input', str(tmp_path / "scores.csv"), '--gt', str(tmp_path / "gt.csv")]) == EXIT_OK
    assert main(['roc', '--input', str(tmp_path)]) == EXIT_OK
    roc = pd.read_csv(tmp_path / "roc.csv")
    assert list(roc.columns) == ['fpr', 'tpr']
    assert (roc.iloc[0]['fpr'], roc.iloc[0]['tpr']) == (0.0, 0.0)
    assert (roc.iloc[-1]['fpr'], roc.iloc[-1]['tpr']) == (1.0, 1.0)


def test_roc_missing_report(tmp_path):
    assert main(['roc', '--input', str(tmp_path / "report.json")]) == EXIT_USAGE


# =============================================================================
# Tests for the full pipeline
# =============================================================================
@pytest.mark.slow
def test_detect_outputs(detect_run):
    run = detect_run['run']
    scores = pd.read_csv(run / "scores.csv")
    # frames F..end are decided
    assert scores['frame_index'].tolist() == list(range(10, 36))
    assert (run / "block_records.npz").exists()
    assert (run / "calibration.txt").exists()
    assert len(list((run / "maps").glob("pixel_*.pgm"))) == 26


@pytest.mark.slow
def test_eval_pipeline_with_pixel_level(detect_run, tmp_path):
    data = detect_run['data']
    code = main(['eval', '--input', str(detect_run['run']), '--gt', str(data / "gt.csv"),
                 '--gt-masks', str(data / "masks"), '--out', str(tmp_path), '--pdf'])
    assert code == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text(encoding='utf-8'))
    assert 0.0 <= report['auc'] <= 1.0
    assert 0.0 <= report['pixel_eer'] <= 1.0
    assert (tmp_path / "report.pdf").exists()


@pytest.mark.slow
def test_sweep_replays_every_lambda(detect_run, tmp_path):
    data = detect_run['data']
    code = main(['sweep', '--input', str(detect_run['run']), '--gt', str(data / "gt.csv"),
                 '--out', str(tmp_path)])
    assert code == EXIT_OK
    sweep = pd.read_csv(tmp_path / "sweep.csv")
    assert len(sweep) == len(SWEEP_LAMBDAS) == 5
    assert sweep['lambda_a'].tolist() == pytest.approx(list(SWEEP_LAMBDAS))


@pytest.mark.slow
@pytest.mark.parametrize('lambda_a', [0.005, 0.1])
def test_sweep_row_matches_full_detect_run(detect_run, tmp_path, lambda_a):
    data = detect_run['data']
    assert main(['sweep', '--input', str(detect_run['run']), '--gt', str(data / "gt.csv"),
                 '--lambdas', str(lambda_a), '--out', str(tmp_path / "sweep")]) == EXIT_OK
    row = pd.read_csv(tmp_path / "sweep" / "sweep.csv").iloc[0]

    run = tmp_path / "run"
    assert main(['detect', '--input', str(data), '--lambda-a', str(lambda_a),
                 '--flow-dir', str(detect_run['flow']), '--out', str(run)]) == EXIT_OK
    assert main(['eval', '--input', str(run), '--gt', str(data / "gt.csv")]) == EXIT_OK
    report = json.loads((run / "report.json").read_text(encoding='utf-8'))
    assert row['auc'] == pytest.approx(report['auc'], abs=1e-12)
    assert row['frame_eer'] == pytest.approx(report['frame_eer'], abs=1e-12)


def run_pipeline(root):
    root.mkdir()
    scenario = root / "scenario.conf"
    scenario.write_text(SCENARIO, encoding='utf-8')
    data, run = root / "data", root / "run"
    assert main(['synth', '--input', str(scenario), '--out', str(data)]) == EXIT_OK
    assert main(['detect', '--input', str(data), '--out', str(run), '--seed', '7']) == EXIT_OK
    assert main(['eval', '--input', str(run), '--gt', str(data / "gt.csv"),
                 '--gt-masks', str(data / "masks"), '--out', str(root / "eval")]) == EXIT_OK
    return sorted(p.relative_to(root) for p in root.rglob('*') if p.is_file())


@pytest.mark.slow
def test_pipeline_outputs_identical_across_runs(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    files = run_pipeline(first)
    assert run_pipeline(second) == files
    for rel in files:
        if rel.suffix == '.npz':
            with np.load(first / rel) as a, np.load(second / rel) as b:
                assert a.files == b.files
                for key in a.files:
                    np.testing.assert_array_equal(a[key], b[key])
        else:
            assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel


@pytest.mark.slow
def test_saved_flow_reproduces_scores(detect_run, tmp_path):
    code = main(['detect', '--input', str(detect_run['data']), '--out', str(tmp_path),
                 '--flow-dir', str(detect_run['flow'])])
    assert code == EXIT_OK
    first = (detect_run['run'] / "scores.csv").read_text(encoding='utf-8')
    assert (tmp_path / "scores.csv").read_text(encoding='utf-8') == first


@pytest.mark.slow
def test_detect_with_artifact(detect_run, tmp_path):
    code = main(['detect', '--input', str(detect_run['data']), '--out', str(tmp_path),
                 '--artifact', str(detect_run['run'] / "calibration.txt")])
    assert code == EXIT_OK
    first = (detect_run['run'] / "scores.csv").read_text(encoding='utf-8')
    assert (tmp_path / "scores.csv").read_text(encoding='utf-8') == first
