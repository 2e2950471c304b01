# Unit test batch processor
# ==============================================================================
import pytest

from core.batch_processor import BatchProcessor, sweep_lambdas
from core.detector import AnomalyDetectionEngine, DetectorConfig
from core.synth import BlobSpec, Scenario, default_scenario, gen_video


def small_scenario(seed=4):
    return default_scenario('speed-change', seed=seed, width=96, height=72, duration=36)


def leaving_scenario():
    return Scenario(200, 60, 100, (BlobSpec(150.0, 30.0, vx=1.0),))


# =============================================================================
# Tests for run_scenarios
# =============================================================================
def test_failing_scenario_is_counted():
    summary = BatchProcessor(max_workers=2).run_scenarios([leaving_scenario()])
    assert summary['total'] == 1
    assert summary['failed'] == 1
    assert summary['successful'] == 0
    assert summary['mean_auc'] is None
    row = summary['results'][0]
    assert row['success'] is False
    assert 'leaves the frame' in row['error']


@pytest.mark.slow
def test_run_scenarios_summary():
    summary = BatchProcessor(max_workers=2).run_scenarios([leaving_scenario(), small_scenario()])
    assert summary['total'] == 2
    assert summary['successful'] == 1
    assert summary['failed'] == 1
    assert [r['position'] for r in summary['results']] == [0, 1]

    row = summary['results'][1]
    assert row['success'] is True
    assert row['kind'] == 'speed-change'
    assert 0.0 <= row['auc'] <= 1.0
    assert 0.0 <= row['pixel_eer'] <= 1.0
    assert row['fps'] > 0
    assert summary['mean_auc'] == pytest.approx(row['auc'])


# =============================================================================
# Tests for parameter sweeps
# =============================================================================
@pytest.fixture(scope='module')
def small_run():
    frames, gt = gen_video(small_scenario())
    config = DetectorConfig()
    engine = AnomalyDetectionEngine(config)
    engine.run(frames)
    return frames, gt, config, engine


@pytest.mark.slow
def test_sweep_lambdas_one_row_per_threshold(small_run):
    _, gt, config, engine = small_run
    rows = sweep_lambdas(engine.block_records(), config, engine.theta_init, gt, [0.01, 0.5, 5.0])
    assert [r['lambda_a'] for r in rows] == [0.01, 0.5, 5.0]
    assert all(r['block_size'] == 10 and r['f_frames'] == 10 for r in rows)
    assert all(0.0 <= r['auc'] <= 1.0 for r in rows)


@pytest.mark.slow
def test_parameter_grid_rows_are_ordered(small_run):
    frames, gt, config, _ = small_run
    rows = BatchProcessor(config, max_workers=2).run_parameter_grid(
        frames, gt, f_values=[10, 8], n_values=[12], lambdas=[1.0, 0.01]
    )
    keys = [(r['f_frames'], r['block_size'], r['lambda_a']) for r in rows]
    assert keys == [(8, 12, 0.01), (8, 12, 1.0), (10, 12, 0.01), (10, 12, 1.0)]


@pytest.mark.slow
def test_default_scenarios_are_detected():
    scenarios = [default_scenario(kind, seed) for kind in ('speed-change', 'new-object')
                 for seed in range(10)]
    summary = BatchProcessor(max_workers=4).run_scenarios(scenarios)
    assert summary['failed'] == 0
    assert summary['mean_auc'] >= 0.95
    assert summary['mean_frame_eer'] <= 0.10
