# Unit test detector
# ==============================================================================
from dataclasses import replace

import numpy as np
import pytest

from core.arima_core import ArimaModel, Order
from core.calibration import CalibrationArtifact
from core.detector import (
    AnomalyDetectionEngine, AnomalyMap, BlockRecord, DecisionStage, DetectorConfig,
    active_grid, block_feature, block_features, config_from_records, detect_block,
    replay_decisions, select_active, spatial_consistency, upsample_blocks
)
from core.exceptions import InsufficientHistoryError, InvalidInputError, NotActiveError
from core.flow import FrameBuffer, MagnitudeField
from core.segmentation import BlockMask
from core.synth import default_scenario, gen_video


def zero_model():
    return ArimaModel(Order(), intercept=0.0, noise_variance=0.0)


# =============================================================================
# Tests for block_feature
# =============================================================================
def test_block_feature_uniform_full_mask():
    mag = MagnitudeField(np.full((10, 10), 2.0, dtype=np.float32))
    assert block_feature(mag, BlockMask(10, np.ones((10, 10))), (0, 0)) == pytest.approx(2.0)


def test_block_feature_restricted_to_foreground():
    rng = np.random.default_rng(0)
    values = rng.uniform(0, 10, (10, 10)).astype(np.float32)
    bits = np.zeros((10, 10))
    bits[:5] = 1
    values[:5] = 2.0
    assert block_feature(MagnitudeField(values), BlockMask(10, bits), (0, 0)) == pytest.approx(2.0)


def test_block_feature_zero_field():
    mag = MagnitudeField.zeros(10, 10)
    assert block_feature(mag, BlockMask(10, np.ones((10, 10))), (0, 0)) == 0.0


def test_block_feature_without_foreground():
    with pytest.raises(NotActiveError):
        block_feature(MagnitudeField.zeros(10, 10), BlockMask(10, np.zeros((10, 10))), (0, 0))


def test_block_features_grid():
    mag = MagnitudeField(np.arange(400, dtype=np.float32).reshape(20, 20))
    fg = np.zeros((20, 20), dtype=bool)
    fg[0, 0] = fg[0, 1] = True
    grid = block_features(mag, fg, 10)
    assert grid[0, 0] == pytest.approx(0.5)
    assert np.isnan(grid[1, 1])


# =============================================================================
# Tests for select_active
# =============================================================================
def single_block(value):
    return np.full((1, 1), value)


def test_isolated_flash_is_inactive():
    mag = MagnitudeField(np.full((10, 10), 5.0, dtype=np.float32))
    active = select_active(single_block(0.0), single_block(0.3), single_block(0.0), mag, 1.0, 10)
    assert active == set()


def test_persistent_foreground_with_motion_is_active():
    mag = MagnitudeField(np.full((10, 10), 2.0, dtype=np.float32))
    active = select_active(single_block(0.3), single_block(0.3), single_block(0.0), mag, 1.0, 10)
    assert active == {(0, 0)}


def test_motion_gate_is_strict():
    mag = MagnitudeField(np.full((10, 10), 1.0, dtype=np.float32))
    active = select_active(single_block(0.3), single_block(0.3), single_block(0.3), mag, 1.0, 10)
    assert active == set()


def test_active_grid_shape_checked():
    mag = MagnitudeField.zeros(20, 20)
    with pytest.raises(InvalidInputError):
        active_grid(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((1, 2)), mag, 1.0, 10)
    with pytest.raises(InvalidInputError):
        active_grid(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((3, 3)), mag, 1.0, 10)


# =============================================================================
# Tests for detect_block
# =============================================================================
@pytest.mark.parametrize("feature, expected", [(0.005, False), (0.02, True), (0.01, False)])
def test_detect_block_threshold(feature, expected):
    rec = BlockRecord((0, 0), zero_model())
    result = detect_block(rec, feature, 0.01)
    assert result.decision is expected
    assert result.score == pytest.approx(feature)


def test_detect_block_warm_up():
    model = ArimaModel(Order(1, 1, 0), ar=[0.5])
    rec = BlockRecord((0, 0), model)
    assert detect_block(rec, 1.0, 0.01) is None
    assert detect_block(rec, 2.0, 0.01) is None
    assert list(rec.feature_history) == [1.0, 2.0]
    result = detect_block(rec, 3.5, 0.01)
    # s = [1, 1.5], prediction 0.5 * 1 = 0.5
    assert result.s_new == pytest.approx(1.5)
    assert result.score == pytest.approx(1.0)


def test_detect_block_keeps_anomalies_out_of_history():
    rec = BlockRecord((0, 0), ArimaModel.constant(1.0))
    detect_block(rec, 1.001, 0.01)
    detect_block(rec, 5.0, 0.01)
    assert list(rec.feature_history) == [1.001]
    assert rec.last_anomalous
    assert rec.accepted_since_refit == 1
    assert list(rec.innovation_history) == pytest.approx([0.001])


def test_detect_block_pads_missing_innovations():
    model = ArimaModel(Order(0, 0, 2), ma=[0.5, 0.5], intercept=1.0)
    rec = BlockRecord((0, 0), model)
    result = detect_block(rec, 1.0, 0.01)
    assert result.score == pytest.approx(0.0)


# =============================================================================
# Tests for spatial_consistency
# =============================================================================
def test_isolated_block_cleared():
    raw = np.zeros((4, 4), dtype=bool)
    raw[1, 1] = True
    assert not spatial_consistency(raw).any()


def test_edge_neighbours_kept():
    raw = np.zeros((4, 4), dtype=bool)
    raw[1, 1] = raw[1, 2] = True
    np.testing.assert_array_equal(spatial_consistency(raw), raw)


def test_diagonal_neighbours_kept():
    raw = np.zeros((4, 4), dtype=bool)
    raw[0, 0] = raw[1, 1] = True
    np.testing.assert_array_equal(spatial_consistency(raw), raw)


def test_spatial_consistency_needs_grid():
    with pytest.raises(InvalidInputError):
        spatial_consistency(np.zeros(4, dtype=bool))


# =============================================================================
# Tests for AnomalyMap
# =============================================================================
def test_anomaly_map_requires_active_blocks():
    with pytest.raises(InvalidInputError):
        AnomalyMap(0, np.ones((1, 1), dtype=bool), np.zeros((1, 1)), np.zeros((1, 1), dtype=bool))


def test_pixel_mask_upsamples_and_clips_to_foreground():
    grid = np.array([[True, False], [False, False]])
    assert upsample_blocks(grid, 10, 25, 23)[:10, :10].all()
    assert upsample_blocks(grid, 10, 25, 23).sum() == 100

    foreground = np.zeros((25, 23), dtype=bool)
    foreground[0, 0] = True
    amap = AnomalyMap(3, grid, np.zeros((2, 2)), grid.copy(), foreground=foreground)
    assert amap.pixel_mask(10, 25, 23, foreground_only=True).sum() == 1
    assert amap.frame_score == 0.0
    assert amap.anomalous_blocks == 1


# =============================================================================
# Tests for DecisionStage
# =============================================================================
def test_decision_stage_refines_after_cadence():
    config = DetectorConfig(n=10, refine_cadence=4, p_max=1, d_max=0, q_max=0)
    stage = DecisionStage(config, ArimaModel.constant(1.0, 0.01), (2, 2))
    active = np.zeros((2, 2), dtype=bool)
    active[0, 0] = True
    features = np.full((2, 2), np.nan)
    rng = np.random.default_rng(2)
    for k in range(4):
        features[0, 0] = 1.0 + 0.001 * rng.standard_normal()
        stage.step(k, active, features, lambda_a=1.0)
    assert stage.refinements == 1
    assert stage.records[(0, 0)].accepted_since_refit == 0
    assert stage.records[(1, 1)].model is stage.theta_init


def test_decision_stage_grid_checked():
    stage = DecisionStage(DetectorConfig(), zero_model(), (2, 2))
    with pytest.raises(InvalidInputError):
        stage.step(0, np.zeros((3, 3), dtype=bool), np.zeros((3, 3)))


def test_decision_stage_histories_start_from_prior():
    prior = [1.0, 1.2, 0.9, 1.1, 1.0, 0.8, 1.2, 1.0, 0.9]
    model = ArimaModel(Order(1, 1, 0), ar=[0.2])
    stage = DecisionStage(DetectorConfig(), model, (2, 2), prior=prior)
    assert stage.level == pytest.approx(np.mean(prior))
    assert all(list(rec.feature_history) == prior for rec in stage.records.values())

    # p + d samples are already there, so the first active frame is decided
    active = np.zeros((2, 2), dtype=bool)
    active[1, 1] = True
    amap = stage.step(10, active, np.where(active, 1.0, np.nan))
    assert amap.decided[1, 1]


def test_decision_stage_threshold_scales_with_level():
    config = DetectorConfig(lambda_a=0.01, lambda_a_scale=50.0)
    scaled = DecisionStage(config, ArimaModel.constant(0.5), (1, 1), prior=[0.5] * 9)
    assert scaled.threshold() == pytest.approx(0.25)
    assert scaled.threshold(0.1) == pytest.approx(2.5)
    assert DecisionStage(config, ArimaModel.constant(0.5), (1, 1)).threshold() == 0.01
    assert DecisionStage(config, ArimaModel.constant(0.0), (1, 1), prior=[0.0] * 9).threshold() == 0.01


def test_decision_stage_flags_only_residuals_above_scaled_threshold():
    # level 1.0 at the default lambda_a gives a residual threshold of 0.5
    stage = DecisionStage(DetectorConfig(), ArimaModel.constant(1.0, 0.01), (1, 2), prior=[1.0] * 9)
    active = np.ones((1, 2), dtype=bool)
    quiet = stage.step(10, active, np.full((1, 2), 1.4))
    assert not quiet.anomalous.any()
    assert quiet.scores == pytest.approx(np.full((1, 2), 0.4))
    loud = stage.step(11, active, np.full((1, 2), 1.6))
    assert loud.anomalous.all()
    assert list(stage.records[(0, 0)].feature_history)[-1] == pytest.approx(1.4)


def test_detector_config_validation():
    with pytest.raises(InvalidInputError):
        DetectorConfig(lambda_a=0.0)
    with pytest.raises(InvalidInputError):
        DetectorConfig(f_frames=2)


def test_detector_config_layers():
    config = DetectorConfig.from_layers({'block_size': 8, 'lambda_a': 0.5}, {'lambda_a': 0.2, 'threads': None})
    assert config.n == 8
    assert config.lambda_a == 0.2
    assert config.threads == 1


# =============================================================================
# Tests for the streaming engine
# =============================================================================
def static_artifact(width, height, config):
    return CalibrationArtifact(width, height, config.n, config.f_frames,
                               ArimaModel.constant(0.5, 0.01), lambda_f=0.1,
                               features=(0.5,) * (config.f_frames - 1))


def test_engine_warm_up_then_maps():
    frames, _ = gen_video(default_scenario('speed-change', seed=1, width=80, height=60, duration=30,
                                           onset=20))
    config = DetectorConfig(n=10, f_frames=10)
    engine = AnomalyDetectionEngine(config)
    outputs = [engine.process_frame(frame) for frame in frames[:12]]
    assert all(out is None for out in outputs[:11])
    assert outputs[11].frame_index == 10
    assert engine.theta_init is not None


def test_engine_static_scene_has_no_active_blocks():
    frame = FrameBuffer(40, 30, np.full((30, 40), 0.4))
    config = DetectorConfig(n=10, f_frames=5)
    engine = AnomalyDetectionEngine(config, artifact=static_artifact(40, 30, config))
    maps = engine.run([frame] * 12)
    assert len(maps) == 12 - 5
    assert all(m.active_blocks == 0 and m.anomalous_blocks == 0 for m in maps)
    # the artifact's calibration series seeds the block histories
    assert engine.stage.prior == (0.5,) * 4
    np.testing.assert_array_equal(engine.block_records()['prior'], [0.5] * 4)


def test_engine_stream_too_short():
    frame = FrameBuffer(40, 30, np.full((30, 40), 0.4))
    engine = AnomalyDetectionEngine(DetectorConfig(n=10, f_frames=5))
    with pytest.raises(InsufficientHistoryError):
        engine.run([frame] * 3)


def test_engine_rejects_size_change():
    config = DetectorConfig(n=10, f_frames=5)
    engine = AnomalyDetectionEngine(config, artifact=static_artifact(40, 30, config))
    engine.process_frame(FrameBuffer(40, 30, np.zeros((30, 40))))
    with pytest.raises(InvalidInputError):
        engine.process_frame(FrameBuffer(30, 40, np.zeros((40, 30))))


def test_engine_artifact_size_checked():
    config = DetectorConfig(n=10, f_frames=5)
    engine = AnomalyDetectionEngine(config, artifact=static_artifact(50, 30, config))
    with pytest.raises(InvalidInputError):
        engine.process_frame(FrameBuffer(40, 30, np.zeros((30, 40))))


@pytest.fixture(scope="module")
def speed_change_run():
    scenario = default_scenario('speed-change', seed=4, width=160, height=120, duration=60)
    frames, gt = gen_video(scenario)
    engine = AnomalyDetectionEngine(DetectorConfig())
    maps = engine.run(frames)
    return scenario, gt, engine, maps


@pytest.mark.slow
def test_speed_change_detected_at_onset(speed_change_run):
    scenario, _, _, maps = speed_change_run
    onset = scenario.anomaly.onset
    window = [m for m in maps if onset <= m.frame_index <= onset + 2]
    assert any(m.anomalous_blocks > 0 for m in window)
    assert max(m.frame_score for m in window) >= 0.5


@pytest.mark.slow
def test_maps_cover_every_frame_after_calibration(speed_change_run):
    scenario, _, engine, maps = speed_change_run
    assert [m.frame_index for m in maps] == list(range(engine.config.f_frames, scenario.duration))


@pytest.mark.slow
def test_replay_reproduces_live_decisions(speed_change_run):
    _, _, engine, maps = speed_change_run
    records = engine.block_records()
    replayed = replay_decisions(records, engine.config, engine.theta_init)
    assert len(replayed) == len(maps)
    for live, again in zip(maps, replayed):
        assert live.frame_index == again.frame_index
        np.testing.assert_array_equal(live.anomalous, again.anomalous)
        np.testing.assert_allclose(live.scores, again.scores)


@pytest.mark.slow
def test_config_from_records(speed_change_run):
    _, _, engine, _ = speed_change_run
    records = engine.block_records()
    config = config_from_records(records, lambda_a=0.5)
    assert config == replace(engine.config, lambda_f=engine.lambda_f, lambda_a=0.5)
    assert config.lambda_a_scale == engine.config.lambda_a_scale


@pytest.mark.slow
def test_no_anomaly_scenario_is_quiet():
    frames, _ = gen_video(default_scenario('none', seed=4))
    engine = AnomalyDetectionEngine(DetectorConfig())
    maps = engine.run(frames)
    assert sum(m.anomalous_blocks for m in maps) == 0


@pytest.mark.slow
def test_throughput_at_360x240():
    frames, _ = gen_video(default_scenario('speed-change', seed=0, width=360, height=240))
    engine = AnomalyDetectionEngine(DetectorConfig())
    engine.run(frames)
    assert engine.throughput >= 10.0
