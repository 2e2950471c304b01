# Unit test evaluation
# ==============================================================================
import numpy as np
import pytest

from core.evaluation import (
    EvalReport, GroundTruth, align, equal_error_rate, evaluate, frame_metrics,
    load_ground_truth, load_scores_csv, pairwise_auc, pixel_eer, pixel_level_decision,
    pixel_masks_at, roc_curve, sweep_thresholds, threshold_scores, trapezoid_area
)
from core.exceptions import FormatError, InvalidInputError, UndefinedMetricError
from core.utils import write_mask


def brute_force_rates(scores, labels):
    """FPR/FNR at every distinct score and -inf, by direct counting"""
    fpr, fnr = [], []
    for t in list(np.unique(scores)[::-1]) + [-np.inf]:
        flagged = [s > t for s in scores]
        fp = sum(f and not l for f, l in zip(flagged, labels))
        fn = sum(l and not f for f, l in zip(flagged, labels))
        fpr.append(fp / sum(not l for l in labels))
        fnr.append(fn / sum(labels))
    return np.array(fpr), np.array(fnr)


# =============================================================================
# Tests for frame_metrics
# =============================================================================
def test_perfect_separation():
    report = frame_metrics([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
    assert report.auc == pytest.approx(1.0)
    assert report.frame_eer == pytest.approx(0.0)
    assert report.roc[0] == (0.0, 0.0)
    assert report.roc[-1] == (1.0, 1.0)


def test_identical_scores_are_a_coin_flip():
    report = frame_metrics([0.5, 0.5, 0.5, 0.5], [1, 1, 0, 0])
    assert report.auc == pytest.approx(0.5)


def test_interleaved_scores():
    report = frame_metrics([0.9, 0.2, 0.8, 0.1], [1, 1, 0, 0])
    assert report.auc == pytest.approx(0.75)
    assert report.frame_eer == pytest.approx(0.5)
    assert report.frames == 4
    assert report.positives == 2


def test_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        frame_metrics([0.1, 0.2], [0, 0])
    with pytest.raises(UndefinedMetricError):
        frame_metrics([0.1, 0.2], [1, 1])


def test_metrics_reject_non_finite_scores():
    with pytest.raises(InvalidInputError):
        frame_metrics([np.nan, 0.2], [0, 1])


def test_trapezoid_auc_equals_pairwise_auc():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(4, 40))
        labels = rng.random(n) < 0.4
        labels[0], labels[1] = True, False
        # rounding creates ties
        scores = np.round(rng.random(n) + 0.3 * labels, 1)
        fpr, tpr, _ = roc_curve(scores, labels)
        assert abs(trapezoid_area(fpr, tpr) - pairwise_auc(scores, labels)) <= 1e-9


def test_roc_matches_brute_force_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(4, 25))
        labels = rng.random(n) < 0.5
        labels[0], labels[1] = True, False
        scores = np.round(rng.random(n), 2)
        fpr, tpr, _ = roc_curve(scores, labels)
        bf_fpr, bf_fnr = brute_force_rates(scores.tolist(), labels.tolist())
        np.testing.assert_allclose(fpr, bf_fpr, atol=1e-12)
        np.testing.assert_allclose(1.0 - tpr, bf_fnr, atol=1e-12)
        assert abs(equal_error_rate(fpr, 1.0 - tpr) - equal_error_rate(bf_fpr, bf_fnr)) <= 1e-9


# =============================================================================
# Tests for equal_error_rate
# =============================================================================
def test_eer_interpolates_crossing():
    # FPR - FNR goes from -0.5 to +0.5 between the two points
    assert equal_error_rate([0.0, 0.6], [0.5, 0.1]) == pytest.approx(0.3)


def test_eer_without_crossing_takes_boundary():
    assert equal_error_rate([0.0, 0.0], [1.0, 1.0]) == pytest.approx(1.0)


def test_eer_input_checked():
    with pytest.raises(InvalidInputError):
        equal_error_rate([0.1], [0.1, 0.2])


# =============================================================================
# Tests for pixel-level metrics
# =============================================================================
def gt_mask(count, shape=(20, 20)):
    mask = np.zeros(shape, dtype=bool)
    mask.flat[:count] = True
    return mask


def test_pixel_decision_forty_percent_rule():
    gt = gt_mask(100)
    assert pixel_level_decision(gt_mask(45), gt)
    assert not pixel_level_decision(gt_mask(30), gt)
    assert pixel_level_decision(gt_mask(40), gt)
    assert not pixel_level_decision(gt_mask(39), gt)


def test_pixel_decision_normal_frame():
    empty = np.zeros((20, 20), dtype=bool)
    assert not pixel_level_decision(empty, empty)
    assert pixel_level_decision(gt_mask(1), empty)


def test_pixel_decision_shape_checked():
    with pytest.raises(InvalidInputError):
        pixel_level_decision(np.zeros((2, 2)), np.zeros((3, 3)))


def block_aligned_case(frames=6, anomalous_from=3, n=10):
    """Ground truth covering a 2x2 block cluster on the anomalous frames"""
    masks = np.zeros((frames, 40, 40), dtype=bool)
    masks[anomalous_from:, 10:30, 10:30] = True
    gt = GroundTruth(np.arange(frames) >= anomalous_from, masks)
    scores = np.zeros((frames, 4, 4))
    scores[anomalous_from:, 1:3, 1:3] = 1.0
    decided = np.ones((frames, 4, 4), dtype=bool)
    return scores, decided, gt


def test_pixel_eer_perfect_detector():
    scores, decided, gt = block_aligned_case()
    assert pixel_eer(scores, decided, gt, 10) == pytest.approx(0.0)


def test_pixel_eer_no_decisions():
    scores, _, gt = block_aligned_case()
    decided = np.zeros_like(scores, dtype=bool)
    assert pixel_eer(scores, decided, gt, 10) == pytest.approx(1.0)


def test_pixel_eer_misplaced_detections():
    scores, decided, gt = block_aligned_case()
    # the flagged cluster sits next to the ground truth on every frame
    scores[:] = 0.0
    scores[:, 0:2, 3] = 1.0
    value = pixel_eer(scores, decided, gt, 10)
    assert value >= 0.5


def test_pixel_eer_needs_masks():
    scores, decided, gt = block_aligned_case()
    with pytest.raises(InvalidInputError):
        pixel_eer(scores, decided, GroundTruth(gt.flags), 10)


def test_threshold_scores_applies_spatial_consistency():
    scores = np.zeros((3, 3))
    scores[0, 0] = scores[2, 2] = 0.5
    scores[1, 1] = 0.05
    decided = np.ones((3, 3), dtype=bool)
    assert not threshold_scores(scores, decided, 0.1).any()
    kept = threshold_scores(scores, decided, 0.01)
    assert kept[0, 0] and kept[1, 1] and kept[2, 2]


def test_pixel_masks_at_matches_pixel_decision():
    scores, decided, gt = block_aligned_case()
    masks = pixel_masks_at(scores, decided, 0.5, 10, 42, 43)
    assert masks.shape == (6, 42, 43)
    # trailing pixels outside the block grid are never flagged
    assert not masks[:, 40:, :].any() and not masks[:, :, 40:].any()
    decisions = [pixel_level_decision(m[:40, :40], g) for m, g in zip(masks, gt.masks)]
    assert decisions == [False, False, False, True, True, True]


def test_sweep_thresholds_are_decreasing_and_capped():
    scores = np.random.default_rng(3).random((10, 8, 8))
    decided = np.ones_like(scores, dtype=bool)
    thresholds = sweep_thresholds(scores, decided, limit=50)
    assert len(thresholds) <= 51
    assert thresholds[-1] == -np.inf
    assert np.all(np.diff(thresholds[:-1]) < 0)


def test_pixel_eer_of_random_detector_is_a_coin_flip():
    # every block of a frame shares one random score, so each threshold
    # flags whole frames independently of the ground truth
    values = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        flags = rng.random(40) < 0.5
        masks = np.zeros((40, 40, 40), dtype=bool)
        for k in np.flatnonzero(flags):
            r, c = rng.integers(0, 30, size=2)
            masks[k, r:r + 10, c:c + 10] = True
        scores = np.repeat(rng.random(40), 16).reshape(40, 4, 4)
        decided = np.ones((40, 4, 4), dtype=bool)
        values.append(pixel_eer(scores, decided, GroundTruth(flags, masks), 10))
    assert abs(float(np.mean(values)) - 0.5) <= 0.05


def test_flagged_blocks_shrink_as_lambda_grows():
    rng = np.random.default_rng(8)
    scores = rng.exponential(0.05, size=(30, 6, 6))
    decided = rng.random((30, 6, 6)) < 0.8
    flagged = [threshold_scores(scores, decided, lam) for lam in (0.001, 0.005, 0.01, 0.1, 1.0)]
    for looser, tighter in zip(flagged, flagged[1:]):
        assert not np.any(tighter & ~looser)
    assert flagged[0].sum() > flagged[3].sum()


# =============================================================================
# Tests for evaluate and input files
# =============================================================================
def test_evaluate_with_pixel_level():
    scores, decided, gt = block_aligned_case()
    frame_scores = scores.reshape(len(scores), -1).max(axis=1)
    report = evaluate(np.arange(6), frame_scores, gt, scores, decided, 10)
    assert report.auc == pytest.approx(1.0)
    assert report.pixel_eer == pytest.approx(0.0)


def test_evaluate_rejects_unknown_frames():
    with pytest.raises(InvalidInputError):
        evaluate([0, 9], [0.1, 0.2], GroundTruth([0, 1]))


def test_report_dict_round_trip():
    report = frame_metrics([0.9, 0.2, 0.8, 0.1], [1, 1, 0, 0])
    again = EvalReport.from_dict(report.to_dict())
    assert again.roc == report.roc
    assert again.auc == report.auc
    assert again.pixel_eer is None


def test_report_from_malformed_dict():
    with pytest.raises(FormatError):
        EvalReport.from_dict({'auc': 0.5})


def test_load_scores_reports_line_number(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text(
        "frame_index,frame_score,active_blocks,anomalous_blocks\n"
        "10,0.5,3,0\n"
        "11,abc,3,0\n",
        encoding='utf-8'
    )
    with pytest.raises(FormatError) as excinfo:
        load_scores_csv(path)
    assert excinfo.value.line == 3


def test_load_scores_missing_column(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("frame_index,frame_score\n10,0.5\n", encoding='utf-8')
    with pytest.raises(FormatError):
        load_scores_csv(path)


def test_load_ground_truth_with_masks(tmp_path):
    (tmp_path / "gt.csv").write_text("frame_index,anomalous\n0,0\n1,1\n", encoding='utf-8')
    masks = tmp_path / "masks"
    masks.mkdir()
    write_mask(masks / "mask_000000.pgm", np.zeros((5, 6), dtype=bool))
    write_mask(masks / "mask_000001.pgm", np.ones((5, 6), dtype=bool))
    gt = load_ground_truth(tmp_path / "gt.csv", masks)
    np.testing.assert_array_equal(gt.flags, [False, True])
    assert gt.shape == (5, 6)
    assert gt.masks[1].all()


def test_load_ground_truth_requires_dense_index(tmp_path):
    path = tmp_path / "gt.csv"
    path.write_text("frame_index,anomalous\n0,0\n2,1\n", encoding='utf-8')
    with pytest.raises(FormatError):
        load_ground_truth(path)


def test_align_drops_frames_without_ground_truth(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text(
        "frame_index,frame_score,active_blocks,anomalous_blocks\n"
        "1,0.25,1,0\n"
        "5,0.75,1,1\n",
        encoding='utf-8'
    )
    index, scores, flags = align(load_scores_csv(path), GroundTruth([0, 1, 1]))
    np.testing.assert_array_equal(index, [1])
    np.testing.assert_array_equal(scores, [0.25])
    np.testing.assert_array_equal(flags, [True])
