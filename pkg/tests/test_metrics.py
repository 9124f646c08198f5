import numpy as np
import pytest

from dopplertrack.core import InstanceLabeling
from dopplertrack.metrics import (
    association_score,
    evaluate,
    match_frame,
    match_sequence,
    motsa,
    motsp,
    smotsa,
)


def labeling(*frames):
    return InstanceLabeling([np.asarray(f, dtype=np.uint32) for f in frames])


def test_match_frame_perfect():
    gt = np.array([0, 1, 1, 2, 2, 2], dtype=np.uint32)
    res = match_frame(gt, gt)
    assert sorted((g, p) for g, p, _ in res.tp) == [(1, 1), (2, 2)]
    assert all(iou == 1.0 for _, _, iou in res.tp)
    assert res.fp_ids == [] and res.fn_ids == []


def test_match_frame_half_cover_is_boundary():
    gt = np.zeros(100, dtype=np.uint32)
    gt[:100] = 1
    pred = np.zeros(100, dtype=np.uint32)
    pred[:50] = 7  # covers exactly half: IoU = 0.5, NOT > 0.5
    res = match_frame(gt, pred)
    assert res.tp == []
    assert res.fn_ids == [1] and res.fp_ids == [7]


def test_match_frame_length_mismatch():
    with pytest.raises(ValueError):
        match_frame(np.zeros(3, dtype=np.uint32), np.zeros(4, dtype=np.uint32))


def test_id_switch_counting():
    gt = labeling([1, 1, 1, 0], [1, 1, 1, 0], [1, 1, 1, 0])
    pred = labeling([7, 7, 7, 0], [7, 7, 7, 0], [9, 9, 9, 0])
    _, ids = match_sequence(gt, pred)
    assert ids == 1


def test_id_switch_persists_through_unmatched_frames():
    gt = labeling([1, 1, 1, 1], [1, 1, 1, 1], [1, 1, 1, 1])
    pred = labeling([7, 7, 7, 7], [0, 0, 0, 0], [7, 7, 7, 7])
    _, ids = match_sequence(gt, pred)
    assert ids == 0  # unmatched middle frame resets nothing


def test_scalar_metric_formulas():
    assert motsa(9, 1, 0, 10) == pytest.approx(0.8)
    assert motsp(8.1, 9) == pytest.approx(0.9)
    assert smotsa(8.1, 1, 0, 10) == pytest.approx(0.71)
    with pytest.raises(ValueError, match="empty ground truth"):
        motsa(0, 0, 0, 0)


def _ten_instance_example():
    """One frame, 10 GT instances of 10 points each plus background.

    Predictions: 9 instances each covering 9 of their GT instance's 10
    points (IoU 0.9), one GT instance missed, one spurious prediction on
    background.
    """
    n = 10 * 10 + 30
    gt = np.zeros(n, dtype=np.uint32)
    pred = np.zeros(n, dtype=np.uint32)
    for k in range(10):
        gt[k * 10 : (k + 1) * 10] = k + 1
        if k < 9:
            pred[k * 10 : k * 10 + 9] = 100 + k
    pred[100:110] = 999  # background-only prediction: a false positive
    return labeling(gt), labeling(pred)


def test_hand_computed_table_example():
    gt, pred = _ten_instance_example()
    report = evaluate(gt, pred)
    assert report.tp == 9 and report.fp == 1 and report.fn == 1 and report.ids == 0
    assert report.gt_instances == 10
    assert report.motsa == pytest.approx(0.80)
    assert report.motsp == pytest.approx(0.90)
    assert report.smotsa == pytest.approx(0.71)


def test_association_score_perfect():
    gt = labeling([0, 1, 1, 2], [1, 1, 2, 2])
    assert association_score(gt, gt) == pytest.approx(1.0)


def test_association_score_half_split():
    gt = labeling([1] * 100)
    pred_arr = np.full(100, 5, dtype=np.uint32)
    pred_arr[50:] = 6
    assert association_score(gt, labeling(pred_arr)) == pytest.approx(0.5)


def test_association_score_disjoint():
    gt = labeling([1, 1, 0, 0])
    pred = labeling([0, 0, 2, 2])
    assert association_score(gt, pred) == pytest.approx(0.0)


def test_association_score_no_tubes():
    with pytest.raises(ValueError, match="empty ground truth"):
        association_score(labeling([0, 0]), labeling([0, 0]))


def test_metrics_invariant_under_pred_relabeling():
    rng = np.random.default_rng(0)
    gt = labeling(rng.integers(0, 4, 60), rng.integers(0, 4, 60))
    pred_frames = [rng.integers(0, 5, 60).astype(np.uint32) for _ in range(2)]
    pred = labeling(*pred_frames)
    # consistent global relabeling of predicted ids
    remap = {0: 0, 1: 11, 2: 12, 3: 13, 4: 14}
    pred2 = labeling(*[np.vectorize(remap.get)(f).astype(np.uint32) for f in pred_frames])
    a = evaluate(gt, pred)
    b = evaluate(gt, pred2)
    assert a.association_score == b.association_score
    assert a.motsa == b.motsa and a.motsp == b.motsp and a.smotsa == b.smotsa


def test_splitting_tube_strictly_decreases_as():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(30, 80))
        gt_arr = rng.integers(1, 4, n).astype(np.uint32)
        pred_arr = gt_arr.copy()
        gt = labeling(gt_arr)
        before = association_score(gt, labeling(pred_arr))
        # split one predicted tube (predictions refine GT here) in two
        target = int(rng.integers(1, 4))
        members = np.flatnonzero(pred_arr == target)
        if members.size < 2:
            continue
        half = rng.choice(members, size=members.size // 2, replace=False)
        split = pred_arr.copy()
        split[half] = 40
        after = association_score(gt, labeling(split))
        assert after < before


def test_as_one_iff_exact_partition():
    gt = labeling([1, 1, 2, 0], [1, 2, 2, 0])
    pred_extra = labeling([1, 1, 2, 2], [1, 2, 2, 0])  # covers a background point
    assert association_score(gt, gt) == 1.0
    assert association_score(gt, pred_extra) < 1.0


def test_evaluate_empty_predictions():
    gt = labeling([1, 1, 2, 2], [1, 1, 2, 2])
    pred = labeling([0, 0, 0, 0], [0, 0, 0, 0])
    report = evaluate(gt, pred)
    assert report.motsa == 0.0 and report.smotsa == 0.0
    assert report.fn == report.gt_instances == 4
    assert report.motsp == 1.0 and "motsp" in report.notes


def test_report_as_dict_scaling():
    gt = labeling([1, 1, 0])
    report = evaluate(gt, gt)
    table = report.as_dict(scale_100=True)
    assert table["AS"] == 100.0 and table["MOTSA"] == 100.0
