"""Point-level tracking-and-segmentation metrics.

Ground truth and predictions are per-point instance labelings over the
same sequence (id 0 = background). Frame-level matching declares a
predicted instance a true positive for a ground-truth instance when
their point-set IoU within the frame exceeds 0.5, which makes matching
injective without an assignment search. The association score instead
compares whole spacetime tubes:

    AS = (1/|G|) * sum_g (1/|g|) * sum_{p : p cap g != 0}
             |p cap g| * |p cap g| / |p cup g|

with g ranging over ground-truth tubes and p over predicted tubes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BACKGROUND_ID, InstanceLabeling

__all__ = [
    "FrameMatchResult",
    "EvalReport",
    "match_frame",
    "match_sequence",
    "motsa",
    "motsp",
    "smotsa",
    "association_score",
    "evaluate",
]

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class FrameMatchResult:
    """Matching outcome for one frame."""

    tp: list[tuple[int, int, float]]  # (gt id, pred id, IoU)
    fp_ids: list[int]  # unmatched predicted ids
    fn_ids: list[int]  # unmatched ground-truth ids
    n_gt_instances: int


@dataclass(frozen=True)
class EvalReport:
    """Sequence-level metric report (fractions in [0, 1] unless noted)."""

    association_score: float
    motsa: float
    motsp: float
    smotsa: float
    tp: int
    fp: int
    fn: int
    ids: int
    gt_instances: int
    soft_tp: float  # sum of TP IoUs
    per_frame: list[FrameMatchResult] = field(repr=False, default_factory=list)
    notes: dict = field(default_factory=dict)

    def as_dict(self, scale_100: bool = False) -> dict:
        s = 100.0 if scale_100 else 1.0
        return {
            "AS": self.association_score * s,
            "MOTSA": self.motsa * s,
            "MOTSP": self.motsp * s,
            "SMOTSA": self.smotsa * s,
            "TP": self.tp,
            "FP": self.fp,
            "FN": self.fn,
            "IDS": self.ids,
            "GT": self.gt_instances,
            "notes": dict(self.notes),
        }


def _instance_points(labels: np.ndarray) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    for iid in np.unique(labels):
        if iid == BACKGROUND_ID:
            continue
        out[int(iid)] = np.flatnonzero(labels == iid)
    return out


def match_frame(gt: np.ndarray, pred: np.ndarray) -> FrameMatchResult:
    """IoU > 0.5 matching between instances of one frame."""
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"label arrays differ in length: {gt.shape} vs {pred.shape}")
    gt_insts = _instance_points(gt)
    pred_insts = _instance_points(pred)

    # Intersections via joint ids of the moving overlap region.
    tp: list[tuple[int, int, float]] = []
    matched_pred: set[int] = set()
    for gid, g_idx in gt_insts.items():
        pred_on_g = pred[g_idx]
        cand, counts = np.unique(pred_on_g[pred_on_g != BACKGROUND_ID], return_counts=True)
        best = None
        for pid, inter in zip(cand, counts):
            union = len(g_idx) + len(pred_insts[int(pid)]) - int(inter)
            iou = int(inter) / union
            if iou > IOU_THRESHOLD:
                best = (int(pid), iou)
                break  # IoU > 0.5 is unique per gt instance
        if best is not None:
            tp.append((gid, best[0], best[1]))
            matched_pred.add(best[0])
    fn = [gid for gid in gt_insts if gid not in {g for g, _, _ in tp}]
    fp = [pid for pid in pred_insts if pid not in matched_pred]
    return FrameMatchResult(tp, fp, fn, len(gt_insts))


def match_sequence(gt: InstanceLabeling, pred: InstanceLabeling) -> tuple[list[FrameMatchResult], int]:
    """Per-frame matching plus ID-switch count over the sequence.

    An ID switch is counted when a ground-truth instance's matched
    predicted id differs from the last predicted id it was matched to;
    unmatched frames do not reset the comparison.
    """
    if len(gt) != len(pred):
        raise ValueError("ground truth and prediction must cover the same frames")
    results = []
    last_matched: dict[int, int] = {}
    id_switches = 0
    for f in range(len(gt)):
        res = match_frame(gt[f], pred[f])
        for gid, pid, _ in res.tp:
            if gid in last_matched and last_matched[gid] != pid:
                id_switches += 1
            last_matched[gid] = pid
        results.append(res)
    return results, id_switches


def motsa(tp: int, fp: int, ids: int, gt_instances: int) -> float:
    if gt_instances == 0:
        raise ValueError("empty ground truth: no instances to evaluate")
    return (tp - fp - ids) / gt_instances


def motsp(soft_tp: float, tp: int) -> float:
    # Convention: precision of an empty TP set is reported as 1.0 and
    # flagged in the report notes.
    if tp == 0:
        return 1.0
    return soft_tp / tp


def smotsa(soft_tp: float, fp: int, ids: int, gt_instances: int) -> float:
    if gt_instances == 0:
        raise ValueError("empty ground truth: no instances to evaluate")
    return (soft_tp - fp - ids) / gt_instances


def association_score(gt: InstanceLabeling, pred: InstanceLabeling) -> float:
    """Tube-level association quality over the whole sequence."""
    if len(gt) != len(pred):
        raise ValueError("ground truth and prediction must cover the same frames")
    gt_all = np.concatenate(gt.per_frame) if len(gt) else np.empty(0, dtype=np.uint32)
    pred_all = np.concatenate(pred.per_frame) if len(pred) else np.empty(0, dtype=np.uint32)

    gt_sizes: dict[int, int] = {}
    for iid, count in zip(*np.unique(gt_all[gt_all != BACKGROUND_ID], return_counts=True)):
        gt_sizes[int(iid)] = int(count)
    if not gt_sizes:
        raise ValueError("empty ground truth: no tubes")
    pred_sizes: dict[int, int] = {}
    for iid, count in zip(*np.unique(pred_all[pred_all != BACKGROUND_ID], return_counts=True)):
        pred_sizes[int(iid)] = int(count)

    both = (gt_all != BACKGROUND_ID) & (pred_all != BACKGROUND_ID)
    pair_keys = gt_all[both].astype(np.int64) * (1 << 32) + pred_all[both].astype(np.int64)
    inter_keys, inter_counts = np.unique(pair_keys, return_counts=True)

    per_gt: dict[int, float] = {gid: 0.0 for gid in gt_sizes}
    for key, inter in zip(inter_keys, inter_counts):
        gid = int(key >> 32)
        pid = int(key & 0xFFFFFFFF)
        union = gt_sizes[gid] + pred_sizes[pid] - int(inter)
        per_gt[gid] += int(inter) * (int(inter) / union)
    return sum(per_gt[gid] / gt_sizes[gid] for gid in gt_sizes) / len(gt_sizes)


def evaluate(gt: InstanceLabeling, pred: InstanceLabeling) -> EvalReport:
    """Full metric suite for one sequence."""
    per_frame, ids = match_sequence(gt, pred)
    tp = sum(len(r.tp) for r in per_frame)
    fp = sum(len(r.fp_ids) for r in per_frame)
    fn = sum(len(r.fn_ids) for r in per_frame)
    n_gt = sum(r.n_gt_instances for r in per_frame)
    soft_tp = float(sum(iou for r in per_frame for _, _, iou in r.tp))
    notes = {"motsa_denominator": "per-frame ground-truth instance count"}
    if tp == 0:
        notes["motsp"] = "no true positives; precision reported as 1.0 by convention"
    return EvalReport(
        association_score=association_score(gt, pred),
        motsa=motsa(tp, fp, ids, n_gt),
        motsp=motsp(soft_tp, tp),
        smotsa=smotsa(soft_tp, fp, ids, n_gt),
        tp=tp,
        fp=fp,
        fn=fn,
        ids=ids,
        gt_instances=n_gt,
        soft_tp=soft_tp,
        per_frame=per_frame,
        notes=notes,
    )
