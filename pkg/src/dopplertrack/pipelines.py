"""End-to-end tracking pipelines over whole sequences."""

from __future__ import annotations

import numpy as np

from .core import Frame, InstanceLabeling, Pose
from .embedding import ClusterInferParams, IdAllocator, associate_volumes, cluster_volume
from .heuristic import TrackerParams, heuristic_track
from .learn import FeatureSpec, ToyHead, TrainingWindow, make_training_window, point_features
from .preprocess import PreprocessParams, preprocess_frame
from .volumes import build_moving_volumes, subsample_volume

__all__ = ["embed_track", "build_training_windows", "heuristic_track"]


def embed_track(
    frames: list[Frame],
    head: ToyHead,
    poses: list[Pose] | None = None,
    pre_params: PreprocessParams | None = None,
    trk_params: TrackerParams | None = None,
    infer_params: ClusterInferParams | None = None,
) -> InstanceLabeling:
    """Track with the embedding head over sliding compensated volumes.

    Each frame's final labels come from the volume whose current frame
    it is; identity carries between consecutive volumes through greedy
    point-IoU association restricted to their shared frames.
    """
    pre_params = pre_params or PreprocessParams()
    trk_params = trk_params or TrackerParams()
    infer_params = infer_params or ClusterInferParams()
    pre = [preprocess_frame(f, pre_params) for f in frames]
    volumes = build_moving_volumes(frames, poses, pre_params, trk_params, pre=pre)

    labels = [np.zeros(len(f), dtype=np.uint32) for f in frames]

    allocator = IdAllocator()
    # Previous volume's (point_id -> final id, frame index per point).
    prev: tuple[dict[int, int], dict[int, int]] | None = None
    for volume in volumes:
        if len(volume) == 0:
            prev = ({}, {})
            continue
        features = point_features(volume.positions, volume.velocities, head.feature_spec)
        local = cluster_volume(head.apply(features), infer_params)
        local_ids = sorted(int(i) for i in np.unique(local) if i != 0)

        if prev is None:
            mapping = {lid: allocator.fresh() for lid in local_ids}
        else:
            prev_ids, prev_frames = prev
            shared_lo = volume.frame_range[0]
            cur_shared = {
                int(pid): int(lab)
                for pid, lab, fi in zip(volume.point_ids, local, volume.frame_index)
                if lab != 0 and fi < volume.t
            }
            prev_shared = {
                pid: fid for pid, fid in prev_ids.items() if prev_frames[pid] >= shared_lo
            }
            mapping = associate_volumes(
                prev_shared, cur_shared, infer_params.overlap_threshold, allocator
            )
            for lid in local_ids:  # volumes can have instances only on the newest frame
                if lid not in mapping:
                    mapping[lid] = allocator.fresh()

        final = np.zeros(len(volume), dtype=np.uint32)
        for lid in local_ids:
            final[local == lid] = mapping[lid]

        # Emit labels for the volume's current frame.
        cur_sel = volume.frame_index == volume.t
        kept_index = np.flatnonzero(~pre[volume.t].removed)
        labels[volume.t][kept_index[volume.frame_point_index[cur_sel]]] = final[cur_sel]

        prev = (
            {int(pid): int(fid) for pid, fid in zip(volume.point_ids, final) if fid != 0},
            {int(pid): int(fi) for pid, fi in zip(volume.point_ids, volume.frame_index)},
        )
    return InstanceLabeling(labels)


def build_training_windows(
    frames: list[Frame],
    gt: InstanceLabeling,
    spec: FeatureSpec,
    poses: list[Pose] | None = None,
    pre_params: PreprocessParams | None = None,
    trk_params: TrackerParams | None = None,
    stride: int = 1,
    min_points: int = 10,
    max_points_per_window: int | None = 2000,
    subsample_seed: int = 0,
) -> list[TrainingWindow]:
    """Training windows from a labeled sequence (one per stride-th frame).

    Windows start at the first full-size window (t = tau - 1). Oversized
    windows are thinned to max_points_per_window so loss and gradient
    magnitudes stay independent of scene density.
    """
    pre_params = pre_params or PreprocessParams()
    trk_params = trk_params or TrackerParams()
    start = min(trk_params.tau - 1, max(len(frames) - 1, 0))
    targets = list(range(start, len(frames), max(1, stride)))
    needed = set()
    for t in targets:
        needed.update(range(max(0, t + 1 - trk_params.tau), t + 1))
    pre = [
        preprocess_frame(f, pre_params) if fi in needed else None
        for fi, f in enumerate(frames)
    ]
    volumes = build_moving_volumes(frames, poses, pre_params, trk_params, pre=pre, targets=targets)
    kept_masks = {fi: ~p.removed for fi, p in enumerate(pre) if p is not None}
    windows = []
    for volume in volumes:
        if len(volume) < min_points:
            continue
        if max_points_per_window:
            volume = subsample_volume(volume, max_points_per_window, seed=subsample_seed)
        windows.append(make_training_window(volume, list(gt.per_frame), kept_masks, spec))
    return windows
