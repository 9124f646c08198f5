"""Compensated moving-point volumes.

A volume gathers the moving points of a sliding window, aligned into
the current frame's coordinates and shifted by per-cluster position
compensation so that points of one physical object aggregate. Only
points that survived per-frame DBSCAN (cluster members) enter the
volume; per-frame noise points are discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Frame, Pose
from .heuristic import (
    Cluster,
    TrackerParams,
    compensate_position,
    frame_clusters,
    object_radial_velocity,
)
from .preprocess import PreprocessParams, preprocess_frame

__all__ = ["MovingVolume", "build_moving_volumes", "subsample_volume"]


@dataclass(frozen=True)
class MovingVolume:
    """Moving points of one window after alignment and compensation."""

    t: int  # index of the current frame within the sequence
    frame_range: tuple[int, int]  # [lo, t] inclusive sequence-frame indices
    positions: np.ndarray  # (M, 3) compensated, current-frame coordinates
    velocities: np.ndarray  # (M,) raw Doppler
    frame_index: np.ndarray  # (M,) sequence frame index per point
    point_ids: np.ndarray  # (M,)
    frame_point_index: np.ndarray  # (M,) index of the point within its kept frame
    cluster_index: np.ndarray  # (M,) window-local cluster ordinal per point

    def __len__(self) -> int:
        return self.positions.shape[0]


def subsample_volume(volume: MovingVolume, max_points: int, seed: int = 0) -> MovingVolume:
    """Deterministically thin a volume to about ``max_points`` points.

    Sampling is proportional within each cluster (every cluster keeps at
    least one member), so cluster structure and instance coverage
    survive the thinning.
    """
    n = len(volume)
    if n <= max_points:
        return volume
    rng = np.random.default_rng(np.random.SeedSequence([seed, volume.t, n]))
    frac = max_points / n
    keep_parts = []
    for c in np.unique(volume.cluster_index):
        members = np.flatnonzero(volume.cluster_index == c)
        k = max(1, int(round(members.size * frac)))
        keep_parts.append(np.sort(rng.choice(members, size=k, replace=False)))
    keep = np.sort(np.concatenate(keep_parts))
    return MovingVolume(
        t=volume.t,
        frame_range=volume.frame_range,
        positions=volume.positions[keep],
        velocities=volume.velocities[keep],
        frame_index=volume.frame_index[keep],
        point_ids=volume.point_ids[keep],
        frame_point_index=volume.frame_point_index[keep],
        cluster_index=volume.cluster_index[keep],
    )


def build_moving_volumes(
    frames: list[Frame],
    poses: list[Pose] | None = None,
    pre_params: PreprocessParams | None = None,
    trk_params: TrackerParams | None = None,
    pre: list | None = None,
    targets: list[int] | None = None,
) -> list[MovingVolume]:
    """One MovingVolume per frame t over the window [max(0, t+1-tau), t].

    ``pre`` can carry already-computed PreprocessedFrame values to avoid
    repeating the per-frame preprocessing; ``targets`` restricts the
    output to the given current-frame indices.
    """
    pre_params = pre_params or PreprocessParams()
    trk_params = trk_params or TrackerParams()
    if poses is not None and len(poses) != len(frames):
        raise ValueError("missing pose: need one pose per frame")

    target_list = list(targets) if targets is not None else list(range(len(frames)))
    needed = set()
    for t in target_list:
        needed.update(range(max(0, t + 1 - trk_params.tau), t + 1))

    if pre is None:
        pre = [
            preprocess_frame(f, pre_params) if fi in needed else None
            for fi, f in enumerate(frames)
        ]
    clusters_per_frame = [
        frame_clusters(p.frame.positions, p.frame.velocities, p.dynamic_mask, trk_params, fi)
        if p is not None and fi in needed
        else []
        for fi, p in enumerate(pre)
    ]

    volumes = []
    for t in target_list:
        lo = max(0, t + 1 - trk_params.tau)
        pose_cur = poses[t] if poses is not None else frames[t].pose
        t_cur = frames[t].timestamp
        pos_parts, vel_parts, fidx_parts, pid_parts, fpi_parts, cidx_parts = [], [], [], [], [], []
        cluster_ordinal = 0
        for fi in range(lo, t + 1):
            pose_src = poses[fi] if poses is not None else frames[fi].pose
            kept = pre[fi].frame
            dt = t_cur - frames[fi].timestamp
            for c in clusters_per_frame[fi]:
                src_pts = kept.positions[c.point_indices]
                v_obj = object_radial_velocity(
                    src_pts, kept.velocities[c.point_indices], pre[fi].ego.v_ground
                )
                pts = pose_cur.to_sensor(pose_src.to_world(src_pts))
                aligned = Cluster(fi, c.point_indices, pts[:, :2].mean(axis=0), v_obj)
                _, shifted = compensate_position(aligned, dt, points=pts)
                pos_parts.append(shifted)
                vel_parts.append(kept.velocities[c.point_indices])
                fidx_parts.append(np.full(c.size(), fi, dtype=np.int64))
                pid_parts.append(kept.point_ids[c.point_indices])
                fpi_parts.append(c.point_indices)
                cidx_parts.append(np.full(c.size(), cluster_ordinal, dtype=np.int64))
                cluster_ordinal += 1
        if pos_parts:
            volume = MovingVolume(
                t=t,
                frame_range=(lo, t),
                positions=np.concatenate(pos_parts),
                velocities=np.concatenate(vel_parts),
                frame_index=np.concatenate(fidx_parts),
                point_ids=np.concatenate(pid_parts),
                frame_point_index=np.concatenate(fpi_parts),
                cluster_index=np.concatenate(cidx_parts),
            )
        else:
            empty3 = np.empty((0, 3))
            empty = np.empty(0, dtype=np.int64)
            volume = MovingVolume(t, (lo, t), empty3, np.empty(0), empty, empty, empty, empty)
        volumes.append(volume)
    return volumes
