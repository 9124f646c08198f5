"""Velocity-based heuristic tracker.

Moving points are clustered per frame with DBSCAN, aligned into a
sliding window, shifted along their radial direction by mean Doppler
velocity times elapsed time ("position compensation"), and associated
greedily by nearest bird-eye-view centroid between adjacent frames.

This module is also the auto-labeling engine behind the annotation
service.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import Cluster, Frame, InstanceLabeling, Pose, Window
from .preprocess import PreprocessParams, preprocess_frame

__all__ = [
    "TrackerParams",
    "dbscan",
    "build_window",
    "compensate_position",
    "associate_clusters",
    "heuristic_track",
    "frame_clusters",
    "greedy_pair",
]

NOISE = -1


@dataclass(frozen=True)
class TrackerParams:
    eps: float = 1.2  # DBSCAN density radius, meters
    min_pts: int = 20  # minimum cluster size; smaller clusters become noise
    assoc_dist: float = 1.0  # BEV association distance threshold, meters
    tau: int = 4  # window size, frames

    def __post_init__(self) -> None:
        if self.eps <= 0 or self.assoc_dist <= 0:
            raise ValueError("eps and assoc_dist must be positive")
        if self.min_pts < 1 or self.tau < 1:
            raise ValueError("min_pts and tau must be >= 1")


def dbscan(positions: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering; returns a cluster id per point, NOISE (-1) for noise.

    Semantics: a core point has >= min_pts neighbors within eps
    (inclusive, counting itself). Clusters are connected components of
    the core-core neighbor graph; a non-core point with a core neighbor
    joins the cluster of its lowest-index core neighbor. Components are
    numbered by their smallest member index, and any cluster that ends
    up with fewer than min_pts members is dissolved into noise.
    """
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(positions)
    pairs = tree.query_pairs(eps, output_type="ndarray")  # i < j, distance <= eps
    degree = np.ones(n, dtype=np.int64)  # each point neighbors itself
    if pairs.size:
        degree += np.bincount(pairs[:, 0], minlength=n)
        degree += np.bincount(pairs[:, 1], minlength=n)
    core = degree >= min_pts

    comp = np.full(n, -1, dtype=np.int64)
    n_comp = 0
    if core.any():
        core_idx = np.flatnonzero(core)
        if pairs.size:
            cc = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]]
        else:
            cc = np.empty((0, 2), dtype=np.int64)
        dense = np.full(n, -1, dtype=np.int64)
        dense[core_idx] = np.arange(core_idx.size)
        graph = coo_matrix(
            (np.ones(len(cc)), (dense[cc[:, 0]], dense[cc[:, 1]])),
            shape=(core_idx.size, core_idx.size),
        )
        n_comp, comp_dense = connected_components(graph, directed=False)
        # Renumber components by their smallest member index.
        first = np.full(n_comp, n, dtype=np.int64)
        np.minimum.at(first, comp_dense, core_idx)
        order = np.argsort(first, kind="stable")
        rank = np.empty(n_comp, dtype=np.int64)
        rank[order] = np.arange(n_comp)
        comp[core_idx] = rank[comp_dense]
    labels[core] = comp[core]

    # Border points: the lowest-index core neighbor decides.
    if pairs.size:
        a, b = pairs[:, 0], pairs[:, 1]
        mixed = np.concatenate(
            [
                np.stack([a[~core[a] & core[b]], b[~core[a] & core[b]]], axis=1),
                np.stack([b[core[a] & ~core[b]], a[core[a] & ~core[b]]], axis=1),
            ]
        )
        if mixed.size:
            order = np.lexsort((mixed[:, 1], mixed[:, 0]))
            mixed = mixed[order]
            first = np.unique(mixed[:, 0], return_index=True)[1]
            borders = mixed[first]
            labels[borders[:, 0]] = labels[borders[:, 1]]

    # Dissolve undersized clusters and renumber the survivors.
    if n_comp:
        sizes = np.bincount(labels[labels >= 0], minlength=n_comp)
        small = np.flatnonzero(sizes < min_pts)
        if small.size:
            labels[np.isin(labels, small)] = NOISE
            kept = np.flatnonzero(sizes >= min_pts)
            remap = np.full(n_comp, NOISE, dtype=np.int64)
            remap[kept] = np.arange(len(kept))
            labels[labels >= 0] = remap[labels[labels >= 0]]
    return labels


def build_window(frames: list[Frame], poses: list[Pose] | None, tau: int) -> Window:
    """Align the last ``tau`` frames into the newest frame's coordinates.

    ``poses`` overrides the per-frame poses when given (must match
    ``frames`` in length); Doppler values are carried over unchanged.
    """
    if not frames:
        raise ValueError("need at least one frame")
    if poses is None:
        poses = [f.pose for f in frames]
    if len(poses) != len(frames):
        raise ValueError("missing pose: need one pose per frame")
    member = frames[-tau:] if tau <= len(frames) else frames
    member_poses = poses[-len(member):]
    current = member_poses[-1]
    pos_parts, vel_parts, idx_parts, pid_parts = [], [], [], []
    for k, (frame, pose) in enumerate(zip(member, member_poses)):
        pos_parts.append(current.to_sensor(pose.to_world(frame.positions)))
        vel_parts.append(frame.velocities)
        idx_parts.append(np.full(len(frame), k, dtype=np.int64))
        pid_parts.append(frame.point_ids)
    return Window(
        tau=tau,
        frames=tuple(member),
        positions=np.concatenate(pos_parts),
        velocities=np.concatenate(vel_parts),
        frame_index=np.concatenate(idx_parts),
        point_ids=np.concatenate(pid_parts),
    )


def compensate_position(
    cluster: Cluster, dt: float, points: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Shift a past cluster to its predicted position at the current time.

    The displacement is mean_v * dt along the BEV unit vector from the
    current-frame sensor origin to the cluster centroid; heights are
    untouched. When ``points`` is given, the same displacement is
    applied to them (x, y only).
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    radius = np.linalg.norm(cluster.centroid_bev)
    if radius < 1e-9:
        raise ValueError("degenerate radial direction: centroid at sensor origin")
    u = cluster.centroid_bev / radius
    shift = cluster.mean_v * dt * u
    centroid = cluster.centroid_bev + shift
    shifted_points = None
    if points is not None:
        shifted_points = points.copy()
        shifted_points[:, :2] += shift[None, :]
    return centroid, shifted_points


def greedy_pair(
    a_centroids: np.ndarray, b_centroids: np.ndarray, max_dist: float
) -> list[tuple[int, int]]:
    """One-to-one greedy matching by ascending BEV distance.

    Candidate pairs are ordered by (distance, a index, b index) so the
    result is deterministic; pairs beyond ``max_dist`` are never
    matched.
    """
    if len(a_centroids) == 0 or len(b_centroids) == 0:
        return []
    diff = a_centroids[:, None, :] - b_centroids[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    pairs = [
        (dist[i, j], i, j)
        for i in range(dist.shape[0])
        for j in range(dist.shape[1])
        if dist[i, j] <= max_dist
    ]
    pairs.sort()
    used_a: set[int] = set()
    used_b: set[int] = set()
    matches = []
    for _, i, j in pairs:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matches.append((i, j))
    return matches


def _cluster_from_indices(frame_index: int, indices: np.ndarray, positions: np.ndarray, velocities: np.ndarray) -> Cluster:
    pts = positions[indices]
    return Cluster(
        frame_index=frame_index,
        point_indices=indices,
        centroid_bev=pts[:, :2].mean(axis=0),
        mean_v=float(velocities[indices].mean()),
    )


def object_radial_velocity(
    positions: np.ndarray, velocities: np.ndarray, v_ground: float
) -> float:
    """Mean world radial velocity of a cluster from its Doppler readings.

    Pose alignment already removes ego motion from positions, but the
    measured Doppler still contains the ego's radial component
    (approximately v_ground * cos(bearing) for a static surface).
    Subtracting that expected static profile per member leaves the
    object's own radial velocity, which is what position compensation
    after alignment has to undo.
    """
    bearings = np.arctan2(positions[:, 1], positions[:, 0])
    return float((velocities - v_ground * np.cos(bearings)).mean())


def frame_clusters(
    positions: np.ndarray,
    velocities: np.ndarray,
    dynamic_mask: np.ndarray,
    params: TrackerParams,
    frame_index: int = 0,
) -> list[Cluster]:
    """DBSCAN over the moving points of one frame, as Cluster values.

    ``point_indices`` refer to the full frame arrays. Clustering runs on
    3D coordinates; pairwise distances are invariant to the rigid window
    alignment, so per-frame clusters do not depend on which window the
    frame sits in.
    """
    idx = np.flatnonzero(dynamic_mask)
    if idx.size == 0:
        return []
    labels = dbscan(positions[idx], params.eps, params.min_pts)
    clusters = []
    for cid in range(labels.max() + 1 if labels.size else 0):
        members = idx[labels == cid]
        clusters.append(_cluster_from_indices(frame_index, members, positions, velocities))
    return clusters


def associate_clusters(
    clusters: list[Cluster],
    window: Window,
    params: TrackerParams,
) -> list[int]:
    """Instance id per cluster (1-based within the window).

    Clusters are compensated to the window's current timestamp, then
    adjacent frame pairs are matched chronologically; matched clusters
    inherit the earlier cluster's id and unmatched ones open new ids.
    """
    t_cur = window.current_frame.timestamp
    comp = []
    for c in clusters:
        dt = t_cur - window.frames[c.frame_index].timestamp
        centroid, _ = compensate_position(c, dt)
        comp.append(centroid)
    by_frame: dict[int, list[int]] = {}
    for ci, c in enumerate(clusters):
        by_frame.setdefault(c.frame_index, []).append(ci)

    ids = [0] * len(clusters)
    next_id = 1
    frame_order = sorted(by_frame)
    for k, fi in enumerate(frame_order):
        if k == 0:
            for ci in by_frame[fi]:
                ids[ci] = next_id
                next_id += 1
            continue
        prev = by_frame[frame_order[k - 1]]
        cur = by_frame[fi]
        a = np.array([comp[ci] for ci in prev])
        b = np.array([comp[ci] for ci in cur])
        matched_b = set()
        for i, j in greedy_pair(a, b, params.assoc_dist):
            ids[cur[j]] = ids[prev[i]]
            matched_b.add(j)
        for j, ci in enumerate(cur):
            if j not in matched_b:
                ids[ci] = next_id
                next_id += 1
    return ids


def heuristic_track(
    frames: list[Frame],
    poses: list[Pose] | None = None,
    pre_params: PreprocessParams | None = None,
    trk_params: TrackerParams | None = None,
) -> InstanceLabeling:
    """Full pipeline: preprocess, window, cluster, compensate, associate.

    Windows slide with stride 1; a cluster keeps the id it received in
    the first window that contained its frame, which carries identity
    across windows through the shared frames.
    """
    pre_params = pre_params or PreprocessParams()
    trk_params = trk_params or TrackerParams()
    if poses is not None and len(poses) != len(frames):
        raise ValueError("missing pose: need one pose per frame")

    pre = [preprocess_frame(f, pre_params) for f in frames]
    clusters_per_frame = [
        frame_clusters(p.frame.positions, p.frame.velocities, p.dynamic_mask, trk_params, fi)
        for fi, p in enumerate(pre)
    ]

    # Global instance id per (frame, cluster) pair. Sliding the window by
    # one frame at a time means every adjacent pair except (t-1, t) was
    # already associated in an earlier window, and clusters keep their
    # first id, so each step only has to match the newest pair.
    def _compensated(fi: int, t: int) -> np.ndarray:
        pose_cur = poses[t] if poses is not None else frames[t].pose
        pose_src = poses[fi] if poses is not None else frames[fi].pose
        dt = frames[t].timestamp - frames[fi].timestamp
        rows = []
        for c in clusters_per_frame[fi]:
            src_pts = pre[fi].frame.positions[c.point_indices]
            v_obj = object_radial_velocity(
                src_pts, pre[fi].frame.velocities[c.point_indices], pre[fi].ego.v_ground
            )
            aligned = pose_cur.to_sensor(pose_src.to_world(src_pts))
            aligned_cluster = Cluster(fi, c.point_indices, aligned[:, :2].mean(axis=0), v_obj)
            centroid, _ = compensate_position(aligned_cluster, dt)
            rows.append(centroid)
        return np.array(rows) if rows else np.empty((0, 2))

    assigned: dict[tuple[int, int], int] = {}
    next_id = 1
    for ci in range(len(clusters_per_frame[0])):
        assigned[(0, ci)] = next_id
        next_id += 1
    for t in range(1, len(frames)):
        a = _compensated(t - 1, t)
        b = _compensated(t, t)
        matched: set[int] = set()
        for i, j in greedy_pair(a, b, trk_params.assoc_dist):
            assigned[(t, j)] = assigned[(t - 1, i)]
            matched.add(j)
        for j in range(len(clusters_per_frame[t])):
            if j not in matched:
                assigned[(t, j)] = next_id
                next_id += 1

    # Per-point labels over the original frames.
    out = []
    for fi, (frame, p) in enumerate(zip(frames, pre)):
        lab_kept = np.zeros(len(p.frame), dtype=np.uint32)
        for ci, c in enumerate(clusters_per_frame[fi]):
            lab_kept[c.point_indices] = assigned[(fi, ci)]
        lab = np.zeros(len(frame), dtype=np.uint32)
        lab[~p.removed] = lab_kept
        out.append(lab)
    return InstanceLabeling(out)
