"""Scan preprocessing: outlier removal, ground extraction, ego velocity,
and static/dynamic point separation.

The ego's forward speed is never an input; it is recovered from the
Doppler values of ground points in the front-view wedge. Static points
are then identified by a velocity band around the expected static
Doppler profile. Two band modes exist:

* ``paper_faithful`` compares each point's Doppler against the scalar
  ground mean directly.
* ``angle_corrected`` (default) scales the expected static Doppler by
  the cosine of the point's bird-eye-view bearing, which keeps
  wide-FOV points at speed inside the band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Frame

__all__ = [
    "PreprocessParams",
    "EgoEstimate",
    "GroundPlane",
    "filter_outliers",
    "fit_ground_plane",
    "estimate_ego_velocity",
    "split_dynamic",
    "preprocess_frame",
    "PreprocessedFrame",
]

BAND_MODES = ("paper_faithful", "angle_corrected")


@dataclass(frozen=True)
class PreprocessParams:
    v_abs_max: float = 60.0  # m/s, plausibility cap on |Doppler|
    range_max: float = 300.0  # m
    ransac_iters: int = 200
    ransac_inlier_dist: float = 0.15  # m
    ransac_min_inliers: int = 50
    front_view_bearing_deg: float = 10.0  # half-width of the forward wedge
    static_band_halfwidth: float = 0.2  # m/s, band half-width around the static profile
    band_mode: str = "angle_corrected"
    seed: int = 0  # RANSAC sampling seed

    def __post_init__(self) -> None:
        if self.static_band_halfwidth <= 0:
            raise ValueError("static_band_halfwidth must be positive")
        if self.ransac_inlier_dist <= 0:
            raise ValueError("ransac_inlier_dist must be positive")
        if self.band_mode not in BAND_MODES:
            raise ValueError(f"band_mode must be one of {BAND_MODES}")


@dataclass(frozen=True)
class GroundPlane:
    """Plane n . p = offset with unit normal n oriented +z."""

    normal: np.ndarray  # (3,), unit length
    offset: float

    def distances(self, positions: np.ndarray) -> np.ndarray:
        return np.abs(positions @ self.normal - self.offset)


@dataclass(frozen=True)
class EgoEstimate:
    """Ground-derived ego velocity estimate for one frame."""

    v_ground: float  # mean Doppler of front-view ground points
    ground_plane: GroundPlane
    ground_mask: np.ndarray  # over the (kept) frame points

    @property
    def v_car(self) -> float:
        return -self.v_ground


def filter_outliers(frame: Frame, params: PreprocessParams) -> tuple[Frame, np.ndarray]:
    """Drop points with implausible velocity, range, or non-finite fields.

    Returns the kept frame (original point order preserved) and the
    boolean removal mask over the input frame.
    """
    dist = np.linalg.norm(frame.positions, axis=1)
    bad = (
        ~np.isfinite(frame.positions).all(axis=1)
        | ~np.isfinite(frame.velocities)
        | (np.abs(frame.velocities) > params.v_abs_max)
        | (dist > params.range_max)
    )
    keep = ~bad
    kept = Frame(
        frame.timestamp,
        frame.positions[keep],
        frame.velocities[keep],
        frame.pose,
        frame.point_ids[keep],
    )
    return kept, bad


def fit_ground_plane(
    positions: np.ndarray,
    iters: int = 200,
    inlier_dist: float = 0.15,
    seed: int = 0,
    min_inliers: int = 50,
) -> tuple[GroundPlane, np.ndarray]:
    """RANSAC plane fit over 3-point samples, refined by least squares.

    The returned normal is unit length and oriented towards +z. Raises
    ValueError("no ground ...") when fewer than 3 points are given or
    the best consensus set stays below ``min_inliers``.
    """
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if n < 3:
        raise ValueError("no ground: need at least 3 points")
    rng = np.random.default_rng(seed)

    # Hypotheses are scored on a bounded subsample; the refit and the
    # returned mask still use every point.
    max_score_points = 8000
    if n > max_score_points:
        score_idx = rng.choice(n, size=max_score_points, replace=False)
        score_pts = positions[score_idx]
    else:
        score_idx = np.arange(n)
        score_pts = positions

    best_mask: np.ndarray | None = None
    best_count = 0
    for _ in range(iters):
        idx = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = positions[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:  # collinear sample
            continue
        normal /= norm
        dist = np.abs((score_pts - p0) @ normal)
        mask = dist <= inlier_dist
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < min(min_inliers, len(score_pts)) or best_count < 3:
        raise ValueError(f"no ground: best consensus {best_count} < {min_inliers}")

    # Least-squares refit on the consensus set: smallest singular vector
    # of the centered inliers is the plane normal.
    inliers = score_pts[best_mask]
    centroid = inliers.mean(axis=0)
    _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
    normal = vt[-1]
    if normal[2] < 0 or (normal[2] == 0 and (normal[0] < 0 or (normal[0] == 0 and normal[1] < 0))):
        normal = -normal
    plane = GroundPlane(normal, float(normal @ centroid))
    final_mask = plane.distances(positions) <= inlier_dist
    if int(final_mask.sum()) < min_inliers:
        raise ValueError(f"no ground: best consensus {int(final_mask.sum())} < {min_inliers}")
    return plane, final_mask


def _bev_bearings(positions: np.ndarray) -> np.ndarray:
    """Bird-eye-view bearing of each point off the +x forward axis, radians."""
    return np.arctan2(positions[:, 1], positions[:, 0])


def estimate_ego_velocity(
    frame: Frame,
    ground_mask: np.ndarray,
    params: PreprocessParams,
    plane: GroundPlane | None = None,
) -> EgoEstimate:
    """Mean Doppler of front-view ground points; theoretically -V_car."""
    bearings = np.degrees(_bev_bearings(frame.positions))
    front = ground_mask & (np.abs(bearings) <= params.front_view_bearing_deg)
    if not front.any():
        raise ValueError("no front ground: ground mask empty within the front-view wedge")
    v_ground = float(frame.velocities[front].mean())
    if plane is None:
        plane = GroundPlane(np.array([0.0, 0.0, 1.0]), 0.0)
    return EgoEstimate(v_ground, plane, ground_mask)


def split_dynamic(frame: Frame, ego: EgoEstimate, params: PreprocessParams) -> np.ndarray:
    """Boolean mask of moving points among the kept, non-ground points.

    paper_faithful: static iff |v - V_g| <= band.
    angle_corrected: static iff |v - V_g cos(theta)| <= band, theta the
    BEV bearing off the forward axis.
    """
    if params.band_mode == "paper_faithful":
        expected = np.full(len(frame), ego.v_ground)
    else:
        expected = ego.v_ground * np.cos(_bev_bearings(frame.positions))
    static = np.abs(frame.velocities - expected) <= params.static_band_halfwidth
    return ~static & ~ego.ground_mask


@dataclass(frozen=True)
class PreprocessedFrame:
    """Outcome of the full per-frame preprocessing chain."""

    frame: Frame  # outlier-filtered
    removed: np.ndarray  # over the original frame
    ego: EgoEstimate
    dynamic_mask: np.ndarray  # over the kept frame


def preprocess_frame(frame: Frame, params: PreprocessParams) -> PreprocessedFrame:
    """filter -> ground plane -> ego velocity -> dynamic split for one frame."""
    kept, removed = filter_outliers(frame, params)
    plane, ground_mask = fit_ground_plane(
        kept.positions,
        iters=params.ransac_iters,
        inlier_dist=params.ransac_inlier_dist,
        seed=params.seed,
        min_inliers=params.ransac_min_inliers,
    )
    ego = estimate_ego_velocity(kept, ground_mask, params, plane=plane)
    dynamic = split_dynamic(kept, ego, params)
    return PreprocessedFrame(kept, removed, ego, dynamic)
