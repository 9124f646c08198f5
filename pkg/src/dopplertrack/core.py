"""Shared domain types and coordinate/label conventions.

Conventions used throughout the package:

* Radial Doppler velocity is signed, in m/s, negative when the surface
  point approaches the sensor.
* Poses map sensor coordinates to world coordinates.
* Instance ID 0 is reserved for background/static points; moving
  instances use IDs >= 1.
* A "window" is a stack of consecutive frames rigidly aligned into the
  coordinates of the newest (current) frame.

All types are immutable value objects after construction and safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BACKGROUND_ID = 0

__all__ = [
    "BACKGROUND_ID",
    "Point",
    "Pose",
    "Frame",
    "Window",
    "Cluster",
    "InstanceLabeling",
    "PointHeadOutput",
    "transform_point",
    "transform_positions",
]


@dataclass(frozen=True)
class Point:
    """A single LiDAR return: position in the sensor frame plus Doppler velocity."""

    x: float
    y: float
    z: float
    v: float

    def __post_init__(self) -> None:
        if not all(np.isfinite([self.x, self.y, self.z, self.v])):
            raise ValueError("point fields must be finite")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class Pose:
    """Rigid sensor-to-world transform."""

    rotation: np.ndarray  # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        rotation = np.asarray(self.rotation, dtype=float)
        translation = np.asarray(self.translation, dtype=float)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and a 3-vector translation")
        if not (np.isfinite(rotation).all() and np.isfinite(translation).all()):
            raise ValueError("pose entries must be finite")
        err = np.abs(rotation @ rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation not orthonormal (deviation {err:.3e})")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def to_world(self, positions: np.ndarray) -> np.ndarray:
        """Map (N, 3) sensor-frame positions into world coordinates."""
        return positions @ self.rotation.T + self.translation

    def to_sensor(self, positions: np.ndarray) -> np.ndarray:
        """Map (N, 3) world positions into this pose's sensor coordinates."""
        return (positions - self.translation) @ self.rotation


def _readonly(a: np.ndarray, dtype, shape_tail: tuple[int, ...] | None = None) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    if shape_tail is not None and out.shape[1:] != shape_tail:
        raise ValueError(f"expected trailing shape {shape_tail}, got {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Frame:
    """One LiDAR scan: positions and Doppler velocities in the sensor frame."""

    timestamp: float
    positions: np.ndarray  # (N, 3) float64, sensor frame
    velocities: np.ndarray  # (N,) float64, radial Doppler, approaching < 0
    pose: Pose
    point_ids: np.ndarray  # (N,) int64, unique within the sequence

    def __post_init__(self) -> None:
        positions = _readonly(self.positions, float, (3,))
        velocities = _readonly(self.velocities, float)
        point_ids = _readonly(self.point_ids, np.int64)
        n = positions.shape[0]
        if velocities.shape != (n,) or point_ids.shape != (n,):
            raise ValueError("positions, velocities and point_ids must agree in length")
        if len(np.unique(point_ids)) != n:
            raise ValueError("point_ids must be unique within a frame")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)
        object.__setattr__(self, "point_ids", point_ids)

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class Window:
    """tau consecutive frames aligned into the newest frame's coordinates."""

    tau: int
    frames: tuple[Frame, ...]
    positions: np.ndarray  # (M, 3) in current-frame coordinates
    velocities: np.ndarray  # (M,) raw measured Doppler, not re-projected
    frame_index: np.ndarray  # (M,) index into ``frames``
    point_ids: np.ndarray  # (M,)

    def __post_init__(self) -> None:
        positions = _readonly(self.positions, float, (3,))
        velocities = _readonly(self.velocities, float)
        frame_index = _readonly(self.frame_index, np.int64)
        point_ids = _readonly(self.point_ids, np.int64)
        total = sum(len(f) for f in self.frames)
        if positions.shape[0] != total:
            raise ValueError("aligned point count must equal the sum of member frame sizes")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)
        object.__setattr__(self, "frame_index", frame_index)
        object.__setattr__(self, "point_ids", point_ids)

    @property
    def current_frame(self) -> Frame:
        return self.frames[-1]

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class Cluster:
    """A per-frame group of moving points.

    ``point_indices`` index into whatever array the cluster was built
    from (a frame or a window); ``centroid_bev`` is the arithmetic mean
    of the member (x, y) coordinates with height dropped.
    """

    frame_index: int
    point_indices: np.ndarray
    centroid_bev: np.ndarray  # (2,)
    mean_v: float

    def __post_init__(self) -> None:
        point_indices = _readonly(self.point_indices, np.int64)
        centroid_bev = _readonly(self.centroid_bev, float)
        if point_indices.size == 0:
            raise ValueError("cluster needs at least one member")
        if centroid_bev.shape != (2,):
            raise ValueError("centroid_bev must be a 2-vector")
        object.__setattr__(self, "point_indices", point_indices)
        object.__setattr__(self, "centroid_bev", centroid_bev)

    def size(self) -> int:
        return int(self.point_indices.size)


class InstanceLabeling:
    """Per-point instance IDs over a sequence, aligned with frame order.

    ID 0 marks background/static points; an ID >= 1 refers to the same
    physical object in every frame where it appears.
    """

    def __init__(self, per_frame: list[np.ndarray]):
        self.per_frame = [_readonly(a, np.uint32) for a in per_frame]

    def __len__(self) -> int:
        return len(self.per_frame)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.per_frame[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InstanceLabeling):
            return NotImplemented
        return len(self) == len(other) and all(
            np.array_equal(a, b) for a, b in zip(self.per_frame, other.per_frame)
        )

    def instance_ids(self) -> np.ndarray:
        """Sorted moving-instance IDs present anywhere in the sequence."""
        if not self.per_frame:
            return np.empty(0, dtype=np.uint32)
        ids = np.unique(np.concatenate(self.per_frame))
        return ids[ids != BACKGROUND_ID]

    def copy(self) -> "InstanceLabeling":
        return InstanceLabeling([a.copy() for a in self.per_frame])


@dataclass(frozen=True)
class PointHeadOutput:
    """Per-point model outputs: embedding, diagonal variance, objectness."""

    embeddings: np.ndarray  # (N, D)
    variances: np.ndarray  # (N, D), strictly positive
    objectness: np.ndarray  # (N,), in [0, 1]

    def __post_init__(self) -> None:
        embeddings = _readonly(self.embeddings, float)
        variances = _readonly(self.variances, float)
        objectness = _readonly(self.objectness, float)
        if embeddings.shape != variances.shape:
            raise ValueError("embeddings and variances must share a shape")
        if objectness.shape != (embeddings.shape[0],):
            raise ValueError("objectness must be one scalar per point")
        if variances.size and variances.min() <= 0:
            raise ValueError("variance components must be strictly positive")
        if objectness.size and (objectness.min() < 0 or objectness.max() > 1):
            raise ValueError("objectness must lie in [0, 1]")
        object.__setattr__(self, "embeddings", embeddings)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "objectness", objectness)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def transform_positions(positions: np.ndarray, src: Pose, dst: Pose) -> np.ndarray:
    """Re-express (N, 3) positions given in ``src`` coordinates in ``dst`` coordinates."""
    return dst.to_sensor(src.to_world(positions))


def transform_point(point: Point, src: Pose, dst: Pose) -> Point:
    """Map a point measured under pose ``src`` into the frame of pose ``dst``.

    The Doppler value is carried over unchanged: it is a measurement
    relative to the sensor at acquisition time and is not re-projected.
    """
    p = transform_positions(point.position[None, :], src, dst)[0]
    return Point(p[0], p[1], p[2], point.v)
