"""Bit-exact dataset persistence.

A sequence directory looks like::

    seq_dir/
      scans/000000.bin   little-endian float32 records [x, y, z, v]
      labels/000000.label  little-endian uint32 instance id per point (optional)
      poses.txt          one pose per line, 12 values, row-major 3x4 [R|t]
      times.txt          one timestamp per line, seconds
      meta.json          sensor config, seed, format version

The fourth float channel carries Doppler velocity in the slot that
conventional LiDAR datasets use for intensity, so standard point-cloud
tooling can open the scans unchanged.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import Frame, InstanceLabeling, Pose

FORMAT_VERSION = 1

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")

__all__ = [
    "FORMAT_VERSION",
    "write_scan",
    "read_scan",
    "write_poses",
    "read_poses",
    "write_labels",
    "read_labels",
    "write_times",
    "read_times",
    "write_sequence",
    "load_sequence",
    "LoadedSequence",
    "list_sequences",
]


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_scan(path: str | Path, positions: np.ndarray, velocities: np.ndarray) -> None:
    """Write [x, y, z, v] float32 records, no header."""
    positions = np.asarray(positions, dtype=np.float32)
    velocities = np.asarray(velocities, dtype=np.float32)
    if positions.ndim != 2 or positions.shape[1] != 3 or velocities.shape != (positions.shape[0],):
        raise ValueError("expected (N, 3) positions and (N,) velocities")
    rec = np.concatenate([positions, velocities[:, None]], axis=1).astype(SCAN_DTYPE)
    _atomic_write(Path(path), rec.tobytes())


def read_scan(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a scan; returns (positions (N,3) float32, velocities (N,) float32)."""
    raw = Path(path).read_bytes()
    if len(raw) % 16 != 0:
        raise ValueError(f"corrupt scan {path}: {len(raw)} bytes is not a multiple of 16")
    rec = np.frombuffer(raw, dtype=SCAN_DTYPE).reshape(-1, 4)
    return rec[:, :3].copy(), rec[:, 3].copy()


def write_poses(path: str | Path, poses: list[Pose]) -> None:
    """Write one pose per line as 12 row-major [R|t] decimals."""
    lines = []
    for pose in poses:
        mat = np.concatenate([pose.rotation, pose.translation[:, None]], axis=1)
        lines.append(" ".join(f"{x:.17g}" for x in mat.reshape(-1)))
    _atomic_write(Path(path), ("\n".join(lines) + ("\n" if lines else "")).encode())


def read_poses(path: str | Path) -> list[Pose]:
    """Parse poses, validating shape and orthonormality (1e-6) per line."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            tokens = line.split()
            if len(tokens) != 12:
                raise ValueError(f"{path}:{lineno}: expected 12 pose values, got {len(tokens)}")
            try:
                vals = np.array([float(t) for t in tokens]).reshape(3, 4)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric pose value") from exc
            rot, trans = vals[:, :3], vals[:, 3]
            err = np.abs(rot @ rot.T - np.eye(3)).max()
            if err > 1e-6 or np.linalg.det(rot) < 0:
                raise ValueError(f"{path}:{lineno}: rotation not orthonormal (deviation {err:.2e})")
            if err > 1e-9:
                # Within file tolerance but outside the Pose invariant:
                # project to the nearest rotation.
                u, _, vt = np.linalg.svd(rot)
                rot = u @ vt
                if np.linalg.det(rot) < 0:
                    u[:, -1] *= -1
                    rot = u @ vt
            poses.append(Pose(rot, trans))
    return poses


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    _atomic_write(Path(path), np.asarray(labels, dtype=LABEL_DTYPE).tobytes())


def read_labels(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4 != 0:
        raise ValueError(f"corrupt label file {path}: length not a multiple of 4")
    return np.frombuffer(raw, dtype=LABEL_DTYPE).copy()


def write_times(path: str | Path, times: list[float]) -> None:
    _atomic_write(Path(path), ("\n".join(f"{t:.17g}" for t in times) + ("\n" if times else "")).encode())


def read_times(path: str | Path) -> list[float]:
    with open(path) as fh:
        return [float(line) for line in fh if line.strip()]


def write_sequence(
    seq_dir: str | Path,
    frames: list[Frame],
    labels: InstanceLabeling | None = None,
    meta: dict | None = None,
) -> None:
    """Write a full sequence directory (scans, poses, times, labels, meta)."""
    seq_dir = Path(seq_dir)
    (seq_dir / "scans").mkdir(parents=True, exist_ok=True)
    if labels is not None:
        if len(labels) != len(frames):
            raise ValueError("label frame count must match scan count")
        (seq_dir / "labels").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        write_scan(seq_dir / "scans" / f"{i:06d}.bin", frame.positions, frame.velocities)
        if labels is not None:
            if len(labels[i]) != len(frame):
                raise ValueError(f"label count mismatch in frame {i}")
            write_labels(seq_dir / "labels" / f"{i:06d}.label", labels[i])
    write_poses(seq_dir / "poses.txt", [f.pose for f in frames])
    write_times(seq_dir / "times.txt", [f.timestamp for f in frames])
    full_meta = {"format_version": FORMAT_VERSION}
    full_meta.update(meta or {})
    _atomic_write(seq_dir / "meta.json", json.dumps(full_meta, indent=2, sort_keys=True).encode())


class LoadedSequence:
    """A sequence read back from disk."""

    def __init__(self, frames: list[Frame], labels: InstanceLabeling | None, meta: dict):
        self.frames = frames
        self.labels = labels
        self.meta = meta

    def __len__(self) -> int:
        return len(self.frames)


def load_sequence(seq_dir: str | Path) -> LoadedSequence:
    """Load a sequence directory, checking scan/pose/time/label consistency."""
    seq_dir = Path(seq_dir)
    scan_paths = sorted((seq_dir / "scans").glob("*.bin"))
    if not scan_paths:
        raise FileNotFoundError(f"no scans under {seq_dir}")
    poses = read_poses(seq_dir / "poses.txt")
    times = read_times(seq_dir / "times.txt")
    if not (len(scan_paths) == len(poses) == len(times)):
        raise ValueError(
            f"{seq_dir}: scan/pose/time counts differ "
            f"({len(scan_paths)}/{len(poses)}/{len(times)})"
        )
    meta = {}
    meta_path = seq_dir / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())

    label_dir = seq_dir / "labels"
    label_arrays: list[np.ndarray] | None = [] if label_dir.is_dir() else None

    frames = []
    next_pid = 0
    for i, (scan_path, pose, t) in enumerate(zip(scan_paths, poses, times)):
        positions, velocities = read_scan(scan_path)
        n = len(positions)
        pids = np.arange(next_pid, next_pid + n, dtype=np.int64)
        next_pid += n
        frames.append(Frame(t, positions.astype(float), velocities.astype(float), pose, pids))
        if label_arrays is not None:
            label_path = label_dir / f"{i:06d}.label"
            if not label_path.exists():
                raise FileNotFoundError(f"missing label file {label_path} for scan {scan_path}")
            lab = read_labels(label_path)
            if len(lab) != n:
                raise ValueError(
                    f"label/scan length mismatch: {label_path} has {len(lab)}, "
                    f"{scan_path} has {n}"
                )
            label_arrays.append(lab)

    labels = InstanceLabeling(label_arrays) if label_arrays is not None else None
    return LoadedSequence(frames, labels, meta)


def list_sequences(root: str | Path) -> list[Path]:
    """Sequence directories under ``root`` (any directory with a scans/ subdir)."""
    root = Path(root)
    if not root.is_dir():
        return []
    if (root / "scans").is_dir():
        return [root]
    return sorted(p for p in root.iterdir() if (p / "scans").is_dir())
