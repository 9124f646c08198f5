import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dopplertrack.core import Frame, InstanceLabeling, Pose
from dopplertrack.dataset_io import (
    list_sequences,
    load_sequence,
    read_labels,
    read_poses,
    read_scan,
    read_times,
    write_labels,
    write_poses,
    write_scan,
    write_sequence,
    write_times,
)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def test_scan_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(1000, 3)).astype(np.float32)
    vel = rng.normal(size=1000).astype(np.float32)
    path = tmp_path / "scan.bin"
    write_scan(path, pts, vel)
    back_pts, back_vel = read_scan(path)
    assert np.array_equal(back_pts, pts)
    assert np.array_equal(back_vel, vel)


def test_scan_empty(tmp_path):
    path = tmp_path / "empty.bin"
    write_scan(path, np.empty((0, 3), dtype=np.float32), np.empty(0, dtype=np.float32))
    pts, vel = read_scan(path)
    assert pts.shape == (0, 3) and vel.shape == (0,)


def test_scan_corrupt(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 17)
    with pytest.raises(ValueError, match="corrupt scan"):
        read_scan(path)


def test_pose_identity_line(tmp_path):
    path = tmp_path / "poses.txt"
    path.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    poses = read_poses(path)
    assert len(poses) == 1
    assert np.array_equal(poses[0].rotation, np.eye(3))
    assert np.array_equal(poses[0].translation, np.zeros(3))


def test_pose_round_trip_precision(tmp_path):
    rng = np.random.default_rng(1)
    poses = [Pose(random_rotation(rng), rng.normal(size=3) * 100) for _ in range(50)]
    path = tmp_path / "poses.txt"
    write_poses(path, poses)
    back = read_poses(path)
    for a, b in zip(poses, back):
        assert np.abs(a.rotation - b.rotation).max() < 1e-12
        assert np.abs(a.translation - b.translation).max() < 1e-12


def test_pose_wrong_token_count(tmp_path):
    path = tmp_path / "poses.txt"
    path.write_text("1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(ValueError, match="poses.txt:1"):
        read_poses(path)


def test_pose_non_orthonormal_rejected(tmp_path):
    path = tmp_path / "poses.txt"
    path.write_text("2 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(ValueError, match="not orthonormal"):
        read_poses(path)


def test_labels_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 2**32, 500, dtype=np.uint32)
    path = tmp_path / "f.label"
    write_labels(path, labels)
    assert np.array_equal(read_labels(path), labels)


def test_labels_all_zero_valid(tmp_path):
    path = tmp_path / "f.label"
    write_labels(path, np.zeros(10, dtype=np.uint32))
    assert (read_labels(path) == 0).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 2**32 - 1), max_size=40))
def test_labels_round_trip_property(first, rest):
    import io as _io
    import tempfile, os

    arr = np.array([first, *rest], dtype=np.uint32)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "x.label")
        write_labels(p, arr)
        assert np.array_equal(read_labels(p), arr)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, width=32),
        min_size=4,
        max_size=64,
    ).filter(lambda xs: len(xs) % 4 == 0)
)
def test_scan_round_trip_property(values):
    import tempfile, os

    rec = np.array(values, dtype=np.float32).reshape(-1, 4)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "x.bin")
        write_scan(p, rec[:, :3], rec[:, 3])
        pts, vel = read_scan(p)
        assert np.array_equal(pts, rec[:, :3]) and np.array_equal(vel, rec[:, 3])


def test_times_round_trip(tmp_path):
    times = [0.0, 0.1, 0.2000000001, 12345.6789]
    path = tmp_path / "times.txt"
    write_times(path, times)
    assert read_times(path) == times


def _toy_sequence():
    rng = np.random.default_rng(3)
    frames = []
    labels = []
    pid = 0
    for t in range(3):
        n = 20 + t
        pts = rng.normal(size=(n, 3)).astype(np.float32).astype(float)
        vel = rng.normal(size=n).astype(np.float32).astype(float)
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        frames.append(Frame(0.1 * t, pts, vel, pose, np.arange(pid, pid + n)))
        labels.append(rng.integers(0, 4, n).astype(np.uint32))
        pid += n
    return frames, InstanceLabeling(labels)


def test_sequence_round_trip(tmp_path):
    frames, labels = _toy_sequence()
    seq = tmp_path / "seq"
    write_sequence(seq, frames, labels, meta={"seed": 7})
    back = load_sequence(seq)
    assert len(back) == 3
    assert back.meta["seed"] == 7 and back.meta["format_version"] == 1
    for a, b in zip(frames, back.frames):
        assert np.array_equal(np.float32(a.positions), np.float32(b.positions))
        assert a.timestamp == b.timestamp
        assert np.abs(a.pose.rotation - b.pose.rotation).max() < 1e-12
    assert back.labels == labels


def test_sequence_label_length_mismatch(tmp_path):
    frames, labels = _toy_sequence()
    seq = tmp_path / "seq"
    write_sequence(seq, frames, labels)
    # truncate one label file
    target = seq / "labels" / "000001.label"
    data = target.read_bytes()
    target.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="000001"):
        load_sequence(seq)


def test_sequence_count_mismatch(tmp_path):
    frames, labels = _toy_sequence()
    seq = tmp_path / "seq"
    write_sequence(seq, frames, labels)
    (seq / "scans" / "000099.bin").write_bytes(b"")
    with pytest.raises(ValueError, match="counts differ"):
        load_sequence(seq)


def test_list_sequences(tmp_path):
    frames, labels = _toy_sequence()
    write_sequence(tmp_path / "a", frames, labels)
    write_sequence(tmp_path / "b", frames, None)
    found = list_sequences(tmp_path)
    assert [p.name for p in found] == ["a", "b"]
    assert list_sequences(tmp_path / "a") == [tmp_path / "a"]
    assert load_sequence(tmp_path / "b").labels is None
