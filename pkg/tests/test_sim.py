import numpy as np
import pytest

from dopplertrack.sim import (
    BoxActorSpec,
    GroundSpec,
    MotionSegment,
    SceneConfig,
    generate_sequence,
    highway_scene,
    ideal_ego_radial_profile,
    paper_scene_set,
    radial_velocity,
)


def test_radial_velocity_sign_anchor():
    # Static sensor, point straight ahead moving towards it.
    v = radial_velocity(np.array([10.0, 0, 0]), np.array([-2.0, 0, 0]), np.zeros(3), np.zeros(3))
    assert v == pytest.approx(-2.0)


def test_radial_velocity_moving_sensor():
    v = radial_velocity(np.array([10.0, 0, 0]), np.zeros(3), np.zeros(3), np.array([5.0, 0, 0]))
    assert v == pytest.approx(-5.0)


def test_radial_velocity_oblique():
    v = radial_velocity(np.array([10.0, 10.0, 0]), np.zeros(3), np.zeros(3), np.array([5.0, 0, 0]))
    assert v == pytest.approx(-5.0 / np.sqrt(2.0), abs=1e-12)


def test_radial_velocity_degenerate():
    with pytest.raises(ValueError, match="degenerate ray"):
        radial_velocity(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))


def test_ideal_profile():
    assert ideal_ego_radial_profile(20.0, 0.0) == pytest.approx(-20.0)
    assert ideal_ego_radial_profile(20.0, 18.75) == pytest.approx(-18.9386, abs=1e-4)
    assert ideal_ego_radial_profile(0.0, 12.0) == 0.0


def _static_scene(seed=0, **kw):
    defaults = dict(
        duration_s=0.3,
        seed=seed,
        v_noise_sigma=0.0,
        pos_noise_sigma=0.0,
        outlier_rate=0.0,
        ground=GroundSpec(extent_m=50.0, density=1.0),
    )
    defaults.update(kw)
    return SceneConfig(**defaults)


def test_static_scene_all_background():
    gt = generate_sequence(_static_scene())
    for lab in gt.labels.per_frame:
        assert (lab == 0).all()


def test_determinism():
    cfg = highway_scene(3)
    a = generate_sequence(cfg)
    b = generate_sequence(cfg)
    assert len(a.frames) == len(b.frames)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.positions, fb.positions)
        assert np.array_equal(fa.velocities, fb.velocities)


def test_receding_actor_exact_doppler():
    actor = BoxActorSpec(
        instance_id=1,
        size=(3.0, 2.0, 1.5),
        start=(30.0, 0.0, 0.75),
        segments=(MotionSegment(10.0, (10.0, 0.0, 0.0)),),
        density=40.0,
    )
    cfg = _static_scene(actors=(actor,), ground=None)
    gt = generate_sequence(cfg)
    frame = gt.frames[0]
    lab = gt.labels[0]
    assert (lab == 1).all() and len(frame) > 50
    # Box has lateral extent, so Doppler is +10 * cos(angle), close to but
    # at most +10; points dead ahead give exactly +10.
    assert frame.velocities.max() <= 10.0 + 1e-9
    assert frame.velocities.min() > 9.9


def test_zero_noise_doppler_matches_oracle():
    cfg = highway_scene(5, noisy=False)
    gt = generate_sequence(cfg)
    for fi in (0, len(gt.frames) - 1):
        frame = gt.frames[fi]
        lab = gt.labels[fi]
        sensor_pos = frame.pose.translation
        world = frame.pose.to_world(frame.positions)
        for idx in np.linspace(0, len(frame) - 1, 40).astype(int):
            iid = int(lab[idx])
            if iid == 0:
                pvel = np.zeros(3)
            else:
                actor = next(a for a in cfg.actors if a.instance_id == iid)
                pvel = actor.velocity(frame.timestamp)
            expect = radial_velocity(world[idx], pvel, sensor_pos, gt.ego_velocity[fi])
            assert frame.velocities[idx] == pytest.approx(expect, abs=1e-9)


def test_points_inside_fov_and_range():
    cfg = highway_scene(2)
    gt = generate_sequence(cfg)
    for frame in gt.frames:
        x, y, z = frame.positions.T
        h = np.degrees(np.arctan2(y, x))
        v = np.degrees(np.arctan2(z, np.hypot(x, y)))
        # Position noise is added after the FOV cut; allow a whisker.
        assert np.abs(h).max() <= cfg.h_fov_deg / 2 + 0.5
        assert np.abs(v).max() <= cfg.v_fov_deg / 2 + 0.5
        assert np.linalg.norm(frame.positions, axis=1).max() <= cfg.max_range_m + 1.0


def test_labels_follow_actors():
    cfg = highway_scene(4, noisy=False)
    gt = generate_sequence(cfg)
    for fi, frame in enumerate(gt.frames):
        lab = gt.labels[fi]
        for actor in cfg.actors:
            idx = np.flatnonzero(lab == actor.instance_id)
            if idx.size == 0:
                continue
            world = frame.pose.to_world(frame.positions[idx])
            center = actor.position(frame.timestamp)
            half = np.array(actor.size) / 2.0
            assert (np.abs(world - center) <= half + 1e-6).all()


def test_empty_scene_rejected():
    with pytest.raises(ValueError, match="empty scene"):
        generate_sequence(SceneConfig(ground=None))


def test_timestamps_strictly_increase():
    gt = generate_sequence(_static_scene(duration_s=1.0))
    times = [f.timestamp for f in gt.frames]
    assert all(b > a for a, b in zip(times, times[1:]))
    ids = np.concatenate([f.point_ids for f in gt.frames])
    assert len(np.unique(ids)) == len(ids)


def test_paper_scene_set_shape():
    scenes = paper_scene_set()
    assert len(scenes) == 7
    names = [n for n, _ in scenes]
    assert sum(n.startswith("highway") for n in names) == 5
    assert sum(n.startswith("urban") for n in names) == 2
