import numpy as np
import pytest

from lioforge.geometry import Pose, compose
from lioforge.range_image import BeamModel
from lioforge.simulation import (OUTLIER, PRESETS, Scenario, SensorNoise, TrajectoryProfile, World,
                                 box_room, empty_world, generate, raycast, simulate_imu, simulate_scan,
                                 simulate_tracks, single_wall)
from lioforge.vio.camera import CameraRig, reprojection_residual

MODEL = BeamModel.uniform(16, -15.0, 15.0, 0.4, 100.0)


def moller_trumbore(world: World, origin, dirs):
    """Nearest hit over the two triangles of every rectangle, one ray at a time."""
    tris = []
    for c, e1, e2 in zip(world.corners, world.edge1, world.edge2):
        tris.append((c, c + e1, c + e1 + e2))
        tris.append((c, c + e1 + e2, c + e2))
    out = np.full(len(dirs), np.inf)
    for i, d in enumerate(dirs):
        best = np.inf
        for v0, v1, v2 in tris:
            a, b = v1 - v0, v2 - v0
            p = np.cross(d, b)
            det = a @ p
            if abs(det) < 1e-14:
                continue
            s = origin - v0
            u = (s @ p) / det
            if u < 0 or u > 1:
                continue
            q = np.cross(s, a)
            v = (d @ q) / det
            if v < 0 or u + v > 1:
                continue
            t = (b @ q) / det
            if 1e-9 < t < best:
                best = t
        out[i] = best
    return out


def test_raycast_matches_independent_oracle():
    rng = np.random.default_rng(0)
    world = box_room(0)
    origin = np.array([0.5, -1.0, 1.5])
    d = rng.normal(size=(10000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r, which = raycast(world, origin, d)
    ref = moller_trumbore(world, origin, d)
    assert np.all(np.isfinite(ref))          # closed room: every beam hits
    assert np.abs(r - ref).max() < 1e-9
    assert np.all(which >= 0)


def test_single_wall_beam_along_x():
    m = BeamModel([0.0], np.radians(90.0), 100.0)
    sc = simulate_scan(single_wall(5.0), Pose(), m, SensorNoise.noiseless())
    along = np.flatnonzero(np.abs(sc.xyz[:, 1]) < 1e-12)
    assert len(along) == 1
    np.testing.assert_allclose(sc.xyz[along[0]], [5.0, 0.0, 0.0], atol=1e-12)
    assert sc.intensity[along[0]] == 0


def test_empty_world_gives_empty_scan():
    sc = simulate_scan(empty_world(), Pose(), MODEL, SensorNoise())
    assert len(sc.xyz) == 0
    r, w = raycast(empty_world(), np.zeros(3), np.eye(3))
    assert np.all(np.isinf(r)) and np.all(w == -1)


def test_scan_labels_and_outliers():
    world = box_room(0)
    pose = Pose(t=[0, 0, 1.5])
    clean = simulate_scan(world, pose, MODEL, SensorNoise.noiseless())
    # every labelled point lies on its labelled surface
    pw = pose.apply(clean.xyz)
    lab = clean.intensity.astype(int)
    n = np.cross(world.edge1, world.edge2)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    dist = np.einsum("ij,ij->i", pw - world.corners[lab], n[lab])
    assert np.abs(dist).max() < 1e-9
    noisy = simulate_scan(world, pose, MODEL, SensorNoise(outlier_fraction=0.05), np.random.default_rng(1))
    frac = np.mean(noisy.intensity == OUTLIER)
    assert 0.04 < frac < 0.06


def test_noise_validation():
    with pytest.raises(ValueError):
        SensorNoise(range_sigma=-1.0)
    with pytest.raises(ValueError):
        SensorNoise(outlier_fraction=1.5)
    with pytest.raises(ValueError):
        World([[0, 0, 0]], [[1, 0, 0]], [[2, 0, 0]])
    with pytest.raises(ValueError):
        simulate_imu(TrajectoryProfile.static(), 50.0)


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_profiles_respect_caps(preset):
    prof = TrajectoryProfile.ellipse(preset)
    acc, angv = prof.peaks()
    cap_a, cap_w = PRESETS[preset]
    assert acc <= cap_a and angv <= cap_w
    # IMU samples stay within the caps as well
    imu = simulate_imu(prof, 200.0, SensorNoise.noiseless())
    assert np.linalg.norm(imu.accel, axis=1).max() <= cap_a + 1e-9
    assert np.linalg.norm(imu.gyro, axis=1).max() <= cap_w + 1e-9


def test_landmark_on_axis_at_principal_point():
    rig, _ = CameraRig.three_camera().subset(["front"])
    cam = rig[0]
    lm = cam.extrinsic.apply(np.array([0, 0, 10.0]))
    world = World(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), lm[None])
    frames, tracks = simulate_tracks(world, [Pose()], rig, SensorNoise.noiseless())
    assert len(tracks) == 1
    np.testing.assert_allclose(tracks[0].observations[0][1], 0.0, atol=1e-12)


def test_dropout_schedule_zeroes_camera():
    data = generate(Scenario(duration=3.0, dropouts=[("front", 10, 20)]))
    for f, obs in enumerate(data.frames):
        n_front = sum(1 for c, _, _ in obs.values() if c == 0)
        if 10 <= f <= 20:
            assert n_front == 0
        else:
            assert n_front > 0
    with pytest.raises(KeyError):
        simulate_tracks(data.world, [Pose()], data.rig, SensorNoise(), [(5, 0, 1)])


def test_noiseless_tracks_have_zero_residual():
    data = generate(Scenario(duration=1.0, noise=SensorNoise.noiseless()))
    poses = [sp.pose for sp in data.truth]
    worst = 0.0
    for tr in data.tracks:
        if len(tr.observations) < 2:
            continue
        cam = data.rig[tr.camera_index]
        h, hxy = tr.observations[0]
        pc = compose(poses[h], cam.extrinsic).inverse().apply(data.world.landmarks[tr.landmark])
        rho = 1.0 / np.linalg.norm(pc)
        for f, xy in tr.observations[1:]:
            r, _, ok = reprojection_residual(hxy, xy, rho, poses[h], poses[f], cam.extrinsic,
                                             jacobians=False)
            assert ok
            worst = max(worst, np.abs(r).max())
    assert worst < 1e-9


def test_track_ids_unique_per_camera():
    data = generate(Scenario(duration=2.0))
    owner = {}
    for obs in data.frames:
        for tid, (c, lm, _) in obs.items():
            assert owner.setdefault(tid, (c, lm)) == (c, lm)


def test_generation_is_deterministic():
    a = generate(Scenario(duration=1.0))
    b = generate(Scenario(duration=1.0))
    for x, y in zip(a.scans, b.scans):
        np.testing.assert_array_equal(x.xyz, y.xyz)
        np.testing.assert_array_equal(x.intensity, y.intensity)
    np.testing.assert_array_equal(a.imu.gyro, b.imu.gyro)
    np.testing.assert_array_equal(a.imu.accel, b.imu.accel)
    assert [t.observations[0][0] for t in a.tracks] == [t.observations[0][0] for t in b.tracks]
    for s, t in zip(a.tracks, b.tracks):
        np.testing.assert_array_equal(np.array([o[1] for o in s.observations]),
                                      np.array([o[1] for o in t.observations]))
    c = generate(Scenario(seed=8, duration=1.0))
    assert not np.array_equal(a.scans[0].xyz, c.scans[0].xyz)


def test_world_roundtrip_and_corridor():
    w = box_room(3)
    back = World.from_dict(w.to_dict())
    np.testing.assert_array_equal(back.corners, w.corners)
    np.testing.assert_array_equal(back.landmarks, w.landmarks)
    scn = Scenario(world="corridor", duration=2.0)
    data = generate(scn)
    # the profile may be stretched in time to respect the caps
    assert len(data.scans) == len(data.stamps) and data.profile.duration >= 2.0
    np.testing.assert_allclose(np.diff(data.stamps), 0.1, atol=1e-12)
    assert data.world.n_surfaces > 6
    with pytest.raises(KeyError):
        Scenario(world="cave").build_world()
    with pytest.raises(KeyError):
        TrajectoryProfile.ellipse("rocket")
