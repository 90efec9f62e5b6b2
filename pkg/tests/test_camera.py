import numpy as np
import pytest

from lioforge.geometry import Pose, boxplus, compose, pose_error
from lioforge.vio.camera import (LIDAR, Camera, CameraRig, FeatureTrack, align_sfm_to_body, bearing,
                                 extrinsic_terms, prime_depth, project_point, reprojection_batch,
                                 reprojection_residual, triangulate)

RIG = CameraRig.three_camera()


def random_pose(rng, scale=1.0):
    return Pose.from_rotvec(rng.normal(size=3) * 0.3, rng.normal(size=3) * scale)


def observe(landmark_w, body: Pose, cam: Camera):
    pc = compose(body, cam.extrinsic).inverse().apply(landmark_w)
    return project_point(pc), pc


def random_config(rng):
    """Host/target body poses, an extrinsic and a landmark in front of both cameras."""
    cam = RIG[int(rng.integers(3))]
    Hi = random_pose(rng)
    Tj = boxplus(Hi, np.r_[rng.normal(size=3) * 0.05, rng.normal(size=3) * 0.3])
    ch = compose(Hi, cam.extrinsic)
    d = rng.uniform(3, 20)
    xy_h = rng.uniform(-0.3, 0.3, 2)
    lw = ch.apply(bearing(xy_h) * d)
    xy_t, _ = observe(lw, Tj, cam)
    return cam, Hi, Tj, xy_h, xy_t + rng.normal(size=2) * 1e-3, 1.0 / d


def test_perfect_observation_zero(rng):
    for _ in range(50):
        cam, Hi, Tj, xy_h, _, rho = random_config(rng)
        ch = compose(Hi, cam.extrinsic)
        lw = ch.apply(bearing(xy_h) / rho)
        xy_t, _ = observe(lw, Tj, cam)
        r, _, ok = reprojection_residual(xy_h, xy_t, rho, Hi, Tj, cam.extrinsic)
        assert ok and np.abs(r).max() < 1e-10


def test_inverse_depth_one_percent():
    # identity extrinsic: body = camera; target shifted by b along camera x
    b = 0.5
    host, target = Pose(), Pose(t=[b, 0.0, 0.0])
    r, _, ok = reprojection_residual([0.0, 0.0], [-b / 10.0, 0.0], 1.01 / 10.0, host, target, Pose())
    # predicted x = -b / (10 / 1.01)
    assert ok
    assert abs(r[0] - (-b * 1.01 / 10.0 + b / 10.0)) < 1e-6 and abs(r[1]) < 1e-12


def test_behind_camera_invalid():
    r, J, ok = reprojection_residual([0.0, 0.0], [0.0, 0.0], 0.1, Pose(), Pose(t=[0, 0, 20.0]), Pose())
    assert not ok and J is None


def test_jacobians_finite_difference(rng):
    worst = 0.0
    h = 1e-6
    for _ in range(200):
        cam, Hi, Tj, xy_h, xy_t, rho = random_config(rng)
        s = 1.0 / cam.normalized_sigma(1.5) / 400.0
        _, J, ok = reprojection_residual(xy_h, xy_t, rho, Hi, Tj, cam.extrinsic, s)
        assert ok

        def f(H, T, p):
            return reprojection_residual(xy_h, xy_t, p, H, T, cam.extrinsic, s, jacobians=False)[0]
        for key, fn in (("host", lambda e: f(boxplus(Hi, e), Tj, rho)),
                        ("target", lambda e: f(Hi, boxplus(Tj, e), rho))):
            num = np.column_stack([(fn(h * np.eye(6)[k]) - fn(-h * np.eye(6)[k])) / (2 * h) for k in range(6)])
            worst = max(worst, np.abs(num - J[key]).max())
        num = (f(Hi, Tj, rho + h) - f(Hi, Tj, rho - h)) / (2 * h)
        worst = max(worst, np.abs(num - J["inv_depth"][:, 0]).max())
    assert worst < 1e-4


def test_batch_matches_scalar(rng):
    rows = [random_config(rng) for _ in range(30)]
    scalar = [reprojection_residual(xh, xt, rho, H, T, c.extrinsic, 2.0) for c, H, T, xh, xt, rho in rows]
    st = lambda f: np.array([f(*row) for row in rows])
    r, Jh, Jt, Jr, valid = reprojection_batch(
        st(lambda c, H, T, xh, xt, rho: xh), st(lambda c, H, T, xh, xt, rho: xt),
        st(lambda c, H, T, xh, xt, rho: rho), st(lambda c, H, T, xh, xt, rho: H.R),
        st(lambda c, H, T, xh, xt, rho: H.t), st(lambda c, H, T, xh, xt, rho: T.R),
        st(lambda c, H, T, xh, xt, rho: T.t), st(lambda c, H, T, xh, xt, rho: c.extrinsic.R),
        st(lambda c, H, T, xh, xt, rho: c.extrinsic.t), np.full(30, 2.0))
    assert valid.all()
    for i, (rs, J, _) in enumerate(scalar):
        np.testing.assert_allclose(r[i], rs, atol=1e-12)
        np.testing.assert_allclose(Jh[i], J["host"], atol=1e-10)
        np.testing.assert_allclose(Jt[i], J["target"], atol=1e-10)
        np.testing.assert_allclose(Jr[i], J["inv_depth"][:, 0], atol=1e-9)


def test_align_identity_extrinsic(rng):
    cams = [random_pose(rng, 3) for _ in range(5)]
    out = align_sfm_to_body(cams, np.eye(3), np.zeros(3), 1.0)
    for a, b in zip(out, cams):
        assert a.is_close(b, 1e-12)


def test_align_recovers_body_truth(rng):
    for cam in RIG:
        bodies = [random_pose(rng, 3) for _ in range(5)]
        cams = [compose(b, cam.extrinsic) for b in bodies]
        out = align_sfm_to_body(cams, *extrinsic_terms(cam.extrinsic), 1.0)
        for a, b in zip(out, bodies):
            et, er = pose_error(a, b)
            assert et < 1e-9 and er < 1e-9


def test_align_scale_acts_on_camera_term(rng):
    cams = [random_pose(rng, 3) for _ in range(4)]
    R, p = extrinsic_terms(RIG[1].extrinsic)
    one = align_sfm_to_body(cams, R, p, 1.0)
    two = align_sfm_to_body(cams, R, p, 2.0)
    for c, a, b in zip(cams, one, two):
        np.testing.assert_allclose(b.t - a.t, c.t, atol=1e-12)
        np.testing.assert_allclose(b.R, a.R, atol=1e-15)
    with pytest.raises(ValueError):
        align_sfm_to_body(cams, R, p, 0.0)


def track(xy=(0.05, -0.02)):
    return FeatureTrack(1, 0, [(0, np.array(xy))])


def test_prime_depth_on_ray():
    t = track()
    prime_depth(t, bearing(t.observations[0][1])[None] * 7.0)
    assert t.depth_prior == pytest.approx(7.0, abs=1e-12) and t.depth_source == LIDAR
    assert t.inverse_depth == pytest.approx(1 / 7.0)


def test_prime_depth_nearest_in_angle(rng):
    for _ in range(50):
        t = track(rng.uniform(-0.2, 0.2, 2))
        b = bearing(t.observations[0][1])
        pts = []
        for _ in range(3):
            v = b + rng.normal(size=3) * 0.008
            pts.append(v / np.linalg.norm(v) * rng.uniform(2, 20))
        pts = np.array(pts)
        ang = np.degrees(np.arccos(np.clip(pts @ b / np.linalg.norm(pts, axis=1), -1, 1)))
        prime_depth(t, pts)
        if ang.min() <= 1.0:
            assert t.depth_prior == pytest.approx(np.linalg.norm(pts[np.argmin(ang)]))
        else:
            assert t.depth_prior is None


def test_prime_depth_outside_cone_unchanged():
    t = track()
    prime_depth(t, np.array([[5.0, 0, 0], [0, 0, -3.0]]))
    assert t.depth_prior is None and t.depth_source is None
    prime_depth(t, np.zeros((0, 3)))
    assert t.depth_prior is None


def test_triangulate_two_views(rng):
    cam = RIG[0]
    H = random_pose(rng)
    T = boxplus(H, np.r_[0, 0, 0.02, 0.5, -0.3, 0.1])
    lw = compose(H, cam.extrinsic).apply(bearing([0.1, 0.05]) * 8.0)
    t = FeatureTrack(3, 0, [(0, observe(lw, H, cam)[0]), (1, observe(lw, T, cam)[0])])
    assert triangulate(t, {0: H, 1: T}, RIG) == pytest.approx(8.0, rel=1e-9)
    assert triangulate(FeatureTrack(4, 0, t.observations[:1]), {0: H}, RIG) is None


def test_track_eligibility_and_order():
    t = track()
    assert not t.eligible()
    t.depth_source = LIDAR
    assert t.eligible()
    t.add(2, [0.0, 0.0])
    with pytest.raises(ValueError):
        t.add(1, [0.0, 0.0])
    assert t.frames == [0, 2] and t.host_frame == 0


def test_rig_validation_and_roundtrip():
    with pytest.raises(ValueError):
        CameraRig(())
    with pytest.raises(ValueError):
        Camera("x", 0.0, 1.0, 0, 0, 10, 10)
    with pytest.raises(ValueError):
        CameraRig((RIG[0], RIG[0]))
    back = CameraRig.from_dict(RIG.to_dict())
    assert back.names == ["front", "right", "left"]
    for a, b in zip(back, RIG):
        assert a.extrinsic.is_close(b.extrinsic, 1e-15)
    sub, idx = RIG.subset(["left", "front"])
    assert sub.names == ["left", "front"] and idx == [2, 0]
    with pytest.raises(KeyError):
        RIG.index("rear")


def test_landmark_on_axis_projects_to_centre():
    cam = RIG[0]
    body = Pose()
    lw = cam.extrinsic.apply(np.array([0, 0, 10.0]))
    xy, _ = observe(lw, body, cam)
    np.testing.assert_allclose(xy, 0.0, atol=1e-12)

