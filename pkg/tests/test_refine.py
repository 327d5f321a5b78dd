import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatmotion.avatar import (
    STANDING_HEIGHT,
    HumanPose,
    PosePrior,
    batch_forward_kinematics,
    batch_forward_kinematics_backward,
    forward_kinematics,
    forward_kinematics_backward,
    load_default_avatar,
)
from splatmotion.geometry import RigidTransform
from splatmotion.motion import MotionFrame, MotionSequence
from splatmotion.optim import finite_diff_check
from splatmotion.refine import (
    HandPoints,
    RefineConfig,
    RefineDivergenceError,
    _Objective,
    contact_set,
    loss_contact,
    loss_fit,
    loss_smooth,
    refine_sequence,
    write_refine_csv,
)
from splatmotion.splats import SplatCloud
from splatmotion.synth import oracle_camera, smooth_prior_motion


@pytest.fixture(scope="module")
def template():
    return load_default_avatar()


@pytest.fixture(scope="module")
def prior():
    return PosePrior.build()


def _seq(poses, obj=None):
    cam = oracle_camera(32, 32)
    objs = [None] * len(poses) if obj is None else obj
    return MotionSequence(tuple(MotionFrame(cam, p, o) for p, o in zip(poses, objs)))


def _local(poses):
    return np.stack([np.vstack([p.orient[None], p.body]) for p in poses])


def test_config_defaults_and_validation():
    c = RefineConfig()
    assert (c.iters, c.lr, c.lambda_physics, c.lambda_contact, c.contact_eps) == (1000, 0.05, 1e-3, 1.0, 0.02)
    assert c.smooth_weight == 0.3
    assert RefineConfig(scenario="dynamic").smooth_weight == 0.1
    assert RefineConfig(lambda_smooth=0.7).smooth_weight == 0.7
    with pytest.raises(ValueError):
        RefineConfig(scenario="indoor")
    with pytest.raises(ValueError):
        RefineConfig(contact_mode="sum")
    with pytest.raises(ValueError):
        RefineConfig(lr=0.0)


# ---------------------------------------------------------------- batched kinematics


def test_batch_kinematics_matches_single(template):
    rng = np.random.default_rng(0)
    poses = [HumanPose(rng.normal(size=3), rng.normal(0, 0.5, 3), rng.normal(0, 0.5, (21, 3))) for _ in range(4)]
    pos, rot = batch_forward_kinematics(template.skeleton, np.stack([p.root for p in poses]), _local(poses))
    for k, p in enumerate(poses):
        kin = forward_kinematics(template.skeleton, p)
        np.testing.assert_allclose(pos[k], kin.positions, atol=1e-12)
        np.testing.assert_allclose(rot[k], kin.rotations, atol=1e-12)


def test_batch_kinematics_backward_matches_finite_differences(template):
    rng = np.random.default_rng(1)
    sk = template.skeleton
    root = rng.normal(size=(2, 3))
    local = rng.normal(0, 0.5, (2, 22, 3))
    w = rng.normal(size=(2, 22, 3))
    wd = rng.normal(size=(2, 22, 3))

    def f(x):
        r, loc = x[:6].reshape(2, 3), x[6:].reshape(2, 22, 3)
        p, _ = batch_forward_kinematics(sk, r, loc)
        return float(np.sum(w * p))

    pos, rot = batch_forward_kinematics(sk, root, local)
    g_root, g_local = batch_forward_kinematics_backward(sk, local, pos, rot, w)
    x = np.concatenate([root.ravel(), local.ravel()])
    res = finite_diff_check(f, x, np.concatenate([g_root.ravel(), g_local.ravel()]), h=1e-6)
    assert res < 1e-5

    # the rotation-tangent channel agrees with the single-pose backward
    g_root2, g_local2 = batch_forward_kinematics_backward(sk, local, pos, rot, w, wd)
    for k in range(2):
        pose = HumanPose(root[k], local[k, 0], local[k, 1:])
        kin = forward_kinematics(sk, pose)
        kin.local[:] = local[k]  # keep the exact (non-canonical) angles
        single = forward_kinematics_backward(sk, kin, w[k], wd[k])
        np.testing.assert_allclose(single, np.concatenate([g_root2[k], g_local2[k].ravel()]), atol=1e-10)


def test_hand_points_match_skinned_avatar(template):
    rng = np.random.default_rng(2)
    poses = [HumanPose(rng.normal(size=3), rng.normal(0, 0.4, 3), rng.normal(0, 0.4, (21, 3))) for _ in range(3)]
    hands = HandPoints(template)
    assert len(hands) > 0
    pos, rot = batch_forward_kinematics(template.skeleton, np.stack([p.root for p in poses]), _local(poses))
    pts, _ = hands.forward(pos, rot)
    for k, p in enumerate(poses):
        np.testing.assert_allclose(pts[k], template.pose(p).cloud.positions[hands.index], atol=1e-12)


# ---------------------------------------------------------------- loss terms


def test_loss_fit_values():
    ref = np.zeros((2, 3))
    v, g = loss_fit(ref, [[0.1, 0, 0], [0, 0.2, 0]])
    assert v == pytest.approx((0.01 + 0.04) / 2)
    np.testing.assert_allclose(g, [[0.1, 0, 0], [0, 0.2, 0]])


def test_fit_zero_at_encoded_in_span_pose(template, prior):
    rng = np.random.default_rng(3)
    body = prior.decode(rng.normal(0, 0.2, prior.latent_dim))
    pose = HumanPose([0, 0, 1], [0, 0, 0.3], body)
    ref = forward_kinematics(template.skeleton, pose).positions
    back = HumanPose([0, 0, 1], [0, 0, 0.3], prior.decode(prior.encode(body)))
    assert loss_fit(ref, forward_kinematics(template.skeleton, back).positions)[0] < 1e-28
    mean_pose = HumanPose([0, 0, 1], [0, 0, 0], prior.decode(np.zeros(prior.latent_dim)))
    j = forward_kinematics(template.skeleton, mean_pose).positions
    assert loss_fit(j, j)[0] == 0.0


def test_contact_set_examples():
    hand = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert len(contact_set(hand, [[0.0, 0.5, 0.0]], 0.02)) == 0
    pairs = contact_set(hand, [[0.0, 0.01, 0.0], [0.5, 0.5, 0.5]], 0.02)
    assert pairs.tolist() == [[0, 0]]
    with pytest.raises(ValueError):
        contact_set(hand, hand, 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_contact_set_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(0, 0.05, (rng.integers(1, 40), 3))
    o = rng.normal(0, 0.05, (rng.integers(1, 60), 3))
    eps = rng.uniform(0.01, 0.05)
    brute = [(i, j) for i, j in itertools.product(range(len(h)), range(len(o))) if np.linalg.norm(h[i] - o[j]) < eps]
    assert contact_set(h, o, eps).tolist() == [list(p) for p in brute]


def test_contact_loss_examples():
    assert loss_contact([]) == 0.0
    assert loss_contact([0.01]) == pytest.approx(0.01)
    d = [0.015, 0.012, 0.019, 0.013]
    assert loss_contact(d) == pytest.approx(min(d) / 4)
    assert loss_contact(d, "mean") == pytest.approx(np.mean(d))


def test_smooth_examples():
    assert loss_smooth(np.ones((5, 21, 3)))[0] == 0.0
    a = np.zeros((2, 21, 3))
    a[1, 4, 2] = 0.3
    assert loss_smooth(a)[0] == pytest.approx(0.3)


@pytest.mark.parametrize("seed", range(5))
def test_smooth_matches_scripted_reference(seed):
    rng = np.random.default_rng(seed)
    walk = np.cumsum(rng.normal(0, 0.05, (12, 21, 3)), axis=0)
    total = 0.0
    for t in range(len(walk) - 1):
        total += sum((x - y) ** 2 for x, y in zip(walk[t].ravel(), walk[t + 1].ravel())) ** 0.5
    assert loss_smooth(walk)[0] == pytest.approx(total / (len(walk) - 1), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 10))
def test_smooth_reversal_invariant(seed, t):
    walk = np.random.default_rng(seed).normal(size=(t, 21, 3))
    assert loss_smooth(walk)[0] == pytest.approx(loss_smooth(walk[::-1])[0], rel=1e-12)


def test_smooth_gradient_matches_finite_differences():
    walk = np.random.default_rng(4).normal(size=(5, 4))
    _, g = loss_smooth(walk)
    res = finite_diff_check(lambda x: loss_smooth(x.reshape(5, 4))[0], walk.ravel(), g.ravel())
    assert res < 1e-6


# ---------------------------------------------------------------- objective and optimizer


def _hover_case(template, gap=0.015, n=3):
    """Standing avatar with a small particle ball ``gap`` from the nearest hand point."""
    pose = HumanPose([0, 0, STANDING_HEIGHT], [0, 0, 0.1], np.zeros((21, 3)))
    hands = HandPoints(template)
    pos, rot = batch_forward_kinematics(template.skeleton, pose.root[None], _local([pose]))
    pts = hands.forward(pos, rot)[0][0]
    center = pts.mean(axis=0)
    tip = pts[np.argmax(np.linalg.norm(pts - center, axis=1))]
    direction = (tip - center) / np.linalg.norm(tip - center)
    rng = np.random.default_rng(0)
    offs = rng.normal(size=(40, 3))
    offs = 0.03 * offs / np.linalg.norm(offs, axis=1, keepdims=True)
    ball = tip + direction * (gap + 0.03) + offs
    # pin the gap: shift the ball so the nearest hand-particle distance is exactly ``gap``
    for _ in range(50):
        d = np.linalg.norm(ball[:, None] - pts[None], axis=2).min()
        ball += direction * (gap - d)
    cloud = SplatCloud(ball, np.tile([1.0, 0, 0, 0], (40, 1)), np.full((40, 3), 0.01), np.full(40, 0.9), np.full((40, 3), 0.5), "object")
    return pose, cloud, pts


def test_objective_gradient_matches_finite_differences(template, prior):
    rng = np.random.default_rng(5)
    pose, cloud, _ = _hover_case(template)
    poses = [pose.replace(root=pose.root + rng.normal(0, 0.002, 3), body=pose.body + rng.normal(0, 0.01, (21, 3))) for _ in range(3)]
    m = _seq(poses, [RigidTransform.identity()] * 3)
    obj = _Objective(m, prior, template, cloud, RefineConfig(scenario="dynamic", lambda_physics=0.5, contact_mode="mean"))
    x = np.concatenate([np.stack([p.root for p in poses]).ravel(), np.stack([p.orient for p in poses]).ravel(),
                        np.stack([prior.encode(p.body) + rng.normal(0, 0.01, 32) for p in poses]).ravel()])
    _, g, _ = obj(x)
    assert obj(x)[0][1] > 0
    res = finite_diff_check(lambda v: obj(v)[0][3], x, g, h=1e-7)
    assert res < 1e-4


def test_in_span_static_body_is_fixed_point(template, prior):
    rng = np.random.default_rng(6)
    body = prior.decode(rng.normal(0, 0.1, prior.latent_dim))
    poses = [HumanPose([0.02 * t, 0.01 * t, STANDING_HEIGHT], [0, 0, 0.05 * t], body) for t in range(10)]
    m = _seq(poses)
    r = refine_sequence(m, prior, template)
    assert np.abs(r.motion.joints(template.skeleton) - m.joints(template.skeleton)).max() < 1e-3
    assert r.final["total"] <= r.initial["total"]
    assert r.motion.stage == "refined"


def _off_span_case(prior):
    clean = smooth_prior_motion(prior, 4, np.random.default_rng(7))
    rng = np.random.default_rng(1)
    raw = []
    for p in clean:
        n = rng.normal(size=63)
        n -= prior.basis @ (prior.basis.T @ n)
        raw.append(p.replace(body=p.body + (0.25 * n / np.linalg.norm(n)).reshape(21, 3)))
    return raw


def _gauss_newton_projection(sk, prior, pose):
    """Joint-space least-squares fit of ``(r, phi, z)`` to a pose, by Gauss-Newton with a numeric Jacobian."""

    def joints(x):
        return forward_kinematics(sk, HumanPose(x[:3], x[3:6], prior.decode(x[6:]))).positions.ravel()

    target = forward_kinematics(sk, pose).positions.ravel()
    x = np.concatenate([pose.root, pose.orient, prior.encode(pose.body)])
    for _ in range(20):
        jac = np.stack([(joints(x + h) - joints(x - h)) / 2e-6 for h in np.eye(len(x)) * 1e-6], axis=1)
        x = x + np.linalg.lstsq(jac, target - joints(x), rcond=None)[0]
    return target.reshape(-1, 3), joints(x).reshape(-1, 3)


def _check_projection(template, prior, config):
    sk = template.skeleton
    raw = _off_span_case(prior)
    r = refine_sequence(_seq(raw), prior, template, config=config)
    raw_gap, dev = [], []
    for f, p in enumerate(raw):
        target, oracle = _gauss_newton_projection(sk, prior, p)
        got = forward_kinematics(sk, r.motion.poses[f]).positions
        raw_gap.append(np.abs(target - oracle).max())
        dev.append(np.abs(got - oracle).max())
        oracle_fit = np.mean(np.sum((oracle - target) ** 2, axis=1))
        got_fit = np.mean(np.sum((got - target) ** 2, axis=1))
        assert oracle_fit > 0
        assert got_fit == pytest.approx(oracle_fit, abs=2e-6)
    assert max(raw_gap) > 1e-3  # raw really is off the prior
    assert max(dev) < 1e-3


def test_projection_without_physics_matches_gauss_newton(template, prior):
    _check_projection(template, prior, RefineConfig(lambda_physics=0.0, iters=3000, lr=0.01))


@pytest.mark.xfail(strict=True, reason="constant-rate Adam at lr 0.05 stalls 1-2 mm from the optimum; see notes")
def test_projection_without_physics_default_schedule(template, prior):
    _check_projection(template, prior, RefineConfig(lambda_physics=0.0))


def test_hover_contact_pulls_hand_closer(template, prior):
    pose, cloud, pts = _hover_case(template)
    poses = [pose] * 3
    m = _seq(poses, [RigidTransform.identity()] * 3)
    cfg = RefineConfig(scenario="dynamic", iters=300)
    r = refine_sequence(m, prior, template, cloud, cfg)
    hands = HandPoints(template)

    def min_dist(motion):
        root = np.stack([p.root for p in motion.poses])
        pos, rot = batch_forward_kinematics(template.skeleton, root, _local(motion.poses))
        hp = hands.forward(pos, rot)[0]
        return min(np.linalg.norm(hp[f][:, None] - cloud.positions[None], axis=2).min() for f in range(len(motion)))

    before, after = min_dist(m), min_dist(r.motion)
    assert before == pytest.approx(0.015, abs=1e-9)
    assert after < before
    assert r.initial["contact"] > 0
    assert r.final["contact"] <= r.initial["contact"]
    assert r.final["total"] <= r.initial["total"]


def test_objects_and_cameras_pass_through(template, prior):
    rng = np.random.default_rng(8)
    poses = smooth_prior_motion(prior, 5, rng)
    objs = [RigidTransform.from_axis_angle(rng.normal(size=3), rng.normal(size=3)) for _ in range(5)]
    m = _seq(poses, objs)
    pose, cloud, _ = _hover_case(template)
    r = refine_sequence(m, prior, template, cloud, RefineConfig(iters=20, scenario="dynamic"))
    for a, b in zip(m.frames, r.motion.frames):
        assert b.object is a.object
        assert b.camera is a.camera


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(template, prior):
    m = _seq(smooth_prior_motion(prior, 3, np.random.default_rng(9)))
    with pytest.raises((RefineDivergenceError, FloatingPointError)):
        refine_sequence(m, prior, template, config=RefineConfig(iters=5, lr=1e300))


def test_refine_csv(template, prior, tmp_path):
    m = _seq(smooth_prior_motion(prior, 3, np.random.default_rng(10)))
    r = refine_sequence(m, prior, template, config=RefineConfig(iters=7))
    write_refine_csv(tmp_path / "refine.csv", r)
    rows = list(csv.reader((tmp_path / "refine.csv").open()))
    assert rows[0] == ["iter", "fit", "contact", "smooth", "total"]
    assert len(rows) == 9
