import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatmotion.geometry import RigidTransform, axis_angle_to_quat, quat_to_matrix
from splatmotion.splats import (
    GaussianParticle,
    InvalidParticleError,
    SplatCloud,
    concat,
    covariance,
    filter_label,
    load_ply,
    rigid_tangent_grad,
    save_ply,
    transform_cloud,
)

from oracles import random_scene

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)
rotvec = st.tuples(*[st.floats(-3.0, 3.0)] * 3)
scales = st.tuples(*[st.floats(0.01, 2.0)] * 3)


def particle(quat=(1, 0, 0, 0), scale=(1, 1, 1), mu=(0, 0, 0)):
    return GaussianParticle(np.array(mu, float), np.array(quat, float), np.array(scale, float), 0.5, np.full(3, 0.5))


def test_covariance_identity():
    np.testing.assert_allclose(covariance(particle()), np.eye(3), atol=1e-12)


def test_covariance_diagonal():
    np.testing.assert_allclose(covariance(particle(scale=(2, 1, 0.5))), np.diag([4, 1, 0.25]), atol=1e-12)


def test_covariance_rotated_by_hand():
    # R = [[0,-1,0],[1,0,0],[0,0,1]], S S^T = diag(4,1,1)  =>  R diag R^T = diag(1,4,1)
    q = axis_angle_to_quat([0, 0, np.pi / 2])
    np.testing.assert_allclose(covariance(particle(quat=q, scale=(2, 1, 1))), np.diag([1, 4, 1]), atol=1e-12)


def test_covariance_rejects_non_finite():
    with pytest.raises(InvalidParticleError):
        particle(mu=(np.nan, 0, 0))


@settings(max_examples=60, deadline=None)
@given(rotvec, scales)
def test_covariance_is_spd_with_squared_scale_spectrum(rv, s):
    c = covariance(particle(quat=axis_angle_to_quat(rv), scale=s))
    np.testing.assert_allclose(c, c.T, atol=1e-9)
    eig = np.linalg.eigvalsh(c)
    assert eig.min() > 0
    np.testing.assert_allclose(np.sort(eig), np.sort(np.square(s)), rtol=1e-8, atol=1e-12)


def test_cloud_validation():
    rng = np.random.default_rng(0)
    c = random_scene(rng, 3)
    with pytest.raises(InvalidParticleError):
        c.replace(scales=-c.scales)
    with pytest.raises(InvalidParticleError):
        c.replace(opacities=c.opacities + 2)
    with pytest.raises(InvalidParticleError):
        c.replace(colors=c.colors + 2)
    with pytest.raises(ValueError):
        c.replace(label="furniture")
    np.testing.assert_allclose(np.linalg.norm(c.quats, axis=1), 1.0, atol=1e-12)


def test_transform_identity_and_translation():
    c = random_scene(np.random.default_rng(1), 10)
    assert transform_cloud(c, RigidTransform.identity()).allclose(c)
    moved = transform_cloud(c, RigidTransform(translation=(1, 0, 0)))
    np.testing.assert_allclose(moved.positions, c.positions + [1, 0, 0])
    np.testing.assert_allclose(moved.quats, c.quats)
    np.testing.assert_array_equal(moved.scales, c.scales)
    np.testing.assert_array_equal(moved.colors, c.colors)


def test_transform_half_turn_about_z():
    c = SplatCloud([[1, 0, 0]], [[1, 0, 0, 0]], [[0.1] * 3], [0.5], [[0.5] * 3])
    moved = transform_cloud(c, RigidTransform.from_axis_angle([0, 0, np.pi]))
    np.testing.assert_allclose(moved.positions[0], [-1, 0, 0], atol=1e-12)


def test_transform_rejects_empty():
    empty = SplatCloud(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        transform_cloud(empty, RigidTransform.identity())


def _pose(rv, t):
    return RigidTransform.from_axis_angle(rv, t)


@settings(max_examples=40, deadline=None)
@given(rotvec, vec3, rotvec, vec3)
def test_transform_composition(ra, ta, rb, tb):
    c = random_scene(np.random.default_rng(2), 6)
    a, b = _pose(ra, ta), _pose(rb, tb)
    assert transform_cloud(transform_cloud(c, a), b).allclose(transform_cloud(c, b @ a))
    assert transform_cloud(c, a.inverse() @ a).allclose(c)


@settings(max_examples=40, deadline=None)
@given(rotvec, vec3, rotvec, vec3, rotvec, vec3)
def test_rigid_transform_group_laws(r1, t1, r2, t2, r3, t3):
    a, b, c = _pose(r1, t1), _pose(r2, t2), _pose(r3, t3)
    np.testing.assert_allclose(((a @ b) @ c).matrix, (a @ (b @ c)).matrix, atol=1e-9)
    assert (a.inverse() @ a).is_close(RigidTransform.identity())
    np.testing.assert_allclose(np.linalg.norm(a.rotation), 1.0, atol=1e-12)


def test_concat_counts_provenance_and_round_trip():
    rng = np.random.default_rng(3)
    scene, obj, human = random_scene(rng, 10), random_scene(rng, 5, "object"), random_scene(rng, 20, "human")
    both = concat([scene, obj, human])
    assert len(both) == 35
    assert both.label == "composite"
    np.testing.assert_array_equal(both.source_labels, [0] * 10 + [1] * 5 + [2] * 20)
    np.testing.assert_array_equal(both.source_index, list(range(10)) + list(range(5)) + list(range(20)))
    back = filter_label(both, "object")
    assert back.label == "object" and back.allclose(obj)
    assert concat([obj]) is obj
    with pytest.raises(ValueError):
        concat([])


def test_json_round_trip(tmp_path):
    c = random_scene(np.random.default_rng(4), 7, "object")
    c.save_json(tmp_path / "c.json")
    d = SplatCloud.load_json(tmp_path / "c.json")
    assert d.label == "object" and d.allclose(c, atol=1e-15)


def test_ply_round_trip(tmp_path):
    c = random_scene(np.random.default_rng(5), 9)
    save_ply(c, tmp_path / "c.ply")
    d = load_ply(tmp_path / "c.ply")
    # float32 storage
    assert d.allclose(c, atol=1e-5)


def test_rigid_tangent_grad_matches_finite_differences():
    rng = np.random.default_rng(6)
    c = random_scene(rng, 5)
    wp, wq = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
    pivot = rng.normal(size=3)

    def loss(xi):
        from splatmotion.geometry import increment

        moved = transform_cloud(c, increment(xi, pivot))
        return np.sum(wp * moved.positions) + np.sum(wq * moved.quats)

    g = rigid_tangent_grad(c.positions, c.quats, wp, wq, pivot)
    for k in range(6):
        e = np.zeros(6)
        e[k] = 1e-6
        fd = (loss(e) - loss(-e)) / 2e-6
        assert abs(fd - g[k]) < 1e-6 * max(1, abs(g[k]))


def test_quaternion_matrix_is_orthonormal():
    r = quat_to_matrix(axis_angle_to_quat([0.3, -1.2, 0.7]))
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
