import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatmotion.geometry import Camera, RigidTransform
from splatmotion.optim import relative_error
from splatmotion.raster import BACKENDS, Rasterization, render, render_backward, render_depth_mean
from splatmotion.raster.render import RenderOutput
from splatmotion.splats import SplatCloud, concat

from oracles import camera_tangent_fd, exact_sum, field_fd, random_camera, random_scene

BLACK = (0.0, 0.0, 0.0)


def front_camera(size=32):
    # identity pose: the camera looks down +z from the origin
    return Camera.from_fov(RigidTransform.identity(), size, size)


def disc(center, opacity, color, depth=2.0, scale=0.05, label="scene"):
    cam = front_camera()
    u, v = center
    x = (u - cam.cx) * depth / cam.fx
    y = (v - cam.cy) * depth / cam.fy
    return SplatCloud([[x, y, depth]], [[1, 0, 0, 0]], [[scale] * 3], [opacity], [color], label)


def test_empty_after_culling_gives_background():
    behind = SplatCloud([[0, 0, -1.0]], [[1, 0, 0, 0]], [[0.1] * 3], [0.9], [[1, 0, 0]])
    out = render(behind, front_camera(), background=(0.2, 0.3, 0.4))
    np.testing.assert_array_equal(out.color, np.broadcast_to([0.2, 0.3, 0.4], out.color.shape))
    np.testing.assert_array_equal(out.alpha, 0.0)
    np.testing.assert_array_equal(out.label, -1)


def test_single_particle_center_pixel():
    out = render(disc((10, 12), 0.8, (1, 0, 0)), front_camera(), BLACK)
    np.testing.assert_allclose(out.color[12, 10], [0.8, 0.0, 0.0], atol=1e-12)


def test_two_stacked_particles():
    front = disc((10, 12), 0.5, (1, 0, 0), depth=2.0)
    back = disc((10, 12), 0.5, (0, 1, 0), depth=3.0)
    out = render(concat([back, front]), front_camera(), BLACK)
    np.testing.assert_allclose(out.color[12, 10], [0.5, 0.25, 0.0], atol=1e-12)


def test_compositing_weights_plus_background_sum_to_one():
    rng = np.random.default_rng(0)
    r = Rasterization(random_scene(rng, 150), random_camera(rng))
    assert np.all(r.alpha <= 1.0 + 1e-12) and np.all(r.alpha >= 0.0)
    np.testing.assert_allclose(r.alpha + r.T, 1.0, atol=1e-12)
    assert np.all(np.isfinite(r.depth[r.alpha > 1e-3]))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    cloud, cam = random_scene(rng, 60), random_camera(rng, 32)
    perm = rng.permutation(len(cloud))
    a = render(cloud, cam)
    b = render(cloud.subset(perm), cam)
    # same per-pixel order; only batched projection rounding may differ
    np.testing.assert_allclose(a.color, b.color, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.depth, b.depth, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(a.label, b.label)


@pytest.mark.parametrize("backend", BACKENDS)
def test_permutation_invariance_with_depth_ties(backend):
    # a fronto-parallel grid: every particle has exactly the same depth
    rng = np.random.default_rng(0)
    g = np.linspace(-0.3, 0.3, 9)
    gx, gy = np.meshgrid(g, g)
    n = gx.size
    pos = np.stack([gx.ravel(), gy.ravel(), np.full(n, 2.0)], axis=1)
    cloud = SplatCloud(pos, np.tile([1.0, 0, 0, 0], (n, 1)), np.full((n, 3), 0.06), np.full(n, 0.8), rng.random((n, 3)))
    perm = rng.permutation(n)
    a = Rasterization(cloud, front_camera(), backend=backend)
    b = Rasterization(cloud.subset(perm), front_camera(), backend=backend)
    np.testing.assert_array_equal(a.color, b.color)
    np.testing.assert_array_equal(a.label, b.label)


def test_depth_ties_break_by_original_index():
    first = disc((10, 12), 0.5, (1, 0, 0))
    second = disc((10, 12), 0.5, (0, 1, 0))
    out = render(concat([first, second]), front_camera(), BLACK)
    np.testing.assert_allclose(out.color[12, 10], [0.5, 0.25, 0.0], atol=1e-12)
    out = render(concat([second, first]), front_camera(), BLACK)
    np.testing.assert_allclose(out.color[12, 10], [0.25, 0.5, 0.0], atol=1e-12)


def test_label_map_uses_top_contributor_and_threshold():
    human = disc((10, 12), 0.9, (1, 0, 0), depth=2.0, label="human")
    obj = disc((10, 12), 0.9, (0, 1, 0), depth=3.0, label="object")
    faint = disc((25, 25), 0.3, (0, 0, 1), label="object")
    r = Rasterization(concat([obj, human, faint]), front_camera(), BLACK)
    assert r.label[12, 10] == 2
    assert r.label[25, 25] == -1  # alpha 0.3 < 0.5
    assert Rasterization(concat([obj, human, faint]), front_camera(), BLACK, label_threshold=0.2).label[25, 25] == 1
    np.testing.assert_allclose(r.layers[12, 10], [0.0, 0.9 * 0.1, 0.9], atol=1e-12)


def test_backends_agree():
    if "cython" not in BACKENDS:
        pytest.skip("compiled core not built")
    rng = np.random.default_rng(1)
    cloud, cam = random_scene(rng, 200), random_camera(rng)
    up = rng.normal(size=(64, 64, 3))
    a = Rasterization(cloud, cam, backend="python")
    b = Rasterization(cloud, cam, backend="cython")
    np.testing.assert_allclose(a.acc, b.acc, atol=1e-12)
    np.testing.assert_array_equal(a.end_rank, b.end_rank)
    np.testing.assert_array_equal(a.top, b.top)
    ga, gb = a.backward(d_color=up, d_depth=up[..., 0]), b.backward(d_color=up, d_depth=up[..., 0])
    for name in ("d_color", "d_position", "d_rotation", "d_scale", "d_opacity", "d_camera"):
        np.testing.assert_allclose(getattr(ga, name), getattr(gb, name), rtol=1e-10, atol=1e-10)


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(2)
    cloud, cam = random_scene(rng, 40), random_camera(rng)
    g = render_backward(cloud, cam, (0.5, 0.5, 0.5), np.zeros((64, 64, 3)))
    for name in ("d_color", "d_position", "d_rotation", "d_scale", "d_opacity", "d_camera"):
        assert not np.any(getattr(g, name))


def test_upstream_shape_mismatch():
    rng = np.random.default_rng(3)
    cloud, cam = random_scene(rng, 4), random_camera(rng)
    with pytest.raises(ValueError):
        render_backward(cloud, cam, (0.5, 0.5, 0.5), np.zeros((32, 64, 3)))


def test_single_particle_color_gradient_is_weight_sum():
    cloud, cam = disc((15, 15), 0.7, (0.3, 0.6, 0.9), scale=0.08), front_camera()
    r = Rasterization(cloud, cam, BLACK)
    footprint = r.alpha > 0
    up = np.repeat(footprint[..., None], 3, axis=2).astype(float)
    g = r.backward(d_color=up)

    def loss(c):
        return exact_sum(Rasterization(c, cam, BLACK).color * up)

    for k in range(3):
        fd = field_fd(loss, cloud, "colors", (0, k))
        assert relative_error(fd, g.d_color[0, k]) < 1e-6
    np.testing.assert_allclose(g.d_color[0], r.alpha[footprint].sum(), rtol=1e-12)


def test_camera_gradient_sign_moves_particle_toward_bright_upstream():
    cloud, cam = disc((13, 16), 0.8, (1, 1, 1), scale=0.1), front_camera()
    reward = np.zeros((32, 32, 3))
    reward[:, 16:] = 1.0  # brighter region to the right
    g = Rasterization(cloud, cam, BLACK).backward(d_color=-reward)  # loss = -sum(reward * color)
    fd = camera_tangent_fd(lambda c: -exact_sum(Rasterization(cloud, c, BLACK).color * reward), cam)
    np.testing.assert_allclose(g.d_camera, fd, rtol=1e-4, atol=1e-6)
    step = RigidTransform(translation=-1e-3 * g.d_camera[:3] / np.linalg.norm(g.d_camera[:3]))
    moved = cam.with_pose(step @ cam.pose)
    u0 = cam.project(cloud.positions)[0][0, 0]
    u1 = moved.project(cloud.positions)[0][0, 0]
    assert u1 > u0


def test_culled_particles_get_zero_gradient():
    visible = disc((15, 15), 0.8, (1, 0, 0))
    hidden = SplatCloud([[0, 0, -1.0]], [[1, 0, 0, 0]], [[0.1] * 3], [0.9], [[1, 0, 0]])
    g = render_backward(concat([visible, hidden]), front_camera(), BLACK, np.ones((32, 32, 3)))
    for name in ("d_color", "d_position", "d_rotation", "d_scale"):
        assert not np.any(getattr(g, name)[1])
    assert g.d_opacity[1] == 0.0


def test_depth_and_layer_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    cloud, cam = random_scene(rng, 80), random_camera(rng)
    wd, wl, wa = rng.normal(size=(64, 64)), rng.normal(size=(64, 64, 3)), rng.normal(size=(64, 64))

    def loss(c):
        r = Rasterization(c, cam)
        return exact_sum(r.depth * wd) + exact_sum(r.layers * wl) + exact_sum(r.alpha * wa)

    g = Rasterization(cloud, cam).backward(d_depth=wd, d_layers=wl, d_alpha=wa)
    for i in rng.choice(80, 5, replace=False):
        for k in range(3):
            assert relative_error(field_fd(loss, cloud, "positions", (i, k)), g.d_position[i, k]) < 1e-3
            assert relative_error(field_fd(loss, cloud, "scales", (i, k)), g.d_scale[i, k]) < 1e-3


def test_depth_mean_constant_and_pair():
    h = w = 16
    out = RenderOutput(np.zeros((h, w, 3)), np.full((h, w), 2.0), np.ones((h, w)), np.zeros((h, w), int), np.zeros((h, w, 3)))
    assert render_depth_mean(out, np.ones((h, w))) == 2.0
    out.depth[0, 0], out.depth[0, 1] = 1.0, 3.0
    mask = np.zeros((h, w))
    mask[0, :2] = 1
    assert render_depth_mean(out, mask) == 2.0
    with pytest.raises(ValueError):
        render_depth_mean(out, np.zeros((h, w)))


def test_depth_mean_of_sphere_at_five_metres():
    rng = np.random.default_rng(5)
    radius = 0.3
    d = rng.normal(size=(400, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = d * radius + [0, 0, 5.0]
    n = len(pts)
    sphere = SplatCloud(pts, np.tile([1.0, 0, 0, 0], (n, 1)), np.full((n, 3), 0.04), np.full(n, 0.9), np.full((n, 3), 0.5), "object")
    out = render(sphere, front_camera(64))
    mask = out.label == 1
    assert mask.sum() > 20
    assert abs(render_depth_mean(out, mask) - 5.0) <= radius
