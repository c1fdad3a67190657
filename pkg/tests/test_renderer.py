import numpy as np
import pytest

from gsvq.renderer import (
    ALPHA_MAX, Camera, blend_weights, load_cameras, project, render, render_colour_backward,
    save_cameras, save_png,
)
from gsvq.sh import C0, C1, eval_sh, sh_basis
from gsvq.splat_model import SplatCloud, covariance3d, sigmoid
from gsvq.synth import generate_orbit_cameras, look_at


def camera(w=8, h=8, f=10.0):
    return Camera(np.eye(4), f, f, w / 2, h / 2, w, h)


def splats(x, o_raw, s_raw, c, c_sh=None, r=None):
    x = np.atleast_2d(np.asarray(x, float))
    n = len(x)
    r = np.tile([1.0, 0, 0, 0], (n, 1)) if r is None else r
    c_sh = np.zeros((n, 45)) if c_sh is None else c_sh
    return SplatCloud(x, np.asarray(o_raw, float).reshape(n), np.asarray(s_raw, float).reshape(n, 3),
                      r, np.asarray(c, float).reshape(n, 3), c_sh)


def pinhole(p, cam):
    q = cam.view[:3, :3] @ p + cam.view[:3, 3]
    return np.array([cam.fx * q[0] / q[2] + cam.cx, cam.fy * q[1] / q[2] + cam.cy]), q[2]


def naive_render(cloud, cam):
    """Per-pixel loop over depth-sorted splats; Jacobian from finite differences."""
    items = []
    for i in range(len(cloud)):
        x = cloud.x[i].astype(float)
        mu, depth = pinhole(x, cam)
        if depth <= cam.near:
            continue
        J = np.zeros((2, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1e-6
            J[:, k] = (pinhole(x + e, cam)[0] - pinhole(x - e, cam)[0]) / 2e-6
        cov = J @ covariance3d(cloud.s_raw[i], cloud.r[i]) @ J.T + 0.3 * np.eye(2)
        d = x - cam.center
        colour = np.clip(eval_sh(cloud.c[i], cloud.c_sh[i], d / np.linalg.norm(d)), 0, 1)
        items.append((depth, i, mu, np.linalg.inv(cov), float(sigmoid(cloud.o_raw[i])), colour))
    items.sort(key=lambda it: (it[0], it[1]))
    img = np.zeros((cam.height, cam.width, 3))
    for v in range(cam.height):
        for u in range(cam.width):
            p = np.array([u + 0.5, v + 0.5])
            T = 1.0
            for _, _, mu, inv, o, colour in items:
                d = p - mu
                power = -0.5 * d @ inv @ d
                a = min(0.99, o * np.exp(power))
                if a < 1 / 255:
                    continue
                if T * (1 - a) < 1e-4:
                    break
                img[v, u] += colour * a * T
                T *= 1 - a
    return img


def random_scene(rng, n, cam_dist=3.0):
    x = rng.uniform(-0.4, 0.4, (n, 3)) + [0, 0, cam_dist]
    return splats(x, rng.uniform(-1, 3, n), rng.uniform(-2.5, -1.2, (n, 3)),
                  rng.uniform(-1.2, 1.2, (n, 3)), rng.normal(0, 0.2, (n, 45)),
                  rng.normal(size=(n, 4)))


def test_matches_naive_renderer():
    rng = np.random.default_rng(0)
    for k in range(5):
        cloud = random_scene(rng, 6)
        cam = camera(12, 10, 14.0)
        np.testing.assert_allclose(render(cloud, cam), naive_render(cloud, cam), atol=1e-7)


def test_empty_cloud_black():
    img = render(SplatCloud.empty(), camera())
    assert img.shape == (8, 8, 3) and not img.any()


def test_projection_closed_form():
    sigma, d, f = 0.2, 5.0, 30.0
    cam = Camera(np.eye(4), f, f * 1.5, 16.0, 12.0, 32, 24)
    cloud = splats([0, 0, d], 0.0, [np.log(sigma)] * 3, [0, 0, 0])
    p = project(cloud[0], cam)
    np.testing.assert_allclose(p.mu2d, [16.0, 12.0])
    expect = np.diag([sigma**2 * f**2 / d**2 + 0.3, sigma**2 * (1.5 * f) ** 2 / d**2 + 0.3])
    np.testing.assert_allclose(p.cov2d, expect, rtol=1e-12)
    behind = splats([0, 0, -1.0], 0.0, [0, 0, 0], [0, 0, 0])
    assert project(behind[0], cam) is None


def test_sh_examples():
    rng = np.random.default_rng(1)
    c = rng.normal(size=3)
    d = rng.normal(size=3)
    np.testing.assert_allclose(eval_sh(c, np.zeros(45), d / np.linalg.norm(d)), C0 * c + 0.5)
    c_sh = np.zeros(45)
    coeff = 0.7
    c_sh[[1, 16, 31]] = coeff  # Y_{1,0} of every channel
    up = eval_sh(c, c_sh, [0, 0, 1.0])
    down = eval_sh(c, c_sh, [0, 0, -1.0])
    np.testing.assert_allclose(up - down, 2 * coeff * C1)
    assert C1 == pytest.approx(0.4886025119)
    with pytest.raises(ValueError):
        eval_sh(c, c_sh, [0, 0, 2.0])


def test_sh_basis_orthonormal():
    # Monte Carlo check on a Fibonacci sphere: the Gram matrix approaches identity / (4 pi)
    n = 20000
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = np.pi * (1 + 5**0.5) * k
    dirs = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)
    Y = sh_basis(dirs)
    gram = Y.T @ Y * (4 * np.pi / n)
    np.testing.assert_allclose(gram, np.eye(16), atol=2e-3)


def test_single_splat_centre_pixel():
    cam = camera(9, 9, 12.0)
    for o_raw in (-1.0, 2.0, 8.0):
        cloud = splats([0, 0, 4.0], o_raw, [-1.5, -2.0, -1.0], [0.6, -0.3, 5.0],
                       r=np.array([[0.9, 0.1, -0.3, 0.2]]))
        # the splat projects to (4.5, 4.5), the centre of pixel (4, 4)
        img = render(cloud, cam)
        colour = np.clip(0.5 + C0 * np.array([0.6, -0.3, 5.0]), 0, 1)
        expect = colour * min(float(sigmoid(o_raw)), ALPHA_MAX)
        np.testing.assert_array_equal(img[4, 4], expect)


def test_two_splat_blend():
    cam = camera(9, 9, 12.0)
    cloud = splats([[0, 0, 6.0], [0, 0, 3.0]], [0.5, -0.2], [[-1, -1, -1], [-1.5, -1.5, -1.5]],
                   [[1.0, 0.0, -1.0], [-0.5, 0.8, 0.2]])
    img = render(cloud, cam)
    a_front, a_back = sigmoid(-0.2), sigmoid(0.5)
    c_front = 0.5 + C0 * np.array([-0.5, 0.8, 0.2])
    c_back = 0.5 + C0 * np.array([1.0, 0.0, -1.0])
    np.testing.assert_allclose(img[4, 4], c_front * a_front + c_back * a_back * (1 - a_front),
                               atol=1e-6)


def test_weights_bounded_and_background():
    rng = np.random.default_rng(2)
    cloud = random_scene(rng, 200)
    cam = camera(16, 16, 20.0)
    w = blend_weights(cloud, cam)
    total = np.asarray(w.matrix.sum(axis=1)).ravel()
    assert np.all(total <= 1 + 1e-12)
    np.testing.assert_allclose(total + w.transmittance, 1.0, atol=1e-12)
    white = render(cloud, cam, (1, 1, 1))
    np.testing.assert_allclose(white - render(cloud, cam), w.transmittance.reshape(16, 16, 1)
                               * np.ones(3), atol=1e-12)


def test_threads_do_not_change_image():
    rng = np.random.default_rng(3)
    cloud = random_scene(rng, 300)
    cam = camera(40, 30, 40.0)
    np.testing.assert_array_equal(render(cloud, cam, threads=1), render(cloud, cam, threads=3))


def test_colour_backward_simple_cases():
    cam = camera()
    cloud = splats([0, 0, 4.0], 1.0, [-1.5] * 3, [0.2, 0.1, 0.0])
    assert not render_colour_backward(cloud, cam, np.zeros((8, 8, 3))).any()
    g = render_colour_backward(cloud, cam, np.ones((8, 8, 3)))
    alpha_sum = blend_weights(cloud, cam).matrix.sum()
    np.testing.assert_allclose(g[0], [alpha_sum] * 3)


def test_colour_backward_finite_differences():
    rng = np.random.default_rng(4)
    cam = camera()
    h = 1e-4
    cases = 0
    while cases < 100:
        n = int(rng.integers(1, 6))
        cloud = random_scene(rng, n)
        cloud.c_sh[:] = 0
        cloud.c[:] = rng.uniform(-1.2, 1.2, (n, 3))  # colours stay inside (0, 1)
        up = rng.normal(size=(8, 8, 3))
        g = render_colour_backward(cloud, cam, up)
        fd = np.zeros((n, 3))
        for i in range(n):
            for ch in range(3):
                plus, minus = cloud.copy(), cloud.copy()
                plus.c[i, ch] += h / C0
                minus.c[i, ch] -= h / C0
                fd[i, ch] = np.sum(up * (render(plus, cam) - render(minus, cam))) / (2 * h)
        if not np.any(fd):
            continue
        assert np.linalg.norm(g - fd) <= 1e-3 * np.linalg.norm(fd)
        cases += 1


def test_cameras_roundtrip(tmp_path):
    cams = generate_orbit_cameras(3, 2.5, (20, 10))
    save_cameras(cams, tmp_path / "c.json")
    back = load_cameras(tmp_path / "c.json")
    for a, b in zip(cams, back):
        np.testing.assert_array_equal(a.view, b.view)
        assert (a.fx, a.cx, a.width, a.height) == (b.fx, b.cx, b.width, b.height)
    with pytest.raises(ValueError):
        Camera(np.eye(4), -1.0, 1.0, 0, 0, 4, 4)


def test_look_at_centre_projects_to_principal_point():
    cam = Camera(look_at([3.0, 1.0, 2.0]), 20.0, 20.0, 10.0, 8.0, 20, 16)
    mu, depth = pinhole(np.zeros(3), cam)
    np.testing.assert_allclose(mu, [10.0, 8.0], atol=1e-12)
    np.testing.assert_allclose(cam.center, [3.0, 1.0, 2.0], atol=1e-12)


def test_save_png(tmp_path):
    from PIL import Image

    img = np.linspace(0, 1, 4 * 5 * 3).reshape(4, 5, 3)
    save_png(img, tmp_path / "a.png")
    back = np.asarray(Image.open(tmp_path / "a.png"))
    assert back.shape == (4, 5, 3) and back.dtype == np.uint8
    assert back[0, 0, 0] == 0 and back[-1, -1, -1] == 255
