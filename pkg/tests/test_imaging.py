import math

import numpy as np
import pytest

from lowbend.exceptions import DegenerateGeometryError, ParameterError, ShapeError
from lowbend.geometry import SO3, Circle, Hemisphere2, ManifoldPoint, Product
from lowbend.imaging import (
    Image,
    RendererConfig,
    generate_triplets,
    make_dataset,
    make_triplet,
    quantize,
    render_G,
    render_R,
    render_S,
    shadow_tip,
)


def gaussian(alpha, s, x1, x2):
    return ManifoldPoint("product", [alpha, s, x1, x2])


def test_gaussian_values_and_cutoff():
    cfg = RendererConfig("g", 16)
    img = render_G(gaussian(0.3, 0.3, 0.0, 0.0), cfg)
    assert img.shape == (16, 16, 1)
    p = img.pixels
    assert p.max() > 0.5 and p.max() <= 1.0
    assert np.all((p == 0.0) | (p >= 1.0 / 255.0))


def test_gaussian_translation_moves_the_image():
    cfg = RendererConfig("g", 16)
    shift = 2 * (2.0 / 16)
    a = render_G(gaussian(0.7, 0.2, -0.3, 0.1), cfg).pixels[..., 0]
    b = render_G(gaussian(0.7, 0.2, -0.3 + shift, 0.1), cfg).pixels[..., 0]
    np.testing.assert_allclose(b[:, 2:], a[:, :-2], atol=1e-9)


def test_gaussian_half_turn_symmetry():
    cfg = RendererConfig("g", 16)
    a = render_G(gaussian(0.4, 0.25, 0.1, -0.2), cfg)
    b = render_G(gaussian(0.4 + math.pi, 0.25, 0.1, -0.2), cfg)
    np.testing.assert_allclose(a.pixels, b.pixels, atol=1e-12)


def test_gaussian_config_validation():
    with pytest.raises(ParameterError):
        RendererConfig("g", 4)
    with pytest.raises(ParameterError):
        RendererConfig("g", 16, scale_range=(0.0, 0.3))
    with pytest.raises(ParameterError):
        RendererConfig("g", 16, colour="red")
    with pytest.raises(ParameterError):
        RendererConfig("dsprites", 16)


def test_sundial_zenith_is_isotropic():
    cfg = RendererConfig("s", 16)
    img = render_S(ManifoldPoint("hemisphere2", [0.0, 0.0, 1.0]), cfg).pixels[..., 0]
    np.testing.assert_allclose(img, img.T, atol=1e-12)
    np.testing.assert_allclose(img, img[::-1, ::-1], atol=1e-12)


def test_sundial_mirror_symmetry():
    cfg = RendererConfig("s", 16)
    z = math.sqrt(1 - 0.25)
    a = render_S(ManifoldPoint("hemisphere2", [0.3, 0.4, z]), cfg).pixels
    b = render_S(ManifoldPoint("hemisphere2", [-0.3, -0.4, z]), cfg).pixels
    np.testing.assert_allclose(b, a[::-1, ::-1], atol=1e-12)


def test_shadow_geometry():
    cfg = RendererConfig("s", 16)
    assert np.linalg.norm(shadow_tip(ManifoldPoint("hemisphere2", [0, 0, 1]), cfg)) == 0.0
    horizon = shadow_tip(ManifoldPoint("hemisphere2", [1, 0, 0]), cfg)
    np.testing.assert_allclose(horizon, [-1.0, 0.0], atol=1e-12)
    lengths = [
        np.linalg.norm(
            shadow_tip(ManifoldPoint("hemisphere2", [math.sin(t), 0, math.cos(t)]), cfg)
        )
        for t in np.linspace(0.0, math.pi / 2, 20)
    ]
    assert np.all(np.diff(lengths) > 0)
    # the sun sits opposite the shadow
    tip = shadow_tip(ManifoldPoint("hemisphere2", [0.6, 0.0, 0.8]), cfg)
    assert tip[0] < 0


def test_sundial_degenerate_line_of_sight():
    cfg = RendererConfig("s", 16)
    with pytest.raises(DegenerateGeometryError):
        render_S(ManifoldPoint("hemisphere2", [0.0, 0.866, -0.5]), cfg)


def test_rotation_sign_invariance(rng):
    cfg = RendererConfig("r", 16)
    for q in SO3().uniform(rng, 5):
        a = render_R(ManifoldPoint("so3", q), cfg)
        b = render_R(ManifoldPoint("so3", -q), cfg)
        assert np.array_equal(a.pixels, b.pixels)


def test_rotation_identity_shows_unrotated_landmarks():
    cfg = RendererConfig("r", 16)
    img = render_R(ManifoldPoint("so3", [1, 0, 0, 0]), cfg)
    assert img.shape == (16, 16, 3)
    red = img.pixels[..., 0]
    # first landmark (0.55, 0.10) is red; nearest pixel center is column 12, row 8
    assert np.unravel_index(np.argmax(red), red.shape) == (8, 12)


def test_rotations_give_distinct_images():
    cfg = RendererConfig("r", 16)
    c, s = math.cos(0.4), math.sin(0.4)
    a = render_R(ManifoldPoint("so3", [1, 0, 0, 0]), cfg)
    b = render_R(ManifoldPoint("so3", [c, 0, s, 0]), cfg)
    assert np.abs(a.pixels - b.pixels).max() > 0.1


def test_landmark_validation():
    with pytest.raises(ParameterError):
        RendererConfig("r", 16, landmarks=[(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)],
                       landmark_colors=[(1, 0, 0)] * 4)
    tetrahedron = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    with pytest.raises(ParameterError):
        RendererConfig("r", 16, landmarks=tetrahedron, landmark_colors=[(1, 0, 0)] * 4)


def test_quantize():
    img = Image(2, 2, 1, [0.0, 0.49, 0.5, 0.9])
    assert quantize(img).vector().tolist() == [0.0, 0.0, 1.0, 1.0]


def test_image_validation():
    with pytest.raises(ShapeError):
        Image(2, 2, 1, [0.0, 0.5, 1.5, 0.1])
    with pytest.raises(ShapeError):
        Image(2, 2, 1, [0.0, 0.5, 0.1])
    assert Image.from_vector([-0.2, 1.3], 2, 1, 1).vector().tolist() == [0.0, 1.0]


def test_dataset_defaults():
    g = make_dataset("g")
    assert isinstance(g.manifold, Product) and g.circle_only
    assert g.manifold.factors[0].circumference == pytest.approx(math.pi)
    assert g.epsilon == pytest.approx(math.pi / 2)
    s = make_dataset("s")
    assert isinstance(s.manifold, Hemisphere2) and s.epsilon == pytest.approx(math.pi / 2)
    r = make_dataset("r")
    assert isinstance(r.manifold, SO3) and r.epsilon == pytest.approx(math.pi / 4)
    assert r.renderer.image_shape() == (16, 16, 3)
    assert isinstance(make_dataset("g_rotation").manifold, Circle)
    with pytest.raises(ParameterError):
        make_dataset("s", epsilon=-1.0)


@pytest.mark.parametrize("kind", ["g", "s", "r", "flat_square", "g_rotation"])
def test_triplets_are_local(kind, rng):
    spec = make_dataset(kind)
    for _ in range(20):
        t = make_triplet(spec.manifold, spec.renderer, spec.epsilon, rng, spec.circle_only)
        assert 0 < t.dist
        assert t.img_x.shape == t.img_av.shape == spec.renderer.image_shape()
        # circle_only bounds the angle alone; dist is the full product distance
        if not spec.circle_only:
            assert t.dist <= spec.epsilon


def test_coordinate_renderer(rng):
    spec = make_dataset("flat_square")
    t = make_triplet(spec.manifold, spec.renderer, spec.epsilon, rng)
    np.testing.assert_allclose(t.img_av.vector(), 0.5 * (t.img_x.vector() + t.img_y.vector()))
    assert t.dist == pytest.approx(np.linalg.norm(t.img_x.vector() - t.img_y.vector()))


def test_generation_is_reproducible():
    spec = make_dataset("s", resolution=8)
    a = generate_triplets(spec, 300, seed=7)
    b = generate_triplets(spec, 300, seed=7, workers=2)
    assert len(a) == 300
    assert all(x.img_x == y.img_x and x.dist == y.dist for x, y in zip(a, b))
    c = generate_triplets(spec, 300, seed=8)
    assert a[0].dist != c[0].dist


def test_quantized_dataset(rng):
    spec = make_dataset("g", quantized=True)
    t = make_triplet(spec.manifold, spec.renderer, spec.epsilon, rng, spec.circle_only)
    assert set(np.unique(t.img_x.pixels)) <= {0.0, 1.0}
