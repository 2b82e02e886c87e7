"""Render manifold points to images and assemble training triplets."""
# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.

import argparse
import concurrent.futures
import itertools
import logging
import math
from typing import List, NamedTuple, Optional

import numpy as np

from .exceptions import DegenerateGeometryError, ParameterError, ShapeError
from .geometry import (
    SO3,
    Circle,
    Hemisphere2,
    Interval,
    Manifold,
    ManifoldPoint,
    PairSampler,
    Product,
    average,
    distance,
    quat_to_matrix,
)
from .value_range import ValueRange

log = logging.getLogger(__name__)

SHARD_SIZE = 256
# pairs closer than this fraction of epsilon are redrawn
MIN_DISTANCE_FRACTION = 1e-6

DEFAULT_LANDMARKS = (
    (0.55, 0.10, 0.05),
    (-0.35, 0.40, -0.10),
    (-0.20, -0.45, 0.30),
    (0.10, 0.05, -0.60),
    (0.30, -0.25, 0.45),
    (-0.50, -0.05, -0.35),
)
DEFAULT_LANDMARK_COLORS = (
    (1.0, 0.0, 0.0),
    (0.0, 0.9, 0.0),
    (0.0, 0.0, 0.8),
    (0.7, 0.7, 0.0),
    (0.0, 0.85, 0.85),
    (0.75, 0.0, 0.75),
)

RENDERER_DEFAULTS = {
    "g": {
        "aspect": 2.0,
        "scale_range": (0.15, 0.3),
        "translation_range": (-1.0, 1.0),
        "cutoff": 1.0 / 255.0,
    },
    "g_rotation": {
        "aspect": 2.0,
        "scale": 0.3,
        "translation_range": (-1.0, 1.0),
        "cutoff": 1.0 / 255.0,
    },
    "s": {
        "rod_height": 0.5,
        "light_lift": 1.0,
        "orthogonal_std": 0.1,
        "variance_floor": 0.01,
        "plane_half_width": 1.0,
    },
    "r": {
        "landmarks": DEFAULT_LANDMARKS,
        "landmark_colors": DEFAULT_LANDMARK_COLORS,
        "blob_radius": 0.12,
        "plane_half_width": 1.0,
    },
    "flat_square": {},
}

DEFAULT_EPSILON = {
    "g": math.pi / 2,
    "g_rotation": math.pi / 2,
    "s": math.pi / 2,
    "r": math.pi / 4,
    "flat_square": 0.25,
}


class Image:
    """Grayscale or RGB image with pixel values in [0, 1].

    Pixels are stored as a (height, width, channels) array; `vector` gives the
    row-major flattening that the networks consume.
    """

    def __init__(self, width: int, height: int, channels: int, pixels):
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.size != width * height * channels:
            raise ShapeError(
                f"{pixels.size} pixel values for a {width}x{height}x{channels} image"
            )
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ShapeError("Pixel values must be finite and lie in [0, 1]")
        self.width = width
        self.height = height
        self.channels = channels
        self.pixels = pixels.reshape(height, width, channels)

    @classmethod
    def from_vector(cls, vector, width: int, height: int, channels: int) -> "Image":
        """Build an image from network output, clipping into [0, 1]."""
        return cls(width, height, channels, np.clip(vector, 0.0, 1.0))

    @property
    def shape(self):
        return self.width, self.height, self.channels

    def vector(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Image)
            and self.shape == other.shape
            and np.array_equal(self.pixels, other.pixels)
        )

    def __repr__(self):
        return f"Image: {self.width}x{self.height}x{self.channels}"


class Triplet:
    """Training record (x, y, av_M(x, y), d_M(x, y)) as images plus a distance."""

    def __init__(self, img_x: Image, img_y: Image, img_av: Image, dist: float):
        if not img_x.shape == img_y.shape == img_av.shape:
            raise ShapeError("All three triplet images must have the same shape")
        if not dist > 0:
            raise ParameterError(f"Triplet distance must be positive: {dist}")
        self.img_x = img_x
        self.img_y = img_y
        self.img_av = img_av
        self.dist = float(dist)

    def __repr__(self):
        return f"Triplet: {self.img_x.shape} d={self.dist}"


class RendererConfig:
    """Resolution, dataset kind and kind-specific renderer parameters."""

    def __init__(self, kind: str, resolution: int = 16, **options):
        if kind not in RENDERER_DEFAULTS:
            raise ParameterError(f"Unknown dataset kind: {kind}")
        params = dict(RENDERER_DEFAULTS[kind])
        unknown = set(options) - set(params)
        if unknown:
            raise ParameterError(f"Unknown {kind} renderer options: {sorted(unknown)}")
        params.update(options)
        self.kind = kind
        self.resolution = int(resolution)
        self.options = params
        for key, value in params.items():
            setattr(self, key, value)
        self.validate()

    def validate(self):
        if self.kind != "flat_square" and self.resolution < 8:
            raise ParameterError(f"Resolution must be at least 8: {self.resolution}")
        if self.kind == "g":
            lo, hi = self.scale_range
            if not 0 < lo < hi:
                raise ParameterError(f"Scale range must be positive: {self.scale_range}")
        if self.kind == "g_rotation" and not self.scale > 0:
            raise ParameterError(f"Scale must be positive: {self.scale}")
        if self.kind in ("g", "g_rotation"):
            ValueRange(*self.translation_range)
            if not self.aspect >= 1.0:
                raise ParameterError(f"Aspect ratio must be at least 1: {self.aspect}")
        if self.kind == "s" and not 0 < self.rod_height < self.light_lift + 1e-12:
            raise ParameterError("The rod tip must stay below the lifted light sphere")
        if self.kind == "r":
            check_landmarks(self.landmarks, self.landmark_colors)


def check_landmarks(landmarks, colors, tol: float = 1e-6) -> None:
    """Reject landmark sets that are too small, coplanar or symmetric."""
    pts = np.asarray(landmarks, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 4:
        raise ParameterError("Need at least four 3D landmarks")
    if np.shape(colors) != (pts.shape[0], 3):
        raise ParameterError("Need one RGB color per landmark")
    centered = pts - pts.mean(axis=0)
    if np.linalg.svd(centered, compute_uv=False)[-1] < tol:
        raise ParameterError("Landmarks are coplanar")
    dists = sorted(
        float(np.linalg.norm(a - b)) for a, b in itertools.combinations(pts, 2)
    )
    if any(b - a < tol for a, b in zip(dists, dists[1:])):
        raise ParameterError("Landmark set has repeated pairwise distances")


def pixel_centers(value_range: ValueRange, resolution: int) -> np.ndarray:
    """Pixel center coordinates; symmetric ranges give exactly symmetric grids."""
    steps = 2.0 * np.arange(resolution) + 1.0 - resolution
    return value_range.center() + 0.5 * value_range.diameter() * steps / resolution


def _grid(value_range: ValueRange, resolution: int):
    c = pixel_centers(value_range, resolution)
    # rows follow the second plane coordinate, columns the first
    return np.meshgrid(c, c, indexing="xy")


def render_G(p: ManifoldPoint, cfg: RendererConfig) -> Image:
    """Cut off anisotropic Gaussian at (x1, x2), axis angle alpha, widths (s, s/aspect)."""
    alpha, s, x1, x2 = np.asarray(p.coords, dtype=np.float64)
    plane = ValueRange(*cfg.translation_range)
    gx, gy = _grid(plane, cfg.resolution)
    dx, dy = gx - x1, gy - x2
    c, si = math.cos(alpha), math.sin(alpha)
    u = c * dx + si * dy
    v = -si * dx + c * dy
    minor = s / cfg.aspect
    values = np.exp(-0.5 * ((u / s) ** 2 + (v / minor) ** 2))
    values[values < cfg.cutoff] = 0.0
    values = np.clip(values, 0.0, 1.0)
    return Image(cfg.resolution, cfg.resolution, 1, values[..., None])


def shadow_tip(p: ManifoldPoint, cfg: RendererConfig) -> np.ndarray:
    """Ground-plane point y hit by the line through the lifted light and the rod tip."""
    p1, p2, p3 = np.asarray(p.coords, dtype=np.float64)
    denom = p3 + cfg.light_lift - cfg.rod_height
    if denom <= 1e-12:
        raise DegenerateGeometryError(f"Line of sight parallel to the ground for {p!r}")
    return -cfg.rod_height * np.array([p1, p2]) / denom


def render_S(p: ManifoldPoint, cfg: RendererConfig) -> Image:
    """Sundial shadow: Gaussian centered at y/2, variance |y| along y."""
    y = shadow_tip(p, cfg)
    r = float(np.linalg.norm(y))
    direction = y / r if r > 0 else np.array([1.0, 0.0])
    plane = ValueRange(-cfg.plane_half_width, cfg.plane_half_width)
    gx, gy = _grid(plane, cfg.resolution)
    dx, dy = gx - 0.5 * y[0], gy - 0.5 * y[1]
    u = direction[0] * dx + direction[1] * dy
    v = -direction[1] * dx + direction[0] * dy
    var_along = max(r, cfg.variance_floor)
    var_orth = cfg.orthogonal_std**2
    values = np.clip(np.exp(-0.5 * (u * u / var_along + v * v / var_orth)), 0.0, 1.0)
    return Image(cfg.resolution, cfg.resolution, 1, values[..., None])


def render_R(q: ManifoldPoint, cfg: RendererConfig) -> Image:
    """Orthographic splat of the rotated landmark set, one colored blob per landmark."""
    rot = quat_to_matrix(np.asarray(q.coords, dtype=np.float64))
    projected = (np.asarray(cfg.landmarks) @ rot.T)[:, :2]
    plane = ValueRange(-cfg.plane_half_width, cfg.plane_half_width)
    gx, gy = _grid(plane, cfg.resolution)
    d2 = (gx[None] - projected[:, 0, None, None]) ** 2 + (
        gy[None] - projected[:, 1, None, None]
    ) ** 2
    blobs = np.exp(-0.5 * d2 / cfg.blob_radius**2)
    values = np.einsum("kij,kc->ijc", blobs, np.asarray(cfg.landmark_colors))
    return Image(cfg.resolution, cfg.resolution, 3, np.clip(values, 0.0, 1.0))


def quantize(img: Image) -> Image:
    """Round every pixel to binary, 0.5 rounds up."""
    return Image(img.width, img.height, img.channels, np.where(img.pixels >= 0.5, 1.0, 0.0))


class Renderer:
    """Base class that the dataset renderers inherit from."""

    kind = ""

    def __init__(self, config: Optional[RendererConfig] = None):
        self.config = config or RendererConfig(self.kind)

    @classmethod
    def create_args(cls, args_parser: argparse.ArgumentParser):
        pass

    @classmethod
    def fetch_args(cls, args) -> dict:
        return {}

    def image_shape(self):
        return self.config.resolution, self.config.resolution, 1

    def render(self, p: ManifoldPoint) -> Image:
        raise NotImplementedError

    def __call__(self, p: ManifoldPoint) -> Image:
        return self.render(p)


class GaussianRenderer(Renderer):
    """Anisotropic Gaussians on S^1 x [a, b] x [c, d]^2."""

    kind = "g"

    @classmethod
    def create_args(cls, args_parser):
        group = args_parser.add_argument_group("Gaussian (g) Options")
        group.add_argument(
            "--g-aspect",
            dest="g_aspect",
            metavar="RATIO",
            type=float,
            help="Aspect ratio of the Gaussian (default: 2).",
        )
        group.add_argument(
            "--g-scale-range",
            dest="g_scale_range",
            metavar="A,B",
            type=str,
            help="Scale interval [a, b] in plane units (default: 0.15,0.3).",
        )

    @classmethod
    def fetch_args(cls, args):
        options = {}
        if getattr(args, "g_aspect", None) is not None:
            options["aspect"] = args.g_aspect
        if getattr(args, "g_scale_range", None):
            options["scale_range"] = tuple(float(v) for v in args.g_scale_range.split(","))
        return options

    def render(self, p):
        return render_G(p, self.config)


class GaussianRotationRenderer(Renderer):
    """Gaussians that only rotate: fixed scale, centered; represents a circle."""

    kind = "g_rotation"

    def render(self, p):
        alpha = float(p.coords[0])
        full = ManifoldPoint("product", [alpha, self.config.scale, 0.0, 0.0])
        return render_G(full, self.config)


class SundialRenderer(Renderer):
    """Shadows of a vertical rod lit from the upper hemisphere."""

    kind = "s"

    @classmethod
    def create_args(cls, args_parser):
        group = args_parser.add_argument_group("Sundial (s) Options")
        group.add_argument(
            "--s-rod-height",
            dest="s_rod_height",
            metavar="H",
            type=float,
            help="Height of the rod tip (default: 0.5).",
        )

    @classmethod
    def fetch_args(cls, args):
        if getattr(args, "s_rod_height", None) is not None:
            return {"rod_height": args.s_rod_height}
        return {}

    def render(self, p):
        return render_S(p, self.config)


class RotationRenderer(Renderer):
    """Orthographic projections of a rotated landmark object."""

    kind = "r"

    @classmethod
    def create_args(cls, args_parser):
        group = args_parser.add_argument_group("Rotation (r) Options")
        group.add_argument(
            "--r-blob-radius",
            dest="r_blob_radius",
            metavar="RADIUS",
            type=float,
            help="Landmark blob radius in plane units (default: 0.12).",
        )

    @classmethod
    def fetch_args(cls, args):
        if getattr(args, "r_blob_radius", None) is not None:
            return {"blob_radius": args.r_blob_radius}
        return {}

    def image_shape(self):
        return self.config.resolution, self.config.resolution, 3

    def render(self, p):
        return render_R(p, self.config)


class CoordinateRenderer(Renderer):
    """The flat square rendered as its own coordinates (a 2x1 "image")."""

    kind = "flat_square"

    def image_shape(self):
        return 2, 1, 1

    def render(self, p):
        return Image(2, 1, 1, np.asarray(p.coords, dtype=np.float64))


class QuantizedRenderer(Renderer):
    """Wrap another renderer and round its images to binary."""

    def __init__(self, base: Renderer):
        self.base = base
        self.kind = base.kind
        self.config = base.config

    def image_shape(self):
        return self.base.image_shape()

    def render(self, p):
        return quantize(self.base.render(p))


RENDERERS = {
    cls.kind: cls
    for cls in (
        GaussianRenderer,
        GaussianRotationRenderer,
        SundialRenderer,
        RotationRenderer,
        CoordinateRenderer,
    )
}


class DatasetSpec(NamedTuple):
    name: str
    manifold: Manifold
    renderer: Renderer
    epsilon: float
    circle_only: bool


def make_dataset(
    kind: str,
    resolution: int = 16,
    epsilon: Optional[float] = None,
    quantized: bool = False,
    **options,
) -> DatasetSpec:
    """Manifold, renderer and locality radius of one of the synthetic datasets."""
    cfg = RendererConfig(kind, resolution, **options)
    renderer = RENDERERS[kind](cfg)
    circle_only = False
    if kind == "g":
        plane = cfg.translation_range
        manifold = Product(
            [Circle(math.pi), Interval(*cfg.scale_range), Interval(*plane), Interval(*plane)]
        )
        circle_only = True
    elif kind == "g_rotation":
        manifold = Circle(math.pi)
    elif kind == "s":
        manifold = Hemisphere2()
    elif kind == "r":
        manifold = SO3()
    else:
        manifold = Product([Interval(0.0, 1.0), Interval(0.0, 1.0)])
    if epsilon is None:
        epsilon = DEFAULT_EPSILON[kind]
    if not epsilon > 0:
        raise ParameterError(f"Locality radius must be positive: {epsilon}")
    if quantized:
        renderer = QuantizedRenderer(renderer)
    return DatasetSpec(kind, manifold, renderer, float(epsilon), circle_only)


def make_triplet(
    manifold: Manifold,
    renderer: Renderer,
    epsilon: float,
    rng: np.random.Generator,
    circle_only: bool = False,
    sampler: Optional[PairSampler] = None,
) -> Triplet:
    """Draw a local pair, render x, y and their midpoint, record their distance."""
    sampler = sampler or PairSampler(manifold, epsilon, circle_only=circle_only)
    while True:
        x, y = sampler.draw(rng)
        d = distance(manifold, x, y)
        if d >= MIN_DISTANCE_FRACTION * epsilon:
            break
        log.debug(f"Redrawing a pair at distance {d}")
    mid = average(manifold, x, y, 0.5)
    return Triplet(renderer(x), renderer(y), renderer(mid), d)


def _generate_shard(spec: DatasetSpec, count: int, seed_seq) -> List[Triplet]:
    rng = np.random.default_rng(seed_seq)
    sampler = PairSampler(spec.manifold, spec.epsilon, circle_only=spec.circle_only)
    triplets = [
        make_triplet(spec.manifold, spec.renderer, spec.epsilon, rng, sampler=sampler)
        for _ in range(count)
    ]
    log.debug(f"Shard acceptance rate {sampler.acceptance_rate():.4f}")
    return triplets


def generate_triplets(
    spec: DatasetSpec, count: int, seed: int, workers: int = 1
) -> List[Triplet]:
    """Generate `count` triplets; the output depends on the seed only, not on workers."""
    counts = [SHARD_SIZE] * (count // SHARD_SIZE)
    if count % SHARD_SIZE:
        counts.append(count % SHARD_SIZE)
    seeds = np.random.SeedSequence(seed).spawn(len(counts))
    if workers <= 1:
        shards = [_generate_shard(spec, n, s) for n, s in zip(counts, seeds)]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            shards = list(executor.map(_generate_shard, [spec] * len(counts), counts, seeds))
    return [t for shard in shards for t in shard]
