"""Exact Riemannian oracles for the manifolds behind the synthetic datasets.

Every manifold kernel works on coordinate arrays whose last axis holds the
coordinates of one point, so the same code serves single points and whole
Monte-Carlo batches. The module-level functions (distance, average, exp_map,
...) are the point-level API and validate their inputs.
"""
# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import (
    AmbiguousGeodesicError,
    GeometryDomainError,
    InvalidArgumentError,
    ParameterError,
    PathologicalEpsilonError,
)
from .value_range import ValueRange

log = logging.getLogger(__name__)

CONSTRUCTION_TOL = 1e-9
# distances this close to the uniqueness bound count as ambiguous
BOUND_TOL = 1e-12
REJECTION_WINDOW = 2_000_000
# below this angle slerp weights are replaced by linear ones
SMALL_ANGLE = 1e-9


class ManifoldPoint:
    """Coordinates of a point on a manifold of the given kind."""

    def __init__(self, kind: str, coords):
        self.kind = kind
        self.coords = np.array(coords, dtype=np.float64).reshape(-1)

    def __repr__(self):
        return f"ManifoldPoint: {self.kind} {self.coords.tolist()}"


class TangentVector:
    """Tangent vector at `base`, components in the chart of the base point."""

    def __init__(self, base: ManifoldPoint, components):
        self.base = base
        self.components = np.array(components, dtype=np.float64).reshape(-1)

    def __repr__(self):
        return f"TangentVector: at {self.base.coords.tolist()} {self.components.tolist()}"


def _norm(a):
    return np.sqrt(np.sum(a * a, axis=-1))


def _normalize(a):
    return a / _norm(a)[..., None]


def _angle_between_unit(a, b):
    """Angle between unit vectors, accurate for tiny and near-antipodal angles."""
    return 2.0 * np.arctan2(_norm(a - b), _norm(a + b))


def _slerp(a, b, theta, t: float):
    theta = np.asarray(theta)[..., None]
    safe = np.where(theta < SMALL_ANGLE, 1.0, theta)
    s = np.sin(safe)
    w0 = np.where(theta < SMALL_ANGLE, 1.0 - t, np.sin((1.0 - t) * safe) / s)
    w1 = np.where(theta < SMALL_ANGLE, t, np.sin(t * safe) / s)
    return _normalize(w0 * a + w1 * b)


def _unit_normals(rng: np.random.Generator, size: int, dim: int):
    v = rng.standard_normal((size, dim))
    n = _norm(v)
    # a zero draw has probability zero, but keep the result finite
    n = np.where(n == 0.0, 1.0, n)
    return v / n[:, None]


def quat_multiply(p, q):
    """Hamilton product of (w, x, y, z) quaternions, broadcasting over batches."""
    pw, px, py, pz = (p[..., i] for i in range(4))
    qw, qx, qy, qz = (q[..., i] for i in range(4))
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion; q and -q give bit-identical results."""
    w, x, y, z = (q[..., i] for i in range(4))
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


class Manifold:
    """Base class that the concrete manifolds inherit from.

    Attributes:
        kind: Name of the manifold kind, stored in every ManifoldPoint.
        dim: Intrinsic dimension m.
        coord_size: Length of a coordinate vector.
        tangent_size: Length of a tangent vector in chart components.
        uniqueness_bound: Distance below which geodesic averages are unique.
        is_flat: True if the metric is Euclidean in the chart.
    """

    kind = ""
    dim = 0
    coord_size = 0
    tangent_size = 0
    uniqueness_bound = math.inf
    is_flat = False

    def contains(self, a, tol: float = CONSTRUCTION_TOL):
        raise NotImplementedError

    def dist(self, a, b):
        raise NotImplementedError

    def geodesic(self, a, b, t: float):
        raise NotImplementedError

    def exp(self, a, v):
        raise NotImplementedError

    def log(self, a, b):
        raise NotImplementedError

    def tangent_norm(self, a, v):
        return _norm(v)

    def tangent_frame(self, a):
        raise NotImplementedError

    def uniform(self, rng: np.random.Generator, size: int):
        raise NotImplementedError

    def ball(self, rng: np.random.Generator, a, radius: float):
        """Points uniform in V_g on the geodesic balls around the rows of `a`."""
        return self._rejection_ball(rng, a, radius)

    def _rejection_ball(self, rng, a, radius):
        a = np.atleast_2d(a)
        out = np.empty_like(a)
        pending = np.arange(a.shape[0])
        trials = 0
        while pending.size:
            cand = self.uniform(rng, pending.size)
            ok = self.dist(a[pending], cand) <= radius
            out[pending[ok]] = cand[ok]
            pending = pending[~ok]
            trials += ok.size
            if pending.size and trials >= REJECTION_WINDOW * a.shape[0]:
                raise PathologicalEpsilonError(
                    f"Ball sampling of radius {radius} on {self.kind} does not accept"
                )
        return out

    def point(self, coords) -> ManifoldPoint:
        p = ManifoldPoint(self.kind, coords)
        validate(self, p)
        return p

    def __repr__(self):
        return f"{type(self).__name__}()"


class Circle(Manifold):
    """Circle of the given circumference; coordinate is the arc-length angle."""

    kind = "circle"
    dim = 1
    coord_size = 1
    tangent_size = 1
    is_flat = True

    def __init__(self, circumference: float = 2 * math.pi):
        if not circumference > 0:
            raise ParameterError(f"Circle circumference must be positive: {circumference}")
        self.circumference = float(circumference)
        self.uniqueness_bound = 0.5 * self.circumference

    def _signed(self, a, b):
        c = self.circumference
        return np.remainder(b - a + 0.5 * c, c) - 0.5 * c

    def contains(self, a, tol=CONSTRUCTION_TOL):
        a = np.asarray(a)[..., 0]
        return np.isfinite(a) & (a >= -tol) & (a <= self.circumference + tol)

    def dist(self, a, b):
        return np.abs(self._signed(a, b))[..., 0]

    def geodesic(self, a, b, t):
        delta = self._signed(a, b)
        if np.any(np.abs(delta) >= self.uniqueness_bound - BOUND_TOL):
            raise AmbiguousGeodesicError("Antipodal points on the circle")
        return np.remainder(a + t * delta, self.circumference)

    def exp(self, a, v):
        if np.any(np.abs(v) >= self.uniqueness_bound):
            raise GeometryDomainError("Tangent vector longer than half the circle")
        return np.remainder(a + v, self.circumference)

    def log(self, a, b):
        delta = self._signed(a, b)
        if np.any(np.abs(delta) >= self.uniqueness_bound - BOUND_TOL):
            raise GeometryDomainError("log is undefined for antipodal points")
        return delta

    def tangent_frame(self, a):
        return np.ones(np.shape(a)[:-1] + (1, 1))

    def uniform(self, rng, size):
        return rng.uniform(0.0, self.circumference, size=(size, 1))

    def ball(self, rng, a, radius):
        a = np.atleast_2d(a)
        if radius >= self.uniqueness_bound:
            return self.uniform(rng, a.shape[0])
        return self._wrap(a + rng.uniform(-radius, radius, size=a.shape))

    def _wrap(self, a):
        return np.remainder(a, self.circumference)

    def __repr__(self):
        return f"Circle({self.circumference})"


class Interval(Manifold):
    """Closed interval [lo, hi] with the Euclidean metric."""

    kind = "interval"
    dim = 1
    coord_size = 1
    tangent_size = 1
    is_flat = True

    def __init__(self, lo: float, hi: float):
        self.range = ValueRange(lo, hi)

    def contains(self, a, tol=CONSTRUCTION_TOL):
        a = np.asarray(a)[..., 0]
        return np.isfinite(a) & self.range.contains(a, tol)

    def dist(self, a, b):
        return np.abs(b - a)[..., 0]

    def geodesic(self, a, b, t):
        return (1.0 - t) * a + t * b

    def exp(self, a, v):
        out = a + v
        if not np.all(self.contains(out)):
            raise GeometryDomainError(f"exp leaves the interval {self.range.tuple()}")
        return out

    def log(self, a, b):
        return b - a

    def tangent_frame(self, a):
        return np.ones(np.shape(a)[:-1] + (1, 1))

    def uniform(self, rng, size):
        return self.range.uniform(rng, size=(size, 1))

    def _wrap(self, a):
        return a

    def __repr__(self):
        return f"Interval({self.range.lower()}, {self.range.upper()})"


class Product(Manifold):
    """Riemannian product; distances combine as the root of summed squares."""

    kind = "product"

    def __init__(self, factors: Sequence[Manifold]):
        if not factors:
            raise ParameterError("A product needs at least one factor")
        self.factors: List[Manifold] = list(factors)
        self.dim = sum(f.dim for f in self.factors)
        self.coord_size = sum(f.coord_size for f in self.factors)
        self.tangent_size = sum(f.tangent_size for f in self.factors)
        self.uniqueness_bound = min(f.uniqueness_bound for f in self.factors)
        self.is_flat = all(f.is_flat for f in self.factors)
        self._coord_cuts = np.cumsum([f.coord_size for f in self.factors])[:-1]
        self._tangent_cuts = np.cumsum([f.tangent_size for f in self.factors])[:-1]

    def _split(self, a):
        return np.split(np.asarray(a), self._coord_cuts, axis=-1)

    def _split_tangent(self, v):
        return np.split(np.asarray(v), self._tangent_cuts, axis=-1)

    def contains(self, a, tol=CONSTRUCTION_TOL):
        masks = [f.contains(p, tol) for f, p in zip(self.factors, self._split(a))]
        return np.logical_and.reduce(masks)

    def factor_distances(self, a, b):
        return [
            f.dist(pa, pb)
            for f, pa, pb in zip(self.factors, self._split(a), self._split(b))
        ]

    def dist(self, a, b):
        return np.sqrt(sum(d * d for d in self.factor_distances(a, b)))

    def geodesic(self, a, b, t):
        parts = zip(self.factors, self._split(a), self._split(b))
        return np.concatenate([f.geodesic(pa, pb, t) for f, pa, pb in parts], axis=-1)

    def exp(self, a, v):
        parts = zip(self.factors, self._split(a), self._split_tangent(v))
        return np.concatenate([f.exp(pa, pv) for f, pa, pv in parts], axis=-1)

    def log(self, a, b):
        parts = zip(self.factors, self._split(a), self._split(b))
        return np.concatenate([f.log(pa, pb) for f, pa, pb in parts], axis=-1)

    def tangent_norm(self, a, v):
        parts = zip(self.factors, self._split(a), self._split_tangent(v))
        return np.sqrt(sum(f.tangent_norm(pa, pv) ** 2 for f, pa, pv in parts))

    def tangent_frame(self, a):
        lead = np.shape(a)[:-1]
        frame = np.zeros(lead + (self.dim, self.tangent_size))
        row, col = 0, 0
        for f, pa in zip(self.factors, self._split(a)):
            frame[..., row : row + f.dim, col : col + f.tangent_size] = f.tangent_frame(pa)
            row += f.dim
            col += f.tangent_size
        return frame

    def uniform(self, rng, size):
        return np.concatenate([f.uniform(rng, size) for f in self.factors], axis=-1)

    def _wrap(self, a):
        return np.concatenate(
            [f._wrap(p) for f, p in zip(self.factors, self._split(a))], axis=-1
        )

    def ball(self, rng, a, radius):
        if not self.is_flat or radius >= self.uniqueness_bound:
            return self._rejection_ball(rng, a, radius)
        a = np.atleast_2d(a)
        out = np.empty_like(a)
        pending = np.arange(a.shape[0])
        trials = 0
        while pending.size:
            n = pending.size
            r = radius * rng.random(n) ** (1.0 / self.dim)
            v = _unit_normals(rng, n, self.dim) * r[:, None]
            parts = zip(self.factors, self._split(a[pending]), self._split_tangent(v))
            cand = np.concatenate([f._wrap(pa + pv) for f, pa, pv in parts], axis=-1)
            ok = self.contains(cand, tol=0.0)
            out[pending[ok]] = cand[ok]
            pending = pending[~ok]
            trials += n
            if pending.size and trials >= REJECTION_WINDOW * a.shape[0]:
                raise PathologicalEpsilonError(f"Ball of radius {radius} leaves the domain")
        return out

    def __repr__(self):
        return f"Product({', '.join(repr(f) for f in self.factors)})"


class Sphere2(Manifold):
    """Unit sphere in R^3 with the great-circle distance."""

    kind = "sphere2"
    dim = 2
    coord_size = 3
    tangent_size = 3
    uniqueness_bound = math.pi

    def contains(self, a, tol=CONSTRUCTION_TOL):
        n = _norm(np.asarray(a))
        return np.isfinite(n) & (np.abs(n - 1.0) <= tol)

    def dist(self, a, b):
        return _angle_between_unit(a, b)

    def geodesic(self, a, b, t):
        theta = self.dist(a, b)
        if np.any(theta >= self.uniqueness_bound - BOUND_TOL):
            raise AmbiguousGeodesicError("Antipodal points have no unique midpoint")
        if t == 0.0:
            return np.array(a, dtype=np.float64)
        if t == 1.0:
            return np.array(b, dtype=np.float64)
        return _slerp(a, b, theta, t)

    def _exp(self, a, v):
        theta = _norm(v)[..., None]
        safe = np.where(theta == 0.0, 1.0, theta)
        return _normalize(np.cos(theta) * a + np.sin(theta) / safe * v)

    def exp(self, a, v):
        theta = _norm(v)
        if np.any(np.abs(np.sum(a * v, axis=-1)) > CONSTRUCTION_TOL * np.maximum(1.0, theta)):
            raise GeometryDomainError("Vector is not tangent to the sphere")
        if np.any(theta >= self.uniqueness_bound):
            raise GeometryDomainError("Tangent vector reaches the antipode")
        return self._exp(a, v)

    def log(self, a, b):
        theta = self.dist(a, b)
        if np.any(theta >= self.uniqueness_bound - BOUND_TOL):
            raise GeometryDomainError("log is undefined for antipodal points")
        u = b - np.sum(a * b, axis=-1, keepdims=True) * a
        n = _norm(u)[..., None]
        safe = np.where(n == 0.0, 1.0, n)
        return np.where(n == 0.0, 0.0, theta[..., None] * u / safe)

    def tangent_frame(self, a):
        a = np.asarray(a)
        helper = np.where(
            np.abs(a[..., :1]) > 0.9, np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])
        )
        e1 = _normalize(helper - np.sum(helper * a, axis=-1, keepdims=True) * a)
        e2 = np.cross(a, e1)
        return np.stack([e1, e2], axis=-2)

    def uniform(self, rng, size):
        return _unit_normals(rng, size, 3)

    def _cap(self, rng, a, radius):
        a = np.atleast_2d(a)
        n = a.shape[0]
        radius = min(radius, math.pi)
        rho = 2.0 * np.arcsin(np.sqrt(rng.random(n)) * math.sin(0.5 * radius))
        phi = rng.uniform(0.0, 2 * math.pi, n)
        frame = self.tangent_frame(a)
        direction = np.cos(phi)[:, None] * frame[:, 0] + np.sin(phi)[:, None] * frame[:, 1]
        return _normalize(np.cos(rho)[:, None] * a + np.sin(rho)[:, None] * direction)

    def ball(self, rng, a, radius):
        return self._cap(rng, a, radius)


class Hemisphere2(Sphere2):
    """Closed upper hemisphere x3 >= 0 of the unit sphere."""

    kind = "hemisphere2"

    def contains(self, a, tol=CONSTRUCTION_TOL):
        return super().contains(a, tol) & (np.asarray(a)[..., 2] >= -tol)

    def exp(self, a, v):
        out = super().exp(a, v)
        if not np.all(self.contains(out)):
            raise GeometryDomainError("exp leaves the upper hemisphere")
        return out

    def uniform(self, rng, size):
        chunks = []
        got = 0
        while got < size:
            cand = _unit_normals(rng, 2 * (size - got) + 8, 3)
            cand = cand[cand[:, 2] >= 0.0]
            chunks.append(cand)
            got += cand.shape[0]
        return np.concatenate(chunks)[:size]

    def ball(self, rng, a, radius):
        a = np.atleast_2d(a)
        out = np.empty_like(a)
        pending = np.arange(a.shape[0])
        trials = 0
        while pending.size:
            cand = self._cap(rng, a[pending], radius)
            ok = cand[:, 2] >= 0.0
            out[pending[ok]] = cand[ok]
            pending = pending[~ok]
            trials += ok.size
            if pending.size and trials >= REJECTION_WINDOW * a.shape[0]:
                raise PathologicalEpsilonError("Cap sampling keeps leaving the hemisphere")
        return out


class SO3(Manifold):
    """Rotations as unit quaternions (w, x, y, z), d(q1, q2) = arccos|q1 . q2|.

    Tangent vectors are axis-angle rates w; the induced metric gives |w|_g = |w| / 2.
    """

    kind = "so3"
    dim = 3
    coord_size = 4
    tangent_size = 3
    uniqueness_bound = 0.5 * math.pi

    @staticmethod
    def _align(a, b):
        dot = np.sum(a * b, axis=-1, keepdims=True)
        return np.where(dot < 0.0, -b, b)

    def contains(self, a, tol=CONSTRUCTION_TOL):
        n = _norm(np.asarray(a))
        return np.isfinite(n) & (np.abs(n - 1.0) <= tol)

    def dist(self, a, b):
        return _angle_between_unit(a, self._align(a, b))

    def geodesic(self, a, b, t):
        b = self._align(a, b)
        theta = _angle_between_unit(a, b)
        if np.any(theta >= self.uniqueness_bound - BOUND_TOL):
            raise AmbiguousGeodesicError("Rotations too far apart for a unique average")
        if t == 0.0:
            return np.array(a, dtype=np.float64)
        if t == 1.0:
            return np.array(b, dtype=np.float64)
        return _slerp(a, b, theta, t)

    def _exp(self, a, w):
        angle = _norm(w)[..., None]
        safe = np.where(angle == 0.0, 1.0, angle)
        r = np.concatenate([np.cos(0.5 * angle), np.sin(0.5 * angle) * w / safe], axis=-1)
        return _normalize(quat_multiply(a, r))

    def exp(self, a, w):
        if np.any(self.tangent_norm(a, w) >= self.uniqueness_bound):
            raise GeometryDomainError("Rotation rate beyond the uniqueness bound")
        return self._exp(a, w)

    def log(self, a, b):
        b = self._align(a, b)
        if np.any(_angle_between_unit(a, b) >= self.uniqueness_bound - BOUND_TOL):
            raise GeometryDomainError("log is undefined at quaternion distance pi/2")
        r = quat_multiply(quat_conjugate(a), b)
        vec = r[..., 1:]
        n = _norm(vec)[..., None]
        angle = 2.0 * np.arctan2(n, r[..., :1])
        safe = np.where(n == 0.0, 1.0, n)
        return np.where(n == 0.0, 0.0, angle * vec / safe)

    def tangent_norm(self, a, w):
        return 0.5 * _norm(w)

    def tangent_frame(self, a):
        return np.broadcast_to(2.0 * np.eye(3), np.shape(a)[:-1] + (3, 3)).copy()

    def uniform(self, rng, size):
        return _unit_normals(rng, size, 4)

    def ball(self, rng, a, radius):
        a = np.atleast_2d(a)
        n = a.shape[0]
        radius = min(radius, self.uniqueness_bound)
        # volume of the r-ball grows like 2r - sin 2r; invert by bisection
        target = rng.random(n) * (2 * radius - math.sin(2 * radius))
        lo = np.zeros(n)
        hi = np.full(n, radius)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = 2 * mid - np.sin(2 * mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        r = 0.5 * (lo + hi)
        w = _unit_normals(rng, n, 3) * (2.0 * r)[:, None]
        return self._exp(a, w)


def validate(manifold: Manifold, p: ManifoldPoint) -> None:
    if not isinstance(p, ManifoldPoint) or p.kind != manifold.kind:
        raise InvalidArgumentError(f"{p!r} is not a point of {manifold!r}")
    if p.coords.shape != (manifold.coord_size,):
        raise InvalidArgumentError(
            f"{manifold!r} points have {manifold.coord_size} coordinates, got {p.coords.size}"
        )
    if not bool(manifold.contains(p.coords)):
        raise InvalidArgumentError(f"{p!r} does not lie on {manifold!r}")


def _check_tangent(manifold: Manifold, x: ManifoldPoint, v: TangentVector) -> None:
    if v.components.shape != (manifold.tangent_size,):
        raise InvalidArgumentError(
            f"{manifold!r} tangents have {manifold.tangent_size} components"
        )


def distance(manifold: Manifold, x: ManifoldPoint, y: ManifoldPoint) -> float:
    validate(manifold, x)
    validate(manifold, y)
    return float(manifold.dist(x.coords, y.coords))


def average(
    manifold: Manifold, x: ManifoldPoint, y: ManifoldPoint, t: float = 0.5
) -> ManifoldPoint:
    """Point at fraction t along the minimizing geodesic from x to y."""
    validate(manifold, x)
    validate(manifold, y)
    if not 0.0 <= t <= 1.0:
        raise ParameterError(f"Average weight must lie in [0, 1]: {t}")
    if t == 0.0:
        return ManifoldPoint(manifold.kind, x.coords.copy())
    if t == 1.0:
        return ManifoldPoint(manifold.kind, y.coords.copy())
    return ManifoldPoint(manifold.kind, manifold.geodesic(x.coords, y.coords, t))


def exp_map(manifold: Manifold, x: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    validate(manifold, x)
    _check_tangent(manifold, x, v)
    return ManifoldPoint(manifold.kind, manifold.exp(x.coords, v.components))


def log_map(manifold: Manifold, x: ManifoldPoint, y: ManifoldPoint) -> TangentVector:
    validate(manifold, x)
    validate(manifold, y)
    return TangentVector(x, manifold.log(x.coords, y.coords))


def tangent_norm(manifold: Manifold, v: TangentVector) -> float:
    _check_tangent(manifold, v.base, v)
    return float(manifold.tangent_norm(v.base.coords, v.components))


def sample_uniform(manifold: Manifold, rng: np.random.Generator) -> ManifoldPoint:
    return ManifoldPoint(manifold.kind, manifold.uniform(rng, 1)[0])


def sample_in_ball(
    manifold: Manifold, x: ManifoldPoint, radius: float, rng: np.random.Generator
) -> ManifoldPoint:
    validate(manifold, x)
    return ManifoldPoint(manifold.kind, manifold.ball(rng, x.coords[None], radius)[0])


class PairSampler:
    """Rejection sampler for pairs uniform on M x M conditioned on locality.

    Attributes:
        manifold: Manifold to sample from.
        epsilon: Locality radius.
        circle_only: Constrain only the leading circle factor of a product.
        trials: Number of candidate pairs examined so far.
        accepted: Number of pairs handed out so far.
    """

    def __init__(
        self,
        manifold: Manifold,
        epsilon: float,
        circle_only: bool = False,
        window: int = REJECTION_WINDOW,
    ):
        if not epsilon > 0:
            raise ParameterError(f"Locality radius must be positive: {epsilon}")
        if circle_only and not (
            isinstance(manifold, Product) and isinstance(manifold.factors[0], Circle)
        ):
            raise ParameterError("Circle-only sampling needs a product led by a circle")
        self.manifold = manifold
        self.epsilon = float(epsilon)
        self.circle_only = circle_only
        self.window = window
        self.trials = 0
        self.accepted = 0

    def local_distance(self, a, b):
        if self.circle_only:
            return self.manifold.factor_distances(a, b)[0]
        return self.manifold.dist(a, b)

    def draw(self, rng: np.random.Generator) -> Tuple[ManifoldPoint, ManifoldPoint]:
        chunk = 16
        misses = 0
        while True:
            xs = self.manifold.uniform(rng, chunk)
            ys = self.manifold.uniform(rng, chunk)
            hits = np.flatnonzero(self.local_distance(xs, ys) <= self.epsilon)
            if hits.size:
                i = int(hits[0])
                self.trials += i + 1
                self.accepted += 1
                kind = self.manifold.kind
                return ManifoldPoint(kind, xs[i]), ManifoldPoint(kind, ys[i])
            self.trials += chunk
            misses += chunk
            if misses >= self.window:
                raise PathologicalEpsilonError(
                    f"No pair within {self.epsilon} after {misses} trials on {self.manifold!r}"
                )
            chunk = min(chunk * 2, 65536)

    def acceptance_rate(self) -> float:
        return self.accepted / self.trials if self.trials else 0.0


def sample_pair(
    manifold: Manifold, epsilon: float, rng: np.random.Generator
) -> Tuple[ManifoldPoint, ManifoldPoint]:
    return PairSampler(manifold, epsilon).draw(rng)


def sample_pair_G(
    manifold: Manifold, epsilon: float, rng: np.random.Generator
) -> Tuple[ManifoldPoint, ManifoldPoint]:
    """Pair whose leading circle factor is epsilon-local; other factors are free."""
    return PairSampler(manifold, epsilon, circle_only=True).draw(rng)
