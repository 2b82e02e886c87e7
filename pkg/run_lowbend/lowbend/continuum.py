"""Monte-Carlo energy, limit energy and consistency checks on analytic embeddings.

The embeddings here come with exact first and second derivatives along
geodesics, so the continuum energy can be evaluated by quadrature over unit
tangent directions and compared with Monte-Carlo estimates of the discrete
energy for shrinking locality radii.
"""
# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.

import concurrent.futures
import logging
import math
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import GeometryDomainError, ParameterError, SingularGammaError
from .geometry import Circle, Interval, Manifold, Product, Sphere2

log = logging.getLogger(__name__)

SINGULAR_TOL = 1e-12
EXACT_TOL = 1e-12
SHARD_SIZE = 50_000
LIMIT_SAMPLES = 100_000
LIMIT_CHUNK = 1_000


def gamma_of_sq(sq):
    """gamma as a function of the squared norm, written to stay nonnegative."""
    return (sq - 1.0) ** 2 / sq


class AnalyticEmbedding:
    """Map from a manifold into R^l with derivatives along geodesics.

    Attributes:
        domain: Manifold the embedding is defined on.
        out_dim: Latent dimension l.
        name: Label used in reports.
        homogeneous: True when the limit integrand does not depend on the point.
        anchor: Coordinates of a representative point for homogeneous embeddings.

    Methods:
        map: phi at a batch of coordinates.
        dgrad: d/dt phi(exp_x(t v)) at t = 0.
        dhess: d^2/dt^2 phi(exp_x(t v)) at t = 0.
        self_check: Compare dgrad/dhess with central differences along exp.
    """

    name = ""
    out_dim = 0
    homogeneous = False
    anchor = None

    def __init__(self, domain: Manifold):
        self.domain = domain

    def map(self, x):
        raise NotImplementedError

    def dgrad(self, x, v):
        raise NotImplementedError

    def dhess(self, x, v):
        raise NotImplementedError

    def self_check(self, rng: np.random.Generator, samples: int = 20, h: float = 1e-4) -> float:
        """Largest relative deviation of dgrad/dhess from finite differences."""
        worst = 0.0
        checked = 0
        while checked < samples:
            x = self.domain.uniform(rng, 1)
            frame = self.domain.tangent_frame(x)[0]
            coeffs = rng.normal(size=frame.shape[0])
            v = (coeffs / np.linalg.norm(coeffs)) @ frame
            v = v[None]
            try:
                up = self.map(self.domain.exp(x, h * v))
                down = self.map(self.domain.exp(x, -h * v))
            except GeometryDomainError:
                continue
            mid = self.map(x)
            fd_grad = (up - down) / (2.0 * h)
            fd_hess = (up - 2.0 * mid + down) / (h * h)
            for exact, approx in ((self.dgrad(x, v), fd_grad), (self.dhess(x, v), fd_hess)):
                scale = max(1.0, float(np.max(np.abs(exact))))
                worst = max(worst, float(np.max(np.abs(exact - approx))) / scale)
            checked += 1
        return worst

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class FlatSquareEmbedding(AnalyticEmbedding):
    """Identity of [0, 1]^2 into R^2."""

    name = "flat_square"
    out_dim = 2
    homogeneous = True
    anchor = (0.5, 0.5)

    def __init__(self):
        super().__init__(Product([Interval(0.0, 1.0), Interval(0.0, 1.0)]))

    def map(self, x):
        return np.array(x, dtype=np.float64)

    def dgrad(self, x, v):
        return np.array(v, dtype=np.float64)

    def dhess(self, x, v):
        return np.zeros(np.shape(v))


class CircleEmbedding(AnalyticEmbedding):
    """Circle of length 2 pi mapped onto the circle of radius rho in R^2."""

    out_dim = 2
    homogeneous = True
    anchor = (0.0,)

    def __init__(self, rho: float = 1.0):
        if not rho > 0:
            raise ParameterError(f"Radius must be positive: {rho}")
        super().__init__(Circle(2 * math.pi))
        self.rho = float(rho)
        self.name = f"circle(rho={self.rho:g})"

    def map(self, x):
        a = np.asarray(x)[..., 0]
        return self.rho * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def dgrad(self, x, v):
        a, s = np.asarray(x)[..., 0], np.asarray(v)[..., 0]
        return self.rho * s[..., None] * np.stack([-np.sin(a), np.cos(a)], axis=-1)

    def dhess(self, x, v):
        return -np.square(np.asarray(v)[..., :1]) * self.map(x)


class SphereEmbedding(AnalyticEmbedding):
    """Unit sphere included in R^3."""

    name = "sphere"
    out_dim = 3
    homogeneous = True
    anchor = (0.0, 0.0, 1.0)

    def __init__(self):
        super().__init__(Sphere2())

    def map(self, x):
        return np.array(x, dtype=np.float64)

    def dgrad(self, x, v):
        return np.array(v, dtype=np.float64)

    def dhess(self, x, v):
        return -np.sum(np.square(v), axis=-1, keepdims=True) * np.asarray(x)


class CylinderEmbedding(AnalyticEmbedding):
    """S^1 x [0, 1] mapped to (cos a, sin a, h)."""

    name = "cylinder"
    out_dim = 3
    homogeneous = True
    anchor = (0.0, 0.5)

    def __init__(self):
        super().__init__(Product([Circle(2 * math.pi), Interval(0.0, 1.0)]))

    def map(self, x):
        x = np.asarray(x)
        return np.stack([np.cos(x[..., 0]), np.sin(x[..., 0]), x[..., 1]], axis=-1)

    def dgrad(self, x, v):
        a, v = np.asarray(x)[..., 0], np.asarray(v)
        return np.stack([-np.sin(a) * v[..., 0], np.cos(a) * v[..., 0], v[..., 1]], axis=-1)

    def dhess(self, x, v):
        a, s = np.asarray(x)[..., 0], np.asarray(v)[..., 0]
        return np.stack([-np.cos(a) * s * s, -np.sin(a) * s * s, np.zeros_like(a)], axis=-1)


class TransformedEmbedding(AnalyticEmbedding):
    """phi post-composed with x -> Q x + b."""

    def __init__(self, base: AnalyticEmbedding, rotation, shift):
        super().__init__(base.domain)
        rotation = np.asarray(rotation, dtype=np.float64)
        if rotation.shape != (base.out_dim, base.out_dim):
            raise ParameterError(f"Rotation must be {base.out_dim}x{base.out_dim}")
        self.base = base
        self.rotation = rotation
        self.shift = np.asarray(shift, dtype=np.float64)
        self.name = base.name
        self.out_dim = base.out_dim
        self.homogeneous = base.homogeneous
        self.anchor = base.anchor

    def map(self, x):
        return self.base.map(x) @ self.rotation.T + self.shift

    def dgrad(self, x, v):
        return self.base.dgrad(x, v) @ self.rotation.T

    def dhess(self, x, v):
        return self.base.dhess(x, v) @ self.rotation.T


EMBEDDINGS = {
    "flat-square": FlatSquareEmbedding,
    "circle": CircleEmbedding,
    "sphere": SphereEmbedding,
    "cylinder": CylinderEmbedding,
}


class QuadratureRule(NamedTuple):
    """Nodes on the unit sphere S^{m-1} with weights summing to one."""

    dim: int
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def for_dim(cls, m: int, resolution: int = 256) -> "QuadratureRule":
        if m == 1:
            return cls(1, np.array([[1.0], [-1.0]]), np.array([0.5, 0.5]))
        if m == 2:
            angles = 2 * math.pi * np.arange(resolution) / resolution
            nodes = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
            return cls(2, nodes, np.full(resolution, 1.0 / resolution))
        if m == 3:
            # Gauss-Legendre in the height times the trapezoid rule in the azimuth
            z, wz = np.polynomial.legendre.leggauss(12)
            phi = 2 * math.pi * np.arange(20) / 20
            zz, pp = np.meshgrid(z, phi, indexing="ij")
            r = np.sqrt(1.0 - zz * zz)
            nodes = np.stack([r * np.cos(pp), r * np.sin(pp), zz], axis=-1).reshape(-1, 3)
            weights = np.repeat(wz / 2.0, 20) / 20.0
            return cls(3, nodes, weights)
        raise ParameterError(f"No quadrature rule for S^{m - 1}")


def Gamma(B, rule: Optional[QuadratureRule] = None) -> float:
    """Average of gamma(|B v|) over unit vectors v."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    rule = rule or QuadratureRule.for_dim(B.shape[1])
    if rule.dim != B.shape[1]:
        raise ParameterError(f"Rule for S^{rule.dim - 1} used with {B.shape[1]} columns")
    sq = np.sum(np.square(rule.nodes @ B.T), axis=-1)
    if np.any(np.sqrt(sq) < SINGULAR_TOL):
        raise SingularGammaError(f"|Bv| vanishes on S^{rule.dim - 1} for a rank-deficient B")
    return float(np.dot(rule.weights, gamma_of_sq(sq)))


def _pointwise_limit(phi: AnalyticEmbedding, x, lam: float, rule: QuadratureRule):
    frames = phi.domain.tangent_frame(x)
    dirs = np.einsum("km,pmt->pkt", rule.nodes, frames)
    n_pts, n_nodes = dirs.shape[:2]
    xs = np.repeat(x, n_nodes, axis=0)
    vs = dirs.reshape(n_pts * n_nodes, -1)
    grad_sq = np.sum(np.square(phi.dgrad(xs, vs)), axis=-1)
    if np.any(np.sqrt(grad_sq) < SINGULAR_TOL):
        raise SingularGammaError(f"Gradient of {phi!r} is singular at a quadrature node")
    hess_sq = np.sum(np.square(phi.dhess(xs, vs)), axis=-1)
    values = (gamma_of_sq(grad_sq) + lam * hess_sq).reshape(n_pts, n_nodes)
    return values @ rule.weights


def limit_energy(
    phi: AnalyticEmbedding,
    lam: float,
    rule: Optional[QuadratureRule] = None,
    samples: int = LIMIT_SAMPLES,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Average over M and unit directions of gamma(grad) + lam |hess(v, v)|^2."""
    rule = rule or QuadratureRule.for_dim(phi.domain.dim)
    if phi.homogeneous:
        return float(_pointwise_limit(phi, np.atleast_2d(phi.anchor), lam, rule)[0])
    rng = rng or np.random.default_rng(0)
    total = 0.0
    for start in range(0, samples, LIMIT_CHUNK):
        x = phi.domain.uniform(rng, min(LIMIT_CHUNK, samples - start))
        total += float(np.sum(_pointwise_limit(phi, x, lam, rule)))
    return total / samples


class MonteCarloEstimate(NamedTuple):
    value: float
    std_err: float
    samples: int


def _mc_shard(phi: AnalyticEmbedding, epsilon: float, lam: float, n: int, rng):
    M = phi.domain
    x = M.uniform(rng, n)
    y = M.ball(rng, x, epsilon)
    d = M.dist(x, y)
    keep = d >= 1e-6 * epsilon
    x, y, d = x[keep], y[keep], d[keep]
    mid = M.geodesic(x, y, 0.5)
    fx, fy, fmid = phi.map(x), phi.map(y), phi.map(mid)
    d1 = (fy - fx) / d[:, None]
    d2 = 8.0 * (0.5 * (fx + fy) - fmid) / np.square(d)[:, None]
    values = gamma_of_sq(np.sum(d1 * d1, axis=-1)) + lam * np.sum(d2 * d2, axis=-1)
    return float(values.sum()), float(np.square(values).sum()), int(values.size)


def mc_energy(
    phi: AnalyticEmbedding,
    epsilon: float,
    samples: int,
    lam: float,
    rng: np.random.Generator,
    workers: int = 1,
) -> MonteCarloEstimate:
    """Sample mean of the discrete energy over pairs x uniform, y uniform in B_eps(x)."""
    if not 0 < epsilon < phi.domain.uniqueness_bound:
        raise ParameterError(
            f"Locality radius {epsilon} outside (0, {phi.domain.uniqueness_bound})"
        )
    counts = [SHARD_SIZE] * (samples // SHARD_SIZE)
    if samples % SHARD_SIZE:
        counts.append(samples % SHARD_SIZE)
    streams = rng.spawn(len(counts))
    if workers <= 1:
        shards = [_mc_shard(phi, epsilon, lam, n, r) for n, r in zip(counts, streams)]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(_mc_shard, phi, epsilon, lam, n, r)
                for n, r in zip(counts, streams)
            ]
            shards = [f.result() for f in futures]
    total = sum(s[0] for s in shards)
    total_sq = sum(s[1] for s in shards)
    n = sum(s[2] for s in shards)
    mean = total / n
    var = max(0.0, (total_sq - n * mean * mean) / max(n - 1, 1))
    return MonteCarloEstimate(mean, math.sqrt(var / n), n)


class ConsistencyRow(NamedTuple):
    epsilon: float
    estimate: MonteCarloEstimate
    limit: float

    @property
    def abs_diff(self) -> float:
        return abs(self.estimate.value - self.limit)


class ConsistencyReport(NamedTuple):
    embedding: str
    limit: float
    rows: List[ConsistencyRow]
    slope: float
    intercept: float
    status: str

    def passed(self, threshold: float = 0.9) -> bool:
        if self.status == "exact":
            return True
        return self.status == "fitted" and self.slope >= threshold


def consistency_rate(
    phi: AnalyticEmbedding,
    epsilons: Sequence[float],
    samples: int,
    lam: float,
    seed: int,
    rule: Optional[QuadratureRule] = None,
    workers: int = 1,
) -> ConsistencyReport:
    """Fit log|E^eps - E| against log eps using common random numbers across eps."""
    limit = limit_energy(phi, lam, rule)
    rows = []
    for eps in epsilons:
        estimate = mc_energy(phi, eps, samples, lam, np.random.default_rng(seed), workers)
        rows.append(ConsistencyRow(float(eps), estimate, limit))
        log.info(
            f"{phi.name} eps={eps:g}: E^eps={estimate.value:.8g} "
            f"(se {estimate.std_err:.2g}), E={limit:.8g}"
        )
    if all(r.abs_diff <= EXACT_TOL and r.estimate.std_err <= EXACT_TOL for r in rows):
        return ConsistencyReport(phi.name, limit, rows, math.nan, math.nan, "exact")
    significant = [r for r in rows if r.abs_diff > 3.0 * r.estimate.std_err]
    if len(significant) < 2:
        log.warning(f"Only {len(significant)} statistically significant differences")
        return ConsistencyReport(phi.name, limit, rows, math.nan, math.nan, "inconclusive")
    slope, intercept = np.polyfit(
        np.log([r.epsilon for r in significant]), np.log([r.abs_diff for r in significant]), 1
    )
    return ConsistencyReport(phi.name, limit, rows, float(slope), float(intercept), "fitted")


def write_verify_report(path: str, report: ConsistencyReport) -> None:
    df = pd.DataFrame(
        {
            "embedding": [report.embedding] * len(report.rows),
            "epsilon": [r.epsilon for r in report.rows],
            "mc_value": [r.estimate.value for r in report.rows],
            "std_err": [r.estimate.std_err for r in report.rows],
            "limit_value": [r.limit for r in report.rows],
            "abs_diff": [r.abs_diff for r in report.rows],
        }
    )
    with open(path, "w", newline="") as f:
        df.to_csv(f, index=False)
        f.write(
            f"# slope={report.slope:.6g},intercept={report.intercept:.6g},status={report.status}\n"
        )
