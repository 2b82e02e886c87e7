"""Latent-space analysis of a trained autoencoder."""
# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.

import logging
import math
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import ParameterError, ShapeError
from .geometry import SO3, Manifold, ManifoldPoint, average
from .imaging import Renderer
from .nn import Autoencoder

log = logging.getLogger(__name__)

JACOBI_TOL = 1e-12
USAGE_THRESHOLD = 0.05


class PcaResult(NamedTuple):
    mean: np.ndarray
    # rows are the principal directions, ordered by decreasing variance
    components: np.ndarray
    stds: np.ndarray


def jacobi_eigh(S, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors (columns) of a symmetric matrix by cyclic Jacobi rotations."""
    A = np.array(S, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(A)))
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.square(A)) - np.sum(np.square(np.diag(A)))))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                sign = 1.0 if theta >= 0 else -1.0
                t = sign / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.hypot(t, 1.0)
                s = t * c
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * col_p - s * col_q, s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :], A[q, :] = c * row_p - s * row_q, s * row_p + c * row_q
                v_p, v_q = V[:, p].copy(), V[:, q].copy()
                V[:, p], V[:, q] = c * v_p - s * v_q, s * v_p + c * v_q
    return np.diag(A).copy(), V


def pca(codes) -> PcaResult:
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if codes.shape[0] < 2:
        raise ParameterError(f"PCA needs at least two codes, got {codes.shape[0]}")
    mean = codes.mean(axis=0)
    centered = codes - mean
    cov = centered.T @ centered / (codes.shape[0] - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    order = np.argsort(-eigvals, kind="stable")
    stds = np.sqrt(np.clip(eigvals[order], 0.0, None))
    return PcaResult(mean, eigvecs[:, order].T, stds)


def dim_usage(stds, tau: float = USAGE_THRESHOLD) -> int:
    """Number of principal directions with std at least tau times the largest."""
    stds = np.asarray(stds, dtype=np.float64)
    if stds.size == 0:
        return 0
    return int(np.count_nonzero(stds >= tau * stds[0]))


class InterpCurve(NamedTuple):
    """Per-pair interpolation and base errors on a grid of t values."""

    t: np.ndarray
    err_i: np.ndarray
    err_b: np.ndarray

    @property
    def signed_mean_sq(self) -> np.ndarray:
        return np.mean(np.square(self.err_i) - np.square(self.err_b), axis=0)

    @property
    def err(self) -> np.ndarray:
        return np.sqrt(np.clip(self.signed_mean_sq, 0.0, None))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "t": self.t,
                "err": self.err,
                "signed_mean_sq": self.signed_mean_sq,
                "err_i_mean": self.err_i.mean(axis=0),
                "err_b_mean": self.err_b.mean(axis=0),
            }
        )


def interp_errors(
    model: Autoencoder,
    renderer: Renderer,
    manifold: Manifold,
    pairs: Sequence[Tuple[ManifoldPoint, ManifoldPoint]],
    t_grid: Sequence[float] = tuple(np.linspace(0.0, 1.0, 11)),
) -> InterpCurve:
    """Compare the geodesic average with decoded linear interpolation of codes."""
    if not pairs:
        raise ParameterError("Need at least one test pair")
    t_grid = np.asarray(t_grid, dtype=np.float64)
    xs = np.stack([renderer(x).vector() for x, _ in pairs])
    ys = np.stack([renderer(y).vector() for _, y in pairs])
    if xs.shape[1] != model.encoder.input_width:
        raise ShapeError(
            f"Images have {xs.shape[1]} pixels, the model expects {model.encoder.input_width}"
        )
    cx, cy = model.encode(xs), model.encode(ys)
    err_i = np.empty((len(pairs), t_grid.size))
    err_b = np.empty_like(err_i)
    for j, t in enumerate(t_grid):
        truth = np.stack([renderer(average(manifold, x, y, float(t))).vector() for x, y in pairs])
        interpolated = model.decode((1.0 - t) * cx + t * cy)
        err_i[:, j] = np.linalg.norm(truth - interpolated, axis=1)
        err_b[:, j] = np.linalg.norm(truth - model.reconstruct(truth), axis=1)
    return InterpCurve(t_grid, err_i, err_b)


def export_projection(
    codes, result: PcaResult, dims: Sequence[int] = (0, 1, 2), labels: Dict[str, np.ndarray] = None
) -> pd.DataFrame:
    """Centered codes projected onto the selected components (0-based indices)."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    l = result.components.shape[0]
    if any(not 0 <= d < l for d in dims):
        raise ParameterError(f"Component indices {tuple(dims)} out of range for l={l}")
    proj = (codes - result.mean) @ result.components[list(dims)].T
    columns = {"id": np.arange(codes.shape[0])}
    for name, column in zip(("c_a", "c_b", "c_c", "c_d", "c_e"), proj.T):
        columns[name] = column
    for name, column in (labels or {}).items():
        columns[name] = np.asarray(column)
    return pd.DataFrame(columns)


def point_labels(manifold: Manifold, points: Sequence[ManifoldPoint]) -> Dict[str, np.ndarray]:
    """Label columns for the projection file; rotations are keyed by their axis."""
    coords = np.stack([p.coords for p in points])
    if isinstance(manifold, SO3):
        q = np.where(coords[:, :1] < 0, -coords, coords)
        half = np.arccos(np.clip(q[:, 0], -1.0, 1.0))
        axis = q[:, 1:] / np.maximum(np.linalg.norm(q[:, 1:], axis=1, keepdims=True), 1e-300)
        return {
            "axis_x": axis[:, 0],
            "axis_y": axis[:, 1],
            "axis_z": axis[:, 2],
            "angle": 2.0 * half,
        }
    return {f"p{i}": coords[:, i] for i in range(coords.shape[1])}


def latent_interpolation(model: Autoencoder, img_a, img_b, steps: int = 8) -> np.ndarray:
    """Decoder outputs along the straight segment between the codes of two images."""
    if steps < 2:
        raise ParameterError(f"Need at least two interpolation steps: {steps}")
    ca, cb = model.encode(np.atleast_2d(img_a)), model.encode(np.atleast_2d(img_b))
    t = np.linspace(0.0, 1.0, steps)[:, None]
    return model.decode((1.0 - t) * ca + t * cb)


def sphericity(points) -> Tuple[float, float]:
    """Smallest and largest distance to the centroid relative to the median distance."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    centered = points - points.mean(axis=0)
    radii = np.linalg.norm(centered, axis=1)
    radii = radii / math.sqrt(float(np.mean(radii**2)))
    ratio = radii / np.median(radii)
    return float(ratio.min()), float(ratio.max())


def smooth(values, window: int = 100) -> np.ndarray:
    """Trailing moving average; the first entries average over what is available."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ParameterError(f"Window must be positive: {window}")
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(0, idx - window)
    return (csum[idx] - csum[lo]) / (idx - lo)


def pca_frame(result: PcaResult) -> pd.DataFrame:
    return pd.DataFrame({"component": np.arange(1, result.stds.size + 1), "std": result.stds})


def write_csv(path: str, df: pd.DataFrame) -> None:
    df.to_csv(path, index=False)
    log.info(f"Wrote {len(df)} rows to {path}")
