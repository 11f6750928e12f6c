"""Deterministic K-means clustering and PCA primitives used by all encoders.

Feature vectors are rows of float64 arrays. Every routine here is pure:
fixed inputs (including the seed) produce bit-identical outputs, which the
rest of the pipeline relies on for reproducible training and matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    DTooLarge,
    EmptyInput,
    InsufficientRows,
    KTooLarge,
)

# Covariance eigendecomposition below this input width, thin SVD above.
_EIG_MAX_DIM = 4096

# Row chunk for pairwise distance computations, bounds peak memory.
_DIST_CHUNK = 4096


@dataclass(frozen=True)
class Codebook:
    """Ordered K-means centers plus fit diagnostics.

    Attributes:
        centers: (k, dim) float64 array; row order is deterministic for a
            fixed (input, k, seed) triple.
        k: number of centers.
        seed: seed the fit was initialized with.
        inertia: final sum of squared distances to the nearest center.
        inertia_history: inertia after each Lloyd iteration (non-increasing).
    """

    centers: np.ndarray
    k: int
    seed: int
    inertia: float
    inertia_history: tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return int(self.centers.shape[1])


@dataclass(frozen=True)
class ProjectionBasis:
    """Top principal directions of a fitted dataset.

    ``rows[i]`` is the i-th eigenvector (unit norm, sign fixed so the
    largest-magnitude component is positive); ``eigenvalues`` are sorted
    non-increasing. ``mean`` is subtracted before projection, making the
    basis self-contained.
    """

    rows: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray

    @property
    def d(self) -> int:
        return int(self.rows.shape[0])

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])


def _as_points(points, *, name: str = "points") -> np.ndarray:
    """Coerce a point collection to a (n, dim) float64 array."""
    if isinstance(points, np.ndarray) and points.ndim == 2:
        return np.ascontiguousarray(points, dtype=np.float64)
    rows = [np.asarray(p, dtype=np.float64).ravel() for p in points]
    if not rows:
        return np.empty((0, 0), dtype=np.float64)
    dim = rows[0].shape[0]
    for r in rows[1:]:
        if r.shape[0] != dim:
            raise DimensionMismatch(
                f"{name} mix dimensions {dim} and {r.shape[0]}"
            )
    return np.stack(rows)


def _check_finite(arr: np.ndarray, name: str) -> None:
    if not np.isfinite(arr).all():
        raise DataError(f"{name} contain non-finite values")


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (n, k), chunked over rows."""
    n = points.shape[0]
    c2 = np.einsum("ij,ij->i", centers, centers)
    out = np.empty((n, centers.shape[0]), dtype=np.float64)
    for start in range(0, n, _DIST_CHUNK):
        block = points[start : start + _DIST_CHUNK]
        x2 = np.einsum("ij,ij->i", block, block)
        out[start : start + _DIST_CHUNK] = (
            x2[:, None] + c2[None, :] - 2.0 * (block @ centers.T)
        )
    return out


def nearest_centers(
    points: np.ndarray, centers: np.ndarray, *, use_dims: int | None = None
) -> np.ndarray:
    """Index of the nearest center for every point, ties to the lowest index.

    ``use_dims`` restricts the distance computation to the leading
    components of both operands (hyper-pooling quantizes on the
    high-eigenvalue components only).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    ctr = np.asarray(centers, dtype=np.float64)
    if pts.shape[1] != ctr.shape[1]:
        raise DimensionMismatch(
            f"points have dimension {pts.shape[1]}, centers {ctr.shape[1]}"
        )
    if use_dims is not None:
        pts = pts[:, :use_dims]
        ctr = ctr[:, :use_dims]
    return np.argmin(_sq_dists(pts, ctr), axis=1)


def _kmeans_pp_init(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """k-means++ seeding: squared-distance-weighted center draws."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    closest = np.einsum("ij,ij->i", points - centers[0], points - centers[0])
    for i in range(1, k):
        total = float(closest.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all points coincide with chosen centers; fall back to uniform
            idx = int(rng.integers(n))
        centers[i] = points[idx]
        diff = points - centers[i]
        closest = np.minimum(closest, np.einsum("ij,ij->i", diff, diff))
    return centers


def _fill_empty_clusters(
    assign: np.ndarray, dists: np.ndarray, k: int
) -> np.ndarray:
    """Move the point farthest from its center into each empty cluster."""
    counts = np.bincount(assign, minlength=k)
    if not np.any(counts == 0):
        return assign
    own = dists[np.arange(assign.shape[0]), assign].copy()
    guard = 0
    while np.any(counts == 0) and guard < 2 * k:
        j = int(np.flatnonzero(counts == 0)[0])
        p = int(np.argmax(own))
        old = int(assign[p])
        assign[p] = j
        counts[old] -= 1
        counts[j] += 1
        own[p] = -np.inf
        guard += 1
    return assign


def kmeans_fit(
    points,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> Codebook:
    """Lloyd iterations from k-means++ seeding, deterministic under ``seed``.

    Stops when the relative inertia decrease falls below ``tol`` or after
    ``max_iter`` iterations. Empty clusters are refilled with the point
    currently farthest from its assigned center so exactly ``k`` centers
    always come back.

    Args:
        points: (n, dim) array or sequence of equal-length vectors.
        k: number of centers, 1 <= k <= n.
        seed: initialization seed.
        max_iter: iteration cap.
        tol: relative inertia-decrease threshold, >= 0.

    Returns:
        A :class:`Codebook` with k centers.

    Raises:
        EmptyInput: no points were given.
        KTooLarge: k exceeds the number of points.
        DimensionMismatch: points have inconsistent dimensions.
    """
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise EmptyInput("kmeans_fit requires at least one point")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > pts.shape[0]:
        raise KTooLarge(f"k={k} exceeds the {pts.shape[0]} available points")
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    _check_finite(pts, "points")

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(pts, k, rng)

    history: list[float] = []
    prev = np.inf
    for _ in range(max_iter):
        dists = _sq_dists(pts, centers)
        assign = np.argmin(dists, axis=1)
        assign = _fill_empty_clusters(assign, dists, k)
        centers = np.stack([pts[assign == j].mean(axis=0) for j in range(k)])
        inertia = float(np.sum((pts - centers[assign]) ** 2))
        history.append(inertia)
        if np.isfinite(prev) and prev - inertia <= tol * prev:
            break
        prev = inertia

    return Codebook(
        centers=centers,
        k=k,
        seed=int(seed),
        inertia=history[-1],
        inertia_history=tuple(history),
    )


def quantize(point, codebook: Codebook) -> int:
    """Index of the codebook center nearest to ``point``.

    Ties break toward the lowest index.
    """
    vec = np.asarray(point, dtype=np.float64).ravel()
    if vec.shape[0] != codebook.dim:
        raise DimensionMismatch(
            f"point has dimension {vec.shape[0]}, codebook {codebook.dim}"
        )
    return int(nearest_centers(vec[None, :], codebook.centers)[0])


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude component is positive."""
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(vecs.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def pca_fit(rows, d: int, method: str = "auto") -> ProjectionBasis:
    """Fit the top-``d`` principal directions of ``rows``.

    The column-wise mean is subtracted and recorded on the basis. Inputs
    of width at most 4096 use a covariance eigendecomposition, wider
    inputs a thin SVD of the centered matrix; ``method`` ("eig"/"svd")
    forces one path. Both paths agree within 1e-5 on well-conditioned
    data. Eigenvector signs follow the largest-magnitude-component-positive
    rule so fits are reproducible.

    Args:
        rows: (n, dim) array or sequence of equal-length vectors, n >= 2.
        d: directions to keep, 1 <= d <= min(n, dim).
        method: "auto", "eig" or "svd".

    Returns:
        A :class:`ProjectionBasis` with d orthonormal rows.

    Raises:
        InsufficientRows: fewer than two rows.
        DTooLarge: d exceeds min(n, dim).
    """
    mat = _as_points(rows, name="rows")
    n, dim = mat.shape
    if n < 2:
        raise InsufficientRows(f"pca_fit requires >= 2 rows, got {n}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if d > min(n, dim):
        raise DTooLarge(f"d={d} exceeds min(rows={n}, dim={dim})")
    _check_finite(mat, "rows")

    mean = mat.mean(axis=0)
    centered = mat - mean
    if method == "auto":
        method = "eig" if dim <= _EIG_MAX_DIM else "svd"
    if method == "eig":
        cov = centered.T @ centered / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(-evals, kind="stable")[:d]
        eigenvalues = evals[order]
        vecs = evecs[:, order].T
    elif method == "svd":
        _, sing, vt = np.linalg.svd(centered, full_matrices=False)
        eigenvalues = (sing[:d] ** 2) / (n - 1)
        vecs = vt[:d]
    else:
        raise ValueError(f"unknown PCA method {method!r}")

    return ProjectionBasis(
        rows=_fix_signs(np.ascontiguousarray(vecs)),
        mean=mean,
        eigenvalues=np.ascontiguousarray(eigenvalues, dtype=np.float64),
    )


def pca_project(basis: ProjectionBasis, v: np.ndarray) -> np.ndarray:
    """Project ``v`` (one vector or a stack of them) onto the basis.

    Returns ``rows @ (v - mean)``: a (d,) vector for 1-D input, an (n, d)
    matrix for 2-D input.
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape[-1] != basis.dim:
        raise DimensionMismatch(
            f"vector has dimension {arr.shape[-1]}, basis expects {basis.dim}"
        )
    return (arr - basis.mean) @ basis.rows.T


def pca_reconstruct(basis: ProjectionBasis, y: np.ndarray) -> np.ndarray:
    """Map projected coordinates back to the input space."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.shape[-1] != basis.d:
        raise DimensionMismatch(
            f"coordinates have dimension {arr.shape[-1]}, basis keeps {basis.d}"
        )
    return arr @ basis.rows + basis.mean


def basis_alignment_score(a: ProjectionBasis, b: ProjectionBasis) -> float:
    """Sum of element-wise products of corresponding basis rows.

    Symmetric in (a, b) and bounded by [-d, d] for orthonormal rows; equal
    bases score exactly d. Sensitive to eigenvector sign and order, which
    is what makes it a stability probe for the compaction bases.
    """
    if a.d != b.d or a.dim != b.dim:
        raise DimensionMismatch(
            f"bases have shapes {a.rows.shape} and {b.rows.shape}"
        )
    return float(np.sum(a.rows * b.rows))
