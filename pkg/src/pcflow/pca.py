"""PCA of the empirical covariance with an isometric embedding.

The covariance is diagonalized with cyclic Jacobi rotations, which keep the
eigenvector matrix orthonormal to machine precision. The truncated map
embeds M latent coordinates into the D-dimensional scenario space; its
transpose is the exact pseudo-inverse, and because the component matrix is
semi-orthogonal the embedding is an isometry and contributes nothing to a
change-of-variables log-density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import ScenarioSet
from .errors import DataError, NumericError, UsageError

# eigenvalues in (-1e-12 * trace, 0) are clamped to zero; below that we fail
EIG_CLAMP_REL = 1e-12

# singular values below 1e-12 * sigma_1 do not count towards the rank
RANK_TOL_REL = 1e-12


def jacobi_eigh(matrix, tol_rel=1e-12, max_sweeps=100):
    """Diagonalize a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``tol_rel`` times the trace. Returns (eigenvalues, eigenvectors) with
    eigenvectors as columns, unsorted.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise UsageError("jacobi_eigh expects a square matrix")
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return np.diag(a).copy(), v
    norm_scale = max(abs(np.trace(a)), np.sum(np.abs(a)) / n, 1e-300)
    thresh = tol_rel * norm_scale

    off_diag = np.ones((n, n), dtype=bool)
    np.fill_diagonal(off_diag, False)
    for sweep in range(max_sweeps):
        # summing the off-diagonal entries directly avoids the cancellation
        # noise of trace-based formulas, which sits above tol_rel
        off = np.sqrt(np.sum(a[off_diag] ** 2))
        if off < thresh:
            break
        # annihilating tiny pivots early is wasted work; once the matrix is
        # nearly diagonal only pivots above the residual target matter
        skip = 0.2 * off / (n * n) if sweep < 3 else thresh / n
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-36 * abs(diff):
                    t = apq / diff
                else:
                    phi = diff / (2.0 * apq)
                    t = 1.0 / (abs(phi) + np.sqrt(phi * phi + 1.0))
                    if phi < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                row_p = c * a[p, :] - s * a[q, :]
                row_q = s * a[p, :] + c * a[q, :]
                a[p, :] = row_p
                a[q, :] = row_q
                col_p = c * a[:, p] - s * a[:, q]
                col_q = s * a[:, p] + c * a[:, q]
                a[:, p] = col_p
                a[:, q] = col_q
                vec_p = c * v[:, p] - s * v[:, q]
                v[:, q] = s * v[:, p] + c * v[:, q]
                v[:, p] = vec_p
    else:
        raise NumericError("Jacobi eigendecomposition did not converge")
    return np.diag(a).copy(), v


@dataclass(frozen=True)
class PcaDecomposition:
    """Full eigendecomposition of the empirical covariance."""

    mean: np.ndarray  # (D,)
    singular_values: np.ndarray  # (D,), non-increasing, >= 0
    components: np.ndarray  # (D, D), columns = principal directions

    @property
    def dim(self):
        return len(self.mean)

    @property
    def rank(self):
        sv = self.singular_values
        if sv[0] <= 0.0:
            return 0
        return int(np.sum(sv > RANK_TOL_REL * sv[0]))


@dataclass(frozen=True)
class PcaMap:
    """Truncated decomposition: the isometric embedding and its inverse."""

    mean: np.ndarray  # (D,)
    components: np.ndarray  # (D, M)
    singular_values: np.ndarray  # full spectrum, (D,)
    n_components: int
    cev: float

    def __post_init__(self):
        d, m = self.components.shape
        if not 1 <= m <= d or m != self.n_components:
            raise UsageError("inconsistent PcaMap dimensions")

    @property
    def dim(self):
        return len(self.mean)


def _as_matrix(data):
    if isinstance(data, ScenarioSet):
        return data.data
    return np.asarray(data, dtype=float)


def fit(train) -> PcaDecomposition:
    """Eigendecomposition of the empirical covariance of the training rows."""
    x = _as_matrix(train)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("PCA needs at least 2 rows")
    if not np.all(np.isfinite(x)):
        raise DataError("PCA input contains non-finite values")
    n = x.shape[0]
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)

    values, vectors = jacobi_eigh(cov)
    trace = max(np.trace(cov), 0.0)
    floor = -EIG_CLAMP_REL * max(trace, 1.0)
    if np.any(values < floor):
        raise NumericError(f"negative covariance eigenvalue {values.min():g}")
    values = np.maximum(values, 0.0)

    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = vectors[:, order]

    # deterministic sign: largest-magnitude entry of each component positive
    for j in range(vectors.shape[1]):
        k = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[k, j] < 0:
            vectors[:, j] = -vectors[:, j]
    return PcaDecomposition(mean=mean, singular_values=values, components=vectors)


def truncate(decomposition: PcaDecomposition, cev_threshold=None, n_components=None) -> PcaMap:
    """Select the leading components by explicit count or CEV threshold.

    An explicit count wins if both are given. A threshold of 1.0 selects the
    numerical rank; zero singular values never count.
    """
    sv = decomposition.singular_values
    d = decomposition.dim
    rank = max(decomposition.rank, 1)

    if n_components is not None:
        m = int(n_components)
        if not 1 <= m <= d:
            raise UsageError(f"n_components must be in [1, {d}]")
    elif cev_threshold is not None:
        if not 0.0 < cev_threshold <= 1.0:
            raise UsageError("cev_threshold must lie in (0, 1]")
        if cev_threshold >= 1.0:
            m = rank
        else:
            total = sv.sum()
            if total <= 0.0:
                m = 1
            else:
                ratios = np.cumsum(sv) / total
                m = int(np.searchsorted(ratios, cev_threshold) + 1)
                m = min(m, rank)
    else:
        raise UsageError("give either cev_threshold or n_components")

    total = sv.sum()
    cev = float(sv[:m].sum() / total) if total > 0 else 1.0
    return PcaMap(
        mean=decomposition.mean,
        components=decomposition.components[:, :m].copy(),
        singular_values=sv,
        n_components=m,
        cev=cev,
    )


def project(pca_map: PcaMap, x):
    """Map full-space points to latent coordinates: V_P^T (x - mean)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != pca_map.dim:
        raise UsageError(f"expected dimension {pca_map.dim}, got {x.shape[-1]}")
    return (x - pca_map.mean) @ pca_map.components


def embed(pca_map: PcaMap, latent):
    """Map latent coordinates to the full space: V_P latent + mean."""
    latent = np.asarray(latent, dtype=float)
    if latent.shape[-1] != pca_map.n_components:
        raise UsageError(f"expected dimension {pca_map.n_components}, got {latent.shape[-1]}")
    return latent @ pca_map.components.T + pca_map.mean


def cev_table(decomposition: PcaDecomposition, thresholds=(0.99, 0.999, 0.9999, 1.0)):
    """Component counts needed to reach each CEV threshold."""
    return {t: truncate(decomposition, cev_threshold=t).n_components for t in thresholds}
