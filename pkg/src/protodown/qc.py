"""Plot-ready quality-control statistics.

Every payload contains only finite numbers; missing cells never leak into
plot series.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import DataError, StateError
from .model import ExpressionMatrix


@dataclass
class PlotData:
    kind: str
    series: dict
    meta: dict = field(default_factory=dict)


def _observed(col: np.ndarray) -> np.ndarray:
    return col[~np.isnan(col)]


def boxplot_stats(matrix: ExpressionMatrix):
    """Per-column five-number summary with 1.5*IQR whiskers and outliers.

    Quartiles use linear interpolation of order statistics (type 7).
    """
    out = []
    for j, name in enumerate(matrix.col_ids):
        vals = _observed(matrix.values[:, j])
        if vals.size == 0:
            raise DataError(f"column {name!r} has no observed values")
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        iqr = q3 - q1
        lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = vals[(vals >= lo_fence) & (vals <= hi_fence)]
        outliers = vals[(vals < lo_fence) | (vals > hi_fence)]
        out.append(
            {
                "sample": name,
                "min": float(inside.min()),
                "q1": float(q1),
                "median": float(med),
                "q3": float(q3),
                "max": float(inside.max()),
                "outliers": sorted(float(v) for v in outliers),
            }
        )
    return out


def histogram(values, bins="auto"):
    """Bin edges and counts; Freedman-Diaconis width with a 10-bin fallback
    when the IQR is zero. Counts sum to the observed count."""
    vals = np.asarray(values, dtype=float)
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise DataError("no observed values to bin")
    if bins == "auto":
        q1, q3 = np.percentile(vals, [25, 75])
        iqr = q3 - q1
        span = vals.max() - vals.min()
        if iqr == 0 or span == 0:
            n_bins = 10 if span > 0 else 1
        else:
            width = 2 * iqr / (vals.size ** (1 / 3))
            n_bins = max(1, int(np.ceil(span / width)))
    else:
        n_bins = int(bins)
    counts, edges = np.histogram(vals, bins=n_bins)
    return edges.tolist(), counts.tolist()


def qq_points(column):
    """Normal Q-Q pairs: standardized order statistics vs standard-normal
    quantiles at p_i = (i - 0.5)/n."""
    vals = np.asarray(column, dtype=float)
    vals = vals[~np.isnan(vals)]
    n = vals.size
    if n < 3:
        raise DataError("qq plot needs at least 3 observed values")
    sd = vals.std(ddof=1)
    if sd == 0:
        raise DataError("qq plot undefined for zero variance")
    sample = np.sort((vals - vals.mean()) / sd)
    p = (np.arange(1, n + 1) - 0.5) / n
    theoretical = sps.norm.ppf(p)
    return theoretical.tolist(), sample.tolist()


def imputation_overlay(matrix_post: ExpressionMatrix, mask: np.ndarray):
    """Histograms of observed vs imputed cells over shared bin edges."""
    vals = matrix_post.values
    observed_vals = vals[mask & ~np.isnan(vals)]
    imputed_vals = vals[~mask & ~np.isnan(vals)]
    edges, obs_counts = histogram(observed_vals)
    if imputed_vals.size:
        imp_counts, _ = np.histogram(imputed_vals, bins=np.asarray(edges))
        imp_counts = imp_counts.tolist()
    else:
        imp_counts = [0] * len(obs_counts)
    return {
        "bin_edges": edges,
        "observed": obs_counts,
        "imputed": imp_counts,
        "n_imputed": int(imputed_vals.size),
    }


def correlation_matrix(matrix: ExpressionMatrix):
    """Pairwise-complete Pearson correlation between sample columns."""
    vals = matrix.values
    n = len(matrix.col_ids)
    observed = ~np.isnan(vals)
    r = np.eye(n)
    for a in range(n):
        for b in range(a + 1, n):
            both = observed[:, a] & observed[:, b]
            if both.sum() < 3:
                raise DataError(
                    f"columns {matrix.col_ids[a]!r} and {matrix.col_ids[b]!r} "
                    f"share fewer than 3 observed rows"
                )
            x, y = vals[both, a], vals[both, b]
            sx, sy = x.std(), y.std()
            if sx == 0 or sy == 0:
                rv = 0.0
            else:
                rv = float(np.corrcoef(x, y)[0, 1])
            r[a, b] = r[b, a] = rv
    return r


def pca(matrix: ExpressionMatrix, drop_incomplete: bool = False, scale_features: bool = False):
    """PCA of samples: proteins are features, samples are observations.

    Returns (scores, explained) where scores is samples x components and
    explained sums to 1. Sign convention: the largest-magnitude loading of
    each component is positive.
    """
    vals = matrix.values
    if np.isnan(vals).any():
        if not drop_incomplete:
            raise StateError("matrix has missing values; impute or drop incomplete rows")
        keep = ~np.isnan(vals).any(axis=1)
        vals = vals[keep, :]
    if vals.shape[0] < 2 or vals.shape[1] < 2:
        raise DataError("pca needs at least 2 rows and 2 columns")
    # observations = samples: transpose to samples x proteins
    X = vals.T
    X = X - X.mean(axis=0, keepdims=True)
    if scale_features:
        sd = X.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        X = X / sd
    U, S, Vt = np.linalg.svd(X, full_matrices=False)
    # fix sign: largest-|loading| entry of each component positive
    for k in range(Vt.shape[0]):
        pivot = np.argmax(np.abs(Vt[k]))
        if Vt[k, pivot] < 0:
            Vt[k] *= -1
            U[:, k] *= -1
    scores = U * S
    var = S ** 2
    total = var.sum()
    explained = var / total if total > 0 else np.zeros_like(var)
    return scores, explained


def dispersion_stats(matrix: ExpressionMatrix):
    """Per-row mean and SD over observed log2 values; rows with <2 observed omitted.

    The reported cv is the SD of the log2 values (a conventional spread
    proxy on this scale)."""
    if matrix.scale != "log2":
        raise StateError("dispersion stats require log2 input")
    out = []
    for i, rid in enumerate(matrix.row_ids):
        vals = _observed(matrix.values[i, :])
        if vals.size < 2:
            continue
        mean = float(vals.mean())
        sd = float(vals.std(ddof=1))
        out.append({"protein_id": rid, "mean": mean, "sd": sd, "cv": sd})
    return out


def scatter_pairs(matrix: ExpressionMatrix, col_a: str, col_b: str):
    """Paired column extract for scatter plots (rows observed in both)."""
    ja, jb = matrix.col_indices([col_a, col_b])
    a, b = matrix.values[:, ja], matrix.values[:, jb]
    both = ~np.isnan(a) & ~np.isnan(b)
    return a[both].tolist(), b[both].tolist()
