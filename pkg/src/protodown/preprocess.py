"""Filtering, log2 transform, normalization, imputation, and Venn sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

from .errors import ConfigError, DataError, StateError
from .model import (
    ExpressionMatrix,
    GroupDesign,
    ProteinTable,
    valid_values_per_group,
)

NORMALIZATIONS = ("none", "mean", "median", "trimmed_mean", "vsn_glog")
IMPUTATIONS = ("none", "normal_downshift", "knn")
VALID_MODES = ("each_group", "at_least_one_group")


@dataclass
class PreprocessParams:
    min_valid: int = 2
    valid_mode: str = "each_group"
    min_unique_peptides: int = 0
    drop_flagged: frozenset = frozenset({"reverse", "contaminant", "only_by_site"})
    normalization: str = "none"
    trim_fraction: float = 0.2
    imputation: str = "none"
    downshift_shift: float = 1.8
    downshift_width: float = 0.3
    knn_k: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.imputation not in IMPUTATIONS:
            raise ConfigError(f"unknown imputation {self.imputation!r}")
        if self.valid_mode not in VALID_MODES:
            raise ConfigError(f"unknown valid mode {self.valid_mode!r}")
        if not (0 <= self.trim_fraction < 0.5):
            raise ConfigError("trim_fraction must be in [0, 0.5)")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.min_valid < 0 or self.min_unique_peptides < 0:
            raise ConfigError("filter thresholds must be >= 0")
        self.drop_flagged = frozenset(self.drop_flagged)


def filter_rows(
    table: ProteinTable,
    matrix: ExpressionMatrix,
    design: GroupDesign,
    params: PreprocessParams,
):
    """Drop flagged rows, rows with too few unique peptides, and rows failing
    the valid-values-per-group rule.

    Returns (table, matrix, mask, warnings); the mask records pre-imputation
    observedness of the surviving rows.
    """
    if table.row_ids != matrix.row_ids:
        raise StateError("table and matrix must be aligned before filtering")
    counts = valid_values_per_group(matrix, design)
    warnings = []
    keep = []
    warned_missing_counts = False
    for i, rec in enumerate(table.records):
        if rec.flags & params.drop_flagged:
            continue
        if params.min_unique_peptides > 0:
            if rec.unique_peptide_count is None:
                if not warned_missing_counts:
                    warnings.append(
                        "unique peptide counts absent for some rows; those rows pass the peptide filter"
                    )
                    warned_missing_counts = True
            elif rec.unique_peptide_count < params.min_unique_peptides:
                continue
        ok = counts[i, :] >= params.min_valid
        if params.valid_mode == "each_group":
            if not ok.all():
                continue
        else:
            if not ok.any():
                continue
        keep.append(i)
    table2 = table.take(keep)
    matrix2 = matrix.take_rows(keep)
    mask = matrix2.observed_mask()
    mask.setflags(write=False)
    return table2, matrix2, mask, warnings


def log2_transform(matrix: ExpressionMatrix) -> ExpressionMatrix:
    """Elementwise log2; missing preserved; only valid on linear input."""
    if matrix.scale != "linear":
        raise StateError("matrix is already on log2 scale")
    with np.errstate(invalid="ignore"):
        return matrix.with_values(np.log2(matrix.values), scale="log2")


def _column_location(col: np.ndarray, method: str, trim_fraction: float) -> float:
    vals = col[~np.isnan(col)]
    if vals.size == 0:
        raise DataError("column has no observed values")
    if method == "mean":
        return float(vals.mean())
    if method == "median":
        return float(np.median(vals))
    if method == "trimmed_mean":
        n = vals.size
        k = int(np.floor(trim_fraction * n))
        if k == 0:
            return float(vals.mean())
        v = np.sort(vals)
        if 2 * k >= n:
            raise DataError("trim fraction removes every value")
        return float(v[k : n - k].mean())
    raise ConfigError(f"unknown location method {method!r}")


def column_locations(matrix: ExpressionMatrix, method: str, trim_fraction: float = 0.2):
    locs = []
    for j, name in enumerate(matrix.col_ids):
        try:
            locs.append(_column_location(matrix.values[:, j], method, trim_fraction))
        except DataError as exc:
            raise DataError(f"column {name!r}: {exc}") from exc
    return np.asarray(locs)


def glog2(y):
    """Generalized log2: log2(y + sqrt(y^2 + 1)). Strictly increasing,
    asymptotically log2(2y)."""
    y = np.asarray(y, dtype=float)
    return np.log2(y + np.sqrt(y * y + 1.0))


def _mad(vals: np.ndarray) -> float:
    med = np.median(vals)
    return float(np.median(np.abs(vals - med)))


def normalize(
    matrix: ExpressionMatrix,
    method: str,
    trim_fraction: float = 0.2,
    linear_matrix: ExpressionMatrix | None = None,
) -> ExpressionMatrix:
    """Column normalization.

    mean/median/trimmed_mean: shift each column so its location equals the
    grand mean of column locations (log2 input required).
    vsn_glog: per-column spread calibration against the first column on the
    linear scale, then glog2; output is log2-scale.
    """
    if method == "none":
        return matrix
    if method in ("mean", "median", "trimmed_mean"):
        if matrix.scale != "log2":
            raise StateError(f"{method} normalization requires log2 input")
        locs = column_locations(matrix, method, trim_fraction)
        target = locs.mean()
        return matrix.with_values(matrix.values - locs[None, :] + target)
    if method == "vsn_glog":
        lin = linear_matrix
        if lin is None:
            if matrix.scale != "linear":
                raise StateError("vsn_glog needs the linear-scale matrix")
            lin = matrix
        vals = lin.values
        spreads = []
        for j, name in enumerate(lin.col_ids):
            col = vals[:, j]
            col = col[~np.isnan(col)]
            if col.size == 0:
                raise DataError(f"column {name!r} has no observed values")
            spreads.append(_mad(col))
        ref = spreads[0]
        if ref == 0:
            raise DataError(f"reference column {lin.col_ids[0]!r} has zero spread")
        out = np.full_like(vals, np.nan)
        for j, s in enumerate(spreads):
            b = s / ref if s > 0 else 1.0
            col = vals[:, j]
            present = ~np.isnan(col)
            out[present, j] = glog2(col[present] / b)
        return ExpressionMatrix(lin.row_ids, lin.col_ids, out, scale="log2")
    raise ConfigError(f"unknown normalization {method!r}")


def impute_normal_downshift(
    matrix: ExpressionMatrix,
    mask: np.ndarray,
    shift: float = 1.8,
    width: float = 0.3,
    seed: int = 0,
) -> ExpressionMatrix:
    """Fill missing cells with draws from a downshifted per-column normal.

    Each cell draws from its own stream seeded by (seed, column, row), so
    the result is deterministic regardless of evaluation order.
    """
    if matrix.scale != "log2":
        raise StateError("downshift imputation requires log2 input")
    vals = matrix.values.copy()
    n_rows, n_cols = vals.shape
    for j in range(n_cols):
        col = vals[:, j]
        observed = ~np.isnan(col)
        if not observed.any():
            raise DataError(f"column {matrix.col_ids[j]!r} is entirely missing")
        mu = float(col[observed].mean())
        sigma = float(col[observed].std(ddof=1)) if observed.sum() >= 2 else 0.0
        loc = mu - shift * sigma
        scale = width * sigma
        for i in np.flatnonzero(~observed):
            rng = np.random.default_rng([seed, j, int(i)])
            vals[i, j] = loc + scale * rng.standard_normal() if scale > 0 else loc
    return matrix.with_values(vals)


def impute_knn(matrix: ExpressionMatrix, k: int = 10):
    """K-nearest-neighbor imputation over rows.

    Neighbors of an incomplete row are rows observed at all of its missing
    columns; distance is overlap-normalized Euclidean; values averaged with
    1/(d + eps) weights. Rows without eligible neighbors fall back to the
    column mean.
    """
    if matrix.scale != "log2":
        raise StateError("knn imputation requires log2 input")
    if k < 1:
        raise ConfigError("k must be >= 1")
    eps = 1e-12
    vals = matrix.values.copy()
    src = matrix.values
    observed = ~np.isnan(src)
    n_rows, n_cols = src.shape
    col_means = np.array(
        [src[observed[:, j], j].mean() if observed[:, j].any() else np.nan
         for j in range(n_cols)]
    )
    warnings = []
    for r in range(n_rows):
        miss = ~observed[r]
        if not miss.any():
            continue
        # candidates: rows observed at every missing column of r
        candidate = observed[:, miss].all(axis=1)
        candidate[r] = False
        distances = []
        for c in np.flatnonzero(candidate):
            both = observed[r] & observed[c]
            overlap = int(both.sum())
            if overlap < 1:
                continue
            # scalar accumulation in column order keeps the arithmetic canonical
            ssq = 0.0
            for j in np.flatnonzero(both):
                diff = float(src[r, j]) - float(src[c, j])
                ssq += diff * diff
            d = math.sqrt(ssq) / math.sqrt(overlap)
            distances.append((d, int(c)))
        if not distances:
            warnings.append(
                f"row {matrix.row_ids[r]!r}: no eligible neighbors, column-mean fallback"
            )
            for j in np.flatnonzero(miss):
                if np.isnan(col_means[j]):
                    raise DataError(
                        f"column {matrix.col_ids[j]!r} has no observed values"
                    )
                vals[r, j] = col_means[j]
            continue
        distances.sort(key=lambda t: (t[0], t[1]))
        chosen = distances[:k]
        weights = [(1.0 / (d + eps), c) for d, c in chosen]
        # scalar accumulation in neighbor order keeps the arithmetic canonical
        for j in np.flatnonzero(miss):
            num = 0.0
            den = 0.0
            for w, c in weights:
                num += w * float(src[c, j])
                den += w
            vals[r, j] = num / den
    return matrix.with_values(vals), warnings


def impute(matrix, mask, params: PreprocessParams):
    """Dispatch on params.imputation; returns (matrix, warnings)."""
    if params.imputation == "none":
        return matrix, []
    if params.imputation == "normal_downshift":
        out = impute_normal_downshift(
            matrix, mask, params.downshift_shift, params.downshift_width, params.rng_seed
        )
        return out, []
    if params.imputation == "knn":
        return impute_knn(matrix, params.knn_k)
    raise ConfigError(f"unknown imputation {params.imputation!r}")


def venn_sets(matrix: ExpressionMatrix, design: GroupDesign, min_valid: int = 1):
    """Per-group protein membership and Venn region counts (2 to 4 groups).

    A protein belongs to a group when its non-missing count in that group
    is at least min_valid, evaluated on the pre-imputation mask.
    """
    g = len(design)
    if not (2 <= g <= 4):
        raise ConfigError("venn supports 2 to 4 groups")
    counts = valid_values_per_group(matrix, design)
    names = design.names()
    sets = {
        name: {matrix.row_ids[i] for i in np.flatnonzero(counts[:, gi] >= min_valid)}
        for gi, name in enumerate(names)
    }
    regions = {}
    for bits in range(1, 2 ** g):
        inside = [names[i] for i in range(g) if bits & (1 << i)]
        outside = [names[i] for i in range(g) if not bits & (1 << i)]
        members = set.intersection(*(sets[n] for n in inside)) if inside else set()
        for n in outside:
            members -= sets[n]
        regions[tuple(inside)] = len(members)
    return sets, regions


@dataclass
class PreprocessResult:
    table: ProteinTable
    matrix: ExpressionMatrix          # pipeline head, log2 scale
    mask: np.ndarray                  # pre-imputation observedness of surviving rows
    pre_impute_matrix: ExpressionMatrix
    warnings: list = field(default_factory=list)


def run_preprocess(
    table: ProteinTable,
    matrix: ExpressionMatrix,
    design: GroupDesign,
    params: PreprocessParams,
) -> PreprocessResult:
    """Full preprocessing chain: filter, log2, normalize, impute."""
    table2, lin, mask, warnings = filter_rows(table, matrix, design, params)
    if params.normalization == "vsn_glog":
        normed = normalize(lin, "vsn_glog")
    else:
        logm = log2_transform(lin)
        normed = normalize(logm, params.normalization, params.trim_fraction)
    imputed, w2 = impute(normed, mask, params)
    warnings.extend(w2)
    return PreprocessResult(
        table=table2,
        matrix=imputed,
        mask=mask,
        pre_impute_matrix=normed,
        warnings=warnings,
    )
