"""Differential abundance testing.

Ordinary (Welch/pooled/paired) t-tests, empirical-Bayes moderated tests with
optional PSM-count variance correction, BH adjustment, exclusive-protein
classification, and plot/export payloads.
"""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats as sps

from .errors import ConfigError, DataError
from .model import ExpressionMatrix, GroupDesign, ProteinTable

D0_CAP = 1e6

METHODS = ("ordinary_t", "moderated_t", "moderated_t_psm")
STATUSES = ("up", "down", "not_significant", "exclusive_a", "exclusive_b", "untested")


@dataclass
class TestConfig:
    comparison: tuple  # (group_a, group_b)
    method: str = "moderated_t"
    paired: bool = False
    equal_variance: bool = False
    fc_threshold: float = 1.0
    p_threshold: float = 0.05
    use_adjusted: bool = True
    include_exclusives: bool = True
    min_valid: int = 2  # replicates needed in the present group for exclusivity

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown test method {self.method!r}")
        if self.fc_threshold < 0:
            raise ConfigError("fc_threshold must be >= 0")
        if not (0 < self.p_threshold <= 1):
            raise ConfigError("p_threshold must be in (0, 1]")


@dataclass
class EBayesFit:
    d0: float
    s0_sq: float
    prior_per_row: np.ndarray | None = None  # PSM mode only
    warnings: list = field(default_factory=list)


@dataclass
class DiffRow:
    protein_id: str
    gene_names: str = ""
    log2fc: float | None = None
    t_stat: float | None = None
    df: float | None = None
    p: float | None = None
    p_adj: float | None = None
    se: float | None = None
    posterior_var: float | None = None
    n_a: int = 0
    n_b: int = 0
    status: str = "untested"


def _group_values(matrix, design, comparison):
    cols_a, cols_b = design.comparison_columns(*comparison)
    ia = matrix.col_indices(cols_a)
    ib = matrix.col_indices(cols_b)
    return matrix.values[:, ia], matrix.values[:, ib]


def group_means_fc(matrix: ExpressionMatrix, design: GroupDesign, comparison):
    """Per-row observed means and log2fc = mean_a - mean_b."""
    if matrix.scale != "log2":
        raise DataError("fold changes require log2-scale input")
    A, B = _group_values(matrix, design, comparison)
    out = []
    for i in range(A.shape[0]):
        a = A[i][~np.isnan(A[i])]
        b = B[i][~np.isnan(B[i])]
        ma = float(a.mean()) if a.size else None
        mb = float(b.mean()) if b.size else None
        fc = ma - mb if (ma is not None and mb is not None) else None
        out.append((ma, mb, fc))
    return out


def _two_sided_p(t: float, df: float) -> float:
    return float(2.0 * sps.t.sf(abs(t), df))


def ordinary_t(matrix: ExpressionMatrix, design: GroupDesign, cfg: TestConfig):
    """Per-row (t, df, p, se); rows with too few observations stay untested (None)."""
    A, B = _group_values(matrix, design, cfg.comparison)
    n_rows = A.shape[0]
    out = []
    if cfg.paired and A.shape[1] != B.shape[1]:
        raise ConfigError("paired test requires equal group sizes")
    for i in range(n_rows):
        a, b = A[i], B[i]
        if cfg.paired:
            both = ~np.isnan(a) & ~np.isnan(b)
            d = a[both] - b[both]
            n = d.size
            if n < 2:
                out.append((None, None, None, None))
                continue
            sd = d.std(ddof=1)
            se = sd / math.sqrt(n)
            df = n - 1
            if se == 0:
                t = 0.0 if d.mean() == 0 else math.copysign(float("inf"), d.mean())
                p = 1.0 if t == 0 else 0.0
                out.append((t if math.isfinite(t) else None, float(df), p, float(se)))
                continue
            t = float(d.mean() / se)
            out.append((t, float(df), _two_sided_p(t, df), float(se)))
            continue
        av = a[~np.isnan(a)]
        bv = b[~np.isnan(b)]
        na, nb = av.size, bv.size
        if na < 2 or nb < 2:
            out.append((None, None, None, None))
            continue
        va = av.var(ddof=1)
        vb = bv.var(ddof=1)
        diff = av.mean() - bv.mean()
        if cfg.equal_variance:
            df = na + nb - 2
            sp2 = ((na - 1) * va + (nb - 1) * vb) / df
            se = math.sqrt(sp2 * (1 / na + 1 / nb))
        else:
            se2 = va / na + vb / nb
            se = math.sqrt(se2)
            if se2 == 0:
                df = na + nb - 2
            else:
                df = se2 ** 2 / (
                    (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)
                )
        if se == 0:
            t = 0.0 if diff == 0 else math.copysign(float("inf"), diff)
            p = 1.0 if t == 0 else 0.0
            out.append((t if math.isfinite(t) else None, float(df), p, float(se)))
            continue
        t = float(diff / se)
        out.append((t, float(df), _two_sided_p(t, df), float(se)))
    return out


def pooled_variances(matrix: ExpressionMatrix, design: GroupDesign, comparison):
    """Per-row pooled within-group variance and residual df (n_a + n_b - 2)."""
    A, B = _group_values(matrix, design, comparison)
    s2 = np.full(A.shape[0], np.nan)
    df = np.full(A.shape[0], np.nan)
    for i in range(A.shape[0]):
        av = A[i][~np.isnan(A[i])]
        bv = B[i][~np.isnan(B[i])]
        na, nb = av.size, bv.size
        d = na + nb - 2
        if na < 1 or nb < 1 or d < 1:
            continue
        ssq = 0.0
        if na > 1:
            ssq += (na - 1) * av.var(ddof=1)
        if nb > 1:
            ssq += (nb - 1) * bv.var(ddof=1)
        s2[i] = ssq / d
        df[i] = d
    return s2, df


def _inverse_trigamma(x: float) -> float:
    """Solve trigamma(y) = x for y > 0 by Newton iteration."""
    if x <= 0:
        raise ValueError("trigamma inverse needs x > 0")
    # trigamma(y) ~ 1/y + 1/(2y^2): start from the 1/y approximation
    y = 0.5 + 1.0 / x
    for _ in range(50):
        tri = float(special.polygamma(1, y))
        tetra = float(special.polygamma(2, y))
        step = (tri - x) / tetra
        y_new = y - step
        if y_new <= 0:
            y_new = y / 2
        if abs(y_new - y) < 1e-10 * (1 + abs(y)):
            y = y_new
            break
        y = y_new
    return y


def _moment_match_d0(e_centered_var: float, dfs: np.ndarray) -> float:
    """Prior df from the excess variance of bias-corrected log variances."""
    mean_tri = float(np.mean(special.polygamma(1, dfs / 2.0)))
    rhs = max(e_centered_var - mean_tri, 0.0)
    if rhs <= 1e-12:
        return D0_CAP
    return 2.0 * _inverse_trigamma(rhs)


def fit_ebayes(variances, dfs) -> EBayesFit:
    """Estimate prior df d0 and prior variance s0^2 by moment matching on
    log variances (limma-style)."""
    s2 = np.asarray(variances, dtype=float)
    d = np.asarray(dfs, dtype=float)
    ok = np.isfinite(s2) & (s2 > 0) & np.isfinite(d) & (d > 0)
    warnings = []
    if ok.sum() < 10:
        raise DataError("need at least 10 rows with positive finite variance")
    s2, d = s2[ok], d[ok]
    e = np.log(s2) - special.digamma(d / 2.0) + np.log(d / 2.0)
    ev = float(np.var(e, ddof=1))
    d0 = _moment_match_d0(ev, d)
    s0_sq = float(np.exp(np.mean(e) + special.digamma(d0 / 2.0) - np.log(d0 / 2.0)))
    if not (s0_sq > 0):
        raise DataError("degenerate variances: prior variance is not positive")
    return EBayesFit(d0=d0, s0_sq=s0_sq, warnings=warnings)


def moderated_t(matrix, design, cfg: TestConfig, fit: EBayesFit):
    """Per-row (t_mod, df_mod, p, posterior_var) using the shrunk variance."""
    A, B = _group_values(matrix, design, cfg.comparison)
    s2, dg = pooled_variances(matrix, design, cfg.comparison)
    out = []
    for i in range(A.shape[0]):
        av = A[i][~np.isnan(A[i])]
        bv = B[i][~np.isnan(B[i])]
        na, nb = av.size, bv.size
        if not np.isfinite(dg[i]) or dg[i] < 1 or na < 1 or nb < 1:
            out.append((None, None, None, None))
            continue
        prior = fit.s0_sq if fit.prior_per_row is None else float(fit.prior_per_row[i])
        post_var = (fit.d0 * prior + dg[i] * s2[i]) / (fit.d0 + dg[i])
        df_mod = min(fit.d0 + dg[i], D0_CAP)
        fc = float(av.mean() - bv.mean())
        se = math.sqrt(post_var * (1 / na + 1 / nb))
        if se == 0:
            t = 0.0 if fc == 0 else math.copysign(float("inf"), fc)
            p = 1.0 if t == 0 else 0.0
            out.append((t if math.isfinite(t) else None, float(df_mod), p, float(post_var)))
            continue
        t = fc / se
        out.append((float(t), float(df_mod), _two_sided_p(t, df_mod), float(post_var)))
    return out


def _tricube_loess(x: np.ndarray, z: np.ndarray, span: float = 0.75):
    """Local linear regression with tricube weights, fitted at each distinct x.

    Returns (distinct_x, fitted_at_distinct) for linear interpolation.
    """
    order = np.argsort(x)
    xs, zs = x[order], z[order]
    distinct = np.unique(xs)
    n = xs.size
    window = max(2, int(math.ceil(span * n)))
    fitted = np.empty(distinct.size)
    for t, x0 in enumerate(distinct):
        dist = np.abs(xs - x0)
        idx = np.argsort(dist, kind="stable")[:window]
        dmax = dist[idx].max()
        if dmax == 0:
            fitted[t] = zs[idx].mean()
            continue
        w = (1 - (dist[idx] / dmax) ** 3) ** 3
        w = np.clip(w, 0, None)
        xw, zw = xs[idx], zs[idx]
        sw = w.sum()
        xbar = np.sum(w * xw) / sw
        zbar = np.sum(w * zw) / sw
        sxx = np.sum(w * (xw - xbar) ** 2)
        if sxx <= 1e-12:
            fitted[t] = zbar
        else:
            slope = np.sum(w * (xw - xbar) * (zw - zbar)) / sxx
            fitted[t] = zbar + slope * (x0 - xbar)
    return distinct, fitted


def fit_psm_prior(variances, dfs, min_psm_counts) -> EBayesFit:
    """Count-dependent variance prior: local regression of log variance on
    log2(min PSM count + 1), DEqMS-style.

    Rows lacking counts use the global prior. Falls back to the global fit
    when fewer than 5 distinct covariate values exist.
    """
    s2 = np.asarray(variances, dtype=float)
    d = np.asarray(dfs, dtype=float)
    counts = np.array(
        [np.nan if c is None else float(c) for c in min_psm_counts], dtype=float
    )
    global_fit = fit_ebayes(s2, d)
    tested = np.isfinite(s2) & (s2 > 0) & np.isfinite(d) & (d > 0)
    has_count = tested & np.isfinite(counts)
    if tested.sum() == 0:
        raise DataError("no testable rows")
    frac = has_count.sum() / tested.sum()
    if frac < 0.8:
        raise DataError(
            f"PSM counts present for only {frac:.0%} of tested rows; "
            "use peptide counts instead or switch to the global prior"
        )
    x = np.log2(counts[has_count] + 1.0)
    z = np.log(s2[has_count])
    warnings = []
    if np.unique(x).size < 5:
        warnings.append("fewer than 5 distinct count values: global prior used")
        prior = np.full(s2.shape, global_fit.s0_sq)
        return EBayesFit(global_fit.d0, global_fit.s0_sq, prior, warnings)

    distinct, fitted = _tricube_loess(x, z, span=0.75)
    d_mean = float(np.mean(d[has_count]))
    correction = -float(special.digamma(d_mean / 2.0)) + math.log(d_mean / 2.0)

    def prior_at(c):
        xv = math.log2(c + 1.0)
        f = float(np.interp(xv, distinct, fitted))
        return math.exp(f + correction)

    prior = np.full(s2.shape, global_fit.s0_sq)
    for i in np.flatnonzero(has_count):
        prior[i] = prior_at(counts[i])

    # d0 from the residual spread around the fitted trend
    e = z - special.digamma(d[has_count] / 2.0) + np.log(d[has_count] / 2.0)
    resid = e - np.interp(x, distinct, fitted) - correction
    ev = float(np.var(resid, ddof=1))
    d0 = _moment_match_d0(ev, d[has_count])
    return EBayesFit(d0=d0, s0_sq=global_fit.s0_sq, prior_per_row=prior, warnings=warnings)


def bh_adjust(pvals):
    """Benjamini-Hochberg step-up; None entries pass through."""
    idx = [i for i, p in enumerate(pvals) if p is not None]
    ps = np.array([pvals[i] for i in idx], dtype=float)
    if ((ps < 0) | (ps > 1)).any():
        raise ValueError("p-values must lie in [0, 1]")
    out = [None] * len(pvals)
    n = ps.size
    if n == 0:
        return out
    order = np.argsort(ps, kind="stable")
    q = ps[order] * n / np.arange(1, n + 1)
    q = np.minimum.accumulate(q[::-1])[::-1]
    q = np.clip(q, 0, 1)
    for rank, oi in enumerate(order):
        out[idx[oi]] = float(q[rank])
    return out


def run_tests(
    table: ProteinTable,
    matrix: ExpressionMatrix,
    mask: np.ndarray,
    design: GroupDesign,
    cfg: TestConfig,
):
    """Full test pipeline: statistics, BH adjustment, status classification."""
    fcs = group_means_fc(matrix, design, cfg.comparison)
    warnings = []
    if cfg.method == "ordinary_t":
        stats = ordinary_t(matrix, design, cfg)
        posterior = [None] * len(stats)
    else:
        s2, dg = pooled_variances(matrix, design, cfg.comparison)
        try:
            if cfg.method == "moderated_t_psm":
                cols_a, cols_b = design.comparison_columns(*cfg.comparison)
                used = set(cols_a) | set(cols_b)
                min_psms = []
                for i, rec in enumerate(table.records):
                    quantified = {
                        c for c in used
                        if not np.isnan(matrix.values[i, matrix.col_ids.index(c)])
                    }
                    c = rec.min_psm_count(quantified)
                    if c is None and rec.peptide_count is not None:
                        c = rec.peptide_count
                    min_psms.append(c)
                if any(
                    rec.psm_counts == {} and rec.peptide_count is not None
                    for rec in table.records
                ):
                    warnings.append("PSM counts absent for some rows; peptide counts substituted")
                fit = fit_psm_prior(s2, dg, min_psms)
            else:
                fit = fit_ebayes(s2, dg)
            warnings.extend(fit.warnings)
            mod = moderated_t(matrix, design, cfg, fit)
            stats = [(t, df, p, None) for (t, df, p, _) in mod]
            posterior = [pv for (_, _, _, pv) in mod]
        except DataError as exc:
            warnings.append(f"moderated fit failed ({exc}); ordinary t-test used")
            stats = ordinary_t(
                matrix, design, TestConfig(comparison=cfg.comparison, method="ordinary_t")
            )
            posterior = [None] * len(stats)

    rows = []
    A, B = _group_values(matrix, design, cfg.comparison)
    for i, rid in enumerate(matrix.row_ids):
        (ma, mb, fc) = fcs[i]
        t, df, p, se = stats[i]
        rec = table.get(rid)
        rows.append(
            DiffRow(
                protein_id=rid,
                gene_names=rec.gene_names,
                log2fc=fc,
                t_stat=t,
                df=df,
                p=p,
                se=se,
                posterior_var=posterior[i],
                n_a=int((~np.isnan(A[i])).sum()),
                n_b=int((~np.isnan(B[i])).sum()),
            )
        )
    adj = bh_adjust([r.p for r in rows])
    for r, q in zip(rows, adj):
        r.p_adj = q
    classify(rows, mask, matrix, design, cfg)
    return rows, warnings


def classify(rows, mask, matrix, design, cfg: TestConfig):
    """Assign one status per row: exclusives from the pre-imputation mask,
    then the significance rule, else untested/not_significant."""
    cols_a, cols_b = design.comparison_columns(*cfg.comparison)
    ia = matrix.col_indices(cols_a)
    ib = matrix.col_indices(cols_b)
    for i, row in enumerate(rows):
        obs_a = int(mask[i, ia].sum())
        obs_b = int(mask[i, ib].sum())
        if cfg.include_exclusives:
            if obs_a >= cfg.min_valid and obs_b == 0:
                row.status = "exclusive_a"
                row.p = row.p_adj = row.t_stat = row.df = None
                continue
            if obs_b >= cfg.min_valid and obs_a == 0:
                row.status = "exclusive_b"
                row.p = row.p_adj = row.t_stat = row.df = None
                continue
        if row.p is None or row.log2fc is None:
            row.status = "untested"
            continue
        p_used = row.p_adj if cfg.use_adjusted else row.p
        if p_used is not None and p_used <= cfg.p_threshold and abs(row.log2fc) >= cfg.fc_threshold:
            row.status = "up" if row.log2fc > 0 else "down"
        else:
            row.status = "not_significant"
    return rows


def volcano_data(rows, cfg: TestConfig):
    """Volcano payload: tested rows as points, exclusives listed separately."""
    points = []
    exclusives = []
    for r in rows:
        if r.status in ("exclusive_a", "exclusive_b"):
            exclusives.append(
                {"protein_id": r.protein_id, "group": "a" if r.status == "exclusive_a" else "b"}
            )
            continue
        if r.status == "untested" or r.p is None:
            continue
        p_used = r.p_adj if cfg.use_adjusted else r.p
        y = -math.log10(p_used) if p_used > 0 else 320.0
        points.append(
            {
                "protein_id": r.protein_id,
                "gene_names": r.gene_names,
                "x": r.log2fc,
                "y": y,
                "p": r.p,
                "p_adj": r.p_adj,
                "status": r.status,
            }
        )
    return {
        "points": points,
        "exclusives": exclusives,
        "fc_lines": [-cfg.fc_threshold, cfg.fc_threshold],
        "p_line": -math.log10(cfg.p_threshold),
        "use_adjusted": cfg.use_adjusted,
    }


# --- hierarchical clustering (average linkage, deterministic ties) ---------


def average_linkage(points: np.ndarray):
    """Agglomerative clustering with unweighted average linkage (UPGMA) and
    Euclidean distance.

    Ties are broken by the smallest (min original index of a, min original
    index of b) pair. Returns (merges, leaf_order): merges are
    (left_cluster_id, right_cluster_id, distance, size) with original points
    0..n-1 and new clusters numbered n, n+1, ...
    """
    n = points.shape[0]
    if n == 0:
        return [], []
    if n == 1:
        return [], [0]
    diff = points[:, None, :] - points[None, :, :]
    # average of pairwise distances, maintained by Lance-Williams updates
    D = np.sqrt((diff ** 2).sum(axis=2))
    np.fill_diagonal(D, np.inf)
    cluster_id = list(range(n))  # active slot -> cluster id
    min_orig = list(range(n))    # active slot -> smallest original index
    sizes = [1] * n
    leaves = {i: [i] for i in range(n)}
    active = list(range(n))      # slots still in play
    merges = []
    next_id = n
    while len(active) > 1:
        act = np.asarray(active)
        sub = D[np.ix_(act, act)]
        d = float(sub.min())
        # tie-break among minimal pairs by smallest original indices
        ti, tj = np.nonzero(sub == d)
        best = None
        for i_, j_ in zip(ti, tj):
            if i_ >= j_:
                continue
            sa_, sb_ = int(act[i_]), int(act[j_])
            lo, hi = sorted((min_orig[sa_], min_orig[sb_]))
            if best is None or (lo, hi) < best[0]:
                best = ((lo, hi), sa_, sb_)
        (_, sa, sb) = best
        if min_orig[sa] > min_orig[sb]:
            sa, sb = sb, sa
        a, b = cluster_id[sa], cluster_id[sb]
        merges.append((a, b, float(d), sizes[sa] + sizes[sb]))
        # merge sb into sa
        na, nb = sizes[sa], sizes[sb]
        for sc in active:
            if sc in (sa, sb):
                continue
            D[sa, sc] = D[sc, sa] = (na * D[sa, sc] + nb * D[sb, sc]) / (na + nb)
        leaves[next_id] = leaves[a] + leaves[b]
        sizes[sa] = na + nb
        cluster_id[sa] = next_id
        min_orig[sa] = min(min_orig[sa], min_orig[sb])
        active.remove(sb)
        next_id += 1
    leaf_order = leaves[next_id - 1]
    return merges, leaf_order


def heatmap_data(matrix: ExpressionMatrix, significant_ids):
    """Row-z-scored submatrix of significant proteins with row/column
    clustering payloads."""
    positions = [matrix.row_position(rid) for rid in significant_ids]
    if len(positions) < 2:
        return {"notice": "fewer than 2 significant proteins", "rows": [], "columns": [],
                "values": [], "row_order": [], "col_order": [],
                "row_merges": [], "col_merges": [], "warnings": []}
    sub = matrix.values[positions, :]
    if np.isnan(sub).any():
        raise DataError("heatmap requires complete values for significant rows")
    warnings = []
    z = np.empty_like(sub)
    for i in range(sub.shape[0]):
        sd = sub[i].std(ddof=1)
        if sd == 0:
            z[i] = 0.0
            warnings.append(f"row {significant_ids[i]!r} has zero variance; z set to 0")
        else:
            z[i] = (sub[i] - sub[i].mean()) / sd
    row_merges, row_order = average_linkage(z)
    col_merges, col_order = average_linkage(z.T)
    return {
        "rows": [significant_ids[i] for i in range(len(significant_ids))],
        "columns": list(matrix.col_ids),
        "values": z.tolist(),
        "row_order": row_order,
        "col_order": col_order,
        "row_merges": row_merges,
        "col_merges": col_merges,
        "warnings": warnings,
    }


# --- CSV export --------------------------------------------------------------

EXPORT_COLUMNS = (
    "protein_id",
    "gene_names",
    "log2fc",
    "t_stat",
    "df",
    "p",
    "p_adj",
    "n_a",
    "n_b",
    "posterior_var",
    "status",
)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_table(rows) -> str:
    """RFC-4180 CSV of the classified rows; floats at shortest round-trip
    precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(EXPORT_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(getattr(r, c)) for c in EXPORT_COLUMNS])
    return buf.getvalue()
