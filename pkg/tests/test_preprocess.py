import math

import numpy as np
import pytest

from protodown.errors import ConfigError, DataError, StateError
from protodown.model import (
    ExpressionMatrix,
    Group,
    GroupDesign,
    ProteinRecord,
    ProteinTable,
)
from protodown.preprocess import (
    PreprocessParams,
    column_locations,
    filter_rows,
    glog2,
    impute_knn,
    impute_normal_downshift,
    log2_transform,
    normalize,
    run_preprocess,
    venn_sets,
)


def log2_matrix(vals, cols=None, rows=None):
    vals = np.asarray(vals, dtype=float)
    rows = rows or [f"p{i}" for i in range(vals.shape[0])]
    cols = cols or [f"s{j}" for j in range(vals.shape[1])]
    return ExpressionMatrix(rows, cols, vals, scale="log2")


def random_log2(n_rows, n_cols, missing_frac, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(20, 2, size=(n_rows, n_cols))
    vals[rng.random((n_rows, n_cols)) < missing_frac] = np.nan
    # keep at least one observed value per row and column
    for i in range(n_rows):
        if np.isnan(vals[i]).all():
            vals[i, 0] = rng.normal(20, 2)
    for j in range(n_cols):
        if np.isnan(vals[:, j]).all():
            vals[0, j] = rng.normal(20, 2)
    return log2_matrix(vals)


def design_two(cols_a, cols_b):
    return GroupDesign([Group("A", "a", tuple(cols_a)), Group("B", "b", tuple(cols_b))])


class TestLog2:
    def test_exact_power(self):
        m = ExpressionMatrix(["p"], ["s"], [[8.0]])
        assert log2_transform(m).values[0, 0] == 3.0

    def test_identity_point(self):
        m = ExpressionMatrix(["p"], ["s"], [[1.0]])
        assert log2_transform(m).values[0, 0] == 0.0

    def test_missing_preserved(self):
        m = ExpressionMatrix(["p"], ["s", "t"], [[2.0, np.nan]])
        out = log2_transform(m)
        assert np.isnan(out.values[0, 1])
        assert out.scale == "log2"

    def test_double_transform_rejected(self):
        m = log2_transform(ExpressionMatrix(["p"], ["s"], [[2.0]]))
        with pytest.raises(StateError):
            log2_transform(m)


class TestFilterRows:
    def make(self, vals, recs=None):
        vals = np.asarray(vals, dtype=float)
        rows = [f"p{i}" for i in range(vals.shape[0])]
        cols = [f"a{j}" for j in range(3)] + [f"b{j}" for j in range(3)]
        m = ExpressionMatrix(rows, cols, vals, scale="log2")
        table = ProteinTable(recs or [ProteinRecord(r) for r in rows])
        design = design_two(cols[:3], cols[3:])
        return table, m, design

    def test_each_group_drops(self):
        row = [1.0, 2.0, np.nan, np.nan, np.nan, np.nan]  # valid (2, 0)
        table, m, design = self.make([row])
        params = PreprocessParams(min_valid=2, valid_mode="each_group")
        t2, m2, mask, _ = filter_rows(table, m, design, params)
        assert len(t2) == 0

    def test_at_least_one_group_keeps(self):
        row = [1.0, 2.0, np.nan, np.nan, np.nan, np.nan]
        table, m, design = self.make([row])
        params = PreprocessParams(min_valid=2, valid_mode="at_least_one_group")
        t2, m2, mask, _ = filter_rows(table, m, design, params)
        assert len(t2) == 1

    def test_flagged_rows_dropped(self):
        row = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        recs = [ProteinRecord("p0", flags=frozenset({"contaminant"}))]
        table, m, design = self.make([row], recs)
        params = PreprocessParams(min_valid=0)
        t2, _, _, _ = filter_rows(table, m, design, params)
        assert len(t2) == 0

    def test_unique_peptide_filter_with_absent_counts(self):
        row = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        recs = [ProteinRecord("p0")]  # no counts
        table, m, design = self.make([row], recs)
        params = PreprocessParams(min_valid=0, min_unique_peptides=2)
        t2, _, _, warnings = filter_rows(table, m, design, params)
        assert len(t2) == 1
        assert warnings

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        vals = rng.normal(20, 2, size=(500, 6))
        vals[rng.random((500, 6)) < 0.35] = np.nan
        table, m, design = self.make(vals)
        params = PreprocessParams(min_valid=2, valid_mode="each_group")
        t2, _, _, _ = filter_rows(table, m, design, params)
        survivors = set(t2.row_ids)
        for i in range(500):
            ok_a = np.sum(~np.isnan(vals[i, :3])) >= 2
            ok_b = np.sum(~np.isnan(vals[i, 3:])) >= 2
            assert ((f"p{i}" in survivors) == (ok_a and ok_b))

    def test_mask_matches_observedness(self):
        rng = np.random.default_rng(12)
        vals = rng.normal(20, 2, size=(50, 6))
        vals[rng.random((50, 6)) < 0.2] = np.nan
        table, m, design = self.make(vals)
        _, m2, mask, _ = filter_rows(table, m, design, PreprocessParams(min_valid=1))
        assert (mask == ~np.isnan(m2.values)).all()


class TestNormalize:
    def test_median_hand_example(self):
        m = log2_matrix(np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]))
        out = normalize(m, "median")
        assert np.allclose(out.values[:, 0], [2.0, 3.0, 4.0])
        assert np.allclose(out.values[:, 1], [1.0, 3.0, 5.0])

    def test_mean_identity_on_identical_columns(self):
        col = np.array([1.0, 5.0, 9.0])
        m = log2_matrix(np.stack([col, col], axis=1))
        out = normalize(m, "mean")
        assert np.allclose(out.values, m.values)

    def test_trim_zero_equals_mean(self):
        rng = np.random.default_rng(3)
        m = log2_matrix(rng.normal(20, 2, size=(40, 5)))
        a = normalize(m, "trimmed_mean", trim_fraction=0.0)
        b = normalize(m, "mean")
        assert np.array_equal(a.values, b.values)

    @pytest.mark.parametrize("method", ["mean", "median", "trimmed_mean"])
    def test_locations_equalized(self, method):
        rng = np.random.default_rng(4)
        vals = rng.normal(20, 2, size=(500, 6)) + rng.normal(0, 1, size=(1, 6))
        vals[rng.random((500, 6)) < 0.2] = np.nan
        m = log2_matrix(vals)
        out = normalize(m, method, trim_fraction=0.2)
        locs = column_locations(out, method, 0.2)
        assert np.ptp(locs) < 1e-9

    def test_grand_level_preserved(self):
        rng = np.random.default_rng(5)
        m = log2_matrix(rng.normal(20, 2, size=(100, 4)))
        out = normalize(m, "mean")
        assert math.isclose(
            np.nanmean(column_locations(m, "mean", 0)),
            np.nanmean(column_locations(out, "mean", 0)),
            rel_tol=1e-12,
        )

    def test_empty_column_errors(self):
        m = log2_matrix([[1.0, np.nan], [2.0, np.nan]])
        with pytest.raises(DataError, match="s1"):
            normalize(m, "median")

    def test_none_is_identity(self):
        m = log2_matrix([[1.0, 2.0]])
        assert normalize(m, "none") is m


class TestGlog:
    def test_strictly_increasing(self):
        y = np.linspace(-50, 50, 1001)
        g = glog2(y)
        assert (np.diff(g) > 0).all()

    def test_asymptotic_log2_2y(self):
        y = 1e6
        rel_err = abs(glog2(y) - np.log2(2 * y)) / abs(np.log2(2 * y))
        assert rel_err < 1e-6

    def test_vsn_glog_output_scale(self):
        rng = np.random.default_rng(6)
        vals = rng.lognormal(10, 1, size=(200, 3))
        m = ExpressionMatrix([f"p{i}" for i in range(200)], ["a", "b", "c"], vals)
        out = normalize(m, "vsn_glog")
        assert out.scale == "log2"
        assert not np.isnan(out.values).any()

    def test_vsn_glog_calibrates_spread(self):
        rng = np.random.default_rng(7)
        base = rng.lognormal(10, 1, size=500)
        vals = np.stack([base, base * 3.0], axis=1)  # column 2 scaled 3x
        m = ExpressionMatrix([f"p{i}" for i in range(500)], ["a", "b"], vals)
        out = normalize(m, "vsn_glog")
        # after calibration both columns carry identical transformed values
        assert np.allclose(out.values[:, 0], out.values[:, 1], atol=1e-6)


class TestDownshift:
    def test_sigma_zero_gives_mean(self):
        vals = np.array([[5.0, 5.0, np.nan], [5.0, 5.0, 5.0]])
        m = log2_matrix(vals)
        out = impute_normal_downshift(m, ~np.isnan(vals), seed=1)
        assert out.values[0, 2] == 5.0

    def test_single_observed_value_column(self):
        vals = np.array([[4.0], [np.nan]])
        m = log2_matrix(vals)
        out = impute_normal_downshift(m, ~np.isnan(vals), seed=1)
        assert out.values[1, 0] == 4.0

    def test_deterministic(self):
        m = random_log2(50, 6, 0.2, 9)
        mask = ~np.isnan(m.values)
        a = impute_normal_downshift(m, mask, seed=42)
        b = impute_normal_downshift(m, mask, seed=42)
        assert np.array_equal(a.values, b.values)

    def test_seed_changes_output(self):
        m = random_log2(50, 6, 0.2, 9)
        mask = ~np.isnan(m.values)
        a = impute_normal_downshift(m, mask, seed=1)
        b = impute_normal_downshift(m, mask, seed=2)
        assert not np.array_equal(a.values, b.values)

    def test_observed_untouched(self):
        m = random_log2(80, 6, 0.3, 10)
        mask = ~np.isnan(m.values)
        out = impute_normal_downshift(m, mask, seed=5)
        assert np.array_equal(out.values[mask], m.values[mask])

    def test_law_of_large_numbers(self):
        # one column, many missing cells: imputed mean ~ mu - 1.8 sigma
        rng = np.random.default_rng(20)
        observed = rng.normal(20, 1.0, size=500)
        n_missing = 10_000
        vals = np.concatenate([observed, np.full(n_missing, np.nan)])[:, None]
        m = log2_matrix(vals)
        out = impute_normal_downshift(m, ~np.isnan(vals), shift=1.8, width=0.3, seed=7)
        imputed = out.values[500:, 0]
        mu = observed.mean()
        sigma = observed.std(ddof=1)
        assert abs(imputed.mean() - (mu - 1.8 * sigma)) < 0.02 * sigma

    def test_entirely_missing_column_errors(self):
        vals = np.array([[1.0, np.nan], [2.0, np.nan]])
        m = log2_matrix(vals)
        with pytest.raises(DataError):
            impute_normal_downshift(m, ~np.isnan(vals), seed=0)


def knn_reference(values, k):
    """Independent exhaustive reference for KNN imputation."""
    vals = values.copy()
    n, m = values.shape
    obs = ~np.isnan(values)
    col_means = [values[obs[:, j], j].mean() if obs[:, j].any() else np.nan
                 for j in range(m)]
    for r in range(n):
        missing_cols = [j for j in range(m) if not obs[r, j]]
        if not missing_cols:
            continue
        cands = []
        for c in range(n):
            if c == r:
                continue
            if not all(obs[c, j] for j in missing_cols):
                continue
            shared = [j for j in range(m) if obs[r, j] and obs[c, j]]
            if not shared:
                continue
            diffs = [float(values[r, j]) - float(values[c, j]) for j in shared]
            d = math.sqrt(sum(x * x for x in diffs))
            d /= math.sqrt(len(shared))
            cands.append((d, c))
        if not cands:
            for j in missing_cols:
                vals[r, j] = col_means[j]
            continue
        cands.sort(key=lambda t: (t[0], t[1]))
        chosen = cands[:k]
        for j in missing_cols:
            num = 0.0
            den = 0.0
            for d, c in chosen:
                w = 1.0 / (d + 1e-12)
                num += w * float(values[c, j])
                den += w
            vals[r, j] = num / den
    return vals


class TestKnn:
    def test_dominant_nearest_neighbor(self):
        vals = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, np.nan], [10.0, 10.0, 10.0]])
        m = log2_matrix(vals)
        out, _ = impute_knn(m, k=1)
        assert out.values[1, 2] == 3.0

    def test_tie_earlier_row_wins(self):
        vals = np.array(
            [[1.0, 2.0, 7.0], [3.0, 4.0, 9.0], [2.0, 3.0, np.nan]]
        )  # rows 0 and 1 equidistant from row 2
        m = log2_matrix(vals)
        out, _ = impute_knn(m, k=1)
        assert out.values[2, 2] == 7.0

    def test_observed_untouched(self):
        m = random_log2(40, 6, 0.15, 13)
        mask = ~np.isnan(m.values)
        out, _ = impute_knn(m, k=3)
        assert np.array_equal(out.values[mask], m.values[mask])

    @pytest.mark.parametrize("k", [1, 3, 10])
    def test_matches_reference(self, k):
        for seed in range(10):
            m = random_log2(50, 6, 0.10, 100 + seed)
            out, _ = impute_knn(m, k=k)
            expected = knn_reference(m.values, k)
            assert np.array_equal(out.values, expected), f"seed {seed}, k {k}"

    def test_k_below_one_rejected(self):
        m = random_log2(5, 3, 0.1, 1)
        with pytest.raises(ConfigError):
            impute_knn(m, k=0)

    def test_fallback_to_column_mean(self):
        # every potential neighbor is also missing at column 2
        vals = np.array([[1.0, 2.0, np.nan], [1.1, 2.1, np.nan], [5.0, 6.0, 7.0]])
        m = log2_matrix(vals)
        out, warnings = impute_knn(m, k=1)
        # rows 0 and 1: only row 2 qualifies as neighbor
        assert out.values[0, 2] == pytest.approx(7.0)
        # no neighbor observed at the missing column: column-mean fallback
        vals2 = np.array([[1.0, 2.0, np.nan], [1.1, 2.1, np.nan], [np.nan, 6.0, 7.0]])
        vals2[2, 0] = np.nan
        m2 = log2_matrix(np.array([[1.0, np.nan], [2.0, np.nan], [3.0, 5.0]]))
        out2, warnings2 = impute_knn(m2, k=1)
        # row 0 and 1 have row 2 as only candidate; row 2 complete
        assert out2.values[0, 1] == pytest.approx(5.0)


class TestVenn:
    def make(self, vals, groups):
        vals = np.asarray(vals, dtype=float)
        rows = [f"p{i}" for i in range(vals.shape[0])]
        cols = [c for g in groups for c in g[1]]
        m = ExpressionMatrix(rows, cols, vals, scale="log2")
        design = GroupDesign([Group(n, n, tuple(c)) for n, c in groups])
        return m, design

    def test_disjoint_singletons(self):
        vals = [[1.0, np.nan], [np.nan, 2.0]]
        m, design = self.make(vals, [("A", ["a1"]), ("B", ["b1"])])
        sets, regions = venn_sets(m, design, min_valid=1)
        assert regions[("A",)] == 1
        assert regions[("B",)] == 1
        assert regions[("A", "B")] == 0

    def test_identical_sets(self):
        vals = [[1.0, 2.0]] * 5
        rows = [f"p{i}" for i in range(5)]
        m = ExpressionMatrix(rows, ["a1", "b1"], vals, scale="log2")
        design = GroupDesign([Group("A", "a", ("a1",)), Group("B", "b", ("b1",))])
        sets, regions = venn_sets(m, design, min_valid=1)
        assert regions[("A", "B")] == 5
        assert regions[("A",)] == 0
        assert regions[("B",)] == 0

    def test_three_group_enumeration_oracle(self):
        rng = np.random.default_rng(17)
        vals = rng.normal(20, 2, size=(100, 6))
        vals[rng.random((100, 6)) < 0.4] = np.nan
        rows = [f"p{i}" for i in range(100)]
        cols = ["a1", "a2", "b1", "b2", "c1", "c2"]
        m = ExpressionMatrix(rows, cols, vals, scale="log2")
        design = GroupDesign(
            [Group("A", "a", ("a1", "a2")), Group("B", "b", ("b1", "b2")),
             Group("C", "c", ("c1", "c2"))]
        )
        sets, regions = venn_sets(m, design, min_valid=1)
        names = ["A", "B", "C"]
        membership = {}
        for i, rid in enumerate(rows):
            ms = set()
            for name, jj in (("A", (0, 1)), ("B", (2, 3)), ("C", (4, 5))):
                if sum(0 if np.isnan(vals[i, j]) else 1 for j in jj) >= 1:
                    ms.add(name)
            membership[rid] = ms
        for key, count in regions.items():
            expected = sum(1 for ms in membership.values() if ms == set(key))
            assert count == expected, key

    def test_five_groups_rejected(self):
        vals = [[1.0] * 5]
        m = ExpressionMatrix(["p"], [f"c{i}" for i in range(5)], vals, scale="log2")
        design = GroupDesign([Group(f"G{i}", str(i), (f"c{i}",)) for i in range(5)])
        with pytest.raises(ConfigError):
            venn_sets(m, design)


class TestRunPreprocess:
    def test_repeatable(self):
        rng = np.random.default_rng(30)
        vals = rng.lognormal(14, 1, size=(60, 6))
        vals[rng.random((60, 6)) < 0.2] = np.nan
        rows = [f"p{i}" for i in range(60)]
        cols = ["a1", "a2", "a3", "b1", "b2", "b3"]
        m = ExpressionMatrix(rows, cols, vals)
        table = ProteinTable([ProteinRecord(r) for r in rows])
        design = design_two(cols[:3], cols[3:])
        params = PreprocessParams(
            min_valid=1, valid_mode="at_least_one_group",
            normalization="median", imputation="normal_downshift", rng_seed=99,
        )
        r1 = run_preprocess(table, m, design, params)
        r2 = run_preprocess(table, m, design, params)
        assert np.array_equal(r1.matrix.values, r2.matrix.values)
        assert not np.isnan(r1.matrix.values).any()
