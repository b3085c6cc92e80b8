import json
import math
from fractions import Fraction

import pytest
from scipy import stats as sps

from protodown.enrich import (
    AnnotationSet,
    enrich_plot_data,
    hypergeom_upper_tail,
    ora,
    parse_gmt,
    remote_profile,
)
from protodown.errors import DataError, FormatError, TransportError


def exact_upper_tail(k, n, K, N):
    """Enumeration oracle: exact rational tail probability."""
    total = Fraction(math.comb(N, n))
    acc = Fraction(0)
    for j in range(k, min(n, K) + 1):
        acc += Fraction(math.comb(K, j) * math.comb(N - K, n - j))
    return acc / total


class TestHypergeom:
    def test_hand_example(self):
        # N=10, K=4, n=3, k=2: P(X>=2) = (C(4,2)C(6,1)+C(4,3))/C(10,3) = 40/120
        p = hypergeom_upper_tail(2, 3, 4, 10)
        assert p == pytest.approx(float(Fraction(40, 120)), rel=1e-12)

    def test_five_over_210(self):
        # all 4 query hits inside a 4-member set drawn from N=10: 1/C(10,4) = 1/210 scale
        p = hypergeom_upper_tail(4, 4, 4, 10)
        assert p == pytest.approx(1 / 210, rel=1e-12)
        p2 = hypergeom_upper_tail(3, 4, 4, 10)
        assert p2 == pytest.approx(float(exact_upper_tail(3, 4, 4, 10)), rel=1e-12)

    @pytest.mark.parametrize("N,K,n", [(10, 4, 3), (20, 7, 5), (50, 10, 12), (100, 30, 25)])
    def test_enumeration_oracle(self, N, K, n):
        for k in range(0, min(n, K) + 1):
            got = hypergeom_upper_tail(k, n, K, N)
            want = float(exact_upper_tail(k, n, K, N))
            assert got == pytest.approx(want, rel=1e-10), (k, n, K, N)

    def test_matches_scipy_sf(self):
        got = hypergeom_upper_tail(8, 20, 50, 1000)
        want = float(sps.hypergeom.sf(7, 1000, 50, 20))
        assert got == pytest.approx(want, rel=1e-10)

    def test_monotone_decreasing_in_k(self):
        ps = [hypergeom_upper_tail(k, 10, 15, 60) for k in range(11)]
        assert all(ps[i] >= ps[i + 1] for i in range(10))

    def test_boundaries(self):
        assert hypergeom_upper_tail(0, 5, 5, 20) == 1.0
        # k below the support minimum: n + K - N forces overlap
        assert hypergeom_upper_tail(2, 18, 19, 20) == 1.0
        assert hypergeom_upper_tail(6, 5, 10, 20) == 0.0

    def test_extreme_log_space_stability(self):
        got = hypergeom_upper_tail(200, 300, 400, 20000)
        want = float(sps.hypergeom.sf(199, 20000, 400, 300))
        assert got == pytest.approx(want, rel=1e-8)
        assert got > 0.0


class TestParseGmt:
    def test_basic(self):
        data = b"GO:1\tfirst\tA\tB\tC\nGO:2\tsecond\tB\tD\n"
        sets, warnings = parse_gmt(data, source="GO")
        assert [s.term_id for s in sets] == ["GO:1", "GO:2"]
        assert sets[0].members == frozenset({"A", "B", "C"})
        assert sets[0].source == "GO"
        assert warnings == []

    def test_short_line_skipped_with_warning(self):
        data = b"GO:1\tname\tA\nGO:bad\tonly-two-fields\n"
        sets, warnings = parse_gmt(data)
        assert len(sets) == 1
        assert any("fewer than 3" in w for w in warnings)

    def test_duplicate_members_and_terms(self):
        data = b"GO:1\tx\tA\tA\tB\nGO:1\tx again\tC\tD\tE\n"
        sets, warnings = parse_gmt(data)
        assert len(sets) == 1
        assert sets[0].members == frozenset({"A", "B"})
        assert any("duplicate term" in w for w in warnings)

    def test_crlf_and_bom(self):
        data = "﻿GO:1\tn\tA\tB\r\nGO:2\tn\tC\tD\r\n".encode("utf-8")
        sets, _ = parse_gmt(data)
        assert len(sets) == 2
        assert sets[0].term_id == "GO:1"

    def test_empty_members_skipped(self):
        data = b"GO:1\tn\t\t\nGO:2\tn\tA\tB\n"
        sets, warnings = parse_gmt(data)
        assert [s.term_id for s in sets] == ["GO:2"]
        assert any("no members" in w for w in warnings)

    def test_all_unusable_raises(self):
        with pytest.raises(FormatError):
            parse_gmt(b"justone\nshort\tline\n")


def toy_sets():
    return [
        AnnotationSet("T1", "hit set", "GO", frozenset("ABCD")),
        AnnotationSet("T2", "background set", "GO", frozenset("EFGH")),
        AnnotationSet("T3", "tiny", "GO", frozenset("AB")),
        AnnotationSet("T4", "mixed", "KEGG", frozenset("ABEF")),
    ]


class TestOra:
    def test_exact_p_for_perfect_overlap(self):
        universe = [chr(ord("A") + i) for i in range(10)]
        rows, _ = ora(["A", "B", "C", "D"], universe, toy_sets(), min_size=3)
        byid = {r.term_id: r for r in rows}
        assert byid["T1"].k == 4
        assert byid["T1"].p == pytest.approx(1 / 210, rel=1e-12)
        assert byid["T2"].k == 0
        assert byid["T2"].p == 1.0
        assert "T3" not in byid  # below min_size
        assert byid["T1"].overlap_ids == ["A", "B", "C", "D"]

    def test_sets_intersected_with_universe(self):
        universe = ["A", "B", "C", "D", "E", "F"]
        sets = [AnnotationSet("T", "t", "GO", frozenset(["A", "B", "C", "ZZZ"]))]
        rows, _ = ora(["A", "B"], universe, sets)
        assert rows[0].K == 3
        assert rows[0].N == 6

    def test_query_outside_universe_dropped_with_warning(self):
        universe = list("ABCDEFGH")
        rows, warnings = ora(["A", "B", "QQ"], universe, toy_sets(), min_size=2)
        assert any("dropped" in w for w in warnings)
        assert rows[0].n == 2

    def test_empty_query_after_intersection(self):
        with pytest.raises(DataError):
            ora(["ZZ"], list("ABC"), toy_sets())

    def test_bonferroni(self):
        universe = [chr(ord("A") + i) for i in range(10)]
        rows, _ = ora(["A", "B", "C", "D"], universe, toy_sets(),
                      min_size=3, correction="bonferroni")
        m = len(rows)
        for r in rows:
            assert r.p_adj == pytest.approx(min(1.0, r.p * m))

    def test_bh_matches_reference(self):
        from protodown.diffexpr import bh_adjust

        universe = [chr(ord("A") + i) for i in range(12)]
        rows, _ = ora(["A", "B", "C", "E"], universe, toy_sets(), min_size=2)
        ref = bh_adjust([r.p for r in rows])
        for r, q in zip(rows, ref):
            assert r.p_adj == pytest.approx(q, abs=1e-12)

    def test_sorted_by_p_then_term(self):
        universe = [chr(ord("A") + i) for i in range(10)]
        rows, _ = ora(["A", "B", "C", "D"], universe, toy_sets(), min_size=2)
        keys = [(r.p, r.term_id) for r in rows]
        assert keys == sorted(keys)

    def test_size_window(self):
        universe = [str(i) for i in range(100)]
        big = AnnotationSet("BIG", "big", "GO", frozenset(universe))
        rows, _ = ora(["1", "2", "3"], universe, [big], max_size=50)
        assert rows == []

    def test_invalid_correction(self):
        with pytest.raises(ValueError):
            ora(["A"], list("ABC"), toy_sets(), correction="holm")


class TestPlotData:
    def rows(self):
        universe = [chr(ord("A") + i) for i in range(10)]
        rows, _ = ora(["A", "B", "C", "D"], universe, toy_sets(), min_size=2)
        return rows

    def test_dot_fields(self):
        rows = self.rows()
        payload = enrich_plot_data(rows, top_n=2, font_size=14, title="x")
        assert len(payload["dot"]) == 2
        first = payload["dot"][0]
        assert first["term_id"] == rows[0].term_id
        assert first["gene_ratio"] == pytest.approx(rows[0].k / rows[0].n)
        assert first["size"] == rows[0].k
        assert first["color"] == pytest.approx(-math.log10(rows[0].p_adj))
        assert payload["font_size"] == 14 and payload["title"] == "x"

    def test_manhattan_covers_all_sorted_by_source(self):
        rows = self.rows()
        payload = enrich_plot_data(rows, top_n=1)
        man = payload["manhattan"]
        assert len(man) == len(rows)
        keys = [(r["source"], r["term_id"]) for r in man]
        assert keys == sorted(keys)

    def test_top_n_clamps(self):
        rows = self.rows()
        payload = enrich_plot_data(rows, top_n=100)
        assert len(payload["dot"]) == len(rows)
        with pytest.raises(ValueError):
            enrich_plot_data(rows, top_n=0)


class TestRemoteProfile:
    def fixture_body(self):
        return json.dumps(
            {
                "result": [
                    {"native": "GO:0005", "name": "thing", "source": "GO:BP",
                     "p_value": 0.001, "intersection_size": 5, "query_size": 20,
                     "term_size": 100, "effective_domain_size": 18000},
                    {"native": "GO:0001", "name": "other", "source": "GO:BP",
                     "p_value": 0.2, "intersection_size": 1, "query_size": 20,
                     "term_size": 40, "effective_domain_size": 18000},
                ]
            }
        )

    def test_fixture_replay(self):
        rows = remote_profile(["P1", "P2"], "hsapiens", fixture_body=self.fixture_body())
        assert [r.term_id for r in rows] == ["GO:0005", "GO:0001"]
        assert rows[0].significant and not rows[1].significant
        assert rows[0].K == 100 and rows[0].N == 18000

    def test_malformed_body(self):
        with pytest.raises(TransportError):
            remote_profile(["P1"], "hsapiens", fixture_body='{"nope": []}')

    def test_no_endpoint_configured(self):
        with pytest.raises(TransportError):
            remote_profile(["P1"], "hsapiens")

    def test_empty_query(self):
        with pytest.raises(DataError):
            remote_profile([], "hsapiens", fixture_body=self.fixture_body())
