"""Over-representation analysis against local annotation term sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.special import gammaln

from .errors import DataError, FormatError, TransportError


@dataclass(frozen=True)
class AnnotationSet:
    term_id: str
    term_name: str
    source: str
    members: frozenset


@dataclass
class EnrichmentRow:
    term_id: str
    term_name: str
    source: str
    k: int
    n: int
    K: int
    N: int
    p: float
    p_adj: float | None = None
    significant: bool = False
    overlap_ids: list = field(default_factory=list)


def parse_gmt(data: bytes, source: str = "GMT"):
    """Parse GMT gene-set lines: term_id <tab> description <tab> members...

    Lines with fewer than 3 fields are skipped with a warning; duplicate
    members on a line are deduplicated.
    """
    text = data.decode("utf-8-sig")
    sets = []
    warnings = []
    seen_ids = set()
    for lineno, line in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 3:
            warnings.append(f"line {lineno}: fewer than 3 fields, skipped")
            continue
        term_id, name = fields[0], fields[1]
        members = frozenset(m for m in fields[2:] if m)
        if not members:
            warnings.append(f"line {lineno}: term {term_id!r} has no members, skipped")
            continue
        if term_id in seen_ids:
            warnings.append(f"line {lineno}: duplicate term id {term_id!r}, skipped")
            continue
        seen_ids.add(term_id)
        sets.append(AnnotationSet(term_id=term_id, term_name=name, source=source, members=members))
    if not sets:
        raise FormatError("no usable gene-set lines found")
    return sets, warnings


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def hypergeom_upper_tail(k: int, n: int, K: int, N: int) -> float:
    """P(X >= k) for X ~ Hypergeometric(N, K, n), computed in log space."""
    if k <= max(0, n + K - N):
        return 1.0
    hi = min(n, K)
    if k > hi:
        return 0.0
    log_denominator = _log_binom(N, n)
    logs = [
        _log_binom(K, j) + _log_binom(N - K, n - j) - log_denominator
        for j in range(k, hi + 1)
    ]
    m = max(logs)
    return float(min(1.0, math.exp(m) * sum(math.exp(v - m) for v in logs)))


def ora(
    query,
    universe,
    sets,
    min_size: int = 3,
    max_size: int = 500,
    correction: str = "bh",
    sig_threshold: float = 0.05,
):
    """Hypergeometric over-representation of the query set in each term set.

    Term sets are intersected with the universe; sets outside
    [min_size, max_size] are skipped. Rows come back sorted by p then term_id.
    """
    if correction not in ("bh", "bonferroni"):
        raise ValueError(f"unknown correction {correction!r}")
    universe = set(universe)
    if not universe:
        raise DataError("empty universe")
    query_in = set(query) & universe
    dropped = set(query) - universe
    warnings = []
    if dropped:
        warnings.append(f"{len(dropped)} query ids outside the universe dropped")
    if not query_in:
        raise DataError("empty query after intersecting with the universe")
    N = len(universe)
    n = len(query_in)
    rows = []
    for s in sets:
        members = s.members & universe
        K = len(members)
        if K < min_size or K > max_size:
            continue
        overlap = query_in & members
        k = len(overlap)
        p = hypergeom_upper_tail(k, n, K, N)
        rows.append(
            EnrichmentRow(
                term_id=s.term_id,
                term_name=s.term_name,
                source=s.source,
                k=k, n=n, K=K, N=N,
                p=p,
                overlap_ids=sorted(overlap),
            )
        )
    m = len(rows)
    if correction == "bonferroni":
        for r in rows:
            r.p_adj = min(1.0, r.p * m)
    else:
        order = sorted(range(m), key=lambda i: rows[i].p)
        running = 1.0
        for rank in range(m - 1, -1, -1):
            i = order[rank]
            running = min(running, rows[i].p * m / (rank + 1))
            rows[i].p_adj = min(1.0, running)
    for r in rows:
        r.significant = r.p_adj is not None and r.p_adj <= sig_threshold
    rows.sort(key=lambda r: (r.p, r.term_id))
    return rows, warnings


def enrich_plot_data(rows, top_n: int = 10, font_size: int = 12, title: str = ""):
    """Dot, bar, and Manhattan payloads from sorted enrichment rows."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")

    def neglog10(p):
        return -math.log10(p) if p > 0 else 320.0

    top = rows[:top_n]
    dot = [
        {
            "term_id": r.term_id,
            "term_name": r.term_name,
            "gene_ratio": r.k / r.n if r.n else 0.0,
            "size": r.k,
            "color": neglog10(r.p_adj if r.p_adj is not None else r.p),
        }
        for r in top
    ]
    bar = [
        {
            "term_id": r.term_id,
            "term_name": r.term_name,
            "source": r.source,
            "value": neglog10(r.p_adj if r.p_adj is not None else r.p),
        }
        for r in top
    ]
    manhattan = [
        {
            "term_id": r.term_id,
            "source": r.source,
            "y": neglog10(r.p_adj if r.p_adj is not None else r.p),
            "significant": r.significant,
        }
        for r in sorted(rows, key=lambda r: (r.source, r.term_id))
    ]
    return {
        "dot": dot,
        "bar": bar,
        "manhattan": manhattan,
        "font_size": font_size,
        "title": title,
    }


def remote_profile(query, organism_code: str, threshold: float = 0.05,
                   endpoint: str | None = None, timeout_s: float = 30.0,
                   fixture_body: str | None = None):
    """Remote enrichment client (disabled by default; fixture-replay in tests).

    Maps the remote response, a JSON object with a "result" list of term
    records, into EnrichmentRow values.
    """
    import json

    if not query:
        raise DataError("empty query")
    if fixture_body is not None:
        body = fixture_body
    else:
        if endpoint is None:
            raise TransportError("remote enrichment endpoint not configured", kind="config")
        import httpx

        try:
            resp = httpx.post(
                endpoint,
                json={"organism": organism_code, "query": sorted(query),
                      "user_threshold": threshold},
                timeout=timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise TransportError(f"enrichment request timed out: {exc}", kind="timeout")
        except httpx.HTTPError as exc:
            raise TransportError(f"enrichment request failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"enrichment endpoint returned {resp.status_code}", kind="http")
        body = resp.text
    try:
        parsed = json.loads(body)
        rows = []
        for rec in parsed["result"]:
            rows.append(
                EnrichmentRow(
                    term_id=rec["native"],
                    term_name=rec.get("name", ""),
                    source=rec.get("source", "remote"),
                    k=int(rec.get("intersection_size", 0)),
                    n=int(rec.get("query_size", len(query))),
                    K=int(rec.get("term_size", 0)),
                    N=int(rec.get("effective_domain_size", 0)),
                    p=float(rec["p_value"]),
                    p_adj=float(rec["p_value"]),
                    significant=float(rec["p_value"]) <= threshold,
                )
            )
    except (KeyError, ValueError, TypeError) as exc:
        raise TransportError(f"malformed enrichment response: {exc}", kind="body") from exc
    rows.sort(key=lambda r: (r.p, r.term_id))
    return rows
