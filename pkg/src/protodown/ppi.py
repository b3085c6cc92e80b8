"""STRING protein-protein interaction client with offline fixture replay.

All automated tests run against recorded fixtures; live mode is manual.
Responses are defensively filtered so stored networks always satisfy the
network invariants (no self-edges, no duplicate undirected pairs, no edges
below the score threshold).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

from .errors import DataError, TransportError

DEFAULT_BASE = "https://string-db.org"


@dataclass
class PpiConfig:
    taxon_id: int
    required_score: int = 400
    endpoint_base: str = DEFAULT_BASE
    timeout_s: float = 30.0
    offline_fixture: str | None = None
    include_exclusives: bool = True

    def __post_init__(self):
        if self.taxon_id <= 0:
            raise ValueError("taxon_id must be positive")
        if not (0 <= self.required_score <= 1000):
            raise ValueError("required_score must be within 0..1000")


@dataclass
class PpiNetwork:
    nodes: list = field(default_factory=list)   # {query_id, resolved_id, preferred_name}
    edges: list = field(default_factory=list)   # {node_a, node_b, combined_score, sub_scores}
    unresolved_ids: list = field(default_factory=list)
    notice: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "nodes": self.nodes,
                "edges": self.edges,
                "unresolved_ids": self.unresolved_ids,
                "notice": self.notice,
            },
            sort_keys=True,
        )


class FixtureStore:
    """Recorded response bodies keyed by (path, sorted form fields)."""

    def __init__(self, path):
        with open(path, encoding="utf-8") as fh:
            self._data = json.load(fh)

    @staticmethod
    def key(path: str, fields: dict) -> str:
        flat = ";".join(f"{k}={fields[k]}" for k in sorted(fields))
        return f"{path}?{flat}"

    def lookup(self, path: str, fields: dict) -> str:
        key = self.key(path, fields)
        if key not in self._data:
            raise TransportError(f"no recorded fixture for {key}", kind="fixture")
        return self._data[key]


_last_call_ts = [0.0]


def _http_post(cfg: PpiConfig, path: str, fields: dict) -> str:
    if cfg.offline_fixture:
        return FixtureStore(cfg.offline_fixture).lookup(path, fields)
    import httpx

    # polite spacing between live calls
    wait = 1.0 - (time.monotonic() - _last_call_ts[0])
    if wait > 0:
        time.sleep(wait)
    url = cfg.endpoint_base.rstrip("/") + path
    last_exc = None
    for attempt in range(2):
        try:
            resp = httpx.post(url, data=fields, timeout=cfg.timeout_s)
            _last_call_ts[0] = time.monotonic()
            if resp.status_code != 200:
                raise TransportError(f"{path} returned HTTP {resp.status_code}", kind="http")
            return resp.text
        except httpx.TimeoutException as exc:
            last_exc = TransportError(f"{path} timed out: {exc}", kind="timeout")
        except httpx.HTTPError as exc:
            last_exc = TransportError(f"{path} failed: {exc}")
        time.sleep(1.0)
    raise last_exc


def resolve_ids(ids, cfg: PpiConfig):
    """Map query identifiers to STRING ids; first match per query wins."""
    ids = list(dict.fromkeys(ids))  # dedupe, keep order
    if not ids:
        raise DataError("no identifiers to resolve")
    fields = {
        "identifiers": "\n".join(ids),
        "species": str(cfg.taxon_id),
    }
    body = _http_post(cfg, "/api/json/get_string_ids", fields)
    try:
        records = json.loads(body)
    except json.JSONDecodeError as exc:
        raise TransportError(f"malformed id-mapping response: {exc}", kind="body") from exc
    resolved = {}
    for rec in records:
        try:
            query_index = int(rec.get("queryIndex", -1))
            string_id = rec["stringId"]
        except (KeyError, TypeError, ValueError):
            continue
        if 0 <= query_index < len(ids):
            qid = ids[query_index]
            if qid not in resolved:
                resolved[qid] = {
                    "resolved_id": string_id,
                    "preferred_name": rec.get("preferredName", string_id),
                }
    unresolved = [q for q in ids if q not in resolved]
    return resolved, unresolved


def _scale_score(value) -> int:
    """Canonicalize scores to 0..1000 integers; 0-1 reals are scaled."""
    v = float(value)
    if v <= 1.0:
        v *= 1000.0
    return int(v + 0.5)


def fetch_network(resolved: dict, cfg: PpiConfig) -> PpiNetwork:
    """Fetch the interaction network for resolved ids and filter defensively."""
    if len(resolved) < 2:
        raise DataError("a network needs at least 2 resolved proteins")
    string_to_query = {}
    nodes = []
    for qid, info in resolved.items():
        nodes.append(
            {"query_id": qid, "resolved_id": info["resolved_id"],
             "preferred_name": info["preferred_name"]}
        )
        string_to_query.setdefault(info["resolved_id"], qid)
    fields = {
        "identifiers": "\n".join(info["resolved_id"] for info in resolved.values()),
        "species": str(cfg.taxon_id),
        "required_score": str(cfg.required_score),
    }
    body = _http_post(cfg, "/api/json/network", fields)
    try:
        records = json.loads(body)
    except json.JSONDecodeError as exc:
        raise TransportError(f"malformed network response: {exc}", kind="body") from exc
    node_ids = {n["resolved_id"] for n in nodes}
    edges = []
    seen_pairs = set()
    for rec in records:
        try:
            a = rec["stringId_A"]
            b = rec["stringId_B"]
            score = _scale_score(rec["score"])
        except (KeyError, TypeError, ValueError):
            continue
        if a == b:
            continue
        if a not in node_ids or b not in node_ids:
            continue
        if score < cfg.required_score:
            continue
        pair = tuple(sorted((a, b)))
        if pair in seen_pairs:
            continue
        seen_pairs.add(pair)
        sub_scores = {
            k: float(v)
            for k, v in rec.items()
            if k in ("nscore", "fscore", "pscore", "ascore", "escore", "dscore", "tscore")
            and isinstance(v, (int, float))
        }
        edges.append(
            {"node_a": pair[0], "node_b": pair[1], "combined_score": score,
             "sub_scores": sub_scores}
        )
    edges.sort(key=lambda e: (e["node_a"], e["node_b"]))
    nodes.sort(key=lambda n: n["query_id"])
    return PpiNetwork(nodes=nodes, edges=edges)


def network_for_ids(ids, cfg: PpiConfig) -> PpiNetwork:
    """Resolve then fetch; small id sets come back as empty networks."""
    ids = list(dict.fromkeys(ids))
    if not ids:
        return PpiNetwork(notice="empty protein set; no network queried")
    resolved, unresolved = resolve_ids(ids, cfg)
    if len(resolved) < 2:
        return PpiNetwork(
            nodes=[
                {"query_id": q, "resolved_id": info["resolved_id"],
                 "preferred_name": info["preferred_name"]}
                for q, info in resolved.items()
            ],
            unresolved_ids=unresolved,
            notice="fewer than 2 resolved proteins; no network queried",
        )
    net = fetch_network(resolved, cfg)
    net.unresolved_ids = unresolved
    return net


def networks_for_diff(diff_rows, cfg: PpiConfig):
    """Separate networks for up- and down-regulated proteins.

    Exclusive proteins count as differentially abundant on their side when
    cfg.include_exclusives is set.
    """
    up_statuses = {"up"} | ({"exclusive_a"} if cfg.include_exclusives else set())
    down_statuses = {"down"} | ({"exclusive_b"} if cfg.include_exclusives else set())
    up_ids = [r.protein_id for r in diff_rows if r.status in up_statuses]
    down_ids = [r.protein_id for r in diff_rows if r.status in down_statuses]
    try:
        net_up = network_for_ids(up_ids, cfg)
    except TransportError as exc:
        raise TransportError(f"up-regulated set: {exc}", kind=exc.kind) from exc
    try:
        net_down = network_for_ids(down_ids, cfg)
    except TransportError as exc:
        raise TransportError(f"down-regulated set: {exc}", kind=exc.kind) from exc
    return net_up, net_down
