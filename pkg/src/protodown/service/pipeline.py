"""Session state with hash-chained stage caches.

Stages form the chain ingest -> preprocess -> (qc, diffexpr) -> (enrich, ppi).
A stage's hash digests its upstream hash, its own parameters, and the engine
version, so equal hashes imply byte-identical results and any parameter
change invalidates exactly the downstream stages.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import threading
import time
import uuid

from .. import __version__
from ..errors import ConfigError, ProtodownError, StateError
from ..ingest import IngestConfig, parse_platform, read_delimited, select_groups
from ..preprocess import PreprocessParams, run_preprocess, venn_sets
from ..diffexpr import TestConfig, export_table, heatmap_data, run_tests, volcano_data
from .. import qc as qcmod
from ..enrich import enrich_plot_data, ora, parse_gmt
from ..ppi import PpiConfig, networks_for_diff

SCHEMA_VERSION = 1

STAGES = ("ingest", "preprocess", "qc", "diffexpr", "enrich", "ppi")
UPSTREAM = {
    "ingest": None,
    "preprocess": "ingest",
    "qc": "preprocess",
    "diffexpr": "preprocess",
    "enrich": "diffexpr",
    "ppi": "diffexpr",
}


def downstream_of(stage: str):
    """The stage itself plus everything depending on it, in chain order."""
    out = []
    frontier = {stage}
    for s in STAGES:
        if s in frontier or UPSTREAM[s] in frontier:
            out.append(s)
            frontier.add(s)
    return out


def _params_blob(obj) -> str:
    def default(o):
        if dataclasses.is_dataclass(o):
            return dataclasses.asdict(o)
        if isinstance(o, frozenset):
            return sorted(o)
        if isinstance(o, (set, tuple)):
            return list(o)
        if isinstance(o, bytes):
            return hashlib.sha256(o).hexdigest()
        raise TypeError(f"unserializable {type(o)}")

    return json.dumps(obj, default=default, sort_keys=True)


@dataclasses.dataclass
class EnrichConfig:
    selector: str = "union"  # up | down | union
    min_size: int = 3
    max_size: int = 500
    correction: str = "bh"
    sig_threshold: float = 0.05
    top_n: int = 10
    font_size: int = 12
    title: str = ""

    def __post_init__(self):
        if self.selector not in ("up", "down", "union"):
            raise ConfigError(f"unknown enrichment selector {self.selector!r}")
        if self.correction not in ("bh", "bonferroni"):
            raise ConfigError(f"unknown correction {self.correction!r}")


class Session:
    """One analysis session: inputs, parameters, and hash-chained caches.

    Mutations are serialized by a per-session lock; reads of cached results
    are lock-free once computed.
    """

    def __init__(self, files: dict, ingest_config: IngestConfig, session_id=None):
        self.session_id = session_id or uuid.uuid4().hex
        self.files = files  # name -> bytes
        self.ingest_config = ingest_config
        self.group_patterns = list(ingest_config.group_patterns)
        self.preprocess_params = PreprocessParams()
        self.test_config: TestConfig | None = None
        self.enrich_config = EnrichConfig()
        self.gmt_bytes: bytes | None = files.get("gmt")
        self.ppi_config: PpiConfig | None = None
        self.created = time.time()
        self.updated = self.created
        self._lock = threading.RLock()
        self._cache = {}  # stage -> (hash, result)

    # --- hashing -----------------------------------------------------------

    def _stage_params(self, stage: str):
        if stage == "ingest":
            return {
                "files": {k: hashlib.sha256(v).hexdigest() for k, v in self.files.items()
                          if k != "gmt"},
                "config": self.ingest_config,
            }
        if stage == "preprocess":
            return {"patterns": self.group_patterns, "params": self.preprocess_params}
        if stage == "qc":
            return {}
        if stage == "diffexpr":
            return {"test": self.test_config}
        if stage == "enrich":
            return {"enrich": self.enrich_config, "gmt": self.gmt_bytes or b""}
        if stage == "ppi":
            return {"ppi": self.ppi_config}
        raise ValueError(stage)

    def stage_hash(self, stage: str) -> str:
        up = UPSTREAM[stage]
        upstream_digest = self.stage_hash(up) if up else ""
        blob = _params_blob(
            {"stage": stage, "upstream": upstream_digest,
             "params": self._stage_params(stage), "engine": __version__}
        )
        return hashlib.sha256(blob.encode()).hexdigest()

    # --- mutation ----------------------------------------------------------

    def update_params(self, stage: str, apply):
        """Apply a parameter mutation transactionally; report invalidations.

        `apply` mutates self; it is rolled back if validation raises.
        """
        with self._lock:
            before = {s: self.stage_hash(s) for s in STAGES}
            snapshot = (
                self.group_patterns,
                self.preprocess_params,
                self.test_config,
                self.enrich_config,
                self.ppi_config,
                self.gmt_bytes,
            )
            try:
                apply(self)
            except Exception:
                (self.group_patterns, self.preprocess_params, self.test_config,
                 self.enrich_config, self.ppi_config, self.gmt_bytes) = snapshot
                raise
            after = {s: self.stage_hash(s) for s in STAGES}
            invalidated = [s for s in STAGES if before[s] != after[s]]
            for s in invalidated:
                self._cache.pop(s, None)
            self.updated = time.time()
            return invalidated

    # --- computation -------------------------------------------------------

    def _compute(self, stage: str):
        h = self.stage_hash(stage)
        cached = self._cache.get(stage)
        if cached is not None and cached[0] == h:
            return cached[1]
        with self._lock:
            cached = self._cache.get(stage)
            if cached is not None and cached[0] == h:
                return cached[1]
            result = getattr(self, f"_run_{stage}")()
            self._cache[stage] = (h, result)
            return result

    def _run_ingest(self):
        cfg = self.ingest_config
        if cfg.platform == "diann":
            pg = read_delimited(self.files["pg_matrix"], "\t")
            report = None
            if "report" in self.files:
                report = read_delimited(self.files["report"], "\t")
            table, matrix, warnings = parse_platform("diann", pg, cfg, report)
        else:
            delim = "," if self.files.get("delimiter") == b"," else "\t"
            raw = read_delimited(self.files["main"], delim)
            table, matrix, warnings = parse_platform(cfg.platform, raw, cfg)
        return {"table": table, "matrix": matrix, "warnings": warnings}

    def _run_preprocess(self):
        ing = self._compute("ingest")
        if not self.group_patterns:
            raise StateError("group design not configured")
        design = select_groups(ing["matrix"], self.group_patterns)
        result = run_preprocess(ing["table"], ing["matrix"], design, self.preprocess_params)
        return {"design": design, "result": result}

    def _run_qc(self):
        pre = self._compute("preprocess")
        res = pre["result"]
        payloads = {
            "boxplot": qcmod.boxplot_stats(res.matrix),
            "imputation": qcmod.imputation_overlay(res.matrix, res.mask),
            "dispersion": qcmod.dispersion_stats(res.matrix),
        }
        histograms = {}
        qq = {}
        for j, name in enumerate(res.matrix.col_ids):
            col = res.matrix.values[:, j]
            edges, counts = qcmod.histogram(col)
            histograms[name] = {"bin_edges": edges, "counts": counts}
            try:
                theo, samp = qcmod.qq_points(col)
                qq[name] = {"theoretical": theo, "sample": samp}
            except Exception:
                qq[name] = None
        payloads["histogram"] = histograms
        payloads["qq"] = qq
        try:
            payloads["correlation"] = {
                "samples": list(res.matrix.col_ids),
                "matrix": qcmod.correlation_matrix(res.matrix).tolist(),
            }
        except ProtodownError as exc:
            payloads["correlation"] = {"error": str(exc)}
        try:
            scores, explained = qcmod.pca(res.matrix, drop_incomplete=True)
            payloads["pca"] = {
                "samples": list(res.matrix.col_ids),
                "scores": scores.tolist(),
                "explained": explained.tolist(),
            }
        except ProtodownError as exc:
            payloads["pca"] = {"error": str(exc)}
        return payloads

    def _run_diffexpr(self):
        if self.test_config is None:
            raise StateError("comparison not configured")
        pre = self._compute("preprocess")
        res = pre["result"]
        rows, warnings = run_tests(res.table, res.matrix, res.mask, pre["design"],
                                   self.test_config)
        return {"rows": rows, "warnings": warnings}

    def _run_enrich(self):
        if self.gmt_bytes is None:
            raise StateError("no annotation sets loaded")
        diff = self._compute("diffexpr")
        pre = self._compute("preprocess")
        cfg = self.enrich_config
        sets, warnings = parse_gmt(self.gmt_bytes)
        statuses = {
            "up": {"up", "exclusive_a"},
            "down": {"down", "exclusive_b"},
            "union": {"up", "down", "exclusive_a", "exclusive_b"},
        }[cfg.selector]
        query = {r.protein_id for r in diff["rows"] if r.status in statuses}
        universe = set(pre["result"].matrix.row_ids)
        if not query:
            return {"rows": [], "warnings": warnings + ["no differentially abundant proteins"]}
        rows, w2 = ora(query, universe, sets, cfg.min_size, cfg.max_size,
                       cfg.correction, cfg.sig_threshold)
        return {"rows": rows, "warnings": warnings + w2}

    def _run_ppi(self):
        if self.ppi_config is None:
            raise StateError("PPI not configured (taxon id and score threshold required)")
        diff = self._compute("diffexpr")
        up, down = networks_for_diff(diff["rows"], self.ppi_config)
        return {"up": up, "down": down}

    # --- payloads ----------------------------------------------------------

    def summary(self):
        ing = self._compute("ingest")
        return {
            "session_id": self.session_id,
            "rows": len(ing["table"]),
            "columns": list(ing["matrix"].col_ids),
            "warnings": ing["warnings"],
        }

    def get_payload(self, artifact: str):
        data = self._payload_data(artifact)
        stage = self._artifact_stage(artifact)
        return {
            "schema_version": SCHEMA_VERSION,
            "artifact": artifact,
            "stage_hash": self.stage_hash(stage),
            "data": data,
        }

    @staticmethod
    def _artifact_stage(artifact: str) -> str:
        if artifact.startswith("qc."):
            return "qc"
        if artifact in ("volcano", "heatmap", "diff_table"):
            return "diffexpr"
        if artifact == "venn":
            return "preprocess"
        if artifact.startswith("enrichment"):
            return "enrich"
        if artifact.startswith("ppi"):
            return "ppi"
        raise ConfigError(f"unknown artifact {artifact!r}")

    def _payload_data(self, artifact: str):
        if artifact.startswith("qc."):
            kind = artifact[3:]
            payloads = self._compute("qc")
            if kind not in payloads:
                raise ConfigError(f"unknown qc artifact {kind!r}")
            return payloads[kind]
        if artifact == "venn":
            pre = self._compute("preprocess")
            res = pre["result"]
            sets, regions = venn_sets(res.pre_impute_matrix, pre["design"],
                                      max(1, self.preprocess_params.min_valid))
            return {
                "sets": {k: sorted(v) for k, v in sets.items()},
                "regions": [
                    {"groups": list(k), "count": v} for k, v in sorted(regions.items())
                ],
            }
        if artifact == "volcano":
            diff = self._compute("diffexpr")
            return volcano_data(diff["rows"], self.test_config)
        if artifact == "heatmap":
            diff = self._compute("diffexpr")
            pre = self._compute("preprocess")
            sig = [r.protein_id for r in diff["rows"] if r.status in
                   ("up", "down")]
            return heatmap_data(pre["result"].matrix, sig)
        if artifact == "diff_table":
            diff = self._compute("diffexpr")
            return {
                "rows": [dataclasses.asdict(r) for r in diff["rows"]],
                "warnings": diff["warnings"],
            }
        if artifact.startswith("enrichment"):
            enr = self._compute("enrich")
            if artifact in ("enrichment", "enrichment.table"):
                return {"rows": [dataclasses.asdict(r) for r in enr["rows"]],
                        "warnings": enr["warnings"]}
            kind = artifact.split(".", 1)[1]
            plots = enrich_plot_data(enr["rows"], self.enrich_config.top_n,
                                     self.enrich_config.font_size, self.enrich_config.title)
            if kind not in plots:
                raise ConfigError(f"unknown enrichment artifact {kind!r}")
            return {kind: plots[kind], "font_size": plots["font_size"],
                    "title": plots["title"]}
        if artifact in ("ppi.up", "ppi.down"):
            nets = self._compute("ppi")
            net = nets["up" if artifact == "ppi.up" else "down"]
            return json.loads(net.to_json())
        raise ConfigError(f"unknown artifact {artifact!r}")

    def export_csv(self, artifact: str) -> str:
        if artifact == "diff_table":
            diff = self._compute("diffexpr")
            return export_table(diff["rows"])
        if artifact in ("enrichment", "enrichment.table"):
            import csv as _csv
            import io as _io

            enr = self._compute("enrich")
            buf = _io.StringIO()
            w = _csv.writer(buf, lineterminator="\r\n")
            w.writerow(["term_id", "term_name", "source", "k", "n", "K", "N",
                        "p", "p_adj", "significant", "overlap_ids"])
            for r in enr["rows"]:
                w.writerow([r.term_id, r.term_name, r.source, r.k, r.n, r.K, r.N,
                            repr(r.p), repr(r.p_adj) if r.p_adj is not None else "",
                            r.significant, ";".join(r.overlap_ids)])
            return buf.getvalue()
        raise ConfigError(f"artifact {artifact!r} has no CSV form")


class SessionStore:
    """In-memory session registry with optional idle expiry."""

    def __init__(self, expiry_s: float = 24 * 3600):
        self._sessions = {}
        self._lock = threading.Lock()
        self.expiry_s = expiry_s

    def create(self, files, ingest_config) -> Session:
        session = Session(files, ingest_config)
        session._compute("ingest")  # fail fast on parse errors
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id) -> Session:
        self.sweep()
        with self._lock:
            if session_id not in self._sessions:
                raise KeyError(session_id)
            return self._sessions[session_id]

    def delete(self, session_id):
        with self._lock:
            self._sessions.pop(session_id, None)

    def sweep(self):
        now = time.time()
        with self._lock:
            stale = [k for k, s in self._sessions.items()
                     if now - s.updated > self.expiry_s]
            for k in stale:
                del self._sessions[k]
