"""Parsers for the five supported upstream platform outputs.

All parsers produce a (ProteinTable, ExpressionMatrix) pair with a
linear-scale matrix. Zeros, empty cells, and NaN strings become missing.
Parsing is deterministic: identical bytes and config give identical output.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field

from .errors import DesignError, FormatError, IngestError
from .model import (
    FLAG_CONTAMINANT,
    FLAG_ONLY_BY_SITE,
    FLAG_REVERSE,
    ExpressionMatrix,
    Group,
    GroupDesign,
    ProteinRecord,
    ProteinTable,
)

PLATFORMS = ("maxquant", "msfragger", "diann", "proteome_discoverer", "generic_wide")
LABEL_TYPES = ("label_free", "tmt", "silac")
QUANT_MODES = ("intensity", "lfq", "spectral_count", "reporter")


@dataclass
class GenericMapping:
    """Column-name map for Proteome Discoverer / generic wide tables."""

    id: str
    abundance_prefix: str
    gene: str | None = None
    description: str | None = None
    peptide_count: str | None = None
    unique_peptide_count: str | None = None
    psm_count: str | None = None


@dataclass
class IngestConfig:
    platform: str
    label_type: str = "label_free"
    quantification: str = "intensity"
    organism: str = ""
    group_patterns: list = field(default_factory=list)
    generic_mapping: GenericMapping | None = None

    def __post_init__(self):
        if self.platform not in PLATFORMS:
            raise ValueError(f"unknown platform {self.platform!r}")
        if self.label_type not in LABEL_TYPES:
            raise ValueError(f"unknown label type {self.label_type!r}")
        if self.quantification not in QUANT_MODES:
            raise ValueError(f"unknown quantification mode {self.quantification!r}")
        needs_mapping = self.platform in ("proteome_discoverer", "generic_wide")
        if needs_mapping and self.generic_mapping is None:
            raise ValueError(f"platform {self.platform!r} requires a column mapping")
        if not needs_mapping and self.generic_mapping is not None:
            raise ValueError(f"platform {self.platform!r} takes no column mapping")


@dataclass
class RawTable:
    header: list
    rows: list
    warnings: list = field(default_factory=list)

    def column(self, name):
        j = self.header.index(name)
        return [row[j] for row in self.rows]


def read_delimited(data: bytes, delimiter: str) -> RawTable:
    """Parse delimited text into a RawTable.

    Comma files honor RFC-4180 quoting; tab files are split verbatim.
    Short rows are padded with empty cells and logged as warnings.
    """
    if delimiter not in ("\t", ","):
        raise ValueError("delimiter must be tab or comma")
    text = data.decode("utf-8-sig")
    if not text.strip():
        raise IngestError("input file is empty")
    if delimiter == ",":
        lines = csv.reader(io.StringIO(text))
        parsed = [row for row in lines if row]
    else:
        parsed = [
            line.split("\t")
            for line in text.replace("\r\n", "\n").split("\n")
            if line != ""
        ]
    header = parsed[0]
    width = len(header)
    rows = []
    warnings = []
    for lineno, row in enumerate(parsed[1:], start=2):
        if len(row) < width:
            warnings.append(f"line {lineno}: {len(row)} cells, padded to {width}")
            row = row + [""] * (width - len(row))
        elif len(row) > width:
            warnings.append(f"line {lineno}: {len(row)} cells, truncated to {width}")
            row = row[:width]
        rows.append(row)
    return RawTable(header=header, rows=rows, warnings=warnings)


def _parse_abundance(cell: str):
    """Abundance cell to float or None. Zero, empty, and NaN mean missing."""
    s = cell.strip()
    if not s or s.lower() == "nan":
        return None
    v = float(s)
    if v == 0 or math.isnan(v):
        return None
    if v < 0:
        raise FormatError(f"negative abundance value {cell!r}")
    return v


def _parse_count(cell: str):
    s = cell.strip()
    if not s or s.lower() == "nan":
        return None
    return int(round(float(s)))


def _build_matrix(row_ids, sample_names, value_rows):
    values = [
        [v if v is not None else float("nan") for v in row] for row in value_rows
    ]
    return ExpressionMatrix(row_ids, sample_names, values, scale="linear")


def _dedupe_ids(ids, warnings):
    """Upstream tables occasionally repeat a group id; suffix repeats to keep keys unique."""
    seen = {}
    out = []
    for rid in ids:
        if rid in seen:
            seen[rid] += 1
            new = f"{rid}__dup{seen[rid]}"
            warnings.append(f"duplicate protein id {rid!r} renamed to {new!r}")
            out.append(new)
        else:
            seen[rid] = 0
            out.append(rid)
    return out


_MQ_PREFIXES = {
    "lfq": "LFQ intensity ",
    "intensity": "Intensity ",
    "reporter": "Reporter intensity corrected ",
}


def parse_maxquant(raw: RawTable, config: IngestConfig):
    """Parse a MaxQuant proteinGroups table."""
    header = raw.header
    if "Majority protein IDs" in header:
        id_col = "Majority protein IDs"
    elif "Protein IDs" in header:
        id_col = "Protein IDs"
    else:
        raise FormatError(
            'MaxQuant table needs a "Majority protein IDs" or "Protein IDs" column'
        )
    if config.quantification not in _MQ_PREFIXES:
        raise FormatError(
            f"MaxQuant does not support quantification mode {config.quantification!r}"
        )
    prefix = _MQ_PREFIXES[config.quantification]
    abundance_cols = [c for c in header if c.startswith(prefix) and c != prefix.strip()]
    if not abundance_cols:
        raise FormatError(f'no abundance columns with prefix "{prefix}" found')
    sample_names = [c[len(prefix):] for c in abundance_cols]

    warnings = list(raw.warnings)

    def col(name):
        return header.index(name) if name in header else None

    j_gene = col("Gene names")
    j_desc = col("Protein names")
    j_pep = col("Peptides")
    j_upep = col("Unique peptides")
    j_rev = col("Reverse")
    j_cont = col("Potential contaminant")
    j_site = col("Only identified by site")
    j_ab = [header.index(c) for c in abundance_cols]
    msms_cols = [
        (c[len("MS/MS count "):], header.index(c))
        for c in header
        if c.startswith("MS/MS count ") and c != "MS/MS count "
    ]

    records = []
    value_rows = []
    ids = _dedupe_ids([row[header.index(id_col)] for row in raw.rows], warnings)
    for rid, row in zip(ids, raw.rows):
        flags = set()
        if j_rev is not None and row[j_rev].strip() == "+":
            flags.add(FLAG_REVERSE)
        if j_cont is not None and row[j_cont].strip() == "+":
            flags.add(FLAG_CONTAMINANT)
        if j_site is not None and row[j_site].strip() == "+":
            flags.add(FLAG_ONLY_BY_SITE)
        psm_counts = {}
        for sample, j in msms_cols:
            c = _parse_count(row[j])
            if c is not None:
                psm_counts[sample] = c
        records.append(
            ProteinRecord(
                protein_id=rid,
                gene_names=row[j_gene] if j_gene is not None else "",
                description=row[j_desc] if j_desc is not None else "",
                peptide_count=_parse_count(row[j_pep]) if j_pep is not None else None,
                unique_peptide_count=(
                    _parse_count(row[j_upep]) if j_upep is not None else None
                ),
                psm_counts=psm_counts,
                flags=frozenset(flags),
            )
        )
        value_rows.append([_parse_abundance(row[j]) for j in j_ab])

    matrix = _build_matrix([r.protein_id for r in records], sample_names, value_rows)
    return ProteinTable(records), matrix, warnings


_FRAGGER_SUFFIXES = {
    "lfq": " MaxLFQ Intensity",
    "intensity": " Intensity",
    "spectral_count": " Spectral Count",
}


def parse_msfragger(raw: RawTable, config: IngestConfig):
    """Parse an MSFragger combined_protein table."""
    header = raw.header
    if "Protein" not in header:
        raise FormatError('MSFragger table needs a "Protein" column')
    if config.quantification not in _FRAGGER_SUFFIXES:
        raise FormatError(
            f"MSFragger does not support quantification mode {config.quantification!r}"
        )
    suffix = _FRAGGER_SUFFIXES[config.quantification]
    abundance_cols = []
    for c in header:
        if not c.endswith(suffix):
            continue
        sample = c[: -len(suffix)]
        # "MaxLFQ Intensity" columns also end with " Intensity"; require a sample stem
        # and skip combined/summary columns.
        if not sample or sample in ("Combined", "Total"):
            continue
        if suffix == " Intensity" and sample.endswith(" MaxLFQ"):
            continue
        abundance_cols.append(c)
    if not abundance_cols:
        raise FormatError(f'no abundance columns with suffix "{suffix}" found')
    sample_names = [c[: -len(suffix)] for c in abundance_cols]

    warnings = list(raw.warnings)

    def col(name):
        return header.index(name) if name in header else None

    j_gene = col("Gene")
    j_desc = col("Description")
    j_pep = col("Combined Total Peptides")
    j_upep = col("Combined Unique Peptides")
    if j_upep is None:
        j_upep = col("Combined Total Unique Peptides")
    j_ab = [header.index(c) for c in abundance_cols]
    sc_suffix = " Spectral Count"
    sc_cols = [
        (c[: -len(sc_suffix)], header.index(c))
        for c in header
        if c.endswith(sc_suffix)
        and c[: -len(sc_suffix)] not in ("", "Combined", "Total")
        and not c[: -len(sc_suffix)].endswith(" Unique")
    ]

    records = []
    value_rows = []
    ids = _dedupe_ids(raw.column("Protein"), warnings)
    for rid, row in zip(ids, raw.rows):
        psm_counts = {}
        for sample, j in sc_cols:
            c = _parse_count(row[j])
            if c is not None:
                psm_counts[sample] = c
        pep = _parse_count(row[j_pep]) if j_pep is not None else None
        upep = _parse_count(row[j_upep]) if j_upep is not None else None
        if pep is not None and upep is not None and upep > pep:
            upep = pep
        records.append(
            ProteinRecord(
                protein_id=rid,
                gene_names=row[j_gene] if j_gene is not None else "",
                description=row[j_desc] if j_desc is not None else "",
                peptide_count=pep,
                unique_peptide_count=upep,
                psm_counts=psm_counts,
            )
        )
        value_rows.append([_parse_abundance(row[j]) for j in j_ab])

    matrix = _build_matrix([r.protein_id for r in records], sample_names, value_rows)
    return ProteinTable(records), matrix, warnings


_DIANN_ANNOTATION = (
    "Protein.Group",
    "Protein.Ids",
    "Protein.Names",
    "Genes",
    "First.Protein.Description",
)


def run_basename(path: str) -> str:
    """Run column name to sample name: strip directories and the extension."""
    name = path.replace("\\", "/").rsplit("/", 1)[-1]
    if "." in name:
        name = name.rsplit(".", 1)[0]
    return name


def diann_peptide_counts(report: RawTable):
    """Per-group peptide and unique-peptide counts from a DIA-NN report.

    A peptide (stripped sequence) is unique when it occurs under exactly one
    protein group across the whole report.
    """
    if "Protein.Group" not in report.header or "Stripped.Sequence" not in report.header:
        raise FormatError(
            'report needs "Protein.Group" and "Stripped.Sequence" columns'
        )
    groups = report.column("Protein.Group")
    seqs = report.column("Stripped.Sequence")
    per_group = {}
    seq_groups = {}
    for g, s in zip(groups, seqs):
        if not g or not s:
            continue
        per_group.setdefault(g, set()).add(s)
        seq_groups.setdefault(s, set()).add(g)
    counts = {}
    for g, gseqs in per_group.items():
        unique = sum(1 for s in gseqs if len(seq_groups[s]) == 1)
        counts[g] = (len(gseqs), unique)
    return counts


def parse_diann(pg_matrix: RawTable, report: RawTable | None, config: IngestConfig):
    """Parse a DIA-NN pg_matrix plus the optional report for peptide counts."""
    header = pg_matrix.header
    if "Protein.Group" not in header:
        raise FormatError('DIA-NN pg_matrix needs a "Protein.Group" column')
    annotation = [c for c in header if c in _DIANN_ANNOTATION]
    run_cols = [c for c in header if c not in _DIANN_ANNOTATION]
    warnings = list(pg_matrix.warnings)
    if not run_cols:
        raise FormatError("no run columns found in pg_matrix")
    sample_names = [run_basename(c) for c in run_cols]

    counts = None
    if report is not None:
        counts = diann_peptide_counts(report)
    else:
        warnings.append("report.tsv absent: peptide counts unavailable")

    def col(name):
        return header.index(name) if name in header else None

    j_gene = col("Genes")
    j_desc = col("First.Protein.Description")
    j_ab = [header.index(c) for c in run_cols]

    records = []
    value_rows = []
    ids = _dedupe_ids(pg_matrix.column("Protein.Group"), warnings)
    for rid, row in zip(ids, pg_matrix.rows):
        pep = upep = None
        if counts is not None and rid in counts:
            pep, upep = counts[rid]
        records.append(
            ProteinRecord(
                protein_id=rid,
                gene_names=row[j_gene] if j_gene is not None else "",
                description=row[j_desc] if j_desc is not None else "",
                peptide_count=pep,
                unique_peptide_count=upep,
            )
        )
        value_rows.append([_parse_abundance(row[j]) for j in j_ab])

    matrix = _build_matrix([r.protein_id for r in records], sample_names, value_rows)
    return ProteinTable(records), matrix, warnings


def parse_generic(raw: RawTable, config: IngestConfig):
    """Parse a generic wide table (Proteome Discoverer, ProteoScape) via a column map."""
    mapping = config.generic_mapping
    if mapping is None:
        raise FormatError("generic parser requires a column mapping")
    header = raw.header
    if mapping.id not in header:
        raise FormatError(f"mapped id column {mapping.id!r} not found")
    prefix = mapping.abundance_prefix
    abundance_cols = [c for c in header if c.startswith(prefix) and len(c) > len(prefix)]
    if not abundance_cols:
        raise FormatError(f'no abundance columns with prefix "{prefix}" found')
    sample_names = [c[len(prefix):].strip(" :_-") or c[len(prefix):] for c in abundance_cols]

    warnings = list(raw.warnings)

    def col(name):
        return header.index(name) if name is not None and name in header else None

    j_gene = col(mapping.gene)
    j_desc = col(mapping.description)
    j_pep = col(mapping.peptide_count)
    j_upep = col(mapping.unique_peptide_count)
    j_psm = col(mapping.psm_count)
    j_ab = [header.index(c) for c in abundance_cols]

    records = []
    value_rows = []
    ids = _dedupe_ids(raw.column(mapping.id), warnings)
    for rid, row in zip(ids, raw.rows):
        psm_counts = {}
        if j_psm is not None:
            c = _parse_count(row[j_psm])
            if c is not None:
                # single aggregate PSM column: apply to every sample
                psm_counts = {s: c for s in sample_names}
        records.append(
            ProteinRecord(
                protein_id=rid,
                gene_names=row[j_gene] if j_gene is not None else "",
                description=row[j_desc] if j_desc is not None else "",
                peptide_count=_parse_count(row[j_pep]) if j_pep is not None else None,
                unique_peptide_count=(
                    _parse_count(row[j_upep]) if j_upep is not None else None
                ),
                psm_counts=psm_counts,
            )
        )
        value_rows.append([_parse_abundance(row[j]) for j in j_ab])

    matrix = _build_matrix([r.protein_id for r in records], sample_names, value_rows)
    return ProteinTable(records), matrix, warnings


def parse_platform(platform: str, raw: RawTable, config: IngestConfig, report=None):
    if platform == "maxquant":
        return parse_maxquant(raw, config)
    if platform == "msfragger":
        return parse_msfragger(raw, config)
    if platform == "diann":
        return parse_diann(raw, report, config)
    if platform in ("proteome_discoverer", "generic_wide"):
        return parse_generic(raw, config)
    raise ValueError(f"unknown platform {platform!r}")


def select_groups(matrix: ExpressionMatrix, patterns) -> GroupDesign:
    """Build a GroupDesign by matching column names against per-group regexes.

    Search semantics, case-sensitive. A column matched by two patterns is an
    ambiguity error; a pattern matching nothing is a design error.
    """
    compiled = []
    for name, pattern in patterns:
        try:
            compiled.append((name, pattern, re.compile(pattern)))
        except re.error as exc:
            raise DesignError(f"invalid regex for group {name!r}: {exc}") from exc

    claimed = {}
    groups = []
    for name, pattern, rx in compiled:
        cols = [c for c in matrix.col_ids if rx.search(c)]
        if not cols:
            raise DesignError(f"pattern {pattern!r} for group {name!r} matched no columns")
        for c in cols:
            if c in claimed:
                raise DesignError(
                    f"column {c!r} matched by both {claimed[c]!r} and {name!r}"
                )
            claimed[c] = name
        groups.append(Group(name=name, pattern=pattern, columns=tuple(cols)))
    return GroupDesign(groups)
