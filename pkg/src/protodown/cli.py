"""Batch CLI sharing the engine with the HTTP service."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .errors import ConfigError, DesignError, ProtodownError, StateError
from .ingest import GenericMapping, IngestConfig
from .preprocess import PreprocessParams
from .diffexpr import TestConfig
from .ppi import PpiConfig
from .service.pipeline import Session
from .service.render import render_svg

EXIT_CONFIG = 2
EXIT_DATA = 3


def _parse_groups(spec: str):
    groups = []
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        name, _, pattern = part.partition("=")
        if not name or not pattern:
            raise click.UsageError(f"bad group spec {part!r}; expected name=regex")
        groups.append((name, pattern))
    if len(groups) < 2:
        raise click.UsageError("need at least two groups (name=regex;name=regex)")
    return groups


@click.group()
def main():
    """protodown: downstream proteomics analysis."""


@main.command()
@click.option("--platform", required=True,
              type=click.Choice(["maxquant", "msfragger", "diann",
                                 "proteome_discoverer", "generic_wide"]))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--report", type=click.Path(exists=True), help="DIA-NN report.tsv")
@click.option("--quant", default="intensity",
              type=click.Choice(["intensity", "lfq", "spectral_count", "reporter"]))
@click.option("--label", default="label_free",
              type=click.Choice(["label_free", "tmt", "silac"]))
@click.option("--mapping", type=click.Path(exists=True),
              help="JSON column mapping for generic/PD tables")
@click.option("--groups", required=True, help='e.g. "ctrl=^ctrl;trt=^trt"')
@click.option("--compare", required=True, help="group_a:group_b")
@click.option("--min-valid", default=2, show_default=True)
@click.option("--valid-mode", default="each_group",
              type=click.Choice(["each_group", "at_least_one_group"]))
@click.option("--min-unique-peptides", default=0, show_default=True)
@click.option("--normalize", default="none",
              type=click.Choice(["none", "mean", "median", "trimmed_mean", "vsn_glog"]))
@click.option("--impute", default="none",
              type=click.Choice(["none", "normal_downshift", "knn"]))
@click.option("--test", "test_method", default="moderated_t",
              type=click.Choice(["ordinary_t", "moderated_t", "moderated_t_psm"]))
@click.option("--paired", is_flag=True)
@click.option("--fc", default=1.0, show_default=True, help="log2 fold-change threshold")
@click.option("--p", "p_threshold", default=0.05, show_default=True)
@click.option("--adjusted/--raw-p", "use_adjusted", default=True)
@click.option("--exclusives/--no-exclusives", "include_exclusives", default=True)
@click.option("--gmt", type=click.Path(exists=True), help="GMT annotation sets")
@click.option("--taxon", type=int, help="NCBI taxonomy id for STRING networks")
@click.option("--score", default=400, show_default=True, help="STRING score threshold")
@click.option("--string-fixture", type=click.Path(exists=True),
              help="recorded STRING responses (offline mode)")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def run(platform, input_path, report, quant, label, mapping, groups, compare,
        min_valid, valid_mode, min_unique_peptides, normalize, impute,
        test_method, paired, fc, p_threshold, use_adjusted, include_exclusives,
        gmt, taxon, score, string_fixture, seed, out_dir):
    """Run the full pipeline in batch mode and write results to --out."""
    try:
        group_patterns = _parse_groups(groups)
        group_a, _, group_b = compare.partition(":")
        if not group_a or not group_b:
            raise click.UsageError("--compare must be group_a:group_b")

        generic_mapping = None
        if mapping:
            generic_mapping = GenericMapping(**json.loads(Path(mapping).read_text()))
        ingest_cfg = IngestConfig(
            platform=platform, label_type=label, quantification=quant,
            group_patterns=group_patterns, generic_mapping=generic_mapping,
        )
        files = {}
        data = Path(input_path).read_bytes()
        if platform == "diann":
            files["pg_matrix"] = data
            if report:
                files["report"] = Path(report).read_bytes()
        else:
            files["main"] = data
        if gmt:
            files["gmt"] = Path(gmt).read_bytes()

        session = Session(files, ingest_cfg)
        session.preprocess_params = PreprocessParams(
            min_valid=min_valid, valid_mode=valid_mode,
            min_unique_peptides=min_unique_peptides,
            normalization=normalize, imputation=impute, rng_seed=seed,
        )
        session.test_config = TestConfig(
            comparison=(group_a, group_b), method=test_method, paired=paired,
            fc_threshold=fc, p_threshold=p_threshold, use_adjusted=use_adjusted,
            include_exclusives=include_exclusives, min_valid=min_valid,
        )
        if taxon:
            session.ppi_config = PpiConfig(
                taxon_id=taxon, required_score=score,
                endpoint_base=os.environ.get("PROTODOWN_STRING_BASE",
                                             "https://string-db.org"),
                offline_fixture=string_fixture,
            )
    except (click.UsageError, ConfigError, DesignError, ValueError,
            json.JSONDecodeError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "qc").mkdir(exist_ok=True)

        diff = session._compute("diffexpr")
        (out / "diff_table.csv").write_text(session.export_csv("diff_table"),
                                            newline="")
        for artifact in ("qc.boxplot", "qc.histogram", "qc.qq", "qc.correlation",
                         "qc.pca", "qc.dispersion", "qc.imputation"):
            payload = session.get_payload(artifact)
            name = artifact.split(".", 1)[1]
            (out / "qc" / f"{name}.svg").write_text(
                render_svg(artifact, payload["data"]))
        for artifact, filename in (("volcano", "volcano.svg"),
                                   ("heatmap", "heatmap.svg"),
                                   ("venn", "venn.svg")):
            payload = session.get_payload(artifact)
            (out / filename).write_text(render_svg(artifact, payload["data"]))
        if gmt:
            (out / "enrichment.csv").write_text(session.export_csv("enrichment"),
                                                newline="")
        if taxon:
            nets = session._compute("ppi")
            (out / "ppi_up.json").write_text(nets["up"].to_json())
            (out / "ppi_down.json").write_text(nets["down"].to_json())

        from . import __version__

        manifest = {
            "engine_version": __version__,
            "params": {
                "platform": platform, "quant": quant, "label": label,
                "groups": group_patterns, "compare": [group_a, group_b],
                "preprocess": {
                    "min_valid": min_valid, "valid_mode": valid_mode,
                    "min_unique_peptides": min_unique_peptides,
                    "normalize": normalize, "impute": impute, "seed": seed,
                },
                "test": {
                    "method": test_method, "paired": paired, "fc": fc,
                    "p": p_threshold, "adjusted": use_adjusted,
                    "exclusives": include_exclusives,
                },
                "enrich": {"gmt": bool(gmt)},
                "ppi": {"taxon": taxon, "score": score} if taxon else None,
            },
            "stage_hashes": {s: session.stage_hash(s)
                             for s in ("ingest", "preprocess", "qc", "diffexpr")},
            "warnings": diff["warnings"],
        }
        (out / "run_manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True))
    except (ConfigError, DesignError, StateError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except ProtodownError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    click.echo(f"results written to {out}")


@main.command()
@click.option("--addr", default=None, help="host:port (default PROTODOWN_ADDR or 127.0.0.1:8000)")
def serve(addr):
    """Start the HTTP service."""
    import uvicorn

    from .service.app import create_app

    addr = addr or os.environ.get("PROTODOWN_ADDR", "127.0.0.1:8000")
    host, _, port = addr.partition(":")
    uvicorn.run(create_app(), host=host, port=int(port or 8000))


if __name__ == "__main__":
    main()
