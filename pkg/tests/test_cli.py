import json

import pytest
from click.testing import CliRunner

from protodown.cli import EXIT_CONFIG, EXIT_DATA, main
from test_service import GMT, build_maxquant_bytes


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "proteinGroups.txt").write_bytes(build_maxquant_bytes())
    (tmp_path / "sets.gmt").write_bytes(GMT)
    return tmp_path


def run_cli(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def base_args(workdir, out="out", extra=()):
    return [
        "run",
        "--platform", "maxquant",
        "--input", str(workdir / "proteinGroups.txt"),
        "--quant", "lfq",
        "--groups", "ctrl=^ctrl_;trt=^trt_",
        "--compare", "ctrl:trt",
        "--normalize", "median",
        "--impute", "normal_downshift",
        "--out", str(workdir / out),
        *extra,
    ]


class TestRunHappyPath:
    def test_outputs_written(self, workdir):
        res = run_cli(base_args(workdir, extra=["--gmt", str(workdir / "sets.gmt"),
                                                "--valid-mode", "at_least_one_group",
                                                "--fc", "10"]))
        assert res.exit_code == 0, res.output + res.stderr
        out = workdir / "out"
        for name in ("diff_table.csv", "volcano.svg", "heatmap.svg", "venn.svg",
                     "enrichment.csv", "run_manifest.json"):
            assert (out / name).exists(), name
        for name in ("boxplot", "histogram", "qq", "correlation", "pca",
                     "dispersion", "imputation"):
            assert (out / "qc" / f"{name}.svg").exists(), name
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert set(manifest) == {"engine_version", "params", "stage_hashes", "warnings"}
        assert len(manifest["stage_hashes"]["diffexpr"]) == 64

    def test_diff_table_has_exclusives(self, workdir):
        run_cli(base_args(workdir, extra=["--valid-mode", "at_least_one_group"]))
        raw = (workdir / "out" / "diff_table.csv").read_bytes()
        assert b"\r\n" in raw
        text = raw.decode()
        assert "exclusive_a" in text and "exclusive_b" in text

    def test_byte_identical_determinism(self, workdir):
        args = ["--valid-mode", "at_least_one_group",
                "--gmt", str(workdir / "sets.gmt"), "--seed", "7"]
        assert run_cli(base_args(workdir, "run1", args)).exit_code == 0
        assert run_cli(base_args(workdir, "run2", args)).exit_code == 0
        d1, d2 = workdir / "run1", workdir / "run2"
        files = sorted(p.relative_to(d1) for p in d1.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(d2) for p in d2.rglob("*") if p.is_file())
        for rel in files:
            assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes(), rel

    def test_seed_changes_imputed_output(self, workdir):
        args = ["--valid-mode", "at_least_one_group"]
        assert run_cli(base_args(workdir, "s0", [*args, "--seed", "0"])).exit_code == 0
        assert run_cli(base_args(workdir, "s1", [*args, "--seed", "1"])).exit_code == 0
        a = (workdir / "s0" / "diff_table.csv").read_bytes()
        b = (workdir / "s1" / "diff_table.csv").read_bytes()
        assert a != b


class TestPpiOutputs:
    def make_fixture(self, workdir):
        from test_service import TestPpi

        return TestPpi().make_fixture(workdir, ["P100", "P101"], ["P200", "P201"])

    def test_networks_written(self, workdir):
        fx = self.make_fixture(workdir)
        res = run_cli(base_args(workdir, extra=[
            "--valid-mode", "at_least_one_group", "--fc", "10",
            "--taxon", "9606", "--string-fixture", fx,
        ]))
        assert res.exit_code == 0, res.output + res.stderr
        up = json.loads((workdir / "out" / "ppi_up.json").read_text())
        assert [n["query_id"] for n in up["nodes"]] == ["P100", "P101"]
        assert (workdir / "out" / "ppi_down.json").exists()

    def test_missing_fixture_is_data_exit(self, workdir):
        empty = workdir / "empty.json"
        empty.write_text("{}")
        res = run_cli(base_args(workdir, extra=[
            "--valid-mode", "at_least_one_group", "--fc", "10",
            "--taxon", "9606", "--string-fixture", str(empty),
        ]))
        assert res.exit_code == EXIT_DATA


class TestExitCodes:
    def test_bad_group_spec(self, workdir):
        args = base_args(workdir)
        args[args.index("--groups") + 1] = "onlyone=^ctrl_"
        res = run_cli(args)
        assert res.exit_code == EXIT_CONFIG

    def test_unmatched_group_pattern(self, workdir):
        args = base_args(workdir)
        args[args.index("--groups") + 1] = "ctrl=^ctrl_;trt=^nothing_"
        res = run_cli(args)
        assert res.exit_code == EXIT_CONFIG

    def test_unknown_compare_group(self, workdir):
        args = base_args(workdir)
        args[args.index("--compare") + 1] = "ctrl:nope"
        res = run_cli(args)
        assert res.exit_code == EXIT_CONFIG

    def test_compare_without_colon(self, workdir):
        args = base_args(workdir)
        args[args.index("--compare") + 1] = "ctrl"
        res = run_cli(args)
        assert res.exit_code == EXIT_CONFIG

    def test_missing_input_is_usage_error(self, workdir):
        args = base_args(workdir)
        args[args.index("--input") + 1] = str(workdir / "nope.txt")
        res = run_cli(args)
        assert res.exit_code == 2

    def test_malformed_data_file(self, workdir):
        bad = workdir / "bad.txt"
        bad.write_bytes(b"this\tis\tnot\ta\tproteinGroups\n1\t2\t3\t4\t5\n")
        args = base_args(workdir)
        args[args.index("--input") + 1] = str(bad)
        res = run_cli(args)
        assert res.exit_code == EXIT_DATA

    def test_bad_mapping_json(self, workdir):
        bad = workdir / "mapping.json"
        bad.write_text("{not json")
        res = run_cli(base_args(workdir, extra=["--mapping", str(bad)]))
        assert res.exit_code == EXIT_CONFIG


class TestHelp:
    def test_main_help(self):
        res = run_cli(["--help"])
        assert res.exit_code == 0
        assert "run" in res.output and "serve" in res.output

    def test_run_help(self):
        res = run_cli(["run", "--help"])
        assert res.exit_code == 0
        assert "--groups" in res.output
