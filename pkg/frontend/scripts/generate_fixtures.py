"""Regenerate the engine-derived test fixtures under test/fixtures/.

Run from the repository root after installing the Python package:

    python3 frontend/scripts/generate_fixtures.py

The group-designer cases are evaluated through the engine's select_groups so
the TypeScript preview is tested against real engine behaviour, and the plot
payloads come from a real pipeline session.
"""
import json
from pathlib import Path
from types import SimpleNamespace

from protodown.diffexpr import TestConfig
from protodown.errors import DesignError
from protodown.ingest import IngestConfig, select_groups
from protodown.service.pipeline import Session

OUT = Path(__file__).resolve().parents[1] / "test" / "fixtures"

# 20 scripted pattern/column cases: plain matches, search (substring)
# semantics, anchors, classes, alternation, quantifiers, case sensitivity,
# zero-match, overlap/ambiguity, and invalid-regex states.
GROUP_CASES = [
    ("direct_prefix", ["ctrl_1", "trt_1"], [["ctrl", "^ctrl"], ["trt", "^trt"]]),
    ("substring_search", ["abc_ctrl_1", "abc_trt_1"], [["c", "ctrl"], ["t", "trt"]]),
    ("multiple_columns", ["ctrl_1", "ctrl_2", "ctrl_3", "trt_1", "trt_2"],
     [["ctrl", "^ctrl_"], ["trt", "^trt_"]]),
    ("end_anchor", ["s_1_ctrl", "s_1_trt"], [["c", "ctrl$"], ["t", "trt$"]]),
    ("digit_class", ["rep1", "rep2", "mock1"], [["rep", "^rep\\d"], ["mock", "^mock\\d"]]),
    ("alternation", ["a_1", "b_1", "c_1"], [["ab", "^(a|b)_"], ["c", "^c_"]]),
    ("char_class", ["x1", "x2", "y1"], [["x", "^x[12]$"], ["y", "^y[12]$"]]),
    ("quantifier", ["ctrll_1", "ctrl_1", "t_1"], [["c", "^ctrl+_"], ["t", "^t_"]]),
    ("escaped_dot", ["a.1", "a_1"], [["dot", "^a\\.1$"], ["under", "^a_1$"]]),
    ("case_sensitive", ["Ctrl_1", "ctrl_1"], [["upper", "^Ctrl"], ["lower", "^ctrl"]]),
    ("single_group", ["s1", "s2", "s3"], [["all", "^s"]]),
    ("empty_pattern_claims_all_then_conflict", ["a", "b"], [["g1", ""], ["g2", "^b"]]),
    ("lfq_style", ["LFQ intensity ctrl_1", "LFQ intensity trt_1", "Peptides ctrl_1"],
     [["ctrl", "^LFQ intensity ctrl"], ["trt", "^LFQ intensity trt"]]),
    ("zero_match_first", ["ctrl_1", "trt_1"], [["x", "^missing"], ["t", "^trt"]]),
    ("zero_match_second", ["ctrl_1", "trt_1"], [["c", "^ctrl"], ["x", "zzz"]]),
    ("overlap_two_patterns", ["ctrl_1", "trt_1"], [["a", "_1$"], ["b", "^trt"]]),
    ("overlap_broad_second", ["ctrl_1", "trt_1", "trt_2"], [["c", "^ctrl"], ["t", "^trt"], ["one", "_1$"]]),
    ("invalid_regex_open_paren", ["ctrl_1"], [["bad", "("]]),
    ("invalid_regex_open_bracket", ["ctrl_1", "trt_1"], [["c", "^ctrl"], ["bad", "[abc"]]),
    ("zero_match_and_overlap", ["ctrl_1", "trt_1"], [["a", "_1$"], ["x", "none"], ["b", "^trt"]]),
]

def classify(message: str) -> str:
    if "invalid regex" in message:
        return "invalid_regex"
    if "matched no columns" in message:
        return "zero_match"
    if "matched by both" in message:
        return "conflict"
    raise AssertionError(message)

def group_cases():
    cases = []
    for name, columns, patterns in GROUP_CASES:
        matrix = SimpleNamespace(col_ids=list(columns))
        try:
            design = select_groups(matrix, [tuple(p) for p in patterns])
            expected = {
                "ok": True,
                "groups": {g.name: list(g.columns) for g in design.groups},
            }
        except DesignError as exc:
            expected = {"ok": False, "kind": classify(str(exc)), "message": str(exc)}
        cases.append({"name": name, "columns": columns,
                      "patterns": patterns, "expected": expected})
    assert len(cases) == 20
    return {"cases": cases}

def differential_bytes(seed=11):
    """40 null + 10 raised + 10 lowered proteins, complete 3v3 rows."""
    import numpy as np

    rng = np.random.default_rng(seed)
    samples = ["ctrl_1", "ctrl_2", "ctrl_3", "trt_1", "trt_2", "trt_3"]
    header = (["Protein IDs", "Gene names", "Peptides", "Unique peptides"]
              + [f"LFQ intensity {s}" for s in samples]
              + ["Reverse", "Potential contaminant", "Only identified by site"])
    lines = ["\t".join(header)]
    for i in range(60):
        base = rng.uniform(20, 24)
        fc = 2.0 if i < 10 else (-2.0 if i < 20 else 0.0)
        vals = np.concatenate([base + rng.normal(0, 0.25, 3),
                               base + fc + rng.normal(0, 0.25, 3)])
        cells = ([f"P{i:03d}", f"G{i:03d}", "12", "8"]
                 + [repr(float(2.0 ** v)) for v in vals] + ["", "", ""])
        lines.append("\t".join(cells))
    return ("\n".join(lines) + "\n").encode()

def payloads():
    cfg = IngestConfig(
        platform="maxquant", quantification="lfq",
        group_patterns=[("ctrl", "^ctrl_"), ("trt", "^trt_")],
    )
    session = Session({"main": differential_bytes()}, cfg)
    session.test_config = TestConfig(
        comparison=("ctrl", "trt"), method="moderated_t",
        fc_threshold=1.0, p_threshold=0.05, use_adjusted=True,
    )
    return (session.get_payload("volcano"), session.get_payload("diff_table"))

def main():
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "group_cases.json").write_text(
        json.dumps(group_cases(), indent=2) + "\n")
    volcano, diff_table = payloads()
    (OUT / "volcano_payload.json").write_text(json.dumps(volcano, indent=2) + "\n")
    (OUT / "diff_table_payload.json").write_text(
        json.dumps(diff_table, indent=2) + "\n")
    print(f"wrote fixtures to {OUT}")

if __name__ == "__main__":
    main()
