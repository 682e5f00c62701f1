import csv
import io
import json

import numpy as np
import pytest

from thermofactor import cli, seqio
from thermofactor.seqio import ThermalSequence


def run(tmp_path, text, command, *extra):
    cfg = tmp_path / f"{command}.ini"
    cfg.write_text(text)
    return cli.main(["--config", str(cfg), *extra, command])


SMALL_PLEXI = """
[simulate]
kind = active
preset = PLEXI
grid = 16, 24, 8
duration = 20
"""


@pytest.fixture(scope="module")
def plexi(tmp_path_factory):
    root = tmp_path_factory.mktemp("plexi")
    cfg = root / "sim.ini"
    cfg.write_text(SMALL_PLEXI)
    assert cli.main(["--config", str(cfg), "--output", str(root / "sim"), "simulate"]) == 0
    return root / "sim"


def test_simulate_plexi_emits_six_masks(plexi):
    masks = sorted(p.name for p in plexi.glob("gt_defect_*.pgm"))
    assert len(masks) == 6
    assert (plexi / "gt_union.pgm").exists() and (plexi / "sequence.thrm").exists()
    manifest = json.loads((plexi / "manifest.json").read_text())
    assert manifest["n_defects"] == 6 and "config_hash" in manifest and manifest["seed"] == 0


def test_simulate_creates_nested_output_and_is_deterministic(tmp_path, plexi):
    out = tmp_path / "a" / "b" / "c"
    assert run(tmp_path, SMALL_PLEXI, "simulate", "--output", str(out)) == 0
    for name in ("sequence.thrm", "gt_union.pgm", "manifest.json"):
        assert (out / name).read_bytes() == (plexi / name).read_bytes()


def test_global_flags_after_subcommand(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text(SMALL_PLEXI)
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(cfg), "--output", str(out), "--seed", "5"]) == 0
    assert json.loads((out / "manifest.json").read_text())["seed"] == 5


def test_factorize_convex_records_deviation(tmp_path, plexi):
    text = f"""
[input]
sequence = {plexi / 'sequence.thrm'}
gt = {plexi / 'gt_union.pgm'}
[factor]
method = convex_nmf
k = 7
max_iter = 50
"""
    out = tmp_path / "f"
    assert run(tmp_path, text, "factorize", "--output", str(out)) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["convex_basis_deviation"] <= manifest["convex_basis_bound"]
    assert len(list(out.glob("component_*.pgm"))) == 7
    assert (out / "selected.pgm").exists() and (out / "model.json").exists()


def test_factorize_unknown_method_is_usage_error(tmp_path, plexi, capsys):
    text = f"[input]\nsequence = {plexi / 'sequence.thrm'}\n[factor]\nmethod = pca2\n"
    assert run(tmp_path, text, "factorize", "--output", str(tmp_path / "x")) == 2
    assert "valid methods" in capsys.readouterr().err


def test_config_parse_error_reports_line(tmp_path, capsys):
    assert run(tmp_path, "[run]\nseed = 1\nbroken line without equals\n", "simulate") == 2
    assert "line" in capsys.readouterr().err


def test_missing_input_path_is_usage_error(tmp_path):
    assert run(tmp_path, "[input]\nsequence = nowhere.thrm\n", "factorize") == 2


def test_corrupt_sequence_is_data_error(tmp_path):
    bad = tmp_path / "bad.thrm"
    bad.write_bytes(b"NOPE" + bytes(40))
    assert run(tmp_path, f"[input]\nsequence = {bad}\n", "factorize", "--output", str(tmp_path / "o")) == 3


def test_degenerate_input_exit_code(tmp_path):
    seq = tmp_path / "flat.thrm"
    seqio.save_sequence(ThermalSequence(np.ones((4, 3, 3))), seq)
    text = f"[input]\nsequence = {seq}\n[factor]\nmethod = ccipct\nk = 1\nselection = 0\n"
    assert run(tmp_path, text, "factorize", "--output", str(tmp_path / "o")) == 4


def test_evaluate_perfect_detector(tmp_path, plexi):
    text = f"""
[input]
image = {plexi / 'gt_union.pgm'}
gt = {plexi / 'gt_union.pgm'}
defects = {plexi / 'gt_defect_00.pgm'}, {plexi / 'gt_defect_01.pgm'}
"""
    out = tmp_path / "e"
    assert run(tmp_path, text, "evaluate", "--output", str(out)) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["best_jaccard"] == 1.0
    assert len(report["per_defect"]) == 2
    assert (out / "sweep.csv").read_text().startswith("level_or_threshold,jaccard,snr,polarity")


def test_robustness_one_row_per_level(tmp_path, plexi):
    text = f"""
[input]
sequence = {plexi / 'sequence.thrm'}
gt = {plexi / 'gt_union.pgm'}
[factor]
method = pct
k = 4
[noise]
levels = 0.03, 0.05, 0.10, 0.20
"""
    out = tmp_path / "r"
    assert run(tmp_path, text, "robustness", "--output", str(out), "--threads", "2") == 0
    rows = list(csv.reader(io.StringIO((out / "robustness.csv").read_text())))
    assert [r[0] for r in rows[1:]] == ["0.03", "0.05", "0.1", "0.2"]


def test_texture_identical_groups_p_one(tmp_path):
    cohort = tmp_path / "cohort"
    cohort.mkdir()
    frames = np.random.default_rng(0).normal(size=(6, 12, 12)) + np.linspace(0, 1, 6)[:, None, None]
    rows = ["subject_id,file,label"]
    for i in range(6):
        seqio.save_sequence(ThermalSequence(frames), cohort / f"s{i}.thrm")
        rows.append(f"s{i},s{i}.thrm,{i % 2}")
    (cohort / "cohort.csv").write_text("\n".join(rows) + "\n")
    text = f"[input]\ncohort = {cohort}\n[texture]\nk = 2\nlevels = 8\n"
    out = tmp_path / "t"
    assert run(tmp_path, text, "texture", "--output", str(out)) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["kruskal_wallis"]["contrast"]["p_value"] == 1.0
    header = (out / "features.csv").read_text().splitlines()[0]
    assert header == "subject_id,contrast,dissimilarity,homogeneity,energy,correlation,label"


def test_passive_simulate_then_texture(tmp_path):
    text = """
[simulate]
kind = passive
[passive]
n_subjects = 6
n_symptomatic = 3
grid = 24, 24
[texture]
levels = 16
"""
    sim = tmp_path / "cohort"
    assert run(tmp_path, text, "simulate", "--output", str(sim)) == 0
    assert len(list(sim.glob("subject_*.thrm"))) == 6
    out = tmp_path / "tex"
    assert run(tmp_path, text + f"[input]\ncohort = {sim}\n", "texture", "--output", str(out)) == 0
    assert (out / "roc.csv").exists() and (out / "model.json").exists()


def test_report_passive_only_deterministic(tmp_path):
    text = """
[report]
active = false
[passive]
n_subjects = 8
n_symptomatic = 4
grid = 24, 24
"""
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(tmp_path, text, "report", "--output", str(a)) == 0
    assert run(tmp_path, text, "report", "--output", str(b), "--threads", "3") == 0
    for name in ("passive_features.csv", "passive_report.json", "passive_roc.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_no_subcommand_and_bad_flag():
    assert cli.main([]) == 2
    assert cli.main(["simulate", "--threads", "zero"]) == 2
