import csv
import json

import numpy as np
import pytest

from amdyn.cli import main
from amdyn.corpus import generate_synthetic_corpus, write_corpus
from amdyn.estimation import Conversation, Turn


def read_csv(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    # 60/60 at this seed separates cleanly (p ~ 0.002 for the amd_var row);
    # power checks for the full-size fixture live in the acceptance suite
    path = tmp_path_factory.mktemp("corpus") / "small.jsonl"
    write_corpus(generate_synthetic_corpus(60, 60, 20, seed=101), path)
    return path


def test_bifurcation_table_matches_published_thresholds(tmp_path):
    out = tmp_path / "bif"
    code = main(
        [
            "bifurcation-table",
            "--no-sweep",
            "--no-figures",
            "--out-dir",
            str(out),
        ]
    )
    assert code == 0
    rows = {(row["alpha"], row["beta"]): row for row in read_csv(out / "bifurcation.csv")}
    assert rows[("2.0", "2.0")]["kappa_minus"] == "unique"
    k_minus = float(rows[("2.0", "3.0")]["kappa_minus"])
    k_plus = float(rows[("2.0", "3.0")]["kappa_plus"])
    assert abs(k_minus - 0.862) < 5e-4
    assert abs(k_plus - 1.138) < 5e-4


def test_hysteresis_rows_and_figure(tmp_path):
    out = tmp_path / "hyst"
    code = main(
        [
            "hysteresis",
            "--alpha",
            "2",
            "--beta",
            "3",
            "--kappa-min",
            "0.5",
            "--kappa-max",
            "1.5",
            "--step",
            "0.01",
            "--iterations",
            "2000",
            "--out-dir",
            str(out),
        ]
    )
    assert code == 0
    rows = read_csv(out / "hysteresis.csv")
    assert len(rows) == 2 * 101
    assert (out / "hysteresis.png").exists()
    jumps = [row for row in rows if row["jump_flag"] == "1"]
    assert len(jumps) == 2


def test_hysteresis_rerun_byte_identical(tmp_path):
    args = [
        "hysteresis",
        "--alpha",
        "2",
        "--beta",
        "3",
        "--step",
        "0.02",
        "--iterations",
        "1000",
        "--no-figures",
    ]
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(args + ["--out-dir", str(out_a)]) == 0
    assert main(args + ["--out-dir", str(out_b)]) == 0
    assert (out_a / "hysteresis.csv").read_bytes() == (out_b / "hysteresis.csv").read_bytes()


def test_confound_demo_values(tmp_path, capsys):
    assert main(["confound-demo", "--out-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "confound_demo.json").read_text())
    assert report["marginal_divergence"] == pytest.approx(0.64, abs=1e-12)
    assert report["conditional_divergence"] == 0.0
    assert report["context_divergence"] == pytest.approx(0.8, abs=1e-12)
    assert report["decomposition"]["slack"] == pytest.approx(0.16, abs=1e-12)
    assert report["confound_detected"] is True


def test_estimator_demo_small_sample_warning(tmp_path, capsys):
    assert main(
        ["estimator-demo", "--condition", "C1", "--n", "10", "--seed", "4", "--out-dir", str(tmp_path)]
    ) == 0
    captured = capsys.readouterr()
    assert "warning" in captured.err
    report = json.loads((tmp_path / "estimator_demo.json").read_text())
    assert report["small_sample_warning"] is True
    assert report["recommended_samples"] == 738


def test_estimator_demo_recovers_population(tmp_path):
    assert main(
        ["estimator-demo", "--condition", "C2", "--n", "1000", "--seed", "3", "--out-dir", str(tmp_path)]
    ) == 0
    report = json.loads((tmp_path / "estimator_demo.json").read_text())
    assert abs(report["estimated"]["conditional_divergence"] - 0.6) < 0.05
    assert abs(report["estimated"]["marginal_divergence"] - 0.0) < 0.05


def test_csd_command_outputs(small_corpus, tmp_path):
    out = tmp_path / "csd"
    code = main(
        [
            "csd",
            "--corpus",
            str(small_corpus),
            "--permutations",
            "500",
            "--seed",
            "1",
            "--out-dir",
            str(out),
        ]
    )
    assert code == 0
    rows = read_csv(out / "csd_report.csv")
    indicators = {row["indicator"] for row in rows}
    assert {"amd_var", "amd_ac1", "lexdiv_var", "lexdiv_ac1"} <= indicators
    amd_var = next(row for row in rows if row["indicator"] == "amd_var")
    assert float(amd_var["p"]) < 0.05
    assert int(amd_var["N"]) == 120
    detail = json.loads((out / "per_conversation.json").read_text())
    assert len(detail) == 120
    assert all("taus" in entry and "anchors" in entry for entry in detail)
    assert (out / "csd_report.png").exists()


def test_csd_rerun_byte_identical(small_corpus, tmp_path):
    args = [
        "csd",
        "--corpus",
        str(small_corpus),
        "--permutations",
        "200",
        "--seed",
        "9",
        "--no-figures",
    ]
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(args + ["--out-dir", str(out_a)]) == 0
    assert main(args + ["--out-dir", str(out_b)]) == 0
    for name in ("csd_report.csv", "per_conversation.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_user_channels_flow_through(tmp_path):
    # external per-turn signals (e.g. classifier outputs) become indicator rows
    rng = np.random.default_rng(5)
    conversations = []
    for i in range(16):
        label = "derail" if i % 2 else "civil"
        scale = np.ones(14)
        if label == "derail":
            scale[-6:] = np.linspace(1, 5, 6)
        turns = []
        for t in range(14):
            turns.append(
                Turn(
                    speaker="a" if t % 2 == 0 else "b",
                    index=t,
                    text="steady topic words",
                    emotion_dist=np.array([0.5, 0.5]),
                    channels={"toxicity": float(rng.normal(0, scale[t]))},
                )
            )
        conversations.append(
            Conversation(
                id=f"conv{i:02d}",
                turns=tuple(turns),
                label=label,
                breakdown_index=13 if label == "derail" else None,
            )
        )
    corpus_path = tmp_path / "channels.jsonl"
    write_corpus(conversations, corpus_path)
    out = tmp_path / "out"
    assert main(
        [
            "csd",
            "--corpus",
            str(corpus_path),
            "--permutations",
            "300",
            "--seed",
            "2",
            "--no-figures",
            "--out-dir",
            str(out),
        ]
    ) == 0
    rows = read_csv(out / "csd_report.csv")
    tox = next(row for row in rows if row["indicator"] == "toxicity_var")
    assert int(tox["N"]) == 16
    assert float(tox["p"]) < 0.1


def test_leadtime_and_sensitivity_and_stratify(small_corpus, tmp_path):
    out = tmp_path / "scan"
    base = [
        "--corpus",
        str(small_corpus),
        "--permutations",
        "300",
        "--seed",
        "6",
        "--out-dir",
        str(out),
    ]
    assert main(["leadtime", "--k-shift", "2"] + base) == 0
    lead_rows = read_csv(out / "leadtime.csv")
    ks = {row["k"] for row in lead_rows if row["indicator"] == "amd_var"}
    assert ks == {"0", "1", "2"}
    assert (out / "leadtime.png").exists()

    assert main(["sensitivity", "--windows", "5,6"] + base) == 0
    sens_rows = read_csv(out / "sensitivity.csv")
    assert {row["window"] for row in sens_rows} == {"5", "6"}
    amd_ps = [float(row["p"]) for row in sens_rows if row["indicator"] == "amd_var"]
    assert any(p < 0.05 for p in amd_ps)

    assert main(["stratify", "--bins", "5-6,7-19,20+"] + base) == 0
    strat_rows = read_csv(out / "stratify.csv")
    twenty = [row for row in strat_rows if row["stratum"] == "20+" and row["indicator"] == "amd_var"]
    assert twenty and twenty[0]["analyzed"] == "yes"
    empty = [row for row in strat_rows if row["stratum"] == "5-6" and row["indicator"] == "amd_var"]
    assert empty and empty[0]["analyzed"] == "not analyzed"


def test_generate_corpus_cli_round_trip(tmp_path):
    path = tmp_path / "gen.jsonl"
    assert main(
        [
            "generate-corpus",
            "--out",
            str(path),
            "--n-derail",
            "3",
            "--n-civil",
            "2",
            "--turns",
            "20",
            "--seed",
            "123",
        ]
    ) == 0
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 5
    first = json.loads(lines[0])
    assert first["label"] == "derail"
    assert first["breakdown_index"] == 19


def test_cli_reports_corpus_errors(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{}\n")
    code = main(["csd", "--corpus", str(bad), "--out-dir", str(tmp_path / "o")])
    captured = capsys.readouterr()
    assert code == 1
    assert "line 1" in captured.err
