import csv
import io
import json

import pytest

from pcfg_scaling.cli import main
from pcfg_scaling.lawfit import ScalingLaw
from pcfg_scaling.runstore import BUNDLE_ENV

PUBLISHED = {
    "parameters": [
        {"parameter": "E", "m": 3.92, "n": -1.56},
        {"parameter": "A", "m": -16.20, "n": 20.48},
        {"parameter": "B", "m": -24.77, "n": 18.73},
        {"parameter": "alpha", "m": -0.87, "n": 1.16},
        {"parameter": "beta", "m": -2.34, "n": 1.55},
    ]
}
LAW_KEYS = {"e", "a", "b", "alpha", "beta"}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def published(tmp_path):
    path = tmp_path / "regs.json"
    path.write_text(json.dumps(PUBLISHED))
    return path


def write_law(tmp_path, law: ScalingLaw, name="law.json"):
    path = tmp_path / name
    path.write_text(json.dumps(law.to_dict()))
    return path


def test_regress_schema(capsys):
    code, out, err = run(capsys, "regress", "fitted_laws")
    assert code == 0 and err == ""
    rows = json.loads(out)["parameters"]
    assert [r["parameter"] for r in rows] == ["E", "A", "B", "alpha", "beta"]
    for r in rows:
        assert set(r) == {"parameter", "m", "n", "p", "r2", "points_used", "exclusions"}
    assert rows[0]["exclusions"] == [3]


def test_regress_cli_exclusions(capsys):
    code, out, _ = run(capsys, "regress", "fitted_laws", "--no-file-exclusions", "--exclude", "beta:0")
    rows = {r["parameter"]: r for r in json.loads(out)["parameters"]}
    assert code == 0 and rows["E"]["exclusions"] == [] and rows["beta"]["exclusions"] == [0]
    assert run(capsys, "regress", "fitted_laws", "--exclude", "gamma:1")[0] == 1


def test_predict_equiproportional_point(capsys, published):
    code, out, _ = run(capsys, "predict", published, "--h", 0.27, "--epsilon", 1)
    data = json.loads(out)
    assert code == 0 and set(data["law"]) == LAW_KEYS
    assert abs(data["law"]["alpha"] - data["law"]["beta"]) < 0.02
    assert data["frontier_exponents"]["n_opt"] + data["frontier_exponents"]["d_opt"] == pytest.approx(1)


def test_predict_with_budgets_and_primes(capsys, published):
    code, out, _ = run(
        capsys, "predict", published, "--h", 0.3, "--epsilon", 0.5,
        "--primes-file", "chinchilla_primes", "--budgets", "1e18,1e20",
    )
    data = json.loads(out)
    assert code == 0 and [row["C"] for row in data["frontier"]] == [1e18, 1e20]


def test_predict_domain_error(capsys, published):
    code, out, err = run(capsys, "predict", published, "--h", 0.7)
    assert code == 2 and out == ""
    assert "beta" in err


def test_frontier_symmetric(capsys, tmp_path):
    law = write_law(tmp_path, ScalingLaw(0.0, 2.0, 2.0, 0.5, 0.5))
    code, out, _ = run(capsys, "frontier", law, "--budgets", "6e18")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and list(rows[0]) == ["C", "N_opt", "D_opt", "predicted_loss"]
    assert float(rows[0]["N_opt"]) == pytest.approx(1e9) and float(rows[0]["D_opt"]) == pytest.approx(1e9)


def test_synth_then_fit_roundtrip(capsys, tmp_path):
    truth = ScalingLaw(1.0, 20.0, 15.0, 0.9, 1.1)
    law = write_law(tmp_path, truth)
    code, out, _ = run(capsys, "synth", law, "--noise", 0)
    assert code == 0 and out.startswith("dataset_id,params_n,tokens_d,final_loss\n")
    runs = tmp_path / "runs.csv"
    runs.write_text(out)
    code, out, _ = run(capsys, "fit", runs, "--out", tmp_path / "fit.json")
    data = json.loads(out)
    assert code == 0 and set(data) >= {"law", "objective", "config", "provenance", "chosen_init", "converged"}
    assert data["provenance"]["runs_file"] == str(runs)
    for key in ("a", "b", "alpha", "beta"):
        assert data["law"][key] == pytest.approx(getattr(truth, key), rel=0.01)
    assert (tmp_path / "fit.json").read_text() == out
    code, out, _ = run(capsys, "frontier", tmp_path / "fit.json", "--budgets", "1e18")
    assert code == 0 and len(out.splitlines()) == 2


def test_synth_seed_reporting(capsys, tmp_path):
    law = write_law(tmp_path, ScalingLaw(1.0, 20.0, 15.0, 0.9, 1.1))
    code, out, err = run(capsys, "synth", law, "--noise", 0.01)
    assert code == 0 and err.startswith("seed=")
    seed = int(err.split("=")[1])
    assert run(capsys, "synth", law, "--noise", 0.01, "--seed", seed)[1] == out
    code, out, _ = run(capsys, "synth", law, "--grid", "1e6,2e6;1e5", "--format", "JSONL")
    assert code == 0 and len(out.splitlines()) == 2 and json.loads(out.splitlines()[0])["params_n"] == 1e6


def test_fit_rejects_negative_losses_unless_allowed(capsys, tmp_path):
    law = write_law(tmp_path, ScalingLaw(-0.734, 18.205, 15.803, 1.053, 1.307))
    runs = tmp_path / "runs.csv"
    runs.write_text(run(capsys, "synth", law)[1])
    code, out, err = run(capsys, "fit", runs)
    assert code == 1 and out == "" and "line 2" in err
    assert run(capsys, "fit", runs, "--allow-nonpositive-loss")[0] == 0


def test_gen_and_measure(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(BUNDLE_ENV, str(tmp_path / "env-bundle"))
    args = ("gen", "complexity_sweep", "--row", 2, "--docs", 20, "--context-length", 256, "--dataset-id", "r2")
    code, out, err = run(capsys, *args)
    manifest = json.loads(out)
    assert code == 0 and "wrote" in err
    assert set(manifest) >= {"dataset_id", "grammar_spec", "compressibility", "corpus_path", "created_at", "tool_version"}
    corpus = tmp_path / "env-bundle" / "corpora" / "r2.gsc"
    first = corpus.read_bytes()
    assert run(capsys, *args)[0] == 0 and corpus.read_bytes() == first

    mpath = tmp_path / "env-bundle" / "manifests" / "r2.json"
    code, out, err = run(capsys, "measure", mpath, "--summary")
    report = json.loads(out)
    assert code == 0 and err.startswith("seed=")
    assert report["mean"] == manifest["compressibility"]["mean"]
    assert set(report) == {"compressor_id", "mean", "median", "mode", "sample_size", "stddev"}
    ratios = tmp_path / "ratios.csv"
    run(capsys, "measure", corpus, "--seed", 1, "--sample", 5, "--ratios-csv", ratios)
    assert ratios.read_text().startswith("doc_index,ratio\n") and len(ratios.read_text().splitlines()) == 6


def test_gen_requires_row_for_suite(capsys, tmp_path):
    code, out, err = run(capsys, "gen", "complexity_sweep", "--out", tmp_path)
    assert code == 1 and out == "" and "--row" in err


def test_lines(capsys, published):
    code, out, _ = run(capsys, "lines", published, "--h-min", 0, "--h-max", 0.6, "--steps", 4)
    assert code == 0 and out.splitlines()[0] == "h,E,A,B,alpha,beta" and len(out.splitlines()) == 5


def test_usage_errors(capsys):
    assert run(capsys, "fit")[0] == 1
    assert run(capsys, "frontier", "x.json", "--bogus")[0] == 1
    assert run(capsys, "nonsense")[0] == 1
    code, out, err = run(capsys, "frontier", "missing.json", "--budgets", "1e18")
    assert code == 1 and out == "" and "missing.json" in err
    with pytest.raises(SystemExit) as info:
        main(["predict", "--help"])
    assert info.value.code == 0
