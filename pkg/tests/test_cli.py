import json

import numpy as np
import pytest

from excursion_kit import __version__
from excursion_kit.cli import main
from excursion_kit.data import PanelDataset
from excursion_kit.ingestion import save_panel, write_pamap2_fixture


def read(path):
    lines = path.read_text().splitlines()
    return json.loads(lines[0]), [json.loads(x) for x in lines[1:]], lines


@pytest.fixture(scope="module")
def pamap2(tmp_path_factory):
    return write_pamap2_fixture(tmp_path_factory.mktemp("cli") / "pamap2.txt")


def archive(tmp_path, p, A=None, name="panel.json"):
    p = np.asarray(p, float)
    n = p.size
    A = np.ones(n, dtype=int) if A is None else np.asarray(A)
    rng = np.random.default_rng(0)
    panel = PanelDataset(np.repeat(["a", "b"], n // 2).astype(object), np.tile(np.arange(1, n // 2 + 1), 2), A,
                         rng.integers(0, 2, n), np.ones(n, dtype=int), rng.standard_normal((n, 1)), p, ("x",))
    path = tmp_path / name
    save_panel(panel, path)
    return path


SIM_CONFIG = {"scenarios": [{"n": 20, "T": 5, "p_t_spec": 0.5, "name": "tiny"}], "methods": "all"}


def sim_config(tmp_path, doc=SIM_CONFIG, name="sim.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_estimate_on_fixture_reports_three_methods(tmp_path, pamap2):
    out = tmp_path / "est.jsonl"
    rc = main(["estimate", "--data", str(pamap2), "--dataset", "pamap2", "--methods", "all",
               "--output", str(out)])
    assert rc == 0
    manifest, recs, _ = read(out)
    assert [r["method"] for r in recs] == ["IPW", "EMEE", "DR-EMEE"]
    for r in recs:
        assert r["n_clusters"] == 9
        for k in ("tau_hat", "se_naive", "se_corrected", "se_cluster", "ci_lo", "ci_hi", "ci_normal", "ci_t"):
            assert k in r
        assert r["ci_lo"] < r["ci_hi"]
    assert "mean_w" in recs[0] and "trunc_pct" in recs[0]
    assert manifest["command"] == "estimate" and manifest["artifact_version"] == __version__
    assert manifest["input_digests"][str(pamap2)].startswith("sha256:")
    assert manifest["resolved_config"]["methods"] == ["IPW", "EMEE", "DR-EMEE"]


def test_estimate_echoes_truncation(tmp_path, pamap2):
    out = tmp_path / "one.jsonl"
    rc = main(["estimate", "--data", str(pamap2), "--dataset", "pamap2", "--methods", "dr-emee",
               "--trunc", "q:0.01,0.99", "--output", str(out)])
    assert rc == 0
    manifest, recs, _ = read(out)
    assert len(recs) == 1 and recs[0]["method"] == "DR-EMEE"
    assert recs[0]["config"]["trunc"] == "q:0.01,0.99"
    lo, hi = recs[0]["bounds"]
    assert 0 < lo < hi
    assert manifest["resolved_config"]["trunc"] == "q:0.01,0.99"


def test_unknown_method_is_rejected(tmp_path, pamap2, capsys):
    rc = main(["estimate", "--data", str(pamap2), "--dataset", "pamap2", "--methods", "tmle",
               "--output", str(tmp_path / "x.jsonl")])
    assert rc != 0
    err = capsys.readouterr().err
    assert "tmle" in err and "IPW, EMEE, DR-EMEE, DR-EMEE2" in err


def test_degenerate_arm_exits_nonzero_with_named_error(tmp_path):
    out = tmp_path / "deg.jsonl"
    rc = main(["estimate", "--data", str(archive(tmp_path, np.full(6, 0.5))), "--nuisance", "design",
               "--methods", "IPW", "--output", str(out)])
    assert rc == 1
    _, recs, _ = read(out)
    assert recs[-1]["record"] == "error" and "DegenerateArmError" in recs[-1]["message"]


def test_archive_and_table_inputs_agree(tmp_path, pamap2):
    arc = tmp_path / "p.json"
    assert main(["derive", "--data", str(pamap2), "--dataset", "pamap2", "--archive", str(arc),
                 "--output", str(tmp_path / "d.jsonl")]) == 0
    _, recs, _ = read(tmp_path / "d.jsonl")
    assert recs[0]["n_subjects"] == 9
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    main(["estimate", "--data", str(pamap2), "--dataset", "pamap2", "--output", str(a)])
    main(["estimate", "--data", str(arc), "--output", str(b)])
    ta = [r["tau_hat"] for r in read(a)[1]]
    tb = [r["tau_hat"] for r in read(b)[1]]
    assert ta == tb


def test_scenario_flag_restricts_covariates(tmp_path, pamap2):
    out = tmp_path / "s2.jsonl"
    assert main(["estimate", "--data", str(pamap2), "--dataset", "pamap2", "--scenario", "S2",
                 "--output", str(out)]) == 0
    manifest, recs, _ = read(out)
    assert manifest["resolved_config"]["scenario"] == "S2"
    assert recs[0]["config"]["nuisance"]["treatment_columns"] == ["chest_acc_x", "chest_acc_z", "chest_temp"]


def test_diagnose_weights_default_sweep(tmp_path, pamap2):
    out = tmp_path / "diag.jsonl"
    assert main(["diagnose-weights", "--data", str(pamap2), "--dataset", "pamap2", "--output", str(out)]) == 0
    _, recs, _ = read(out)
    assert [r["trunc"] for r in recs] == ["0.01,10", "0.05,20", "0.1,5"]
    for r in recs:
        assert {"mean_w", "sd_w", "cv_w", "max_w", "trunc_pct"} <= set(r)


def test_constant_probability_weights_have_mean_one(tmp_path):
    out = tmp_path / "c.jsonl"
    data = archive(tmp_path, np.full(10, 0.3), A=[1, 0] * 5)
    assert main(["diagnose-weights", "--data", str(data), "--nuisance", "design", "--output", str(out)]) == 0
    _, recs, _ = read(out)
    for r in recs:
        assert abs(r["mean_w"] - 1.0) < 1e-9 and r["trunc_pct"] == 0.0


def test_extreme_weight_is_truncated_only_by_tight_bounds(tmp_path):
    # intercept-only numerator gives p_tilde = mean(p) = 0.1802, so the first weight is 0.1802 / 0.02 = 9.01
    out = tmp_path / "x.jsonl"
    data = archive(tmp_path, [0.02] + [0.198] * 9)
    assert main(["diagnose-weights", "--data", str(data), "--nuisance", "design",
                 "--trunc", "0.01,10", "--trunc", "0.05,20", "--trunc", "0.1,5", "--output", str(out)]) == 0
    _, recs, _ = read(out)
    by = {r["trunc"]: r for r in recs}
    assert by["0.1,5"]["trunc_pct"] == pytest.approx(0.1)
    assert by["0.01,10"]["trunc_pct"] == 0.0 and by["0.05,20"]["trunc_pct"] == 0.0
    assert by["0.01,10"]["max_w"] == pytest.approx(9.01)
    assert by["0.1,5"]["max_w"] == 5.0


def test_simulate_single_replication(tmp_path):
    out = tmp_path / "sim.jsonl"
    assert main(["simulate", "--config", str(sim_config(tmp_path)), "--reps", "1", "--workers", "1",
                 "--output", str(out)]) == 0
    manifest, recs, _ = read(out)
    assert [r["method"] for r in recs] == ["IPW", "EMEE", "DR-EMEE"]
    for r in recs:
        assert "mc_se" in r and r["coverage"] in (0.0, 1.0) and "re" in r
        assert "runtime_sec" not in r
    assert manifest["resolved_config"]["scenarios"][0]["reps"] == 1
    assert manifest["timings"][0]["scenario"] == "tiny"


def test_simulate_payloads_are_byte_identical(tmp_path):
    cfg = sim_config(tmp_path)
    outs = []
    for i, workers in enumerate(("1", "2")):
        out = tmp_path / f"run{i}.jsonl"
        assert main(["simulate", "--config", str(cfg), "--reps", "6", "--seed", "9", "--workers", workers,
                     "--output", str(out)]) == 0
        outs.append(read(out)[2][1:])
    assert outs[0] == outs[1]


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = sim_config(tmp_path)
    out = tmp_path / "s.jsonl"
    monkeypatch.setenv("EXCURSION_KIT_SEED", "77")
    main(["simulate", "--config", str(cfg), "--reps", "1", "--workers", "1", "--output", str(out)])
    assert read(out)[0]["seed"] == 77
    main(["simulate", "--config", str(cfg), "--reps", "1", "--workers", "1", "--seed", "5", "--output", str(out)])
    assert read(out)[0]["seed"] == 5
    monkeypatch.setenv("EXCURSION_KIT_SEED", "abc")
    assert main(["simulate", "--config", str(cfg), "--reps", "1", "--output", str(out)]) == 2


def test_yaml_config_and_flag_override(tmp_path):
    cfg = tmp_path / "sim.yaml"
    cfg.write_text("scenarios:\n  - {n: 20, T: 5, name: y}\nmethods: [IPW]\nreps: 3\ntrunc: '0.1,5'\n")
    out = tmp_path / "y.jsonl"
    assert main(["simulate", "--config", str(cfg), "--reps", "2", "--workers", "1", "--output", str(out)]) == 0
    manifest, recs, _ = read(out)
    scn = manifest["resolved_config"]["scenarios"][0]
    assert scn["reps"] == 2 and scn["trunc_spec"] == "0.1,5"
    assert [r["method"] for r in recs] == ["IPW"]


@pytest.mark.parametrize("doc,fragment", [
    ({"repz": 3}, "repz"),
    ({"scenarios": [{"n": 20, "Tee": 5}]}, "scenarios[0]"),
    ({"scenarios": [{"n": 1}]}, "n >= 2"),
])
def test_config_errors_name_the_key(tmp_path, capsys, doc, fragment):
    rc = main(["simulate", "--config", str(sim_config(tmp_path, doc, "bad.json")), "--output",
               str(tmp_path / "o.jsonl")])
    assert rc == 2
    err = capsys.readouterr().err
    assert fragment in err and "bad.json" in err


def test_unparseable_config(tmp_path, capsys):
    cfg = tmp_path / "broken.yaml"
    cfg.write_text("a: [1, 2\n")
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert "broken.yaml" in capsys.readouterr().err


def test_fixture_command(tmp_path):
    out = tmp_path / "f.jsonl"
    path = tmp_path / "m.csv"
    assert main(["fixture", "mhealth", str(path), "--output", str(out)]) == 0
    _, recs, _ = read(out)
    assert recs[0]["digest"].startswith("sha256:") and path.exists()
