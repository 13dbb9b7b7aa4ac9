import json

import numpy as np
import pandas as pd
import pytest

from robusthalf.cli import EXIT_CONFIG, EXIT_GENERATION, EXIT_INFEASIBLE, EXIT_OK, main
from robusthalf.certify import replay
from robusthalf.core import NormSpec, robust_loss_lp
from robusthalf.datasets import read_dataset, read_json_lines, read_model, write_model
from robusthalf.perturbations import NormBallAdversary


def _gen(tmp_path, name="data", *extra):
    out = tmp_path / name
    argv = ["gen", "--d", "3", "--m", "40", "--gamma", "0.2", "--seed", "7", "--out", str(out), *extra]
    assert main(argv) == EXIT_OK
    return out / "data.csv"


def _record(path):
    return json.loads(path.read_text())


def test_gen_writes_dataset_and_sidecar(tmp_path, capsys):
    data = _gen(tmp_path)
    out = capsys.readouterr().out
    assert "m: 40" in out
    assert data.exists()
    assert (data.parent / "data.json").exists()
    S = read_dataset(data)
    assert S.X.shape == (40, 3)
    assert S.metadata.gamma == 0.2


def test_gen_is_deterministic(tmp_path):
    a = _gen(tmp_path, "a")
    b = _gen(tmp_path, "b")
    assert a.read_bytes() == b.read_bytes()
    assert (a.parent / "data.json").read_bytes() == (b.parent / "data.json").read_bytes()


def test_gen_rejects_large_eta(tmp_path, capsys):
    argv = ["gen", "--d", "3", "--m", "10", "--gamma", "0.2", "--eta", "0.6", "--out", str(tmp_path)]
    assert main(argv) == EXIT_CONFIG
    assert "eta" in capsys.readouterr().err


def test_gen_json_record(tmp_path, capsys):
    record_path = tmp_path / "run.json"
    argv = [
        "gen", "--d", "2", "--m", "12", "--gamma", "0.1", "--eta", "0.2",
        "--out", str(tmp_path / "noisy.csv"), "--json", "--record", str(record_path),
    ]
    assert main(argv) == EXIT_OK
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    saved = _record(record_path)
    assert printed["command"] == saved["command"] == "gen"
    assert saved["artifacts"]["dataset"].endswith("noisy.csv")
    assert 0.0 <= saved["metrics"]["flip_fraction"] <= 1.0


def test_train_rerm_finds_robust_separator(tmp_path):
    data = _gen(tmp_path)
    record_path = tmp_path / "rerm.json"
    model_path = tmp_path / "model.json"
    argv = [
        "train-rerm", "--data", str(data), "--gamma", "0.05", "--p", "2",
        "--out", str(model_path), "--record", str(record_path),
    ]
    assert main(argv) == EXIT_OK
    record = _record(record_path)
    assert record["metrics"]["result"] == "separator"
    assert record["metrics"]["empirical_robust_risk"] == 0.0
    assert model_path.exists()


def test_train_rerm_reports_infeasible(tmp_path, capsys):
    data = _gen(tmp_path, "data", "--overlap", "0.1")
    adversary = json.dumps({"kind": "lp_ball", "p": "inf", "gamma": 0.06})
    record_path = tmp_path / "rerm.json"
    argv = [
        "train-rerm", "--data", str(data), "--adversary", adversary,
        "--bits", "10", "--record", str(record_path),
    ]
    assert main(argv) == EXIT_INFEASIBLE
    record = _record(record_path)
    assert record["metrics"]["result"] == "infeasible"
    assert record["metrics"]["caveat"]


def test_eval_planted_and_negated_models(tmp_path):
    data = _gen(tmp_path)
    S = read_dataset(data)
    good = write_model({"w": S.metadata.w_star}, tmp_path / "good.json")
    bad = write_model({"w": [-v for v in S.metadata.w_star]}, tmp_path / "bad.json")

    assert main(["eval", "--model", str(good), "--data", str(data), "--record", str(tmp_path / "g.json")]) == EXIT_OK
    assert main(["eval", "--model", str(bad), "--data", str(data), "--record", str(tmp_path / "b.json")]) == EXIT_OK
    good_metrics = _record(tmp_path / "g.json")["metrics"]
    bad_metrics = _record(tmp_path / "b.json")["metrics"]
    assert good_metrics["robust_risk"] == 0.0
    assert good_metrics["clean_error"] == 0.0
    assert bad_metrics["robust_risk"] == 1.0
    assert bad_metrics["clean_error"] == 1.0


def test_certify_prints_one_line_per_example(tmp_path, capsys):
    data = _gen(tmp_path)
    S = read_dataset(data)
    model = write_model({"w": S.metadata.w_star}, tmp_path / "model.json")
    capsys.readouterr()

    assert main(["certify", "--model", str(model), "--data", str(data), "--gamma", "0.5", "--p", "2"]) == EXIT_OK
    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]
    assert [line["index"] for line in lines] == list(range(40))
    for line in lines:
        assert line["status"] in {"robust", "counterexample"}
        assert line["method"] == "closed_form"
        if line["status"] == "counterexample":
            assert len(line["z"]) == 3


def test_certify_to_file(tmp_path):
    data = _gen(tmp_path)
    S = read_dataset(data)
    model = write_model({"w": S.metadata.w_star}, tmp_path / "model.json")
    out = tmp_path / "certs.jsonl"
    record_path = tmp_path / "rec.json"
    argv = [
        "certify", "--model", str(model), "--data", str(data),
        "--adversary", '{"kind": "hull", "offsets": [[0, 0, 0], [0.05, 0, 0], [-0.05, 0, 0]]}',
        "--out", str(out), "--record", str(record_path),
    ]
    assert main(argv) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 40
    assert _record(record_path)["metrics"]["counterexamples"] == 0


def test_certify_empty_dataset_is_an_input_error(tmp_path):
    data = tmp_path / "empty.csv"
    data.write_text("y,x1,x2\n")
    model = write_model({"w": [1.0, 0.0]}, tmp_path / "model.json")
    argv = ["certify", "--model", str(model), "--data", str(data), "--gamma", "0.1", "--p", "2"]
    assert main(argv) == EXIT_CONFIG


def test_certify_needs_an_adversary(tmp_path, capsys):
    data = tmp_path / "plain.csv"
    data.write_text("y,x1,x2\n1,0.5,0.0\n")
    model = write_model({"w": [1.0, 0.0]}, tmp_path / "model.json")
    assert main(["certify", "--model", str(model), "--data", str(data)]) == EXIT_CONFIG
    assert "--adversary" in capsys.readouterr().err


def test_reduce_returns_hyperplane(tmp_path, capsys):
    adversary = json.dumps({"kind": "lp_ball", "p": 2, "gamma": 0.1})
    argv = [
        "reduce", "--adversary", adversary, "--x", "0.3,0", "--z", "0.9,0",
        "--gamma", "0.1", "--bits", "8", "--json",
    ]
    assert main(argv) == EXIT_OK
    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    metrics = record["metrics"]
    assert metrics["result"] == "hyperplane"
    assert metrics["w"][0] > 0
    assert metrics["slack"] == pytest.approx(0.05)
    assert metrics["queries"] > 0


def test_train_rcn_writes_model(tmp_path, capsys):
    data = tmp_path / "noisy"
    gen = ["gen", "--d", "3", "--m", "200", "--gamma", "0.2", "--eta", "0.1", "--seed", "5", "--out", str(data)]
    assert main(gen) == EXIT_OK
    model_path = tmp_path / "model.json"
    capsys.readouterr()
    argv = [
        "train-rcn", "--data", str(data / "data.csv"), "--steps", "500",
        "--holdout-m", "100", "--out", str(model_path), "--json",
    ]
    assert main(argv) == EXIT_OK
    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    metrics = record["metrics"]
    assert metrics["steps"] == 500
    assert 0.0 <= metrics["holdout_margin_error_fraction"] <= 1.0
    assert metrics["transcript"]
    saved = json.loads(model_path.read_text())
    assert saved["q"] == 2.0
    assert len(saved["w"]) == 3


def test_config_file_values_yield_to_flags(tmp_path):
    data = _gen(tmp_path)
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"steps": 300, "seed": 3, "eta": 0.1}))
    record_path = tmp_path / "rec.json"
    argv = [
        "train-rcn", "--data", str(data), "--config", str(config),
        "--seed", "4", "--record", str(record_path),
    ]
    assert main(argv) == EXIT_OK
    record = _record(record_path)
    assert record["seed"] == 4
    assert record["metrics"]["steps"] == 300
    assert record["config"]["surrogate_spec"]["eta"] == 0.1


def test_config_file_supplies_required_flags(tmp_path):
    config = tmp_path / "gen.json"
    config.write_text(json.dumps({"d": 2, "m": 5, "gamma": 0.1}))
    out = tmp_path / "out"
    assert main(["gen", "--config", str(config), "--out", str(out)]) == EXIT_OK
    assert read_dataset(out / "data.csv").X.shape == (5, 2)


def test_config_file_unknown_key(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"d": 2, "m": 5, "gamma": 0.1, "warp_speed": 9}))
    assert main(["gen", "--config", str(config), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "warp_speed" in capsys.readouterr().err


def test_missing_required_flag_exits_through_argparse():
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--m", "5", "--gamma", "0.1", "--out", "x"])
    assert exc.value.code == 2


def test_sweep_cell_matches_single_training_run(tmp_path):
    data = tmp_path / "cell"
    gen = ["gen", "--d", "3", "--m", "150", "--gamma", "0.2", "--eta", "0.1", "--seed", "5", "--out", str(data)]
    assert main(gen) == EXIT_OK
    model_path = tmp_path / "model.json"
    train = ["train-rcn", "--data", str(data / "data.csv"), "--steps", "400", "--seed", "5", "--out", str(model_path)]
    assert main(train) == EXIT_OK

    table = tmp_path / "sweep.csv"
    sweep = [
        "sweep", "--etas", "0.1", "--gammas", "0.2", "--epsilons", "0.1", "--ps", "2",
        "--d", "3", "--m", "150", "--holdout-m", "50", "--steps", "400", "--seed", "5",
        "--out", str(table),
    ]
    assert main(sweep) == EXIT_OK
    rows = pd.read_csv(table, dtype=str).to_dict("records")
    assert len(rows) == 1
    row = rows[0]
    assert row["seed"] == "5"
    assert int(row["steps"]) == 400
    assert float(row["bound"]) == pytest.approx(0.1 + 0.1 + 0.02)
    w_sweep = np.array([float(v) for v in row["w"].split()])
    w_single = np.array(json.loads(model_path.read_text())["w"])
    np.testing.assert_allclose(w_sweep, w_single, atol=1e-9)


def test_sweep_grid_size(tmp_path):
    table = tmp_path / "grid.csv"
    argv = [
        "sweep", "--etas", "0,0.1", "--gammas", "0.2", "--ps", "2,inf", "--reps", "2",
        "--d", "2", "--m", "40", "--holdout-m", "20", "--steps", "50",
        "--out", str(table), "--record", str(tmp_path / "rec.json"),
    ]
    assert main(argv) == EXIT_OK
    rows = pd.read_csv(table, dtype=str).to_dict("records")
    assert len(rows) == 8
    assert {r["p"] for r in rows} == {"2.0", "inf"}
    assert _record(tmp_path / "rec.json")["metrics"]["cells"] == 8


def test_gen_unreachable_margin_is_a_generation_error(tmp_path, capsys):
    argv = ["gen", "--d", "50", "--m", "2", "--gamma", "0.9", "--out", str(tmp_path)]
    assert main(argv) == EXIT_GENERATION
    assert "margin" in capsys.readouterr().err


def test_train_rerm_bias_on_affine_plant(tmp_path):
    out = tmp_path / "affine"
    gen = ["gen", "--d", "2", "--m", "40", "--gamma", "0.2", "--seed", "8", "--plant-bias", "0.3", "--out", str(out)]
    assert main(gen) == EXIT_OK
    record_path = tmp_path / "rerm.json"
    argv = [
        "train-rerm", "--data", str(out / "data.csv"), "--gamma", "0.05", "--p", "2",
        "--bias", "--record", str(record_path),
    ]
    assert main(argv) == EXIT_OK
    assert _record(record_path)["metrics"]["empirical_robust_risk"] == 0.0


def test_certificate_lines_replay(tmp_path):
    data = _gen(tmp_path)
    S = read_dataset(data)
    model = write_model({"w": S.metadata.w_star}, tmp_path / "model.json")
    out = tmp_path / "certs.jsonl"
    argv = ["certify", "--model", str(model), "--data", str(data), "--gamma", "0.5", "--p", "2", "--out", str(out)]
    assert main(argv) == EXIT_OK

    h, _ = read_model(model)
    adv = NormBallAdversary(0.5, NormSpec(2))
    for line in read_json_lines(out):
        ex = S[line["index"]]
        again = replay(adv, h, ex, line)
        assert again.to_dict()["status"] == line["status"]
        assert line["status"] == ("counterexample" if robust_loss_lp(h, ex, 0.5, NormSpec(2)) else "robust")


@pytest.mark.parametrize("flag, value", [("--x", "0.3,abc"), ("--z", "0.9;0")])
def test_reduce_rejects_malformed_vectors(flag, value, capsys):
    adversary = json.dumps({"kind": "lp_ball", "p": 2, "gamma": 0.1})
    args = {"--x": "0.3,0", "--z": "0.9,0"} | {flag: value}
    argv = ["reduce", "--adversary", adversary, "--x", args["--x"], "--z", args["--z"], "--gamma", "0.1"]
    assert main(argv) == EXIT_CONFIG
    assert flag in capsys.readouterr().err


def test_sweep_rejects_malformed_grid(tmp_path, capsys):
    argv = ["sweep", "--etas", "0,zero", "--d", "2", "--m", "20", "--out", str(tmp_path / "grid.csv")]
    assert main(argv) == EXIT_CONFIG
    assert "--etas" in capsys.readouterr().err


def test_train_rcn_record_is_byte_identical_across_runs(tmp_path):
    data = _gen(tmp_path)
    record_path = tmp_path / "rec.json"
    argv = ["train-rcn", "--data", str(data), "--steps", "300", "--seed", "2", "--record", str(record_path)]
    assert main(argv) == EXIT_OK
    first = record_path.read_bytes()
    assert main(argv) == EXIT_OK
    assert record_path.read_bytes() == first
    assert "wall_time" not in _record(record_path)["metrics"]
