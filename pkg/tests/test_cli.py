"""Command-line tests, run in process through `main(argv)`.

A module-scoped workspace builds one micro pipeline (30 episodes, tiny
models) that the individual tests then inspect.
"""

import csv
import json
import logging

import pytest

from tutor_rl import EvalReport, load_dataset, load_qfunction
from tutor_rl.cli import main
from tutor_rl.persist import dataset_digest


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    paths = {
        "orig": str(d / "orig.jsonl"),
        "bc": str(d / "bc.json"),
        "q": str(d / "q.json"),
        "plus": str(d / "plus.jsonl"),
        "explo": str(d / "explo.jsonl"),
        "rep_bc": str(d / "rep_bc.json"),
        "rep_base": str(d / "rep_base.json"),
        "dir": d,
    }
    assert main(["generate", "--episodes", "30", "--seed", "5",
                 "--out", paths["orig"]]) == 0
    assert main(["train", "--algo", "bc_table", "--data", paths["orig"],
                 "--out", paths["bc"]]) == 0
    assert main(["train", "--algo", "fqi_tabular", "--iterations", "10",
                 "--data", paths["orig"], "--out", paths["q"]]) == 0
    assert main(["augment", "--data", paths["orig"], "--q", paths["q"],
                 "--bc", paths["bc"], "--seed", "7", "--top-k", "3",
                 "--rollouts", "2", "--out", paths["plus"],
                 "--exploratory-out", paths["explo"]]) == 0
    assert main(["evaluate", "--model", paths["bc"], "--episodes", "15",
                 "--seed", "3", "--out", paths["rep_bc"]]) == 0
    assert main(["evaluate", "--arm", "baseline", "--episodes", "15",
                 "--seed", "3", "--out", paths["rep_base"]]) == 0
    return paths


# ------------------------------------------------------------------- verbs


def test_generate_wrote_a_loadable_dataset(ws):
    d = load_dataset(ws["orig"])
    assert len(d) == 30
    assert all(ep.provenance == "original" for ep in d.episodes)


def test_generate_reruns_byte_identical(tmp_path):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    for out in (a, b):
        assert main(["generate", "--episodes", "10", "--seed", "21",
                     "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.jsonl.meta.json").read_bytes() == \
        (tmp_path / "b.jsonl.meta.json").read_bytes()


def test_stats_reports_the_dataset(ws, capsys):
    assert main(["stats", "--data", ws["orig"]]) == 0
    payload = json.loads(capsys.readouterr().out)
    d = load_dataset(ws["orig"])
    assert payload["n_episodes"] == 30
    assert payload["content_digest"] == dataset_digest(d)
    assert payload["config_fingerprint"] == d.config_fingerprint
    assert 0 <= payload["success_rate_pct"] <= 100
    assert 0 < payload["diversity_pct"] <= 100


def test_annotate_identity_round_trip(ws, tmp_path):
    out = str(tmp_path / "ann.jsonl")
    assert main(["annotate", "--data", ws["orig"], "--out", out]) == 0
    src = load_dataset(ws["orig"])
    ann = load_dataset(out)
    assert ann.episodes == src.episodes
    assert dataset_digest(ann) == dataset_digest(src)


def test_annotate_from_records_file(tmp_path):
    records = {
        "problem_id": "toy",
        "episodes": [
            {
                "seed": 1,
                "turns": [
                    {"answers": [False] * 18, "mistake_votes": [False] * 3},
                    {"answers": [False] * 18, "mistake_votes": [False] * 3,
                     "tutor_action": "instruct", "solved": True},
                ],
            }
        ],
    }
    rec_path = tmp_path / "records.json"
    rec_path.write_text(json.dumps(records))
    out = str(tmp_path / "from_records.jsonl")
    assert main(["annotate", "--records", str(rec_path), "--out", out]) == 0
    d = load_dataset(out)
    assert len(d) == 1
    assert d.episodes[0].success


def test_train_neural_twins(ws, tmp_path):
    cql_out = str(tmp_path / "cql.json")
    fqi_out = str(tmp_path / "nfqi.json")
    assert main(["train", "--algo", "cql", "--train-steps", "120",
                 "--seed", "2", "--data", ws["orig"], "--out", cql_out]) == 0
    assert main(["train", "--algo", "neural_fqi", "--train-steps", "120",
                 "--seed", "2", "--data", ws["orig"], "--out", fqi_out]) == 0
    assert load_qfunction(cql_out).backend == "neural"
    assert load_qfunction(fqi_out).backend == "neural"


def test_augment_grew_the_dataset(ws):
    orig = load_dataset(ws["orig"])
    plus = load_dataset(ws["plus"])
    explo = load_dataset(ws["explo"])
    assert len(plus) == len(orig) + len(explo)
    assert 0 < len(explo) <= 3 * 2
    assert plus.episodes[: len(orig)] == orig.episodes
    assert all(ep.provenance == "exploratory" for ep in explo.episodes)


def test_augment_top_zero_warns_and_copies(ws, tmp_path, caplog):
    out = str(tmp_path / "zero.jsonl")
    with caplog.at_level(logging.WARNING, logger="tutor_rl.cli"):
        assert main(["augment", "--data", ws["orig"], "--q", ws["q"],
                     "--bc", ws["bc"], "--seed", "7", "--top-k", "0",
                     "--out", out]) == 0
    assert "top-k is 0" in caplog.text
    assert load_dataset(out).episodes == load_dataset(ws["orig"]).episodes


def test_evaluate_report_files(ws):
    rep = EvalReport.from_dict(json.loads(open(ws["rep_bc"]).read()))
    assert rep.n_episodes == 15
    assert rep.policy_tag == "bc_table"
    base = EvalReport.from_dict(json.loads(open(ws["rep_base"]).read()))
    assert base.policy_tag == "baseline"
    assert base.seed == rep.seed


def test_evaluate_q_model_gets_greedy_tag(ws, capsys):
    assert main(["evaluate", "--model", ws["q"], "--episodes", "8",
                 "--seed", "2"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["policy_tag"] == "greedy_tabular"
    assert payload["n_episodes"] == 8


def test_report_single_and_table(ws, capsys):
    assert main(["report", ws["rep_bc"]]) == 0
    single = capsys.readouterr().out
    assert "bc_table" in single and "CI95" in single

    assert main(["report", ws["rep_bc"], ws["rep_base"]]) == 0
    table = capsys.readouterr().out
    assert "episodes per arm" in table
    assert "bc_table" in table and "baseline" in table


def test_report_csv_columns(ws, tmp_path):
    out = str(tmp_path / "arms.csv")
    assert main(["report", ws["rep_bc"], ws["rep_base"], "--csv", out]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [
        "policy_tag", "problem_id", "n_episodes", "n_success",
        "success_rate_pct", "ci95_lo", "ci95_hi", "mean_episode_value",
        "mean_turns_to_success", "marginal_instruct", "marginal_encourage",
        "marginal_refocus", "marginal_ask_question", "seed", "gamma",
    ]
    assert len(rows) == 3
    assert {rows[1][0], rows[2][0]} == {"bc_table", "baseline"}


def test_config_file_drives_the_pipeline(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        "master_seed = 3\n"
        "n_train_episodes = 12\n"
        "eval_episodes = 5\n\n"
        "[bc]\nmax_epochs = 5\nhidden = [8]\n"
    )
    data = str(tmp_path / "d.jsonl")
    model = str(tmp_path / "bc_net.json")
    report = str(tmp_path / "rep.json")
    assert main(["generate", "--config", str(cfg), "--out", data]) == 0
    assert len(load_dataset(data)) == 12
    assert main(["train", "--algo", "bc_classifier", "--config", str(cfg),
                 "--data", data, "--out", model]) == 0
    assert main(["evaluate", "--model", model, "--config", str(cfg),
                 "--out", report]) == 0
    assert EvalReport.from_dict(json.loads(open(report).read())).n_episodes == 5


# -------------------------------------------------------------- exit codes


def test_usage_errors_exit_one(capsys):
    assert main(["train"]) == 1          # missing required options
    assert main([]) == 1                 # missing subcommand
    assert main(["train", "--algo", "divination", "--data", "x",
                 "--out", "y"]) == 1
    capsys.readouterr()


def test_validation_errors_exit_two(ws, tmp_path, capsys):
    assert main(["generate", "--problem", "imaginary", "--seed", "1",
                 "--out", str(tmp_path / "x.jsonl")]) == 2
    assert main(["generate", "--episodes", "3",
                 "--out", str(tmp_path / "y.jsonl")]) == 2  # no seed, no config
    assert main(["stats", "--data", str(tmp_path / "absent.jsonl")]) == 2
    assert main(["evaluate", "--model", str(tmp_path / "absent.json"),
                 "--episodes", "2", "--seed", "0"]) == 2
    capsys.readouterr()


def test_overwrite_refused_without_force(ws, capsys):
    assert main(["generate", "--episodes", "5", "--seed", "5",
                 "--out", ws["orig"]]) == 2
    assert "exists" in capsys.readouterr().err
    # the original file was not touched
    assert len(load_dataset(ws["orig"])) == 30
    assert main(["generate", "--episodes", "30", "--seed", "5",
                 "--out", ws["orig"], "--force"]) == 0


def test_tampered_dataset_exits_two(ws, tmp_path, capsys):
    src = (ws["dir"] / "orig.jsonl").read_bytes()
    bad = tmp_path / "bad.jsonl"
    bad.write_bytes(src.replace(b'"a":0', b'"a":1', 1))
    meta = (ws["dir"] / "orig.jsonl.meta.json").read_bytes()
    (tmp_path / "bad.jsonl.meta.json").write_bytes(meta)
    assert main(["train", "--algo", "bc_table", "--data", str(bad),
                 "--out", str(tmp_path / "m.json")]) == 2
    capsys.readouterr()


def test_runtime_errors_exit_three(ws, tmp_path, capsys):
    # re-annotating 20-turn episodes under a 2-turn budget is a runtime
    # failure, not a validation one
    assert main(["annotate", "--data", ws["orig"], "--max-turns", "2",
                 "--out", str(tmp_path / "ann.jsonl")]) == 3
    capsys.readouterr()
