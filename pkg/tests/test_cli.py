import json
import subprocess
import sys

import pytest

from recjudge.cli import EXIT_BACKEND, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_VALIDATION, main
from recjudge.corpus import Qrels, read_qrels, write_qrels


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def payload(out):
    return json.loads(out.strip().splitlines()[-1])


def error(err):
    lines = [l for l in err.strip().splitlines() if l.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    """A small simulated world with a 4-system ladder, written via the CLI."""
    root = tmp_path_factory.mktemp("sim")
    (root / "w.json").write_text(json.dumps({"n_users": 12, "n_items": 200, "interactions_per_user": 15}))
    assert main(["simulate", "--world-spec", str(root / "w.json"), "--ladder", "4", "--out", str(root / "world"),
                 "--seed", "2", "--k", "20"]) == 0
    assert main(["pool", "--runs", str(root / "world" / "runs" / "*.run"), "--depth", "10",
                 "--out", str(root)]) == 0
    return root


def test_simulate_outputs_and_seed(tmp_path, capsys):
    code, out, err = run_cli(capsys, "simulate", "--ladder", "3", "--out", tmp_path, "--seed", "9",
                             "--world-spec", _spec(tmp_path), "--popularity", "--train-fraction", "0.8")
    assert code == EXIT_OK and "effective seed: 9" in err
    body = payload(out)
    assert body["seed"] == 9 and body["systems"] == ["sim0", "sim1", "sim2", "Pop"]
    assert (tmp_path / "runs" / "Pop.run").exists() and (tmp_path / "test.csv").exists()


def _spec(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"n_users": 8, "n_items": 100, "interactions_per_user": 10}))
    return path


def test_zero_noise_judge_then_agree_is_perfect(sim, tmp_path, capsys):
    world = sim / "world"
    code, out, _ = run_cli(capsys, "judge", "--pairs", sim / "pool.txt", "--interactions", world / "interactions.csv",
                           "--catalog", world / "catalog.jsonl", "--backend", "synthetic", "--noise", "0",
                           "--truth", world / "truth.qrels", "--out", tmp_path, "--repetitions", "1")
    assert code == EXIT_OK
    code, out, _ = run_cli(capsys, "agree", "--human", world / "truth.qrels", "--judge", tmp_path / "judge.qrels",
                           "--out", tmp_path)
    body = payload(out)
    assert code == EXIT_OK and (body["agreement"], body["tie"], body["disagreement"]) == (1.0, 0.0, 0.0)
    code, out, _ = run_cli(capsys, "agree", "--human", world / "truth.qrels", "--judge", tmp_path / "judge.qrels",
                           "--pair-filter", "min_grade_gap", "--gap", "3", "--out", tmp_path)
    assert payload(out)["agreement"] == 1.0


def test_judge_is_idempotent_through_cache(sim, tmp_path, capsys):
    world = sim / "world"
    args = ["judge", "--pairs", sim / "pool.txt", "--interactions", world / "interactions.csv", "--catalog",
            world / "catalog.jsonl", "--backend", "synthetic", "--noise", "1.5", "--truth", world / "truth.qrels",
            "--cache", tmp_path / "cache.jsonl", "--repetitions", "2"]
    code1, out1, _ = run_cli(capsys, *args, "--out", tmp_path / "a")
    code2, out2, _ = run_cli(capsys, *args, "--out", tmp_path / "b")
    assert code1 == code2 == EXIT_OK
    assert payload(out1)["backend_calls"] > 0 and payload(out2)["backend_calls"] == 0
    for name in ("judge.qrels", "judge.rep0.qrels", "judge.rep1.qrels"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_judge_partial_and_hard_failures(sim, tmp_path, capsys):
    world = sim / "world"
    truth = read_qrels(world / "truth.qrels")
    pool_pairs = [tuple(l.split()) for l in (sim / "pool.txt").read_text().splitlines()]
    write_qrels(truth.restrict(pool_pairs[: len(pool_pairs) // 2]), tmp_path / "half.qrels")
    write_qrels(Qrels({("nobody", "nothing"): 1}), tmp_path / "none.qrels")
    base = ["judge", "--pairs", sim / "pool.txt", "--interactions", world / "interactions.csv", "--catalog",
            world / "catalog.jsonl", "--backend", "synthetic", "--repetitions", "1"]
    code, _, err = run_cli(capsys, *base, "--truth", tmp_path / "half.qrels", "--out", tmp_path / "p")
    assert code == EXIT_PARTIAL and error(err)["error"] == "partial_judge_failure"
    assert (tmp_path / "p" / "failures.json").exists() and (tmp_path / "p" / "judge.qrels").exists()
    code, _, err = run_cli(capsys, *base, "--truth", tmp_path / "none.qrels", "--out", tmp_path / "n")
    assert code == EXIT_BACKEND and error(err)["exit_code"] == EXIT_BACKEND


def test_eval_judged_on_fully_judged_fixture(tmp_path, capsys, golden):
    qrels = Qrels({(u, i): 0 for u, i in [("u1", "i3"), ("u1", "i1"), ("u1", "i9"), ("u2", "i4"), ("u2", "i2")]})
    write_qrels(qrels, tmp_path / "full.qrels")
    code, out, _ = run_cli(capsys, "eval", "--run", golden / "sample.run", "--qrels", tmp_path / "full.qrels",
                           "--metric", "judged@100", "--out", tmp_path)
    assert code == EXIT_OK and payload(out)["aggregate"] == {"sysA": 1.0}
    assert json.loads((tmp_path / "sysA.judged_at_100.json").read_text())["aggregate"] == 1.0


def test_eval_compatibility_in_parallel(sim, tmp_path, capsys):
    world = sim / "world"
    args = ["eval", "--run", world / "runs" / "*.run", "--qrels", world / "truth.qrels", "--out", tmp_path]
    _, serial, _ = run_cli(capsys, *args, "--jobs", "1")
    _, parallel, _ = run_cli(capsys, *args, "--jobs", "2")
    assert payload(serial)["aggregate"] == payload(parallel)["aggregate"]
    scores = payload(serial)["aggregate"]
    assert scores["sim3"] > scores["sim0"]


def test_rank_agree_rows(sim, tmp_path, capsys):
    world = sim / "world"
    code, out, err = run_cli(capsys, "rank-agree", "--runs", world / "runs" / "*.run", "--human",
                             world / "truth.qrels", "--judge", world / "truth.qrels", "--budgets", "5,20,all",
                             "--out", tmp_path, "--seed", "4")
    body = payload(out)
    assert code == EXIT_OK and body["seed"] == 4 and "effective seed: 4" in err
    assert [r["budget"] for r in body["rows"]] == ["5", "20", "all"] and body["rows"][-1]["tau"] == 1.0
    assert (tmp_path / "ranking_agreement.csv").exists()


def test_split_command(tmp_path, capsys, golden):
    code, out, _ = run_cli(capsys, "split", "--interactions", golden / "interactions.csv", "--train-fraction", "0.5",
                           "--grade-map", "4:2,0.5:1", "--out", tmp_path)
    body = payload(out)
    assert code == EXIT_OK and body["train_rows"] == 4 and body["test_rows"] == 3
    assert read_qrels(tmp_path / "test.qrels").to_nested() == {"1": {"12": 2, "13": 1}, "2": {"15": 1}}


def test_report_command(sim, tmp_path, capsys):
    world = sim / "world"
    spec = {"name": "gap", "kind": "grade_gap", "inputs": {"qrels_human": str(world / "truth.qrels"),
                                                          "qrels_judge": str(world / "truth.qrels")}}
    (tmp_path / "e.json").write_text(json.dumps(spec))
    code, out, _ = run_cli(capsys, "report", "--experiment", tmp_path / "e.json", "--out", tmp_path)
    assert code == EXIT_OK and (tmp_path / "gap.csv").exists()


def test_config_file_supplies_seed(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[global]\nseed = 17\n")
    code, out, err = run_cli(capsys, "simulate", "--config", tmp_path / "c.ini", "--ladder", "2",
                             "--world-spec", _spec(tmp_path), "--out", tmp_path / "o")
    assert code == EXIT_OK and payload(out)["seed"] == 17


@pytest.mark.parametrize(
    "argv",
    [["eval", "--bogus"], ["frobnicate"], [], ["eval", "--run", "nope.run", "--qrels", "nope.qrels"],
     ["agree", "--human", "x", "--judge", "y", "--pair-filter", "min_grade_gap"],
     ["eval", "--run", "x", "--qrels", "y", "--jobs", "0"]],
)
def test_usage_errors(capsys, argv):
    code, _, err = run_cli(capsys, *argv)
    assert code == EXIT_USAGE and error(err)["exit_code"] == EXIT_USAGE


@pytest.mark.parametrize(
    "name",
    ["qrels_three_columns.qrels", "qrels_non_integer.qrels", "qrels_out_of_range.qrels", "qrels_duplicate.qrels"],
)
def test_malformed_qrels_exit_code(capsys, golden, name):
    bad = golden / "malformed" / name
    code, _, err = run_cli(capsys, "agree", "--human", bad, "--judge", golden / "sample.qrels")
    assert code == EXIT_VALIDATION and error(err)["error"] == "validation"


@pytest.mark.parametrize(
    "name",
    ["run_five_columns.run", "run_duplicate_item.run", "run_duplicate_rank.run", "run_rank_gap.run",
     "run_mixed_tags.run", "run_bad_rank.run"],
)
def test_malformed_run_exit_code(capsys, golden, name):
    code, _, err = run_cli(capsys, "eval", "--run", golden / "malformed" / name, "--qrels", golden / "sample.qrels")
    assert code == EXIT_VALIDATION and error(err)["exit_code"] == EXIT_VALIDATION


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "recjudge.cli", "pool", "--runs", str(tmp_path / "none*"),
                           "--depth", "3"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert json.loads(proc.stderr.strip())["error"] == "missing_input"
