import csv

import pytest

from rftsim.cli import main
from rftsim.provenance import strip_header


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    args = ["--store", str(root / "store"), "--out", str(root / "out")]
    assert main(args + ["gen-demos", "--until-success", "60"]) == 0
    return root, args


def _rows(path):
    return list(csv.DictReader(strip_header(path.read_text()).splitlines()))


def _headed(path):
    text = path.read_text()
    assert text.startswith("# rftsim 0.1.0 ")
    assert "# seed: " in text and "# config-hash: " in text and "receding_temporal" in text
    return text


def test_gen_demos_counts(tmp_path):
    a = ["--store", str(tmp_path / "s"), "--out", str(tmp_path / "o")]
    assert main(a + ["gen-demos", "--per-task", "50", "--sigma", "0"]) == 0
    text = _headed(tmp_path / "o" / "gen-demos.txt")
    assert "entries: 600\n" in text and "successes: 600\n" in text


def test_gen_demos_same_seed_same_manifest(tmp_path):
    ids = []
    for k in range(2):
        a = ["--seed", "3", "--store", str(tmp_path / f"s{k}"), "--out", str(tmp_path / f"o{k}")]
        assert main(a + ["gen-demos", "--per-task", "2", "--tasks", "1,5"]) == 0
        ids.append((tmp_path / f"o{k}" / "gen-demos.txt").read_text().split("manifest-id: ")[1].split()[0])
    assert ids[0] == ids[1]


def test_stats(workspace):
    root, args = workspace
    assert main(args + ["stats"]) == 0
    shares = _rows(root / "out" / "skills.csv")
    assert abs(sum(float(r["share"]) for r in shares) - 1) < 1e-5
    tasks = _rows(root / "out" / "tasks.csv")
    assert len(tasks) == 12 and all(r["simple"] == str(int(float(r["mean_frames"]) < 250)) for r in tasks)


def test_ablation_grid_and_bytes(workspace, tmp_path):
    root, args = workspace
    outs = []
    for k in range(2):
        a = ["--store", str(root / "store"), "--out", str(tmp_path / f"a{k}")]
        assert main(a + ["ablate", "--scenario", "drift", "--episodes", "10"]) == 0
        outs.append((tmp_path / f"a{k}" / "ablation.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = _rows(tmp_path / "a0" / "ablation.csv")
    assert len(rows) == 12
    assert list(rows[0]) == ["mode", "H", "representation", "hold_factor", "state_input", "task",
                             "success_rate", "mean_qscore", "mean_steps"]
    keys = [(r["mode"], int(r["H"]), r["representation"], int(r["hold_factor"])) for r in rows]
    assert keys == sorted(keys)


def test_ablation_drift_finding(workspace, tmp_path):
    root, args = workspace
    a = ["--out", str(tmp_path)]
    assert main(a + ["ablate", "--scenario", "drift", "--episodes", "20", "--horizons", "32",
                     "--modes", "receding_horizon,temporal_ensemble"]) == 0
    rate = {r["mode"]: float(r["success_rate"]) for r in _rows(tmp_path / "ablation.csv")}
    assert rate["receding_horizon"] > rate["temporal_ensemble"]


def test_ablation_on_suite_with_cloner(workspace, tmp_path):
    root, args = workspace
    a = ["--store", str(root / "store"), "--out", str(tmp_path)]
    assert main(a + ["ablate", "--tasks", "1,3", "--modes", "receding_horizon", "--horizons", "16,32",
                     "--hold-factors", "1,2", "--state-inputs", "on,off", "--representations",
                     "absolute,delta", "--episodes", "2"]) == 0
    assert len(_rows(tmp_path / "ablation.csv")) == 2 * 2 * 2 * 2 * 2


def test_eval_and_best_of_single(workspace):
    root, args = workspace
    assert main(args + ["eval", "--trials", "1", "--tasks", "1,2,3"]) == 0
    text = _headed(root / "out" / "eval.csv")
    assert main(args + ["best-of", "--validation", str(root / "out" / "eval.csv")]) == 0
    union = (root / "out" / "best-of.csv").read_text().split("union-qscore: ")[1].split()[0]
    from rftsim.flywheel import instance_table, read_validation
    from rftsim.metrics import aggregate_qscore

    assert float(union) == pytest.approx(float(aggregate_qscore(instance_table(read_validation(text)))), abs=1e-6)


def test_rft_smoke_and_report(workspace):
    root, args = workspace
    assert main(args + ["rft", "--rounds", "1", "--T", "10", "--trials", "1", "--tasks", "1,3"]) == 0
    rft = root / "out" / "rft"
    assert sorted(p.name for p in (rft / "reports").iterdir()) == ["round-1.txt"]
    rounds = _rows(rft / "rounds.csv")
    assert [r["round"] for r in rounds] == ["0", "1"] and rounds[1]["jobs"] == "10"
    assert rounds[1]["errors"] == "0" and int(rounds[0]["dataset_size"]) == 8
    assert main(args + ["best-of", "--run", str(rft)]) == 0
    assert len(_rows(root / "out" / "best-of.csv")) == 8
    assert main(args + ["report", "--run", str(rft)]) == 0
    for name in ("report-skills.csv", "report-tasks.csv", "report-qscores.csv", "report-union.csv"):
        _headed(root / "out" / name)
    assert len(_rows(root / "out" / "report-qscores.csv")) == 2


def test_subset_train_direction(workspace):
    root, args = workspace
    assert main(args + ["subset-train", "--sizes", "1,12", "--trials", "1"]) == 0
    rows = {r["subset_size"]: float(r["success_rate"]) for r in _rows(root / "out" / "subset-train.csv")}
    assert rows["12"] >= rows["1"]


@pytest.mark.parametrize("argv", [["bogus"], ["eval", "--delta", "1,2"], ["--workers", "0", "stats"],
                                  ["stats", "--manifest", "nope"], ["ablate", "--horizons", "0"],
                                  ["eval", "--mode", "sideways"]])
def test_usage_errors_exit_1(workspace, argv, capsys):
    root, args = workspace
    with pytest.raises(SystemExit) as e:
        code = main(args + argv)
        raise SystemExit(code)
    assert e.value.code == 1


def test_runtime_errors_exit_2(workspace, tmp_path):
    root, args = workspace
    (tmp_path / "registry.csv").write_text("round,checkpoint\n0\n")
    assert main(args + ["best-of", "--run", str(tmp_path)]) == 2


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("gen-demos", "stats", "eval", "ablate", "rft", "best-of", "subset-train", "report"):
        assert cmd in out
    for flag in ("--seed", "--workers", "--suite", "--store", "--out"):
        assert flag in out
