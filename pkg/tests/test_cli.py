import csv
import json
import shutil
from pathlib import Path

import pytest
import torch

from metavrp import checkpoint as ckpt_io
from metavrp.cli import GRAD_COLUMNS, main
from metavrp.instances import read_instances

DATA = Path(__file__).parent / "data"
TINY = ["--set", "model.embed_dim=16", "--set", "model.heads=2", "--set", "model.layers=1",
        "--set", "model.feedforward_dim=32"]
SCHED = ["--set", "scheduler.n_min=5", "--set", "scheduler.n_max=7", "--set", "scheduler.step=2",
         "--set", "scheduler.E_s=4", "--set", "scheduler.pool_size=4", "--set",
         "scheduler.probe_size=2", "--set", "scheduler.refresh_period=2", "--set", "train.M=2"]


def test_generate(tmp_path, capsys):
    out = tmp_path / "g.jsonl"
    assert main(["generate", "--task", "tsp:8:uniform", "--task", "cvrp:6:gm_2_5",
                 "--count", "3", "--out", str(out)]) == 0
    insts = read_instances(out)
    assert [i.task.name for i in insts] == ["tsp:8:uniform"] * 3 + ["cvrp:6:gm_2_5"] * 3
    assert main(["generate", "--task", "tsp:8:uniform", "--format", "tsplib",
                 "--out", str(tmp_path / "lib")]) == 0
    assert len(list((tmp_path / "lib").glob("*.tsp"))) == 1


@pytest.mark.parametrize("argv", [["generate", "--task", "tsp:8:nowhere"],
                                  ["generate"],
                                  ["generate", "--task", "tsp:8:uniform", "--count", "0"],
                                  ["eval", "--set", "bogus=1"],
                                  ["benchmark", "--dir", "/definitely/missing"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_train_resume_eval_finetune_grad(tmp_path, capsys):
    run = tmp_path / "run"
    base = ["train", *TINY, *SCHED, "--iters", "4", "--seed", "5", "--set", "train.checkpoint_every=2"]
    assert main(base + ["--out", str(run)]) == 0
    metrics = [json.loads(line) for line in (run / "metrics.jsonl").read_text().splitlines()]
    assert [m["iter"] for m in metrics] == [0, 1, 2, 3]
    assert {"iter", "task", "rule_in_effect", "loss", "cost", "val_gap", "wall_ms"} <= set(metrics[0])
    assert metrics[2]["val_gap"] is not None
    assert (run / "pool" / "pool_oracle.json").exists()

    res = tmp_path / "resumed"
    res.mkdir()
    shutil.copytree(run / "pool", res / "pool")
    assert main(["train", "--resume", str(run / "ckpt_0000002.ckpt"), "--out", str(res)]) == 0
    a = ckpt_io.load(run / "final.ckpt").state
    b = ckpt_io.load(res / "final.ckpt").state
    assert torch.equal(a.params.values, b.params.values) and b.e == 4
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]
    again = [json.loads(x) for x in (res / "metrics.jsonl").read_text().splitlines()]
    assert strip(again) == strip(metrics[2:])

    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run / "final.ckpt"), "--task", "tsp:6:rotation",
                 "--count", "5", "--few-shot", "1", "--pool", "4", "--augment8",
                 "--out", str(ev)]) == 0
    table = (ev / "report.md").read_text()
    assert "tsp:6:rotation Obj. (Gap)" in table and "few-shot K=1" in table
    rows = list(csv.DictReader(open(ev / "report.csv")))
    assert [r["method"] for r in rows] == ["held_karp", "zero-shot", "zero-shot x8", "few-shot K=1"]
    assert all(float(r["gap"]) >= -1e-12 for r in rows)
    assert len(list(csv.reader(open(ev / "per_instance.csv")))) == 6

    ft = tmp_path / "ft.ckpt"
    assert main(["finetune", "--checkpoint", str(run / "final.ckpt"), "--task", "tsp:6:uniform",
                 "--K", "1", "--pool", "4", "--out", str(ft)]) == 0
    assert ckpt_io.load(ft).extra["finetune"]["K"] == 1

    for sanity in (False, True):
        csv_path = tmp_path / f"grad_{sanity}.csv"
        argv = ["grad-analysis", "--checkpoints", str(run), "--M", "2", "--out", str(csv_path)]
        assert main(argv + (["--linear-sanity"] if sanity else [])) == 0
        rows = list(csv.DictReader(open(csv_path)))
        assert tuple(rows[0]) == GRAD_COLUMNS
        assert [int(r["iter"]) for r in rows] == [2, 4]
        for r in rows:
            vals = [float(r[c]) for c in GRAD_COLUMNS[1:]]
            assert all(-1.0 <= v <= 1.0 for v in vals)
            if sanity:
                assert vals == [1.0] * 4


def test_benchmark_on_tsplib_files(tmp_path, capsys):
    bench = tmp_path / "bench"
    bench.mkdir()
    for name in ("pcb442.tsp", "pcb442.opt.tour", "X-n101-50-k13.vrp"):
        shutil.copy(DATA / name, bench / name)
    out = tmp_path / "out"
    assert main(["benchmark", *TINY, "--dir", str(bench), "--starts", "4", "--out", str(out)]) == 0
    err = capsys.readouterr().err
    assert "skipping X-n101-50-k13.vrp" in err
    (row,) = list(csv.DictReader(open(out / "report.csv")))
    assert row["task"] == "pcb442"
    assert float(row["obj"]) >= 50778 and float(row["gap"]) >= 0
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["benchmark", "--dir", str(empty), "--out", str(tmp_path / "o2")]) == 0
