import csv
import json
import os
import subprocess
import sys

import pytest

from mmflow.chem import write_jsonl
from mmflow.cli import main

from .conftest import TINY_NET


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, systems):
    d = tmp_path_factory.mktemp("cli")
    write_jsonl(systems, d / "systems.jsonl")
    cfg = {"tasks": {"denovo_ligand": 0.5, "rigid_docking": 0.5}, "steps": 3, "batch_size": 2,
           "net": TINY_NET, "data": "systems.jsonl"}
    (d / "config.json").write_text(json.dumps(cfg))
    assert main(["train", str(d / "config.json"), "--out", str(d / "run")]) == 0
    return d


def test_train_outputs(workdir):
    assert (workdir / "run" / "final.ckpt").is_file()
    rows = list(csv.DictReader(open(workdir / "run" / "metrics.csv")))
    assert [r["step"] for r in rows] == ["1", "2", "3"]


def test_vocab_ingest_inspect(workdir, capsys):
    assert main(["vocab", str(workdir / "systems.jsonl"), str(workdir / "vocab.json")]) == 0
    assert main(["ingest", str(workdir / "systems.jsonl"), str(workdir / "store"), "--chunk-size", "3",
                 "--vocab", str(workdir / "vocab.json")]) == 0
    capsys.readouterr()
    assert main(["inspect", str(workdir / "store")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["count"] == 4 and info["n_chunks"] == 2 and info["vocab_hash"]
    assert main(["inspect", str(workdir / "store"), "--index", "1"]) == 0
    assert "elements" in json.loads(capsys.readouterr().out)


def test_sample_eval_traj(workdir):
    ck = str(workdir / "run" / "final.ckpt")
    sysf = str(workdir / "systems.jsonl")
    out = workdir / "dn.jsonl"
    assert main(["sample", "--checkpoint", ck, "--task", "denovo_ligand", "--system", sysf, "--n", "4",
                 "--steps", "3", "--out", str(out)]) == 0
    recs = [json.loads(x) for x in out.read_text().splitlines()]
    assert len(recs) == 4 and (workdir / "dn.metrics.csv").is_file()
    assert main(["eval", "--samples", str(out), "--reference", sysf, "--pharm", "--out", str(workdir / "ev")]) == 0
    summary = json.loads((workdir / "ev.json").read_text())
    assert summary["n_samples"] == 4
    dock = workdir / "dock.jsonl"
    assert main(["sample", "--checkpoint", ck, "--task", "rigid_docking", "--system", sysf, "--n", "8",
                 "--steps", "3", "--eta", "1.0", "--out", str(dock)]) == 0
    assert main(["eval", "--samples", str(dock), "--reference", sysf, "--mode", "dock",
                 "--out", str(workdir / "dk")]) == 0
    dk = json.loads((workdir / "dk.json").read_text())
    assert {"top1_success", "top5_success", "top1_success_pb_valid_subset", "mean_rmsd"} <= set(dk)
    assert main(["traj", "--checkpoint", ck, "--task", "denovo_ligand", "--system", sysf, "--steps", "4",
                 "--out", str(workdir / "traj")]) == 0
    assert len((workdir / "traj" / "trajectory.jsonl").read_text().splitlines()) == 5
    assert (workdir / "traj" / "summary.csv").read_text().startswith("t,lig_rg,lig_masked_frac")


def test_exit_codes(workdir, capsys):
    assert main(["sample", "--checkpoint", str(workdir / "missing.ckpt"), "--task", "denovo_ligand",
                 "--system", "x", "--out", "y"]) == 1
    assert main(["bogus-command"]) == 1
    ck = str(workdir / "run" / "final.ckpt")
    assert main(["sample", "--checkpoint", ck, "--task", "folding", "--system",
                 str(workdir / "systems.jsonl"), "--out", str(workdir / "z.jsonl")]) == 1
    bad = workdir / "bad.json"
    bad.write_text('{\n  "steps": 3,\n  "tasks": \n}')
    capsys.readouterr()
    assert main(["train", str(bad)]) == 2
    assert "bad.json:4:1" in capsys.readouterr().err
    (workdir / "corrupt.ckpt").write_bytes(b"garbage")
    assert main(["traj", "--checkpoint", str(workdir / "corrupt.ckpt"), "--task", "denovo_ligand",
                 "--system", str(workdir / "systems.jsonl"), "--out", str(workdir / "t2")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(workdir):
    cfg = {"tasks": {"denovo_ligand": 1.0}, "steps": 4, "batch_size": 1, "lr": 1e308, "grad_clip": 0.0,
           "net": TINY_NET, "data": "systems.jsonl"}
    (workdir / "explode.json").write_text(json.dumps(cfg))
    assert main(["train", str(workdir / "explode.json"), "--out", str(workdir / "explode")]) == 3


def test_module_entry_point_help():
    env = dict(os.environ, MMFLOW_THREADS="1")
    res = subprocess.run([sys.executable, "-m", "mmflow", "--help"], capture_output=True, text=True, env=env,
                         timeout=120)
    assert res.returncode == 0
    for cmd in ("vocab", "ingest", "inspect", "train", "sample", "eval", "traj"):
        assert cmd in res.stdout
