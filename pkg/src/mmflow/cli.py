"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .chem import (
    CondensedVocab,
    SystemRecord,
    ToyMolecule,
    build_condensed_vocab,
    extract_pharmacophores,
    read_jsonl,
    same_bond_graph,
)
from .errors import MMFlowError, NonFiniteLoss
from .evaluate import (
    builtin_score,
    check_validity,
    chirality_violations,
    pharm_match_rate,
    rank_poses,
    rmsd,
    summarize,
    top_n_success,
    write_rows,
    write_summary,
)
from .featurize import build_registry
from .hetgraph import TASK_TABLE, make_task
from .net import Denoiser
from .pipeline import DEFAULT_STEPS, sample_batch, sample_many, trajectory_records, trajectory_summary
from .store import Store, filter_ingest, ingest
from .train import TaskData, TrainConfig, extend_model, load_checkpoint, save_checkpoint, train, write_metrics

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _systems(path) -> list[SystemRecord]:
    out = []
    for rec in read_jsonl(_need_file(path)):
        out.append(rec if isinstance(rec, SystemRecord) else SystemRecord(rec))
    if not out:
        raise MMFlowError(f"{path}: no records")
    return out


def _molecules(path) -> list[ToyMolecule]:
    return [s.ligand for s in _systems(path)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_vocab(args) -> int:
    vocab = build_condensed_vocab(_molecules(args.corpus))
    Path(args.out).write_text(vocab.to_json() + "\n")
    print(f"{len(vocab.tuples)} atom types (+ mask) -> {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    counts = {}
    stream = filter_ingest(_molecules(args.corpus), counts)
    vocab_hash = ""
    if args.vocab:
        vocab_hash = CondensedVocab.from_json(_need_file(args.vocab).read_text()).digest()
    man = ingest(stream, args.chunk_size, args.store, vocab_hash=vocab_hash, skipped=counts)
    print(f"{man.count} records in {len(man.chunks)} chunks; skipped {man.skipped}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if not (Path(args.store) / "manifest.json").is_file():
        raise UsageError(f"not a store: {args.store}")
    store = Store(args.store)
    if args.index is None:
        m = store.manifest
        print(json.dumps({"count": m.count, "chunk_size": m.chunk_size, "n_chunks": len(m.chunks),
                          "schema_version": m.schema_version, "vocab_hash": m.vocab_hash, "skipped": m.skipped},
                         indent=2, sort_keys=True))
    else:
        print(json.dumps(store.read(args.index).to_dict()))
    return EXIT_OK


def _load_config(path) -> TrainConfig:
    text = _need_file(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MMFlowError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        return TrainConfig(**raw)
    except TypeError as exc:
        raise MMFlowError(f"{path}: {exc}") from None


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    base = Path(args.config).parent
    data_path = base / cfg.data if cfg.data and not Path(cfg.data).is_absolute() else Path(cfg.data)
    systems = _systems(data_path)
    out_dir = Path(args.out or cfg.out_dir or base / "run")
    out_dir.mkdir(parents=True, exist_ok=True)
    opt = None
    if cfg.init_checkpoint:
        ck = load_checkpoint(base / cfg.init_checkpoint)
        vocab = ck.vocab
        model = extend_model(ck.model, cfg.tasks, cfg.seed)
    else:
        if cfg.vocab:
            vocab = CondensedVocab.from_json(_need_file(base / cfg.vocab).read_text())
        else:
            vocab = build_condensed_vocab(s.ligand for s in systems)
        model = Denoiser.create(cfg.net_config, build_registry(vocab), cfg.seed)
    data = TaskData(systems, vocab)

    def on_step(step, row, model, opt):
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < cfg.steps:
            save_checkpoint(out_dir / f"step-{step:07d}.ckpt", model, opt, vocab)

    res = train(model, data, cfg, opt, callback=on_step)
    save_checkpoint(out_dir / "final.ckpt", res.model, res.opt, vocab)
    write_metrics(res.history, out_dir / "metrics.csv")
    last = res.history[-1]["total"] if res.history else float("nan")
    print(f"trained {cfg.steps} steps; final loss {last:.6g}; checkpoint {out_dir / 'final.ckpt'}")
    return EXIT_OK


def _task(name, registry):
    if name not in TASK_TABLE:
        raise UsageError(f"unknown task {name!r}; supported: {', '.join(TASK_TABLE)}")
    return make_task(name, registry)


def cmd_sample(args) -> int:
    ck = load_checkpoint(_need_file(args.checkpoint))
    task = _task(args.task, ck.model.registry)
    if ck.vocab is None:
        raise MMFlowError("checkpoint carries no vocabulary")
    systems = _systems(args.system)
    n_atoms = None if args.n_atoms is None else [args.n_atoms] * len(systems)
    samples = sample_many(ck.model, ck.vocab, task, systems, args.n, args.seed, args.steps, n_atoms=n_atoms,
                          eta=args.eta)
    rows = []
    with open(args.out, "w") as fh:
        for s in samples:
            mol = s.molecule
            rec = {"index": s.index, "system_index": s.system_index, "task": task.name,
                   "ligand": mol.to_dict() if mol is not None else None, "error": s.ligand.error}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            row = {"index": s.index, "system_index": s.system_index, "decoded": mol is not None}
            if mol is not None:
                row.update(check_validity(mol, systems[s.system_index].protein).to_dict())
            rows.append(row)
    write_rows(rows, Path(args.out).with_suffix(".metrics.csv"))
    print(f"{len(samples)} samples -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    refs = _systems(args.reference)
    recs = [json.loads(line) for line in _need_file(args.samples).read_text().splitlines() if line.strip()]
    if not recs:
        raise MMFlowError(f"{args.samples}: no samples")
    rows, by_system = [], {}
    for r in recs:
        ref = refs[r["system_index"]]
        row = {"index": r["index"], "system_index": r["system_index"], "decoded": r["ligand"] is not None}
        if r["ligand"] is not None:
            mol = ToyMolecule.from_dict(r["ligand"])
            rep = check_validity(mol, ref.protein)
            row.update(rep.to_dict())
            if args.mode == "dock":
                row["rmsd"] = rmsd(mol.coords, ref.ligand.coords)
                row["rmsd_lt_2"] = row["rmsd"] < 2.0
                viol = chirality_violations(mol, ref.ligand)
                score = builtin_score(mol, ref.protein) if ref.protein.n_atoms else 0.0
                row.update(chirality_violations=viol, score=score)
                by_system.setdefault(r["system_index"], []).append(row)
            else:
                row["matches_reference_graph"] = same_bond_graph(mol, ref.ligand)
                if args.pharm:
                    feats = extract_pharmacophores(ref.ligand)
                    if feats:
                        row["pharm_match_rate"] = pharm_match_rate(feats, mol)
                        row["pharm_all_matched"] = row["pharm_match_rate"] == 1.0
        rows.append(row)
    summary = summarize(rows)
    if args.mode == "dock":
        for n in (1, 5):
            hits, hits_valid = [], []
            for sys_rows in by_system.values():
                poses = [{"pose_id": r["index"], "chirality_violations": r["chirality_violations"],
                          "score": r["score"]} for r in sys_rows]
                top = rank_poses(poses, scorer=lambda p: p["score"], n=n)
                h, hv = top_n_success(top, {r["index"]: r["rmsd"] for r in sys_rows},
                                      {r["index"]: r["pb_valid_subset"] for r in sys_rows})
                hits.append(h)
                hits_valid.append(hv)
            summary[f"top{n}_success"] = float(np.mean(hits)) if hits else 0.0
            summary[f"top{n}_success_pb_valid_subset"] = float(np.mean(hits_valid)) if hits else 0.0
    out = Path(args.out)
    write_rows(rows, out.with_suffix(".csv"))
    write_summary(summary, out.with_suffix(".json"))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_traj(args) -> int:
    ck = load_checkpoint(_need_file(args.checkpoint))
    task = _task(args.task, ck.model.registry)
    system = _systems(args.system)[args.system_index]
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0]))
    samples = sample_batch(ck.model, ck.vocab, task, [system], rng, args.steps, eta=args.eta, keep_trajectory=True)
    states = samples[0].trajectory
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recs = trajectory_records(states, ck.model.registry)
    with open(out / "trajectory.jsonl", "w") as fh:
        for rec in recs:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    summary = trajectory_summary(states, ck.model.registry)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)
    print(f"{len(states)} states -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmflow", description="Multi-modal flow matching for toy protein-ligand systems.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("vocab", help="build the condensed atom-type vocabulary of a corpus")
    s.add_argument("corpus", help="JSONL of molecules or systems")
    s.add_argument("out", help="output vocabulary JSON")
    s.set_defaults(func=cmd_vocab)

    s = sub.add_parser("ingest", help="filter a corpus and write a chunked store")
    s.add_argument("corpus")
    s.add_argument("store", help="output directory")
    s.add_argument("--chunk-size", type=int, default=128)
    s.add_argument("--vocab", help="vocabulary JSON whose digest is recorded in the manifest")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("inspect", help="print a store manifest or one record")
    s.add_argument("store")
    s.add_argument("--index", type=int)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("train", help="train from a JSON config")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (overrides the config)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="sample ligands for a task")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--task", required=True, help=f"one of: {', '.join(TASK_TABLE)}")
    s.add_argument("--system", required=True, help="JSONL of systems (or molecules)")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    s.add_argument("--n-atoms", type=int, help="ligand size for de novo tasks (default: reference size)")
    s.add_argument("--eta", type=float, default=0.0, help="remasking rate of the discrete sampler")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", help="score samples against references")
    s.add_argument("--samples", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--mode", choices=("denovo", "dock"), default="denovo")
    s.add_argument("--pharm", action="store_true", help="also report pharmacophore matching (de novo mode)")
    s.add_argument("--out", required=True, help="output prefix for .csv and .json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("traj", help="export one sampling trajectory")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--task", required=True)
    s.add_argument("--system", required=True)
    s.add_argument("--system-index", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    s.add_argument("--eta", type=float, default=0.0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_traj)
    return p


def _apply_thread_override():
    n = os.environ.get("MMFLOW_THREADS")
    if not n:
        return
    try:
        import numba

        numba.set_num_threads(int(n))
    except (ImportError, ValueError):
        pass


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    _apply_thread_override()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MMFlowError, KeyError, IndexError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
