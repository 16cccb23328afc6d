import csv

import numpy as np
import pytest

from mmflow.chem import SystemRecord
from mmflow.errors import CorruptCheckpoint, NonFiniteLoss, RegistryMismatch
from mmflow.featurize import build_registry
from mmflow.hetgraph import make_task
from mmflow.net import Denoiser, NetConfig
from mmflow.train import (
    AdamState,
    TaskData,
    TrainConfig,
    adam_update,
    clip_global_norm,
    extend_model,
    load_checkpoint,
    make_batch,
    pretrain_then_finetune,
    sample_task,
    save_checkpoint,
    train,
    training_step,
    write_metrics,
)

from .conftest import TINY_NET


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        TrainConfig(tasks={"denovo_ligand": 0.5})
    with pytest.raises(ValueError):
        TrainConfig(tasks={})
    cfg = TrainConfig(tasks={"denovo_ligand": 0.25, "rigid_docking": 0.75}, net=TINY_NET)
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    assert cfg.net_config.tasks == ("denovo_ligand", "rigid_docking")


def test_sample_task_mixture():
    cfg = TrainConfig(tasks={"denovo_ligand": 0.0, "rigid_docking": 0.7, "ligand_conformer": 0.3})
    rng = np.random.default_rng(0)
    draws = [sample_task(cfg, rng) for _ in range(4000)]
    assert "denovo_ligand" not in draws
    assert abs(draws.count("rigid_docking") / 4000 - 0.7) < 0.03


def test_adam_and_clip():
    theta, g = np.ones(4), np.array([1.0, -2.0, 0.0, 4.0])
    same, st = adam_update(theta, g, AdamState.zeros(4), lr=0.0)
    assert np.array_equal(same, theta) and st.step == 1
    new, _ = adam_update(theta, g, AdamState.zeros(4), lr=0.1)
    assert np.allclose(new, theta - 0.1 * np.sign(g), atol=1e-6)  # first step is sign-like
    clipped, norm = clip_global_norm(np.array([3.0, 4.0]), 1.0)
    assert norm == 5.0 and np.allclose(clipped, [0.6, 0.8])
    kept, _ = clip_global_norm(np.array([0.3, 0.4]), 1.0)
    assert kept.tolist() == [0.3, 0.4]


@pytest.fixture
def small_setup(corpus, vocab, registry):
    cfg = TrainConfig(tasks={"denovo_ligand": 0.5, "ligand_conformer": 0.5}, steps=6, batch_size=2, net=TINY_NET)
    model = Denoiser.create(cfg.net_config, registry, seed=0)
    data = TaskData([SystemRecord(m) for m in corpus], vocab)
    return cfg, model, data


def test_train_runs_and_records(small_setup, tmp_path):
    cfg, model, data = small_setup
    before = model.params.flat.copy()
    res = train(model, data, cfg)
    assert len(res.history) == 6 and res.opt.step == 6
    assert not np.array_equal(before, res.model.params.flat)
    assert all(np.isfinite(r["total"]) for r in res.history)
    write_metrics(res.history, tmp_path / "m.csv")
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert len(rows) == 6 and rows[0]["step"] == "1"


def test_training_is_deterministic(small_setup, registry):
    cfg, model, data = small_setup
    a = train(Denoiser.create(cfg.net_config, registry, 0), data, cfg).model.params.flat
    b = train(Denoiser.create(cfg.net_config, registry, 0), data, cfg).model.params.flat
    assert np.array_equal(a, b)


def test_overfit_single_conformer_batch(corpus, vocab, registry):
    cfg = TrainConfig(tasks={"ligand_conformer": 1.0}, steps=200, batch_size=1, lr=3e-3, net=TINY_NET)
    model = Denoiser.create(cfg.net_config, registry, seed=0)
    data = TaskData([SystemRecord(corpus[3])], vocab)
    task = make_task("ligand_conformer", registry)
    ex = make_batch(data, task, registry, 1, np.random.default_rng(0))
    opt = AdamState.zeros(model.params.size)
    first = None
    for _ in range(cfg.steps):
        opt, res = training_step(ex, task, model, opt, cfg)
        first = res.loss if first is None else first
    assert res.loss < 0.5 * first


def test_non_finite_loss_raises(small_setup):
    cfg, model, data = small_setup
    model.params.flat[:] = np.nan
    with pytest.raises(NonFiniteLoss):
        train(model, data, cfg)


def test_checkpoint_round_trip(small_setup, vocab, tmp_path):
    cfg, model, data = small_setup
    res = train(model, data, cfg)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, res.model, res.opt, vocab, extra={"note": 1})
    ck = load_checkpoint(p, expected_hash=res.model.config_hash)
    assert np.array_equal(ck.model.params.flat, res.model.params.flat)
    assert np.array_equal(ck.opt.v, res.opt.v) and ck.opt.step == res.opt.step
    assert ck.vocab.tuples == vocab.tuples and ck.extra == {"note": 1}
    assert ck.model.cfg == res.model.cfg and ck.model.registry == res.model.registry
    save_checkpoint(tmp_path / "bare.ckpt", res.model)
    assert load_checkpoint(tmp_path / "bare.ckpt").opt is None


def test_checkpoint_errors(small_setup, tmp_path):
    cfg, model, _ = small_setup
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model)
    with pytest.raises(RegistryMismatch):
        load_checkpoint(p, expected_hash="0" * 40)
    raw = p.read_bytes()
    (tmp_path / "short.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint at all")
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "junk.ckpt")


def test_extend_model_keeps_shared_weights(registry):
    base = Denoiser.create(NetConfig(**TINY_NET, tasks=("denovo_ligand",)), registry, seed=0)
    ext = extend_model(base, ["pharm_denovo"])
    assert ext.cfg.tasks == ("denovo_ligand", "pharm_denovo")
    for k in base.params:
        assert np.array_equal(base.params[k], ext.params[k]), k
    assert any(".Ph" in k for k in ext.params) and not any(".Ph" in k for k in base.params)
    same = extend_model(base, ["denovo_ligand"])
    assert np.array_equal(same.params.flat, base.params.flat)


def test_pretrain_then_finetune(corpus, systems, vocab, registry, tmp_path):
    pre = TrainConfig(tasks={"denovo_ligand": 1.0}, steps=2, batch_size=2, net=TINY_NET)
    fine = TrainConfig(tasks={"rigid_docking": 1.0}, steps=2, batch_size=2, net=TINY_NET)
    model = Denoiser.create(pre.net_config, registry, seed=0)
    ligs = TaskData([SystemRecord(m) for m in corpus], vocab)
    pockets = TaskData(systems, vocab)
    out, h1, h2 = pretrain_then_finetune(model, pre, fine, ligs, pockets, registry, tmp_path / "pre.ckpt")
    assert len(h1) == 2 and len(h2) == 2 and (tmp_path / "pre.ckpt").exists()
    assert "rigid_docking" in out.cfg.tasks
    other = build_registry(type(vocab)(vocab.tuples[:-1]))
    with pytest.raises(RegistryMismatch):
        pretrain_then_finetune(model, pre, fine, ligs, pockets, other)
