import json

import numpy as np

from mmflow.featurize import DecodedLigand, decode_ligand, prior_center, system_graph
from mmflow.hetgraph import NodeType, make_task
from mmflow.net import Denoiser, NetConfig
from mmflow.pipeline import dumps_trajectory, sample_batch, sample_many, template_graph, trajectory_summary

from .conftest import TINY_NET


def _model(registry, tasks):
    return Denoiser.create(NetConfig(**TINY_NET, tasks=tasks), registry, seed=0)


def test_template_graph_masks_generated_identity(systems, vocab, registry):
    task = make_task("denovo_ligand", registry)
    g = template_graph(systems[0], task, vocab, n_atoms=4)
    assert g.count(NodeType.LIGAND) == 4
    assert np.all(g.value("lig_atom_type", registry) == vocab.mask_token)
    dock = make_task("rigid_docking", registry)
    g = template_graph(systems[0], dock, vocab)
    assert np.array_equal(g.value("lig_atom_type", registry), system_graph(systems[0], dock, vocab).value(
        "lig_atom_type", registry))


def test_decode_ligand_round_trip(systems, vocab, registry):
    g = system_graph(systems[1], make_task("denovo_ligand", registry), vocab)
    dec = decode_ligand(g, vocab)
    assert isinstance(dec, DecodedLigand) and dec.error == ""
    assert dec.molecule.atom_tuples() == systems[1].ligand.atom_tuples()
    assert np.array_equal(dec.molecule.bonds, systems[1].ligand.bonds)
    masked = g.with_values({"lig_atom_type": np.full(g.count(NodeType.LIGAND), vocab.mask_token)}, registry)
    assert decode_ligand(masked, vocab).molecule is None


def test_prior_center_fallbacks(systems):
    assert np.allclose(prior_center(systems[0]), systems[0].ligand.coords.mean(0))
    assert np.array_equal(prior_center(None), np.zeros(3))


def test_sample_many_deterministic_and_complete(systems, vocab, registry):
    model = _model(registry, ("denovo_ligand",))
    task = make_task("denovo_ligand", registry)
    a = sample_many(model, vocab, task, systems[:2], 5, seed=3, n_steps=4, batch_size=2)
    b = sample_many(model, vocab, task, systems[:2], 5, seed=3, n_steps=4, batch_size=2)
    assert [s.index for s in a] == list(range(5))
    assert [s.system_index for s in a] == [0, 1, 0, 1, 0]
    for x, y in zip(a, b):
        assert np.array_equal(x.ligand.coords, y.ligand.coords)
        assert np.array_equal(x.ligand.type_ids, y.ligand.type_ids)
        assert x.molecule is not None  # terminal state is fully unmasked
        assert x.molecule.n_atoms == systems[x.system_index].ligand.n_atoms


def test_docking_preserves_identity(systems, vocab, registry):
    model = _model(registry, ("rigid_docking",))
    task = make_task("rigid_docking", registry)
    out = sample_batch(model, vocab, task, systems[:2], np.random.default_rng(0), n_steps=3)
    for s in out:
        ref = systems[s.system_index].ligand
        assert s.molecule.atom_tuples() == ref.atom_tuples()
        assert np.array_equal(s.molecule.bonds, ref.bonds)


def test_trajectory_export(systems, vocab, registry):
    model = _model(registry, ("denovo_ligand",))
    task = make_task("denovo_ligand", registry)
    s = sample_batch(model, vocab, task, systems[:1], np.random.default_rng(0), n_steps=5, keep_trajectory=True)[0]
    assert len(s.trajectory) == 6
    lines = dumps_trajectory(s.trajectory, registry).splitlines()
    assert len(lines) == 6
    first, last = json.loads(lines[0]), json.loads(lines[-1])
    assert first["t"] == 0.0 and last["t"] == 1.0
    assert set(first["positions"]) == {"lig_pos"}
    rows = trajectory_summary(s.trajectory, registry)
    assert rows[0]["lig_masked_frac"] == 1.0 and rows[-1]["lig_masked_frac"] == 0.0
