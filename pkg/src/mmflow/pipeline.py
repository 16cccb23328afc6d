"""End-to-end sampling: template graphs, priors, joint integration and decoding."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .chem import CondensedVocab, PharmacophoreFeature, SystemRecord, ToyMolecule
from .featurize import DecodedLigand, decode_ligand, initial_state, prior_center, system_graph
from .flow import sample_trajectory
from .hetgraph import FlowState, HeteroGraph, NodeType, TaskSpec, batch_graphs
from .net import Denoiser

DEFAULT_STEPS = 100


@dataclass
class Sample:
    index: int
    ligand: DecodedLigand
    system_index: int
    trajectory: list = field(default_factory=list)

    @property
    def molecule(self) -> ToyMolecule | None:
        return self.ligand.molecule


def template_graph(system: SystemRecord, task: TaskSpec, vocab: CondensedVocab,
                   pharm: list[PharmacophoreFeature] | None = None, n_atoms: int | None = None) -> HeteroGraph:
    """Graph for sampling: conditioning values from ``system``; generated ones are overwritten by priors.

    When ligand identity is generated the reference ligand is not needed; its
    atom count (or ``n_atoms``) sizes the placeholder.
    """
    if "lig_atom_type" in task.generated:
        n = n_atoms if n_atoms is not None else system.ligand.n_atoms
        return system_graph(system, task, vocab, pharm=pharm, n_atoms=n)
    return system_graph(system, task, vocab, pharm=pharm)


def sample_batch(model: Denoiser, vocab: CondensedVocab, task: TaskSpec, systems: list[SystemRecord],
                 rng: np.random.Generator, n_steps: int = DEFAULT_STEPS, pharm: list | None = None,
                 n_atoms: list | None = None, eta: float = 0.0, keep_trajectory: bool = False,
                 centers: list | None = None) -> list[Sample]:
    """Draw one sample per entry of ``systems`` (repeat a system to get several), integrated as one batch."""
    graphs = []
    for k, s in enumerate(systems):
        graphs.append(template_graph(s, task, vocab, None if pharm is None else pharm[k],
                                     None if n_atoms is None else n_atoms[k]))
    g = batch_graphs(graphs)
    com = np.array([prior_center(s) for s in systems]) if centers is None else np.asarray(centers, float)
    init = initial_state(g, task, model.registry, rng, com)
    traj = sample_trajectory(task, init, model, n_steps, rng, model.registry, eta=eta)
    final = traj[-1].graph
    out = []
    for k in range(len(systems)):
        out.append(Sample(k, decode_ligand(final, vocab, k), k, traj if keep_trajectory else []))
    return out


def sample_many(model: Denoiser, vocab: CondensedVocab, task: TaskSpec, systems: list[SystemRecord],
                n_samples: int, seed: int, n_steps: int = DEFAULT_STEPS, batch_size: int = 50,
                pharm: list | None = None, n_atoms: list | None = None, eta: float = 0.0) -> list[Sample]:
    """``n_samples`` samples cycling over ``systems``; per-batch generators derive from one seed."""
    order = [i % len(systems) for i in range(n_samples)]
    out = []
    for b, start in enumerate(range(0, n_samples, batch_size)):
        idx = order[start:start + batch_size]
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        batch = sample_batch(
            model, vocab, task, [systems[i] for i in idx], rng, n_steps,
            pharm=None if pharm is None else [pharm[i] for i in idx],
            n_atoms=None if n_atoms is None else [n_atoms[i] for i in idx], eta=eta,
        )
        for k, s in enumerate(batch):
            s.index = start + k
            s.system_index = idx[k]
            out.append(s)
    return out


def trajectory_records(states: list[FlowState], registry, g: int = 0) -> list[dict]:
    """One JSON-ready dict per step: time, positions and tokens of graph ``g``'s present modalities."""
    recs = []
    for st in states:
        graph = st.graph
        rec = {"t": float(st.t), "positions": {}, "tokens": {}}
        for nt, ns in graph.nodes.items():
            sel = ns.batch == g
            for mid, arr in ns.data.items():
                key = rec["positions"] if registry[mid].kind == "continuous" else rec["tokens"]
                key[mid] = np.asarray(arr)[sel].tolist()
        for et, es in graph.edges.items():
            sel = graph.edge_batch(et) == g
            for mid, arr in es.data.items():
                rec["tokens"][mid] = np.asarray(arr)[sel].tolist()
        recs.append(rec)
    return recs


def trajectory_summary(states: list[FlowState], registry, g: int = 0) -> list[dict]:
    """Per-step plot data: time, ligand radius of gyration, fraction of masked ligand tokens."""
    rows = []
    for st in states:
        graph = st.graph
        row = {"t": float(st.t)}
        if NodeType.LIGAND in graph.nodes:
            ns = graph.nodes[NodeType.LIGAND]
            sel = ns.batch == g
            x = ns.data["lig_pos"][sel]
            row["lig_rg"] = float(np.sqrt(((x - x.mean(0)) ** 2).sum(1).mean())) if len(x) else 0.0
            mask = registry["lig_atom_type"].mask_token
            row["lig_masked_frac"] = float(np.mean(ns.data["lig_atom_type"][sel] == mask)) if len(x) else 0.0
        rows.append(row)
    return rows


def dumps_trajectory(states, registry, g: int = 0) -> str:
    return "\n".join(json.dumps(r, separators=(",", ":")) for r in trajectory_records(states, registry, g))
