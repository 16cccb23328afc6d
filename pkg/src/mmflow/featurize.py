"""Turning molecules and systems into task-specific heterogeneous graphs and back."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chem import (
    ATOM_NAMES,
    NPNDE_CHARGES,
    NPNDE_ELEMENTS,
    PROTEIN_ELEMENTS,
    RESIDUE_NAMES,
    CondensedVocab,
    PharmacophoreFeature,
    SystemRecord,
    ToyMolecule,
    encode_atoms,
    extract_pharmacophores,
    molecule_from_types,
    residue_positional_encoding,
)
from .errors import InvalidInput
from .flow import PRIOR_VARIANCE, apply_priors
from .hetgraph import (
    DEFAULT_CUTOFF,
    LL,
    OO,
    EdgeSet,
    FlowState,
    HeteroGraph,
    ModalityRegistry,
    NodeSet,
    NodeType,
    TaskSpec,
    build_complete_ligand_edges,
    build_cross_edges,
    default_modalities,
    register_modalities,
)

PE_DIM = 16


def build_registry(vocab: CondensedVocab) -> ModalityRegistry:
    """Registry sized from the ligand vocabulary and the fixed protein/NPNDE tables (+1 mask each)."""
    return register_modalities(default_modalities(
        vocab.size,
        n_res_names=len(RESIDUE_NAMES) + 1,
        n_prot_elements=len(PROTEIN_ELEMENTS) + 1,
        n_atom_names=len(ATOM_NAMES) + 1,
        n_npnde_elements=len(NPNDE_ELEMENTS) + 1,
        n_npnde_charges=len(NPNDE_CHARGES) + 1,
    ))


def _index(table, values, fallback):
    lut = {v: i for i, v in enumerate(table)}
    return np.array([lut.get(v, lut[fallback]) for v in values], dtype=np.int64)


def _ligand_nodes(mol: ToyMolecule, vocab: CondensedVocab):
    n = mol.n_atoms
    idx = build_complete_ligand_edges(n)
    nodes = NodeSet(np.zeros(n, np.int64), {"lig_pos": mol.coords.copy(), "lig_atom_type": encode_atoms(mol, vocab)})
    edges = EdgeSet(idx, {"lig_bond_order": mol.bonds[idx[:, 0], idx[:, 1]].astype(np.int64)})
    return nodes, edges


def placeholder_ligand(n_atoms: int, vocab: CondensedVocab) -> tuple[NodeSet, EdgeSet]:
    """Ligand nodes with masked tokens and zero positions, to be overwritten by priors."""
    idx = build_complete_ligand_edges(n_atoms)
    nodes = NodeSet(np.zeros(n_atoms, np.int64), {
        "lig_pos": np.zeros((n_atoms, 3)), "lig_atom_type": np.full(n_atoms, vocab.mask_token, np.int64)})
    edges = EdgeSet(idx, {"lig_bond_order": np.full(len(idx), 4, np.int64)})
    return nodes, edges


def _protein_nodes(system: SystemRecord, pe_dim: int):
    p = system.protein
    data = {
        "prot_pos": p.coords.copy(),
        "prot_res_name": _index(RESIDUE_NAMES, p.res_names, "UNK"),
        "prot_element": _index(PROTEIN_ELEMENTS, p.elements, "X"),
        "prot_atom_name": _index(ATOM_NAMES, p.atom_names, "UNK"),
    }
    aux = {"res_pe": residue_positional_encoding(p.res_index - (p.res_index.min() if p.n_atoms else 0), pe_dim)
           .reshape(p.n_atoms, pe_dim)}
    return NodeSet(np.zeros(p.n_atoms, np.int64), data, aux)


def _pharm_nodes(features: list[PharmacophoreFeature]):
    n = len(features)
    pos = np.array([f.center for f in features], dtype=np.float64).reshape(n, 3)
    kinds = np.array([int(f.kind) for f in features], dtype=np.int64)
    return NodeSet(np.zeros(n, np.int64), {"pharm_pos": pos, "pharm_type": kinds})


def _npnde_nodes(system: SystemRecord, cutoff: float):
    els, charges, coords, owner = [], [], [], []
    blocks = []
    for k, m in enumerate(system.npndes):
        els += list(m.elements)
        charges += [int(np.clip(c, NPNDE_CHARGES[0], NPNDE_CHARGES[-1])) for c in m.charges]
        coords.append(m.coords)
        owner += [k] * len(m.elements)
        blocks.append(m.bonds)
    n = len(els)
    coords = np.concatenate(coords) if coords else np.zeros((0, 3))
    bonds = np.zeros((n, n), np.int64)
    off = 0
    for b in blocks:
        bonds[off:off + len(b), off:off + len(b)] = b
        off += len(b)
    idx = build_cross_edges(coords, coords, cutoff, exclude_self=True) if n else np.zeros((0, 2), np.int64)
    bonded = np.argwhere(bonds > 0)
    if len(bonded):
        idx = np.unique(np.concatenate([idx, bonded]), axis=0)
    nodes = NodeSet(np.zeros(n, np.int64), {
        "npnde_pos": coords,
        "npnde_element": _index(NPNDE_ELEMENTS, els, "X"),
        "npnde_charge": _index(NPNDE_CHARGES, charges, 0),
    })
    edges = EdgeSet(idx.astype(np.int64).reshape(-1, 2), {"npnde_bond_order": np.minimum(bonds[idx[:, 0], idx[:, 1]], 3)})
    return nodes, edges


def system_graph(system: SystemRecord, task: TaskSpec, vocab: CondensedVocab,
                 pharm: list[PharmacophoreFeature] | None = None, n_atoms: int | None = None,
                 pe_dim: int = PE_DIM, npnde_cutoff: float = DEFAULT_CUTOFF) -> HeteroGraph:
    """Single-system graph holding clean values for every modality present in ``task``.

    With ``n_atoms`` the ligand is a masked placeholder of that size (de novo
    sampling without a reference). Pharmacophores default to those extracted
    from the ligand.
    """
    node_types = task.node_types()
    nodes, edges = {}, {}
    if NodeType.LIGAND in node_types:
        if n_atoms is not None:
            nodes[NodeType.LIGAND], edges[LL] = placeholder_ligand(n_atoms, vocab)
        else:
            nodes[NodeType.LIGAND], edges[LL] = _ligand_nodes(system.ligand, vocab)
    if NodeType.PROTEIN in node_types:
        if system.protein.n_atoms == 0:
            raise InvalidInput(f"task {task.name} needs a protein pocket")
        nodes[NodeType.PROTEIN] = _protein_nodes(system, pe_dim)
    if NodeType.PHARMACOPHORE in node_types:
        feats = pharm if pharm is not None else extract_pharmacophores(system.ligand)
        if not feats:
            raise InvalidInput(f"task {task.name} needs at least one pharmacophore feature")
        nodes[NodeType.PHARMACOPHORE] = _pharm_nodes(feats)
    if NodeType.NPNDE in node_types:
        nodes[NodeType.NPNDE], edges[OO] = _npnde_nodes(system, npnde_cutoff)
    return HeteroGraph(nodes, edges, 1)


def molecule_graph(mol: ToyMolecule, task: TaskSpec, vocab: CondensedVocab, **kw) -> HeteroGraph:
    return system_graph(SystemRecord(mol), task, vocab, **kw)


def prior_center(system: SystemRecord | None) -> np.ndarray:
    """Reference ligand centroid, else pocket centroid, else the origin."""
    if system is not None and system.ligand.n_atoms:
        return system.ligand.coords.mean(axis=0)
    if system is not None and system.protein.n_atoms:
        return system.protein.coords.mean(axis=0)
    return np.zeros(3)


def initial_state(graph: HeteroGraph, task: TaskSpec, registry: ModalityRegistry, rng: np.random.Generator,
                  center, variance: float = PRIOR_VARIANCE) -> FlowState:
    com = np.broadcast_to(np.asarray(center, dtype=np.float64), (graph.n_graphs, 3))
    return FlowState(0.0, apply_priors(graph, task, registry, rng, com, variance), task)


@dataclass
class DecodedLigand:
    molecule: ToyMolecule | None
    type_ids: np.ndarray
    bond_orders: np.ndarray
    coords: np.ndarray
    error: str = ""


def decode_ligand(graph: HeteroGraph, vocab: CondensedVocab, g: int = 0) -> DecodedLigand:
    """Rebuild graph ``g``'s ligand; tokens still masked leave ``molecule`` unset."""
    ns = graph.nodes[NodeType.LIGAND]
    sel = np.nonzero(ns.batch == g)[0]
    types = ns.data["lig_atom_type"][sel]
    coords = ns.data["lig_pos"][sel]
    n = len(sel)
    local = -np.ones(len(ns.batch), np.int64)
    local[sel] = np.arange(n)
    es = graph.edges[LL]
    keep = (local[es.index[:, 0]] >= 0) & (local[es.index[:, 1]] >= 0)
    bonds = np.zeros((n, n), np.int64)
    ii, jj = local[es.index[keep, 0]], local[es.index[keep, 1]]
    orders = es.data["lig_bond_order"][keep]
    bonds[ii, jj] = orders
    if np.any(types == vocab.mask_token) or np.any(orders >= 4):
        return DecodedLigand(None, types, bonds, coords, "masked tokens remain")
    if not np.array_equal(bonds, bonds.T):
        return DecodedLigand(None, types, bonds, coords, "asymmetric bond orders")
    return DecodedLigand(molecule_from_types(types, bonds, coords, vocab), types, bonds, coords)
