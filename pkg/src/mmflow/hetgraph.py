"""Heterogeneous graph data model, modality registry and task partitions."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

import numpy as np

from .errors import (
    DuplicateModality,
    EmptyLigand,
    MissingPriorAssignment,
    OverlappingSets,
    UncoveredModality,
)
from .kernels import radius_pairs


class NodeType(enum.IntEnum):
    LIGAND = 0
    PROTEIN = 1
    PHARMACOPHORE = 2
    NPNDE = 3

    @property
    def code(self) -> str:
        return _NODE_CODES[self]

    @classmethod
    def from_code(cls, code: str) -> "NodeType":
        return _CODE_NODES[code]


_NODE_CODES = {NodeType.LIGAND: "L", NodeType.PROTEIN: "P", NodeType.PHARMACOPHORE: "Ph", NodeType.NPNDE: "O"}
_CODE_NODES = {v: k for k, v in _NODE_CODES.items()}


class EdgeType(NamedTuple):
    src: NodeType
    dst: NodeType

    def __str__(self) -> str:
        return f"{self.src.code}-{self.dst.code}"

    @classmethod
    def parse(cls, text: str) -> "EdgeType":
        a, b = text.split("-")
        return cls(NodeType.from_code(a), NodeType.from_code(b))


L, P, PH, O = NodeType.LIGAND, NodeType.PROTEIN, NodeType.PHARMACOPHORE, NodeType.NPNDE
LL = EdgeType(L, L)
OO = EdgeType(O, O)

DISCRETE = "discrete"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class ModalityDescriptor:
    """One modality: ``size`` is the vocabulary size (mask token included, last index)
    for discrete modalities and the dimension for continuous ones."""

    id: str
    kind: str
    size: int
    carrier: NodeType | EdgeType
    group: str = ""

    def __post_init__(self):
        if self.kind == DISCRETE and self.size < 2:
            raise ValueError(f"{self.id}: discrete vocab_size must be >= 2")
        if self.kind == CONTINUOUS and self.size < 1:
            raise ValueError(f"{self.id}: continuous dim must be >= 1")
        if self.kind not in (DISCRETE, CONTINUOUS):
            raise ValueError(f"{self.id}: unknown kind {self.kind!r}")

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    @property
    def on_edge(self) -> bool:
        return isinstance(self.carrier, EdgeType)

    @property
    def mask_token(self) -> int:
        return self.size - 1

    def to_dict(self) -> dict:
        carrier = str(self.carrier) if self.on_edge else self.carrier.code
        return {"id": self.id, "kind": self.kind, "size": self.size, "carrier": carrier, "group": self.group}

    @classmethod
    def from_dict(cls, d: dict) -> "ModalityDescriptor":
        c = d["carrier"]
        carrier = EdgeType.parse(c) if "-" in c else NodeType.from_code(c)
        return cls(d["id"], d["kind"], int(d["size"]), carrier, d.get("group", ""))


class ModalityRegistry:
    """Ordered set of modalities with stable integer handles."""

    def __init__(self, descriptors: Iterable[ModalityDescriptor] = ()):
        self._items: dict[str, ModalityDescriptor] = {}
        for d in descriptors:
            if d.id in self._items:
                raise DuplicateModality(f"duplicate modality id {d.id!r}")
            self._items[d.id] = d

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items.values())

    def __contains__(self, mid):
        return mid in self._items

    def __getitem__(self, mid) -> ModalityDescriptor:
        return self._items[mid]

    def __eq__(self, other):
        return isinstance(other, ModalityRegistry) and list(self) == list(other)

    @property
    def ids(self) -> list[str]:
        return list(self._items)

    def handle(self, mid: str) -> int:
        return self.ids.index(mid)

    def on_node(self, ntype: NodeType) -> list[ModalityDescriptor]:
        return [d for d in self if d.carrier == ntype and not d.on_edge]

    def on_edge(self, etype: EdgeType) -> list[ModalityDescriptor]:
        return [d for d in self if d.on_edge and d.carrier == etype]

    def to_json(self) -> str:
        return json.dumps({"modalities": [d.to_dict() for d in self]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModalityRegistry":
        return cls(ModalityDescriptor.from_dict(d) for d in json.loads(text)["modalities"])


def register_modalities(descriptors: list[ModalityDescriptor]) -> ModalityRegistry:
    return ModalityRegistry(descriptors)


# Position modality per node type; a node type is present in a graph iff its
# position modality is not absent under the task.
POSITION_MODALITY = {L: "lig_pos", P: "prot_pos", PH: "pharm_pos", O: "npnde_pos"}

BOND_VOCAB = 5  # orders 0..3 plus mask
PHARM_VOCAB = 8  # seven feature classes plus mask

GROUPS = {
    "ligand_structure": ["lig_pos"],
    "ligand_identity": ["lig_atom_type", "lig_bond_order"],
    "pharmacophore": ["pharm_pos", "pharm_type"],
    "protein_structure": ["prot_pos", "npnde_pos"],
    "protein_identity": [
        "prot_res_name", "prot_element", "prot_atom_name",
        "npnde_element", "npnde_charge", "npnde_bond_order",
    ],
}


def default_modalities(
    n_atom_types: int,
    n_res_names: int = 22,
    n_prot_elements: int = 6,
    n_atom_names: int = 40,
    n_npnde_elements: int = 12,
    n_npnde_charges: int = 6,
) -> list[ModalityDescriptor]:
    """The thirteen supported modalities. Discrete sizes count the mask token."""
    C, D = CONTINUOUS, DISCRETE
    rows = [
        ("lig_pos", C, 3, L, "ligand_structure"),
        ("lig_atom_type", D, n_atom_types, L, "ligand_identity"),
        ("lig_bond_order", D, BOND_VOCAB, LL, "ligand_identity"),
        ("pharm_pos", C, 3, PH, "pharmacophore"),
        ("pharm_type", D, PHARM_VOCAB, PH, "pharmacophore"),
        ("prot_pos", C, 3, P, "protein_structure"),
        ("npnde_pos", C, 3, O, "protein_structure"),
        ("prot_res_name", D, n_res_names, P, "protein_identity"),
        ("prot_element", D, n_prot_elements, P, "protein_identity"),
        ("prot_atom_name", D, n_atom_names, P, "protein_identity"),
        ("npnde_element", D, n_npnde_elements, O, "protein_identity"),
        ("npnde_charge", D, n_npnde_charges, O, "protein_identity"),
        ("npnde_bond_order", D, BOND_VOCAB, OO, "protein_identity"),
    ]
    return [ModalityDescriptor(*r) for r in rows]


@dataclass(frozen=True)
class TaskSpec:
    name: str
    generated: frozenset
    conditioning: frozenset
    absent: frozenset
    priors: dict = field(default_factory=dict)
    couplings: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def __hash__(self):
        return hash((self.name, self.generated, self.conditioning, self.absent))

    def present(self) -> frozenset:
        return self.generated | self.conditioning

    def node_types(self) -> list[NodeType]:
        present = self.present()
        return [nt for nt, m in POSITION_MODALITY.items() if m in present]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "generated": sorted(self.generated),
            "conditioning": sorted(self.conditioning),
            "absent": sorted(self.absent),
            "priors": dict(sorted(self.priors.items())),
            "couplings": dict(sorted(self.couplings.items())),
            "paths": dict(sorted(self.paths.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(
            d["name"], frozenset(d["generated"]), frozenset(d["conditioning"]), frozenset(d["absent"]),
            dict(d.get("priors", {})), dict(d.get("couplings", {})), dict(d.get("paths", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "TaskSpec":
        return cls.from_dict(json.loads(text))


def validate_task(spec: TaskSpec, registry: ModalityRegistry) -> None:
    """Raise unless the three sets partition the registry and every generated
    modality has a prior, coupling and path."""
    g, c, a = set(spec.generated), set(spec.conditioning), set(spec.absent)
    overlap = (g & c) | (g & a) | (c & a)
    if overlap:
        raise OverlappingSets(f"{spec.name}: modalities in more than one set: {sorted(overlap)}")
    covered = g | c | a
    missing = set(registry.ids) - covered
    extra = covered - set(registry.ids)
    if missing or extra:
        raise UncoveredModality(
            f"{spec.name}: uncovered {sorted(missing)}, unknown {sorted(extra)}"
        )
    for m in g:
        if not (spec.priors.get(m) and spec.couplings.get(m) and spec.paths.get(m)):
            raise MissingPriorAssignment(f"{spec.name}: generated modality {m!r} lacks prior/coupling/path")


# name -> (present groups that are fixed, generated groups)
TASK_TABLE = {
    "denovo_ligand": ((), ("ligand_identity", "ligand_structure")),
    "ligand_conformer": (("ligand_identity",), ("ligand_structure",)),
    "rigid_docking": (("ligand_identity", "protein_identity", "protein_structure"), ("ligand_structure",)),
    "pocket_denovo": (("protein_identity", "protein_structure"), ("ligand_identity", "ligand_structure")),
    "pharm_denovo": (("pharmacophore",), ("ligand_identity", "ligand_structure")),
    "pharm_conformer": (("ligand_identity", "pharmacophore"), ("ligand_structure",)),
    "pharm_rigid_docking": (
        ("protein_identity", "protein_structure", "ligand_identity", "pharmacophore"),
        ("ligand_structure",),
    ),
    "pocket_pharm_denovo": (
        ("protein_identity", "protein_structure", "pharmacophore"),
        ("ligand_identity", "ligand_structure"),
    ),
}


def make_task(name: str, registry: ModalityRegistry) -> TaskSpec:
    """Build one of the supported tasks against ``registry``."""
    if name not in TASK_TABLE:
        raise KeyError(f"unknown task {name!r}; supported: {', '.join(TASK_TABLE)}")
    fixed, gen = TASK_TABLE[name]
    generated = {m for grp in gen for m in GROUPS[grp] if m in registry}
    conditioning = {m for grp in fixed for m in GROUPS[grp] if m in registry}
    absent = set(registry.ids) - generated - conditioning
    de_novo = "ligand_identity" in gen
    priors, couplings, paths = {}, {}, {}
    for m in generated:
        if registry[m].is_discrete:
            priors[m], couplings[m], paths[m] = "masked", "independent", "masked"
        else:
            priors[m] = "gaussian_com"
            couplings[m] = "permutation" if de_novo else "independent"
            paths[m] = "distortion"
    spec = TaskSpec(name, frozenset(generated), frozenset(conditioning), frozenset(absent), priors, couplings, paths)
    validate_task(spec, registry)
    return spec


def supported_tasks(registry: ModalityRegistry) -> dict[str, TaskSpec]:
    return {name: make_task(name, registry) for name in TASK_TABLE}


# ---------------------------------------------------------------------------
# edges


def build_complete_ligand_edges(n_ligand_atoms: int) -> np.ndarray:
    """All ordered pairs (i, j), i != j, in lexicographic order."""
    n = int(n_ligand_atoms)
    if n <= 0:
        raise EmptyLigand("ligand must have at least one atom")
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = i != j
    return np.stack([i[keep], j[keep]], axis=1).astype(np.int64).reshape(-1, 2)


def build_cross_edges(src_positions, dst_positions, cutoff: float, exclude_self: bool = False) -> np.ndarray:
    """Pairs within ``cutoff`` angstrom, sorted by (src, dst)."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    return radius_pairs(src_positions, dst_positions, cutoff, exclude_self=exclude_self)


def reverse_edge_index(index: np.ndarray, n: int) -> np.ndarray:
    """For a symmetric edge list over ``n`` nodes, position of each edge's reverse."""
    key = index[:, 0] * n + index[:, 1]
    rkey = index[:, 1] * n + index[:, 0]
    order = np.argsort(key)
    pos = np.searchsorted(key[order], rkey)
    return order[pos]


# ---------------------------------------------------------------------------
# graphs


@dataclass
class NodeSet:
    batch: np.ndarray
    data: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.batch)


@dataclass
class EdgeSet:
    index: np.ndarray
    data: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.index)


@dataclass
class HeteroGraph:
    """A (possibly batched) heterogeneous graph.

    Node indices are local to each node type; ``batch`` maps nodes to their
    member graph. Only static edge types (ligand-ligand, npnde-npnde) are stored;
    distance-derived edges are rebuilt from current positions by
    :func:`radius_edges`.
    """

    nodes: dict
    edges: dict
    n_graphs: int = 1

    def __post_init__(self):
        self.check()

    def check(self):
        for nt, ns in self.nodes.items():
            for mid, arr in ns.data.items():
                if len(arr) != ns.n:
                    raise ValueError(f"{mid}: length {len(arr)} != {ns.n} {nt.name} nodes")
        for et, es in self.edges.items():
            idx = es.index
            if idx.size and (idx.min() < 0 or idx[:, 0].max() >= self.count(et.src) or idx[:, 1].max() >= self.count(et.dst)):
                raise ValueError(f"{et}: edge index out of range")
            for mid, arr in es.data.items():
                if len(arr) != es.n:
                    raise ValueError(f"{mid}: length {len(arr)} != {es.n} edges")

    def count(self, nt: NodeType) -> int:
        return self.nodes[nt].n if nt in self.nodes else 0

    def node_types(self) -> list[NodeType]:
        return sorted(self.nodes)

    def positions(self, nt: NodeType) -> np.ndarray:
        return self.nodes[nt].data[POSITION_MODALITY[nt]]

    def value(self, mid: str, registry: ModalityRegistry) -> np.ndarray:
        carrier = registry[mid].carrier
        store = self.edges[carrier] if registry[mid].on_edge else self.nodes[carrier]
        return store.data[mid]

    def with_values(self, values: dict, registry: ModalityRegistry) -> "HeteroGraph":
        """Copy with some modality arrays replaced (arrays are shared, not copied)."""
        nodes = {nt: replace(ns, data=dict(ns.data)) for nt, ns in self.nodes.items()}
        edges = {et: replace(es, data=dict(es.data)) for et, es in self.edges.items()}
        for mid, arr in values.items():
            d = registry[mid]
            (edges if d.on_edge else nodes)[d.carrier].data[mid] = arr
        return HeteroGraph(nodes, edges, self.n_graphs)

    def graph_slices(self, nt: NodeType) -> list[np.ndarray]:
        b = self.nodes[nt].batch
        return [np.nonzero(b == g)[0] for g in range(self.n_graphs)]

    def edge_batch(self, et: EdgeType) -> np.ndarray:
        return self.nodes[et.src].batch[self.edges[et].index[:, 0]]


def check_complete_ligand(graph: HeteroGraph) -> bool:
    """True iff the ligand-ligand edge set is exactly all ordered intra-graph pairs."""
    if L not in graph.nodes:
        return LL not in graph.edges
    b = graph.nodes[L].batch
    expected = {(i, j) for i in range(len(b)) for j in range(len(b)) if i != j and b[i] == b[j]}
    got = {tuple(e) for e in graph.edges[LL].index.tolist()}
    return got == expected and len(got) == graph.edges[LL].n


def dynamic_edge_types(node_types: Iterable[NodeType]) -> list[EdgeType]:
    """Distance-derived edge types among the given node types."""
    nts = sorted(set(node_types))
    out = []
    for a in nts:
        for b in nts:
            if a == b and a in (L, O):
                continue
            out.append(EdgeType(a, b))
    return out


def static_edge_types(node_types: Iterable[NodeType]) -> list[EdgeType]:
    nts = set(node_types)
    return [et for et in (LL, OO) if et.src in nts]


DEFAULT_CUTOFF = 5.0


def radius_edges(graph: HeteroGraph, positions: dict | None = None, cutoffs: dict | None = None) -> dict:
    """Distance-derived edges for every ordered pair of present node types.

    ``positions`` may override the stored positions (the network passes its
    current coordinates). Same-type pairs exclude self loops.
    """
    cutoffs = cutoffs or {}
    pos = {nt: graph.positions(nt) for nt in graph.nodes}
    if positions:
        pos.update(positions)
    out = {}
    for et in dynamic_edge_types(graph.nodes):
        cut = cutoffs.get(str(et), cutoffs.get("default", DEFAULT_CUTOFF))
        out[et] = radius_pairs(
            pos[et.src], pos[et.dst], cut,
            graph.nodes[et.src].batch, graph.nodes[et.dst].batch,
            exclude_self=et.src == et.dst,
        )
    return out


def batch_graphs(graphs: list[HeteroGraph]) -> HeteroGraph:
    """Disjoint union; node indices are offset per type and batch ids renumbered."""
    if not graphs:
        raise ValueError("nothing to batch")
    ntypes = sorted({nt for g in graphs for nt in g.nodes})
    etypes = sorted({et for g in graphs for et in g.edges})
    nodes, edges = {}, {}
    offsets = {nt: 0 for nt in ntypes}
    gcount = 0
    batches = {nt: [] for nt in ntypes}
    ndata = {nt: {} for nt in ntypes}
    naux = {nt: {} for nt in ntypes}
    eidx = {et: [] for et in etypes}
    edata = {et: {} for et in etypes}
    for g in graphs:
        for nt in ntypes:
            if nt not in g.nodes:
                continue
            ns = g.nodes[nt]
            batches[nt].append(ns.batch + gcount)
            for k, v in ns.data.items():
                ndata[nt].setdefault(k, []).append(v)
            for k, v in ns.aux.items():
                naux[nt].setdefault(k, []).append(v)
        for et in etypes:
            if et not in g.edges:
                continue
            es = g.edges[et]
            eidx[et].append(es.index + np.array([offsets[et.src], offsets[et.dst]]))
            for k, v in es.data.items():
                edata[et].setdefault(k, []).append(v)
        for nt in ntypes:
            offsets[nt] += g.count(nt)
        gcount += g.n_graphs
    for nt in ntypes:
        nodes[nt] = NodeSet(
            np.concatenate(batches[nt]),
            {k: np.concatenate(v) for k, v in ndata[nt].items()},
            {k: np.concatenate(v) for k, v in naux[nt].items()},
        )
    for et in etypes:
        edges[et] = EdgeSet(
            np.concatenate(eidx[et]).astype(np.int64).reshape(-1, 2),
            {k: np.concatenate(v) for k, v in edata[et].items()},
        )
    return HeteroGraph(nodes, edges, gcount)


@dataclass
class FlowState:
    """Time plus current values of every present modality."""

    t: float
    graph: HeteroGraph
    task: TaskSpec
