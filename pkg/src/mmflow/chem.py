"""Toy chemistry: molecules, condensed atom typing, pharmacophores, pockets, filters.

This layer stands in for a real cheminformatics toolkit. Valence rules,
pharmacophore patterns and protein atom classes are deliberately simple
structural rules over an explicit atom/bond model.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional

import networkx as nx
import numpy as np

from .errors import (
    BadDimension,
    EmptyCorpus,
    MissingMetadata,
    NoEligibleFeatures,
    OutOfVocabulary,
)
from .kernels import min_distances

SUPPORTED_ELEMENTS = ("C", "H", "N", "O", "F", "P", "S", "Cl", "Br", "I", "B")
HALOGENS = ("F", "Cl", "Br", "I")


class Hybridization(enum.IntEnum):
    SP = 0
    SP2 = 1
    SP3 = 2
    OTHER = 3


class Chirality(enum.IntEnum):
    NONE = 0
    CW = 1
    CCW = 2


@dataclass
class ToyMolecule:
    """Heavy-atom molecule; hydrogens live only in ``n_h``.

    ``conjugated`` marks N/O atoms whose lone pair takes part in conjugation or
    resonance; such atoms are not hydrogen-bond acceptors.
    """

    elements: list
    coords: np.ndarray
    bonds: np.ndarray
    charges: np.ndarray = None
    n_h: np.ndarray = None
    aromatic: np.ndarray = None
    hybridization: np.ndarray = None
    in_ring: np.ndarray = None
    chirality: np.ndarray = None
    conjugated: np.ndarray = None

    def __post_init__(self):
        n = len(self.elements)
        self.elements = list(self.elements)
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(n, 3)
        self.bonds = np.asarray(self.bonds, dtype=np.int64).reshape(n, n)

        def fill(arr, dtype, default=0):
            return np.full(n, default, dtype=dtype) if arr is None else np.asarray(arr, dtype=dtype).reshape(n)

        self.charges = fill(self.charges, np.int64)
        self.n_h = fill(self.n_h, np.int64)
        self.aromatic = fill(self.aromatic, bool, False)
        self.hybridization = fill(self.hybridization, np.int64, int(Hybridization.SP3))
        self.in_ring = fill(self.in_ring, bool, False)
        self.chirality = fill(self.chirality, np.int64, int(Chirality.NONE))
        self.conjugated = fill(self.conjugated, bool, False)
        if not np.array_equal(self.bonds, self.bonds.T) or np.any(np.diag(self.bonds) != 0):
            raise ValueError("bond matrix must be symmetric with zero diagonal")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coordinates must be finite")

    @property
    def n_atoms(self) -> int:
        return len(self.elements)

    def atom_tuple(self, i: int) -> tuple:
        return (
            self.elements[i],
            int(self.charges[i]),
            int(self.n_h[i]),
            bool(self.aromatic[i]),
            Hybridization(int(self.hybridization[i])).name,
            bool(self.in_ring[i]),
            Chirality(int(self.chirality[i])).name,
        )

    def atom_tuples(self) -> list[tuple]:
        return [self.atom_tuple(i) for i in range(self.n_atoms)]

    def neighbors(self, i: int) -> np.ndarray:
        return np.nonzero(self.bonds[i])[0]

    def bond_list(self) -> list[tuple[int, int, int]]:
        i, j = np.nonzero(np.triu(self.bonds, 1))
        return [(int(a), int(b), int(self.bonds[a, b])) for a, b in zip(i, j)]

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        for i, el in enumerate(self.elements):
            g.add_node(i, element=el, charge=int(self.charges[i]))
        for a, b, order in self.bond_list():
            g.add_edge(a, b, order=order)
        return g

    def to_dict(self) -> dict:
        return {
            "elements": list(self.elements),
            "charges": self.charges.tolist(),
            "n_h": self.n_h.tolist(),
            "aromatic": self.aromatic.tolist(),
            "hybridization": [Hybridization(int(h)).name for h in self.hybridization],
            "in_ring": self.in_ring.tolist(),
            "chirality": [Chirality(int(c)).name for c in self.chirality],
            "conjugated": self.conjugated.tolist(),
            "bonds": [list(b) for b in self.bond_list()],
            "coords": self.coords.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyMolecule":
        n = len(d["elements"])
        bonds = np.zeros((n, n), dtype=np.int64)
        for a, b, order in d.get("bonds", []):
            bonds[a, b] = bonds[b, a] = order
        return cls(
            d["elements"], np.asarray(d["coords"], dtype=np.float64).reshape(n, 3), bonds,
            d.get("charges"), d.get("n_h"), d.get("aromatic"),
            [Hybridization[h] for h in d["hybridization"]] if "hybridization" in d else None,
            d.get("in_ring"),
            [Chirality[c] for c in d["chirality"]] if "chirality" in d else None,
            d.get("conjugated"),
        )


def same_bond_graph(a: ToyMolecule, b: ToyMolecule) -> bool:
    """Graph isomorphism on (element, charge) atoms and bond orders."""
    if a.n_atoms != b.n_atoms or sorted(a.elements) != sorted(b.elements):
        return False
    return nx.is_isomorphic(
        a.to_networkx(), b.to_networkx(),
        node_match=lambda x, y: x["element"] == y["element"] and x["charge"] == y["charge"],
        edge_match=lambda x, y: x["order"] == y["order"],
    )


def topology_hash(mol: ToyMolecule) -> str:
    """Label-invariant topology key: element/charge multiset plus a WL graph hash."""
    g = mol.to_networkx()
    for i in g.nodes:
        g.nodes[i]["label"] = f"{g.nodes[i]['element']}{g.nodes[i]['charge']:+d}"
    for a, b in g.edges:
        g.edges[a, b]["label"] = str(g.edges[a, b]["order"])
    wl = nx.weisfeiler_lehman_graph_hash(g, node_attr="label", edge_attr="label", iterations=4)
    atoms = sorted(zip(mol.elements, mol.charges.tolist()))
    return hashlib.sha1(f"{atoms}|{wl}".encode()).hexdigest()


# ---------------------------------------------------------------------------
# valence

_BASE_VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1, "Cl": 1, "Br": 1, "I": 1, "S": 6, "P": 5, "B": 3, "H": 1}


def max_valence(element: str, charge: int) -> int:
    base = _BASE_VALENCE[element]
    if element in ("N", "O"):
        return base + max(charge, 0)
    return base


def toy_valence_check(mol: ToyMolecule) -> list[int]:
    """Indices of atoms whose bond orders + H + negative charge exceed the element maximum."""
    bad = []
    used = mol.bonds.sum(axis=1)
    for i, el in enumerate(mol.elements):
        if el not in _BASE_VALENCE:
            bad.append(i)
            continue
        q = int(mol.charges[i])
        if used[i] + mol.n_h[i] + abs(min(q, 0)) > max_valence(el, q):
            bad.append(i)
    return bad


def rings(mol: ToyMolecule) -> list[list[int]]:
    return [sorted(c) for c in nx.minimum_cycle_basis(mol.to_networkx())]


# ---------------------------------------------------------------------------
# condensed atom typing


@dataclass
class CondensedVocab:
    tuples: list

    def __post_init__(self):
        self.tuples = [tuple(t) for t in self.tuples]
        self._index = {t: i for i, t in enumerate(self.tuples)}
        if len(self._index) != len(self.tuples):
            raise ValueError("vocabulary tuples must be unique")

    @property
    def mask_token(self) -> int:
        return len(self.tuples)

    @property
    def size(self) -> int:
        return len(self.tuples) + 1

    def __len__(self):
        return self.size

    def encode_tuple(self, t: tuple) -> int:
        try:
            return self._index[tuple(t)]
        except KeyError:
            raise OutOfVocabulary(f"atom type {t} not in vocabulary") from None

    def lookup(self, idx: int) -> tuple:
        return self.tuples[idx]

    def to_json(self) -> str:
        return json.dumps({"tuples": [list(t) for t in self.tuples], "mask_token": self.mask_token}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CondensedVocab":
        return cls([tuple(t) for t in json.loads(text)["tuples"]])

    def digest(self) -> str:
        return hashlib.sha1(json.dumps([list(t) for t in self.tuples]).encode()).hexdigest()


def build_condensed_vocab(corpus: Iterable[ToyMolecule]) -> CondensedVocab:
    """All distinct 7-tuples in first-seen order; the mask token follows them."""
    seen: dict = {}
    any_mol = False
    for mol in corpus:
        any_mol = True
        for t in mol.atom_tuples():
            seen.setdefault(t, None)
    if not any_mol:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    return CondensedVocab(list(seen))


def encode_atoms(mol: ToyMolecule, vocab: CondensedVocab) -> np.ndarray:
    return np.array([vocab.encode_tuple(t) for t in mol.atom_tuples()], dtype=np.int64)


def decode_atoms(ids, vocab: CondensedVocab) -> list[tuple]:
    return [vocab.lookup(int(i)) for i in ids]


def molecule_from_types(type_ids, bonds, coords, vocab: CondensedVocab) -> ToyMolecule:
    """Rebuild a molecule from condensed type ids, a bond matrix and coordinates."""
    tuples = decode_atoms(type_ids, vocab)
    n = len(tuples)
    bonds = np.asarray(bonds, dtype=np.int64).reshape(n, n)
    return ToyMolecule(
        [t[0] for t in tuples], coords, bonds,
        charges=[t[1] for t in tuples], n_h=[t[2] for t in tuples], aromatic=[t[3] for t in tuples],
        hybridization=[Hybridization[t[4]] for t in tuples], in_ring=[t[5] for t in tuples],
        chirality=[Chirality[t[6]] for t in tuples],
    )


# ---------------------------------------------------------------------------
# pharmacophores


class PharmKind(enum.IntEnum):
    AROMATIC = 0
    DONOR = 1
    ACCEPTOR = 2
    HYDROPHOBIC = 3
    HALOGEN = 4
    POSITIVE = 5
    NEGATIVE = 6


@dataclass
class PharmacophoreFeature:
    kind: PharmKind
    center: np.ndarray
    member_atoms: tuple

    def to_dict(self) -> dict:
        return {"kind": self.kind.name, "center": list(map(float, self.center)), "member_atoms": list(self.member_atoms)}

    @classmethod
    def from_dict(cls, d: dict) -> "PharmacophoreFeature":
        return cls(PharmKind[d["kind"]], np.asarray(d["center"], dtype=np.float64), tuple(d["member_atoms"]))


def is_donor_atom(mol: ToyMolecule, i: int) -> bool:
    return mol.elements[i] in ("N", "O", "S") and mol.n_h[i] >= 1


def is_acceptor_atom(mol: ToyMolecule, i: int) -> bool:
    return mol.elements[i] in ("N", "O") and not mol.conjugated[i]


def is_nonpolar_atom(mol: ToyMolecule, i: int) -> bool:
    """C or S, non-aromatic, with no bonded heteroatom."""
    if mol.elements[i] not in ("C", "S") or mol.aromatic[i]:
        return False
    return all(mol.elements[j] in ("C", "S") or mol.elements[j] == "H" for j in mol.neighbors(i))


def _feature(kind, mol, members):
    members = tuple(sorted(int(m) for m in members))
    return PharmacophoreFeature(kind, mol.coords[list(members)].mean(axis=0), members)


def extract_pharmacophores(mol: ToyMolecule) -> list[PharmacophoreFeature]:
    """Features in a fixed order: aromatic rings, donors, acceptors, hydrophobic
    groups, halogens, positive, negative."""
    feats = []
    for ring in rings(mol):
        if len(ring) in (5, 6) and all(mol.aromatic[i] for i in ring):
            feats.append(_feature(PharmKind.AROMATIC, mol, ring))
    for i in range(mol.n_atoms):
        if is_donor_atom(mol, i):
            feats.append(_feature(PharmKind.DONOR, mol, [i]))
    for i in range(mol.n_atoms):
        if is_acceptor_atom(mol, i):
            feats.append(_feature(PharmKind.ACCEPTOR, mol, [i]))
    nonpolar = [i for i in range(mol.n_atoms) if is_nonpolar_atom(mol, i)]
    if nonpolar:
        sub = mol.to_networkx().subgraph(nonpolar)
        comps = sorted((sorted(c) for c in nx.connected_components(sub)), key=lambda c: c[0])
        for comp in comps:
            feats.append(_feature(PharmKind.HYDROPHOBIC, mol, comp))
    for i in range(mol.n_atoms):
        if mol.elements[i] in HALOGENS and any(mol.elements[j] == "C" for j in mol.neighbors(i)):
            feats.append(_feature(PharmKind.HALOGEN, mol, [i]))
    for i in range(mol.n_atoms):
        if mol.charges[i] > 0:
            feats.append(_feature(PharmKind.POSITIVE, mol, [i]))
    for i in range(mol.n_atoms):
        if mol.charges[i] < 0:
            feats.append(_feature(PharmKind.NEGATIVE, mol, [i]))
    return feats


# ---------------------------------------------------------------------------
# proteins and systems

RESIDUE_NAMES = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL", "UNK",
)
ATOM_NAMES = (
    "N", "CA", "C", "O", "CB", "CG", "CG1", "CG2", "CD", "CD1", "CD2", "CE", "CE1", "CE2", "CE3",
    "CZ", "CZ2", "CZ3", "CH2", "ND1", "ND2", "NE", "NE1", "NE2", "NH1", "NH2", "NZ", "OD1", "OD2",
    "OE1", "OE2", "OG", "OG1", "OH", "SD", "SG", "OXT", "UNK",
)
PROTEIN_ELEMENTS = ("C", "N", "O", "S", "X")
NPNDE_ELEMENTS = ("C", "N", "O", "F", "P", "S", "Cl", "Br", "I", "B", "Mg", "Zn", "Ca", "Na", "Fe", "X")
NPNDE_CHARGES = (-2, -1, 0, 1, 2)

_AROMATIC_SIDECHAIN = {
    "PHE": {"CG", "CD1", "CD2", "CE1", "CE2", "CZ"},
    "TYR": {"CG", "CD1", "CD2", "CE1", "CE2", "CZ"},
    "TRP": {"CD2", "CE2", "CE3", "CZ2", "CZ3", "CH2"},
    "HIS": {"CG", "ND1", "CD2", "CE1", "NE2"},
}
_DONOR_NAMES = {"NE", "NH1", "NH2", "ND2", "NE2", "ND1", "NZ", "NE1", "OG", "OG1", "OH"}
_ACCEPTOR_NAMES = {"O", "OD1", "OD2", "OE1", "OE2", "ND1", "NE2", "OG", "OG1", "OH", "SD", "OXT"}
_POSITIVE = {("LYS", "NZ"), ("ARG", "NH1"), ("ARG", "NH2"), ("ARG", "NE")}
_NEGATIVE = {("ASP", "OD1"), ("ASP", "OD2"), ("GLU", "OE1"), ("GLU", "OE2")}
_HYDROPHOBIC_RES = {"ALA", "VAL", "LEU", "ILE", "MET", "PHE", "TRP", "PRO", "TYR"}


@dataclass
class ProteinAtoms:
    elements: list
    atom_names: list
    res_names: list
    res_index: np.ndarray
    coords: np.ndarray
    chains: list = None

    def __post_init__(self):
        n = len(self.elements)
        self.res_index = np.asarray(self.res_index, dtype=np.int64).reshape(n)
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(n, 3)
        if self.chains is None:
            self.chains = ["A"] * n
        for lst in (self.atom_names, self.res_names, self.chains):
            if len(lst) != n:
                raise ValueError("protein atom fields must have equal length")

    @property
    def n_atoms(self) -> int:
        return len(self.elements)

    def residue_keys(self) -> list[tuple]:
        return list(zip(self.chains, self.res_index.tolist()))

    def subset(self, idx) -> "ProteinAtoms":
        idx = list(idx)
        return ProteinAtoms(
            [self.elements[i] for i in idx], [self.atom_names[i] for i in idx],
            [self.res_names[i] for i in idx], self.res_index[idx], self.coords[idx],
            [self.chains[i] for i in idx],
        )

    def atom_classes(self, i: int) -> set[str]:
        """Interaction classes of protein atom ``i`` from residue/atom-name tables."""
        res, name, el = self.res_names[i], self.atom_names[i], self.elements[i]
        out = set()
        if el == "N" and (name == "N" and res != "PRO" or name in _DONOR_NAMES):
            out.add("donor")
        if el == "O" and name in _DONOR_NAMES:
            out.add("donor")
        if el in ("O", "N", "S") and name in _ACCEPTOR_NAMES:
            out.add("acceptor")
        if el == "C" and name not in ("C", "CA") and res in _HYDROPHOBIC_RES:
            out.add("hydrophobic")
        if res == "MET" and name == "SD":
            out.add("hydrophobic")
        if name in _AROMATIC_SIDECHAIN.get(res, ()):
            out.add("aromatic")
        if (res, name) in _POSITIVE:
            out.add("positive")
        if (res, name) in _NEGATIVE:
            out.add("negative")
        return out

    def to_dict(self) -> dict:
        return {
            "elements": self.elements, "atom_names": self.atom_names, "res_names": self.res_names,
            "res_index": self.res_index.tolist(), "coords": self.coords.tolist(), "chains": self.chains,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProteinAtoms":
        return cls(d["elements"], d["atom_names"], d["res_names"], d["res_index"], d["coords"], d.get("chains"))


def empty_protein() -> ProteinAtoms:
    return ProteinAtoms([], [], [], np.zeros(0), np.zeros((0, 3)))


@dataclass
class SmallMolecule:
    """A non-protein molecule in a system, with the flags used for NPNDE classification."""

    elements: list
    coords: np.ndarray
    bonds: np.ndarray
    charges: np.ndarray = None
    is_cofactor: bool = False
    is_ion: bool = False
    is_artifact: bool = False
    is_saccharide: bool = False
    unresolved: bool = False
    n_covalent_to_protein: int = 0

    def __post_init__(self):
        n = len(self.elements)
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(n, 3)
        self.bonds = np.asarray(self.bonds, dtype=np.int64).reshape(n, n)
        self.charges = np.zeros(n, np.int64) if self.charges is None else np.asarray(self.charges, np.int64)

    @property
    def n_heavy(self) -> int:
        return sum(1 for e in self.elements if e != "H")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "is_cofactor", "is_ion", "is_artifact", "is_saccharide", "unresolved", "n_covalent_to_protein")}
        i, j = np.nonzero(np.triu(self.bonds, 1))
        d.update(
            elements=list(self.elements), coords=self.coords.tolist(), charges=self.charges.tolist(),
            bonds=[[int(a), int(b), int(self.bonds[a, b])] for a, b in zip(i, j)],
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SmallMolecule":
        n = len(d["elements"])
        bonds = np.zeros((n, n), dtype=np.int64)
        for a, b, order in d.get("bonds", []):
            bonds[a, b] = bonds[b, a] = order
        flags = {k: d[k] for k in (
            "is_cofactor", "is_ion", "is_artifact", "is_saccharide", "unresolved", "n_covalent_to_protein") if k in d}
        return cls(d["elements"], d["coords"], bonds, d.get("charges"), **flags)


@dataclass
class QualityMetadata:
    resolution: Optional[float] = None
    r_work: Optional[float] = None
    r_free: Optional[float] = None
    volume_overlap: Optional[float] = None


@dataclass
class SystemRecord:
    ligand: ToyMolecule
    protein: ProteinAtoms = field(default_factory=empty_protein)
    npndes: list = field(default_factory=list)
    metadata: QualityMetadata = field(default_factory=QualityMetadata)

    def to_dict(self) -> dict:
        return {
            "ligand": self.ligand.to_dict(),
            "protein": self.protein.to_dict(),
            "npndes": [m.to_dict() for m in self.npndes],
            "metadata": vars(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemRecord":
        return cls(
            ToyMolecule.from_dict(d["ligand"]),
            ProteinAtoms.from_dict(d["protein"]) if d.get("protein") else empty_protein(),
            [SmallMolecule.from_dict(m) for m in d.get("npndes", [])],
            QualityMetadata(**d.get("metadata", {})),
        )


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), separators=(",", ":")) + "\n")


def read_jsonl(path, kind=None) -> Iterator:
    """Yield ToyMolecule or SystemRecord objects (detected per line unless ``kind`` given)."""
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            cls = kind or (SystemRecord if "ligand" in d else ToyMolecule)
            yield cls.from_dict(d)


# ---------------------------------------------------------------------------
# pocket handling

POCKET_CUTOFF = 8.0
CONTACT_CUTOFF = 4.0
PHARM_POCKET_CUTOFF = 4.0

_COMPATIBLE = {
    PharmKind.DONOR: {"acceptor"},
    PharmKind.ACCEPTOR: {"donor"},
    PharmKind.HYDROPHOBIC: {"hydrophobic"},
    PharmKind.AROMATIC: {"aromatic", "positive"},
    PharmKind.HALOGEN: {"acceptor"},
    PharmKind.POSITIVE: {"negative", "aromatic"},
    PharmKind.NEGATIVE: {"positive"},
}


def subsample_pharmacophores(
    features: list[PharmacophoreFeature],
    pocket: Optional[ProteinAtoms],
    rng: np.random.Generator,
    cutoff: float = PHARM_POCKET_CUTOFF,
    max_features: int = 8,
) -> list[PharmacophoreFeature]:
    """Keep a uniformly sized, uniformly chosen subset of 1..min(8, eligible) features."""
    eligible = list(features)
    if pocket is not None and pocket.n_atoms:
        classes = [pocket.atom_classes(i) for i in range(pocket.n_atoms)]
        keep = []
        for f in eligible:
            d = np.linalg.norm(pocket.coords - f.center, axis=1)
            if any(d[i] <= cutoff and classes[i] & _COMPATIBLE[f.kind] for i in range(pocket.n_atoms)):
                keep.append(f)
        eligible = keep
    if not eligible:
        raise NoEligibleFeatures("no pharmacophore features eligible for conditioning")
    k = int(rng.integers(1, min(max_features, len(eligible)) + 1))
    chosen = np.sort(rng.choice(len(eligible), size=k, replace=False))
    return [eligible[i] for i in chosen]


def crop_pocket(system: SystemRecord, cutoff: float = POCKET_CUTOFF) -> SystemRecord:
    """Keep whole residues having any atom within ``cutoff`` of a ligand atom.

    NPNDEs are kept when any of their atoms is within the same cutoff.
    """
    lig = system.ligand.coords
    prot = system.protein
    d = min_distances(prot.coords, lig) if prot.n_atoms else np.zeros(0)
    keys = prot.residue_keys()
    keep_res = {k for k, di in zip(keys, d) if di <= cutoff}
    idx = [i for i, k in enumerate(keys) if k in keep_res]
    npndes = [m for m in system.npndes if len(m.elements) and min_distances(m.coords, lig).min() <= cutoff]
    return replace(system, protein=prot.subset(idx), npndes=npndes)


def residue_positional_encoding(residue_index, dim: int) -> np.ndarray:
    """Sinusoidal encoding; accepts a scalar index or an array (one row per index)."""
    if dim % 2 or dim <= 0:
        raise BadDimension(f"positional encoding dimension must be even and positive, got {dim}")
    idx = np.asarray(residue_index, dtype=np.float64)
    freq = 1.0 / (10000.0 ** (np.arange(0, dim, 2) / dim))
    ang = idx[..., None] * freq
    out = np.empty(idx.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def contact_residues(mol_coords: np.ndarray, protein: ProteinAtoms, cutoff: float = CONTACT_CUTOFF) -> set:
    if protein.n_atoms == 0 or len(mol_coords) == 0:
        return set()
    d = min_distances(protein.coords, mol_coords)
    return {k for k, di in zip(protein.residue_keys(), d) if di <= cutoff}


class MolClass(enum.Enum):
    LIGAND = "ligand"
    NPNDE = "npnde"
    DISCARD = "discard"


NPNDE_MAX_HEAVY = 120


def classify_npnde(candidate: SmallMolecule, protein: ProteinAtoms) -> MolClass:
    """Decide whether a small molecule is a designable ligand or context-only NPNDE."""
    if candidate.n_heavy == 0:
        return MolClass.DISCARD
    if candidate.is_cofactor or candidate.is_ion or candidate.is_artifact:
        return MolClass.NPNDE
    if candidate.is_saccharide and candidate.n_covalent_to_protein >= 1:
        return MolClass.NPNDE
    if candidate.n_heavy > NPNDE_MAX_HEAVY or candidate.unresolved:
        return MolClass.NPNDE
    if candidate.n_covalent_to_protein > 1:
        return MolClass.NPNDE
    if len(contact_residues(candidate.coords, protein)) < 1:
        return MolClass.NPNDE
    return MolClass.LIGAND


@dataclass
class FilterDecision:
    keep: bool
    reason: Optional[str] = None


# threshold comparisons are strict; EPS absorbs float error in |R - Rfree|
_EPS = 1e-12


def ligand_contact_fraction(system: SystemRecord, cutoff: float = CONTACT_CUTOFF) -> float:
    if system.ligand.n_atoms == 0:
        return 0.0
    d = min_distances(system.ligand.coords, system.protein.coords)
    return float(np.mean(d <= cutoff))


def filter_system(system: SystemRecord) -> FilterDecision:
    m = system.metadata
    for name in ("resolution", "r_work", "r_free", "volume_overlap"):
        v = getattr(m, name)
        if v is None or not np.isfinite(v):
            raise MissingMetadata(f"system lacks {name}")
    if m.resolution > 3.5 + _EPS:
        return FilterDecision(False, "resolution")
    if m.r_work > 0.40 + _EPS:
        return FilterDecision(False, "r_work")
    if m.r_free > 0.45 + _EPS:
        return FilterDecision(False, "r_free")
    if abs(m.r_work - m.r_free) > 0.075 + _EPS:
        return FilterDecision(False, "r_gap")
    if m.volume_overlap > 0.075 + _EPS:
        return FilterDecision(False, "volume_overlap")
    if ligand_contact_fraction(system) < 0.35 - _EPS:
        return FilterDecision(False, "contact_fraction")
    return FilterDecision(True)
