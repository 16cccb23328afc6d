"""Synthetic corpora: small valence-consistent molecules with 3D coordinates and toy pockets."""
from __future__ import annotations

import numpy as np
from networkx.algorithms.isomorphism import GraphMatcher
from scipy.optimize import minimize

from .chem import (
    Chirality,
    Hybridization,
    ProteinAtoms,
    QualityMetadata,
    SmallMolecule,
    SystemRecord,
    ToyMolecule,
    max_valence,
    rings,
)

_ELEMENT_WEIGHTS = {"C": 0.58, "N": 0.15, "O": 0.15, "F": 0.05, "S": 0.03, "Cl": 0.04}
_H_FILL = {"C": 4, "N": 3, "O": 2, "S": 2, "P": 3, "B": 3}
BOND_LENGTH = {1: 1.50, 2: 1.33, 3: 1.20}
AROMATIC_BOND = 1.40


def _free_valence(elements, bonds, i):
    return max_valence(elements[i], 0) - bonds[i].sum() if elements[i] != "S" else 2 - bonds[i].sum()


def random_topology(rng: np.random.Generator, n_atoms: int, ring_prob: float = 0.4):
    """Random heavy-atom graph: an optional kekulized benzene ring grown into a tree."""
    elements, aromatic = [], []
    bonds = np.zeros((n_atoms, n_atoms), dtype=np.int64)
    start = 0
    if n_atoms >= 7 and rng.random() < ring_prob:
        for k in range(6):
            elements.append("C")
            aromatic.append(True)
        for k in range(6):
            bonds[k, (k + 1) % 6] = bonds[(k + 1) % 6, k] = 2 if k % 2 == 0 else 1
        start = 6
        if rng.random() < 0.3:
            elements[0] = "N"  # pyridine-like
    else:
        elements.append(str(rng.choice(["C", "C", "N", "O"])))
        aromatic.append(False)
        start = 1
    names = list(_ELEMENT_WEIGHTS)
    probs = np.array(list(_ELEMENT_WEIGHTS.values()))
    probs /= probs.sum()
    for new in range(start, n_atoms):
        for _ in range(50):
            el = str(rng.choice(names, p=probs))
            free = [i for i in range(new) if _free_valence(elements, bonds, i) >= 1 and elements[i] not in ("F", "Cl")]
            if not free:
                el = "C"
                free = list(range(new))
            host = int(rng.choice(free))
            order = 1
            host_free = _free_valence(elements, bonds, host)
            if (not aromatic[host] and el in ("C", "N", "O") and elements[host] in ("C", "N")
                    and host_free >= 2 and rng.random() < 0.25):
                order = 2
            if host_free >= order:
                break
        elements.append(el)
        aromatic.append(False)
        bonds[host, new] = bonds[new, host] = order
    return elements, np.array(aromatic), bonds


def _embed(elements, aromatic, bonds, rng, n_restarts=4):
    """Place atoms by minimizing a bond/angle/repulsion energy."""
    n = len(elements)
    if n == 1:
        return np.zeros((1, 3))
    dist_graph = np.full((n, n), np.inf)
    np.fill_diagonal(dist_graph, 0)
    dist_graph[bonds > 0] = 1
    for k in range(n):
        dist_graph = np.minimum(dist_graph, dist_graph[:, [k]] + dist_graph[[k], :])
    target = np.zeros((n, n))
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if bonds[i, j]:
                target[i, j] = AROMATIC_BOND if aromatic[i] and aromatic[j] else BOND_LENGTH[int(bonds[i, j])]
                w[i, j] = 10.0
            elif dist_graph[i, j] == 2:
                target[i, j] = 2.45 if not (aromatic[i] and aromatic[j]) else 2.42
                w[i, j] = 3.0
            elif aromatic[i] and aromatic[j]:
                target[i, j] = 2.80 if dist_graph[i, j] == 3 else 2.42
                w[i, j] = 3.0

    def energy(flat):
        x = flat.reshape(n, 3)
        diff = x[:, None] - x[None]
        d = np.sqrt((diff ** 2).sum(-1) + 1e-12)
        e_fix = w * (d - target) ** 2
        rep = np.where((w == 0) & (d < 3.2), (3.2 - d) ** 2, 0.0)
        np.fill_diagonal(rep, 0)
        e = e_fix.sum() / 2 + rep.sum() / 2
        g_d = 2 * w * (d - target) - 2 * np.where((w == 0) & (d < 3.2), 3.2 - d, 0.0)
        np.fill_diagonal(g_d, 0)
        grad = ((g_d / d)[:, :, None] * diff).sum(1)
        return e, grad.ravel()

    best, best_e = None, np.inf
    for _ in range(n_restarts):
        x0 = rng.normal(scale=1.5, size=(n, 3))
        res = minimize(energy, x0.ravel(), jac=True, method="L-BFGS-B", options={"maxiter": 2000})
        if res.fun < best_e:
            best, best_e = res.x.reshape(n, 3), res.fun
    return best


def annotate(elements, aromatic, bonds, coords, charges=None) -> ToyMolecule:
    """Derive H counts, hybridization, ring, chirality and conjugation flags from a topology."""
    n = len(elements)
    charges = np.zeros(n, np.int64) if charges is None else np.asarray(charges, np.int64)
    n_h = np.zeros(n, np.int64)
    for i, el in enumerate(elements):
        if el in _H_FILL:
            cap = _H_FILL[el] + (max(int(charges[i]), 0) if el in ("N", "O") else 0)
            n_h[i] = max(0, cap - bonds[i].sum() - abs(min(int(charges[i]), 0)))
    hyb = np.full(n, int(Hybridization.SP3))
    for i in range(n):
        if aromatic[i] or (bonds[i] == 2).any():
            hyb[i] = int(Hybridization.SP2)
        if (bonds[i] == 3).any() or (bonds[i] == 2).sum() >= 2:
            hyb[i] = int(Hybridization.SP)
        if elements[i] in ("F", "Cl", "Br", "I"):
            hyb[i] = int(Hybridization.OTHER)
    mol = ToyMolecule(elements, coords, bonds, charges, n_h, aromatic, hyb)
    in_ring = np.zeros(n, bool)
    for r in rings(mol):
        in_ring[r] = True
    mol.in_ring = in_ring
    conj = np.zeros(n, bool)
    for i, el in enumerate(elements):
        if el not in ("N", "O"):
            continue
        nb = mol.neighbors(i)
        all_single = all(bonds[i, j] == 1 for j in nb)
        if aromatic[i] and n_h[i] >= 1:
            conj[i] = True
        elif not aromatic[i] and all_single and any(hyb[j] == Hybridization.SP2 for j in nb):
            conj[i] = True
    mol.conjugated = conj
    mol.chirality = assign_chirality(mol)
    return mol


def _neighbor_ranks(mol: ToyMolecule) -> np.ndarray:
    """Refined integer atom ranks (Morgan-style) used to order stereocenter neighbors."""
    labels = [(e, int(c), int(h)) for e, c, h in zip(mol.elements, mol.charges, mol.n_h)]
    for _ in range(4):
        keys = [(labels[i], tuple(sorted((labels[j], int(mol.bonds[i, j])) for j in mol.neighbors(i))))
                for i in range(mol.n_atoms)]
        order = {k: r for r, k in enumerate(sorted(set(keys)))}
        labels = [order[k] for k in keys]
    return np.array(labels, dtype=np.int64)


def stereocenters(mol: ToyMolecule) -> list[tuple[int, list[int]]]:
    """SP3 carbons whose heavy neighbors (3 or 4) have pairwise distinct refined labels,
    with neighbors in canonical order."""
    labels = _neighbor_ranks(mol)
    out = []
    for i in range(mol.n_atoms):
        nb = list(mol.neighbors(i))
        if mol.elements[i] != "C" or mol.hybridization[i] != Hybridization.SP3:
            continue
        if not (len(nb) == 4 or (len(nb) == 3 and mol.n_h[i] == 1)):
            continue
        if len({labels[j] for j in nb}) != len(nb):
            continue
        out.append((i, sorted(nb, key=lambda j: (labels[j], j))))
    return out


def signed_volume(coords: np.ndarray, center: int, nbrs: list[int]) -> float:
    a, b, c = (coords[j] - coords[center] for j in nbrs[:3])
    return float(np.dot(a, np.cross(b, c)))


def assign_chirality(mol: ToyMolecule) -> np.ndarray:
    chi = np.zeros(mol.n_atoms, np.int64)
    for i, nbrs in stereocenters(mol):
        chi[i] = int(Chirality.CW) if signed_volume(mol.coords, i, nbrs) > 0 else int(Chirality.CCW)
    return chi


def random_molecule(rng: np.random.Generator, n_atoms: int | None = None, charged_prob: float = 0.15,
                    min_atoms: int = 4, max_atoms: int = 12) -> ToyMolecule:
    n = int(rng.integers(min_atoms, max_atoms + 1)) if n_atoms is None else int(n_atoms)
    elements, aromatic, bonds = random_topology(rng, n)
    charges = np.zeros(n, np.int64)
    if rng.random() < charged_prob:
        amines = [i for i, e in enumerate(elements) if e == "N" and not aromatic[i] and (bonds[i] <= 1).all()
                  and bonds[i].sum() <= 3]
        hydroxyl = [i for i, e in enumerate(elements) if e == "O" and bonds[i].sum() == 1]
        if amines and rng.random() < 0.5:
            charges[int(rng.choice(amines))] = 1
        elif hydroxyl:
            charges[int(rng.choice(hydroxyl))] = -1
    coords = _embed(elements, aromatic, bonds, rng)
    coords -= coords.mean(axis=0)
    return annotate(elements, aromatic, bonds, coords, charges)


def random_corpus(rng: np.random.Generator, n: int, **kw) -> list[ToyMolecule]:
    return [random_molecule(rng, **kw) for _ in range(n)]


def has_trivial_automorphisms(mol: ToyMolecule) -> bool:
    """True when no nontrivial relabeling maps the (element, charge, order) graph onto itself."""

    g = mol.to_networkx()
    gm = GraphMatcher(
        g, g,
        node_match=lambda x, y: x["element"] == y["element"] and x["charge"] == y["charge"],
        edge_match=lambda x, y: x["order"] == y["order"],
    )
    count = 0
    for _ in gm.isomorphisms_iter():
        count += 1
        if count > 1:
            return False
    return True


# ---------------------------------------------------------------------------
# pockets

# residue templates: (atom name, element) from backbone outward
_RESIDUES = {
    "GLY": [("N", "N"), ("CA", "C"), ("C", "C"), ("O", "O")],
    "ALA": [("N", "N"), ("CA", "C"), ("C", "C"), ("O", "O"), ("CB", "C")],
    "SER": [("N", "N"), ("CA", "C"), ("C", "C"), ("O", "O"), ("CB", "C"), ("OG", "O")],
    "THR": [("N", "N"), ("CA", "C"), ("C", "C"), ("O", "O"), ("CB", "C"), ("OG1", "O")],
    "VAL": [("N", "N"), ("CA", "C"), ("C", "C"), ("O", "O"), ("CB", "C"), ("CG1", "C")],
    "LEU": [("N", "N"), ("CA", "C"), ("C", "C"), ("O", "O"), ("CB", "C"), ("CG", "C"), ("CD1", "C")],
    "ASP": [("N", "N"), ("CA", "C"), ("C", "C"), ("O", "O"), ("CB", "C"), ("CG", "C"), ("OD1", "O")],
    "ASN": [("N", "N"), ("CA", "C"), ("C", "C"), ("O", "O"), ("CB", "C"), ("CG", "C"), ("ND2", "N")],
    "LYS": [("N", "N"), ("CA", "C"), ("C", "C"), ("O", "O"), ("CB", "C"), ("CG", "C"), ("NZ", "N")],
}


def _residue_coords(n_atoms, anchor, toward, rng):
    """Zig-zag chain of atoms starting at ``anchor`` heading along ``toward``."""
    toward = toward / np.linalg.norm(toward)
    perp = np.cross(toward, rng.normal(size=3))
    perp /= np.linalg.norm(perp)
    pts = [anchor]
    for k in range(1, n_atoms):
        step = 1.25 * toward + (0.75 if k % 2 else -0.75) * perp
        pts.append(pts[-1] + step)
    return np.array(pts)


def random_pocket(ligand: ToyMolecule, rng: np.random.Generator, n_residues: int = 8,
                  min_contact: float = 3.2, max_contact: float = 4.5, max_tries: int = 400) -> ProteinAtoms:
    """Residues whose side chains point at the ligand, closest atom 3.2-4.5 A away."""
    names = list(_RESIDUES)
    elements, atom_names, res_names, res_index, coords = [], [], [], [], []
    com = ligand.coords.mean(axis=0)
    placed = np.zeros((0, 3))
    r = 0
    for _ in range(max_tries):
        if r >= n_residues:
            break
        res = names[int(rng.integers(len(names)))]
        tmpl = _RESIDUES[res]
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        radius = np.linalg.norm(ligand.coords - com, axis=1).max() + 9.0
        anchor = com + radius * direction
        pts = _residue_coords(len(tmpl), anchor, com - anchor, rng)
        # slide the residue toward the ligand until the closest contact is in range
        for _slide in range(60):
            d = np.linalg.norm(pts[:, None] - ligand.coords[None], axis=-1).min()
            if d <= max_contact:
                break
            pts = pts + 0.25 * (com - anchor) / np.linalg.norm(com - anchor)
        d = np.linalg.norm(pts[:, None] - ligand.coords[None], axis=-1).min()
        if not (min_contact <= d <= max_contact):
            continue
        if len(placed) and np.linalg.norm(pts[:, None] - placed[None], axis=-1).min() < 2.8:
            continue
        placed = np.vstack([placed, pts])
        for (an, el), x in zip(tmpl, pts):
            elements.append(el)
            atom_names.append(an)
            res_names.append(res)
            res_index.append(r + 1)
            coords.append(x)
        r += 1
    return ProteinAtoms(elements, atom_names, res_names, np.array(res_index), np.array(coords).reshape(-1, 3))


def random_system(rng: np.random.Generator, ligand: ToyMolecule | None = None, n_residues: int = 8,
                  with_npnde: bool = False) -> SystemRecord:
    lig = ligand if ligand is not None else random_molecule(rng, min_atoms=5, max_atoms=10)
    prot = random_pocket(lig, rng, n_residues=n_residues)
    npndes = []
    if with_npnde:
        far = lig.coords.mean(0) + 6.5 * _unit(rng.normal(size=3))
        npndes.append(SmallMolecule(["Mg"], far[None], np.zeros((1, 1)), [2], is_ion=True))
    meta = QualityMetadata(
        resolution=float(rng.uniform(1.2, 3.0)), r_work=float(rng.uniform(0.15, 0.25)),
        r_free=0.0, volume_overlap=float(rng.uniform(0.0, 0.05)),
    )
    meta.r_free = meta.r_work + float(rng.uniform(0.0, 0.05))
    return SystemRecord(lig, prot, npndes, meta)


def _unit(v):
    return v / np.linalg.norm(v)
