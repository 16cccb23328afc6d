"""Sample metrics: validity subset, RMSD, chirality, pharmacophore matching, interactions, ranking."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable

import networkx as nx
import numpy as np

from .chem import (
    PharmacophoreFeature,
    ProteinAtoms,
    ToyMolecule,
    extract_pharmacophores,
    is_acceptor_atom,
    is_donor_atom,
    is_nonpolar_atom,
    toy_valence_check,
)
from .errors import InvalidInput, SizeMismatch
from .toydata import signed_volume, stereocenters

BOND_WINDOW = (0.7, 2.0)
CLASH_CUTOFF = 1.7
HBOND_CUTOFF = 3.5
HYDROPHOBIC_CUTOFF = 4.0
PHARM_MATCH_TOL = 1.0
DEFAULT_PENALTY = 100.0
INTERACTION_TYPES = ("hbond_donor", "hbond_acceptor", "hydrophobic")


@dataclass(frozen=True)
class ValidityReport:
    sanitizable: bool
    connected: bool
    bond_lengths_ok: bool
    clash_free: bool

    @property
    def pb_valid(self) -> bool:
        return self.sanitizable and self.connected and self.bond_lengths_ok and self.clash_free

    def to_dict(self) -> dict:
        return {**asdict(self), "pb_valid_subset": self.pb_valid}


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def check_validity(mol: ToyMolecule, pocket: ProteinAtoms | None = None, bond_window=BOND_WINDOW,
                   clash_cutoff: float = CLASH_CUTOFF) -> ValidityReport:
    """Valence, single connected component, bonded distances in window, no close nonbonded contacts."""
    n = mol.n_atoms
    sanitizable = n > 0 and not toy_valence_check(mol)
    connected = n > 0 and nx.is_connected(mol.to_networkx())
    d = _pairwise(mol.coords, mol.coords)
    bonded = mol.bonds > 0
    lo, hi = bond_window
    bond_ok = bool(np.all((d[bonded] >= lo) & (d[bonded] <= hi)))
    iu = np.triu_indices(n, 1)
    nonbonded = ~bonded[iu]
    clash_free = not np.any(d[iu][nonbonded] < clash_cutoff)
    if pocket is not None and pocket.n_atoms and n:
        clash_free = clash_free and not np.any(_pairwise(mol.coords, pocket.coords) < clash_cutoff)
    return ValidityReport(bool(sanitizable), bool(connected), bond_ok, bool(clash_free))


def rmsd(generated, reference) -> float:
    """Root-mean-square deviation in a shared frame (no alignment, no symmetry correction)."""
    if isinstance(generated, ToyMolecule) and isinstance(reference, ToyMolecule):
        if Counter(generated.elements) != Counter(reference.elements):
            raise SizeMismatch("element multisets differ")
        generated, reference = generated.coords, reference.coords
    a, b = np.asarray(generated, float), np.asarray(reference, float)
    if a.shape != b.shape:
        raise SizeMismatch(f"{a.shape} vs {b.shape}")
    if len(a) == 0:
        return 0.0
    return float(np.sqrt(((a - b) ** 2).sum(axis=1).mean()))


def chirality_preserved(generated: ToyMolecule, reference: ToyMolecule) -> list[bool]:
    """For each reference stereocenter, whether the neighbor tetrahedron keeps its handedness."""
    if generated.n_atoms != reference.n_atoms:
        raise SizeMismatch("atom counts differ")
    out = []
    for center, nbrs in stereocenters(reference):
        ref = signed_volume(reference.coords, center, nbrs)
        gen = signed_volume(generated.coords, center, nbrs)
        out.append(bool(np.sign(ref) == np.sign(gen) and gen != 0))
    return out


def chirality_violations(generated: ToyMolecule, reference: ToyMolecule) -> int:
    return sum(not ok for ok in chirality_preserved(generated, reference))


def pharm_match_rate(features: list[PharmacophoreFeature], mol: ToyMolecule, tol: float = PHARM_MATCH_TOL) -> float:
    """Fraction of ``features`` having a same-kind feature of ``mol`` within ``tol`` angstrom."""
    if not features:
        raise InvalidInput("no conditioning features")
    mine = extract_pharmacophores(mol)
    hits = 0
    for f in features:
        cands = [g.center for g in mine if g.kind == f.kind]
        if cands and np.min(np.linalg.norm(np.asarray(cands) - f.center, axis=1)) <= tol:
            hits += 1
    return hits / len(features)


# ---------------------------------------------------------------------------
# interactions


def interactions(mol: ToyMolecule, pocket: ProteinAtoms, hbond_cutoff: float = HBOND_CUTOFF,
                 hydrophobic_cutoff: float = HYDROPHOBIC_CUTOFF) -> list[tuple]:
    """Geometric contacts as ``(type, residue_key, ligand_atom, protein_atom)``.

    ``hbond_donor``: ligand donor to protein acceptor; ``hbond_acceptor``: ligand
    acceptor to protein donor; ``hydrophobic``: nonpolar ligand carbon to a
    hydrophobic protein carbon.
    """
    if pocket.n_atoms == 0 or mol.n_atoms == 0:
        return []
    d = _pairwise(mol.coords, pocket.coords)
    keys = pocket.residue_keys()
    classes = [pocket.atom_classes(j) for j in range(pocket.n_atoms)]
    out = []
    for i in range(mol.n_atoms):
        donor, acceptor = is_donor_atom(mol, i), is_acceptor_atom(mol, i)
        nonpolar_c = mol.elements[i] == "C" and is_nonpolar_atom(mol, i)
        for j in np.nonzero(d[i] <= max(hbond_cutoff, hydrophobic_cutoff))[0]:
            if d[i, j] <= hbond_cutoff:
                if donor and "acceptor" in classes[j]:
                    out.append(("hbond_donor", keys[j], i, int(j)))
                if acceptor and "donor" in classes[j]:
                    out.append(("hbond_acceptor", keys[j], i, int(j)))
            if d[i, j] <= hydrophobic_cutoff and nonpolar_c and pocket.elements[j] == "C" and "hydrophobic" in classes[j]:
                out.append(("hydrophobic", keys[j], i, int(j)))
    return out


def interaction_profile(mol: ToyMolecule, pocket: ProteinAtoms, detector: Callable | None = None) -> dict:
    """Interaction counts per type divided by the number of ligand atoms."""
    found = (detector or interactions)(mol, pocket)
    counts = Counter(x[0] for x in found)
    n = max(mol.n_atoms, 1)
    return {k: counts.get(k, 0) / n for k in INTERACTION_TYPES}


def interaction_parity(gen_profile: dict, ref_profile: dict) -> bool:
    if set(gen_profile) != set(ref_profile):
        raise InvalidInput("profiles cover different interaction types")
    return all(gen_profile[k] >= ref_profile[k] for k in ref_profile)


def interaction_keys(found: list[tuple]) -> set:
    return {(x[0], x[1]) for x in found}


def interaction_recovery(gen: set, ref: set) -> float:
    """``|gen & ref| / |ref|`` over (type, residue) keys; 1.0 when ``ref`` is empty."""
    gen, ref = set(gen), set(ref)
    if not ref:
        return 1.0
    return len(gen & ref) / len(ref)


# ---------------------------------------------------------------------------
# scoring and ranking


def builtin_score(mol: ToyMolecule, pocket: ProteinAtoms, clash_cutoff: float = CLASH_CUTOFF) -> float:
    """Lower is better: ``-hbonds - 0.5 * hydrophobic + 10 * clashes``."""
    found = interactions(mol, pocket)
    hb = sum(1 for x in found if x[0] != "hydrophobic")
    hp = sum(1 for x in found if x[0] == "hydrophobic")
    clashes = int(np.sum(_pairwise(mol.coords, pocket.coords) < clash_cutoff)) if pocket.n_atoms else 0
    return -hb - 0.5 * hp + 10.0 * clashes


@dataclass(frozen=True)
class RankingEntry:
    pose_id: int
    score: float
    chirality_violations: int
    penalized_score: float


def make_entries(poses: list, scorer: Callable, penalty_weight: float = DEFAULT_PENALTY) -> list[RankingEntry]:
    """``poses`` are objects or dicts with ``pose_id`` and ``chirality_violations``; ``scorer(pose)`` gives the score."""
    out = []
    for p in poses:
        get = p.get if isinstance(p, dict) else lambda k, p=p: getattr(p, k)
        s = float(scorer(p))
        v = int(get("chirality_violations"))
        out.append(RankingEntry(get("pose_id"), s, v, s + penalty_weight * v))
    return out


def rank_poses(entries: list, scorer: Callable | None = None, penalty_weight: float = DEFAULT_PENALTY,
               n: int = 1) -> list:
    """Top-``n`` pose ids by penalized score (ascending), ties broken by pose id."""
    if scorer is not None:
        entries = make_entries(entries, scorer, penalty_weight)
    else:
        entries = [RankingEntry(e.pose_id, e.score, e.chirality_violations,
                                e.score + penalty_weight * e.chirality_violations) for e in entries]
    ranked = sorted(entries, key=lambda e: (e.penalized_score, e.pose_id))
    return [e.pose_id for e in ranked[:n]]


def top_n_success(top_ids: list, rmsd_by_id: dict, valid_by_id: dict | None = None,
                  threshold: float = 2.0) -> tuple[bool, bool]:
    """(any top pose under ``threshold``, any top pose under threshold and valid)."""
    hit = any(rmsd_by_id[i] < threshold for i in top_ids)
    valid_by_id = valid_by_id or {}
    hit_valid = any(rmsd_by_id[i] < threshold and valid_by_id.get(i, False) for i in top_ids)
    return hit, hit_valid


# ---------------------------------------------------------------------------
# reports


def write_rows(rows: list[dict], path) -> None:
    cols = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def summarize(rows: list[dict]) -> dict:
    """Headline fractions over boolean columns and means over numeric ones."""
    out = {"n_samples": len(rows)}
    for k in dict.fromkeys(k for r in rows for k in r):
        vals = [r[k] for r in rows if k in r and r[k] is not None and r[k] != ""]
        if vals and all(isinstance(v, (bool, np.bool_)) for v in vals):
            out[f"frac_{k}"] = float(np.mean(vals))
        elif vals and all(isinstance(v, (int, float, np.floating, np.integer)) for v in vals) and k != "index":
            out[f"mean_{k}"] = float(np.mean(vals))
    return out


def write_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
