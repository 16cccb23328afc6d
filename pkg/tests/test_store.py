import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmflow.chem import ToyMolecule
from mmflow.errors import ElementFilter
from mmflow.store import Store, decode_record, encode_record, filter_ingest, ingest, read, verify_manifest
from mmflow.toydata import random_corpus, random_molecule


def same_record(a: ToyMolecule, b: ToyMolecule) -> bool:
    return (
        a.elements == b.elements
        and np.array_equal(a.bonds, b.bonds)
        and a.atom_tuples() == b.atom_tuples()
        and np.array_equal(a.conjugated, b.conjugated)
        and np.array_equal(b.coords, a.coords.astype(np.float32).astype(np.float64))
    )


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_record_round_trip(seed):
    mol = random_molecule(np.random.default_rng(seed))
    raw = encode_record(mol)
    back, end = decode_record(raw)
    assert end == len(raw)
    assert same_record(mol, back)


def test_unsupported_element_rejected():
    mol = ToyMolecule(["C", "Xe"], np.zeros((2, 3)) + [[0, 0, 0], [2, 0, 0]], np.zeros((2, 2)))
    with pytest.raises(ElementFilter):
        encode_record(mol)


def test_ingest_read_and_manifest(tmp_path):
    mols = random_corpus(np.random.default_rng(0), 23)
    man = ingest(mols, 5, tmp_path / "s")
    assert man.count == 23 and [c["n_records"] for c in man.chunks] == [5, 5, 5, 5, 3]
    assert verify_manifest(tmp_path / "s")
    store = Store(tmp_path / "s")
    assert len(store) == 23
    for i in (0, 4, 5, 22):
        assert same_record(mols[i], store.read(i))
    assert all(same_record(a, b) for a, b in zip(mols, store))
    assert same_record(mols[7], read(tmp_path / "s", 7))
    with pytest.raises(IndexError):
        store.read(23)


def test_manifest_tampering_detected(tmp_path):
    ingest(random_corpus(np.random.default_rng(1), 6), 4, tmp_path / "s")
    p = tmp_path / "s" / "manifest.json"
    d = json.loads(p.read_text())
    d["chunks"][1]["record_offset"] = 3
    p.write_text(json.dumps(d))
    assert not verify_manifest(tmp_path / "s")


def test_ingest_byte_deterministic(tmp_path):
    mols = random_corpus(np.random.default_rng(2), 12)
    ingest(mols, 5, tmp_path / "a")
    ingest(mols, 5, tmp_path / "b")
    for name in ["manifest.json"] + [f"chunk-{k:06d}.bin" for k in range(3)]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_filter_ingest_counts(tmp_path):
    mols = random_corpus(np.random.default_rng(3), 5)
    dup = mols[0]
    bad_valence = random_molecule(np.random.default_rng(9))
    bad_valence.n_h[:] = 5
    bad_el = ToyMolecule(["C", "Xe"], [[0, 0, 0], [2, 0, 0]], np.zeros((2, 2)))
    counts = {}
    kept = list(filter_ingest(mols + [dup, bad_valence, bad_el], counts))
    assert len(kept) == 5
    assert counts == {"element": 1, "valence": 1, "duplicate": 1}
    man_skipped = ingest(kept, 10, tmp_path / "s", skipped=counts).skipped
    assert man_skipped["duplicate"] == 1


def test_ingest_rejects_bad_chunk_size(tmp_path):
    with pytest.raises(ValueError):
        ingest([], 0, tmp_path / "s")
