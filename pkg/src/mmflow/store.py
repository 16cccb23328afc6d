"""Chunked binary conformer store: a directory of fixed-size record chunks plus a JSON manifest.

Chunk file ``chunk-%06d.bin``::

    magic  b"MMCK"            4 bytes
    version  u32              4
    n_records  u32            4
    records...

Record (all little-endian)::

    n_atoms u16, n_bonds u16
    per atom: element u8, charge i8, n_h u8, flags u8, hybridization u8, chirality u8
    per bond: i u16, j u16, order u8
    coords: n_atoms * 3 float32

``flags`` bit 0 aromatic, bit 1 in ring, bit 2 conjugated. Element ids index
``SUPPORTED_ELEMENTS``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .chem import SUPPORTED_ELEMENTS, ToyMolecule, topology_hash, toy_valence_check
from .errors import ElementFilter

SCHEMA_VERSION = 1
CHUNK_MAGIC = b"MMCK"
_CHUNK_HEADER = struct.Struct("<4sII")
_REC_HEADER = struct.Struct("<HH")
_ATOM = np.dtype([("el", "u1"), ("q", "i1"), ("h", "u1"), ("flags", "u1"), ("hyb", "u1"), ("chi", "u1")])
_BOND = np.dtype([("i", "<u2"), ("j", "<u2"), ("order", "u1")])
_ELEMENT_ID = {e: i for i, e in enumerate(SUPPORTED_ELEMENTS)}


@dataclass
class StoreManifest:
    count: int
    chunk_size: int
    chunks: list = field(default_factory=list)  # {"file", "n_records", "record_offset", "byte_offset", "n_bytes"}
    schema_version: int = SCHEMA_VERSION
    vocab_hash: str = ""
    skipped: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StoreManifest":
        return cls(**json.loads(text))


# ---------------------------------------------------------------------------
# records


def encode_record(mol: ToyMolecule) -> bytes:
    bad = [e for e in mol.elements if e not in _ELEMENT_ID]
    if bad:
        raise ElementFilter(f"unsupported elements {sorted(set(bad))}")
    n = mol.n_atoms
    atoms = np.zeros(n, dtype=_ATOM)
    atoms["el"] = [_ELEMENT_ID[e] for e in mol.elements]
    atoms["q"] = mol.charges
    atoms["h"] = mol.n_h
    atoms["flags"] = mol.aromatic.astype(np.uint8) | (mol.in_ring.astype(np.uint8) << 1) | (
        mol.conjugated.astype(np.uint8) << 2)
    atoms["hyb"] = mol.hybridization
    atoms["chi"] = mol.chirality
    bl = mol.bond_list()
    bonds = np.zeros(len(bl), dtype=_BOND)
    if bl:
        arr = np.array(bl)
        bonds["i"], bonds["j"], bonds["order"] = arr[:, 0], arr[:, 1], arr[:, 2]
    coords = mol.coords.astype("<f4")
    return _REC_HEADER.pack(n, len(bl)) + atoms.tobytes() + bonds.tobytes() + coords.tobytes()


def decode_record(buf, offset: int = 0) -> tuple[ToyMolecule, int]:
    """Decode one record at ``offset``; returns the molecule and the next offset."""
    n, nb = _REC_HEADER.unpack_from(buf, offset)
    p = offset + _REC_HEADER.size
    atoms = np.frombuffer(buf, dtype=_ATOM, count=n, offset=p)
    p += n * _ATOM.itemsize
    bonds = np.frombuffer(buf, dtype=_BOND, count=nb, offset=p)
    p += nb * _BOND.itemsize
    coords = np.frombuffer(buf, dtype="<f4", count=3 * n, offset=p).reshape(n, 3)
    p += 12 * n
    mat = np.zeros((n, n), np.int64)
    mat[bonds["i"], bonds["j"]] = bonds["order"]
    mat[bonds["j"], bonds["i"]] = bonds["order"]
    flags = atoms["flags"]
    mol = ToyMolecule(
        [SUPPORTED_ELEMENTS[i] for i in atoms["el"]], coords.astype(np.float64), mat,
        charges=atoms["q"].astype(np.int64), n_h=atoms["h"].astype(np.int64),
        aromatic=(flags & 1).astype(bool), hybridization=atoms["hyb"].astype(np.int64),
        in_ring=((flags >> 1) & 1).astype(bool), chirality=atoms["chi"].astype(np.int64),
        conjugated=((flags >> 2) & 1).astype(bool),
    )
    return mol, p


# ---------------------------------------------------------------------------
# filtering and ingest


def filter_ingest(stream: Iterable[ToyMolecule], counts: dict | None = None) -> Iterator[ToyMolecule]:
    """Drop unsupported elements and valence violations; keep the first conformer per topology."""
    counts = counts if counts is not None else {}
    for k in ("element", "valence", "duplicate"):
        counts.setdefault(k, 0)
    seen = set()
    for mol in stream:
        if any(e not in _ELEMENT_ID for e in mol.elements):
            counts["element"] += 1
            continue
        if toy_valence_check(mol):
            counts["valence"] += 1
            continue
        h = topology_hash(mol)
        if h in seen:
            counts["duplicate"] += 1
            continue
        seen.add(h)
        yield mol


def ingest(stream: Iterable[ToyMolecule], chunk_size: int, path, vocab_hash: str = "",
           skipped: dict | None = None) -> StoreManifest:
    """Write molecules in chunks of ``chunk_size`` records; the manifest is written last."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    skipped = dict(skipped or {})
    skipped.setdefault("element", 0)
    manifest = StoreManifest(0, chunk_size, vocab_hash=vocab_hash)
    pending: list[bytes] = []
    byte_offset = 0

    def flush():
        nonlocal byte_offset
        k = len(manifest.chunks)
        name = f"chunk-{k:06d}.bin"
        data = _CHUNK_HEADER.pack(CHUNK_MAGIC, SCHEMA_VERSION, len(pending)) + b"".join(pending)
        (root / name).write_bytes(data)
        manifest.chunks.append({
            "file": name, "n_records": len(pending), "record_offset": manifest.count,
            "byte_offset": byte_offset, "n_bytes": len(data),
        })
        manifest.count += len(pending)
        byte_offset += len(data)
        pending.clear()

    for mol in stream:
        try:
            pending.append(encode_record(mol))
        except ElementFilter:
            skipped["element"] += 1
            continue
        if len(pending) == chunk_size:
            flush()
    if pending:
        flush()
    manifest.skipped = skipped
    (root / "manifest.json").write_text(manifest.to_json())
    return manifest


# ---------------------------------------------------------------------------
# reading


class Store:
    """Random access to an ingested store; chunks are loaded lazily and cached."""

    def __init__(self, path):
        self.root = Path(path)
        self.manifest = StoreManifest.from_json((self.root / "manifest.json").read_text())
        self._chunks: dict[int, tuple[bytes, list[int]]] = {}

    def __len__(self):
        return self.manifest.count

    def _chunk(self, k: int):
        if k not in self._chunks:
            raw = (self.root / self.manifest.chunks[k]["file"]).read_bytes()
            magic, _, n = _CHUNK_HEADER.unpack_from(raw, 0)
            if magic != CHUNK_MAGIC:
                raise ValueError(f"chunk {k}: bad magic")
            starts, p = [], _CHUNK_HEADER.size
            for _ in range(n):
                starts.append(p)
                na, nb = _REC_HEADER.unpack_from(raw, p)
                p += _REC_HEADER.size + na * _ATOM.itemsize + nb * _BOND.itemsize + 12 * na
            self._chunks[k] = (raw, starts)
        return self._chunks[k]

    def read(self, index: int) -> ToyMolecule:
        if not 0 <= index < self.manifest.count:
            raise IndexError(f"record {index} out of range (count {self.manifest.count})")
        k, r = divmod(index, self.manifest.chunk_size)
        raw, starts = self._chunk(k)
        return decode_record(raw, starts[r])[0]

    def __iter__(self):
        for k in range(len(self.manifest.chunks)):
            raw, starts = self._chunk(k)
            for s in starts:
                yield decode_record(raw, s)[0]


def read(manifest_or_path, index: int) -> ToyMolecule:
    return Store(manifest_or_path).read(index)


def verify_manifest(path) -> bool:
    """Recompute counts and offsets from the chunk headers and compare with the manifest."""
    root = Path(path)
    man = StoreManifest.from_json((root / "manifest.json").read_text())
    count, byte_offset = 0, 0
    for k, ch in enumerate(man.chunks):
        raw = (root / f"chunk-{k:06d}.bin").read_bytes()
        magic, _, n = _CHUNK_HEADER.unpack_from(raw, 0)
        expect = {"file": f"chunk-{k:06d}.bin", "n_records": n, "record_offset": count,
                  "byte_offset": byte_offset, "n_bytes": len(raw)}
        if magic != CHUNK_MAGIC or ch != expect:
            return False
        count += n
        byte_offset += len(raw)
    return count == man.count
