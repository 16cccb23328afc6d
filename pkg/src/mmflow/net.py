"""SE(3)-equivariant heterogeneous denoiser built from geometric vector perceptrons.

Scalars are ``(n, d)`` arrays, vectors ``(n, 3, d)`` so that channel mixing is a
plain right-multiplication and commutes with rotations acting on axis 1.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import DegenerateEdge, MissingModality
from .flow import upper_edges
from .hetgraph import (
    BOND_VOCAB,
    LL,
    OO,
    POSITION_MODALITY,
    TASK_TABLE,
    EdgeType,
    HeteroGraph,
    ModalityRegistry,
    NodeType,
    TaskSpec,
    dynamic_edge_types,
    make_task,
    reverse_edge_index,
    static_edge_types,
)
from .kernels import radius_pairs

NORM_EPS = 1e-8
DIST_EPS = 1e-12
TASK_NAMES = tuple(TASK_TABLE)

# discrete node modalities embedded per node type
NODE_TOKENS = {
    NodeType.LIGAND: ("lig_atom_type",),
    NodeType.PROTEIN: ("prot_res_name", "prot_element", "prot_atom_name"),
    NodeType.PHARMACOPHORE: ("pharm_type",),
    NodeType.NPNDE: ("npnde_element", "npnde_charge"),
}
EDGE_TOKENS = {LL: "lig_bond_order", OO: "npnde_bond_order"}


@dataclass(frozen=True)
class RbfConfig:
    n_bases: int = 16
    r_max: float = 10.0

    def __post_init__(self):
        if self.n_bases < 1 or self.r_max <= 0:
            raise ValueError(f"invalid rbf config {self}")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(0.0, self.r_max, self.n_bases)

    @property
    def width(self) -> float:
        return self.r_max / (self.n_bases - 1) if self.n_bases > 1 else self.r_max


@dataclass(frozen=True)
class NetConfig:
    d_s: int = 256
    d_v: int = 16
    d_e: int = 64
    d_tok: int = 32
    time_dim: int = 16
    task_dim: int = 16
    pe_dim: int = 16
    n_blocks: int = 4
    n_convs: int = 2
    n_rbf: int = 16
    r_max: float = 10.0
    cutoff: float = 5.0
    agg_norm: float = 1.0
    tasks: tuple = TASK_NAMES

    @property
    def rbf(self) -> RbfConfig:
        return RbfConfig(self.n_rbf, self.r_max)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        if "tasks" in d:
            d["tasks"] = tuple(d["tasks"])
        return cls(**d)


# ---------------------------------------------------------------------------
# parameter storage


class ParamStore:
    """Named tensors that are views into one flat float64 buffer (declaration order)."""

    def __init__(self, shapes: dict, flat: np.ndarray | None = None):
        self.shapes = {k: tuple(v) for k, v in shapes.items()}
        self.offsets = {}
        off = 0
        for k, s in self.shapes.items():
            self.offsets[k] = off
            off += int(np.prod(s, dtype=np.int64))
        self.size = off
        self.flat = np.zeros(off) if flat is None else np.ascontiguousarray(flat, dtype=np.float64)
        if self.flat.shape != (off,):
            raise ValueError(f"flat buffer has {self.flat.size} values, expected {off}")

    def __getitem__(self, name) -> np.ndarray:
        off = self.offsets[name]
        n = int(np.prod(self.shapes[name], dtype=np.int64))
        return self.flat[off:off + n].reshape(self.shapes[name])

    def __contains__(self, name):
        return name in self.shapes

    def __iter__(self):
        return iter(self.shapes)

    def __len__(self):
        return len(self.shapes)

    def names(self) -> list[str]:
        return list(self.shapes)

    def copy(self) -> "ParamStore":
        return ParamStore(self.shapes, self.flat.copy())

    def leaves(self) -> dict:
        return {k: ad.param(self[k], k) for k in self.shapes}

    def flatten(self, grads: dict) -> np.ndarray:
        out = np.zeros(self.size)
        for k, g in grads.items():
            off = self.offsets[k]
            out[off:off + g.size] = g.ravel()
        return out

    def load_from(self, other: "ParamStore") -> list[str]:
        """Copy every same-named, same-shaped tensor from ``other``; returns the copied names."""
        copied = []
        for k in self.shapes:
            if k in other.shapes and other.shapes[k] == self.shapes[k]:
                self[k][...] = other[k]
                copied.append(k)
        return copied


class _Spec:
    def __init__(self):
        self.shapes = {}
        self.init = {}

    def add(self, name, shape, kind="w", fan_in=None):
        self.shapes[name] = tuple(int(s) for s in shape)
        self.init[name] = (kind, fan_in if fan_in is not None else shape[0])

    def gvp(self, prefix, si, vi, so, vo, zero=False):
        h = max(vi, vo)
        self.add(f"{prefix}.wh", (vi, h))
        self.add(f"{prefix}.ws", (si + h, so), "z" if zero else "w")
        self.add(f"{prefix}.bs", (so,), "b")
        if vo:
            self.add(f"{prefix}.wu", (h, vo), "z" if zero else "w")
            self.add(f"{prefix}.wg", (so, vo))
            self.add(f"{prefix}.bg", (vo,), "b")

    def mlp(self, prefix, dims, zero_last=False):
        for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = k == len(dims) - 2
            self.add(f"{prefix}.l{k}.w", (a, b), "z" if (zero_last and last) else "w")
            self.add(f"{prefix}.l{k}.b", (b,), "b")


def tasks_of(cfg: NetConfig, registry: ModalityRegistry) -> list[TaskSpec]:
    return [make_task(name, registry) for name in cfg.tasks]


def layout(cfg: NetConfig, registry: ModalityRegistry) -> _Spec:
    """Parameter shapes for every node/edge type reachable by ``cfg.tasks``."""
    tasks = tasks_of(cfg, registry)
    node_types = sorted({nt for t in tasks for nt in t.node_types()})
    edge_types = []
    for t in tasks:
        for et in static_edge_types(t.node_types()) + dynamic_edge_types(t.node_types()):
            if et not in edge_types:
                edge_types.append(et)
    edge_types.sort()
    gen_pos = sorted({nt for t in tasks for nt in t.node_types() if POSITION_MODALITY[nt] in t.generated})
    heads = sorted({m for t in tasks for m in t.generated if registry[m].is_discrete})
    ds, dv, de, nr = cfg.d_s, cfg.d_v, cfg.d_e, cfg.n_rbf

    sp = _Spec()
    sp.add("embed.task", (len(TASK_NAMES), cfg.task_dim), "e")
    for nt in node_types:
        width = cfg.time_dim + cfg.task_dim
        for mid in NODE_TOKENS[nt]:
            if mid in registry:
                sp.add(f"embed.{nt.code}.{mid}", (registry[mid].size, cfg.d_tok), "e")
                width += cfg.d_tok
        if nt == NodeType.PROTEIN:
            width += cfg.pe_dim
        sp.mlp(f"embed.{nt.code}.mlp", [width, ds, ds])
    static = [et for et in edge_types if et in EDGE_TOKENS]
    for et in static:
        sp.add(f"embed.{et}.bond", (BOND_VOCAB, de), "e")
    for b in range(cfg.n_blocks):
        for c in range(cfg.n_convs):
            for et in edge_types:
                p = f"block{b}.conv{c}.msg.{et}"
                si = 2 * ds + nr + (de if et in EDGE_TOKENS else 0)
                sp.gvp(f"{p}.g0", si, dv + 1, ds, dv)
                sp.gvp(f"{p}.g1", ds, dv, ds, dv)
                sp.gvp(f"{p}.g2", ds, dv, ds, dv)
            for nt in node_types:
                p = f"block{b}.conv{c}.upd.{nt.code}"
                sp.gvp(f"{p}.g0", 2 * ds, 2 * dv, ds, dv)
                sp.gvp(f"{p}.g1", ds, dv, ds, dv)
        for nt in gen_pos:
            p = f"block{b}.pos.{nt.code}"
            sp.gvp(f"{p}.g0", ds, dv, ds, dv)
            sp.gvp(f"{p}.g1", ds, dv, ds // 4 or 1, 1, zero=True)
        for et in static:
            sp.mlp(f"block{b}.edge.{et}", [de + 2 * ds + nr, de, de], zero_last=True)
    for mid in heads:
        d = registry[mid]
        if d.on_edge:
            sp.mlp(f"head.{mid}", [de + ds + nr, ds, d.size])
        else:
            sp.mlp(f"head.{mid}", [ds, ds, d.size])
    return sp


def init_params(cfg: NetConfig, registry: ModalityRegistry, rng: np.random.Generator,
                zero_init: bool = True) -> ParamStore:
    """Kaiming-style uniform fan-in init; residual outputs start at zero unless ``zero_init`` is off."""
    sp = layout(cfg, registry)
    store = ParamStore(sp.shapes)
    for name, (kind, fan_in) in sp.init.items():
        shape = sp.shapes[name]
        if kind == "b":
            continue
        if kind == "z" and zero_init:
            continue
        if kind == "e":
            store[name][...] = rng.standard_normal(shape) * 0.5
            continue
        bound = np.sqrt(3.0 / max(fan_in, 1))
        store[name][...] = rng.uniform(-bound, bound, shape)
    return store


def config_hash(cfg: NetConfig, registry: ModalityRegistry) -> str:
    text = json.dumps({"net": cfg.to_dict(), "registry": json.loads(registry.to_json())}, sort_keys=True)
    return hashlib.sha1(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# building blocks (all take and return autodiff Vars)


def rbf_embed(d, cfg: RbfConfig):
    """Gaussian radial basis ``exp(-(d - mu_k)^2 / 2w^2)``; works on arrays or Vars."""
    mu, w = cfg.centers, cfg.width
    if isinstance(d, Var):
        diff = ad.reshape(d, d.shape + (1,)) - mu
        return ad.exp(ad.square(diff) * (-0.5 / w ** 2))
    d = np.asarray(d, dtype=np.float64)
    return np.exp(-((d[..., None] - mu) ** 2) / (2 * w ** 2))


def sinusoidal_time(t: np.ndarray, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freq = np.exp(np.linspace(0.0, np.log(1000.0), half))
    ang = t[..., None] * freq
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def gvp(P, prefix: str, s: Var, V: Var, act: bool = True):
    """Geometric vector perceptron with a norm-informed scalar path and gated vectors."""
    Vh = V @ P[f"{prefix}.wh"]
    norms = ad.sqrt(ad.sum(ad.square(Vh), axis=1), eps=NORM_EPS)
    pre = ad.concat([s, norms], -1) @ P[f"{prefix}.ws"] + P[f"{prefix}.bs"]
    hidden = ad.silu(pre)
    s_out = hidden if act else pre
    if f"{prefix}.wu" not in P:
        return s_out, None
    gate = ad.sigmoid(hidden @ P[f"{prefix}.wg"] + P[f"{prefix}.bg"])
    V_out = (Vh @ P[f"{prefix}.wu"]) * ad.reshape(gate, (gate.shape[0], 1, gate.shape[1]))
    return s_out, V_out


def mlp(P, prefix: str, x: Var, n_layers: int = 2) -> Var:
    for k in range(n_layers):
        x = x @ P[f"{prefix}.l{k}.w"] + P[f"{prefix}.l{k}.b"]
        if k < n_layers - 1:
            x = ad.silu(x)
    return x


def edge_geometry(x_src: Var, x_dst: Var, index: np.ndarray):
    """Distances and unit displacements ``(x_i - x_j)/d`` (zero vector when d = 0)."""
    diff = ad.take(x_src, index[:, 0]) - ad.take(x_dst, index[:, 1])
    d = ad.sqrt(ad.sum(ad.square(diff), axis=-1), eps=DIST_EPS)
    unit = diff * ad.reshape(ad.reciprocal(d), (d.shape[0], 1))
    return d, unit


def envelope(d: Var, cutoff: float) -> Var:
    """Smooth weight ``(1 - (d/rc)^2)^2`` that vanishes at the radius cutoff."""
    u = 1.0 - ad.square(d) * (1.0 / cutoff ** 2)
    return ad.square(u)


def message(P, prefix: str, s_i: Var, s_j: Var, v_i: Var, e_ij, x_i: Var, x_j: Var, cfg: NetConfig,
            strict: bool = False, weight: Var | None = None):
    """Messages from senders ``i`` to receivers ``j`` (row-aligned per edge).

    Scalar input ``[s_i : s_j : e_ij : rbf(d_ij)]``; vector input
    ``[v_i : (x_i - x_j)/d_ij]``. With ``strict`` a coincident pair raises
    :class:`DegenerateEdge`; otherwise its unit vector is zero.
    """
    diff = x_i - x_j
    d = ad.sqrt(ad.sum(ad.square(diff), axis=-1), eps=DIST_EPS)
    if strict and np.any(np.sqrt(np.maximum(d.value ** 2 - DIST_EPS, 0)) == 0):
        raise DegenerateEdge("coincident endpoints on an edge")
    unit = diff * ad.reshape(ad.reciprocal(d), (d.shape[0], 1))
    return _message(P, prefix, s_i, s_j, v_i, e_ij, d, unit, cfg, weight)


def _message(P, prefix, s_i, s_j, v_i, e_ij, d, unit, cfg, weight=None):
    parts = [s_i, s_j] + ([e_ij] if e_ij is not None else []) + [rbf_embed(d, cfg.rbf)]
    s = ad.concat(parts, -1)
    V = ad.concat([v_i, ad.reshape(unit, (unit.shape[0], 3, 1))], -1)
    for k in range(3):
        s, V = gvp(P, f"{prefix}.g{k}", s, V)
    if weight is not None:
        s = s * ad.reshape(weight, (weight.shape[0], 1))
        V = V * ad.reshape(weight, (weight.shape[0], 1, 1))
    return s, V


def aggregate(messages: list, receivers: list, n: int, d_s: int, d_v: int, norm: float = 1.0):
    """Sum messages over all edge types and neighbors into ``n`` receivers."""
    M_s, M_v = Var(np.zeros((n, d_s))), Var(np.zeros((n, 3, d_v)))
    for (ms, mv), recv in zip(messages, receivers):
        M_s = M_s + ad.segment_sum(ms, recv, n)
        M_v = M_v + ad.segment_sum(mv, recv, n)
    if norm != 1.0:
        M_s, M_v = M_s * (1.0 / norm), M_v * (1.0 / norm)
    return M_s, M_v


def node_update(P, prefix: str, s: Var, v: Var, M_s: Var, M_v: Var):
    """Residual GVP update of scalar and vector features; positions are not inputs."""
    hs, hv = gvp(P, f"{prefix}.g0", ad.concat([s, M_s], -1), ad.concat([v, M_v], -1))
    ds, dv = gvp(P, f"{prefix}.g1", hs, hv, act=False)
    return s + ds, v + dv


def position_update(P, prefix: str, s: Var, v: Var, x: Var) -> Var:
    hs, hv = gvp(P, f"{prefix}.g0", s, v)
    _, dx = gvp(P, f"{prefix}.g1", hs, hv)
    return x + ad.reshape(dx, (dx.shape[0], 3))


def edge_update(P, prefix: str, e: Var, s_i: Var, s_j: Var, d: Var, cfg: NetConfig) -> Var:
    h = ad.concat([e, s_i, s_j, rbf_embed(d, cfg.rbf)], -1)
    return e + mlp(P, prefix, h)


# ---------------------------------------------------------------------------
# forward pass


def _as_vars(params) -> dict:
    if isinstance(params, ParamStore):
        return {k: Var(params[k]) for k in params}
    return params


def task_index(task: TaskSpec) -> int:
    return TASK_NAMES.index(task.name)


def init_embeddings(P, graph: HeteroGraph, task: TaskSpec, t, cfg: NetConfig, registry: ModalityRegistry):
    """Per-node scalars of width ``d_s``, zero vectors, and bond-order edge scalars."""
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (graph.n_graphs,))
    temb = sinusoidal_time(t, cfg.time_dim)
    task_row = ad.take(P["embed.task"], np.array([task_index(task)]))
    s, v = {}, {}
    for nt in graph.node_types():
        ns = graph.nodes[nt]
        parts = [Var(temb[ns.batch]), ad.take(task_row, np.zeros(ns.n, dtype=np.int64))]
        for mid in NODE_TOKENS[nt]:
            if f"embed.{nt.code}.{mid}" not in P:
                continue
            if mid not in ns.data:
                raise MissingModality(f"{nt.name} nodes lack {mid!r}")
            parts.append(ad.take(P[f"embed.{nt.code}.{mid}"], ns.data[mid]))
        if nt == NodeType.PROTEIN:
            pe = ns.aux.get("res_pe")
            if pe is None or pe.shape[1] != cfg.pe_dim:
                pe = np.zeros((ns.n, cfg.pe_dim))
            parts.append(Var(pe))
        s[nt] = mlp(P, f"embed.{nt.code}.mlp", ad.concat(parts, -1))
        v[nt] = Var(np.zeros((ns.n, 3, cfg.d_v)))
    e = {}
    for et, es in graph.edges.items():
        mid = EDGE_TOKENS.get(et)
        if mid is None or f"embed.{et}.bond" not in P:
            continue
        if mid not in es.data:
            raise MissingModality(f"{et} edges lack {mid!r}")
        e[et] = ad.take(P[f"embed.{et}.bond"], es.data[mid])
    return s, v, e


def forward(params, graph: HeteroGraph, task: TaskSpec, t, cfg: NetConfig, registry: ModalityRegistry) -> dict:
    """Denoiser outputs for every generated modality of ``task``.

    ``params`` is a :class:`ParamStore` (inference) or a dict of leaf Vars
    (training). ``t`` is a scalar or one time per graph. Returns Vars:
    final positions for generated position modalities, logits otherwise.
    """
    P = _as_vars(params)
    for mid in task.present():
        d = registry[mid]
        store = graph.edges.get(d.carrier) if d.on_edge else graph.nodes.get(d.carrier)
        if store is None or mid not in store.data:
            if d.on_edge and d.carrier.src not in graph.nodes:
                continue
            raise MissingModality(f"task {task.name} needs {mid!r}")
    s, v, e = init_embeddings(P, graph, task, t, cfg, registry)
    x = {nt: Var(graph.positions(nt)) for nt in graph.node_types()}
    gen_pos = [nt for nt in graph.node_types() if POSITION_MODALITY[nt] in task.generated]
    counts = {nt: graph.count(nt) for nt in graph.node_types()}
    dyn = dynamic_edge_types(graph.node_types())
    for b in range(cfg.n_blocks):
        # edges and geometry from the positions entering this block
        edges = {et: graph.edges[et].index for et in e}
        for et in dyn:
            edges[et] = radius_pairs(
                x[et.src].value, x[et.dst].value, cfg.cutoff,
                graph.nodes[et.src].batch, graph.nodes[et.dst].batch, exclude_self=et.src == et.dst,
            )
        geom = {}
        for et, idx in edges.items():
            if len(idx) == 0:
                continue
            d, unit = edge_geometry(x[et.src], x[et.dst], idx)
            w = envelope(d, cfg.cutoff) if et not in EDGE_TOKENS else None
            geom[et] = (d, unit, w)
        for c in range(cfg.n_convs):
            msgs = {nt: ([], []) for nt in counts}
            for et, (d, unit, w) in geom.items():
                idx = edges[et]
                ms = _message(
                    P, f"block{b}.conv{c}.msg.{et}",
                    ad.take(s[et.src], idx[:, 0]), ad.take(s[et.dst], idx[:, 1]),
                    ad.take(v[et.src], idx[:, 0]), e.get(et), d, unit, cfg, w,
                )
                msgs[et.dst][0].append(ms)
                msgs[et.dst][1].append(idx[:, 1])
            for nt in counts:
                M_s, M_v = aggregate(msgs[nt][0], msgs[nt][1], counts[nt], cfg.d_s, cfg.d_v, cfg.agg_norm)
                s[nt], v[nt] = node_update(P, f"block{b}.conv{c}.upd.{nt.code}", s[nt], v[nt], M_s, M_v)
        for nt in gen_pos:
            x[nt] = position_update(P, f"block{b}.pos.{nt.code}", s[nt], v[nt], x[nt])
        for et in list(e):
            idx = edges[et]
            if len(idx) == 0:
                continue
            d, _ = edge_geometry(x[et.src], x[et.dst], idx)
            e[et] = edge_update(
                P, f"block{b}.edge.{et}", e[et], ad.take(s[et.src], idx[:, 0]), ad.take(s[et.dst], idx[:, 1]), d, cfg,
            )
    out = {}
    for mid in sorted(task.generated):
        d = registry[mid]
        if not d.is_discrete:
            out[mid] = x[d.carrier]
        elif d.on_edge:
            out[mid] = _edge_head(P, mid, graph, d.carrier, s, x, e, cfg)
        else:
            out[mid] = mlp(P, f"head.{mid}", s[d.carrier])
    return out


def _edge_head(P, mid, graph, et: EdgeType, s, x, e, cfg):
    """Symmetric logits: each unordered pair is scored once and mirrored."""
    idx = graph.edges[et].index
    if len(idx) == 0:
        return Var(np.zeros((0, P[f"head.{mid}.l1.b"].shape[0])))
    up, rep = upper_edges(graph, et)
    rev = reverse_edge_index(idx, graph.count(et.src))
    e_sym = ad.take(e[et], up) + ad.take(e[et], rev[up])
    i, j = idx[up, 0], idx[up, 1]
    s_sym = ad.take(s[et.src], i) + ad.take(s[et.dst], j)
    d, _ = edge_geometry(x[et.src], x[et.dst], idx[up])
    logits = mlp(P, f"head.{mid}", ad.concat([e_sym, s_sym, rbf_embed(d, cfg.rbf)], -1))
    return ad.take(logits, rep)


class Denoiser:
    """Bundles config, registry and parameters; callable on a ``FlowState``."""

    def __init__(self, cfg: NetConfig, registry: ModalityRegistry, params: ParamStore):
        self.cfg, self.registry, self.params = cfg, registry, params

    @classmethod
    def create(cls, cfg: NetConfig, registry: ModalityRegistry, seed: int = 0) -> "Denoiser":
        return cls(cfg, registry, init_params(cfg, registry, np.random.default_rng(seed)))

    def predict(self, graph: HeteroGraph, task: TaskSpec, t) -> dict:
        out = forward(self.params, graph, task, t, self.cfg, self.registry)
        return {k: v.value for k, v in out.items()}

    def __call__(self, state) -> dict:
        return self.predict(state.graph, state.task, state.t)

    @property
    def config_hash(self) -> str:
        return config_hash(self.cfg, self.registry)
