"""Training: task mixing, batching, losses on the tape, Adam, checkpoints and metrics."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .chem import CondensedVocab, SystemRecord, extract_pharmacophores, subsample_pharmacophores
from .errors import CorruptCheckpoint, NoEligibleFeatures, NonFiniteLoss, RegistryMismatch
from .featurize import system_graph
from .flow import (
    SYMMETRIC_EDGES,
    T_CLAMP,
    ContinuousPathParams,
    NoisyExample,
    default_loss_weights,
    make_noisy_example,
    upper_edges,
)
from .hetgraph import HeteroGraph, ModalityRegistry, NodeType, TaskSpec, batch_graphs, make_task
from .net import Denoiser, NetConfig, ParamStore, config_hash, forward, init_params
from .kernels import adam_step

MAGIC = b"MMFLOWCK"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    tasks: dict = field(default_factory=lambda: {"denovo_ligand": 1.0})
    batch_size: int = 4
    steps: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    loss_weights: dict = field(default_factory=dict)
    seed: int = 0
    checkpoint_every: int = 0
    t_max: float = T_CLAMP
    net: dict = field(default_factory=dict)
    data: str = ""
    vocab: str = ""
    out_dir: str = ""
    init_checkpoint: str = ""

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("task mixture is empty")
        total = float(sum(self.tasks.values()))
        if any(w < 0 for w in self.tasks.values()) or abs(total - 1.0) > 1e-9:
            raise ValueError(f"task mixture weights must be non-negative and sum to 1, got {total}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")

    @property
    def net_config(self) -> NetConfig:
        d = dict(self.net)
        d.setdefault("tasks", tuple(self.tasks))
        return NetConfig.from_dict(d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls(**json.loads(text))


def sample_task(cfg: TrainConfig, rng: np.random.Generator) -> str:
    names = list(cfg.tasks)
    p = np.array([cfg.tasks[n] for n in names], dtype=np.float64)
    return names[int(rng.choice(len(names), p=p / p.sum()))]


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam; returns new parameters and state (inputs untouched)."""
    k = state.step + 1
    new, m, v = adam_step(theta, grad, state.m, state.v, lr, beta1, beta2, eps, k)
    return new, AdamState(m, v, k)


def clip_global_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.sqrt(np.dot(grad, grad)))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


# ---------------------------------------------------------------------------
# losses on the tape


def _per_graph_counts(batch: np.ndarray, n_graphs: int, mask=None) -> np.ndarray:
    w = np.ones(len(batch)) if mask is None else mask.astype(np.float64)
    return np.bincount(batch, weights=w, minlength=n_graphs)


def position_loss(pred, target: np.ndarray, batch: np.ndarray, t: np.ndarray, t_clamp: float = T_CLAMP):
    """Mean over graphs of ``(1-t)^-2`` times the per-graph mean squared atom error."""
    G = len(t)
    counts = _per_graph_counts(batch, G)
    w = (1.0 - np.minimum(t, t_clamp)) ** -2
    coef = w[batch] / (counts[batch] * G)
    sq = ad.sum(ad.square(pred - target), axis=-1)
    return ad.sum(sq * coef)


def token_loss(logits, target: np.ndarray, current: np.ndarray, mask_token: int, batch: np.ndarray,
               n_graphs: int, rows: np.ndarray | None = None):
    """Mean over graphs of the cross-entropy averaged over that graph's masked positions."""
    if rows is not None:
        logits, target, current, batch = ad.take(logits, rows), target[rows], current[rows], batch[rows]
    masked = current == mask_token
    counts = _per_graph_counts(batch, n_graphs, masked)
    coef = np.where(masked, 1.0 / np.maximum(counts[batch], 1) / n_graphs, 0.0)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(target)), target] = 1.0
    picked = ad.sum(ad.log_softmax(logits) * onehot, axis=-1)
    return -ad.sum(picked * coef)


def example_losses(out: dict, ex: NoisyExample, task: TaskSpec, registry: ModalityRegistry,
                   t_clamp: float = T_CLAMP) -> dict:
    g = ex.graph_t
    losses = {}
    for mid in sorted(task.generated):
        d = registry[mid]
        if not d.is_discrete:
            losses[mid] = position_loss(out[mid], ex.targets[mid], g.nodes[d.carrier].batch, ex.t, t_clamp)
            continue
        cur = g.value(mid, registry)
        if d.on_edge:
            batch = g.edge_batch(d.carrier)
            rows = upper_edges(g, d.carrier)[0] if d.carrier in SYMMETRIC_EDGES else None
        else:
            batch, rows = g.nodes[d.carrier].batch, None
        losses[mid] = token_loss(out[mid], ex.targets[mid], cur, d.mask_token, batch, g.n_graphs, rows)
    return losses


def total_loss(losses: dict, weights) -> ad.Var:
    total = ad.Var(0.0)
    for mid, loss in losses.items():
        total = total + loss * float(weights[mid])
    return total


# ---------------------------------------------------------------------------
# data


class TaskData:
    """Featurized clean graphs per (task, example), with per-step pharmacophore subsampling."""

    def __init__(self, systems: list[SystemRecord], vocab: CondensedVocab):
        self.systems = list(systems)
        self.vocab = vocab
        self._cache = {}

    def __len__(self):
        return len(self.systems)

    def clean_graph(self, task: TaskSpec, i: int, rng: np.random.Generator) -> HeteroGraph:
        pocket_pharm = NodeType.PHARMACOPHORE in task.node_types() and NodeType.PROTEIN in task.node_types()
        if pocket_pharm:
            s = self.systems[i]
            feats = extract_pharmacophores(s.ligand)
            try:
                feats = subsample_pharmacophores(feats, s.protein, rng)
            except NoEligibleFeatures:
                feats = feats[:1] if feats else feats
            return system_graph(s, task, self.vocab, pharm=feats)
        key = (task.name, i)
        if key not in self._cache:
            self._cache[key] = system_graph(self.systems[i], task, self.vocab)
        return self._cache[key]

    def batch(self, task: TaskSpec, idx, rng) -> HeteroGraph:
        return batch_graphs([self.clean_graph(task, int(i), rng) for i in idx])


def make_batch(data: TaskData, task: TaskSpec, registry: ModalityRegistry, batch_size: int,
               rng: np.random.Generator, t_max: float = T_CLAMP, idx=None,
               cparams: ContinuousPathParams | None = None) -> NoisyExample:
    if idx is None:
        idx = rng.choice(len(data), size=batch_size, replace=len(data) < batch_size)
    clean = data.batch(task, idx, rng)
    t = rng.uniform(0.0, t_max, size=clean.n_graphs)
    return make_noisy_example(clean, task, registry, t, rng, cparams)


# ---------------------------------------------------------------------------
# step and loop


@dataclass
class StepResult:
    loss: float
    per_modality: dict
    grad_norm: float


def compute_loss_and_grad(model: Denoiser, ex: NoisyExample, task: TaskSpec, weights):
    leaves = model.params.leaves()
    out = forward(leaves, ex.graph_t, task, ex.t, model.cfg, model.registry)
    losses = example_losses(out, ex, task, model.registry)
    total = total_loss(losses, weights)
    grads = ad.backward(total, leaves)
    return total, losses, model.params.flatten(grads)


def training_step(ex: NoisyExample, task: TaskSpec, model: Denoiser, opt: AdamState, cfg: TrainConfig,
                  weights=None) -> tuple[AdamState, StepResult]:
    """Forward, loss, backward, clipped Adam update (in place on ``model.params``)."""
    weights = weights or _weights(cfg, model.registry)
    total, losses, grad = compute_loss_and_grad(model, ex, task, weights)
    value = float(total.value)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NonFiniteLoss(f"non-finite loss or gradient on task {task.name}: {value}")
    grad, norm = clip_global_norm(grad, cfg.grad_clip)
    new_flat, opt = adam_update(model.params.flat, grad, opt, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    model.params.flat[...] = new_flat
    return opt, StepResult(value, {k: float(v.value) for k, v in losses.items()}, norm)


def _weights(cfg: TrainConfig, registry: ModalityRegistry) -> dict:
    w = dict(default_loss_weights(registry).weights)
    w.update(cfg.loss_weights)
    return w


@dataclass
class TrainResult:
    model: Denoiser
    opt: AdamState
    history: list


def train(model: Denoiser, data: TaskData, cfg: TrainConfig, opt: AdamState | None = None,
          rng: np.random.Generator | None = None, callback=None) -> TrainResult:
    """Run ``cfg.steps`` steps; each step draws a task, a batch and a shared t per example."""
    rng = rng or np.random.default_rng(cfg.seed)
    opt = opt or AdamState.zeros(model.params.size)
    tasks = {name: make_task(name, model.registry) for name in cfg.tasks}
    weights = _weights(cfg, model.registry)
    history = []
    for step in range(1, cfg.steps + 1):
        name = sample_task(cfg, rng)
        ex = make_batch(data, tasks[name], model.registry, cfg.batch_size, rng, cfg.t_max)
        opt, res = training_step(ex, tasks[name], model, opt, cfg, weights)
        row = {"step": step, "task": name, **res.per_modality, "total": res.loss}
        history.append(row)
        if callback is not None:
            callback(step, row, model, opt)
    return TrainResult(model, opt, history)


def write_metrics(history: list, path) -> None:
    cols = ["step", "task"] + sorted({k for r in history for k in r} - {"step", "task", "total"}) + ["total"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        for r in history:
            w.writerow(r)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Denoiser, opt: AdamState | None = None, vocab: CondensedVocab | None = None,
                    extra: dict | None = None) -> None:
    """Magic, u64 header length, JSON header, then little-endian float64 tensors in declaration order."""
    header = {
        "version": CKPT_VERSION,
        "config_hash": model.config_hash,
        "net": model.cfg.to_dict(),
        "registry": json.loads(model.registry.to_json()),
        "vocab": json.loads(vocab.to_json()) if vocab is not None else None,
        "params": [[k, list(s)] for k, s in model.params.shapes.items()],
        "n_values": model.params.size,
        "adam_step": None if opt is None else opt.step,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<Q", len(blob)), blob, model.params.flat.astype("<f8").tobytes()]
    if opt is not None:
        parts += [opt.m.astype("<f8").tobytes(), opt.v.astype("<f8").tobytes()]
    Path(path).write_bytes(b"".join(parts))


@dataclass
class Checkpoint:
    model: Denoiser
    opt: AdamState | None
    vocab: CondensedVocab | None
    extra: dict


def load_checkpoint(path, expected_hash: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC or len(raw) < 16:
        raise CorruptCheckpoint(f"{path}: not a checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode())
        n = int(header["n_values"])
        shapes = {k: tuple(s) for k, s in header["params"]}
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header ({exc})") from None
    body = raw[16 + hlen:]
    with_opt = header.get("adam_step") is not None
    need = 8 * n * (3 if with_opt else 1)
    if len(body) != need:
        raise CorruptCheckpoint(f"{path}: expected {need} payload bytes, found {len(body)}")
    if expected_hash is not None and header["config_hash"] != expected_hash:
        raise RegistryMismatch(f"{path}: config hash {header['config_hash']} != {expected_hash}")
    registry = ModalityRegistry.from_json(json.dumps(header["registry"]))
    cfg = NetConfig.from_dict(header["net"])
    vals = np.frombuffer(body, dtype="<f8").astype(np.float64)
    params = ParamStore(shapes, vals[:n].copy())
    model = Denoiser(cfg, registry, params)
    if model.config_hash != header["config_hash"]:
        raise CorruptCheckpoint(f"{path}: header hash does not match its own config")
    opt = AdamState(vals[n:2 * n].copy(), vals[2 * n:].copy(), int(header["adam_step"])) if with_opt else None
    vocab = CondensedVocab.from_json(json.dumps(header["vocab"])) if header.get("vocab") else None
    return Checkpoint(model, opt, vocab, header.get("extra", {}))


# ---------------------------------------------------------------------------
# two-phase training


def extend_model(model: Denoiser, tasks, seed: int = 0) -> Denoiser:
    """Same widths, more tasks: fresh parameters for new heads/edge types, old ones copied."""
    cfg = NetConfig.from_dict({**model.cfg.to_dict(), "tasks": list(dict.fromkeys(list(model.cfg.tasks) + list(tasks)))})
    if cfg == model.cfg:
        return Denoiser(cfg, model.registry, model.params.copy())
    params = init_params(cfg, model.registry, np.random.default_rng(seed))
    params.load_from(model.params)
    return Denoiser(cfg, model.registry, params)


def pretrain_then_finetune(model: Denoiser, pre_cfg: TrainConfig, fine_cfg: TrainConfig,
                           pre_data: TaskData, fine_data: TaskData, fine_registry: ModalityRegistry | None = None,
                           checkpoint_path=None) -> tuple[Denoiser, list, list]:
    """Train on protein-free tasks, checkpoint, then continue on ``fine_cfg``'s mixture."""
    if fine_registry is not None and fine_registry != model.registry:
        raise RegistryMismatch("fine-tuning registry differs from the pretraining registry")
    pre = train(model, pre_data, pre_cfg)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, pre.model, pre.opt, pre_data.vocab)
    fine_model = extend_model(pre.model, fine_cfg.tasks, fine_cfg.seed)
    fine = train(fine_model, fine_data, fine_cfg)
    return fine.model, pre.history, fine.history
