"""Flow matching: priors, couplings, conditional paths, losses and the joint sampler."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DenoiserContract, InvalidInput, MissingWeight, PastTerminal, SizeMismatch
from .hetgraph import (
    LL,
    OO,
    POSITION_MODALITY,
    FlowState,
    HeteroGraph,
    ModalityRegistry,
    NodeType,
    TaskSpec,
    reverse_edge_index,
)
from .kernels import linear_assignment

PRIOR_VARIANCE = 2.573  # angstrom^2, mean per-axis variance of ligand coordinates
T_CLAMP = 0.999
SYMMETRIC_EDGES = (LL, OO)


@dataclass(frozen=True)
class ContinuousPathParams:
    p_distort: float = 0.2
    t_distort: float = 0.5
    sigma_distort: float = 0.5

    def __post_init__(self):
        if not (0 <= self.p_distort <= 1 and 0 <= self.t_distort <= 1 and self.sigma_distort >= 0):
            raise ValueError(f"invalid distortion parameters {self}")


@dataclass(frozen=True)
class DiscretePathParams:
    vocab_size: int
    mask_token: int
    eta: float = 0.0

    def __post_init__(self):
        if not 0 <= self.mask_token < self.vocab_size or self.eta < 0:
            raise ValueError(f"invalid discrete path parameters {self}")


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    variance: float = PRIOR_VARIANCE

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")

    def sample(self, n_atoms: int, rng: np.random.Generator) -> np.ndarray:
        return sample_position_prior(n_atoms, self.mean, rng, self.variance)


@dataclass
class LossWeights:
    weights: dict = field(default_factory=dict)

    def __getitem__(self, m):
        return self.weights[m]

    def __contains__(self, m):
        return m in self.weights


def default_loss_weights(registry: ModalityRegistry) -> LossWeights:
    return LossWeights({d.id: (0.5 if d.is_discrete else 1.0) for d in registry})


# ---------------------------------------------------------------------------
# priors and couplings


def sample_position_prior(n_atoms: int, com, rng: np.random.Generator, variance: float = PRIOR_VARIANCE) -> np.ndarray:
    com = np.asarray(com, dtype=np.float64).reshape(3)
    return com + np.sqrt(variance) * rng.standard_normal((int(n_atoms), 3))


def independent_coupling(x0: np.ndarray, x1: np.ndarray):
    if len(x0) != len(x1):
        raise SizeMismatch(f"{len(x0)} prior points vs {len(x1)} data points")
    return x0, x1


def permutation_coupling(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` minimizing ``sum_i |x0[perm[i]] - x1[i]|^2``."""
    if len(x0) != len(x1):
        raise SizeMismatch(f"{len(x0)} prior points vs {len(x1)} data points")
    cost = ((x1[:, None, :] - x0[None, :, :]) ** 2).sum(-1)
    return linear_assignment(cost)


def coupling_cost(x0, x1, perm) -> float:
    return float(((x0[perm] - x1) ** 2).sum())


# ---------------------------------------------------------------------------
# conditional paths


def interpolate_positions(x0, x1, t, params: ContinuousPathParams, rng: np.random.Generator) -> np.ndarray:
    """Linear interpolant plus Bernoulli-masked Gaussian distortion once ``t >= t_distort``.

    ``t`` may be a scalar or one value per atom.
    """
    x0, x1 = np.asarray(x0, float), np.asarray(x1, float)
    if x0.shape != x1.shape:
        raise SizeMismatch(f"shape {x0.shape} vs {x1.shape}")
    t = np.asarray(t, dtype=np.float64)
    tc = t[..., None] if t.ndim else t
    xt = (1 - tc) * x0 + tc * x1
    mask = rng.random(len(x0)) < params.p_distort
    eps = params.sigma_distort * rng.standard_normal(x0.shape)
    on = (t >= params.t_distort) & mask
    return xt + on[:, None] * eps


def mask_interpolate_discrete(x1_tokens, t, params: DiscretePathParams, rng: np.random.Generator) -> np.ndarray:
    """Each token stays ``x1`` with probability ``t``, otherwise becomes the mask token."""
    x1 = np.asarray(x1_tokens, dtype=np.int64)
    if np.any(x1 == params.mask_token) or np.any(x1 >= params.vocab_size) or np.any(x1 < 0):
        raise InvalidInput("data tokens must be in-vocabulary and unmasked")
    keep = rng.random(x1.shape) < np.asarray(t, dtype=np.float64)
    return np.where(keep, x1, params.mask_token)


# ---------------------------------------------------------------------------
# losses (plain numpy; the network's differentiable twins live in ``train``)


def time_weight(t, t_clamp: float = T_CLAMP):
    t = np.minimum(np.asarray(t, dtype=np.float64), t_clamp)
    return (1.0 - t) ** -2


def denoising_loss(x1_pred, x1_true, t, t_clamp: float = T_CLAMP) -> float:
    """``(1-t)^-2`` times the mean over atoms of the squared position error."""
    err = ((np.asarray(x1_pred) - np.asarray(x1_true)) ** 2).sum(-1)
    if err.size == 0:
        return 0.0
    return float(time_weight(t, t_clamp) * err.mean())


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def discrete_ce_loss(logits, x1_true, x_t, mask_token: int) -> float:
    """Cross-entropy of the true tokens, averaged over positions masked in ``x_t``."""
    masked = np.asarray(x_t) == mask_token
    if not masked.any():
        return 0.0
    lp = log_softmax(np.asarray(logits, dtype=np.float64))
    picked = lp[np.arange(len(lp)), np.asarray(x1_true)]
    return float(-(picked[masked]).mean())


def multimodal_loss(per_modality_losses: dict, weights: LossWeights | dict):
    total = 0.0
    for m, loss in per_modality_losses.items():
        if m not in weights:
            raise MissingWeight(f"no loss weight for modality {m!r}")
        total = total + weights[m] * loss
    return total


# ---------------------------------------------------------------------------
# integrators


def euler_step_positions(x_t, x1_pred, t: float, dt: float) -> np.ndarray:
    if t >= 1:
        raise PastTerminal(f"cannot step from t={t}")
    if t + dt > 1 + 1e-12:
        raise PastTerminal(f"step overshoots t=1 (t={t}, dt={dt})")
    return x_t + dt * (x1_pred - x_t) / (1.0 - t)


def softmax_sample(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = np.exp(log_softmax(logits))
    u = rng.random((len(p), 1))
    idx = (np.cumsum(p, axis=1) < u).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def ctmc_step_discrete(x_t, logits, t: float, dt: float, params: DiscretePathParams,
                       rng: np.random.Generator) -> np.ndarray:
    """One masked-CTMC step: unmask at rate ``(1 + eta t)/(1 - t)``, remask at rate ``eta``.

    Samples never draw the mask token; remasking is disabled on the step that
    reaches ``t = 1`` so terminal states are fully unmasked.
    """
    x_t = np.asarray(x_t, dtype=np.int64)
    if t + dt > 1 + 1e-12:
        raise PastTerminal(f"step overshoots t=1 (t={t}, dt={dt})")
    if dt == 0 or len(x_t) == 0:
        return x_t.copy()
    logits = np.array(logits, dtype=np.float64)
    logits[:, params.mask_token] = -np.inf
    masked = x_t == params.mask_token
    final = t + dt >= 1 - 1e-12
    p_unmask = 1.0 if final else min(1.0, dt * (1 + params.eta * t) / (1 - t))
    p_remask = 0.0 if final else min(1.0, dt * params.eta)
    u = rng.random(len(x_t))
    draws = softmax_sample(logits, rng)
    out = x_t.copy()
    unmask = masked & (u < p_unmask)
    out[unmask] = draws[unmask]
    remask = ~masked & (u < p_remask)
    out[remask] = params.mask_token
    return out


# ---------------------------------------------------------------------------
# task-level helpers


def upper_edges(graph: HeteroGraph, et) -> tuple[np.ndarray, np.ndarray]:
    """Representative (src < dst) edges of a symmetric edge set and each edge's representative."""
    idx = graph.edges[et].index
    rev = reverse_edge_index(idx, max(graph.count(et.src), 1))
    up = np.nonzero(idx[:, 0] < idx[:, 1])[0]
    rep = np.where(idx[:, 0] < idx[:, 1], np.arange(len(idx)), rev)
    pos = np.empty(len(idx), dtype=np.int64)
    pos[up] = np.arange(len(up))
    return up, pos[rep]


def _mirror(graph, et, values_up):
    _, rep = upper_edges(graph, et)
    return values_up[rep]


def discrete_params(registry: ModalityRegistry, mid: str, eta: float = 0.0) -> DiscretePathParams:
    d = registry[mid]
    return DiscretePathParams(d.size, d.mask_token, eta)


def ligand_com(graph: HeteroGraph, nt: NodeType = NodeType.LIGAND) -> np.ndarray:
    """Per-graph centroid of one node type's positions, shape (n_graphs, 3)."""
    pos = graph.positions(nt)
    b = graph.nodes[nt].batch
    out = np.zeros((graph.n_graphs, 3))
    for g in range(graph.n_graphs):
        sel = b == g
        if sel.any():
            out[g] = pos[sel].mean(axis=0)
    return out


def apply_priors(graph: HeteroGraph, task: TaskSpec, registry: ModalityRegistry, rng: np.random.Generator,
                 com: np.ndarray, variance: float = PRIOR_VARIANCE) -> HeteroGraph:
    """Replace every generated modality by a draw from its prior (``com`` is per graph)."""
    values = {}
    for mid in sorted(task.generated):
        d = registry[mid]
        if d.is_discrete:
            n = graph.edges[d.carrier].n if d.on_edge else graph.count(d.carrier)
            values[mid] = np.full(n, d.mask_token, dtype=np.int64)
        else:
            b = graph.nodes[d.carrier].batch
            values[mid] = np.asarray(com)[b] + np.sqrt(variance) * rng.standard_normal((len(b), 3))
    return graph.with_values(values, registry)


@dataclass
class NoisyExample:
    """A training input at time ``t`` together with its clean targets."""

    graph_t: HeteroGraph
    targets: dict
    t: np.ndarray  # per graph


def make_noisy_example(clean: HeteroGraph, task: TaskSpec, registry: ModalityRegistry, t: np.ndarray,
                       rng: np.random.Generator, cparams: ContinuousPathParams | None = None,
                       variance: float = PRIOR_VARIANCE) -> NoisyExample:
    """Sample priors, apply couplings and the conditional paths at per-graph times ``t``.

    Permutation couplings reorder the prior draw within each graph; targets are the
    clean values (in the clean graph's atom order).
    """
    cparams = cparams or ContinuousPathParams()
    t = np.asarray(t, dtype=np.float64).reshape(clean.n_graphs)
    values, targets = {}, {}
    for mid in sorted(task.generated):
        d = registry[mid]
        x1 = clean.value(mid, registry)
        targets[mid] = x1
        if d.is_discrete:
            dp = discrete_params(registry, mid)
            if d.on_edge and d.carrier in SYMMETRIC_EDGES:
                up, _ = upper_edges(clean, d.carrier)
                tb = t[clean.edge_batch(d.carrier)[up]]
                values[mid] = _mirror(clean, d.carrier, mask_interpolate_discrete(x1[up], tb, dp, rng))
            else:
                b = clean.edge_batch(d.carrier) if d.on_edge else clean.nodes[d.carrier].batch
                values[mid] = mask_interpolate_discrete(x1, t[b], dp, rng)
        else:
            nt = d.carrier
            b = clean.nodes[nt].batch
            com = ligand_com(clean, nt)
            x0 = com[b] + np.sqrt(variance) * rng.standard_normal(x1.shape)
            if task.couplings[mid] == "permutation":
                for g in range(clean.n_graphs):
                    sel = np.nonzero(b == g)[0]
                    perm = permutation_coupling(x0[sel], x1[sel])
                    x0[sel] = x0[sel][perm]
            values[mid] = interpolate_positions(x0, x1, t[b], cparams, rng)
    return NoisyExample(clean.with_values(values, registry), targets, t)


Denoiser = Callable[[FlowState], dict]


def sample_trajectory(task: TaskSpec, init: FlowState, denoiser: Denoiser, n_steps: int,
                      rng: np.random.Generator, registry: ModalityRegistry, eta: float = 0.0) -> list[FlowState]:
    """Integrate all generated modalities jointly from ``t=0`` to ``t=1``.

    One denoiser call per step predicts every generated modality; continuous
    modalities take an Euler step, discrete ones a CTMC step. Conditioning
    arrays are passed through untouched.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    states = [init]
    graph = init.graph
    ts = np.linspace(0.0, 1.0, n_steps + 1)
    sym = {}
    for mid in task.generated:
        d = registry[mid]
        if d.is_discrete and d.on_edge and d.carrier in SYMMETRIC_EDGES:
            sym[mid] = upper_edges(graph, d.carrier)
    for k in range(n_steps):
        t, dt = float(ts[k]), float(ts[k + 1] - ts[k])
        state = FlowState(t, graph, task)
        values = {}
        if task.generated:
            pred = denoiser(state)
            for mid in sorted(task.generated):
                d = registry[mid]
                cur = graph.value(mid, registry)
                if mid not in pred:
                    raise DenoiserContract(f"denoiser did not predict {mid!r}")
                out = np.asarray(pred[mid])
                if d.is_discrete:
                    if out.shape != (len(cur), d.size):
                        raise DenoiserContract(f"{mid}: logits shape {out.shape}, expected {(len(cur), d.size)}")
                    dp = discrete_params(registry, mid, eta)
                    if mid in sym:
                        up, rep = sym[mid]
                        values[mid] = ctmc_step_discrete(cur[up], out[up], t, dt, dp, rng)[rep]
                    else:
                        values[mid] = ctmc_step_discrete(cur, out, t, dt, dp, rng)
                else:
                    if out.shape != cur.shape:
                        raise DenoiserContract(f"{mid}: prediction shape {out.shape}, expected {cur.shape}")
                    values[mid] = euler_step_positions(cur, out, t, dt)
        graph = graph.with_values(values, registry) if values else graph
        states.append(FlowState(float(ts[k + 1]), graph, task))
    return states


def position_modalities(task: TaskSpec) -> list[tuple[NodeType, str]]:
    return [(nt, m) for nt, m in POSITION_MODALITY.items() if m in task.generated]
