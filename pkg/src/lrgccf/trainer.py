"""BPR training of E0 through the linear propagation stack."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .graph import BipartiteGraph, propagate
from .model import EmbeddingState, ModelConfig, from_config
from .seeding import derive_seed

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


class Triplets(NamedTuple):
    """Parallel arrays of (user, positive item, negative item)."""

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self) -> int:
        return int(self.users.shape[0])

    def take(self, idx) -> "Triplets":
        return Triplets(self.users[idx], self.pos[idx], self.neg[idx])

    @classmethod
    def of(cls, triples) -> "Triplets":
        arr = np.asarray(list(triples), dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())


@dataclass
class TrainConfig:
    lr: float = 50.0
    reg: float = 0.01
    epochs: int = 400
    batch_size: int = 2048
    negatives_per_positive: int = 1
    seed: int = 0
    early_stop_patience: int = 10
    eval_every: int = 5

    def __post_init__(self):
        if self.reg < 0:
            raise ValueError("reg (lambda) must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1, epochs >= 0")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_hr20: float | None = None
    val_ndcg20: float | None = None


@dataclass
class TrainResult:
    state: EmbeddingState
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_ndcg20: float | None = None


def sample_epoch(dataset, rng: np.random.Generator, negatives_per_positive: int = 1) -> Triplets:
    """One (a, i, j) per train positive and negative draw, j uniform over items outside R_a."""
    train = dataset.train_array()
    N = dataset.N
    deg = np.bincount(train[:, 0], minlength=dataset.M)
    full = np.flatnonzero(deg >= N)
    if full.size:
        warnings.warn(f"skipping {full.size} user(s) who interacted with every item", RuntimeWarning)
        train = train[~np.isin(train[:, 0], full)]

    users = np.repeat(train[:, 0], negatives_per_positive)
    pos = np.repeat(train[:, 1], negatives_per_positive)
    keys = np.unique(train[:, 0] * N + train[:, 1])
    neg = rng.integers(0, N, size=users.shape[0])
    bad = np.flatnonzero(_contains(keys, users * N + neg))
    while bad.size:
        neg[bad] = rng.integers(0, N, size=bad.size)
        bad = bad[_contains(keys, users[bad] * N + neg[bad])]
    order = rng.permutation(users.shape[0])
    return Triplets(users[order], pos[order], neg[order])


def _contains(sorted_keys: np.ndarray, q: np.ndarray) -> np.ndarray:
    if sorted_keys.size == 0:
        return np.zeros(q.shape, dtype=bool)
    idx = np.searchsorted(sorted_keys, q)
    idx[idx == sorted_keys.size] = 0
    return sorted_keys[idx] == q


def _scored_layers(state: EmbeddingState, residual: bool) -> list[int]:
    return list(range(state.K + 1)) if residual else [state.K]


def pair_margins(batch: Triplets, state: EmbeddingState, residual: bool = True) -> np.ndarray:
    """x_aij = r_ai - r_aj for every triplet."""
    layers = state._require_layers()
    M = state.M
    x = np.zeros(len(batch))
    for k in _scored_layers(state, residual):
        E = layers[k]
        x += np.einsum("bd,bd->b", E[batch.users], E[M + batch.pos] - E[M + batch.neg])
    return x


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def bpr_loss(batch: Triplets, state: EmbeddingState, *, reg: float, residual: bool = True) -> float:
    """sum -ln s(r_ai - r_aj) + reg * ||E0||^2."""
    data = float(np.sum(softplus(-pair_margins(batch, state, residual)))) if len(batch) else 0.0
    return data + reg * float(np.sum(state.E0 * state.E0))


def _pair_matrix(batch: Triplets, M: int, n_nodes: int, coef: np.ndarray) -> sp.csr_matrix:
    """Sparse C with G^k = C @ E^k for the per-layer data gradient.

    Row a collects c*(e_i - e_j); rows i and j collect +c*e_a and -c*e_a.
    """
    a, i, j = batch.users, M + batch.pos, M + batch.neg
    rows = np.concatenate([a, a, i, j])
    cols = np.concatenate([i, j, a, a])
    vals = np.concatenate([coef, -coef, coef, -coef])
    C = sp.csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))
    C.sort_indices()
    return C


def _data_gradients(batch: Triplets, state: EmbeddingState, graph: BipartiteGraph, residual: bool,
                    margins: np.ndarray | None = None):
    """Gradients of the summed BPR data term w.r.t. E0 and the transforms (if any)."""
    layers = state._require_layers()
    M, K, D = state.M, state.K, state.D
    n_nodes = M + state.N
    gW = None if state.transforms is None else [np.zeros((D, D)) for _ in range(K)]
    if len(batch) == 0:
        return np.zeros_like(state.E0), gW

    # d softplus(-x)/dx = -s(-x)
    if margins is None:
        margins = pair_margins(batch, state, residual)
    C = _pair_matrix(batch, M, n_nodes, -expit(-margins))
    scored = set(_scored_layers(state, residual))

    # Horner pull-back: acc_k = G^k + P^T acc_{k+1} (W^k)^T
    PT = graph.operator_t(state.mode)
    acc = np.asarray(C @ layers[K])
    for k in range(K - 1, -1, -1):
        if state.transforms is not None:
            gW[k] = propagate(graph, state.mode, layers[k]).T @ acc
            acc = np.asarray(PT @ (acc @ state.transforms[k].T))
        else:
            acc = np.asarray(PT @ acc)
        if k in scored:
            acc += C @ layers[k]
    return acc, gW


def gradient(batch: Triplets, state: EmbeddingState, graph: BipartiteGraph, *,
             reg: float, residual: bool = True) -> np.ndarray:
    """Exact d bpr_loss / d E0 (full backprop through every propagation step)."""
    gE, _ = _data_gradients(batch, state, graph, residual)
    return gE + 2.0 * reg * state.E0


def transform_gradients(batch: Triplets, state: EmbeddingState, graph: BipartiteGraph, *,
                       residual: bool = True) -> list[np.ndarray]:
    if state.transforms is None:
        raise ValueError("state has no learned transforms")
    return _data_gradients(batch, state, graph, residual)[1]


EvalHook = Callable[[EmbeddingState, int], "tuple[float, float]"]


def train(
    dataset,
    graph: BipartiteGraph,
    model_config: ModelConfig,
    train_config: TrainConfig,
    eval_hook: EvalHook | None = None,
    state: EmbeddingState | None = None,
) -> TrainResult:
    """Minibatch SGD on the BPR objective; returns the best-validation snapshot.

    Each step follows the average data gradient of the batch plus the gradient of
    ``reg * ||E0||^2 / T`` (T = triplets per epoch), i.e. the full objective scaled by 1/T.
    ``eval_hook(state, epoch)`` returns (hr@20, ndcg@20) on validation.
    """
    tc = train_config
    if state is None:
        state = from_config(dataset.M, dataset.N, model_config, derive_seed(tc.seed, "init"))
    state.refresh(graph)
    rng = np.random.default_rng(derive_seed(tc.seed, "sampling"))
    residual = model_config.residual
    learn_w = state.transforms is not None

    result = TrainResult(state=state)
    best: EmbeddingState | None = None
    stale = 0
    for epoch in range(1, tc.epochs + 1):
        triplets = sample_epoch(dataset, rng, tc.negatives_per_positive)
        T = max(len(triplets), 1)
        reg_scale = tc.reg / T
        total = 0.0
        n_batches = math.ceil(len(triplets) / tc.batch_size)
        for b in range(n_batches):
            batch = triplets.take(slice(b * tc.batch_size, (b + 1) * tc.batch_size))
            B = len(batch)
            x = pair_margins(batch, state, residual)
            total += float(np.sum(softplus(-x)))
            gE, gW = _data_gradients(batch, state, graph, residual, x)
            state.E0 -= tc.lr * (gE / B + 2.0 * reg_scale * state.E0)
            if learn_w:
                for w, g in zip(state.transforms, gW):
                    w -= tc.lr * (g / B)
            if not np.all(np.isfinite(state.E0)) or (learn_w and not all(np.all(np.isfinite(w)) for w in state.transforms)):
                raise NumericalError(f"non-finite parameters at epoch {epoch}, batch {b + 1}")
            state.refresh(graph)
        loss = total / T + reg_scale * float(np.sum(state.E0 * state.E0))
        rec = EpochRecord(epoch=epoch, loss=loss)
        result.history.append(rec)

        if eval_hook is not None and epoch % tc.eval_every == 0:
            rec.val_hr20, rec.val_ndcg20 = (float(v) for v in eval_hook(state, epoch))
            log.info("epoch %d loss %.6f val hr@20 %.5f ndcg@20 %.5f", epoch, loss, rec.val_hr20, rec.val_ndcg20)
            if result.best_ndcg20 is None or rec.val_ndcg20 > result.best_ndcg20:
                result.best_ndcg20 = rec.val_ndcg20
                result.best_epoch = epoch
                best = state.copy()
                stale = 0
            else:
                stale += 1
                if stale >= tc.early_stop_patience:
                    log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                    break
        else:
            log.debug("epoch %d loss %.6f", epoch, loss)

    result.state = best if best is not None else state
    return result
