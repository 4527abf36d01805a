"""Full-ranking HR@N / NDCG@N and embedding-smoothness diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import EmbeddingState, score_all_items, score_matrix

DEFAULT_TOPN = (10, 20, 30, 40, 50)


@dataclass
class MetricsReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    user_count: int

    def rows(self):
        for n in sorted(self.hr):
            yield n, self.hr[n], self.ndcg[n]


@dataclass
class LayerSimilarity:
    layer: int | str
    user_sim_mean: float
    user_sim_var: float
    item_sim_mean: float
    item_sim_var: float


@dataclass
class SmoothnessReport:
    layers: list[LayerSimilarity]
    user_pairs: int
    item_pairs: int
    concat: LayerSimilarity | None = None
    extra: dict = field(default_factory=dict)

    def rows(self, include_concat: bool = False):
        entries = list(self.layers) + ([self.concat] if include_concat and self.concat else [])
        for s in entries:
            yield s.layer, "user", s.user_sim_mean, s.user_sim_var
            yield s.layer, "item", s.item_sim_mean, s.item_sim_var


def _masked_items(dataset, u: int, split: str) -> set[int]:
    masked = set(dataset.positives("train")[u])
    if split == "test":
        masked |= dataset.positives("val")[u]
    return masked


def top_indices(scores: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n largest finite-or-not-minus-inf scores; ties by ascending index."""
    valid = np.flatnonzero(scores > -np.inf)
    if valid.size <= n:
        cand = valid
    else:
        kth = np.partition(scores[valid], valid.size - n)[valid.size - n]
        cand = valid[scores[valid] >= kth]
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:n]]


def rank_user(state: EmbeddingState, dataset, u: int, n_max: int, split: str = "test",
              residual: bool = True, mask: bool = True) -> np.ndarray:
    """Top ``n_max`` items for user ``u`` after masking already-observed items."""
    scores = score_all_items(state, u, residual).astype(np.float64)
    if mask:
        masked = list(_masked_items(dataset, u, split))
        scores[masked] = -np.inf
    return top_indices(scores, n_max)


def hr_at_n(top_n, test_positives) -> float:
    """Recall form: fraction of the user's held-out items found in the list."""
    test_positives = set(test_positives)
    hits = sum(1 for i in top_n if i in test_positives)
    return hits / len(test_positives)


def ndcg_at_n(top_n, test_positives) -> float:
    test_positives = set(test_positives)
    dcg = sum(1.0 / math.log2(p + 2) for p, i in enumerate(top_n) if i in test_positives)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(len(top_n), len(test_positives))))
    return dcg / idcg if idcg > 0 else 0.0


def evaluate(state: EmbeddingState, dataset, split: str = "test", residual: bool = True,
             topn=DEFAULT_TOPN, chunk: int = 1024) -> MetricsReport:
    if split not in ("val", "test"):
        raise ValueError(f"split must be 'val' or 'test', got {split!r}")
    targets = dataset.positives(split)
    users = [u for u in range(dataset.M) if targets[u]]
    if not users:
        raise ValueError(f"no users have {split} positives")
    topn = sorted(set(int(n) for n in topn))
    n_max = topn[-1]
    hr_sum = {n: 0.0 for n in topn}
    ndcg_sum = {n: 0.0 for n in topn}
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = score_matrix(state, block, residual).astype(np.float64)
        for row, u in enumerate(block):
            s = scores[row]
            s[list(_masked_items(dataset, u, split))] = -np.inf
            ranked = top_indices(s, n_max)
            for n in topn:
                hr_sum[n] += hr_at_n(ranked[:n], targets[u])
                ndcg_sum[n] += ndcg_at_n(ranked[:n], targets[u])
    count = len(users)
    return MetricsReport(
        hr={n: hr_sum[n] / count for n in topn},
        ndcg={n: ndcg_sum[n] / count for n in topn},
        user_count=count,
    )


def sample_pairs(n: int, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``count`` distinct unordered pairs a<b from range(n) (all pairs if fewer exist)."""
    total = n * (n - 1) // 2
    if count >= total:
        a, b = np.triu_indices(n, k=1)
        return a, b
    lin = np.sort(rng.choice(total, size=count, replace=False))
    # invert the row-major upper-triangle numbering
    a = (n - 2 - np.floor(np.sqrt(-8 * lin + 4 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    b = (lin + a + 1 - n * (n - 1) // 2 + (n - a) * ((n - a) - 1) // 2).astype(np.int64)
    return a, b


def cosine_stats(X: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    norms = np.linalg.norm(X, axis=1)
    sims = np.einsum("pd,pd->p", X[a], X[b]) / (norms[a] * norms[b])
    return float(np.mean(sims)), float(np.var(sims))


def _nonzero_pairs(blocks: list[np.ndarray], count: int, rng) -> tuple[np.ndarray, np.ndarray]:
    nonzero = np.flatnonzero(np.all([np.linalg.norm(x, axis=1) > 0 for x in blocks], axis=0))
    if nonzero.size < 2:
        raise ValueError("fewer than two nodes with non-zero embeddings")
    a, b = sample_pairs(nonzero.size, count, rng)
    return nonzero[a], nonzero[b]


def smoothness(state: EmbeddingState, K: int | None = None, pair_sample: int = 100_000,
               rng: np.random.Generator | None = None) -> SmoothnessReport:
    """Mean/variance of sampled user-user and item-item cosine similarity at each layer 0..K.

    The same pairs are reused across layers; the concatenated (residual) embedding is
    reported separately in ``concat``.
    """
    layers = state._require_layers()
    K = state.K if K is None else K
    if K > len(layers) - 1:
        raise ValueError(f"requested layer {K} but only {len(layers) - 1} computed")
    M, N = state.M, state.N
    if M < 2 or N < 2:
        raise ValueError("need at least two users and two items")
    rng = rng if rng is not None else np.random.default_rng(0)
    used = layers[:K + 1]
    ua, ub = _nonzero_pairs([x[:M] for x in used], pair_sample, rng)
    ia, ib = _nonzero_pairs([x[M:] for x in used], pair_sample, rng)

    def stats(X, label):
        um, uv = cosine_stats(X[:M], ua, ub)
        im, iv = cosine_stats(X[M:], ia, ib)
        return LayerSimilarity(label, um, uv, im, iv)

    per_layer = [stats(x, k) for k, x in enumerate(used)]
    return SmoothnessReport(layers=per_layer, user_pairs=len(ua), item_pairs=len(ia),
                            concat=stats(np.hstack(used), "concat"))
