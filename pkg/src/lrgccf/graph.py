"""User-item bipartite graph and the linear propagation operator.

Node layout everywhere: rows ``0..M-1`` are users, rows ``M..M+N-1`` are items.
Degrees count the self-loop, so ``d = |neighbors| + 1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class NormalizationMode(str, enum.Enum):
    # edge u<-j weighted 1/(d_j*d_u), self 1/d_u
    PAPER = "paper"
    # edge u<-j weighted 1/sqrt(d_j*d_u), self 1/d_u  (D^-1/2 (A+I) D^-1/2)
    SQRT = "sqrt"

    @classmethod
    def parse(cls, value: "NormalizationMode | str") -> "NormalizationMode":
        if isinstance(value, cls):
            return value
        aliases = {"paper": cls.PAPER, "papernode": cls.PAPER, "paperpernode": cls.PAPER,
                   "sqrt": cls.SQRT, "symmetric": cls.SQRT, "symmetricsqrt": cls.SQRT}
        try:
            return aliases[str(value).lower().replace("_", "").replace("-", "")]
        except KeyError:
            raise ValueError(f"unknown normalization mode {value!r}") from None


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    M: int
    N: int
    u2i_indptr: np.ndarray
    u2i_indices: np.ndarray
    i2u_indptr: np.ndarray
    i2u_indices: np.ndarray
    d_user: np.ndarray
    d_item: np.ndarray
    _ops: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.M + self.N

    @property
    def n_edges(self) -> int:
        return int(self.u2i_indices.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        """Self-loop degrees of all M+N nodes."""
        return np.concatenate([self.d_user, self.d_item])

    def items_of(self, u: int) -> np.ndarray:
        return self.u2i_indices[self.u2i_indptr[u]:self.u2i_indptr[u + 1]]

    def users_of(self, i: int) -> np.ndarray:
        return self.i2u_indices[self.i2u_indptr[i]:self.i2u_indptr[i + 1]]

    def operator(self, mode: NormalizationMode | str) -> sp.csr_matrix:
        """The (M+N)x(M+N) propagation matrix P for ``mode`` (cached)."""
        mode = NormalizationMode.parse(mode)
        key = ("P", mode)
        if key not in self._ops:
            self._ops[key] = _assemble(self, mode)
        return self._ops[key]

    def operator_t(self, mode: NormalizationMode | str) -> sp.csr_matrix:
        mode = NormalizationMode.parse(mode)
        key = ("PT", mode)
        if key not in self._ops:
            pt = self.operator(mode).T.tocsr()
            pt.sort_indices()
            self._ops[key] = pt
        return self._ops[key]


def _assemble(g: BipartiteGraph, mode: NormalizationMode) -> sp.csr_matrix:
    M, N = g.M, g.N
    users = np.repeat(np.arange(M), np.diff(g.u2i_indptr))
    items = g.u2i_indices
    du = g.d_user[users].astype(np.float64)
    di = g.d_item[items].astype(np.float64)
    # both coefficient rules are symmetric in (u, i), so one weight serves both directions
    w = 1.0 / (di * du) if mode is NormalizationMode.PAPER else 1.0 / np.sqrt(di * du)
    diag = 1.0 / g.degrees.astype(np.float64)
    nodes = np.arange(M + N)
    rows = np.concatenate([nodes, users, M + items])
    cols = np.concatenate([nodes, M + items, users])
    vals = np.concatenate([diag, w, w])
    P = sp.csr_matrix((vals, (rows, cols)), shape=(M + N, M + N))
    P.sort_indices()
    return P


def from_edges(M: int, N: int, edges) -> BipartiteGraph:
    """Build the graph from (user, item) index pairs; duplicates collapse."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges[:, 0].min() < 0 or edges[:, 0].max() >= M
                       or edges[:, 1].min() < 0 or edges[:, 1].max() >= N):
        raise ValueError("edge index out of range")
    R = sp.csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(M, N))
    R.sum_duplicates()
    R.sort_indices()
    Rt = R.T.tocsr()
    Rt.sort_indices()
    return BipartiteGraph(
        M=M,
        N=N,
        u2i_indptr=R.indptr.astype(np.int64),
        u2i_indices=R.indices.astype(np.int64),
        i2u_indptr=Rt.indptr.astype(np.int64),
        i2u_indices=Rt.indices.astype(np.int64),
        d_user=np.diff(R.indptr).astype(np.int64) + 1,
        d_item=np.diff(Rt.indptr).astype(np.int64) + 1,
    )


def build_graph(dataset) -> BipartiteGraph:
    """Graph over the training records of an ``IndexedDataset``."""
    dataset.validate()
    return from_edges(dataset.M, dataset.N, dataset.train_array())


def _check_shape(graph: BipartiteGraph, X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[0] != graph.n_nodes:
        raise ValueError(f"expected a ({graph.n_nodes}, D) matrix, got shape {X.shape}")


def propagate(graph: BipartiteGraph, mode: NormalizationMode | str, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    _check_shape(graph, X)
    return np.asarray(graph.operator(mode) @ X)


def propagate_transpose(graph: BipartiteGraph, mode: NormalizationMode | str, G: np.ndarray) -> np.ndarray:
    """Apply P^T via the explicitly transposed operator."""
    G = np.asarray(G)
    _check_shape(graph, G)
    return np.asarray(graph.operator_t(mode) @ G)


def compute_layers(
    graph: BipartiteGraph,
    mode: NormalizationMode | str,
    E0: np.ndarray,
    K: int,
    transforms: list[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """[E^0, ..., E^K] with E^{k+1} = P E^k (W^k when ``transforms`` is given)."""
    if K < 0:
        raise ValueError("K must be >= 0")
    if transforms is not None and len(transforms) != K:
        raise ValueError(f"expected {K} transform matrices, got {len(transforms)}")
    layers = [E0]
    for k in range(K):
        nxt = propagate(graph, mode, layers[-1])
        if transforms is not None:
            nxt = nxt @ transforms[k]
        layers.append(nxt)
    return layers


def degree_histogram(degrees: np.ndarray) -> list[tuple[int, int]]:
    values, counts = np.unique(degrees, return_counts=True)
    return [(int(v), int(c)) for v, c in zip(values, counts)]
