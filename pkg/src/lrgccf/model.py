"""Embedding state, residual scoring and checkpoint I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .graph import BipartiteGraph, NormalizationMode, compute_layers

CHECKPOINT_MAGIC = "LRGCCF"
CHECKPOINT_VERSION = "v1"
INIT_STD = 0.01


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    K: int = 3
    D: int = 64
    mode: NormalizationMode = NormalizationMode.PAPER
    residual: bool = True
    learn_transform: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        self.mode = NormalizationMode.parse(self.mode)
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.D < 1:
            raise ValueError("D must be >= 1")


@dataclass
class EmbeddingState:
    """Free embeddings E0 plus the propagated layers cached for one graph."""

    E0: np.ndarray
    M: int
    N: int
    K: int = 0
    mode: NormalizationMode = NormalizationMode.PAPER
    transforms: list[np.ndarray] | None = None
    layers: list[np.ndarray] | None = None

    def __post_init__(self):
        self.mode = NormalizationMode.parse(self.mode)

    @property
    def D(self) -> int:
        return int(self.E0.shape[1])

    def refresh(self, graph: BipartiteGraph) -> "EmbeddingState":
        if graph.M != self.M or graph.N != self.N:
            raise ValueError(f"graph is {graph.M}x{graph.N}, embeddings are {self.M}x{self.N}")
        self.layers = compute_layers(graph, self.mode, self.E0, self.K, self.transforms)
        return self

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(
            E0=self.E0.copy(),
            M=self.M,
            N=self.N,
            K=self.K,
            mode=self.mode,
            transforms=None if self.transforms is None else [w.copy() for w in self.transforms],
            layers=None if self.layers is None else [x.copy() for x in self.layers],
        )

    def _require_layers(self) -> list[np.ndarray]:
        if self.layers is None or len(self.layers) != self.K + 1:
            raise RuntimeError("layers not computed; call refresh(graph) first")
        return self.layers


def init_embeddings(M: int, N: int, D: int, seed: int, *, K: int = 0,
                    mode: NormalizationMode | str = NormalizationMode.PAPER,
                    learn_transform: bool = False, dtype="float64") -> EmbeddingState:
    """E0 ~ Normal(0, 0.01^2) i.i.d. from a seeded generator. Transforms start at the identity."""
    if D < 1:
        raise ValueError("D must be >= 1")
    rng = np.random.default_rng(seed)
    E0 = rng.normal(0.0, INIT_STD, size=(M + N, D)).astype(dtype, copy=False)
    transforms = [np.eye(D, dtype=dtype) for _ in range(K)] if learn_transform else None
    return EmbeddingState(E0=E0, M=M, N=N, K=K, mode=NormalizationMode.parse(mode), transforms=transforms)


def from_config(M: int, N: int, config: ModelConfig, seed: int) -> EmbeddingState:
    return init_embeddings(M, N, config.D, seed, K=config.K, mode=config.mode,
                           learn_transform=config.learn_transform, dtype=config.dtype)


def _check_user(state: EmbeddingState, u: int) -> None:
    if not 0 <= u < state.M:
        raise IndexError(f"user index {u} out of range [0, {state.M})")


def _check_item(state: EmbeddingState, i: int) -> None:
    if not 0 <= i < state.N:
        raise IndexError(f"item index {i} out of range [0, {state.N})")


def score(state: EmbeddingState, u: int, i: int, residual: bool = True) -> float:
    _check_user(state, u)
    _check_item(state, i)
    layers = state._require_layers()
    row = state.M + i
    if not residual:
        return float(layers[-1][u] @ layers[-1][row])
    return float(sum(layer[u] @ layer[row] for layer in layers))


def final_embedding(state: EmbeddingState, node: int) -> np.ndarray:
    """e^0 || e^1 || ... || e^K for a node row (users first, then items)."""
    if not 0 <= node < state.M + state.N:
        raise IndexError(f"node index {node} out of range [0, {state.M + state.N})")
    return np.concatenate([layer[node] for layer in state._require_layers()])


def stacked_embeddings(state: EmbeddingState, residual: bool = True) -> np.ndarray:
    """(M+N) x (K+1)D concatenation when residual, else the last layer alone."""
    layers = state._require_layers()
    return np.hstack(layers) if residual else layers[-1]


def score_all_items(state: EmbeddingState, u: int, residual: bool = True) -> np.ndarray:
    _check_user(state, u)
    Z = stacked_embeddings(state, residual)
    return Z[state.M:] @ Z[u]


def score_matrix(state: EmbeddingState, users: np.ndarray, residual: bool = True) -> np.ndarray:
    Z = stacked_embeddings(state, residual)
    return Z[np.asarray(users)] @ Z[state.M:].T


def save_checkpoint(path: str | os.PathLike, state: EmbeddingState, residual: bool) -> None:
    """Header line, then E0 as little-endian float64 rows; learned transforms follow when present."""
    tokens = [CHECKPOINT_MAGIC, CHECKPOINT_VERSION, str(state.M), str(state.N), str(state.D),
              str(state.K), state.mode.value, "on" if residual else "off"]
    if state.transforms is not None:
        tokens.append("transform")
    payload = [np.ascontiguousarray(state.E0, dtype="<f8").tobytes()]
    for w in state.transforms or ():
        payload.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write((" ".join(tokens) + "\n").encode("ascii"))
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path: str | os.PathLike) -> tuple[EmbeddingState, bool]:
    """Returns (state without layers, residual flag)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError("checkpoint has no header line")
    tokens = blob[:nl].decode("ascii", errors="replace").split()
    if len(tokens) not in (8, 9) or tokens[0] != CHECKPOINT_MAGIC or tokens[1] != CHECKPOINT_VERSION:
        raise CheckpointError(f"bad checkpoint header: {' '.join(tokens)!r}")
    try:
        M, N, D, K = (int(t) for t in tokens[2:6])
        mode = NormalizationMode.parse(tokens[6])
    except ValueError as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    if tokens[7] not in ("on", "off"):
        raise CheckpointError(f"bad residual flag {tokens[7]!r}")
    has_w = len(tokens) == 9
    if has_w and tokens[8] != "transform":
        raise CheckpointError(f"unknown header field {tokens[8]!r}")
    body = blob[nl + 1:]
    expected = 8 * ((M + N) * D + (K * D * D if has_w else 0))
    if len(body) != expected:
        raise CheckpointError(f"checkpoint body is {len(body)} bytes, expected {expected}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    E0 = values[:(M + N) * D].reshape(M + N, D).copy()
    transforms = None
    if has_w:
        rest = values[(M + N) * D:]
        transforms = [rest[k * D * D:(k + 1) * D * D].reshape(D, D).copy() for k in range(K)]
    return EmbeddingState(E0=E0, M=M, N=N, K=K, mode=mode, transforms=transforms), tokens[7] == "on"
