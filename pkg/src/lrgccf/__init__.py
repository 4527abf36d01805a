"""Linear residual graph convolutional collaborative filtering."""

from .data import IndexedDataset, InteractionRecord, k_core_filter, parse_interactions, read_interactions, split_dataset
from .evaluation import evaluate, smoothness
from .graph import BipartiteGraph, NormalizationMode, build_graph, compute_layers, propagate, propagate_transpose
from .model import EmbeddingState, ModelConfig, init_embeddings, score, score_all_items
from .trainer import TrainConfig, bpr_loss, gradient, sample_epoch, train

__version__ = "0.1.0"
