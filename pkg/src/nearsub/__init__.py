"""nearsub: curate the subset of a large weakly-labeled corpus that sits
nearest to a real-world reference corpus in embedding space."""

from .dataset import Corpus, CorpusManifest, Sample, dedup, jaccard, load_corpus, save_corpus, tokenize
from .embed import EmbedderConfig, EmbeddingMatrix, embed_corpus, load_embeddings, mock_embed, save_embeddings
from .evalharness import EvalResult, ProbeConfig, SplitSpec, evaluate, run_regime_grid, synth_benchmark, train_probe
from .knn import DistanceRecord, NeighborIndex, build_index, euclidean, nearest, recall_at_1
from .report import Histogram, Projection2D, histogram, pca_project, percentile_table
from .select import SelectionManifest, SubsetSpec, emit_subset, random_subset, select_subset

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusManifest",
    "DistanceRecord",
    "EmbedderConfig",
    "EmbeddingMatrix",
    "EvalResult",
    "Histogram",
    "NeighborIndex",
    "ProbeConfig",
    "Projection2D",
    "Sample",
    "SelectionManifest",
    "SplitSpec",
    "SubsetSpec",
    "build_index",
    "dedup",
    "embed_corpus",
    "emit_subset",
    "euclidean",
    "evaluate",
    "histogram",
    "jaccard",
    "load_corpus",
    "load_embeddings",
    "mock_embed",
    "nearest",
    "pca_project",
    "percentile_table",
    "random_subset",
    "recall_at_1",
    "run_regime_grid",
    "save_corpus",
    "save_embeddings",
    "select_subset",
    "synth_benchmark",
    "tokenize",
    "train_probe",
]
