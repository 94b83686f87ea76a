"""Speaker diarization with ClusterGAN latent embeddings."""

__version__ = "0.1.0"

from .clustergan import ClusterGanConfig, ClusterGanModel, encode, train
from .clustering import estimate_num_speakers, kmeans
from .pipeline import (
    DiarizeConfig,
    build_timeline,
    diarize,
    fuse,
    generate_synthetic_corpus,
    purity,
)
from .scoring import read_rttm, score, write_rttm

__all__ = [
    "ClusterGanConfig",
    "ClusterGanModel",
    "DiarizeConfig",
    "build_timeline",
    "diarize",
    "encode",
    "estimate_num_speakers",
    "fuse",
    "generate_synthetic_corpus",
    "kmeans",
    "purity",
    "read_rttm",
    "score",
    "train",
    "write_rttm",
]
