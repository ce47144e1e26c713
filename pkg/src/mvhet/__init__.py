"""Multi-view heterogeneous graph representation learning with metapath
ego-graph encoders and autoencoder-based view fusion."""

__version__ = "0.1.0"

from .hetgraph import Direction, HeteroGraph, Schema, build_graph
from .model import ModelConfig, MVHetGNN
from .trainer import TrainConfig, TrainReport, train
from .views import Metapath, ViewPlan, compile_view, parse_metapath, validate_metapath

__all__ = [
    "Direction", "HeteroGraph", "Schema", "build_graph",
    "Metapath", "ViewPlan", "compile_view", "parse_metapath", "validate_metapath",
    "ModelConfig", "MVHetGNN", "TrainConfig", "TrainReport", "train",
]
