"""Higher-order temporal link prediction on continuous-time dynamic graphs."""

from .data import (EventStream, TemporalAdjacencyIndex, build_index,
                   chronological_split, concat_streams, ingest_csv, write_csv)
from .evaluation import (MetricReport, NegativeEdgeSampler, auc_roc,
                         average_precision, evaluate)
from .model import (HistoryView, LinkPredictor, ModelConfig, bce_loss,
                    toy_config, train)
from .sampler import (InteractionList, SamplerConfig, cooccurrence_counts,
                      extend_khop, extract_1hop, extract_neighborhood)
from .synth import generate_synthetic
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "EventStream", "TemporalAdjacencyIndex", "build_index",
    "chronological_split", "concat_streams", "ingest_csv", "write_csv",
    "MetricReport", "NegativeEdgeSampler", "auc_roc", "average_precision",
    "evaluate", "HistoryView", "LinkPredictor", "ModelConfig", "bce_loss",
    "toy_config", "train", "InteractionList", "SamplerConfig",
    "cooccurrence_counts", "extend_khop", "extract_1hop",
    "extract_neighborhood", "generate_synthetic", "Tensor", "__version__",
]
