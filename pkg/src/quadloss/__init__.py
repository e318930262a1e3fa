"""Metric learning with quadruplets ranked by label disagreement."""

__version__ = "0.1.0"

from .core import (ID_DIM, DimensionError, LabelVector, Sample, pairwise_dissimilarity,
                   pairwise_squared_distances, semantic_dissimilarity, squared_distance)
from .data import (Dataset, DatasetFormatError, DatasetHeader, SyntheticSpec, generate_synthetic,
                   load_dataset, save_dataset, split)
from .evaluation import (GalleryProbeSplit, ProtocolError, bootstrap_eval, cmc_curve,
                         dir_at_rank1, knn_soft_labels, labelling_error, map_score,
                         semantic_retrieval, verification_roc)
from .losses import (LossConfig, QuadrupletInstance, batch_loss, quadruplet_gradients,
                     quadruplet_loss_and_grad, quadruplet_term)
from .mining import Batch, ConfigError, MiniBatch, sample_batch, sample_minibatch, sample_triplets
from .network import (NetworkConfig, NetworkParams, TrainConfig, TrainingError, backward,
                      forward, init_params, load_checkpoint, save_checkpoint, sgd_step, train)

__all__ = [
    "ID_DIM", "DimensionError", "LabelVector", "Sample", "pairwise_dissimilarity",
    "pairwise_squared_distances", "semantic_dissimilarity", "squared_distance",
    "Dataset", "DatasetFormatError", "DatasetHeader", "SyntheticSpec", "generate_synthetic",
    "load_dataset", "save_dataset", "split",
    "GalleryProbeSplit", "ProtocolError", "bootstrap_eval", "cmc_curve", "dir_at_rank1",
    "knn_soft_labels", "labelling_error", "map_score", "semantic_retrieval", "verification_roc",
    "LossConfig", "QuadrupletInstance", "batch_loss", "quadruplet_gradients",
    "quadruplet_loss_and_grad", "quadruplet_term",
    "Batch", "ConfigError", "MiniBatch", "sample_batch", "sample_minibatch", "sample_triplets",
    "NetworkConfig", "NetworkParams", "TrainConfig", "TrainingError", "backward", "forward",
    "init_params", "load_checkpoint", "save_checkpoint", "sgd_step", "train",
]
