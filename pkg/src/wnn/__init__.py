"""Windowed nearest-neighbour digit classification toolkit."""

from .dataset_io import (LabeledSet, SplitSpec, binarize, build_split, load_dataset,
                         load_idx, load_split, orient_emnist, save_idx)
from .augmentation import (AugmentLevel, ExtendedImage, build_ext, build_level,
                           iter_level, level_cardinality, rescale_center, rotate,
                           shift)
from .wnn_core import (ClassifierConfig, DistanceProfile, WindowSpec, classify,
                       classify_batch, classify_nn, global_distance,
                       likelihood_score, local_distance)
from .dwnn_hybrid import (HybridVerdict, dwnn_classify, dwnn_image_distance,
                          hybrid_classify)
from .window_pruning import PruneTrace, errors_excluding, gap, prune, split_validation
from .evaluation import (EvaluationReport, error_overlap, evaluate, op_count,
                         sweep_window_sizes)

__version__ = "0.1.0"
