"""Multi-task learning-to-rank for multimodal review helpfulness.

Cross-modal interaction encoders, a fused global scoring head, and
self-supervised pseudo-labels for five interaction subtasks, all on plain
numpy with a small reverse-mode autodiff engine.
"""

from .autograd import Node
from .dataset import (
    DataError,
    ProductRecord,
    ReviewRecord,
    batch_by_product,
    load_manifest,
    make_synthetic,
    read_tensor,
    write_dataset,
    write_tensor,
)
from .metrics import EvalReport, RankedList, average_precision, evaluate, ndcg_at
from .model import SUBTASKS, FeatureBundle, InteractionKind, ModelDims, ModelParams, forward
from .objectives import ranking_loss, subtask_loss, total_loss, uncertainty_combine
from .ssplabel import AnchorState, PseudoLabelStore, SspConfig, ewma_update, raw_pseudo_label
from .train import Adam, TrainConfig, Trainer, run_training

__version__ = "0.1.0"
