"""Vehicle re-identification retrieval with orientation and camera penalties."""

from .core import (
    Dataset,
    EmbeddingMatrix,
    ItemMeta,
    MetricReport,
    RankingResult,
    ReidError,
    SimilarityMatrix,
    ValidationError,
    validate_dataset,
)
from .evaluation import AblationConfig, ablation_run, build_masks, evaluate, rank
from .features import LrSchedule, cosine_lr, gem_pool, l2_normalize, wsd_bbox
from .losses import LabeledBatch, LossConfig, circle_loss, combined_loss, sample_batch, triplet_loss_batch_hard
from .rerank import RerankConfig, k_reciprocal_rerank
from .retrieval import FusionWeights, hard_camera_mask, similarity_matrix, track_aggregate, voc_fuse
from .synthgen import SynthConfig, generate

__version__ = "0.1.0"
