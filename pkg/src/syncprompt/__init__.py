"""Prompt tuning for frozen dual-encoder models with domain-split visual
prompts, shared prompts, and synthetic/real feature-space alignment."""

from .data import (
    ClassSpace,
    DatasetSplits,
    LabeledExample,
    MixedBatch,
    MixedBatchSampler,
    TrainingData,
    few_shot_sample,
    ingest_synthetic,
    load_dataset,
    mine_triplets,
    mixed_batch_sampler,
)
from .encoders import (
    DualEncoderBackbone,
    Embedding,
    EncoderSpec,
    ToyDualEncoder,
    freeze_check,
)
from .evaluation import (
    EvalReport,
    domain_centroid_gap,
    evaluate,
    evaluate_transfer,
    export_embeddings,
    fid,
    harmonic_mean,
    predict,
)
from .objectives import (
    LossWeights,
    Triplet,
    class_probabilities,
    cosine_sim,
    fs_loss,
    rce_loss,
    sce_loss,
    total_loss,
    weighted_total,
)
from .pipeline import PromptedClassifier
from .prompts import (
    PromptBank,
    PromptConfig,
    Segment,
    TokenSequence,
    assemble_ivlp_visual_input,
    assemble_text_input,
    assemble_visual_input,
    cocoop_condition,
    init_prompt_bank,
    maple_project,
)
from .toydata import ToyDataConfig, make_two_domain_dataset
from .training import (
    TrainConfig,
    TrainResult,
    cosine_annealed_lr,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ClassSpace",
    "DatasetSplits",
    "DualEncoderBackbone",
    "Embedding",
    "EncoderSpec",
    "EvalReport",
    "LabeledExample",
    "LossWeights",
    "MixedBatch",
    "MixedBatchSampler",
    "PromptBank",
    "PromptConfig",
    "PromptedClassifier",
    "Segment",
    "TokenSequence",
    "ToyDataConfig",
    "ToyDualEncoder",
    "TrainConfig",
    "TrainResult",
    "TrainingData",
    "Triplet",
    "assemble_ivlp_visual_input",
    "assemble_text_input",
    "assemble_visual_input",
    "class_probabilities",
    "cocoop_condition",
    "cosine_annealed_lr",
    "cosine_sim",
    "domain_centroid_gap",
    "evaluate",
    "evaluate_transfer",
    "export_embeddings",
    "few_shot_sample",
    "fid",
    "freeze_check",
    "fs_loss",
    "harmonic_mean",
    "ingest_synthetic",
    "init_prompt_bank",
    "load_checkpoint",
    "load_dataset",
    "make_two_domain_dataset",
    "maple_project",
    "mine_triplets",
    "mixed_batch_sampler",
    "predict",
    "rce_loss",
    "save_checkpoint",
    "sce_loss",
    "total_loss",
    "train",
    "weighted_total",
]
