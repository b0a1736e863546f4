"""Optimization loop: SGD with momentum and cosine-annealed learning rate
over the prompt parameters only; the backbone never moves.

Each step wraps the canonical parameter arrays into fresh autodiff
leaves, builds the three-part objective on one mixed batch, backprops,
and applies the update in place. Batches, triplet mining and the
schedule are all pure functions of (seed, step), so a checkpoint resume
replays the exact trajectory of an uninterrupted run.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import objectives
from .archive import load_archive, save_archive
from .autodiff import Tensor, no_grad
from .data import REAL, SYNTHETIC, MixedBatchSampler, TrainingData
from .encoders import freeze_check
from .errors import ConfigurationError, TrainingDiverged
from .objectives import LossWeights
from .pipeline import PromptedClassifier
from .prompts import PromptBank, PromptConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and batch composition settings."""

    lr0: float = 2.5e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 20
    real_batch_size: int = 8
    ratio: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    precision: int = 32
    temperature: float = objectives.DEFAULT_TEMPERATURE
    sum_reduction: bool = False
    warmup_steps: int = 0
    grad_clip: float | None = None
    triplet_seed: int | None = None

    def __post_init__(self):
        if self.lr0 < 0:
            raise ConfigurationError("lr0 must be >= 0")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.ratio < 1:
            raise ConfigurationError("ratio must be >= 1")
        if self.precision not in (32, 64):
            raise ConfigurationError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


def cosine_annealed_lr(lr0: float, step: int, total_steps: int) -> float:
    """Half-cosine decay from lr0 at step 0 to 0 at total_steps."""
    if total_steps <= 0:
        raise ConfigurationError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigurationError(f"step {step} outside [0, {total_steps}]")
    return float(lr0 * (1.0 + np.cos(np.pi * step / total_steps)) / 2.0)


def _schedule(config: TrainConfig, step: int, total_steps: int) -> float:
    if step < config.warmup_steps:
        return config.lr0 * (step + 1) / config.warmup_steps
    return cosine_annealed_lr(
        config.lr0, step - config.warmup_steps, max(1, total_steps - config.warmup_steps)
    )


@dataclass
class TrainResult:
    bank: PromptBank
    log: list[dict]
    best_val_acc: float | None
    final_checkpoint: Path | None
    best_checkpoint: Path | None
    backbone_frozen: bool


def step_losses(classifier: PromptedClassifier, params: dict, batch,
                class_space, config: TrainConfig):
    """Build the loss graph for one mixed batch; returns Tensors.

    Real samples are scored over base classes only, synthetic samples
    over the full space, and mined triplets align the two domains.
    """
    base_ids = list(class_space.base)
    all_ids = list(class_space.all_classes)
    base_index = {c: i for i, c in enumerate(base_ids)}
    all_index = {c: i for i, c in enumerate(all_ids)}

    zero = Tensor(np.asarray(0.0, dtype=classifier.model.dtype))
    real_feats = synth_feats = None

    if classifier.mode == "cocoop":
        l_rce = zero
        if batch.real:
            logits = classifier.logits(
                classifier.patch_tokens(batch.real), REAL, base_ids, class_space, params
            )
            labels = [base_index[ex.class_id] for ex in batch.real]
            l_rce = objectives.cross_entropy_rows(logits, labels, config.sum_reduction)
        l_sce = zero
        if batch.synthetic:
            logits = classifier.logits(
                classifier.patch_tokens(batch.synthetic), SYNTHETIC, all_ids, class_space, params
            )
            labels = [all_index[ex.class_id] for ex in batch.synthetic]
            l_sce = objectives.cross_entropy_rows(logits, labels, config.sum_reduction)
        real_feats, synth_feats = _cocoop_domain_feats(classifier, params, batch, config)
    else:
        txt_all = classifier.class_features(all_ids, class_space, params)
        txt_base = txt_all[: len(base_ids)]
        l_rce = zero
        if batch.real:
            real_feats = classifier.image_features(
                classifier.patch_tokens(batch.real), REAL, params
            )
            labels = [base_index[ex.class_id] for ex in batch.real]
            logits = objectives.cosine_logits(real_feats, txt_base, config.temperature)
            l_rce = objectives.cross_entropy_rows(logits, labels, config.sum_reduction)
        l_sce = zero
        if batch.synthetic:
            synth_feats = classifier.image_features(
                classifier.patch_tokens(batch.synthetic), SYNTHETIC, params
            )
            labels = [all_index[ex.class_id] for ex in batch.synthetic]
            logits = objectives.cosine_logits(synth_feats, txt_all, config.temperature)
            l_sce = objectives.cross_entropy_rows(logits, labels, config.sum_reduction)

    # With beta = 0 the alignment term is skipped outright, which keeps
    # such runs bit-independent of the triplet-mining stream.
    l_fs = zero
    if (
        config.weights.beta != 0
        and batch.triplets
        and real_feats is not None
        and synth_feats is not None
    ):
        a = np.asarray([t.anchor for t in batch.triplets])
        p = np.asarray([t.positive for t in batch.triplets])
        n = np.asarray([t.negative for t in batch.triplets])
        l_fs = objectives.alignment_rows(
            synth_feats[a], real_feats[p], real_feats[n], config.sum_reduction
        )
    return l_rce, l_sce, l_fs


def _cocoop_domain_feats(classifier, params, batch, config):
    if config.weights.beta == 0:
        return None, None
    real_feats = synth_feats = None
    if batch.real:
        with no_grad():
            real_feats = classifier.image_features(
                classifier.patch_tokens(batch.real), REAL, params
            )
    if batch.synthetic:
        with no_grad():
            synth_feats = classifier.image_features(
                classifier.patch_tokens(batch.synthetic), SYNTHETIC, params
            )
    return real_feats, synth_feats


def train(classifier: PromptedClassifier, data: TrainingData, config: TrainConfig,
          out_dir=None, resume_from=None, stop_after_steps: int | None = None) -> TrainResult:
    """Run the full optimization; returns the trained bank and step log.

    Writes final and best-validation checkpoints under ``out_dir`` when
    given. A NaN/Inf loss aborts with a snapshot of the offending batch
    indices. ``stop_after_steps`` interrupts the schedule early (the
    checkpoint then records the true step so a resume replays the exact
    remaining trajectory).
    """
    weights = config.weights
    if not data.synthetic and (weights.alpha > 0 or weights.beta > 0):
        raise ConfigurationError(
            "synthetic set is empty but alpha/beta give synthetic terms weight"
        )
    sampler = MixedBatchSampler(
        data.real_train,
        data.synthetic,
        config.real_batch_size,
        config.ratio,
        config.seed,
        data.class_space,
        triplet_seed=config.triplet_seed,
    )
    total_steps = config.epochs * sampler.steps_per_epoch

    params = classifier.parameters()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    start_step = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from, model=classifier.model)
        if ckpt.meta.get("mode") != classifier.mode:
            raise ConfigurationError(
                f"checkpoint mode {ckpt.meta.get('mode')!r} != classifier mode {classifier.mode!r}"
            )
        if ckpt.meta.get("prompt_config") != asdict(classifier.prompt_config):
            raise ConfigurationError("checkpoint prompt configuration does not match")
        classifier.set_parameters(ckpt.arrays)
        velocity = {
            k: ckpt.optimizer_state.get(k, np.zeros_like(v))
            for k, v in classifier.parameters().items()
        }
        start_step = ckpt.step

    records: list[dict] = []
    best_val = None
    best_arrays = None
    out_dir = Path(out_dir) if out_dir is not None else None

    end_step = total_steps if stop_after_steps is None else min(
        total_steps, start_step + stop_after_steps
    )
    for step in range(start_step, end_step):
        batch = sampler.batch_at(step)
        leaves = classifier.wrap_parameters()
        l_rce, l_sce, l_fs = step_losses(classifier, leaves, batch, data.class_space, config)
        total = objectives.weighted_total(l_rce, l_sce, l_fs, weights)
        total_value = float(total.data)
        if not np.isfinite(total_value):
            raise TrainingDiverged(step, batch.real_indices, batch.synth_indices)

        lr = _schedule(config, step, total_steps)
        if isinstance(total, Tensor) and total.requires_grad:
            total.backward()
        arrays = classifier.parameters()
        updated = {}
        for name, p in arrays.items():
            g = leaves[name].grad
            g = np.zeros_like(p) if g is None else g.astype(p.dtype)
            if config.grad_clip is not None:
                norm = float(np.linalg.norm(g))
                if norm > config.grad_clip:
                    g = g * (config.grad_clip / norm)
            g = g + config.weight_decay * p
            velocity[name] = config.momentum * velocity[name] + g
            updated[name] = p - lr * velocity[name]
            if not np.all(np.isfinite(updated[name])):
                raise TrainingDiverged(step, batch.real_indices, batch.synth_indices)
        classifier.set_parameters(updated)

        records.append(
            {
                "step": step,
                "l_rce": float(l_rce.data) if isinstance(l_rce, Tensor) else float(l_rce),
                "l_sce": float(l_sce.data) if isinstance(l_sce, Tensor) else float(l_sce),
                "l_fs": float(l_fs.data) if isinstance(l_fs, Tensor) else float(l_fs),
                "total": total_value,
                "lr": lr,
                "skipped_triplets": batch.skipped_triplets,
            }
        )

        end_of_epoch = (step + 1) % sampler.steps_per_epoch == 0
        if end_of_epoch and data.val:
            acc = _base_val_accuracy(classifier, data)
            if best_val is None or acc > best_val:
                best_val = acc
                best_arrays = {k: v.copy() for k, v in classifier.parameters().items()}

    final_path = best_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        final_path = out_dir / "final.ckpt"
        save_checkpoint(classifier, config, end_step, final_path, optimizer_state=velocity)
        best_path = out_dir / "best.ckpt"
        if best_arrays is not None:
            snapshot = {k: v.copy() for k, v in classifier.parameters().items()}
            classifier.set_parameters(best_arrays)
            save_checkpoint(classifier, config, end_step, best_path)
            classifier.set_parameters(snapshot)
        else:
            save_checkpoint(classifier, config, end_step, best_path)
        with open(out_dir / "train_log.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")

    classifier.bank.validate()
    return TrainResult(
        bank=classifier.bank,
        log=records,
        best_val_acc=best_val,
        final_checkpoint=final_path,
        best_checkpoint=best_path,
        backbone_frozen=freeze_check(classifier.model),
    )


def _base_val_accuracy(classifier: PromptedClassifier, data: TrainingData) -> float:
    base_ids = list(data.class_space.base)
    val = [ex for ex in data.val if ex.class_id in set(base_ids)]
    if not val:
        return 0.0
    preds = classifier.predict_rows(
        classifier.patch_tokens(val), base_ids, data.class_space
    )
    truth = np.asarray([ex.class_id for ex in val])
    return float(np.mean(preds == truth) * 100.0)


# ---------------------------------------------------------------------------
# checkpointing


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    optimizer_state: dict[str, np.ndarray]
    step: int
    meta: dict

    @property
    def bank(self) -> PromptBank:
        cfg = PromptConfig(**self.meta["prompt_config"])
        bank = PromptBank(config=cfg)
        for name, layers in bank.groups().items():
            for l in range(cfg.depth):
                layers.append(self.arrays[f"{name}.layer{l:02d}"])
        bank.validate()
        return bank


def save_checkpoint(classifier: PromptedClassifier, config: TrainConfig, step: int,
                    path, optimizer_state: dict | None = None) -> None:
    """Archive the prompt arrays (+ extras and optimizer state) with
    enough provenance to refuse loading against the wrong encoders."""
    arrays = dict(classifier.parameters())
    if optimizer_state:
        arrays.update({f"opt.{k}": v for k, v in optimizer_state.items()})
    cfg = asdict(config)
    cfg["weights"] = asdict(config.weights)
    meta = {
        "kind": "prompt-checkpoint",
        "step": step,
        "mode": classifier.mode,
        "prompt_config": asdict(classifier.prompt_config),
        "train_config": cfg,
        "encoder": {
            "visual_spec": classifier.model.visual_spec.to_dict(),
            "text_spec": classifier.model.text_spec.to_dict(),
            "seed": classifier.model.seed,
            "dtype": classifier.model.dtype.str,
        },
    }
    save_archive(path, arrays, meta)


def load_checkpoint(path, model=None) -> Checkpoint:
    """Read a checkpoint; with ``model`` given, refuse mismatched encoders."""
    arrays, meta = load_archive(path)
    if meta.get("kind") != "prompt-checkpoint":
        raise ConfigurationError(f"{path} is not a prompt checkpoint")
    if model is not None:
        stored = meta["encoder"]
        current = {
            "visual_spec": model.visual_spec.to_dict(),
            "text_spec": model.text_spec.to_dict(),
            "seed": model.seed,
            "dtype": model.dtype.str,
        }
        if stored != current:
            raise ConfigurationError(
                "checkpoint was written against different encoders: "
                f"stored {stored}, bound {current}"
            )
    optimizer_state = {
        k[len("opt.") :]: v for k, v in arrays.items() if k.startswith("opt.")
    }
    plain = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    return Checkpoint(
        arrays=plain, optimizer_state=optimizer_state, step=meta["step"], meta=meta
    )
