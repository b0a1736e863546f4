"""Classification probability and the three training losses.

Real images are scored against base-class text embeddings only, synthetic
images against the full base+novel label space, and a triplet term pulls
each synthetic base-class anchor toward a real sample of its own class
while pushing it from a real sample of a different class (L1 distance on
L2-normalized joint-space embeddings). The combined objective is

    total = rce + alpha * sce + beta * fs

Every function here is pure and works on plain NumPy arrays as well as
autodiff Tensors, so the same math serves evaluation and the training
graph. Sums in the written objectives are reduced to batch means by
default so loss magnitudes are batch-size invariant; ``sum_reduction``
restores literal sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .autodiff import Tensor, l2_normalize, log_softmax
from .encoders import Embedding
from .errors import ConfigurationError, InputError, LabelError, NumericError

DEFAULT_TEMPERATURE = 100.0


@dataclass(frozen=True)
class LossWeights:
    """Balance of the synthetic cross-entropy and alignment terms."""

    alpha: float = 0.1
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("loss weights must be non-negative")


@dataclass(frozen=True)
class Triplet:
    """Synthetic anchor with a real same-class positive and real negative."""

    anchor: Embedding
    positive: Embedding
    negative: Embedding
    anchor_class: int
    positive_class: int
    negative_class: int

    def __post_init__(self):
        if self.anchor_class != self.positive_class:
            raise LabelError("triplet positive must share the anchor's class")
        if self.negative_class == self.anchor_class:
            raise LabelError("triplet negative must come from a different class")


class FsLoss(NamedTuple):
    value: float
    skipped: bool


# ---------------------------------------------------------------------------
# array/Tensor generic cores


def _rows(x):
    """Stack Embeddings into a matrix; pass arrays/Tensors through."""
    if isinstance(x, Tensor) or isinstance(x, np.ndarray):
        return x
    vecs = [e.vector if isinstance(e, Embedding) else np.asarray(e) for e in x]
    return np.stack(vecs, axis=0)


def _normalize_rows(x):
    if isinstance(x, Tensor):
        return l2_normalize(x, axis=-1)
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("cannot cosine-normalize a zero vector")
    return x / norms


def cosine_logits(image_rows, text_rows, temperature: float = DEFAULT_TEMPERATURE):
    """Temperature-scaled cosine similarities, images x classes."""
    if temperature <= 0:
        raise ConfigurationError("temperature must be positive")
    img = _normalize_rows(image_rows)
    txt = _normalize_rows(text_rows)
    if isinstance(img, Tensor) or isinstance(txt, Tensor):
        return (img @ txt.swapaxes(-1, -2)) * temperature
    return (img @ np.swapaxes(txt, -1, -2)) * temperature


def cross_entropy_rows(logits, labels, sum_reduction: bool = False):
    """Mean (or sum) negative log-probability of the labelled rows."""
    labels = np.asarray(labels)
    picker = (np.arange(labels.shape[0]), labels)
    if isinstance(logits, Tensor):
        picked = log_softmax(logits, axis=-1)[picker]
        return -(picked.sum() if sum_reduction else picked.mean())
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = logp[picker]
    return float(-(picked.sum() if sum_reduction else picked.mean()))


def alignment_rows(anchor_rows, positive_rows, negative_rows, sum_reduction: bool = False,
                   normalize: bool = True):
    """Triplet alignment with L1 distance, per triplet

        max(d(a, p) - d(a, n), 0) + d(a, p).

    Rows are L2-normalized first (same geometry as the cosine classifier)
    unless the caller already supplies normalized stand-ins.
    """
    if normalize:
        a = _normalize_rows(anchor_rows)
        p = _normalize_rows(positive_rows)
        n = _normalize_rows(negative_rows)
    else:
        a, p, n = anchor_rows, positive_rows, negative_rows
    if isinstance(a, Tensor) or isinstance(p, Tensor) or isinstance(n, Tensor):
        d_ap = (a - p).abs().sum(axis=-1)
        d_an = (a - n).abs().sum(axis=-1)
        per = (d_ap - d_an).maximum(0.0) + d_ap
        return per.sum() if sum_reduction else per.mean()
    d_ap = np.abs(a - p).sum(axis=-1)
    d_an = np.abs(a - n).sum(axis=-1)
    per = np.maximum(d_ap - d_an, 0.0) + d_ap
    return float(per.sum() if sum_reduction else per.mean())


def weighted_total(l_rce, l_sce, l_fs, weights: LossWeights):
    """Combine the three components: rce + alpha*sce + beta*fs."""
    return l_rce + weights.alpha * l_sce + weights.beta * l_fs


# ---------------------------------------------------------------------------
# public single-shot operations on Embeddings


def cosine_sim(u, v) -> float:
    """Cosine similarity in [-1, 1]; zero vectors are rejected."""
    uv = u.vector if isinstance(u, Embedding) else np.asarray(u, dtype=float)
    vv = v.vector if isinstance(v, Embedding) else np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(uv), np.linalg.norm(vv)
    if nu == 0 or nv == 0:
        raise NumericError("cosine similarity undefined for a zero vector")
    return float(np.dot(uv, vv) / (nu * nv))


def class_probabilities(f_img, class_embs: Sequence, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Softmax over temperature-scaled cosine similarities to each class.

    Numerically stabilized by max subtraction; the result sums to one.
    """
    if len(class_embs) == 0:
        raise InputError("class embedding list is empty")
    img = _rows([f_img])
    txt = _rows(class_embs)
    logits = cosine_logits(img, txt, temperature)[0]
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _label_rows(batch, class_ids: Sequence[int], space_name: str):
    index = {cid: i for i, cid in enumerate(class_ids)}
    rows, labels = [], []
    for emb, cid in batch:
        if cid not in index:
            raise LabelError(f"class {cid} outside the {space_name} label space")
        rows.append(emb.vector if isinstance(emb, Embedding) else np.asarray(emb))
        labels.append(index[cid])
    return np.stack(rows, axis=0), np.asarray(labels)


def rce_loss(real_batch, base_class_embs, base_class_ids: Sequence[int],
             temperature: float = DEFAULT_TEMPERATURE, sum_reduction: bool = False) -> float:
    """Cross-entropy of real samples over the base label space only."""
    if len(real_batch) == 0:
        return 0.0
    rows, labels = _label_rows(real_batch, base_class_ids, "base")
    logits = cosine_logits(rows, _rows(base_class_embs), temperature)
    return cross_entropy_rows(logits, labels, sum_reduction)


def sce_loss(synth_batch, all_class_embs, all_class_ids: Sequence[int],
             temperature: float = DEFAULT_TEMPERATURE, sum_reduction: bool = False) -> float:
    """Cross-entropy of synthetic samples over the unified base+novel space."""
    if len(synth_batch) == 0:
        return 0.0
    rows, labels = _label_rows(synth_batch, all_class_ids, "base+novel")
    logits = cosine_logits(rows, _rows(all_class_embs), temperature)
    return cross_entropy_rows(logits, labels, sum_reduction)


def fs_loss(triplets: Sequence[Triplet], sum_reduction: bool = False,
            normalize: bool = True) -> FsLoss:
    """Mean triplet alignment value; empty batches contribute 0, flagged."""
    if len(triplets) == 0:
        return FsLoss(0.0, True)
    a = np.stack([t.anchor.vector for t in triplets])
    p = np.stack([t.positive.vector for t in triplets])
    n = np.stack([t.negative.vector for t in triplets])
    return FsLoss(alignment_rows(a, p, n, sum_reduction, normalize), False)


@dataclass(frozen=True)
class LossBreakdown:
    l_rce: float
    l_sce: float
    l_fs: float
    total: float
    fs_skipped: bool


def total_loss(real_batch, synth_batch, triplets, base_class_embs, all_class_embs,
               base_class_ids, all_class_ids, weights: LossWeights,
               temperature: float = DEFAULT_TEMPERATURE,
               sum_reduction: bool = False) -> LossBreakdown:
    """All three components plus their weighted combination."""
    l_rce = rce_loss(real_batch, base_class_embs, base_class_ids, temperature, sum_reduction)
    l_sce = sce_loss(synth_batch, all_class_embs, all_class_ids, temperature, sum_reduction)
    fs = fs_loss(triplets, sum_reduction)
    return LossBreakdown(
        l_rce=l_rce,
        l_sce=l_sce,
        l_fs=fs.value,
        total=weighted_total(l_rce, l_sce, fs.value, weights),
        fs_skipped=fs.skipped,
    )
