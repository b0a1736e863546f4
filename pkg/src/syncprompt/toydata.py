"""Generated two-domain toy dataset for desk-scale mechanism studies.

Each class is a Gaussian cluster directly in patch-token space; the
synthetic domain is the same set of clusters displaced by one global
shift, mimicking the systematic offset between generated and real
imagery. Real training data exists for base classes only; synthetic data
covers base and novel classes; real novel examples appear only in the
test split.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import REAL, SYNTHETIC, ClassSpace, LabeledExample, TrainingData


@dataclass(frozen=True)
class ToyDataConfig:
    n_base: int = 8
    n_novel: int = 4
    patch_count: int = 9
    embed_dim: int = 32
    shots: int = 16
    synth_per_class: int = 16
    val_per_class: int = 4
    test_per_class: int = 8
    noise: float = 0.25
    domain_shift: float = 0.8
    seed: int = 0


class ToyDataset(NamedTuple):
    train: TrainingData
    test: list[LabeledExample]
    shift: np.ndarray


def make_two_domain_dataset(config: ToyDataConfig = ToyDataConfig()) -> ToyDataset:
    """Sample the clustered two-domain dataset described above."""
    c = config
    rng = np.random.default_rng([c.seed, 101])
    n_classes = c.n_base + c.n_novel
    centers = rng.normal(0.0, 1.0, (n_classes, c.patch_count, c.embed_dim))
    shift = rng.normal(0.0, c.domain_shift, (c.patch_count, c.embed_dim))

    names = {i: f"class {i:02d}" for i in range(n_classes)}
    space = ClassSpace(
        base=tuple(range(c.n_base)),
        novel=tuple(range(c.n_base, n_classes)),
        names=names,
        template="a photo of a [CLS].",
    )

    def draw(cid: int, count: int, domain: str, tag: str) -> list[LabeledExample]:
        offset = shift if domain == SYNTHETIC else 0.0
        out = []
        for j in range(count):
            tokens = centers[cid] + offset + rng.normal(0.0, c.noise, centers[cid].shape)
            out.append(
                LabeledExample(
                    content=tokens, class_id=cid, domain=domain, uid=f"{tag}/{cid:02d}/{j:03d}"
                )
            )
        return out

    real_train, synthetic, val, test = [], [], [], []
    for cid in range(n_classes):
        if cid in space.base:
            real_train.extend(draw(cid, c.shots, REAL, "train"))
            val.extend(draw(cid, c.val_per_class, REAL, "val"))
        synthetic.extend(draw(cid, c.synth_per_class, SYNTHETIC, "synth"))
        test.extend(draw(cid, c.test_per_class, REAL, "test"))

    bundle = TrainingData(
        real_train=real_train, synthetic=synthetic, val=val, class_space=space
    )
    return ToyDataset(train=bundle, test=test, shift=shift)
