#!/usr/bin/env python3
"""Why domain-split prompts + alignment help novel classes (one seed).

Three runs on the same two-domain toy dataset:

  (a) undivided prompts, real data only          -- the ablation baseline
  (b) + synthetic cross-entropy with domain-split prompts
  (c) + the cross-domain alignment loss

The generalized protocol scores every test image against all classes, so
run (a) collapses on novel classes it never saw. Synthetic supervision
(b) rebalances the decision boundaries, and alignment (c) makes the
synthetic novel clusters land on the real ones, transferring that
supervision to real test images. The real/synthetic centroid gap tracks
the same story geometrically.

Runs in about a minute; the acceptance suite repeats this over 5 seeds.
"""

import numpy as np

from syncprompt import (
    LossWeights,
    PromptConfig,
    PromptedClassifier,
    ToyDataConfig,
    ToyDualEncoder,
    TrainingData,
    make_two_domain_dataset,
)
from syncprompt.evaluation import (
    _features_of,
    _group_by_class,
    domain_centroid_gap,
    evaluate,
)
from syncprompt.training import TrainConfig, train

SEED = 0
TOY = ToyDataConfig(seed=SEED, noise=0.2, domain_shift=0.8,
                    synth_per_class=24, test_per_class=32)


def centroid_gap(clf, toy):
    real = _features_of(clf, toy.test)
    synth = _features_of(clf, toy.train.synthetic, domain="synthetic")
    return domain_centroid_gap(
        _group_by_class(toy.test, real), _group_by_class(toy.train.synthetic, synth)
    )


def run(alpha, beta, split_prompts, label):
    model = ToyDualEncoder(seed=100 + SEED, dtype=np.float64)
    m = 2 if split_prompts else 0
    clf = PromptedClassifier(
        model, PromptConfig(m1=m, m2=m, n=2, k=4, depth=2),
        mode="sync-clip" if split_prompts else "ivlp", seed=SEED, temperature=20.0,
    )
    toy = make_two_domain_dataset(TOY)
    gap_before = centroid_gap(clf, toy)
    data = toy.train
    if alpha == 0 and beta == 0:
        data = TrainingData(real_train=data.real_train, synthetic=[], val=data.val,
                            class_space=data.class_space)
    cfg = TrainConfig(lr0=0.05, epochs=20, real_batch_size=8, ratio=2,
                      weights=LossWeights(alpha, beta), seed=SEED,
                      precision=64, temperature=20.0)
    train(clf, data, cfg)
    g = evaluate(clf, toy.test, toy.train.class_space, "gzsl")
    z = evaluate(clf, toy.test, toy.train.class_space, "zsl")
    gap_after = centroid_gap(clf, toy)
    print(f"  {label:34s} B={g.b_acc:5.1f}  N={g.n_acc:5.1f}  HM={g.hm:5.1f}   "
          f"(zsl N={z.n_acc:5.1f})   gap {gap_before:.3f} -> {gap_after:.3f}")
    return g


print("=" * 70)
print(f"Two-domain toy dataset: 8 base + 4 novel classes, domain shift "
      f"{TOY.domain_shift}, seed {SEED}")
print("Generalized protocol (every image scored against all 12 classes)")
print("=" * 70)
a = run(0.0, 0.0, False, "(a) undivided, real only")
b = run(1.0, 0.0, True, "(b) + synthetic CE, split prompts")
c = run(1.0, 0.1, True, "(c) + alignment loss")

print()
print(f"novel accuracy: (a) {a.n_acc:.1f} -> (b) {b.n_acc:.1f} -> (c) {c.n_acc:.1f}")
print("synthetic supervision lifts novel classes; alignment transfers it "
      "to real test images and closes the domain gap.")
