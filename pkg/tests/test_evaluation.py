"""Protocols, metric arithmetic, Fréchet distance, diagnostics, export."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syncprompt import (
    LossWeights,
    PromptConfig,
    PromptedClassifier,
    ToyDataConfig,
    ToyDualEncoder,
    make_two_domain_dataset,
)
from syncprompt.errors import InputError
from syncprompt.evaluation import (
    EvalReport,
    domain_centroid_gap,
    evaluate,
    evaluate_transfer,
    export_embeddings,
    fid,
    harmonic_mean,
    predict,
)

RNG = np.random.default_rng(5)


class TestHarmonicMean:
    def test_published_average_pair(self):
        assert harmonic_mean(62.2, 65.4) == pytest.approx(63.8, abs=0.05)

    def test_published_ablation_pair(self):
        assert harmonic_mean(77.84, 71.04) == pytest.approx(74.28, abs=0.01)

    def test_equal_inputs_fixed_point(self):
        assert harmonic_mean(42.0, 42.0) == pytest.approx(42.0, abs=1e-12)

    def test_both_zero_defined_as_zero(self):
        assert harmonic_mean(0.0, 0.0) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(InputError):
            harmonic_mean(-1.0, 5.0)

    @settings(max_examples=60, deadline=None)
    @given(
        b=st.floats(0.01, 100), n=st.floats(0.01, 100), bump=st.floats(0.01, 10)
    )
    def test_symmetric_monotone_and_below_arithmetic_mean(self, b, n, bump):
        hm = harmonic_mean(b, n)
        assert hm == pytest.approx(harmonic_mean(n, b), rel=1e-12)
        assert hm <= (b + n) / 2 + 1e-12
        if abs(b - n) > 1e-9:
            assert hm < (b + n) / 2
        assert harmonic_mean(b + bump, n) > hm


def toy_classifier(seed=0, trained=False):
    model = ToyDualEncoder(seed=100 + seed, dtype=np.float64)
    pcfg = PromptConfig(m1=2, m2=2, n=2, k=4, depth=2)
    clf = PromptedClassifier(model, pcfg, mode="sync-clip", seed=seed, temperature=20.0)
    toy = make_two_domain_dataset(
        ToyDataConfig(seed=seed, n_base=4, n_novel=2, shots=8, synth_per_class=6,
                      val_per_class=2, test_per_class=6, noise=0.2, domain_shift=0.5)
    )
    if trained:
        from syncprompt.training import TrainConfig, train

        train(
            clf, toy.train,
            TrainConfig(lr0=0.05, epochs=6, real_batch_size=8, ratio=2,
                        weights=LossWeights(1.0, 0.1), seed=seed, precision=64,
                        temperature=20.0),
        )
    return clf, toy


class TestPredict:
    def test_single_class_subset_returns_it(self):
        clf, toy = toy_classifier()
        ex = toy.test[0]
        only = toy.train.class_space.novel[0]
        assert predict(clf, ex, [only], toy.train.class_space) == only

    def test_empty_subset_rejected(self):
        clf, toy = toy_classifier()
        with pytest.raises(InputError):
            predict(clf, toy.test[0], [], toy.train.class_space)

    def test_argmax_matches_brute_force_similarity_scan(self):
        """Oracle: explicit per-class cosine computed with plain numpy."""
        clf, toy = toy_classifier(trained=True)
        space = toy.train.class_space
        ids = list(space.all_classes)
        txt = clf.class_features(ids, space).data
        txt = txt / np.linalg.norm(txt, axis=-1, keepdims=True)
        for ex in toy.test[:24]:
            got = predict(clf, ex, ids, space)
            img = clf.image_features(clf.patch_tokens([ex]), "real").data[0]
            img = img / np.linalg.norm(img)
            brute = ids[int(np.argmax([img @ t for t in txt]))]
            assert got == brute

    def test_argmax_invariant_to_temperature(self):
        clf, toy = toy_classifier()
        space = toy.train.class_space
        ids = list(space.all_classes)
        preds_a = clf.predict_rows(clf.patch_tokens(toy.test[:12]), ids, space)
        clf.temperature = 123.0
        preds_b = clf.predict_rows(clf.patch_tokens(toy.test[:12]), ids, space)
        np.testing.assert_array_equal(preds_a, preds_b)


class TestEvaluate:
    def test_perfect_classifier_scores_hundred(self):
        """Accounting check: a predictor that always answers the truth
        must yield B = N = HM = 100."""
        clf, toy = toy_classifier()
        space = toy.train.class_space
        base = set(space.base)

        class AlwaysRight(PromptedClassifier):
            def __init__(self, inner):
                self.__dict__.update(inner.__dict__)
                base_ex = [ex for ex in toy.test if ex.class_id in base]
                novel_ex = [ex for ex in toy.test if ex.class_id not in base]
                self._answers = [
                    [e.class_id for e in base_ex], [e.class_id for e in novel_ex]
                ]

            def predict_rows(self, patches, class_ids, class_space):
                return np.asarray(self._answers.pop(0))

        report = evaluate(AlwaysRight(clf), toy.test, space, "gzsl")
        assert report.b_acc == 100.0 and report.n_acc == 100.0 and report.hm == 100.0

    def test_four_class_confusions_match_enumerated_oracle(self):
        """B and N recomputed by exhaustively scoring every test example
        with an independent numpy loop."""
        clf, toy = toy_classifier(trained=True)
        space = toy.train.class_space
        base = set(space.base)
        for protocol in ("zsl", "gzsl"):
            report = evaluate(clf, toy.test, space, protocol)
            txt_cache = {}

            def brute(ex, ids):
                key = tuple(ids)
                if key not in txt_cache:
                    t = clf.class_features(list(ids), space).data
                    txt_cache[key] = t / np.linalg.norm(t, axis=-1, keepdims=True)
                img = clf.image_features(clf.patch_tokens([ex]), "real").data[0]
                img = img / np.linalg.norm(img)
                return list(ids)[int(np.argmax(txt_cache[key] @ img))]

            correct_b = correct_n = 0
            for ex in toy.test:
                ids = (
                    space.all_classes
                    if protocol == "gzsl"
                    else (space.base if ex.class_id in base else space.novel)
                )
                if brute(ex, ids) == ex.class_id:
                    if ex.class_id in base:
                        correct_b += 1
                    else:
                        correct_n += 1
            n_base = sum(1 for e in toy.test if e.class_id in base)
            n_novel = len(toy.test) - n_base
            assert report.b_acc == pytest.approx(100 * correct_b / n_base, abs=1e-9)
            assert report.n_acc == pytest.approx(100 * correct_n / n_novel, abs=1e-9)
            assert report.hm == pytest.approx(
                harmonic_mean(report.b_acc, report.n_acc), abs=1e-9
            )

    def test_gzsl_accuracies_never_exceed_zsl(self):
        clf, toy = toy_classifier(trained=True)
        space = toy.train.class_space
        z = evaluate(clf, toy.test, space, "zsl")
        g = evaluate(clf, toy.test, space, "gzsl")
        assert z.b_acc >= g.b_acc
        assert z.n_acc >= g.n_acc

    def test_diagnostics_present_with_synthetic(self):
        clf, toy = toy_classifier()
        report = evaluate(clf, toy.test, toy.train.class_space, "gzsl",
                          synthetic=toy.train.synthetic)
        assert "fid" in report.diagnostics
        assert "domain_centroid_gap" in report.diagnostics
        assert report.diagnostics["fid"] > 0

    def test_report_json_roundtrip(self):
        clf, toy = toy_classifier()
        report = evaluate(clf, toy.test, toy.train.class_space, "zsl")
        back = EvalReport.from_json(report.to_json())
        assert back == report

    def test_transfer_wrapper_labels_protocol(self):
        clf, toy = toy_classifier()
        report = evaluate_transfer(clf, toy.test, toy.train.class_space,
                                   protocol_label="cross-dataset")
        assert report.protocol == "cross-dataset"
        assert report.n_acc is None  # every target class scored as base


class TestFid:
    def test_identical_sets_zero(self):
        a = RNG.normal(size=(64, 8))
        assert abs(fid(a, a.copy())) <= 1e-6

    def test_order_invariance(self):
        a = RNG.normal(size=(64, 8))
        shuffled = a[RNG.permutation(64)]
        assert abs(fid(a, shuffled)) <= 1e-6

    def test_symmetry(self):
        a = RNG.normal(size=(50, 6))
        b = RNG.normal(size=(70, 6)) + 0.5
        assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-6)

    @pytest.mark.parametrize("delta", [1.0, 2.0])
    def test_mean_shifted_gaussians_monte_carlo(self, delta):
        """fid(N(0,I), N(delta*e1, I)) = delta^2; 10k samples, 5%."""
        r = np.random.default_rng(123)
        dim = 8
        a = r.normal(size=(10_000, dim))
        b = r.normal(size=(10_000, dim))
        b[:, 0] += delta
        got = fid(a, b)
        assert got == pytest.approx(delta**2, rel=0.05)

    def test_too_few_samples_rejected(self):
        with pytest.raises(InputError):
            fid(RNG.normal(size=(1, 4)), RNG.normal(size=(10, 4)))

    def test_accepts_embedding_lists(self):
        from syncprompt.encoders import Embedding

        rows = [Embedding.of(RNG.normal(size=6)) for _ in range(12)]
        assert abs(fid(rows, rows)) <= 1e-6


class TestDomainCentroidGap:
    def test_identical_features_zero_gap(self):
        feats = {0: RNG.normal(size=(10, 8)), 1: RNG.normal(size=(10, 8))}
        assert domain_centroid_gap(feats, {k: v.copy() for k, v in feats.items()}) == 0.0

    def test_unit_vector_offset_recovered_exactly(self):
        """Per class, real rows are copies of a unit vector u and synth
        rows copies of unit w: gap = mean |w - u| since normalization is
        a no-op on unit vectors."""
        gaps = []
        real, synth = {}, {}
        for cid in range(3):
            u = RNG.normal(size=8)
            u /= np.linalg.norm(u)
            w = RNG.normal(size=8)
            w /= np.linalg.norm(w)
            real[cid] = np.tile(u, (5, 1))
            synth[cid] = np.tile(w, (7, 1))
            gaps.append(np.linalg.norm(w - u))
        got = domain_centroid_gap(real, synth)
        assert got == pytest.approx(np.mean(gaps), abs=1e-12)

    def test_no_shared_class_rejected(self):
        with pytest.raises(InputError):
            domain_centroid_gap({0: RNG.normal(size=(4, 8))}, {1: RNG.normal(size=(4, 8))})


class TestExport:
    def test_record_count_width_and_byte_stability(self, tmp_path):
        clf, toy = toy_classifier()
        examples = toy.test[:6] + toy.train.synthetic[:4]
        p1 = export_embeddings(clf, examples, toy.train.class_space, tmp_path / "a.jsonl")
        p2 = export_embeddings(clf, examples, toy.train.class_space, tmp_path / "b.jsonl")
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert len(lines) == 10
        rec = json.loads(lines[0])
        assert set(rec) == {"id", "class_name", "domain", "vector"}
        assert len(rec["vector"]) == clf.model.visual_spec.output_dim
