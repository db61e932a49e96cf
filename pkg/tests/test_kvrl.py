import numpy as np
import pytest

from fcdbn.config import RunConfig
from fcdbn.core import RngStream
from fcdbn.deepnet import encode
from fcdbn.evaluation import roc
from fcdbn.kvrl import (
    KvrlModel,
    ModelStateError,
    RegionFractions,
    encode_face,
    extract_regions,
    kin_score,
    pair_feature,
    prepare_region,
    pretrain_stages,
    t_mask,
    train_kvrl,
)
from fcdbn.rbm import RbmLayer
from fcdbn.synth import make_kin_benchmark


def zero_stack(dims):
    from fcdbn.deepnet import DbnStack
    layers = [RbmLayer(W=np.zeros((dims[i], dims[i + 1])),
                       a=np.zeros(dims[i + 1]), b=np.zeros(dims[i]))
              for i in range(len(dims) - 1)]
    return DbnStack(layers=layers)


def zero_model():
    return KvrlModel(
        stage1={"face": zero_stack([1024, 8]),
                "t_region": zero_stack([1024, 8]),
                "not_t": zero_stack([1024, 8])},
        stage2=zero_stack([24, 8]),
    )


def tiny_config(seed=0, **overrides):
    base = dict(
        seed=seed, epochs=4, batch_size=16, learning_rate=0.05,
        stage1_dims=(1024, 16, 8), stage2_dims=(24, 16, 8),
        classifier_hidden=(8,), classifier_epochs=60,
        classifier_learning_rate=1.0, classifier_batch_size=1024,
        n_filters=2, alpha=0.05, beta=1e-4,
        dropout_input=0.0, dropout_hidden=0.0,
    )
    base.update(overrides)
    return RunConfig(**base)


class TestExtractRegions:
    def test_constant_image_gives_constant_regions(self):
        regions = extract_regions(np.full((64, 64), 0.3))
        # standardization maps a constant crop to all zeros
        for crop in (regions.face, regions.t_region, regions.not_t):
            assert crop.shape == (32, 32)
            assert np.all(crop == 0.0)

    def test_marker_visible_in_face_and_t_but_not_not_t(self):
        img = np.full((64, 64), 0.5)
        img[20, 32] = 1.0  # inside the eye strip (rows 16..29)
        regions = extract_regions(img)
        # the lone bright pixel is an extreme outlier after z-scoring
        assert regions.face.max() > 10.0
        assert regions.t_region.max() > 10.0
        # in not-T the marker area is mean-filled: no outlier survives
        assert regions.not_t.max() < 3.0

    def test_standardized_moments(self):
        img = RngStream(seed=0).uniform01(64 * 64).reshape(64, 64)
        regions = extract_regions(img)
        for crop in (regions.face, regions.t_region, regions.not_t):
            assert abs(crop.mean()) < 1e-10
            assert abs(crop.var() - 1.0) < 1e-10

    def test_wrong_dims_rejected(self):
        with pytest.raises(ValueError):
            extract_regions(np.zeros((32, 32)))

    def test_face_channel_idempotent(self):
        img = RngStream(seed=1).uniform01(32 * 32).reshape(32, 32)
        once = prepare_region(img)
        twice = prepare_region(once)
        assert np.max(np.abs(once - twice)) < 1e-12

    def test_extras_available_on_request(self):
        img = RngStream(seed=2).uniform01(64 * 64).reshape(64, 64)
        regions = extract_regions(img, extras=("binocular", "chin"))
        assert set(regions.extras) == {"binocular", "chin"}
        for crop in regions.extras.values():
            assert crop.shape == (32, 32)

    def test_unknown_extra_rejected(self):
        with pytest.raises(ValueError):
            extract_regions(np.zeros((64, 64)), extras=("nose_only",))

    def test_mask_geometry(self):
        mask = t_mask((64, 64), RegionFractions())
        assert mask[20, 0] and mask[20, 63]  # eye strip spans full width
        assert mask[40, 32] and not mask[40, 0]  # nose column is narrow
        assert not mask[60, 32]  # chin area untouched


class TestEncodeFace:
    def test_zero_model_gives_half(self):
        regions = extract_regions(np.full((64, 64), 0.1))
        out = encode_face(zero_model(), regions)
        assert out.shape == (8,)
        assert np.allclose(out, 0.5, atol=0)

    def test_deterministic(self):
        img = RngStream(seed=3).uniform01(64 * 64).reshape(64, 64)
        regions = extract_regions(img)
        model = zero_model()
        assert np.array_equal(encode_face(model, regions),
                              encode_face(model, regions))

    def test_matches_manual_stack_composition(self):
        stream = RngStream(seed=4)
        corpus = [stream.uniform01(64 * 64).reshape(64, 64) for _ in range(8)]
        model = pretrain_stages(corpus, tiny_config())
        regions = extract_regions(corpus[0])
        parts = [encode(model.stage1[name], regions.get(name).ravel())
                 for name in model.regions]
        manual = encode(model.stage2, np.concatenate(parts))
        assert np.max(np.abs(encode_face(model, regions) - manual)) < 1e-15


class TestPairFeature:
    def test_halves_in_order(self):
        fa = np.zeros(512)
        fb = np.ones(512)
        feat = pair_feature(fa, fb)
        assert feat.shape == (1024,)
        assert np.all(feat[:512] == 0.0)
        assert np.all(feat[512:] == 1.0)

    def test_self_pair_has_identical_halves(self):
        f = RngStream(seed=5).uniform01(512)
        feat = pair_feature(f, f)
        assert np.array_equal(feat[:512], feat[512:])

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValueError):
            pair_feature(np.zeros(512), np.zeros(256))


class TestKinScore:
    def trained_model(self, seed=0):
        corpus, train_pairs, test_pairs = make_kin_benchmark(
            seed=seed, n_families=10, members_per_family=4, separability=0.9,
            n_test_pairs=40, corpus_families=6)
        model = train_kvrl(corpus, train_pairs, tiny_config(seed))
        return model, test_pairs

    def test_symmetry_is_exact(self):
        model, test_pairs = self.trained_model()
        a, b, _ = test_pairs[0]
        ra, rb = extract_regions(a), extract_regions(b)
        assert kin_score(model, ra, rb) == kin_score(model, rb, ra)

    def test_score_in_unit_interval(self):
        model, test_pairs = self.trained_model()
        for a, b, _ in test_pairs[:10]:
            s = kin_score(model, extract_regions(a), extract_regions(b))
            assert 0.0 <= s <= 1.0

    def test_untrained_classifier_rejected(self):
        model = zero_model()
        regions = extract_regions(np.full((64, 64), 0.2))
        with pytest.raises(ModelStateError):
            kin_score(model, regions, regions)


class TestTrainKvrl:
    def test_zero_classifier_epochs_scores_at_chance(self):
        corpus, train_pairs, test_pairs = make_kin_benchmark(
            seed=6, n_families=30, members_per_family=6, separability=0.8,
            n_test_pairs=500, corpus_families=6)
        cfg = tiny_config(6, classifier_epochs=0, epochs=3)
        model = train_kvrl(corpus, train_pairs, cfg)
        scores, labels = [], []
        for a, b, label in test_pairs:
            scores.append(kin_score(model, extract_regions(a),
                                    extract_regions(b)))
            labels.append(label)
        auc = roc(scores, labels).auc
        assert abs(auc - 0.5) < 0.07

    def test_empty_inputs_rejected(self):
        cfg = tiny_config()
        with pytest.raises(ValueError):
            train_kvrl([], [(np.zeros((64, 64)), np.zeros((64, 64)), 1)], cfg)
        with pytest.raises(ValueError):
            train_kvrl([np.zeros((64, 64))], [], cfg)

    def test_training_is_deterministic(self):
        corpus, train_pairs, test_pairs = make_kin_benchmark(
            seed=8, n_families=8, members_per_family=4, separability=0.9,
            n_test_pairs=20, corpus_families=5)
        cfg = tiny_config(8)
        m1 = train_kvrl(corpus, train_pairs, cfg)
        m2 = train_kvrl(corpus, train_pairs, cfg)
        a, b, _ = test_pairs[0]
        ra, rb = extract_regions(a), extract_regions(b)
        assert kin_score(m1, ra, rb) == kin_score(m2, ra, rb)

    def test_learns_synthetic_kinship(self):
        corpus, train_pairs, test_pairs = make_kin_benchmark(
            seed=9, n_families=16, members_per_family=4, separability=0.9,
            n_test_pairs=80, corpus_families=12)
        cfg = tiny_config(9, epochs=10, classifier_epochs=400,
                          stage1_dims=(1024, 32, 16), stage2_dims=(48, 32, 16),
                          classifier_hidden=(16,))
        model = train_kvrl(corpus, train_pairs, cfg)
        scores, labels = [], []
        for a, b, label in test_pairs:
            scores.append(kin_score(model, extract_regions(a),
                                    extract_regions(b)))
            labels.append(label)
        assert roc(scores, labels).auc >= 0.8

    def test_face_only_configuration(self):
        corpus, train_pairs, _ = make_kin_benchmark(
            seed=10, n_families=8, members_per_family=4, separability=0.9,
            n_test_pairs=20, corpus_families=5)
        cfg = tiny_config(10, regions=("face",), stage2_dims=(8, 8),
                          stage1_dims=(1024, 16, 8))
        model = train_kvrl(corpus, train_pairs, cfg)
        assert model.regions == ("face",)
        a, b, _ = train_pairs[0]
        s = kin_score(model, extract_regions(a), extract_regions(b))
        assert 0.0 <= s <= 1.0
