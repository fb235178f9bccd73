import numpy as np
import pytest

from noiseadapt import adaptation as ad
from noiseadapt import signal_corpus as sc
from noiseadapt.errors import InvalidArgumentError
from noiseadapt.features import FeatureMatrix
from noiseadapt.neural_net import Network, count_parameters
from noiseadapt.pipeline import FeatureParams, compute_features, spliced_mfcc
from noiseadapt.features import lda_apply

SMALL = dict(dphoneme_hidden=[64, 64], epochs=12,
             ubm_components=8, ivector_dim=6, ubm_iters=3, tv_iters=3)
NOISY = ["white:0", "street:0", "music:0", "reverb:1.0"]


@pytest.fixture(scope="module")
def noisy():
    recipe = sc.CorpusRecipe(conditions=NOISY, utterances_per_condition=40, segments_per_utterance=4,
                             segment_ms=250, content_classes=6, split_ratios=(0.6, 0.2, 0.2), seed=3)
    splits, lda = compute_features(sc.build_corpus(recipe), FeatureParams(), 6)
    return splits, lda


@pytest.fixture(scope="module")
def dnoise(noisy):
    splits, _ = noisy
    net, report, classes = ad.train_noise_network(splits["train"], splits["dev"],
                                                  ad.SystemConfig(**SMALL))
    return net, report, classes


def test_nat_constant_input():
    f = FeatureMatrix(np.full((30, 4), 2.5))
    e = ad.nat_estimate(f)
    assert not e.per_frame
    np.testing.assert_array_equal(e.values, np.full((1, 4), 2.5))


def test_nat_two_blocks():
    a, b = np.arange(3.0), -np.arange(3.0) * 2
    f = FeatureMatrix(np.vstack([np.tile(a, (10, 1)), np.tile(b, (10, 1))]))
    np.testing.assert_allclose(ad.nat_estimate(f).values[0], (a + b) / 2, atol=1e-15)


def test_nat_index_set_oracle():
    x = np.random.default_rng(0).standard_normal((37, 13))
    rows = list(range(10)) + list(range(27, 37))
    np.testing.assert_allclose(ad.nat_estimate(FeatureMatrix(x)).values[0],
                               sum(x[r] for r in rows) / 20, atol=1e-12)


def test_nat_short_utterance_counts_each_frame_once():
    x = np.random.default_rng(1).standard_normal((13, 3))
    np.testing.assert_allclose(ad.nat_estimate(FeatureMatrix(x)).values[0], x.mean(0), atol=1e-12)


def test_augment_dims_and_projection():
    rng = np.random.default_rng(2)
    f = FeatureMatrix(rng.standard_normal((9, 40)), np.arange(9) % 3)
    e = ad.NoiseEmbedding(rng.standard_normal((9, 40)))
    g = ad.augment(f, e)
    assert g.dim == 80
    np.testing.assert_array_equal(g.values[:, :40], f.values)
    np.testing.assert_array_equal(g.labels, f.labels)
    assert ad.augment(f, None) is f


def test_augment_broadcasts_single_row():
    f = FeatureMatrix(np.zeros((5, 2)))
    g = ad.augment(f, ad.NoiseEmbedding(np.array([[1.0, 2.0, 3.0]]), per_frame=False))
    np.testing.assert_array_equal(g.values[:, 2:], np.tile([1.0, 2.0, 3.0], (5, 1)))


def test_augment_row_mismatch():
    with pytest.raises(InvalidArgumentError):
        ad.augment(FeatureMatrix(np.zeros((5, 2))), ad.NoiseEmbedding(np.zeros((4, 3))))


def test_mtl_parameter_count_matches_ndnn():
    cfg = ad.SystemConfig()
    target = ad.ndnn_parameter_count(40, 41, 5, cfg)
    mtl = ad.mtl_network_config(40, 41, 5, cfg)
    assert abs(count_parameters(mtl) - target) / target <= 0.05
    assert mtl.layer_sizes[2] == cfg.embedding_dim
    assert mtl.second_head[0] == 1


def test_mtl_shared_depth_fixed():
    with pytest.raises(InvalidArgumentError):
        ad.mtl_network_config(40, 41, 5, ad.SystemConfig(mtl_shared_layers=3))


def test_noise_network_is_competent(dnoise):
    net, report, classes = dnoise
    assert classes == ["white", "street", "music", "reverb"]
    assert max(report.dev_accuracy) >= 0.90


def test_noise_network_is_deterministic(noisy, dnoise):
    splits, _ = noisy
    again, _, _ = ad.train_noise_network(splits["train"], splits["dev"], ad.SystemConfig(**SMALL))
    for a, b in zip(dnoise[0].parameters(), again.parameters()):
        assert np.array_equal(a, b)


def test_shuffled_noise_labels_give_chance(noisy):
    splits, _ = noisy
    classes = ad.noise_classes(splits["train"])
    rng = np.random.default_rng(4)
    ytr = rng.permutation(ad.frame_noise_targets(splits["train"], classes))
    ydv = rng.permutation(ad.frame_noise_targets(splits["dev"], classes))
    _, report, _ = ad.train_noise_network(splits["train"], splits["dev"],
                                          ad.SystemConfig(**{**SMALL, "epochs": 3}),
                                          targets=(ytr, ydv))
    assert abs(report.dev_accuracy[report.best_epoch] - 1 / len(classes)) <= 0.05


def test_embeddings_are_the_bottleneck(noisy, dnoise):
    splits, _ = noisy
    f = splits["test"][0].features
    e = ad.extract_embeddings(dnoise[0], f)
    assert e.per_frame and e.values.shape == (f.num_frames, 40)
    np.testing.assert_array_equal(e.values, dnoise[0].tap_bottleneck(f.values).values)


def _probe(lda):
    """First half white-noise corrupted, second half music corrupted."""
    clean = sc.synth_clean_utterance(seed=77, num_segments=4, segment_len_ms=250, content_class_count=6)
    x = clean.samples
    half = len(x) // 2
    first = sc.Utterance(x[:half], clean.sample_rate, [], sc.CLEAN)
    second = sc.Utterance(x[half:], clean.sample_rate, [], sc.CLEAN)
    white = sc.mix_at_snr(first, sc.synth_noise("white", half, 1), 0.0)
    music = sc.mix_at_snr(second, sc.synth_noise("music", len(x) - half, 2), 0.0, noise_type="music")
    u = sc.Utterance(np.concatenate([white.samples, music.samples]), clean.sample_rate,
                     clean.segments, sc.CLEAN)
    return lda_apply(lda, spliced_mfcc(u, FeatureParams())), half


def test_probe_embedding_tracks_condition(noisy, dnoise):
    _, lda = noisy
    f, half = _probe(lda)
    e = ad.extract_embeddings(dnoise[0], f).values
    centres = 160 * np.arange(f.num_frames) + 200
    first, second = e[centres < half].mean(0), e[centres >= half].mean(0)
    assert np.linalg.norm(first - second) > 0.1
    nat = ad.nat_estimate(f)
    assert nat.values.shape[0] == 1


def test_inference_needs_features_only(noisy, dnoise):
    splits, lda = noisy
    system = ad.train_system("ndnn", splits["train"], splits["dev"],
                             ad.SystemConfig(**{**SMALL, "epochs": 2}), 6, lda, dnoise=dnoise[0])
    f = splits["test"][0].features
    bare = FeatureMatrix(f.values)
    np.testing.assert_array_equal(system.predict(bare), system.predict(f))
    assert system.final_features(bare).dim == f.dim + 40


@pytest.mark.parametrize("method", ["baseline", "nat", "ivector_offline", "ivector_online", "mtl"])
def test_every_method_trains_and_persists(noisy, method, tmp_path):
    splits, lda = noisy
    cfg = ad.SystemConfig(**{**SMALL, "epochs": 1})
    system = ad.train_system(method, splits["train"][::8], splits["dev"][::8], cfg, 6, lda)
    f = splits["test"][0].features
    extra = {"baseline": 0, "nat": f.dim, "ivector_offline": 6, "ivector_online": 6, "mtl": 0}[method]
    assert system.final_features(f).dim == f.dim + extra
    system.save(tmp_path)
    back = ad.AcousticSystem.load(tmp_path)
    np.testing.assert_array_equal(back.predict(f), system.predict(f))


def test_pretrained_noise_network_only_for_ndnn(noisy, dnoise):
    splits, _ = noisy
    with pytest.raises(InvalidArgumentError):
        ad.train_system("baseline", splits["train"], splits["dev"], ad.SystemConfig(**SMALL),
                        6, dnoise=dnoise[0])


def test_unknown_method():
    with pytest.raises(InvalidArgumentError):
        ad.train_system("fmllr", [], [], ad.SystemConfig())


def test_clean_corpus_gives_no_gain(noisy, dnoise):
    _, lda = noisy
    recipe = sc.CorpusRecipe(conditions=["clean"], utterances_per_condition=80, segments_per_utterance=4,
                             segment_ms=250, content_classes=6, split_ratios=(0.6, 0.2, 0.2), seed=8)
    splits, _ = compute_features(sc.build_corpus(recipe), FeatureParams(), 6, lda=lda)
    cfg = ad.SystemConfig(**SMALL)
    acc = {}
    for method in ("baseline", "ndnn"):
        system = ad.train_system(method, splits["train"], splits["dev"], cfg, 6, lda,
                                 dnoise=dnoise[0] if method == "ndnn" else None)
        pred = np.concatenate([system.predict(u.features) for u in splits["test"]])
        ref = np.concatenate([u.features.labels for u in splits["test"]])
        acc[method] = np.mean(pred == ref)
    assert abs(acc["baseline"] - acc["ndnn"]) <= 0.02


def test_bundle_without_manifest(tmp_path):
    from noiseadapt.errors import InvalidStateError
    with pytest.raises(InvalidStateError):
        ad.AcousticSystem.load(tmp_path)


def test_network_type_is_unchanged_by_loading(noisy, dnoise, tmp_path):
    dnoise[0].save(tmp_path / "d.json")
    assert isinstance(Network.load(tmp_path / "d.json"), Network)
