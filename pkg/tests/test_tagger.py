import numpy as np
import pytest
from dataclasses import replace

from seda.corpus import Entity, split_newline
from seda.grid import TagScheme, encode
from seda.tagger import layers as L
from seda.tagger.model import GridModel, ModelConfig, Vocab
from seda.tagger.train import (
    encode_lenient,
    gradcheck,
    gradcheck_probe,
    predict_samples,
    train,
)

TINY = ModelConfig(d_emb=4, d_lstm=3, d_h=4, d_Ed=3, d_Et=2, d_c=3, d_ffn=4, d_biaffine=3,
                   dilations=(1, 2), dropout=0.0, seed=7)


def tiny_model(words=("a", "b", "c", "d"), labels=("ADR", "Drug"), mode="base", cfg=TINY):
    return GridModel(cfg, Vocab.build([list(words)]), TagScheme(labels, mode))


# ---------------------------------------------------------------- layers
def test_gelu_exact_values():
    assert L.gelu(np.array([0.0]))[0] == 0.0
    # x * Phi(x) at x = 1
    assert L.gelu(np.array([1.0]))[0] == pytest.approx(0.8413447460685429, abs=1e-15)


def test_gelu_grad_matches_difference():
    x = np.linspace(-4, 4, 41)
    num = (L.gelu(x + 1e-6) - L.gelu(x - 1e-6)) / 2e-6
    assert np.allclose(L.gelu_grad(x), num, atol=1e-8)


def test_softmax_rows_sum_to_one():
    z = np.random.default_rng(0).normal(0, 50, size=(7, 7, 5))
    assert np.allclose(L.softmax(z).sum(-1), 1.0, atol=1e-12)


def test_distance_buckets():
    b = L.distance_buckets(70)
    center = len(L._MAGNITUDE_EDGES)
    assert b[0, 0] == center
    assert b[0, 1] == center + 1 and b[1, 0] == center - 1
    assert b[0, 5] == b[0, 7] == center + 4
    assert b[0, 69] == center + 8 and b[69, 0] == center - 8
    assert b.min() >= 0 and b.max() < L.N_DISTANCE_BUCKETS


def test_region_ids_diagonal_lower():
    r = L.region_ids(3)
    assert r.tolist() == [[1, 0, 0], [1, 1, 0], [1, 1, 1]]


def test_dilated_conv_against_loops():
    rng = np.random.default_rng(1)
    C = rng.normal(size=(6, 6, 2))
    K = rng.normal(size=(3, 3, 2, 3))
    kb = rng.normal(size=3)
    for d in (1, 2, 3):
        out, _ = L.dconv_forward(C, K, kb, d)
        ref = np.tile(kb, (6, 6, 1))
        for i in range(6):
            for j in range(6):
                for a in range(3):
                    for b in range(3):
                        y, x = i + (a - 1) * d, j + (b - 1) * d
                        if 0 <= y < 6 and 0 <= x < 6:
                            ref[i, j] += C[y, x] @ K[a, b]
        assert np.allclose(out, ref)


def test_biaffine_against_loops():
    rng = np.random.default_rng(2)
    s, o = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    U, W, b = rng.normal(size=(3, 5, 3)), rng.normal(size=(6, 5)), rng.normal(size=5)
    y, _ = L.biaffine_forward(s, o, U, W, b)
    for i in range(4):
        for j in range(4):
            ref = np.array([s[i] @ U[:, k, :] @ o[j] for k in range(5)]) + np.concatenate([s[i], o[j]]) @ W + b
            assert np.allclose(y[i, j], ref)


def test_cln_core_is_standardized():
    H = np.random.default_rng(3).normal(2.0, 3.0, size=(9, 16))
    core, _ = L.standardize(H, 1e-6)
    assert np.abs(core.mean(-1)).max() <= 1e-5
    assert np.abs(core.std(-1) - 1).max() <= 1e-5


def test_cln_constant_row_is_clamped():
    H = np.ones((2, 4))
    core, _ = L.standardize(H, 1e-6)
    assert np.all(np.isfinite(core)) and not core.any()


def test_cln_identity_at_init():
    H = np.random.default_rng(4).normal(size=(3, 5))
    V, _ = L.cln_forward(H, np.zeros((5, 5)), np.ones(5), np.zeros((5, 5)), np.zeros(5))
    core, _ = L.standardize(H, 1e-6)
    assert np.allclose(V, np.broadcast_to(core[None], V.shape))


def test_cross_entropy_rejects_bad_tags():
    probs = np.full((2, 2, 3), 1 / 3)
    with pytest.raises(ValueError):
        L.cross_entropy(probs, np.full((2, 2), 3), np.ones(3))


def test_cross_entropy_weighted_mean():
    probs = np.array([[[0.5, 0.5], [0.25, 0.75]]])
    gold = np.array([[0, 1]])
    loss, _ = L.cross_entropy(probs, gold, np.array([0.5, 1.0]))
    assert loss == pytest.approx(-(0.5 * np.log(0.5) + np.log(0.75)) / 1.5)


# ----------------------------------------------------------------- model
@pytest.mark.parametrize("mode", ["base", "extended"])
def test_gradcheck_all_groups(mode):
    model, words, gold = gradcheck_probe(replace(TINY, scheme_mode=mode))
    result = gradcheck(model, words, gold)
    assert set(result.errors) == set(model.params)
    assert result.max_error <= 1e-4, result.errors


def test_forward_distributions():
    model = tiny_model()
    probs, _ = model.forward(["a", "b", "zzz", "c", "d"])
    assert probs.shape == (5, 5, 4)
    assert np.abs(probs.sum(-1) - 1).max() <= 1e-6


def test_forward_is_deterministic():
    model = tiny_model()
    a, _ = model.forward(["a", "b", "c"])
    b, _ = model.forward(["a", "b", "c"])
    assert np.array_equal(a, b)


def test_large_input_stays_finite():
    model = tiny_model(cfg=replace(TINY, dilations=(1, 2, 3)))
    probs, _ = model.forward(["a"] * 256)
    assert probs.shape == (256, 256, 4)
    assert np.isfinite(probs).all()


def test_prediction_is_repaired_and_decodable():
    model = tiny_model()
    grid = model.predict_grid(["a", "b", "c", "d"])
    i, j = np.indices(grid.cells.shape)
    assert not ((grid.cells == 1) & (i >= j)).any()
    assert isinstance(model.predict_entities(["a", "b"]), list)


def test_save_load_round_trip(tmp_path):
    model = tiny_model(mode="extended")
    path = tmp_path / "m.npz"
    model.save(path)
    back = GridModel.load(path)
    assert back.config == model.config and back.scheme == model.scheme
    assert back.vocab.words == model.vocab.words
    a, _ = model.forward(["a", "c"])
    b, _ = back.forward(["a", "c"])
    assert np.array_equal(a, b)
    model.save(tmp_path / "m2.npz")
    assert path.read_bytes() == (tmp_path / "m2.npz").read_bytes()


def test_config_text_and_unknown_keys():
    cfg = ModelConfig.from_text("d_h = 8\ndilations = 1, 2\nscheme_mode = extended\n")
    assert cfg.d_h == 8 and cfg.dilations == (1, 2) and cfg.scheme_mode == "extended"
    with pytest.raises(ValueError):
        ModelConfig.from_text("nonsense = 1")
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"d_h": 4, "bogus": 1})
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_full_scale_settings():
    cfg = ModelConfig.full_scale()
    assert (cfg.d_h, cfg.d_Ed, cfg.d_Et, cfg.d_c, cfg.dropout) == (768, 20, 20, 80, 0.5)


def test_encode_lenient_drops_clashes():
    scheme = TagScheme(("ADR", "Drug"))
    ents = [Entity.from_tokens("ADR", [0, 2]), Entity.from_tokens("Drug", [0, 1, 2])]
    grid, dropped = encode_lenient(ents, 3, scheme)
    assert dropped == 1
    assert grid == encode([ents[0]], 3, scheme)


def test_training_lowers_loss_and_is_reproducible():
    from seda.synthetic import generate_corpus

    docs = generate_corpus(8, seed=5)
    samples = [s for d in docs for s in split_newline(d)]
    cfg = replace(ModelConfig(), epochs=3, d_emb=16, d_lstm=16, d_h=16)
    a = train(samples, cfg, dev_docs=docs, dev_samples=samples)
    b = train(samples, cfg, dev_docs=docs, dev_samples=samples)
    assert a.checkpoints[-1].loss < a.checkpoints[0].loss
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)
    assert a.checkpoints[-1].dev_ebf is not None
    preds = predict_samples(a.model, samples)
    assert set(preds) <= {d.id for d in docs}


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train([], ModelConfig())
