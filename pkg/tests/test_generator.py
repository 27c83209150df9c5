import itertools
import math

import numpy as np
import pytest

from motionkit import diffcore as dc
from motionkit import fsq
from motionkit import generator as gen
from motionkit.generator import BOS, EOS, NUM_SPECIAL, PAD, GenConfig, Strategy
from motionkit.representation import EmptyInputError

TINY = GenConfig(code_vocab=20, layers=2, width=16, heads=2, ffn_mult=2, max_text=8, max_motion=10)


@pytest.fixture(scope="module")
def tiny():
    return gen.init_generator(TINY, seed=0)


# -- mask ---------------------------------------------------------------------

def test_mask_example():
    m = gen.build_hybrid_mask(2, 3)
    rows = [set(np.nonzero(r)[0].tolist()) for r in m]
    assert rows == [{0, 1}, {0, 1}, {0, 1, 2}, {0, 1, 2, 3}, {0, 1, 2, 3, 4}]


def test_mask_without_text_is_causal():
    np.testing.assert_array_equal(gen.build_hybrid_mask(0, 5), np.tril(np.ones((5, 5), bool)))


def test_mask_closed_form_exhaustive():
    for w, n in itertools.product(range(9), range(1, 9)):
        m = gen.build_hybrid_mask(w, n)
        i, j = np.indices(m.shape)
        expected = np.where(i < w, j < w, (j < w) | (j <= i))
        np.testing.assert_array_equal(m, expected)
        np.testing.assert_array_equal(m[w:, w:], np.tril(np.ones((n, n), bool)))
        assert m.any(axis=1).all()


def test_mask_errors():
    with pytest.raises(gen.GeneratorError):
        gen.build_hybrid_mask(3, 0)


# -- forward pass -------------------------------------------------------------

def test_logits_shape(tiny, rng):
    for _ in range(5):
        w, n = int(rng.integers(0, 9)), int(rng.integers(1, 11))
        text = rng.integers(NUM_SPECIAL, TINY.text_vocab, size=w)
        motion = rng.integers(0, TINY.vocab, size=n)
        assert gen.forward_logits(tiny, text, motion).shape == (n, TINY.vocab)


def test_future_perturbation_leaves_past_logits(tiny, rng):
    text = rng.integers(NUM_SPECIAL, TINY.text_vocab, size=5)
    motion = rng.integers(0, TINY.vocab, size=10)
    base = gen.forward_logits(tiny, text, motion)
    for j in range(10):
        other = motion.copy()
        other[j] = (other[j] + 1 + int(rng.integers(TINY.vocab - 1))) % TINY.vocab
        out = gen.forward_logits(tiny, text, other)
        np.testing.assert_array_equal(out[:j], base[:j])
        assert np.abs(out[j:] - base[j:]).max() > 0


def test_text_order_irrelevant_without_positions(tiny, rng):
    text = rng.integers(NUM_SPECIAL, TINY.text_vocab, size=6)
    motion = rng.integers(0, TINY.vocab, size=7)
    swapped = text.copy()
    swapped[[1, 4]] = swapped[[4, 1]]
    a = tiny.logits(text[None], motion[None], zero_text_positions=True).data
    b = tiny.logits(swapped[None], motion[None], zero_text_positions=True).data
    np.testing.assert_allclose(a, b, atol=1e-5)
    c = tiny.logits(swapped[None], motion[None]).data
    assert np.abs(a - c).max() > 1e-4


def test_text_padding_is_ignored(tiny, rng):
    text = rng.integers(NUM_SPECIAL, TINY.text_vocab, size=4)
    motion = rng.integers(0, TINY.vocab, size=5)
    padded = np.concatenate([text, [PAD, PAD, PAD]])
    np.testing.assert_allclose(gen.forward_logits(tiny, text, motion), gen.forward_logits(tiny, padded, motion),
                               atol=1e-5)


def test_input_validation(tiny):
    with pytest.raises(gen.GeneratorError):
        gen.forward_logits(tiny, np.full(9, 5), [BOS])
    with pytest.raises(gen.GeneratorError):
        gen.forward_logits(tiny, [5], np.ones(11, int))
    with pytest.raises(gen.GeneratorError):
        gen.forward_logits(tiny, [5], [TINY.vocab])
    with pytest.raises(gen.GeneratorError):
        GenConfig(code_vocab=10, width=10, heads=3)


def test_rms_norm_unit_rms(rng):
    x = dc.tensor(rng.normal(0, 3, size=(4, 7, 16)))
    y = dc.rms_norm(x, dc.tensor(np.ones(16))).data
    np.testing.assert_allclose(np.sqrt(np.mean(y.astype(np.float64) ** 2, axis=-1)), 1.0, atol=1e-6)


def test_full_model_gradcheck():
    cfg = GenConfig(code_vocab=6, layers=2, width=8, heads=2, ffn_mult=2, max_text=4, max_motion=6)
    with dc.precision(np.float64):
        model = gen.init_generator(cfg, seed=1)
        model.params["head.w"].data *= 100  # lift the near-zero head so every path carries signal
        pairs = [("ab", [1, 4, 2]), ("xyz", [5, 0])]
        err = dc.gradcheck(lambda: gen.batch_loss(model, pairs), list(model.params.values()), h=1e-5)
    assert err < 1e-4


# -- loss ---------------------------------------------------------------------

def test_ce_uniform_and_confident():
    V = 11
    t = np.array([[3, 5, 7]])
    assert float(gen.ce_loss(dc.tensor(np.zeros((1, 3, V))), t).data) == pytest.approx(math.log(V), rel=1e-6)
    big = np.full((1, 3, V), -50.0)
    big[0, np.arange(3), t[0]] = 50.0
    assert float(gen.ce_loss(dc.tensor(big), t).data) < 1e-6


def test_ce_matches_naive_sum(rng):
    logits = rng.normal(0, 2, size=(3, 5, 9))
    targets = rng.integers(1, 9, size=(3, 5))
    targets[1, 3:] = PAD
    total, count = 0.0, 0
    for b in range(3):
        for i in range(5):
            if targets[b, i] == PAD:
                continue
            row = logits[b, i]
            total += -(row[targets[b, i]] - math.log(sum(math.exp(v) for v in row)))
            count += 1
    with dc.precision(np.float64):
        got = float(gen.ce_loss(dc.tensor(logits), targets).data)
    assert got == pytest.approx(total / count, abs=1e-6)


def test_ce_all_pad():
    with pytest.raises(gen.GeneratorError):
        gen.ce_loss(dc.tensor(np.zeros((1, 2, 4))), np.zeros((1, 2), int))


def test_wrap_and_batch():
    inp, tgt = gen.wrap_codes([0, 5], 4)
    assert inp.tolist() == [BOS, 3, 8] and tgt.tolist() == [3, 8, EOS]
    with pytest.raises(gen.GeneratorError):
        gen.wrap_codes([0, 1, 2, 3], 4)
    text, inp, tgt = gen.make_batch([("a", [1]), ("bcd", [2, 3])], TINY)
    assert text.tolist() == [[ord("a") + 3, PAD, PAD], [ord("b") + 3, ord("c") + 3, ord("d") + 3]]
    assert inp.tolist() == [[BOS, 4, PAD], [BOS, 5, 6]]
    assert tgt.tolist() == [[4, EOS, PAD], [5, 6, EOS]]


def test_tokenize_text_truncates():
    p = gen.tokenize_text("héllo", 3)
    assert p.ids.tolist() == [ord("h") + 3, 0xC3 + 3, 0xA9 + 3]


def test_init_loss_near_log_vocab(tiny, rng):
    pairs = [("walk", rng.integers(0, 20, size=6)), ("run", rng.integers(0, 20, size=8))]
    loss = float(gen.batch_loss(tiny, pairs).data)
    assert abs(loss - math.log(TINY.vocab)) < 0.05 * math.log(TINY.vocab)


# -- training and sampling -------------------------------------------------------

def test_training_deterministic(rng):
    pairs = [("a", [1, 2, 3]), ("b", [4, 5]), ("c", [6])]
    runs = [gen.train_generator(gen.init_generator(TINY, 0), pairs, gen.GenTrainConfig(steps=5, batch=2), seed=3)[1]
            for _ in range(2)]
    assert runs[0] == runs[1]
    with pytest.raises(EmptyInputError):
        gen.train_generator(gen.init_generator(TINY, 0), [])


def test_sampling_strategies_agree_in_the_limit(tiny):
    greedy = gen.sample_autoregressive(tiny, "walk", Strategy(), max_length=6)
    cold = gen.sample_autoregressive(tiny, "walk", Strategy("temperature", temperature=1e-6), seed=5,
                                     max_length=6)
    top1 = gen.sample_autoregressive(tiny, "walk", Strategy("top-k", k=1), seed=9, max_length=6)
    np.testing.assert_array_equal(greedy.codes, cold.codes)
    np.testing.assert_array_equal(greedy.codes, top1.codes)


def test_sampling_seeded(tiny):
    s = Strategy("temperature", temperature=1.0)
    a = gen.sample_autoregressive(tiny, "jump", s, seed=7)
    b = gen.sample_autoregressive(tiny, "jump", s, seed=7)
    np.testing.assert_array_equal(a.codes, b.codes)
    assert a.codes.size >= 1 and np.all((a.codes >= 0) & (a.codes < TINY.code_vocab))
    if a.truncated:
        assert a.codes.size == TINY.max_motion - 1


def test_strategy_validation():
    with pytest.raises(gen.GeneratorError):
        Strategy("beam")
    with pytest.raises(gen.GeneratorError):
        Strategy("top-k", k=0)
    with pytest.raises(gen.GeneratorError):
        Strategy("temperature", temperature=0.0)


def test_generate_rejects_mismatched_tokenizer(tiny, skeleton):
    norm = fsq.fit_norm_stats([np.zeros((8, 6))])
    tok = fsq.init_tokenizer(fsq.FsqConfig(levels=(4, 5), width=8, depth=0), None, norm)
    with pytest.raises(gen.ConfigMismatch):
        gen.generate(tiny, tok, "walk", skeleton)


def test_checkpoint_roundtrip(tiny, tmp_path):
    gen.save_generator(tiny, tmp_path / "g", seed=1, step=2)
    loaded = gen.load_generator(tmp_path / "g")
    assert loaded.config == TINY
    np.testing.assert_array_equal(gen.forward_logits(loaded, [5, 6], [BOS, 4]),
                                  gen.forward_logits(tiny, [5, 6], [BOS, 4]))
