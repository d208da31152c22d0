import numpy as np
import pytest

from negograph import corpus as C
from negograph import heads as H
from negograph.ndcore import Tensor

RNG = np.random.default_rng(31)


def zeroed_head(d_in, d_out):
    head = H.LinearHead.create(0, "h", d_in, d_out)
    head.w.value[:] = 0.0
    head.b.value[:] = 0.0
    return head


class TestStrategyHead:
    def test_zero_logits_give_half_probs_and_empty_khot(self):
        head = zeroed_head(6, 21)
        pred = H.predict_strategies(Tensor(RNG.normal(size=6)), head)
        assert np.all(pred.probs.value == 0.5)
        assert not pred.khot.any()

    def test_large_logit_saturates(self):
        head = zeroed_head(1, 21)
        head.b.value[7] = 10.0
        pred = H.predict_strategies(Tensor(np.zeros(1)), head)
        assert pred.khot[7]
        assert pred.probs.value[7] > 0.9999
        assert pred.khot.sum() == 1

    def test_matches_per_label_reference_on_random_states(self):
        head = H.LinearHead.create(3, "st", 6, 21)
        for _ in range(100):
            h = RNG.normal(size=6)
            pred = H.predict_strategies(Tensor(h), head)
            # independent per-label oracle
            for j in range(21):
                logit = float(h @ head.w.value[:, j] + head.b.value[j])
                p = 1.0 / (1.0 + np.exp(-logit))
                assert pred.probs.value[j] == pytest.approx(p, rel=1e-12)
                assert pred.khot[j] == (p > 0.5)

    def test_flipping_one_logit_flips_exactly_one_bit(self):
        head = zeroed_head(1, 21)
        head.b.value[3] = -0.01
        before = H.predict_strategies(Tensor(np.zeros(1)), head).khot.copy()
        head.b.value[3] = 0.01
        after = H.predict_strategies(Tensor(np.zeros(1)), head).khot
        assert (before != after).sum() == 1


class TestActHeads:
    def test_uniform_at_zero_logits(self):
        head = zeroed_head(4, 14)
        pred = H.predict_dialogue_act(Tensor(RNG.normal(size=4)), head)
        assert np.allclose(pred.dist.value, 1.0 / 14)

    def test_distribution_sums_to_one(self):
        head = H.LinearHead.create(1, "da", 4, 14)
        pred = H.predict_dialogue_act(Tensor(RNG.normal(size=4)), head)
        assert abs(pred.dist.value.sum() - 1.0) < 1e-9

    def test_argmax_shift_invariant(self):
        head = H.LinearHead.create(2, "da", 4, 14)
        h = Tensor(RNG.normal(size=4))
        base = H.predict_dialogue_act(h, head).argmax
        head.b.value += 3.7
        assert H.predict_dialogue_act(h, head).argmax == base

    def test_outcome_mirrors_dialogue_act(self):
        head = zeroed_head(5, 5)
        pred = H.predict_outcome(Tensor(RNG.normal(size=5)), head)
        assert np.allclose(pred.dist.value, 0.2)
        assert abs(pred.dist.value.sum() - 1.0) < 1e-9


def tiny_vocab():
    corp = C.Corpus([])
    vocab = C.build_token_vocab(corp)
    # append a few surface words deterministically
    return C.TokenVocab(["hello", "world", "yes"], surface_size=3)


class TestDecoder:
    def test_max_len_one_gives_single_token(self):
        vocab = tiny_vocab()
        params = H.DecoderParams.create(0, "dec", len(vocab), 4, 6)
        out = H.decode_utterance(Tensor(RNG.normal(size=6)), params, vocab, max_len=1)
        assert len(out) <= 1

    def test_greedy_is_deterministic(self):
        vocab = tiny_vocab()
        params = H.DecoderParams.create(1, "dec", len(vocab), 4, 6)
        h = Tensor(RNG.normal(size=6))
        a = H.decode_utterance(h, params, vocab, max_len=10)
        b = H.decode_utterance(h, params, vocab, max_len=10)
        assert a == b

    def test_never_emits_start_or_pad_and_terminates(self):
        vocab = tiny_vocab()
        for seed in range(5):
            params = H.DecoderParams.create(seed, "dec", len(vocab), 4, 6)
            out = H.decode_utterance(Tensor(RNG.normal(size=6)), params, vocab, max_len=12)
            assert len(out) <= 12
            assert C.BOS not in out
            assert C.PAD not in out

    def test_teacher_forced_positions_align_with_targets(self):
        vocab = tiny_vocab()
        params = H.DecoderParams.create(2, "dec", len(vocab), 4, 6)
        targets = vocab.encode(["hello", "world"]) + [vocab.eos_id]
        probs = H.teacher_forced_probs(Tensor(RNG.normal(size=6)), targets, params, vocab)
        assert len(probs) == 3
        for p in probs:
            assert abs(p.value.sum() - 1.0) < 1e-9

    def test_forced_price_placeholder_realizes_to_dollars(self):
        assert H.realize_tokens(["<price-0.875>"], 40.0) == ["$35.00"]
        assert H.realize_tokens(["i", "can", "do", "<price-1.000>"], 40.0)[-1] == "$40.00"
