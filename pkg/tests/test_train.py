import math

import numpy as np
import pytest
from sklearn.metrics import f1_score, roc_auc_score

from negograph import corpus as C
from negograph import ndcore as nd
from negograph import train as T
from negograph.model import ModelConfig
from negograph.ndcore import Tensor
from tests.conftest import make_record, write_jsonl

RNG = np.random.default_rng(41)


class TestLossStrategy:
    def test_perfect_prediction_drives_loss_to_zero(self):
        probs = Tensor(np.array([1 - 1e-12, 1e-12, 1e-12]))
        loss = T.loss_strategy(probs, np.array([True, False, False]), np.ones(3))
        assert loss.item() < 1e-9

    def test_hand_arithmetic_two_strategies(self):
        probs = Tensor(np.array([0.8, 0.3]))
        loss = T.loss_strategy(probs, np.array([True, False]), np.array([3.0, 1.0]))
        expected = -3 * math.log(0.8) - math.log(0.7)
        assert loss.item() == pytest.approx(expected, abs=1e-10)
        assert loss.item() == pytest.approx(1.0261, abs=5e-4)

    def test_monotone_in_probabilities(self):
        khot = np.array([True, False])
        delta = np.ones(2)
        lo = T.loss_strategy(Tensor(np.array([0.6, 0.3])), khot, delta).item()
        hi_pos = T.loss_strategy(Tensor(np.array([0.7, 0.3])), khot, delta).item()
        hi_neg = T.loss_strategy(Tensor(np.array([0.6, 0.4])), khot, delta).item()
        assert hi_pos < lo < hi_neg


class TestLossDialogueAct:
    def test_uniform_logits_give_log14(self):
        loss = T.loss_dialogue_act(Tensor(np.zeros(14)), 3, np.ones(14))
        assert loss.item() == pytest.approx(math.log(14), abs=1e-10)
        assert loss.item() == pytest.approx(2.639, abs=1e-3)

    def test_confident_correct_class_drives_loss_to_zero(self):
        logits = np.zeros(14)
        logits[5] = 60.0
        assert T.loss_dialogue_act(Tensor(logits), 5, np.ones(14)).item() < 1e-9

    def test_doubling_rho_doubles_loss(self):
        logits = Tensor(RNG.normal(size=14))
        rho = np.ones(14)
        base = T.loss_dialogue_act(logits, 2, rho).item()
        rho2 = rho.copy()
        rho2[2] = 2.0
        assert T.loss_dialogue_act(logits, 2, rho2).item() == pytest.approx(2 * base)


class TestLossGenerationAndOutcome:
    def test_single_token_with_prob_one(self):
        dist = Tensor(np.array([1.0 - 1e-12, 1e-12]))
        assert T.loss_generation([dist], [0]).item() < 1e-9

    def test_uniform_outcome_gives_log5(self):
        loss = T.loss_outcome(Tensor(np.zeros(5)), 2)
        assert loss.item() == pytest.approx(math.log(5), abs=1e-10)

    def test_nlg_additivity(self):
        d1 = Tensor(np.array([0.7, 0.3]))
        d2 = Tensor(np.array([0.2, 0.8]))
        both = T.loss_generation([d1, d2], [0, 1]).item()
        separate = T.loss_generation([d1], [0]).item() + T.loss_generation([d2], [1]).item()
        assert both == pytest.approx(separate, abs=1e-12)


class TestLossJoint:
    def test_zero_weights_leave_only_nlg(self):
        parts = [Tensor(np.float64(v)) for v in (1.7, 2.0, 3.0, 4.0)]
        w = T.LossWeights(alpha=0, beta=0, gamma=0)
        assert T.loss_joint(*parts, w).item() == pytest.approx(1.7)

    def test_weighted_arithmetic(self):
        parts = [Tensor(np.float64(v)) for v in (1.0, 2.0, 3.0, 4.0)]
        w = T.LossWeights(alpha=1, beta=10, gamma=10)
        assert T.loss_joint(*parts, w).item() == pytest.approx(73.0)

    def test_gradient_is_weighted_sum(self):
        x = Tensor(np.array([0.5]), requires_grad=True)
        w = T.LossWeights(alpha=1, beta=10, gamma=10)

        def parts():
            return (nd.mul(x, Tensor(np.array([2.0]))), nd.mul(x, Tensor(np.array([3.0]))),
                    nd.mul(x, Tensor(np.array([5.0]))), nd.mul(x, Tensor(np.array([7.0]))))

        loss = nd.sum_reduce(T.loss_joint(*parts(), w))
        loss.backward()
        assert x.grad[0] == pytest.approx(2 + 1 * 3 + 10 * 5 + 10 * 7)


class TestClassWeights:
    def test_delta_formula(self, tmp_path):
        recs = [make_record(5, strategies_per_turn=[["propose"], ["propose"], [], [], ["family"]])]
        corp = C.load_corpus(write_jsonl(tmp_path / "c.jsonl", recs))
        cw = T.compute_class_weights(corp)
        propose = corp.strategy_vocab.id("propose")
        family = corp.strategy_vocab.id("family")
        assert cw.delta[propose] == pytest.approx((5 - 2) / 2)
        assert cw.delta[family] == pytest.approx((5 - 1) / 1)

    def test_absent_strategy_warns_and_defaults_to_one(self, tmp_path):
        recs = [make_record(5)]
        corp = C.load_corpus(write_jsonl(tmp_path / "c.jsonl", recs))
        with pytest.warns(UserWarning):
            cw = T.compute_class_weights(corp)
        assert (cw.delta == 1.0).all()


class TestMetricsAgainstSklearn:
    def test_f1_multilabel_matches_reference_on_50_fixtures(self):
        for trial in range(50):
            rng = np.random.default_rng(trial)
            gold = rng.random((20, 7)) > 0.6
            pred = rng.random((20, 7)) > 0.6
            ours = T.f1_multilabel(gold, pred)
            for avg in ("macro", "micro", "weighted"):
                ref = f1_score(gold, pred, average=avg, zero_division=0)
                assert abs(ours[avg] - ref) < 1e-9, (trial, avg)

    def test_f1_multiclass_matches_reference(self):
        for trial in range(50):
            rng = np.random.default_rng(100 + trial)
            gold = rng.integers(0, 5, size=30)
            pred = rng.integers(0, 5, size=30)
            ours = T.f1_multiclass(gold, pred, 5)
            for avg in ("macro", "micro", "weighted"):
                ref = f1_score(gold, pred, average=avg, labels=list(range(5)), zero_division=0)
                assert abs(ours[avg] - ref) < 1e-9, (trial, avg)

    def test_roc_auc_matches_reference_on_50_fixtures(self):
        for trial in range(50):
            rng = np.random.default_rng(200 + trial)
            gold = rng.random((25, 4)) > 0.5
            # guarantee both classes per label so every AUC is defined
            gold[0, :] = True
            gold[1, :] = False
            probs = rng.random((25, 4))
            ours = T.roc_auc_multilabel(gold, probs)
            for avg in ("macro", "micro", "weighted"):
                ref = roc_auc_score(gold, probs, average=avg)
                assert abs(ours[avg] - ref) < 1e-9, (trial, avg)

    def test_auc_skips_single_class_labels_for_macro(self):
        gold = np.array([[True, False], [True, False], [False, False]])
        probs = np.array([[0.9, 0.4], [0.8, 0.2], [0.1, 0.3]])
        ours = T.roc_auc_multilabel(gold, probs)
        # column 1 has no positives: macro falls back to column 0 alone
        assert ours["macro"] == pytest.approx(T.binary_roc_auc(gold[:, 0], probs[:, 0]))


def brute_force_bleu(hyps, refs, max_n=4):
    """Independent oracle: Counter-based corpus BLEU, add-one smoothing for n >= 2."""
    from collections import Counter

    def grams(seq, n):
        return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))

    precisions = []
    for n in range(1, max_n + 1):
        match = total = 0
        for h, r in zip(hyps, refs):
            hg, rg = grams(h, n), grams(r, n)
            match += sum((hg & rg).values())
            total += max(len(h) - n + 1, 0)
        if n == 1:
            if total == 0 or match == 0:
                return 0.0
            precisions.append(match / total)
        else:
            precisions.append((match + 1) / (total + 1))
    c = sum(len(h) for h in hyps)
    r = sum(len(rr) for rr in refs)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)


class TestBleu:
    def test_identical_corpora_score_100(self):
        sents = [["the", "cat", "sat", "down", "today"], ["a", "b", "c", "d", "e", "f"]]
        assert T.bleu_corpus(sents, sents) == pytest.approx(100.0)

    def test_matches_independent_oracle_on_random_fixtures(self):
        vocab = list("abcdefgh")
        for trial in range(50):
            rng = np.random.default_rng(300 + trial)
            hyps = [[vocab[i] for i in rng.integers(0, 8, size=rng.integers(1, 12))] for _ in range(6)]
            refs = [[vocab[i] for i in rng.integers(0, 8, size=rng.integers(1, 12))] for _ in range(6)]
            assert T.bleu_corpus(hyps, refs) == pytest.approx(brute_force_bleu(hyps, refs), abs=1e-9)

    def test_disjoint_corpora_score_zero_unigrams(self):
        assert T.bleu_corpus([["x", "y"]], [["a", "b"]]) == 0.0


class TestBatching:
    def test_pack_respects_cap(self):
        sizes = [5, 6, 7, 8, 100, 3]
        batches = T.pack_batches(sizes, list(range(len(sizes))), cap=16)
        for b in batches:
            total = sum(sizes[i] for i in b)
            assert total <= 16 or len(b) == 1

    def test_pack_preserves_all_indices(self):
        sizes = [4] * 10
        batches = T.pack_batches(sizes, list(range(10)), cap=12)
        flat = [i for b in batches for i in b]
        assert sorted(flat) == list(range(10))


def small_config(**kw):
    base = dict(seed=3, variant="graph", hidden_dim=4, graph_layers=1,
                dialogue_context_embedding=6, context_hidden=5, word_dim=4,
                projection_hidden=4, dialogue_context_dropout=0.0, epochs=2,
                max_decode_len=5, patience=5)
    base.update(kw)
    return ModelConfig(**base)


def training_fixture(tmp_path, n=6):
    recs = []
    pool = ["propose", "hedge_count", "pos_sentiment", "family"]
    for i in range(n):
        strategies = [[pool[(i + t) % 4]] for t in range(5)]
        recs.append(make_record(5, strategies_per_turn=strategies, sale=36 + i))
    return C.load_corpus(write_jsonl(tmp_path / "train.jsonl", recs))


class TestFitLoop:
    def test_two_runs_same_seed_identical_logs(self, tmp_path):
        corp = training_fixture(tmp_path)
        r1 = T.fit(corp, corp, small_config())
        r2 = T.fit(corp, corp, small_config())
        assert len(r1.log) == len(r2.log)
        for a, b in zip(r1.log, r2.log):
            assert a == b

    def test_checkpoint_reload_reproduces_metrics(self, tmp_path):
        from negograph.model import load_checkpoint

        corp = training_fixture(tmp_path)
        ckpt = tmp_path / "model.ckpt"
        result = T.fit(corp, corp, small_config(), checkpoint_path=ckpt)
        boundaries = T.fit_boundaries(corp)
        before = T.evaluate(result.model, corp, boundaries)
        reloaded = load_checkpoint(ckpt)
        after = T.evaluate(reloaded, corp, boundaries)
        assert before == after

    def test_training_log_csv(self, tmp_path):
        corp = training_fixture(tmp_path)
        log_path = tmp_path / "log.csv"
        T.fit(corp, corp, small_config(), log_path=log_path)
        lines = log_path.read_text().strip().splitlines()
        assert lines[0].startswith("epoch,loss_nlg")
        assert len(lines) >= 2

    def test_empty_corpus_rejected(self, tmp_path):
        corp = training_fixture(tmp_path)
        with pytest.raises(T.TrainError):
            T.fit(C.Corpus([]), corp, small_config())


class TestBatchedEquivalence:
    """The stacked-matrix forward/losses must match the per-point path."""

    @pytest.mark.parametrize("variant", ["graph", "rnn", "none"])
    def test_batched_forward_matches_pointwise(self, tmp_path, variant):
        corp = training_fixture(tmp_path)
        cfg = small_config(variant=variant)
        vocab = C.build_token_vocab(corp)
        from negograph.model import NegotiationModel

        model = NegotiationModel(cfg, vocab)
        model.train(False)
        d = corp.dialogues[0]
        with nd.no_grad():
            points = model.forward_dialogue(d, teacher_forcing=True)
            bf = model.forward_dialogue_batched(d, teacher_forcing=True)
        assert bf.n_points == len(points)
        for i, p in enumerate(points):
            assert np.allclose(bf.st_probs.value[i], p.st.probs.value, atol=1e-9)
            assert np.allclose(bf.da_logits.value[i], p.da.logits.value, atol=1e-9)
            assert np.allclose(bf.outcome_logits.value[i], p.outcome.logits.value, atol=1e-9)
        gen_by_point = {t: (probs, ids) for t, probs, ids in bf.gen}
        for i, p in enumerate(points):
            if p.gen_probs is None:
                assert i not in gen_by_point
                continue
            probs, ids = gen_by_point[i]
            assert ids == p.gen_target_ids
            for j, dist in enumerate(p.gen_probs):
                assert np.allclose(probs.value[j], dist.value, atol=1e-9)

    def test_batched_losses_equal_sum_of_pointwise(self):
        rng = np.random.default_rng(3)
        probs = Tensor(rng.uniform(0.05, 0.95, size=(6, 21)))
        khot = rng.random((6, 21)) > 0.7
        delta = rng.uniform(0.5, 4.0, size=21)
        batched = T.loss_strategy_batch(probs, khot, delta).item()
        single = sum(T.loss_strategy(Tensor(probs.value[i]), khot[i], delta).item() for i in range(6))
        assert batched == pytest.approx(single, abs=1e-9)

        logits = Tensor(rng.normal(size=(6, 14)))
        targets = rng.integers(0, 14, size=6).tolist()
        rho = rng.uniform(0.5, 3.0, size=14)
        batched = T.loss_dialogue_act_batch(logits, targets, rho).item()
        single = sum(T.loss_dialogue_act(Tensor(logits.value[i]), targets[i], rho).item() for i in range(6))
        assert batched == pytest.approx(single, abs=1e-9)

        out_logits = Tensor(rng.normal(size=(6, 5)))
        batched = T.loss_outcome_batch(out_logits, 3).item()
        single = sum(T.loss_outcome(Tensor(out_logits.value[i]), 3).item() for i in range(6))
        assert batched == pytest.approx(single, abs=1e-9)

        pm = Tensor(rng.uniform(0.01, 0.99, size=(4, 9)))
        ids = rng.integers(0, 9, size=4).tolist()
        batched = T.loss_generation_matrix(pm, ids).item()
        single = T.loss_generation([Tensor(pm.value[i]) for i in range(4)], ids).item()
        assert batched == pytest.approx(single, abs=1e-9)


class TestExternalUtteranceMode:
    def test_external_embeddings_drive_the_model(self, tmp_path):
        from negograph import dialenc
        from negograph.model import NegotiationModel

        corp = training_fixture(tmp_path, n=2)
        rng = np.random.default_rng(0)
        store = dialenc.ExternalEmbeddings(dim=6)
        for d in corp:
            for t in range(len(d.turns)):
                store.put(d.dialogue_id, t, rng.normal(size=6))
        cfg = small_config(utterance_mode="external")
        model = NegotiationModel(cfg, C.build_token_vocab(corp), external=store)
        model.train(False)
        with nd.no_grad():
            bf = model.forward_dialogue_batched(corp.dialogues[0], teacher_forcing=False)
        assert bf.n_points == 4
        # no gradient path into the (absent) trainable word table
        out = nd.sum_reduce(model.forward_dialogue_batched(corp.dialogues[0]).st_probs)
        out.backward()
        assert model.utt.word_embed.grad is None

    def test_external_mode_requires_table(self, tmp_path):
        from negograph.model import ModelError, NegotiationModel

        corp = training_fixture(tmp_path, n=2)
        with pytest.raises(ModelError):
            NegotiationModel(small_config(utterance_mode="external"), C.build_token_vocab(corp))


class TestEvaluate:
    def test_empty_eval_set_rejected(self, tmp_path):
        corp = training_fixture(tmp_path)
        result = T.fit(corp, corp, small_config(epochs=1))
        with pytest.raises(T.TrainError):
            T.evaluate(result.model, C.Corpus([]))

    def test_prediction_dump_schema(self, tmp_path):
        import json

        corp = training_fixture(tmp_path)
        result = T.fit(corp, corp, small_config(epochs=1))
        dump = tmp_path / "preds.jsonl"
        T.evaluate(result.model, corp, T.fit_boundaries(corp), dump_path=dump)
        rows = [json.loads(ln) for ln in dump.read_text().splitlines()]
        assert len(rows) == sum(len(d.turns) - 1 for d in corp)
        assert set(rows[0].keys()) == {"gold_st", "pred_st", "st_probs", "gold_da", "pred_da", "outcome_probs"}
        assert len(rows[0]["st_probs"]) == 21
        assert len(rows[0]["outcome_probs"]) == 5
