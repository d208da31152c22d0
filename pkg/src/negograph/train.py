"""Losses, the joint objective, class weighting, the training loop with early
stopping, and evaluation metrics (multi-label F1, ROC AUC, corpus BLEU,
ratio-class accuracy). Metric implementations are self-contained so they can
be cross-checked against independent references.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import corpus as corpus_mod
from . import ndcore as nd
from .corpus import Corpus, Dialogue, NUM_CONTENT_STRATEGIES, NUM_DIALOGUE_ACTS, RatioBoundaries
from .model import ModelConfig, NegotiationModel, PredictionPoint, save_checkpoint
from .ndcore import AdamState, Tensor

PROB_CLAMP = 1e-12


class TrainError(Exception):
    pass


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 10.0
    gamma: float = 10.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise TrainError("loss weights must be nonnegative")


@dataclass
class ClassWeights:
    """Positive-class reweighting fitted on the training split only.
    delta[j] = (#train utterances without strategy j) / (#with it);
    rho is the analogous inverse-frequency weight per dialogue act."""

    delta: np.ndarray
    rho: np.ndarray


def compute_class_weights(train_corpus: Corpus) -> ClassWeights:
    total = sum(len(d.turns) for d in train_corpus)
    pos_st = np.zeros(NUM_CONTENT_STRATEGIES)
    pos_da = np.zeros(NUM_DIALOGUE_ACTS)
    for d in train_corpus:
        for turn in d.turns:
            for s in turn.strategies:
                if s < NUM_CONTENT_STRATEGIES:
                    pos_st[s] += 1
            pos_da[turn.dialogue_act] += 1
    delta = np.ones(NUM_CONTENT_STRATEGIES)
    rho = np.ones(NUM_DIALOGUE_ACTS)
    for j in range(NUM_CONTENT_STRATEGIES):
        if pos_st[j] > 0:
            delta[j] = (total - pos_st[j]) / pos_st[j]
        else:
            warnings.warn(f"strategy {j} absent from train split; delta set to 1", stacklevel=2)
    for c in range(NUM_DIALOGUE_ACTS):
        if pos_da[c] > 0:
            rho[c] = (total - pos_da[c]) / pos_da[c]
    return ClassWeights(delta=delta, rho=rho)


# ---------------------------------------------------------------------------
# losses


def loss_strategy(probs: Tensor, target_khot: np.ndarray, delta: np.ndarray) -> Tensor:
    """Weighted multi-label NLL: -sum_pos delta_j log p_j - sum_neg log(1-p_k)."""
    k = np.asarray(target_khot, dtype=np.float64)
    p = nd.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = nd.mul(Tensor(k * delta), nd.log(p))
    one = Tensor(np.ones_like(k))
    negt = nd.mul(Tensor(1.0 - k), nd.log(nd.sub(one, p)))
    return nd.neg(nd.sum_reduce(nd.add(pos, negt)))


def loss_dialogue_act(logits: Tensor, target: int, rho: np.ndarray) -> Tensor:
    """Class-weighted cross entropy: -rho_target * log softmax(logits)[target]."""
    dist = nd.clip(nd.softmax_masked(logits), PROB_CLAMP, 1.0)
    onehot = np.zeros(logits.shape[0])
    onehot[target] = rho[target]
    return nd.neg(nd.sum_reduce(nd.mul(Tensor(onehot), nd.log(dist))))


def loss_generation(decoder_probs: list[Tensor], target_ids: list[int]) -> Tensor:
    """Token-level NLL summed over the target utterance."""
    if len(decoder_probs) != len(target_ids):
        raise TrainError("decoder probs / target length mismatch")
    total = Tensor(np.zeros(()))
    for dist, tid in zip(decoder_probs, target_ids):
        p = nd.clip(dist, PROB_CLAMP, 1.0)
        onehot = np.zeros(p.shape[0])
        onehot[tid] = 1.0
        total = nd.sub(total, nd.sum_reduce(nd.mul(Tensor(onehot), nd.log(p))))
    return total


def loss_outcome(logits: Tensor, target_class: int) -> Tensor:
    """One-hot cross entropy over the 5 ratio classes (target in 0..4)."""
    dist = nd.clip(nd.softmax_masked(logits), PROB_CLAMP, 1.0)
    onehot = np.zeros(logits.shape[0])
    onehot[target_class] = 1.0
    return nd.neg(nd.sum_reduce(nd.mul(Tensor(onehot), nd.log(dist))))


def loss_joint(nlg: Tensor, st: Tensor, da: Tensor, outcome: Tensor,
               weights: LossWeights) -> Tensor:
    return nd.add(
        nd.add(nlg, nd.mul(Tensor(np.float64(weights.alpha)), st)),
        nd.add(nd.mul(Tensor(np.float64(weights.beta)), da),
               nd.mul(Tensor(np.float64(weights.gamma)), outcome)),
    )


# matrix forms of the same losses, used by the training loop (one op tree per
# dialogue instead of one per prediction point); each equals the sum of its
# per-point counterpart


def loss_strategy_batch(probs: Tensor, target_khot: np.ndarray, delta: np.ndarray) -> Tensor:
    k = np.asarray(target_khot, dtype=np.float64)
    p = nd.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = nd.mul(Tensor(k * delta), nd.log(p))
    negt = nd.mul(Tensor(1.0 - k), nd.log(nd.sub(Tensor(np.ones_like(k)), p)))
    return nd.neg(nd.sum_reduce(nd.add(pos, negt)))


def loss_dialogue_act_batch(logits: Tensor, targets: list[int], rho: np.ndarray) -> Tensor:
    dist = nd.clip(nd.softmax_masked(logits, axis=1), PROB_CLAMP, 1.0)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(targets)), targets] = rho[targets]
    return nd.neg(nd.sum_reduce(nd.mul(Tensor(onehot), nd.log(dist))))


def loss_outcome_batch(logits: Tensor, target_class: int) -> Tensor:
    dist = nd.clip(nd.softmax_masked(logits, axis=1), PROB_CLAMP, 1.0)
    onehot = np.zeros(logits.shape)
    onehot[:, target_class] = 1.0
    return nd.neg(nd.sum_reduce(nd.mul(Tensor(onehot), nd.log(dist))))


def loss_generation_matrix(prob_matrix: Tensor, target_ids: list[int]) -> Tensor:
    p = nd.clip(prob_matrix, PROB_CLAMP, 1.0)
    onehot = np.zeros(prob_matrix.shape)
    onehot[np.arange(len(target_ids)), target_ids] = 1.0
    return nd.neg(nd.sum_reduce(nd.mul(Tensor(onehot), nd.log(p))))


# ---------------------------------------------------------------------------
# metrics


def _f1(tp: float, fp: float, fn: float) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def f1_multilabel(gold: np.ndarray, pred: np.ndarray) -> dict[str, float]:
    """Macro / micro / weighted F1 over (N, L) boolean arrays. Macro averages
    per-label F1 unweighted; weighted uses gold support; micro pools all
    label decisions."""
    gold = np.asarray(gold, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    tp = (gold & pred).sum(axis=0).astype(float)
    fp = (~gold & pred).sum(axis=0).astype(float)
    fn = (gold & ~pred).sum(axis=0).astype(float)
    per_label = np.array([_f1(tp[j], fp[j], fn[j]) for j in range(gold.shape[1])])
    support = gold.sum(axis=0).astype(float)
    weighted = float((per_label * support).sum() / support.sum()) if support.sum() else 0.0
    return {
        "macro": float(per_label.mean()),
        "micro": _f1(tp.sum(), fp.sum(), fn.sum()),
        "weighted": weighted,
    }


def f1_multiclass(gold: np.ndarray, pred: np.ndarray, n_classes: int) -> dict[str, float]:
    gold_oh = np.zeros((len(gold), n_classes), dtype=bool)
    pred_oh = np.zeros((len(pred), n_classes), dtype=bool)
    gold_oh[np.arange(len(gold)), gold] = True
    pred_oh[np.arange(len(pred)), pred] = True
    return f1_multilabel(gold_oh, pred_oh)


def _rankdata(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with tie handling."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=float)
    i = 0
    sx = x[order]
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def binary_roc_auc(y: np.ndarray, scores: np.ndarray) -> float | None:
    """Mann-Whitney AUC; None when y has a single class (undefined)."""
    y = np.asarray(y, dtype=bool)
    npos = int(y.sum())
    nneg = len(y) - npos
    if npos == 0 or nneg == 0:
        return None
    ranks = _rankdata(np.asarray(scores, dtype=float))
    return float((ranks[y].sum() - npos * (npos + 1) / 2.0) / (npos * nneg))


def roc_auc_multilabel(gold: np.ndarray, probs: np.ndarray) -> dict[str, float]:
    """One-vs-rest AUC. Labels with a single observed class are skipped for
    macro/weighted (their AUC is undefined); micro flattens all (instance,
    label) pairs into one binary problem."""
    gold = np.asarray(gold, dtype=bool)
    probs = np.asarray(probs, dtype=float)
    per_label = []
    supports = []
    for j in range(gold.shape[1]):
        auc = binary_roc_auc(gold[:, j], probs[:, j])
        if auc is not None:
            per_label.append(auc)
            supports.append(gold[:, j].sum())
    micro = binary_roc_auc(gold.reshape(-1), probs.reshape(-1))
    macro = float(np.mean(per_label)) if per_label else 0.0
    weighted = (
        float(np.average(per_label, weights=supports)) if per_label and sum(supports) else 0.0
    )
    return {"macro": macro, "micro": micro if micro is not None else 0.0, "weighted": weighted}


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _ngram_counts(tokens: list[str], n: int) -> dict[tuple, int]:
    out: dict[tuple, int] = {}
    for i in range(len(tokens) - n + 1):
        key = tuple(tokens[i:i + n])
        out[key] = out.get(key, 0) + 1
    return out


def bleu_corpus(hypotheses: list[list[str]], references: list[list[str]], max_n: int = 4) -> float:
    """Corpus-level BLEU on a 0-100 scale with brevity penalty. Higher-order
    precisions (n >= 2) are add-one smoothed so identical corpora score
    exactly 100 and short corpora stay defined."""
    if len(hypotheses) != len(references):
        raise TrainError("hypothesis/reference count mismatch")
    if not hypotheses:
        raise TrainError("empty evaluation set")
    num = np.zeros(max_n)
    den = np.zeros(max_n)
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hc = _ngram_counts(hyp, n)
            rc = _ngram_counts(ref, n)
            num[n - 1] += sum(min(c, rc.get(g, 0)) for g, c in hc.items())
            den[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or den[0] == 0 or num[0] == 0:
        return 0.0
    logs = [np.log(num[0] / den[0])]
    for n in range(2, max_n + 1):
        logs.append(np.log((num[n - 1] + 1.0) / (den[n - 1] + 1.0)))
    bp = 1.0 if hyp_len > ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    return float(100.0 * bp * np.exp(np.mean(logs)))


# ---------------------------------------------------------------------------
# target assembly and batching


@dataclass
class DialogueTargets:
    st_khot: list[np.ndarray]
    da_ids: list[int]
    ratio_class: int | None  # 0-based, None when the dialogue has no sale


def dialogue_targets(d: Dialogue, boundaries: RatioBoundaries | None) -> DialogueTargets:
    st, da = [], []
    for turn in d.turns[1:]:
        k = np.zeros(NUM_CONTENT_STRATEGIES, dtype=bool)
        for s in turn.strategies:
            if s < NUM_CONTENT_STRATEGIES:
                k[s] = True
        st.append(k)
        da.append(turn.dialogue_act)
    ratio_class = None
    if boundaries is not None and d.outcome.sale_price is not None:
        r = corpus_mod.compute_ratio(
            d.outcome.sale_price, d.scenario.buyer_target_price, d.scenario.listed_price)
        ratio_class = corpus_mod.ratio_to_class(r, boundaries) - 1
    return DialogueTargets(st, da, ratio_class)


def fit_boundaries(train_corpus: Corpus) -> RatioBoundaries | None:
    ratios = []
    for d in train_corpus:
        if d.outcome.sale_price is not None:
            ratios.append(corpus_mod.compute_ratio(
                d.outcome.sale_price, d.scenario.buyer_target_price, d.scenario.listed_price))
    if len(ratios) < 5:
        return None
    return corpus_mod.fit_class_boundaries(ratios)


def pack_batches(sizes: list[int], order: list[int], cap: int) -> list[list[int]]:
    """Greedy packing of dialogues so a batch's total turn count stays <= cap
    (an oversized dialogue forms its own batch)."""
    batches: list[list[int]] = []
    current: list[int] = []
    load = 0
    for idx in order:
        s = sizes[idx]
        if current and load + s > cap:
            batches.append(current)
            current, load = [], 0
        current.append(idx)
        load += s
    if current:
        batches.append(current)
    return batches


@dataclass
class BatchLoss:
    nlg: float
    st: float
    da: float
    outcome: float
    joint: float
    points: int


def batch_loss(model: NegotiationModel, dialogues: list[Dialogue],
               targets: list[DialogueTargets], weights: LossWeights,
               class_weights: ClassWeights) -> tuple[Tensor, BatchLoss]:
    """Joint loss over a batch, averaged per prediction point."""
    zero = Tensor(np.zeros(()))
    nlg_sum, st_sum, da_sum, r_sum = zero, zero, zero, zero
    n_points = 0
    for d, tgt in zip(dialogues, targets):
        bf = model.forward_dialogue_batched(d, teacher_forcing=True)
        if bf is None:
            continue
        khot = np.array(tgt.st_khot[: bf.n_points])
        st_sum = nd.add(st_sum, loss_strategy_batch(bf.st_probs, khot, class_weights.delta))
        da_sum = nd.add(da_sum, loss_dialogue_act_batch(bf.da_logits, tgt.da_ids[: bf.n_points],
                                                        class_weights.rho))
        if tgt.ratio_class is not None:
            r_sum = nd.add(r_sum, loss_outcome_batch(bf.outcome_logits, tgt.ratio_class))
        for _, probs, ids in bf.gen:
            nlg_sum = nd.add(nlg_sum, loss_generation_matrix(probs, ids))
        n_points += bf.n_points
    if n_points == 0:
        raise TrainError("batch contains no prediction points")
    scale = Tensor(np.float64(1.0 / n_points))
    joint = nd.mul(scale, loss_joint(nlg_sum, st_sum, da_sum, r_sum, weights))
    stats = BatchLoss(
        nlg=nlg_sum.item() / n_points, st=st_sum.item() / n_points,
        da=da_sum.item() / n_points, outcome=r_sum.item() / n_points,
        joint=joint.item(), points=n_points,
    )
    return joint, stats


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: NegotiationModel, corpus: Corpus,
             boundaries: RatioBoundaries | None = None,
             dump_path=None, generation: bool = True) -> dict[str, float]:
    """Held-out metrics. BLEU compares greedy generations against the
    placeholderized references on seller turns; `generation=False` skips
    decoding (used for per-epoch validation, where only strategy F1 drives
    model selection)."""
    if len(corpus) == 0:
        raise TrainError("empty evaluation set")
    model.train(False)
    gold_st, pred_st, prob_st = [], [], []
    gold_da, pred_da, prob_da = [], [], []
    gold_rc, pred_rc = [], []
    hyps, refs = [], []
    dump = open(dump_path, "w", encoding="utf-8") if dump_path else None
    try:
        with nd.no_grad():
            for d in corpus:
                tgt = dialogue_targets(d, boundaries)
                bf = model.forward_dialogue_batched(d, teacher_forcing=False)
                if bf is None:
                    continue
                probs = bf.st_probs.value
                khots = bf.st_khot
                da_dist = _softmax_rows(bf.da_logits.value)
                rc_dist = _softmax_rows(bf.outcome_logits.value)
                for i in range(bf.n_points):
                    gold_st.append(tgt.st_khot[i])
                    pred_st.append(khots[i])
                    prob_st.append(probs[i].copy())
                    gold_da.append(tgt.da_ids[i])
                    pred_da.append(int(np.argmax(da_dist[i])))
                    prob_da.append(da_dist[i].copy())
                    if tgt.ratio_class is not None:
                        gold_rc.append(tgt.ratio_class)
                        pred_rc.append(int(np.argmax(rc_dist[i])))
                    target_turn = d.turns[i + 1]
                    if generation and target_turn.speaker == "seller":
                        ref = corpus_mod.placeholderize_tokens(target_turn, d.scenario.listed_price)
                        hyp = model.generate_reply(model.joint_state_row(bf, i), listed=None)
                        hyps.append(hyp)
                        refs.append(ref)
                    if dump:
                        dump.write(json.dumps({
                            "gold_st": np.flatnonzero(tgt.st_khot[i]).tolist(),
                            "pred_st": np.flatnonzero(khots[i]).tolist(),
                            "st_probs": [round(float(p), 6) for p in probs[i]],
                            "gold_da": tgt.da_ids[i],
                            "pred_da": int(np.argmax(da_dist[i])),
                            "outcome_probs": [round(float(p), 6) for p in rc_dist[i]],
                        }, sort_keys=True) + "\n")
    finally:
        if dump:
            dump.close()
    gold_st = np.array(gold_st)
    pred_st = np.array(pred_st)
    prob_st = np.array(prob_st)
    st_f1 = f1_multilabel(gold_st, pred_st)
    st_auc = roc_auc_multilabel(gold_st, prob_st)
    da_f1 = f1_multiclass(np.array(gold_da), np.array(pred_da), NUM_DIALOGUE_ACTS)
    da_onehot = np.zeros((len(gold_da), NUM_DIALOGUE_ACTS), dtype=bool)
    da_onehot[np.arange(len(gold_da)), gold_da] = True
    da_auc = roc_auc_multilabel(da_onehot, np.array(prob_da))
    metrics = {
        "st_f1_macro": st_f1["macro"], "st_f1_micro": st_f1["micro"], "st_f1_weighted": st_f1["weighted"],
        "st_auc_macro": st_auc["macro"], "st_auc_micro": st_auc["micro"], "st_auc_weighted": st_auc["weighted"],
        "da_f1_macro": da_f1["macro"], "da_f1_micro": da_f1["micro"], "da_f1_weighted": da_f1["weighted"],
        "da_auc_macro": da_auc["macro"], "da_auc_micro": da_auc["micro"], "da_auc_weighted": da_auc["weighted"],
        "bleu": bleu_corpus(hyps, refs) if hyps else 0.0,
        "rc_acc": float(np.mean(np.array(gold_rc) == np.array(pred_rc))) if gold_rc else 0.0,
    }
    return metrics


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochLog:
    epoch: int
    nlg: float
    st: float
    da: float
    outcome: float
    joint: float
    val_st_f1_macro: float
    val_st_f1_micro: float


@dataclass
class FitResult:
    model: NegotiationModel
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_val_macro_f1: float = 0.0


def write_training_log(log: list[EpochLog], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss_nlg", "loss_st", "loss_da", "loss_outcome",
                         "loss_joint", "val_st_f1_macro", "val_st_f1_micro"])
        for row in log:
            writer.writerow([row.epoch, f"{row.nlg:.10f}", f"{row.st:.10f}", f"{row.da:.10f}",
                             f"{row.outcome:.10f}", f"{row.joint:.10f}",
                             f"{row.val_st_f1_macro:.10f}", f"{row.val_st_f1_micro:.10f}"])


def fit(train_corpus: Corpus, valid_corpus: Corpus, config: ModelConfig,
        checkpoint_path=None, log_path=None, target_metric: float | None = None) -> FitResult:
    """Adam over shuffled dialogue batches; the checkpoint with the best
    validation strategy macro-F1 is kept, training stops after `patience`
    epochs without improvement (or once `target_metric` is reached)."""
    if len(train_corpus) == 0 or len(valid_corpus) == 0:
        raise TrainError("train and valid splits must be non-empty")
    vocab = corpus_mod.build_token_vocab(train_corpus)
    model = NegotiationModel(config, vocab)
    weights = LossWeights(config.loss_alpha, config.loss_beta, config.loss_gamma)
    class_weights = compute_class_weights(train_corpus)
    if not config.weighted_strategy_loss:
        class_weights = ClassWeights(delta=np.ones_like(class_weights.delta),
                                     rho=class_weights.rho)
    boundaries = fit_boundaries(train_corpus)
    targets = [dialogue_targets(d, boundaries) for d in train_corpus]
    adam = AdamState(lr=config.lr, weight_decay=config.l2)
    params = model.parameters()
    shuffle_rng = nd.stream(config.seed, "shuffle")
    sizes = [len(d.turns) for d in train_corpus]
    result = FitResult(model=model)
    best_values = None
    stale = 0
    for epoch in range(config.epochs):
        model.train(True)
        order = shuffle_rng.permutation(len(train_corpus)).tolist()
        batches = pack_batches(sizes, order, config.max_utterances_in_batch)
        sums = np.zeros(5)
        n_batches = 0
        for batch_id, batch in enumerate(batches):
            model.zero_grad()
            ds = [train_corpus.dialogues[i] for i in batch]
            ts = [targets[i] for i in batch]
            try:
                joint, stats = batch_loss(model, ds, ts, weights, class_weights)
            except nd.NumericError as e:
                norms = {t.name: float(np.linalg.norm(t.value)) for t in params[:5]}
                raise TrainError(
                    f"non-finite loss in epoch {epoch} batch {batch_id}: {e}; "
                    f"parameter norms (sample): {norms}") from e
            joint.backward()
            nd.adam_step(params, adam)
            sums += np.array([stats.nlg, stats.st, stats.da, stats.outcome, stats.joint])
            n_batches += 1
        model.train(False)
        val = evaluate(model, valid_corpus, boundaries, generation=False)
        avg = sums / max(n_batches, 1)
        result.log.append(EpochLog(
            epoch=epoch, nlg=avg[0], st=avg[1], da=avg[2], outcome=avg[3], joint=avg[4],
            val_st_f1_macro=val["st_f1_macro"], val_st_f1_micro=val["st_f1_micro"]))
        if val["st_f1_macro"] > result.best_val_macro_f1 or best_values is None:
            result.best_val_macro_f1 = val["st_f1_macro"]
            result.best_epoch = epoch
            best_values = [t.value.copy() for t in params]
            stale = 0
        else:
            stale += 1
        if target_metric is not None and val["st_f1_micro"] >= target_metric:
            break
        if stale >= config.patience:
            break
    for t, best in zip(params, best_values):
        t.value = best
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
    if log_path:
        write_training_log(result.log, log_path)
    return result
