import json
import warnings

import pytest

from negograph import cli
from negograph import corpus as C
from tests.conftest import make_record, write_jsonl

TINY_CONFIG = {
    "seed": 3,
    "variant": "graph",
    "hidden_dim": 4,
    "graph_layers": 1,
    "dialogue_context_embedding": 6,
    "context_hidden": 5,
    "word_dim": 4,
    "projection_hidden": 4,
    "dialogue_context_dropout": 0.0,
    "epochs": 2,
    "max_decode_len": 5,
    "decoder_hidden": 6,
}


@pytest.fixture
def corpus_path(tmp_path):
    recs = [
        make_record(5, strategies_per_turn=[["propose"], ["hedge_count"], ["family"], [], ["pos_sentiment"]],
                    sale=36 + i)
        for i in range(6)
    ]
    return write_jsonl(tmp_path / "corpus.jsonl", recs)


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


def run_cli(*argv):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return cli.main(list(argv))


class TestTrainEval:
    def test_train_writes_checkpoint_log_and_hash(self, corpus_path, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        code = run_cli("train", "--corpus", str(corpus_path), "--config", str(config_path),
                       "--out", str(out))
        assert code == 0
        assert (out / "model.ckpt").exists()
        assert (out / "training_log.csv").exists()
        summary = json.loads((out / "train_summary.json").read_text())
        assert len(summary["config_hash"]) == 64

    def test_eval_writes_metrics_json(self, corpus_path, config_path, tmp_path):
        out = tmp_path / "run"
        run_cli("train", "--corpus", str(corpus_path), "--config", str(config_path),
                "--out", str(out))
        eval_out = tmp_path / "eval"
        code = run_cli("eval", "--checkpoint", str(out / "model.ckpt"),
                       "--corpus", str(corpus_path), "--train-corpus", str(corpus_path),
                       "--out", str(eval_out))
        assert code == 0
        payload = json.loads((eval_out / "metrics.json").read_text())
        assert "st_f1_micro" in payload["metrics"]
        assert "bleu" in payload["metrics"]
        assert (eval_out / "predictions.jsonl").exists()

    def test_train_twice_same_seed_identical_logs(self, corpus_path, config_path, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_cli("train", "--corpus", str(corpus_path), "--config", str(config_path), "--out", str(out1))
        run_cli("train", "--corpus", str(corpus_path), "--config", str(config_path), "--out", str(out2))
        assert (out1 / "training_log.csv").read_bytes() == (out2 / "training_log.csv").read_bytes()
        assert (out1 / "model.ckpt").read_bytes() == (out2 / "model.ckpt").read_bytes()

    def test_variant_flag_switches_encoder(self, corpus_path, config_path, tmp_path):
        out = tmp_path / "none_run"
        code = run_cli("train", "--corpus", str(corpus_path), "--config", str(config_path),
                       "--variant", "none", "--out", str(out))
        assert code == 0
        summary = json.loads((out / "train_summary.json").read_text())
        assert summary["config"]["variant"] == "none"


class TestSynth:
    def test_synth_writes_corpus(self, tmp_path):
        out = tmp_path / "synth.jsonl"
        code = run_cli("synth", "--rule", "propose:hedge_count", "--rule", "hedge_count:propose",
                       "--dialogues", "8", "--turns", "6", "--seed", "5", "--out", str(out))
        assert code == 0
        corp = C.load_corpus(out, min_turns=5)
        assert len(corp) == 8

    def test_synth_deterministic(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for path in (a, b):
            run_cli("synth", "--rule", "propose:family", "--dialogues", "5",
                    "--turns", "6", "--seed", "9", "--out", str(path))
        assert a.read_bytes() == b.read_bytes()


class TestExplain:
    def test_explain_writes_reports(self, tmp_path):
        trace = {
            "nodes": [{"turn": 0, "label": "family"}, {"turn": 1, "label": "propose"},
                      {"turn": 2, "label": "trade_in"}],
            "layers": [{
                "alpha": [{"src": 0, "dst": 1, "w": 0.4}, {"src": 1, "dst": 1, "w": 0.6},
                          {"src": 0, "dst": 2, "w": 0.1}, {"src": 1, "dst": 2, "w": 0.7},
                          {"src": 2, "dst": 2, "w": 0.2}],
                "clusters": {"S": [[1.0, 0, 0], [0.6, 0.4, 0], [0.2, 0.3, 0.5]],
                             "kept": [1, 2], "fitness": [0.5, 0.6, 0.7]},
            }],
        }
        trace_path = tmp_path / "trace.json"
        trace_path.write_text(json.dumps(trace))
        out = tmp_path / "explain"
        code = run_cli("explain", str(trace_path), "--out", str(out), "--dot")
        assert code == 0
        assert (out / "association_scores.csv").exists()
        assert (out / "propose_boundary.json").exists()
        assert (out / "influence_maps.json").exists()
        assert (out / "influence.dot").exists()
        boundary = json.loads((out / "propose_boundary.json").read_text())
        assert boundary["n_dialogues"] == 1


class TestErrors:
    def test_bad_flags_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["definitely-not-a-command"])
        assert exc.value.code == 2

    def test_missing_corpus_exit_1(self, tmp_path):
        code = run_cli("train", "--corpus", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o"))
        assert code == 1
