"""Command-line surface: subcommands, exit codes, and reproducibility."""

import contextlib
import io
import json
import shutil
import subprocess

import pytest

from vexec.cli import main
from vexec.config import Config
from vexec.guesser import Vocabulary
from vexec.interpreter import format_trace
from vexec.misuse import load_misuse_corpus
from vexec.model import Model

CONVERSION = (
    "def celsius_to_fahrenheit(celsius):\n"
    "    return celsius * 1.8 + 32\n"
    "\n"
    "c = 100\n"
    "f = celsius_to_fahrenheit(c)\n"
)

TINY_CFG = (
    "h = 16\n"
    "encoder_layers = 1\n"
    "encoder_heads = 2\n"
    "executor_layers = 1\n"
    "executor_heads = 2\n"
    "epochs = 1\n"
    "batch_size = 4\n"
    "vocab_size = 64\n"
    "oov_buckets = 16\n"
    "samples_per_batch = 16\n"
)


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic corpora, a tiny config, and one finished training run."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.jsonl"
    labeled = root / "labeled.jsonl"
    cfg = root / "tiny.cfg"
    ckpt = root / "model.ckpt"
    code, _, _ = run_cli("synth", str(corpus), "--n", "8", "--seed", "3",
                         "--min-stmts", "6", "--max-stmts", "10")
    assert code == 0
    code, _, _ = run_cli("synth", str(labeled), "--n", "8", "--seed", "4",
                         "--min-stmts", "6", "--max-stmts", "10",
                         "--misuse-fraction", "0.5")
    assert code == 0
    cfg.write_text(TINY_CFG, encoding="utf-8")
    code, out, _ = run_cli("train", str(corpus), "--out", str(ckpt),
                           "--config", str(cfg))
    assert code == 0
    final = json.loads(out.strip().splitlines()[-1])
    return {"root": root, "corpus": corpus, "labeled": labeled,
            "cfg": cfg, "ckpt": ckpt, "final": final}


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------


class TestTrace:
    def test_trace_matches_library_output(self, tmp_path):
        path = tmp_path / "conv.py"
        path.write_text(CONVERSION, encoding="utf-8")
        code, out, _ = run_cli("trace", str(path))
        assert code == 0
        config = Config()
        model = Model.fresh(config, Vocabulary([], config.oov_buckets), seed=0)
        assert out == format_trace(model.run(CONVERSION).trace)

    def test_empty_file_empty_trace(self, tmp_path):
        path = tmp_path / "empty.py"
        path.write_text("", encoding="utf-8")
        code, out, _ = run_cli("trace", str(path))
        assert code == 0
        assert out == ""

    def test_unsupported_construct_exit_two_names_kind(self, tmp_path):
        path = tmp_path / "deco.py"
        path.write_text("@app.route\ndef f():\n    pass\n", encoding="utf-8")
        code, _, err = run_cli("trace", str(path))
        assert code == 2
        assert "Unsupported" in err
        assert "bytes" in err

    def test_syntax_error_exit_two(self, tmp_path):
        path = tmp_path / "bad.py"
        path.write_text("def f(:\n", encoding="utf-8")
        code, _, _ = run_cli("trace", str(path))
        assert code == 2

    def test_pseudocode_annotates_every_line(self, tmp_path):
        path = tmp_path / "conv.py"
        path.write_text(CONVERSION, encoding="utf-8")
        plain = run_cli("trace", str(path))[1].splitlines()
        annotated = run_cli("trace", str(path), "--pseudocode")[1].splitlines()
        assert len(annotated) == len(plain)
        for raw, pretty in zip(plain, annotated):
            assert pretty.startswith(raw)
            assert "#" in pretty

    def test_memory_and_vector_dumps_append(self, tmp_path):
        path = tmp_path / "conv.py"
        path.write_text(CONVERSION, encoding="utf-8")
        plain = run_cli("trace", str(path))[1]
        with_mem = run_cli("trace", str(path), "--dump-memory")[1]
        with_vec = run_cli("trace", str(path), "--dump-vectors")[1]
        assert with_mem.startswith(plain) and "scope" in with_mem[len(plain):]
        assert with_vec.startswith(plain) and "o1\t" in with_vec[len(plain):]

    def test_trace_under_checkpoint_same_structure(self, tmp_path, workspace):
        path = tmp_path / "conv.py"
        path.write_text(CONVERSION, encoding="utf-8")
        fresh = run_cli("trace", str(path), "--config", str(workspace["cfg"]))
        loaded = run_cli("trace", str(path), "--ckpt", str(workspace["ckpt"]))
        assert loaded[0] == 0
        assert loaded[1] == fresh[1]


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------


class TestTrainEval:
    def test_same_seed_byte_identical_checkpoints(self, workspace):
        again = workspace["root"] / "again.ckpt"
        code, _, _ = run_cli("train", str(workspace["corpus"]),
                             "--out", str(again),
                             "--config", str(workspace["cfg"]))
        assert code == 0
        assert again.read_bytes() == workspace["ckpt"].read_bytes()

    def test_eval_reproduces_final_train_record_exactly(self, workspace):
        code, out, _ = run_cli("eval", str(workspace["corpus"]),
                               str(workspace["ckpt"]))
        assert code == 0
        record = json.loads(out)
        final = workspace["final"]
        assert final["event"] == "final_train_eval"
        for key in ("acc1", "acc2", "acc3", "L1", "L2", "L3",
                    "lambda_calls", "scripts_skipped"):
            assert record[key] == final[key]

    def test_metrics_log_echoes_config_and_final_record(self, workspace):
        log = workspace["ckpt"].with_name("model.ckpt.metrics.jsonl")
        lines = [json.loads(l) for l in
                 log.read_text(encoding="utf-8").splitlines()]
        assert lines[0]["event"] == "config"
        assert lines[0]["config"]["h"] == 16
        assert "retained" in lines[0]["filter_report"]
        assert lines[-1]["event"] == "final_train_eval"
        assert all("step" in row for row in lines[1:-1])

    def test_train_with_misuse_corpus_writes_second_log(self, workspace):
        out_ckpt = workspace["root"] / "mis.ckpt"
        code, _, _ = run_cli("train", str(workspace["corpus"]),
                             "--out", str(out_ckpt),
                             "--config", str(workspace["cfg"]),
                             "--misuse", str(workspace["labeled"]))
        assert code == 0
        log = workspace["root"] / "mis.ckpt.misuse.jsonl"
        lines = [json.loads(l) for l in
                 log.read_text(encoding="utf-8").splitlines()]
        assert lines[0]["event"] == "config"
        assert len(lines) > 1

    def test_eval_corrupt_checkpoint_exit_three(self, workspace, tmp_path):
        bogus = tmp_path / "bogus.ckpt"
        bogus.write_bytes(b"not a checkpoint")
        code, _, err = run_cli("eval", str(workspace["corpus"]), str(bogus))
        assert code == 3
        assert "internal fault" in err


# ---------------------------------------------------------------------------
# misuse
# ---------------------------------------------------------------------------


class TestMisuse:
    def test_misuse_prints_metrics_and_writes_predictions(self, workspace):
        pred = workspace["root"] / "preds.jsonl"
        code, out, _ = run_cli("misuse", str(workspace["labeled"]),
                               str(workspace["ckpt"]), "--pred", str(pred))
        assert code == 0
        metrics = json.loads(out)
        for key in ("auc", "localization_accuracy", "argument_accuracy",
                    "repair_accuracy", "repair_chance"):
            assert key in metrics
        rows = [json.loads(l) for l in
                pred.read_text(encoding="utf-8").splitlines()]
        examples = load_misuse_corpus(str(workspace["labeled"]))
        assert len(rows) == len(examples)
        for row in rows:
            assert set(row) == {"script_id", "p_misuse", "call_record",
                                "arg_index", "repair_name",
                                "explanation_path"}


# ---------------------------------------------------------------------------
# stats / synth
# ---------------------------------------------------------------------------


class TestStats:
    def test_overlong_file_counted(self, tmp_path):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        long_code = "x = 1\n# " + "a" * 9993
        assert len(long_code) == 10001
        (corpus / "long.py").write_text(long_code, encoding="utf-8")
        (corpus / "ok.py").write_text("y = 2\n", encoding="utf-8")
        code, out, _ = run_cli("stats", str(corpus))
        assert code == 0
        report = json.loads(out)
        assert report["total"] == 2
        assert report["too_long"] == 1
        assert report["retained"] == 1

    def test_histogram_files_written(self, tmp_path, workspace):
        hist = tmp_path / "hist"
        code, _, _ = run_cli("stats", str(workspace["corpus"]),
                             "--hist-dir", str(hist))
        assert code == 0
        assert (hist / "char_hist.csv").exists()
        assert (hist / "lambda_hist.csv").exists()


class TestSynth:
    def test_plain_corpus_line_count(self, tmp_path):
        out_path = tmp_path / "c.jsonl"
        code, _, _ = run_cli("synth", str(out_path), "--n", "5",
                             "--seed", "7", "--min-stmts", "5",
                             "--max-stmts", "9")
        assert code == 0
        rows = [json.loads(l) for l in
                out_path.read_text(encoding="utf-8").splitlines()]
        assert len(rows) == 5
        assert all(set(row) == {"code"} for row in rows)

    def test_labeled_corpus_loads(self, workspace):
        examples = load_misuse_corpus(str(workspace["labeled"]))
        assert len(examples) == 8
        assert any(e.has_misuse for e in examples)
        assert any(not e.has_misuse for e in examples)

    def test_bad_fraction_exit_one(self, tmp_path):
        code, _, _ = run_cli("synth", str(tmp_path / "x.jsonl"),
                             "--misuse-fraction", "2.0")
        assert code == 1


# ---------------------------------------------------------------------------
# usage and exit codes
# ---------------------------------------------------------------------------


class TestUsage:
    def test_help_lists_subcommands(self):
        code, out, _ = run_cli("--help")
        assert code == 0
        for name in ("trace", "train", "eval", "misuse", "stats", "synth"):
            assert name in out

    def test_no_subcommand_exit_one(self):
        assert run_cli()[0] == 1

    def test_unknown_flag_exit_one(self, tmp_path):
        path = tmp_path / "a.py"
        path.write_text("x = 1\n", encoding="utf-8")
        assert run_cli("trace", str(path), "--bogus")[0] == 1

    def test_bad_set_syntax_exit_one(self, tmp_path):
        path = tmp_path / "a.py"
        path.write_text("x = 1\n", encoding="utf-8")
        assert run_cli("trace", str(path), "--set", "h")[0] == 1

    def test_unknown_config_key_exit_one(self, tmp_path):
        path = tmp_path / "a.py"
        path.write_text("x = 1\n", encoding="utf-8")
        assert run_cli("trace", str(path), "--set", "bogus=1")[0] == 1

    def test_invalid_config_value_exit_one(self, tmp_path):
        path = tmp_path / "a.py"
        path.write_text("x = 1\n", encoding="utf-8")
        assert run_cli("trace", str(path), "--set", "h=-4")[0] == 1

    def test_missing_file_exit_one(self, tmp_path):
        assert run_cli("trace", str(tmp_path / "nope.py"))[0] == 1

    @pytest.mark.skipif(shutil.which("vexec") is None,
                        reason="console script not on PATH")
    def test_console_script_entry_point(self, tmp_path):
        path = tmp_path / "a.py"
        path.write_text("x = 1\n", encoding="utf-8")
        proc = subprocess.run(["vexec", "trace", str(path)],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "GUESS\tx" not in proc.stdout  # store of literal guess
        assert "STORE\tx" in proc.stdout
