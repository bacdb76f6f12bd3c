import json
import shutil
import subprocess
import sys

import pytest

from comformer import cli
from comformer import pipeline as P
from conftest import FIXTURES

SMALL = [
    "--set", "n_test=8", "--set", "n_valid=8", "--set", "bpe_vocab_size=400", "--set", "batch_size=16",
    "--set", "beam_width=2", "--set", "model.d_model=16", "--set", "model.heads=2", "--set", "model.layers=1",
    "--set", "model.d_ff=32", "--set", "model.dropout=0", "--set", "model.max_comment_len=12",
]
ADD = "public int add(int a, int b) { return a + b; }"


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    code = cli.main(["run", "--corpus", str(FIXTURES / "corpus.jsonl"), "--out", str(out), "--epochs", "1", *SMALL])
    assert code == cli.EXIT_OK
    return out


def test_run_writes_every_stage(run_dir):
    for rel in ("config.json", "bpe/vocab.txt", "data/test.ids.jsonl", "checkpoint/params.bin", "eval/report.txt"):
        assert (run_dir / rel).exists()
    assert json.loads((run_dir / "config.json").read_text())["epochs"] == 1


def test_generate_from_file_and_stdin(run_dir, tmp_path, capsys, monkeypatch):
    src = tmp_path / "m.java"
    src.write_text(ADD, encoding="utf-8")
    assert cli.main(["generate", "--checkpoint", str(run_dir / "checkpoint"), "--input", str(src), "--beam", "1"]) == 0
    from_file = capsys.readouterr().out
    monkeypatch.setattr(sys, "stdin", __import__("io").StringIO(ADD))
    assert cli.main(["generate", "--checkpoint", str(run_dir / "checkpoint"), "--beam", "1"]) == 0
    assert capsys.readouterr().out == from_file == P.generate(run_dir / "checkpoint", ADD, beam=1) + "\n"


def test_unparseable_input_is_a_data_error(run_dir, tmp_path, capsys):
    src = tmp_path / "bad.java"
    src.write_text("public int f( { return 1; }", encoding="utf-8")
    assert cli.main(["generate", "--checkpoint", str(run_dir / "checkpoint"), "--input", str(src)]) == cli.EXIT_DATA
    assert "'{'" in capsys.readouterr().err


def test_evaluate_with_bucket_override(run_dir, capsys):
    assert cli.main(["evaluate", "--config", str(run_dir / "config.json"), "--bucket-width", "10"]) == 0
    assert "[buckets]" in capsys.readouterr().out
    assert json.loads((run_dir / "eval" / "config.json").read_text())["bucket_width"] == 10


def test_sample_and_stats(run_dir, tmp_path, capsys):
    assert cli.main(["sample", "--config", str(run_dir / "config.json")]) == 0
    assert (run_dir / "sample" / "human_study.tsv").exists()
    report = tmp_path / "stats.txt"
    assert cli.main(["stats", "--corpus", str(FIXTURES / "corpus.jsonl"), "--output", str(report)]) == 0
    assert "pairs: 80" in capsys.readouterr().out
    assert report.read_text().startswith("pairs: 80")


def test_resume_via_cli(run_dir, tmp_path):
    out = tmp_path / "r"
    shutil.copytree(run_dir, out)
    cfg = ["--config", str(out / "config.json"), "--out", str(out)]
    assert cli.main(["train", *cfg, "--epochs", "2", "--resume"]) == 0
    assert len((out / "train_log.tsv").read_text().splitlines()) == 1 + 2 * 4


def test_usage_errors_exit_one(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--epochs", "many"])
    assert exc.value.code == cli.EXIT_USAGE
    assert cli.main(["train", "--set", "no_such_key=1", "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert cli.main(["train", "--set", "model.fusion=stacked", "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_data_errors_exit_two(tmp_path):
    assert cli.main(["stats", "--corpus", str(tmp_path / "missing.jsonl")]) == cli.EXIT_DATA
    bad = tmp_path / "bad.jsonl"
    bad.write_text("nope\nnope\n", encoding="utf-8")
    assert cli.main(["train-bpe", "--corpus", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA
    assert cli.main(["generate", "--checkpoint", str(tmp_path), "--input", str(bad)]) == cli.EXIT_DATA
    broken = tmp_path / "cfg.json"
    broken.write_text("{", encoding="utf-8")
    assert cli.main(["train", "--config", str(broken)]) == cli.EXIT_DATA


def test_internal_errors_exit_three(monkeypatch, tmp_path):
    def explode(config):
        raise AssertionError("invariant broken")

    monkeypatch.setattr(P, "stage_preprocess", explode)
    assert cli.main(["preprocess", "--out", str(tmp_path)]) == cli.EXIT_INTERNAL


def test_console_script_is_installed():
    exe = shutil.which("comformer")
    cmd = [exe] if exe else [sys.executable, "-m", "comformer.cli"]
    result = subprocess.run([*cmd, "--help"], capture_output=True, text=True)
    assert result.returncode == 0 and "generate" in result.stdout
