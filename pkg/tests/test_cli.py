import io
import json
import re

import numpy as np
import pytest

from discst.cli import main
from discst.corpus import read_tsv, render, write_tsv
from discst.labels import PunctLabel as L
from discst.model import load_checkpoint
from discst.synthetic import generate_benchmark

TINY = {
    "model": {"num_layers": 1, "d_model": 16, "num_heads": 2, "d_ff": 16, "max_positions": 32},
    "selftrain": {"epochs": 1, "batch_size": 8, "max_len": 32, "chunk_overlap": 8},
    "window": {"window": 32, "left_overlap": 8, "right_overlap": 4},
    "tune": {"alphas": [0.5], "betas_human": [0.0], "betas_pseudo": [0.1], "overlaps": [[0, 0], [8, 4], [8, 8]]},
    "ablation": {"alphas": [1.0, 0.5], "shared_betas": [0.0, 0.1], "pairs": [[0.05, 0.2]]},
}

SAMPLE = """So, we went to the market. Did you see it?
They bought apples, pears, and plums.

well... what now?? I think we left, but they stayed.
"""


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    b = generate_benchmark(train_words=1200, unlabeled_words=800, dev_words=300, test_words=300, seed=5,
                           num_nouns=50)
    write_tsv(b.train, root / "train.tsv")
    write_tsv(b.dev, root / "dev.tsv")
    write_tsv(b.test, root / "test.tsv")
    (root / "raw.txt").write_text("\n".join(" ".join(u) for u in b.unlabeled) + "\n")
    cfg = dict(TINY, data={"train": "train.tsv", "dev": "dev.tsv", "test": "test.tsv", "unlabeled": "raw.txt",
                           "vocab_size": 300})
    (root / "config.json").write_text(json.dumps(cfg))
    return root


@pytest.fixture(scope="module")
def trained(corpus_dir, tmp_path_factory):
    run = tmp_path_factory.mktemp("train")
    assert main(["-q", "train", "--config", str(corpus_dir / "config.json"), "--run-dir", str(run)]) == 0
    return run


def test_prepare_counts_and_idempotence(tmp_path, capsys):
    src = tmp_path / "sample.txt"
    src.write_text(SAMPLE)
    assert main(["-q", "prepare", str(src), "--out", str(tmp_path / "a")]) == 0
    printed = capsys.readouterr().out
    assert main(["-q", "prepare", str(src), "--out", str(tmp_path / "b")]) == 0
    for name in ("data.tsv", "vocab.txt", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    examples = read_tsv(tmp_path / "a" / "data.tsv")
    nonblank = [ln for ln in SAMPLE.splitlines() if ln.strip()]
    assert f"examples\t{len(examples)}" in printed
    assert len(examples) == len(nonblank)
    # independent count: a run of marks right after a word labels that word by its first mark
    runs = re.findall(r"\w([,.?]+)", SAMPLE)
    expected = {"COMMA": sum(r[0] == "," for r in runs), "PERIOD": sum(r[0] == "." for r in runs),
                "QUESTION": sum(r[0] == "?" for r in runs)}
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    for name, n in expected.items():
        assert summary["labels"][name] == n
        assert f"{name}\t{n}" in printed


def test_train_run_directory(trained):
    for name in ("config.json", "model.npz", "vocab.txt", "report.json"):
        assert (trained / name).exists()
    report = json.loads((trained / "report.json").read_text())
    assert set(report["metrics"]) == {"dev", "test"}
    assert report["train"]["best_val_f1"] == max(report["train"]["val_f1"])


def test_config_echo_reproduces_run(trained, corpus_dir, tmp_path):
    echo = json.loads((trained / "config.json").read_text())
    for key in ("train", "dev", "test", "unlabeled"):
        echo["data"][key] = str(corpus_dir / echo["data"][key])
    (tmp_path / "echo.json").write_text(json.dumps(echo))
    assert main(["-q", "train", "--config", str(tmp_path / "echo.json"), "--run-dir", str(tmp_path / "r")]) == 0
    assert load_checkpoint(tmp_path / "r" / "model.npz").fingerprint() == \
        load_checkpoint(trained / "model.npz").fingerprint()
    assert (tmp_path / "r" / "report.json").read_text() != ""
    a = json.loads((tmp_path / "r" / "report.json").read_text())["metrics"]
    b = json.loads((trained / "report.json").read_text())["metrics"]
    assert a == b


def test_flag_overrides_echoed(corpus_dir, tmp_path):
    run = tmp_path / "run"
    assert main(["-q", "train", "--config", str(corpus_dir / "config.json"), "--run-dir", str(run), "--seed", "4",
                 "--set", "selftrain.learning_rate=0.01", "--left-overlap", "6"]) == 0
    echo = json.loads((run / "config.json").read_text())
    assert echo["seeds"] == [4]
    assert echo["selftrain"]["learning_rate"] == 0.01
    assert echo["window"]["left_overlap"] == 6


@pytest.mark.parametrize("mode", ["--vanilla", "--disc"])
def test_selftrain(corpus_dir, tmp_path, mode):
    run = tmp_path / "st"
    args = ["-q", "selftrain", mode, "--config", str(corpus_dir / "config.json"), "--run-dir", str(run),
            "--set", "selftrain.alpha=0.5", "--set", "selftrain.beta_pseudo=0.2"]
    assert main(args) == 0
    pseudo = read_tsv(run / "pseudo.tsv")
    assert len(pseudo) == len((corpus_dir / "raw.txt").read_text().splitlines())
    echo = json.loads((run / "config.json").read_text())["selftrain"]
    assert (echo["alpha"], echo["beta_pseudo"]) == ((1.0, 0.0) if mode == "--vanilla" else (0.5, 0.2))


def test_pseudo_label_and_decode(trained, corpus_dir, tmp_path, monkeypatch, capsys):
    out = tmp_path / "p.tsv"
    assert main(["-q", "pseudo-label", "--checkpoint", str(trained / "model.npz"),
                 "--input", str(corpus_dir / "raw.txt"), "--out", str(out)]) == 0
    pseudo = read_tsv(out)
    capsys.readouterr()
    text = (corpus_dir / "raw.txt").read_text()
    monkeypatch.setattr("sys.stdin", io.StringIO(text.splitlines()[0] + "\n\n" + text.splitlines()[1] + "\n"))
    assert main(["-q", "decode", "--checkpoint", str(trained / "model.npz"), "--lines-per-batch", "2"]) == 0
    lines = capsys.readouterr().out.split("\n")
    assert lines[1] == "" and len(lines) == 4
    # streaming decode agrees with pseudo-labeling under the same window
    assert lines[0] == render(pseudo[0])
    assert lines[2] == render(pseudo[1])


def test_decode_window_flags_validated(trained, tmp_path):
    src = tmp_path / "in.txt"
    src.write_text("we went home\n")
    assert main(["-q", "decode", "--checkpoint", str(trained / "model.npz"), "--input", str(src),
                 "--window", "10", "--left-overlap", "5", "--right-overlap", "5"]) == 1
    assert main(["-q", "decode", "--checkpoint", str(trained / "model.npz"), "--input", str(src),
                 "--window", "64"]) == 1


def test_eval_formats(tmp_path, capsys):
    from discst.corpus import LabeledExample

    words = ("a", "b", "c", "d")
    write_tsv([LabeledExample(words, (L.NONE, L.PERIOD, L.NONE, L.COMMA))], tmp_path / "gold.tsv")
    write_tsv([LabeledExample(words, (L.NONE, L.PERIOD, L.COMMA, L.NONE))], tmp_path / "pred.tsv")
    assert main(["eval", str(tmp_path / "pred.tsv"), str(tmp_path / "gold.tsv")]) == 0
    assert "f1 = 0.500000" in capsys.readouterr().out
    assert main(["eval", str(tmp_path / "pred.tsv"), str(tmp_path / "gold.tsv"), "--format", "json",
                 "--compare", str(tmp_path / "gold.tsv"), "--trials", "1000"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["overall"]["f1"] == 0.5 and 0 < out["p_value"] <= 1
    assert main(["eval", str(tmp_path / "pred.tsv"), str(tmp_path / "gold.tsv"), "--format", "table",
                 "--name", "mine"]) == 0
    assert "mine" in capsys.readouterr().out


def test_eval_token_mismatch_is_data_error(tmp_path):
    from discst.corpus import LabeledExample

    write_tsv([LabeledExample(("a", "b"), (L.NONE, L.PERIOD))], tmp_path / "gold.tsv")
    write_tsv([LabeledExample(("a", "x"), (L.NONE, L.PERIOD))], tmp_path / "pred.tsv")
    assert main(["eval", str(tmp_path / "pred.tsv"), str(tmp_path / "gold.tsv")]) == 2


def test_tune_window_and_hyper(corpus_dir, tmp_path):
    run = tmp_path / "tune"
    assert main(["-q", "tune", "--config", str(corpus_dir / "config.json"), "--run-dir", str(run)]) == 0
    result = json.loads((run / "tune.json").read_text())
    assert len(result["window"]["leaderboard"]) == 3
    assert len(result["hyper"]) == 1


def test_ablate_synthetic(tmp_path, capsys):
    cfg = dict(TINY, data={"synthetic": {"train_words": 1000, "unlabeled_words": 600, "dev_words": 300,
                                         "test_words": 300, "num_nouns": 40}, "vocab_size": 300})
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["-q", "ablate", "--config", str(tmp_path / "c.json"), "--run-dir", str(tmp_path / "ab"),
                 "--seeds", "0"]) == 0
    table = (tmp_path / "ab" / "ablation.txt").read_text().splitlines()
    assert [t[:24].strip() for t in table[1:6]] == ["baseline", "vanilla ST", "+ weighted loss",
                                                   "+ label smoothing", "+ discriminative LS"]
    assert capsys.readouterr().out.splitlines()[0] == table[0]
    saved = json.loads((tmp_path / "ab" / "ablation.json").read_text())
    assert len(saved["seeds"]) == 1 and len(saved["seeds"][0]["val_f1"]) == 5


def test_exit_codes(tmp_path, corpus_dir, monkeypatch):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["selftrain", "--config", str(corpus_dir / "config.json"), "--run-dir", str(tmp_path)]) == 1
    assert main(["prepare", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "bad.json").write_text(json.dumps({"model": {"depth": 3}}))
    assert main(["-q", "train", "--config", str(tmp_path / "bad.json"), "--run-dir", str(tmp_path / "r")]) == 1
    (tmp_path / "nodata.json").write_text(json.dumps({"data": {"train": "nope.tsv", "dev": "nope.tsv"}}))
    assert main(["-q", "train", "--config", str(tmp_path / "nodata.json"), "--run-dir", str(tmp_path / "r")]) == 2
    bad_tsv = tmp_path / "broken.tsv"
    bad_tsv.write_text("word\tNOT_A_LABEL\n")
    assert main(["eval", str(bad_tsv), str(bad_tsv)]) == 2
    assert main(["-q", "train", "--config", str(corpus_dir / "config.json"), "--run-dir", str(tmp_path / "nan"),
                 "--set", "selftrain.learning_rate=1e300", "--set", "selftrain.grad_clip=null"]) == 3


def test_data_error_for_labels_outside_label_set(tmp_path, corpus_dir):
    from discst.corpus import LabeledExample

    write_tsv([LabeledExample(("a", "b"), (L.ENUM_COMMA, L.PERIOD))], tmp_path / "t.tsv")
    cfg = dict(TINY, data={"train": str(tmp_path / "t.tsv"), "dev": str(tmp_path / "t.tsv")})
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["-q", "train", "--config", str(tmp_path / "c.json"), "--run-dir", str(tmp_path / "r")]) == 2
    cfg["label_set"] = "chinese5"
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["-q", "train", "--config", str(tmp_path / "c.json"), "--run-dir", str(tmp_path / "r")]) == 0
    params = load_checkpoint(tmp_path / "r" / "model.npz")
    assert params.config.num_classes == 5
    assert np.all(np.isfinite(params["cls.w"]))
