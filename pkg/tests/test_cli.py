import hashlib
import json
import subprocess
import sys

import pytest

from _pipeline import TOY_EXTRACTOR, run, run_pipeline, write_config
from cvdetect.cli import build_parser, main, read_config
from cvdetect.corpus import load_manifest
from cvdetect.extractor import Checkpoint

SMALL = ("--consonants", "s,l", "--vowels", "a", "--tokens-per-class", "16",
         "--n-train-speakers", "2", "--n-test-speakers", "2", "--n-atypical-speakers", "1",
         "--atypical-rate", "0.2")
TINY_NET = {**TOY_EXTRACTOR, "hidden-units": "8", "embedding-dim": "4", "epochs": "1"}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("cli"), SMALL, TINY_NET)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def help_text(command):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    return sub.choices[command].format_help()


def test_pipeline_writes_every_artifact(small_run):
    for path in small_run.values():
        assert path.exists() and path.stat().st_size > 0
    rep = json.loads(small_run["report_json"].read_text())
    assert set(rep["overall"]) == {"C", "CV", "C+CV"}
    assert set(json.loads(small_run["sweep_json"].read_text())) == {"w", "lambda_C", "lambda_CV"}
    assert Checkpoint.load(small_run["ckpt_c"]).config.hidden_units == 8


def test_stages_do_not_modify_inputs(small_run, tmp_path):
    before = {k: digest(small_run[k]) for k in ("manifest", "features", "ckpt_c", "emb_c", "emb_cv")}
    run("embed", "--checkpoint", small_run["ckpt_c"], "--manifest", small_run["manifest"],
        "--features", small_run["features"], "--out", tmp_path / "again.emb")
    run("score", "--manifest", small_run["manifest"], "--emb-c", small_run["emb_c"],
        "--emb-cv", small_run["emb_cv"], "--ckpt-c", small_run["ckpt_c"],
        "--ckpt-cv", small_run["ckpt_cv"], "--out", tmp_path / "p.tsv")
    assert {k: digest(small_run[k]) for k in before} == before
    assert digest(tmp_path / "again.emb") == digest(small_run["emb_c"])
    assert digest(tmp_path / "p.tsv") == digest(small_run["pairs"])


def test_sweep_from_tables_matches_sweep_from_pairs(small_run, tmp_path, capsys):
    run("sweep", "--manifest", small_run["manifest"], "--emb-c", small_run["emb_c"],
        "--emb-cv", small_run["emb_cv"], "--ckpt-c", small_run["ckpt_c"],
        "--ckpt-cv", small_run["ckpt_cv"], "--param", "all", "--out", tmp_path / "s")
    assert (tmp_path / "s.txt").read_bytes() == small_run["sweep_txt"].read_bytes()
    capsys.readouterr()
    run("sweep", "--pairs", small_run["pairs"], "--param", "w")
    out = capsys.readouterr().out
    assert out.startswith("sweep w\n") and "sweep lambda_C" not in out
    assert "sweep: best w=" in out


def test_score_rejects_swapped_kinds(small_run, capsys):
    code = main(["score", "--manifest", str(small_run["manifest"]), "--emb-c", str(small_run["emb_cv"]),
                 "--emb-cv", str(small_run["emb_c"]), "--ckpt-c", str(small_run["ckpt_c"]),
                 "--ckpt-cv", str(small_run["ckpt_cv"]), "--out", "unused.tsv"])
    assert code == 1
    assert "expected a C file, found CV" in capsys.readouterr().err


def test_synth_is_deterministic(tmp_path):
    run("synth", "--out", tmp_path / "a", *SMALL, "--seed", "4")
    run("synth", "--out", tmp_path / "b", *SMALL, "--seed", "4")
    run("synth", "--out", tmp_path / "c", *SMALL, "--seed", "5")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "tok00000.wav").read_bytes() != (tmp_path / "c" / "tok00000.wav").read_bytes()


def test_synth_preset_and_overrides(tmp_path):
    run("synth", "--out", tmp_path, *SMALL, "--preset", "corrupted")
    m = load_manifest(tmp_path / "manifest.tsv")
    assert {r.consonant_label for r in m.records} == {"s", "l"}


def test_config_file_supplies_defaults_and_flags_win(tmp_path):
    cfg = write_config(tmp_path / "synth.cfg", {"tokens_per_class": "6", "vowels": "a",
                                               "consonants": "p,k"})
    run("synth", "--config", cfg, "--out", tmp_path / "x")
    m = load_manifest(tmp_path / "x" / "manifest.tsv")
    assert len(m.records) == 2 * 6 * 2
    run("synth", "--config", cfg, "--tokens-per-class", "8", "--out", tmp_path / "y")
    assert len(load_manifest(tmp_path / "y" / "manifest.tsv").records) == 2 * 8 * 2


def test_read_config_format(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nlearning_rate = 0.01  # inline\n\nepochs=2\n")
    assert read_config(path) == {"learning-rate": "0.01", "epochs": "2"}
    path.write_text("epochs 2\n")
    assert main(["train", "--config", str(path)]) == 1


def test_empty_pairs_file_is_an_error(tmp_path, capsys):
    (tmp_path / "empty.tsv").write_text("")
    assert main(["eval", "--pairs", str(tmp_path / "empty.tsv"), "--out", str(tmp_path / "r")]) == 1
    err = capsys.readouterr().err
    assert "empty.tsv" in err and "no scored pairs" in err
    assert not (tmp_path / "r.txt").exists()


def test_missing_input_file_names_the_file(tmp_path, capsys):
    missing = tmp_path / "nope.tsv"
    assert main(["featurize", "--manifest", str(missing), "--out", str(tmp_path / "f.bin")]) == 1
    assert "nope.tsv" in capsys.readouterr().err


def test_malformed_manifest_names_file_and_line(tmp_path, capsys):
    (tmp_path / "m.tsv").write_text("garbage\n")
    assert main(["featurize", "--manifest", str(tmp_path / "m.tsv"), "--out", str(tmp_path / "f.bin")]) == 1
    assert "m.tsv" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["eval"],
    ["score", "--w", "1.5"],
    ["eval", "--pairs", "p", "--out", "r", "--grid-step", "0.3"],
    ["frobnicate"],
])
def test_usage_errors_exit_one(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_invalid_extractor_setting_is_validation_error(small_run, tmp_path, capsys):
    code = main(["train", "--manifest", str(small_run["manifest"]), "--features", str(small_run["features"]),
                 "--kind", "C", "--out", str(tmp_path / "x.ckpt"), "--hidden-units", "0"])
    assert code == 1
    assert "hidden_units" in capsys.readouterr().err


@pytest.mark.parametrize("command, published", [
    ("train", ["Bi-GRU layers (published: 3)", "(published: 400)", "(published: 128)",
               "(published: 0.5)", "(published: 0.001)", "(published: 0.0005)",
               "(published: 256)", "(published: 5)", "(published: 0.9,1.1)"]),
    ("featurize", ["(published: 80)", "(published: 0.9,1.1)"]),
    ("score", ["0.9 child-only", "0.2 child-only", "0.4 child-only"]),
])
def test_help_lists_published_defaults(command, published):
    text = " ".join(help_text(command).split())
    for snippet in published:
        assert snippet in text


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "cvdetect", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in ("synth", "featurize", "train", "embed", "score", "eval", "sweep"):
        assert name in out.stdout
    bad = subprocess.run([sys.executable, "-m", "cvdetect", "eval"], capture_output=True, text=True)
    assert bad.returncode == 1
