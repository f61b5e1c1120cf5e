import os

import pytest

from tagteam import cli
from tagteam.corpus import write_conll
from tagteam.datagen import memorization_corpus


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def write_corpus_files(bundle, stem, directory):
    paths = {}
    for split in ("train", "dev", "test"):
        path = os.path.join(directory, f"{stem}.{split}")
        with open(path, "w", encoding="utf-8") as fh:
            write_conll(getattr(bundle, split), fh, bundle.suffix)
        paths[split] = path
    return paths


def toy_setup(directory, n_datasets=1, n_train=10, n_dev=4):
    lines = [
        "batch_size = 5",
        "d_word = 6",
        "d_char = 3",
        "d_clwe = 6",
        "d_lstm = 4",
        "dropout_clwe = 0.2",
        "dropout_bilstm = 0.1",
        "max_epochs = 2",
        "prep_patience = 4",
        "max_phases = 1",
        "seed = 3",
    ]
    for i in range(n_datasets):
        bundle = memorization_corpus(20 + i, n_train=n_train, n_dev=n_dev, name=f"ds{i}")
        paths = write_corpus_files(bundle, f"ds{i}", directory)
        lines += [f"dataset.ds{i}.{split} = {paths[split]}" for split in ("train", "dev", "test")]
    config_path = os.path.join(directory, "run.cfg")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return config_path


def test_score_identical_files_perfect(workdir, capsys):
    bundle = memorization_corpus(1, n_train=6, n_dev=2)
    path = str(workdir / "gold.conll")
    with open(path, "w", encoding="utf-8") as fh:
        write_conll(bundle.train, fh)
    assert cli.main(["score", "--pred", path, "--gold", path]) == 0
    out = capsys.readouterr().out
    assert "P=1.0000 R=1.0000 F1=1.0000" in out


def test_score_reports_taxonomy(workdir, capsys):
    gold = "a\tS\nb\tO\n\nc\tB\nd\tE\n"
    pred = "a\tO\nb\tS\n\nc\tB\nd\tE\n"
    (workdir / "gold.conll").write_text(gold)
    (workdir / "pred.conll").write_text(pred)
    other = "a\tO\nb\tS\n\nc\tO\nd\tO\n"
    (workdir / "other.conll").write_text(other)
    code = cli.main(
        ["score", "--pred", "pred.conll", "--gold", "gold.conll", "--other", "other.conll"]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "C=1 M=2 N=2" in out
    assert "fp_bio_entity=1" in out


def test_score_token_mismatch_is_error(workdir, capsys):
    (workdir / "a.conll").write_text("x\tS\n")
    (workdir / "b.conll").write_text("y\tS\n")
    assert cli.main(["score", "--pred", "a.conll", "--gold", "b.conll"]) == 1
    assert "token mismatch" in capsys.readouterr().err


def test_convert_bio_to_bioes(workdir):
    (workdir / "in.conll").write_text(
        "a\tB-Gene\nb\tI-Gene\nc\tI-Gene\nd\tO\n\ne\tB-Gene\n"
    )
    code = cli.main(
        ["convert", "--from", "bio", "--to", "bioes", "--input", "in.conll", "--output", "out.conll"]
    )
    assert code == 0
    assert (workdir / "out.conll").read_text() == (
        "a\tB-Gene\nb\tI-Gene\nc\tE-Gene\nd\tO\n\ne\tS-Gene\n"
    )


def test_convert_roundtrips_back_to_bio(workdir):
    (workdir / "in.conll").write_text("a\tB\nb\tI\nc\tI\n\nd\tB\n")
    cli.main(["convert", "--from", "bio", "--to", "bioes", "--input", "in.conll", "--output", "mid.conll"])
    cli.main(["convert", "--from", "bioes", "--to", "bio", "--input", "mid.conll", "--output", "back.conll"])
    assert (workdir / "back.conll").read_text() == (workdir / "in.conll").read_text()


def test_missing_file_exits_one(workdir, capsys):
    assert cli.main(["score", "--pred", "nope.conll", "--gold", "nope.conll"]) == 1
    assert "no such file" in capsys.readouterr().err


def test_unknown_subcommand_exits_two(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["frobnicate"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        cli.main(["score", "--pred", "x", "--gold", "y", "--bogus"])
    assert err.value.code == 2


def test_prep_writes_metrics_and_checkpoint(workdir, capsys):
    config = toy_setup(str(workdir))
    assert cli.main(["prep", "--config", config, "--out", "run1"]) == 0
    assert os.path.exists("run1/metrics.log")
    assert os.path.exists("run1/prep.ckpt")
    lines = open("run1/metrics.log").read().strip().split("\n")
    assert len(lines) == 1
    assert lines[0].startswith("0,ds0,dev,")


def test_prep_seeded_reruns_are_byte_identical(workdir, capsys):
    config = toy_setup(str(workdir))
    assert cli.main(["prep", "--config", config, "--seed", "7", "--out", "runA"]) == 0
    assert cli.main(["prep", "--config", config, "--seed", "7", "--out", "runB"]) == 0
    log_a = open("runA/metrics.log", "rb").read()
    log_b = open("runB/metrics.log", "rb").read()
    assert log_a == log_b
    ckpt_a = open("runA/prep.ckpt", "rb").read()
    ckpt_b = open("runB/prep.ckpt", "rb").read()
    assert ckpt_a == ckpt_b


def test_full_pipeline_collab_eval_predict(workdir, capsys):
    config = toy_setup(str(workdir), n_datasets=2)
    assert cli.main(["prep", "--config", config, "--out", "run"]) == 0
    assert cli.main(
        ["collab", "--config", config, "--checkpoint", "run/prep.ckpt", "--out", "run"]
    ) == 0
    assert os.path.exists("run/last.ckpt")
    assert os.path.exists("run/best.ckpt")
    log = open("run/metrics.log").read()
    assert "1,ds0,dev," in log and "1,ds1,dev," in log

    assert cli.main(
        ["eval", "--config", config, "--checkpoint", "run/last.ckpt",
         "--dataset", "ds0", "--split", "test", "--report", "report.txt"]
    ) == 0
    out = capsys.readouterr().out
    assert "## with repair" in out and "## without repair" in out
    report = open("report.txt").read()
    assert "f1=" in report and "precision=" in report

    (workdir / "tokens.txt").write_text("a\nb\n\nc\n")
    assert cli.main(
        ["predict", "--config", config, "--checkpoint", "run/last.ckpt",
         "--dataset", "ds0", "--input", "tokens.txt", "--output", "tagged.txt"]
    ) == 0
    tagged = open("tagged.txt").read().strip().split("\n")
    assert len(tagged) == 4  # 3 token lines + 1 blank separator
    assert all("\t" in line for line in tagged if line)


def test_eval_rejects_wrong_fingerprint(workdir, capsys):
    config = toy_setup(str(workdir))
    assert cli.main(["prep", "--config", config, "--out", "run"]) == 0
    with open(config, "a", encoding="utf-8") as fh:
        fh.write("max_epochs = 3\n")
    code = cli.main(
        ["eval", "--config", config, "--checkpoint", "run/prep.ckpt", "--dataset", "ds0",
         "--split", "dev"]
    )
    assert code == 1
    assert "different configuration" in capsys.readouterr().err
