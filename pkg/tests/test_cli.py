import json

import pytest

from dualstream import cli
from dualstream.data import load_cohort

TINY = {
    "generator": {"n_rois": 8, "n_timepoints": 40},
    "pretrain": {"corpus_size": 8, "epochs": 1},
    "model": {
        "ts": {"layers": 1, "heads": 2, "model_dim": 8, "ff_multiplier": 2, "max_rois": 16, "max_patches": 4,
               "attention": "exact"},
        "fc": {"widths": [4, 4, 8, 8], "norm_groups": 4, "output_dim": 8},
    },
    "experiment": {"folds": 2, "epochs": 2, "length": 40},
}


@pytest.fixture
def run_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = dict(TINY, paths={"data_dir": "data", "checkpoint_dir": "ckpt", "report_dir": "rep"})
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    return tmp_path


def test_gen_data_openneuro(run_dir, capsys):
    assert cli.main(["gen-data", "--config", "run.json", "--profile", "openneuro-like", "--seed", "7", "--out", "data"]) == 0
    cohort = load_cohort(run_dir / "data")
    assert len(cohort) == 56
    resolved = json.loads((run_dir / "data" / "resolved_config.json").read_text())
    assert resolved["seed"] == 7 and resolved["run"]["n_subjects"] == 56
    assert resolved["run"]["cohort_fingerprint"] == cohort.fingerprint
    assert "56 subjects" in capsys.readouterr().out


def test_cv_writes_report(run_dir, capsys):
    assert cli.main(["cv", "--config", "run.json", "--modality", "fc", "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out) == 1
    assert (run_dir / "rep" / "report.json").exists()
    resolved = json.loads((run_dir / "rep" / "resolved_config.json").read_text())
    assert resolved["experiment"]["modality"] == "fc" and resolved["experiment"]["fusion"] == "none"


def test_cv_pretrained_both(run_dir):
    assert cli.main(["cv", "--config", "run.json", "--modality", "both", "--pretrained", "--out", "r2"]) == 0
    assert (run_dir / "ckpt" / cli.ENCODER_FILE).exists()
    assert json.loads((run_dir / "r2" / "resolved_config.json").read_text())["experiment"]["pretrained"] is True


def test_ablation_grid_csv(run_dir, capsys):
    assert cli.main(["report", "--config", "run.json", "--grid", "ablation", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("experiment,")
    assert [l.split(",")[0] for l in lines[1:]] == ["exp5", "exp7", "exp8", "exp9"]


def test_probe_and_interpret(run_dir, capsys):
    assert cli.main(["probe", "--config", "run.json", "--features", "pca", "--classifier", "knn"]) == 0
    assert cli.main(["interpret", "--config", "run.json", "--steps", "8"]) == 0
    assert "ts_share" in capsys.readouterr().out
    assert (run_dir / "rep" / "resolved_config.json").exists()


def test_train_and_pretrain(run_dir):
    assert cli.main(["pretrain", "--config", "run.json", "--epochs", "1", "--out", "enc"]) == 0
    assert (run_dir / "enc" / cli.ENCODER_FILE).exists()
    assert cli.main(["train", "--config", "run.json", "--modality", "fc", "--fold", "1"]) == 0
    assert (run_dir / "ckpt" / "model_fold1.fmtc").exists()


def test_drug_protocol(run_dir, capsys):
    argv = ["drug", "--config", "run.json", "--modality", "fc", "--train-drug", "placebo", "--test-drug", "duloxetine"]
    assert cli.main(argv + ["--format", "json"]) == 0
    assert len(json.loads(capsys.readouterr().out)) == 1


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["cv", "--bogus"],
        ["cv", "--modality", "eeg"],
        ["cv", "--jobs", "0"],
        ["report"],
    ],
)
def test_usage_errors_exit_2(run_dir, argv, capsys):
    assert cli.main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_flag_prints_subcommand_help(capsys):
    assert cli.main(["probe", "--nope"]) == 2
    err = capsys.readouterr().err
    assert "usage: dualstream probe" in err and "--classifier" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["cv", "--config", "missing.json"],
        ["cv", "--config", "run.json", "--folds", "1"],
        ["drug", "--config", "run.json", "--train-drug", "ketamine", "--test-drug", "placebo"],
    ],
)
def test_domain_errors_exit_1(run_dir, argv, capsys):
    assert cli.main(argv) == 1
    assert "error" in capsys.readouterr().err
