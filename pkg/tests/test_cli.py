import json

import numpy as np
import pytest

from advshield import data
from advshield import evaluate as E
from advshield.cli import main


def run_cli(*argv):
    try:
        return main(list(argv))
    except SystemExit as exc:  # argparse usage failures
        return exc.code


@pytest.fixture(scope="module")
def clf_ckpt(tmp_path_factory):
    out = tmp_path_factory.mktemp("clf")
    code = run_cli("train-classifier", "--data", "synthetic",
                   "--synthetic-n", "20", "--epochs", "2", "--seed", "0",
                   "--out", str(out))
    assert code == 0
    return out / "classifier.ckpt"


def test_help_exits_zero(capsys):
    assert run_cli("--help") == 0
    assert "train-classifier" in capsys.readouterr().out


def test_unknown_command_is_usage_error(capsys):
    assert run_cli("frobnicate") == 2


def test_train_classifier_outputs(clf_ckpt):
    out = clf_ckpt.parent
    assert clf_ckpt.is_file()
    report = json.loads((out / "train-report.json").read_text())
    assert len(report["epoch_accuracies"]) == 2
    run_cfg = json.loads((out / "run-config.json").read_text())
    assert run_cfg["command"] == "train-classifier"
    assert run_cfg["epochs"] == 2


def test_train_classifier_deterministic(tmp_path, monkeypatch):
    digests = []
    for sub in ("a", "b"):
        workdir = tmp_path / sub
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        code = run_cli("train-classifier", "--data", "synthetic",
                       "--synthetic-n", "10", "--epochs", "1", "--seed", "5",
                       "--out", "run")
        assert code == 0
        digests.append((workdir / "run" / "classifier.ckpt").read_bytes())
    assert digests[0] == digests[1]


def test_missing_data_is_usage_error(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("ADVSHIELD_DATA_DIR", raising=False)
    assert run_cli("train-classifier", "--out", str(tmp_path)) == 2
    assert "ADVSHIELD_DATA_DIR" in capsys.readouterr().err


def test_env_data_dir_fallback(tmp_path, monkeypatch):
    ds = data.synthetic_dataset(seed=1, n_per_class=3)
    ts = data.synthetic_dataset(seed=2, n_per_class=2, split="test")
    data.save_idx_images(tmp_path / data.TRAIN_FILES[0], ds.images)
    data.save_idx_labels(tmp_path / data.TRAIN_FILES[1], ds.labels)
    data.save_idx_images(tmp_path / data.TEST_FILES[0], ts.images)
    data.save_idx_labels(tmp_path / data.TEST_FILES[1], ts.labels)
    monkeypatch.setenv("ADVSHIELD_DATA_DIR", str(tmp_path))
    out = tmp_path / "out"
    assert run_cli("train-classifier", "--epochs", "1",
                   "--out", str(out)) == 0
    assert (out / "classifier.ckpt").is_file()


def test_missing_model_checkpoint_is_usage_error(tmp_path):
    assert run_cli("attack", "--kind", "fgsm", "--eps", "0.3",
                   "--model", str(tmp_path / "nope.ckpt"),
                   "--data", "synthetic", "--out", str(tmp_path)) == 2


def test_attack_eps_zero_identity(tmp_path, clf_ckpt):
    out = tmp_path / "atk"
    code = run_cli("attack", "--kind", "fgsm", "--eps", "0",
                   "--model", str(clf_ckpt), "--data", "synthetic",
                   "--synthetic-n", "20", "--limit", "12", "--out", str(out))
    assert code == 0
    adv = data.load_idx_images(out / "adversarial-images-idx3-ubyte.gz")
    orig = data.synthetic_dataset(seed=2, n_per_class=5,
                                  split="test").images[:12]
    np.testing.assert_array_equal(adv, orig)
    assert (out / "adversarial-grid.pgm").is_file()
    assert (out / "attack-metadata.json").is_file()


def test_attack_deterministic_outputs(tmp_path, clf_ckpt):
    blobs = []
    for sub in ("x", "y"):
        out = tmp_path / sub
        code = run_cli("attack", "--kind", "pgd", "--eps", "0.15",
                       "--steps", "3", "--alpha", "0.05", "--seed", "7",
                       "--model", str(clf_ckpt), "--data", "synthetic",
                       "--synthetic-n", "20", "--limit", "8",
                       "--out", str(out))
        assert code == 0
        blobs.append((out / "adversarial-images-idx3-ubyte.gz").read_bytes())
    assert blobs[0] == blobs[1]


def test_attack_ball_membership(tmp_path, clf_ckpt):
    out = tmp_path / "ball"
    assert run_cli("attack", "--kind", "fgsm", "--eps", "0.25",
                   "--model", str(clf_ckpt), "--data", "synthetic",
                   "--synthetic-n", "20", "--limit", "10",
                   "--out", str(out)) == 0
    adv = data.load_idx_images(out / "adversarial-images-idx3-ubyte.gz")
    orig = data.synthetic_dataset(seed=2, n_per_class=5,
                                  split="test").images[:10]
    # quantization adds at most half a step on top of the epsilon ball
    assert np.abs(adv - orig).max() <= 0.25 + 0.5 / 255.0 + 1e-7


def test_config_file_layering(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs=3\nseed=9\n# comment line\n")
    out = tmp_path / "out"
    code = run_cli("train-classifier", "--data", "synthetic",
                   "--synthetic-n", "10", "--config", str(cfg),
                   "--epochs", "1", "--out", str(out))
    assert code == 0
    merged = json.loads((out / "run-config.json").read_text())
    assert merged["epochs"] == 1   # explicit flag beats the file
    assert merged["seed"] == 9     # file beats the default


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_option=1\n")
    assert run_cli("train-classifier", "--data", "synthetic",
                   "--config", str(cfg), "--out", str(tmp_path)) == 2
    assert "no_such_option" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_training_exits_one(tmp_path, capsys):
    code = run_cli("train-classifier", "--data", "synthetic",
                   "--synthetic-n", "10", "--epochs", "2", "--lr", "50.0",
                   "--out", str(tmp_path / "div"))
    assert code == 1
    assert "diverged" in capsys.readouterr().err


def test_train_defense_records_recipe(tmp_path, clf_ckpt):
    out = tmp_path / "def"
    code = run_cli("train-defense", "--data", "synthetic",
                   "--synthetic-n", "10", "--epochs", "1", "--lr", "0.2",
                   "--sigma", "0.1", "--attack", "fgsm", "--eps", "0.6",
                   "--model", str(clf_ckpt), "--seed", "4", "--out", str(out))
    assert code == 0
    from advshield import autoencoder as AE
    model = AE.load_autoencoder(out / "defense.ckpt")
    recorded = model.meta["recipe"]
    assert recorded[0]["kind"] == "fgsm"
    assert recorded[0]["epsilon"] == 0.6
    assert model.meta["sigma"] == 0.1


def test_train_defense_multi_recipe_flag(tmp_path, clf_ckpt):
    out = tmp_path / "def2"
    code = run_cli("train-defense", "--data", "synthetic",
                   "--synthetic-n", "6", "--epochs", "1", "--lr", "0.2",
                   "--recipe", "fgsm:0.6,pgd:0.15:0.05:2",
                   "--model", str(clf_ckpt), "--out", str(out))
    assert code == 0
    from advshield import autoencoder as AE
    model = AE.load_autoencoder(out / "defense.ckpt")
    kinds = [r["kind"] for r in model.meta["recipe"]]
    assert kinds == ["fgsm", "pgd"]


def test_evaluate_requires_exactly_one_mode(tmp_path, clf_ckpt):
    assert run_cli("evaluate", "--model", str(clf_ckpt),
                   "--data", "synthetic", "--out", str(tmp_path)) == 2
    assert run_cli("evaluate", "--sweep", "fgsm", "--latency",
                   "--model", str(clf_ckpt), "--data", "synthetic",
                   "--out", str(tmp_path)) == 2


def test_evaluate_sweep_csv(tmp_path, clf_ckpt):
    out = tmp_path / "ev"
    code = run_cli("evaluate", "--sweep", "fgsm", "--eps-grid", "0,0.4",
                   "--model", str(clf_ckpt), "--data", "synthetic",
                   "--synthetic-n", "20", "--limit", "30", "--out", str(out))
    assert code == 0
    report = E.read_report_csv(out / "sweep_fgsm.csv")
    assert [r.epsilon for r in report.rows] == [0.0, 0.4]

    from advshield import classifier as C
    clf = C.load_classifier(clf_ckpt)
    test = data.synthetic_dataset(seed=2, n_per_class=5,
                                  split="test").subset(range(30))
    # the CSV stores six decimals; in-memory exactness is covered elsewhere
    assert report.rows[0].acc_attacked == round(C.accuracy(clf, test), 6)
    assert (out / "sweep_fgsm.pgm").is_file()


def test_evaluate_defended_and_latency(tmp_path, clf_ckpt):
    defdir = tmp_path / "def"
    assert run_cli("train-defense", "--data", "synthetic",
                   "--synthetic-n", "6", "--epochs", "1", "--lr", "0.2",
                   "--out", str(defdir)) == 0
    ckpt = defdir / "defense.ckpt"

    out = tmp_path / "evd"
    code = run_cli("evaluate", "--defended", "--kind", "fgsm", "--eps", "0.4",
                   "--model", str(clf_ckpt), "--defense", str(ckpt),
                   "--data", "synthetic", "--synthetic-n", "20",
                   "--limit", "20", "--out", str(out))
    assert code == 0
    report = E.read_report_csv(out / "defended_fgsm.csv")
    assert len(report.rows) == 1
    assert report.rows[0].acc_defended is not None
    assert (out / "defended_fgsm.pgm").is_file()

    out2 = tmp_path / "evl"
    code = run_cli("evaluate", "--latency", "--model", str(clf_ckpt),
                   "--defense", str(ckpt), "--data", "synthetic",
                   "--synthetic-n", "20", "--batch-size", "16",
                   "--trials", "2", "--warmup", "1", "--out", str(out2))
    assert code == 0
    text = (out2 / "latency.csv").read_text()
    assert "median_s" in text
