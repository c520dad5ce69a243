import hashlib
import json

import jsonschema
import numpy as np
import pytest

from divafn import cli, trainer
from divafn.datamodel import CALIBRATED_NOISE
from divafn.errors import NumericalError
from divafn.fusionclassify import METRICS_SCHEMA

TINY = {"classes": 3, "per_class": 6, "image_dim": 8, "keyframe_dim": 7, "video_dim": 9,
        "semantic_dim": 3, "latent_dim": 4, "noise": 0.2}
FAST = {"d": 6, "hidden": 8, "iters": 3, "lr": 1e-3, "batch": 8}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def data_dir(tmp_path):
    cfg = write(tmp_path / "synth.json", {**TINY, "seed": 1})
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / "data")]) == 0
    return tmp_path / "data"


def digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_synth_minimal(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"classes": 2, "per_class": 4})
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    assert len(list((tmp_path / "d").iterdir())) == 6
    assert "8 samples" in capsys.readouterr().out


def test_synth_missing_classes(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"per_class": 4})
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / "d")]) == 2
    assert "classes" in capsys.readouterr().err


def test_synth_same_seed_byte_identical(tmp_path):
    cfg = write(tmp_path / "c.json", TINY)
    for name in ("a", "b"):
        assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / name), "--seed", "5"]) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "6"]) == 0
    assert digest(tmp_path / "a") != digest(tmp_path / "c")


@pytest.mark.parametrize("bad,field", [({"lamda": 0.1}, "lamda"), ({"iters": -1}, "iters"),
                                       ({"ablation": "XYZ"}, "ablation"), ({"lr": "fast"}, "lr")])
def test_unknown_or_invalid_fields_rejected(tmp_path, data_dir, capsys, bad, field):
    cfg = write(tmp_path / "t.json", bad)
    assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_inconsistent_hyperparams_exit_2(tmp_path, data_dir):
    cfg = write(tmp_path / "t.json", {"beta": 0, "lambda": 0})
    assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_train_zero_iterations(tmp_path, data_dir):
    cfg = write(tmp_path / "t.json", FAST)
    out = tmp_path / "o"
    assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(out), "--iters", "0"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["trace"] == []
    assert (out / "checkpoint.dvfn").exists()


def test_train_diva_tag(tmp_path, data_dir):
    cfg = write(tmp_path / "t.json", FAST)
    out = tmp_path / "o"
    assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(out),
                     "--ablation", "DIVA"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["ablation"] == "DIVA" and report["sae_solves"] == 0


def test_default_run_decreases_objective(tmp_path):
    cfg = write(tmp_path / "s.json", {"classes": 8, "per_class": 40, "seed": 7})
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    assert cli.main(["train", str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert len(report["trace"]) == 100
    assert report["trace"][-1] < report["initial_objective"]
    assert report["seed"] == 0 and report["ridge_fallbacks"] == 0


def test_report_roundtrips_and_is_deterministic(tmp_path, data_dir, capsys):
    cfg = write(tmp_path / "t.json", {**FAST, "seed": 4})
    reports = []
    for name in ("a", "b"):
        assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(tmp_path / name),
                         "--ratio", "0.5"]) == 0
        text = (tmp_path / name / "report.json").read_text()
        rep = json.loads(text)
        assert json.loads(json.dumps(rep)) == rep
        rep.pop("timings")
        reports.append(rep)
    assert reports[0] == reports[1]
    assert reports[0]["splits"][0]["ratio"] == 0.5
    assert cli.main(["report", str(tmp_path / "a" / "report.json")]) == 0
    assert "held-out" in capsys.readouterr().out


def test_divergence_exit_3(tmp_path, data_dir, capsys):
    cfg = write(tmp_path / "t.json", {**FAST, "lr": 1e6})
    with np.errstate(all="ignore"):
        assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "iteration" in capsys.readouterr().err


def test_solver_failure_exit_4(tmp_path, data_dir, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise NumericalError("forced", residual=1.0)

    monkeypatch.setattr(trainer, "solve_w", broken)
    cfg = write(tmp_path / "t.json", FAST)
    assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(tmp_path / "o")]) == 4
    assert "iteration 0" in capsys.readouterr().err


def test_eval_writes_schema_valid_metrics(tmp_path, data_dir):
    cfg = write(tmp_path / "t.json", FAST)
    out = tmp_path / "o"
    assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(out), "--ratio", "0.5"]) == 0
    assert cli.main(["eval", str(out / "checkpoint.dvfn"), str(data_dir),
                     "--out", str(out / "metrics.json")]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    jsonschema.validate(metrics, METRICS_SCHEMA)
    assert metrics["split"] == "heldout"
    assert sum(map(sum, metrics["confusion"])) == 9


def test_eval_train_split_not_worse_than_heldout(tmp_path):
    cfg = write(tmp_path / "s.json", {"classes": 8, "per_class": 40, "noise": CALIBRATED_NOISE,
                                      "seed": 7})
    assert cli.main(["synth", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    tcfg = write(tmp_path / "t.json", {"iters": 5, "lr": 1e-3})
    for seed in range(5):
        out = tmp_path / f"o{seed}"
        assert cli.main(["train", str(tmp_path / "d"), "--config", tcfg, "--out", str(out),
                         "--seed", str(seed), "--ratio", "0.1"]) == 0
        acc = {}
        for split in ("train", "heldout"):
            assert cli.main(["eval", str(out / "checkpoint.dvfn"), str(tmp_path / "d"), "--split",
                             split, "--out", str(out / f"{split}.json")]) == 0
            acc[split] = json.loads((out / f"{split}.json").read_text())["accuracy"]
        assert acc["train"] >= acc["heldout"]


def test_eval_dimension_mismatch_exit_4(tmp_path, data_dir, capsys):
    cfg = write(tmp_path / "t.json", FAST)
    out = tmp_path / "o"
    assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(out)]) == 0
    other = write(tmp_path / "s2.json", {**TINY, "video_dim": 11})
    assert cli.main(["synth", "--config", other, "--out", str(tmp_path / "d2")]) == 0
    assert cli.main(["eval", str(out / "checkpoint.dvfn"), str(tmp_path / "d2"),
                     "--out", str(tmp_path / "m.json")]) == 4
    err = capsys.readouterr().err
    assert "video dimension 9" in err and "11" in err


def test_eval_warns_on_class_missing_from_training(tmp_path, data_dir):
    cfg = write(tmp_path / "t.json", {**FAST, "iters": 0})
    out = tmp_path / "o"
    assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(out), "--ablation", "KVC",
                     "--ratio", "0.2"]) == 0
    model = trainer.restore(out / "checkpoint.dvfn")
    labels = np.loadtxt(data_dir / "labels.txt", dtype=int)
    # drop class 2 from the stored training split
    model.meta["train_idx"] = [i for i in model.meta["train_idx"] if labels[i] != 2]
    trainer.checkpoint(model, out / "edited.dvfn")
    assert cli.main(["eval", str(out / "edited.dvfn"), str(data_dir), "--out", str(out / "m.json")]) == 0
    assert cli.main(["report", str(out / "report.json")]) == 0
    metrics = json.loads((out / "m.json").read_text())
    assert any("class 2" in w for w in metrics["warnings"])


def test_gradcheck_default_passes(capsys):
    assert cli.main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "strict" in out and "default" in out


def test_gradcheck_detects_corruption(capsys):
    assert cli.main(["gradcheck", "--corrupt-gradient"]) == 5
    err = capsys.readouterr().err
    assert "relative error" in err and "row" in err


def test_gradcheck_similarity_only(tmp_path):
    cfg = write(tmp_path / "g.json", {"beta": 0, "lambda": 0})
    assert cli.main(["gradcheck", "--config", cfg]) == 0


def test_ablate_small(tmp_path, data_dir, capsys):
    cfg = write(tmp_path / "t.json", FAST)
    out = tmp_path / "ab"
    assert cli.main(["ablate", str(data_dir), "--config", cfg, "--out", str(out), "--ratio", "0.5",
                     "--seeds", "2"]) == 0
    table = capsys.readouterr().out
    for col in ("video", "KVC", "DIVA", "DIVF", "full"):
        assert col in table
    res = json.loads((out / "ablation.json").read_text())
    assert len(res["results"]["0.5"]["full"]) == 2


def test_thread_cap(tmp_path, data_dir, monkeypatch):
    cfg = write(tmp_path / "t.json", {**FAST, "seed": 1})
    reps = []
    for threads, name in (("1", "a"), ("2", "b")):
        monkeypatch.setenv("DVFN_THREADS", threads)
        assert cli.main(["train", str(data_dir), "--config", cfg, "--out", str(tmp_path / name)]) == 0
        rep = json.loads((tmp_path / name / "report.json").read_text())
        rep.pop("timings")
        reps.append(rep)
    assert reps[0] == reps[1]
    monkeypatch.setenv("DVFN_THREADS", "zero")
    assert cli.main(["gradcheck"]) == 2


def test_missing_data_dir_exit_4(tmp_path):
    assert cli.main(["train", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 4
