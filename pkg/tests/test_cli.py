import json
import shutil

import numpy as np
import pytest

from ofnet.cli import main, read_predictions, write_predictions
from ofnet.config import RunConfig
from ofnet.evaluation import read_pr_csv
from ofnet.exceptions import ConfigurationError
from ofnet.synth import read_dataset


def run(*argv):
    return main([str(a) for a in argv])


def snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "set"
    assert run("gen-data", "--out", d, "--n", 3, "--height", 32, "--width", 32, "--seed", 7) == 0
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("run") / "train"
    assert run("train", "--dataset", dataset, "--out", out, "--iters", 2, "--crop", 32, "--seed", 1) == 0
    return out


def test_gen_data_is_deterministic(tmp_path, monkeypatch):
    snaps = []
    for where in ("a", "b"):
        (tmp_path / where).mkdir()
        monkeypatch.chdir(tmp_path / where)
        assert run("gen-data", "--out", "d", "--n", 4, "--height", 32, "--width", 40, "--seed", 7) == 0
        snaps.append(snapshot(tmp_path / where / "d"))
    assert snaps[0] == snaps[1]


def test_gen_data_zero_samples(tmp_path):
    assert run("gen-data", "--out", tmp_path / "z", "--n", 0) == 0
    m = json.loads((tmp_path / "z" / "manifest.json").read_text())
    assert m["count"] == 0 and m["ids"] == []


def test_gen_data_count(tmp_path):
    assert run("gen-data", "--out", tmp_path / "c", "--n", 250, "--height", 128, "--width", 128) == 0
    d = tmp_path / "c"
    assert json.loads((d / "manifest.json").read_text())["count"] == 250
    for i in range(250):
        for suffix in (".png", ".edge.png", ".ori.f32"):
            assert (d / f"{i:05d}{suffix}").exists()


def test_gen_data_refuses_non_empty_dir(dataset):
    assert run("gen-data", "--out", dataset, "--n", 1) == 1


def test_train_outputs(trained):
    names = sorted(p.name for p in (trained / "checkpoints").iterdir())
    assert names == ["final.ofnt", "step000000.ofnt", "step000002.ofnt"]
    rows = (trained / "loss.csv").read_text().splitlines()
    assert rows[0] == "step,edge_loss,orientation_loss,total_loss" and len(rows) == 3
    cfg = RunConfig.load(trained / "config.json")
    assert cfg.command == "train" and cfg.train["iters"] == 2 and cfg.seed == 1


def test_train_zero_iterations(tmp_path, dataset):
    assert run("train", "--dataset", dataset, "--out", tmp_path / "t", "--iters", 0, "--crop", 32) == 0
    assert sorted(p.name for p in (tmp_path / "t" / "checkpoints").iterdir()) == ["step000000.ofnt"]


def test_train_is_reproducible_from_config(tmp_path, trained):
    cfg = json.loads((trained / "config.json").read_text())
    cfg["out"] = str(tmp_path / "again")
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run("train", "--config", tmp_path / "cfg.json") == 0
    assert (tmp_path / "again" / "loss.csv").read_text() == (trained / "loss.csv").read_text()
    a = (tmp_path / "again" / "checkpoints" / "final.ofnt").read_bytes()
    assert a == (trained / "checkpoints" / "final.ofnt").read_bytes()


def test_train_missing_dataset(tmp_path):
    assert run("train", "--dataset", tmp_path / "nothing", "--out", tmp_path / "o", "--iters", 1) == 2


def test_infer_outputs(tmp_path, trained, dataset):
    out = tmp_path / "pred"
    assert run("infer", "--checkpoint", trained / "checkpoints" / "final.ofnt", "--dataset", dataset, "--out", out) == 0
    for sid in ("00000", "00001", "00002"):
        for kind in ("edge_prob", "orientation", "thin", "aligned"):
            assert (out / f"{sid}.{kind}.f32").stat().st_size == 32 * 32 * 4
    preds = read_predictions(out)
    assert set(preds) == {"00000", "00001", "00002"}


def test_infer_blank_png(tmp_path, trained):
    from PIL import Image

    Image.fromarray(np.zeros((20, 28, 3), np.uint8)).save(tmp_path / "blank.png")
    assert run("infer", "--checkpoint", trained / "checkpoints" / "final.ofnt", "--images", tmp_path / "blank.png", "--out", tmp_path / "p") == 0
    e = np.fromfile(tmp_path / "p" / "blank.edge_prob.f32", dtype="<f4")
    assert e.size == 20 * 28 and np.isfinite(e).all()


def test_infer_bad_checkpoint(tmp_path, dataset):
    (tmp_path / "x.ofnt").write_bytes(b"nope")
    assert run("infer", "--checkpoint", tmp_path / "x.ofnt", "--dataset", dataset, "--out", tmp_path / "p") == 2


def _gt_predictions(dataset, out, flip=False):
    samples = read_dataset(dataset)
    oris = [s.orientation + (np.pi if flip else 0.0) for s in samples]
    write_predictions(out, [s.sample_id for s in samples], [s.edge.astype(np.float32) for s in samples], oris)


def test_eval_gt_as_prediction(tmp_path, dataset):
    _gt_predictions(dataset, tmp_path / "p")
    assert run("eval", "--predictions", tmp_path / "p", "--dataset", dataset, "--out", tmp_path / "e") == 0
    report = json.loads((tmp_path / "e" / "report.json").read_text())
    for mode in ("EPR", "OPR"):
        assert report[mode]["ODS"] == report[mode]["OIS"] == report[mode]["AP"] == 1.0
    t, p, r = read_pr_csv(tmp_path / "e" / "pr_opr.csv")
    assert len(t) == 99


def test_eval_flipped_orientation(tmp_path, dataset):
    _gt_predictions(dataset, tmp_path / "p", flip=True)
    assert run("eval", "--predictions", tmp_path / "p", "--dataset", dataset, "--out", tmp_path / "e") == 0
    report = json.loads((tmp_path / "e" / "report.json").read_text())
    assert report["EPR"]["ODS"] == 1.0
    assert report["OPR"]["ODS"] <= 0.01


def test_eval_missing_ids(tmp_path, dataset, capsys):
    _gt_predictions(dataset, tmp_path / "p")
    m = json.loads((tmp_path / "p" / "manifest.json").read_text())
    m["ids"] = m["ids"][:2]
    m["count"] = 2
    (tmp_path / "p" / "manifest.json").write_text(json.dumps(m))
    assert run("eval", "--predictions", tmp_path / "p", "--dataset", dataset, "--out", tmp_path / "e") == 2
    assert "00002" in capsys.readouterr().err


def test_plot_outputs_and_determinism(tmp_path, dataset):
    _gt_predictions(dataset, tmp_path / "p")
    run("eval", "--predictions", tmp_path / "p", "--dataset", dataset, "--out", tmp_path / "oracle_run", "--thresholds", 9)
    assert run("plot", tmp_path / "oracle_run", "--out", tmp_path / "f1") == 0
    assert run("plot", tmp_path / "oracle_run", "--out", tmp_path / "f2") == 0
    svg = (tmp_path / "f1" / "pr_opr.svg").read_text()
    assert svg == (tmp_path / "f2" / "pr_opr.svg").read_text()
    assert "oracle_run" in svg and (tmp_path / "f1" / "pr_epr.svg").exists()


def test_plot_without_reports(tmp_path):
    assert run("plot", "--out", tmp_path / "f") == 1


def test_plot_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "pr_epr.csv"
    bad.write_text("threshold,precision,recall\n0.1,0.5,0.5\n0.2,0.4\n")
    assert run("plot", bad, "--out", tmp_path / "f") == 2
    assert ":3:" in capsys.readouterr().err


def test_usage_errors():
    assert run() == 1
    assert run("bogus") == 1
    assert run("train", "--iters", "many") == 1
    assert run("train", "--out", "x") == 1  # no dataset


def test_numeric_failure_exit_code(tmp_path, dataset, trained):
    from ofnet.model import load_checkpoint, save_checkpoint

    m = load_checkpoint(trained / "checkpoints" / "final.ofnt")
    m.params["stem.conv0.weight"].data[:] = np.nan
    save_checkpoint(m, tmp_path / "nan.ofnt")
    assert run("infer", "--checkpoint", tmp_path / "nan.ofnt", "--dataset", dataset, "--out", tmp_path / "p") == 3


def test_ablate_small(tmp_path, dataset):
    code = run(
        "ablate", "--dataset", dataset, "--test-dataset", dataset, "--out", tmp_path / "a",
        "--variants", "default,no_mcl", "--seeds", "0", "--iters", 1, "--crop", 32, "--thresholds", 5,
    )
    assert code == 0
    body = json.loads((tmp_path / "a" / "ablation.json").read_text())
    assert set(body["mean_opr_ods"]) == {"default", "no_mcl"}
    assert "no_mcl" in body["margins_opr_ods"]
    assert len((tmp_path / "a" / "ablation.csv").read_text().splitlines()) == 3


# -- run config ------------------------------------------------------------------------


def test_config_roundtrip(tmp_path):
    cfg = RunConfig(command="train", dataset="d", variant="no_mcl", loss={"lam": 0.2}, train={"iters": 5})
    cfg.save(tmp_path)
    back = RunConfig.load(tmp_path / "config.json")
    assert back.to_dict() == cfg.to_dict()
    assert back.loss_config().lam == 0.2 and back.train_config().iters == 5
    assert back.model_variant().disable_mcl


def test_config_variant_overrides():
    cfg = RunConfig(variant="default", variant_overrides={"stripe": {"vertical_kernel": [7, 3], "horizontal_kernel": [3, 7], "channels": 4}})
    assert cfg.model_variant().stripe.vertical_kernel == (7, 3)


@pytest.mark.parametrize("kw", [dict(n=-1), dict(tol=0), dict(loss={"lam": -1}), dict(train={"bogus": 1})])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        RunConfig(**kw)


def test_config_unknown_key(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"nonsense": 1}))
    with pytest.raises(ConfigurationError):
        RunConfig.load(tmp_path / "c.json")
