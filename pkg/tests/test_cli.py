import json

import numpy as np
import pytest

from echodenoise import cli
from echodenoise.cloud import read_cloud, read_labels
from echodenoise.denoiser import load_checkpoint, read_loss_log
from echodenoise.evalkit import read_pgm, read_report


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--count", 5, "--height", 8, "--width", 32, "--seed", 1, "--out-dir", d / "clean") == 0
    clean = sorted((d / "clean").glob("*.meoc"))
    assert run("inject", *clean, "--severity", "heavy", "--multi-echo", "--out-dir", d / "snow") == 0
    snow = sorted((d / "snow").glob("*.meoc"))
    assert run("train", *snow, "--epochs", 2, "--features", 4, "--residual-blocks", 1, "--k", 3,
               "--checkpoint", d / "m.smed", "--loss-log", d / "loss.csv") == 0
    assert run("denoise", *snow, "--checkpoint", d / "m.smed", "--out-dir", d / "pred") == 0
    return d, snow


def test_synth_and_inject_outputs(pipeline):
    d, snow = pipeline
    assert len(snow) == 5
    c = read_cloud(snow[0])
    assert c.shape == (8, 32, 2)
    assert read_labels(snow[0].with_suffix(".mel")).shape == c.shape


def test_train_outputs(pipeline):
    d, _ = pipeline
    params, enc = load_checkpoint(d / "m.smed")
    assert enc.k == 3 and params.cfg.features == 4
    assert [e.epoch for e in read_loss_log(d / "loss.csv")] == [0, 1]


def test_denoise_outputs(pipeline):
    d, snow = pipeline
    stem = d / "pred" / snow[0].stem
    out = read_cloud(stem.with_suffix(".meoc"))
    assert out.shape == (8, 32, 1)
    assert read_labels(d / "pred" / f"{snow[0].stem}.classes.mel").shape == (8, 32, 2)
    header = (d / "pred" / f"{snow[0].stem}.scores.csv").read_text().splitlines()[0]
    assert header == "h,w,echo,valid,score"


def test_eval_and_baselines(pipeline):
    d, snow = pipeline
    assert run("eval", "--truth-dir", d / "snow", "--pred-dir", d / "pred", "--severity", "heavy",
               "--method", "smednet", "--report", d / "net.csv") == 0
    row = read_report(d / "net.csv")[0]
    assert row.scans == 5 and row.method == "smednet" and row.severity == "heavy"
    for method in ("dror", "lior", "medror"):
        assert run("baseline", *snow, "--method", method, "--out-dir", d / method) == 0
        assert run("eval", "--truth-dir", d / "snow", "--pred-dir", d / method, "--report", d / f"{method}.csv") == 0
        assert 0.0 <= read_report(d / f"{method}.csv")[0].iou_noise <= 1.0


def test_bench(pipeline):
    d, snow = pipeline
    assert run("bench", *snow, "--checkpoint", d / "m.smed", "--warmup", 1, "--report", d / "bench.csv") == 0
    row = read_report(d / "bench.csv")[0]
    assert row.scans == 4 and row.runtime_p95_ms >= row.runtime_median_ms > 0 and row.parameters > 0
    assert run("bench", *snow, "--method", "dror", "--warmup", 1) == 0


def test_export(pipeline):
    d, snow = pipeline
    stem = d / "pred" / snow[0].stem
    assert run("export", f"{stem}.scores.csv", "--what", "scores", "--format", "pgm", "--out", d / "s") == 0
    assert read_pgm(d / "s.e0.pgm").shape == (8, 32)
    assert run("export", f"{stem}.classes.mel", "--what", "classes", "--format", "csv", "--out", d / "c.csv") == 0
    assert run("export", d / "loss.csv", "--what", "loss-log", "--format", "pgm", "--out", d / "loss.pgm") == 0
    assert read_pgm(d / "loss.pgm").ndim == 2


def test_scores_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(3, 4, 2))
    valid = rng.random((3, 4, 2)) < 0.5
    cli.write_scores_csv(scores, valid, tmp_path / "s.csv")
    back, v = cli.read_scores_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(v, valid)
    np.testing.assert_array_equal(back[valid], scores[valid])


def test_exit_codes(tmp_path):
    assert run("train", tmp_path / "missing.meoc", "--checkpoint", tmp_path / "m.smed") == 3
    assert run("train", tmp_path / "x.meoc", "--mode", "ball", "--checkpoint", tmp_path / "m.smed") == 2
    assert run("frobnicate") == 2
    (tmp_path / "bad.ini").write_text("[train]\nno_such_key = 1\n")
    assert run("train", tmp_path / "x.meoc", "--config", tmp_path / "bad.ini", "--checkpoint", tmp_path / "m") == 2


def test_config_precedence(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[common]\nseed = 7\n\n[synth]\ncount = 3\nwidth = 16\n")
    assert run("synth", "--config", ini, "--width", 24, "--height", 4, "--out-dir", tmp_path / "o") == 0
    line = next(l for l in capsys.readouterr().out.splitlines() if l.startswith("[synth] effective config:"))
    cfg = json.loads(line.split(":", 1)[1])
    assert (cfg["seed"], cfg["count"], cfg["width"], cfg["height"]) == (7, 3, 24, 4)
    assert len(list((tmp_path / "o").glob("*.meoc"))) == 3
