"""Command-line interface: ``echodenoise <verb> [options]``.

Verbs: synth, inject, train, denoise, baseline, eval, bench, export.

Every tunable option can also be set in an INI file passed with
``--config``; keys use the option's long name with dashes replaced by
underscores, inside a section named after the verb (``[train]``) or the
shared ``[common]`` section. Precedence is defaults < config file < flags.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, cloud as cloudio, denoiser, evalkit, inference, noise_sim
from .csr import CsrConfig
from .errors import ConfigError, EchoDenoiseError
from .neighbors import EncoderConfig
from .projection import ProjectionConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _window(v) -> tuple[int, int]:
    if isinstance(v, tuple):
        return v
    parts = str(v).lower().replace("x", ",").split(",")
    if len(parts) != 2:
        raise ConfigError(f"window must look like 9x9, got {v!r}")
    return int(parts[0]), int(parts[1])


# (name, type, default, help) per verb; these participate in config merging.
SEED = ("seed", int, 0, "random seed")
ENCODER = [
    ("k", int, 5, "neighbors per query"),
    ("cutoff", float, 2.0, "neighbor cutoff radius C_r in meters"),
    ("window", _window, (9, 9), "grid window, rows x cols"),
    ("mode", str, "knn", "knn or grid_neighbors"),
]
INFER = [("threshold", float, 0.0, "noise threshold T_n"), ("min_separation", float, 0.05, "PS range separation (m)")]
DROR_OPTS = [
    ("beta", float, 3.0, "DROR radius multiplier"),
    ("min_neighbors", int, 3, "DROR minimum neighbor count"),
    ("sr_min", float, 0.04, "DROR minimum search radius (m)"),
    ("intensity_threshold", float, 8.0, "LIOR range-normalized intensity threshold"),
    ("ror_radius", float, 0.6, "LIOR outlier radius (m)"),
    ("ror_min_neighbors", int, 2, "LIOR minimum neighbor count"),
]
OPTIONS = {
    "synth": [SEED, ("count", int, 1, "number of random scenes"), ("height", int, 16, "beam rows"),
              ("width", int, 128, "columns"), ("fov_up", float, 0.1, "upper field of view (rad)"),
              ("fov_down", float, -0.3, "lower field of view (rad)")],
    "inject": [SEED, ("severity", str, "medium", "light, medium or heavy"),
               ("probability", float, None, "per-beam corruption probability (overrides severity)"),
               ("multi_echo", _bool, False, "emit 2-echo groups"), ("i_max", float, 0.3, "max particle intensity"),
               ("occlusion_drop", float, 0.1, "probability the surface return is lost")],
    "train": [SEED, *ENCODER, ("features", int, 16, "base feature width"), ("residual_blocks", int, 3, "blocks"),
              ("activation", str, "leaky_relu", "hidden activation"), ("epochs", int, 30, "training epochs"),
              ("learning_rate", float, 0.01, "initial learning rate"), ("lr_decay", float, 0.99, "per-epoch decay"),
              ("momentum", float, 0.9, "SGD momentum"), ("lam", float, 5.0, "loss weight lambda"),
              ("blind_fraction", float, 0.5, "fraction of echoes given blind spots"),
              ("csr_k", int, 9, "CSR neighbors"), ("use_csr", _bool, True, "enable the CSR term")],
    "denoise": INFER,
    "baseline": [("method", str, "dror", "dror, lior or medror"), *DROR_OPTS, ("window", _window, (9, 9), "grid window"),
                 ("min_separation", float, 0.05, "MEDROR PS range separation (m)")],
    "eval": [("severity", str, "", "tag written to the report"), ("method", str, "", "method name in the report")],
    "bench": [("method", str, "smednet", "smednet, dror, lior or medror"), *INFER, *DROR_OPTS,
              ("window", _window, (9, 9), "baseline grid window"), ("warmup", int, 3, "untimed warm-up scans")],
    "export": [("what", str, "scores", "scores, classes or loss-log"), ("format", str, "csv", "csv or pgm")],
}
CHOICES = {
    "mode": ("knn", "grid_neighbors"), "severity": ("light", "medium", "heavy", ""),
    "what": ("scores", "classes", "loss-log"), "format": ("csv", "pgm"),
    "activation": ("leaky_relu", "tanh", "softplus"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="echodenoise", description="Multi-echo LiDAR denoising toolkit")
    sub = p.add_subparsers(dest="verb", required=True)
    paths = {
        "synth": [("--scene", "INI scene file (default: random scenes)"), ("--out-dir", "output directory")],
        "inject": [("inputs", "clear .meoc scans"), ("--out-dir", "output directory")],
        "train": [("inputs", "training .meoc scans"), ("--checkpoint", "output checkpoint"),
                  ("--loss-log", "optional loss-log CSV")],
        "denoise": [("inputs", ".meoc scans"), ("--checkpoint", "trained checkpoint"), ("--out-dir", "output directory")],
        "baseline": [("inputs", ".meoc scans"), ("--out-dir", "output directory")],
        "eval": [("--truth-dir", "directory with .meoc/.mel ground truth"),
                 ("--pred-dir", "directory with <stem>.classes.mel predictions"), ("--report", "CSV report path")],
        "bench": [("inputs", ".meoc scans"), ("--checkpoint", "checkpoint (smednet only)"),
                  ("--report", "optional CSV report")],
        "export": [("input", "scores CSV, classes .mel or loss-log CSV"), ("--out", "output path or prefix")],
    }
    for verb, opts in OPTIONS.items():
        sp = sub.add_parser(verb, help=f"{verb} command")
        sp.add_argument("--config", help="INI config file")
        for name, help_ in paths[verb]:
            if name.startswith("--"):
                sp.add_argument(name, help=help_)
            elif name == "inputs":
                sp.add_argument(name, nargs="+", help=help_)
            else:
                sp.add_argument(name, help=help_)
        for name, _, default, help_ in opts:
            flag = "--" + name.replace("_", "-")
            if name in ("multi_echo", "use_csr"):
                sp.add_argument(flag, dest=name, default=None, type=_bool, nargs="?", const=True,
                                help=f"{help_} (default {default})")
            else:
                sp.add_argument(flag, dest=name, default=None, help=f"{help_} (default {default})")
    return p


def effective_config(verb: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags, in that order."""
    spec = OPTIONS[verb]
    merged = {name: default for name, _, default, _ in spec}
    if args.config:
        ini = configparser.ConfigParser()
        if not ini.read(args.config):
            raise ConfigError(f"cannot read config file {args.config}")
        known = {name for name, *_ in spec}
        for section in ("common", verb):
            if not ini.has_section(section):
                continue
            for key, value in ini.items(section, raw=True):
                if key in known:
                    merged[key] = value
                elif section == verb:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
    for name, *_ in spec:
        v = getattr(args, name, None)
        if v is not None:
            merged[name] = v
    out = {}
    for name, conv, _, _ in spec:
        v = merged[name]
        try:
            out[name] = None if v is None else conv(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {name}: {v!r}") from exc
        if name in CHOICES and out[name] not in CHOICES[name]:
            raise ConfigError(f"{name} must be one of {CHOICES[name]}")
    return out


def _need(args, name):
    v = getattr(args, name)
    if not v:
        raise ConfigError(f"--{name.replace('_', '-')} is required")
    return v


def _print_config(verb, cfg, args):
    extra = {k: v for k, v in vars(args).items() if k not in cfg and k != "verb" and v is not None}
    print(f"[{verb}] effective config: " + json.dumps({**cfg, **extra}, sort_keys=True, default=str))


def _labels_path(p: Path) -> Path:
    return p.with_suffix(".mel")


def _out_dir(args) -> Path:
    d = Path(_need(args, "out_dir"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _encoder(cfg) -> EncoderConfig:
    return EncoderConfig(k=cfg["k"], cutoff=cfg["cutoff"], window=cfg["window"], mode=cfg["mode"])


def _baseline_classes(c: cloudio.MultiEchoOrderedCloud, cfg) -> np.ndarray:
    """Echo classes for a baseline: flagged strongest echoes become DI, the rest VS."""
    m = cfg["method"]
    dcfg = baselines.DrorConfig(beta=cfg["beta"], min_neighbors=cfg["min_neighbors"], sr_min=cfg["sr_min"],
                                window=cfg["window"])
    if m == "medror":
        return baselines.medror(c, dcfg, cfg["min_separation"])
    if m == "dror":
        noise = baselines.dror(c, dcfg)
    elif m == "lior":
        noise = baselines.lior(c, baselines.LiorConfig(cfg["intensity_threshold"], cfg["ror_radius"],
                                                       cfg["ror_min_neighbors"], cfg["window"]))
    else:
        raise ConfigError(f"unknown baseline method {m!r}")
    classes = np.full(c.shape, inference.DI, np.int8)
    classes[:, :, 0] = np.where(c.valid[:, :, 0] & ~noise, inference.VS, inference.DI)
    return classes


def write_scores_csv(scores: np.ndarray, valid: np.ndarray, path) -> None:
    """One row per cell-echo; the score column is empty for invalid echoes."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["h", "w", "echo", "valid", "score"])
        for (h, w, e), v in np.ndenumerate(valid):
            wr.writerow([h, w, e, int(v), repr(float(scores[h, w, e])) if v else ""])


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise EchoDenoiseError(f"{path}: empty score file")
    shape = tuple(max(int(r[k]) for r in rows) + 1 for k in ("h", "w", "echo"))
    scores, valid = np.zeros(shape), np.zeros(shape, bool)
    for r in rows:
        idx = int(r["h"]), int(r["w"]), int(r["echo"])
        valid[idx] = r["valid"] == "1"
        scores[idx] = float(r["score"]) if valid[idx] else 0.0
    return scores, valid


def loss_curve_image(log, height: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Raster of the mean-loss curve: one column per epoch, bright pixel at the loss level."""
    vals = np.array([e.mean_loss for e in log])
    lo, hi = vals.min(), vals.max()
    rows = np.zeros(len(vals), int) if hi == lo else np.round((hi - vals) / (hi - lo) * (height - 1)).astype(int)
    img = np.zeros((height, len(vals)))
    img[rows, np.arange(len(vals))] = 1.0
    return img, np.ones_like(img, bool)


# ------------------------------------------------------------------ verbs


def cmd_synth(args, cfg):
    out = _out_dir(args)
    sensor = ProjectionConfig(cfg["height"], cfg["width"], cfg["fov_up"], cfg["fov_down"])
    fixed = noise_sim.read_scene_spec(args.scene) if args.scene else None
    for i, child in enumerate(np.random.SeedSequence(cfg["seed"]).spawn(cfg["count"])):
        scene_seed, ray_seed = child.generate_state(2)
        spec = fixed or noise_sim.random_scene(np.random.default_rng(scene_seed), sensor)
        c, labels = noise_sim.raycast_scene(spec, int(ray_seed))
        path = out / f"scene_{i:04d}.meoc"
        cloudio.write_cloud(c, path)
        cloudio.write_labels(labels, _labels_path(path))
        print(f"wrote {path} ({int(c.valid.sum())} returns)")


def cmd_inject(args, cfg):
    out = _out_dir(args)
    spec = noise_sim.SnowSpec(severity=cfg["severity"] or "medium", probability=cfg["probability"],
                              i_max=cfg["i_max"], occlusion_drop=cfg["occlusion_drop"])
    for i, (path, child) in enumerate(zip(args.inputs, np.random.SeedSequence(cfg["seed"]).spawn(len(args.inputs)))):
        clean = cloudio.read_cloud(path)
        c, labels = noise_sim.inject_snow(clean, spec, cfg["multi_echo"], int(child.generate_state(1)[0]))
        dst = out / Path(path).name
        cloudio.write_cloud(c, dst)
        cloudio.write_labels(labels, _labels_path(dst))
        print(f"wrote {dst} ({int((labels == cloudio.NOISE_PARTICLE).sum())} particles)")


def cmd_train(args, cfg):
    ckpt = _need(args, "checkpoint")
    enc = _encoder(cfg)
    clouds = [cloudio.read_cloud(p) for p in args.inputs]
    ne = {c.num_echoes for c in clouds}
    if len(ne) != 1:
        raise EchoDenoiseError("training scans mix different echo counts")
    net = denoiser.NetworkConfig(num_echoes=ne.pop(), slots=enc.slots, features=cfg["features"],
                                 residual_blocks=cfg["residual_blocks"], activation=cfg["activation"], seed=cfg["seed"])
    tcfg = denoiser.TrainConfig(learning_rate=cfg["learning_rate"], lr_decay=cfg["lr_decay"], momentum=cfg["momentum"],
                                epochs=cfg["epochs"], lam=cfg["lam"], blind_fraction=cfg["blind_fraction"],
                                seed=cfg["seed"], use_csr=cfg["use_csr"])
    print(f"parameters: {denoiser.parameter_count(net)}")
    res = denoiser.train(clouds, net, tcfg, enc, CsrConfig(k=cfg["csr_k"]),
                         progress=lambda e: print(f"epoch {e.epoch:3d}  loss {e.mean_loss:.5f}  lr {e.lr:.5g}"))
    denoiser.save_checkpoint(res.params, enc, ckpt)
    print(f"wrote {ckpt}")
    if args.loss_log:
        denoiser.write_loss_log(res.log, args.loss_log)
        print(f"wrote {args.loss_log}")


def cmd_denoise(args, cfg):
    out = _out_dir(args)
    params, enc = denoiser.load_checkpoint(_need(args, "checkpoint"))
    icfg = inference.InferenceConfig(cfg["threshold"], cfg["min_separation"])
    for path in args.inputs:
        c = cloudio.read_cloud(path)
        result, scores, classes = inference.denoise_scan(c, params, enc, icfg)
        stem = out / Path(path).stem
        cloudio.write_cloud(result.cloud, stem.with_suffix(".meoc"))
        cloudio.write_labels(inference.classes_to_mel(classes), Path(f"{stem}.classes.mel"))
        write_scores_csv(scores, c.valid, Path(f"{stem}.scores.csv"))
        n = {name: int((classes == k).sum() if k != inference.DI else ((classes == k) & c.valid).sum())
             for name, k in (("VS", inference.VS), ("PS", inference.PS), ("DI", inference.DI))}
        print(f"{path}: {n}")


def cmd_baseline(args, cfg):
    out = _out_dir(args)
    for path in args.inputs:
        c = cloudio.read_cloud(path)
        classes = _baseline_classes(c, cfg)
        dst = Path(f"{out / Path(path).stem}.classes.mel")
        cloudio.write_labels(inference.classes_to_mel(classes), dst)
        print(f"wrote {dst} ({int(((classes == inference.DI) & c.valid).sum())} discarded)")


def cmd_eval(args, cfg):
    truth, pred = Path(_need(args, "truth_dir")), Path(_need(args, "pred_dir"))
    scans = sorted(truth.glob("*.meoc"))
    if not scans:
        raise EchoDenoiseError(f"no .meoc scans in {truth}")
    preds, labels = [], []
    for p in scans:
        lab = cloudio.read_labels(_labels_path(p))
        codes = cloudio.read_labels(pred / f"{p.stem}.classes.mel")
        preds.append(inference.mel_to_classes(codes) == inference.DI)
        labels.append(lab)
    row = evalkit.evaluate(preds, labels, cfg["severity"], cfg["method"])
    print(f"IoU(noise) {row.iou_noise:.4f}  IoU(valid) {row.iou_valid:.4f}  precision {row.precision:.4f}  "
          f"recall {row.recall:.4f}  scans {row.scans}")
    if args.report:
        evalkit.write_report([row], args.report)
        print(f"wrote {args.report}")


def cmd_bench(args, cfg):
    clouds = [cloudio.read_cloud(p) for p in args.inputs]
    if cfg["method"] == "smednet":
        params, enc = denoiser.load_checkpoint(_need(args, "checkpoint"))
        icfg = inference.InferenceConfig(cfg["threshold"], cfg["min_separation"])
        n_params = params.count()

        def runner(c):
            inference.denoise_scan(c, params, enc, icfg)
    else:
        n_params = 0

        def runner(c):
            _baseline_classes(c, cfg)
    stats = evalkit.benchmark(runner, clouds, warmup=cfg["warmup"])
    print(f"{cfg['method']}: median {stats.median_ms:.2f} ms  p95 {stats.p95_ms:.2f} ms over {stats.scans} scans  "
          f"params {n_params}")
    if args.report:
        nan = float("nan")
        row = evalkit.ReportRow(cfg["method"], "", nan, nan, nan, nan, 0, 0, 0, 0, stats.scans, nan,
                                stats.median_ms, stats.p95_ms, n_params)
        evalkit.write_report([row], args.report)
        print(f"wrote {args.report}")


def cmd_export(args, cfg):
    out = _need(args, "out")
    what, fmt = cfg["what"], cfg["format"]
    if what == "loss-log":
        log = denoiser.read_loss_log(args.input)
        if fmt == "csv":
            denoiser.write_loss_log(log, out)
        else:
            img, mask = loss_curve_image(log)
            evalkit.write_pgm(img, out, 0.0, 1.0, mask)
        print(f"wrote {out}")
        return
    if what == "scores":
        grid, valid = read_scores_csv(args.input)
        lo, hi = (float(grid[valid].min()), float(grid[valid].max())) if valid.any() else (0.0, 1.0)
    else:
        codes = cloudio.read_labels(args.input)
        grid = inference.mel_to_classes(codes).astype(float)
        valid = codes != 0
        lo, hi = 0.0, 2.0
    if fmt == "csv":
        write_scores_csv(grid, valid | (what == "classes"), out)
        print(f"wrote {out}")
        return
    for e in range(grid.shape[2]):
        dst = f"{out}.e{e}.pgm"
        evalkit.write_pgm(grid[:, :, e], dst, lo, hi, valid[:, :, e])
        print(f"wrote {dst}")


COMMANDS = {"synth": cmd_synth, "inject": cmd_inject, "train": cmd_train, "denoise": cmd_denoise,
            "baseline": cmd_baseline, "eval": cmd_eval, "bench": cmd_bench, "export": cmd_export}

DATA_ERRORS = (EchoDenoiseError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        cfg = effective_config(args.verb, args)
        _print_config(args.verb, cfg, args)
        COMMANDS[args.verb](args, cfg)
    except (ConfigError, configparser.Error) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
