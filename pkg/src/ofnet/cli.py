"""Command-line interface.

Subcommands: gen-data, train, infer, eval, plot, ablate.  Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .ablation import run_ablation
from .config import CONFIG_NAME, RunConfig
from .evaluation import default_thresholds, evaluate, write_reports
from .exceptions import ConfigurationError, DataError, NumericError, UsageError
from .model import build_model, load_checkpoint
from .plotting import plot_reports
from .postprocess import OcclusionBoundary, postprocess
from .synth import generate_dataset, read_dataset, read_raw_f32, write_dataset, write_raw_f32
from .training import train

log = logging.getLogger("ofnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PREDICTION_FORMAT = "ofnet-predictions"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- predictions on disk ------------------------------------------------------------------


def write_predictions(out_dir, ids, edge_probs, orientations) -> Path:
    """Raw float32 edge probability and orientation per image, plus the
    post-processed thin edge map and aligned orientation."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for sid, e, o in zip(ids, edge_probs, orientations):
        b = postprocess(e, o)
        write_raw_f32(out / f"{sid}.edge_prob.f32", e)
        write_raw_f32(out / f"{sid}.orientation.f32", o)
        write_raw_f32(out / f"{sid}.thin.f32", b.thin_edge)
        write_raw_f32(out / f"{sid}.aligned.f32", b.orientation)
        shapes[sid] = list(np.shape(e))
    manifest = {"format": PREDICTION_FORMAT, "version": 1, "count": len(shapes), "ids": list(shapes), "shapes": shapes}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_predictions(directory) -> dict[str, OcclusionBoundary]:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{d}: no manifest.json in predictions directory") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{d}/manifest.json: invalid JSON ({exc})") from None
    if manifest.get("format") != PREDICTION_FORMAT:
        raise DataError(f"{d}/manifest.json: not a predictions manifest")
    out = {}
    for sid in manifest["ids"]:
        shape = tuple(manifest["shapes"][sid])
        thin = read_raw_f32(d / f"{sid}.thin.f32", shape).astype(np.float64)
        aligned = read_raw_f32(d / f"{sid}.aligned.f32", shape).astype(np.float64)
        out[sid] = OcclusionBoundary(thin, (thin > 0).astype(np.uint8), aligned)
    return out


def _read_png_images(paths):
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    files = [f for f in files if not f.name.endswith(".edge.png")]
    if not files:
        raise DataError("no input images found")
    out = []
    for f in files:
        try:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except (FileNotFoundError, OSError) as exc:
            raise DataError(f"{f}: cannot read image ({exc})") from None
        out.append((f.stem, arr))
    return out


# -- commands -------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> Path:
    out = _require(cfg.out, "--out")
    out_path = Path(out)
    if out_path.exists() and any(out_path.iterdir()):
        if not cfg.force:
            raise UsageError(f"{out} is not empty (use --force to overwrite)")
        for f in out_path.iterdir():
            if f.is_file() and (f.suffix in (".png", ".f32") or f.name in ("manifest.json", CONFIG_NAME)):
                f.unlink()
    samples = generate_dataset(cfg.n, seed=cfg.seed, height=cfg.height, width=cfg.width, **cfg.scene)
    write_dataset(samples, out_path)
    cfg.save(out_path)
    log.info("wrote %d samples to %s", len(samples), out)
    return out_path


def cmd_train(cfg: RunConfig) -> Path:
    dataset = read_dataset(_require(cfg.dataset, "--dataset"))
    out = Path(_require(cfg.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out)
    model = build_model(cfg.model_variant(), seed=cfg.seed)
    tc = cfg.train_config()
    log.info("training %s for %d iterations on %d samples", cfg.variant, tc.iters, len(dataset))
    train(model, dataset, tc, cfg.loss_config(), log_path=out / "loss.csv", checkpoint_dir=out / "checkpoints")
    return out


def cmd_infer(cfg: RunConfig, images=None) -> Path:
    model = load_checkpoint(_require(cfg.checkpoint, "--checkpoint"))
    out = Path(_require(cfg.out, "--out"))
    if images:
        items = _read_png_images(images)
    else:
        samples = read_dataset(_require(cfg.dataset, "--dataset or --images"))
        items = [(s.sample_id, s.image) for s in samples]
    ids, edges, oris = [], [], []
    for sid, img in items:
        e, o = model.predict(img.transpose(2, 0, 1)[None])
        if not (np.isfinite(e).all() and np.isfinite(o).all()):
            raise NumericError(f"non-finite prediction for {sid}")
        ids.append(sid)
        edges.append(e[0])
        oris.append(o[0])
    write_predictions(out, ids, edges, oris)
    cfg.save(out)
    log.info("wrote predictions for %d images to %s", len(ids), out)
    return out


def cmd_eval(cfg: RunConfig) -> Path:
    preds = read_predictions(_require(cfg.predictions, "--predictions"))
    gts = read_dataset(_require(cfg.dataset, "--dataset"))
    gt_ids = [s.sample_id for s in gts]
    missing = [i for i in gt_ids if i not in preds]
    extra = [i for i in preds if i not in set(gt_ids)]
    if missing or extra:
        raise DataError(f"prediction/ground-truth mismatch: missing predictions for {missing}, unexpected {extra}")
    reports = evaluate([preds[i] for i in gt_ids], gts, default_thresholds(cfg.thresholds), cfg.tol)
    out = Path(_require(cfg.out, "--out"))
    write_reports(reports, out, {"tolerance": cfg.tol, "count": len(gts)})
    cfg.save(out)
    for mode, r in reports.items():
        log.info("%s: ODS %.4f OIS %.4f AP %.4f", mode, r.ods, r.ois, r.ap)
    return out


def cmd_plot(cfg: RunConfig) -> list[Path]:
    if not cfg.reports:
        raise UsageError("plot needs at least one report")
    out = Path(_require(cfg.out, "--out"))
    written = plot_reports(cfg.reports, out)
    cfg.save(out)
    return written


def cmd_ablate(cfg: RunConfig):
    train_set = read_dataset(_require(cfg.dataset, "--dataset"))
    test_set = read_dataset(_require(cfg.test_dataset, "--test-dataset"))
    out = Path(_require(cfg.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out)
    result = run_ablation(
        train_set,
        test_set,
        cfg.variants,
        cfg.seeds,
        cfg.train_config(),
        cfg.loss_config(),
        cfg.tol,
        cfg.thresholds,
        out_dir=out,
    )
    result.write(out)
    for v in result.variants():
        print(f"{v:>12s}  OPR ODS {result.mean(v):.4f}  EPR ODS {result.mean(v, 'epr_ods'):.4f}")
    return result


def _require(value, flag):
    if value in (None, ""):
        raise UsageError(f"missing required option {flag}")
    return value


# -- argument handling --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ofnet", description="Occlusion edge and orientation estimation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="resolved config file of an earlier run")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        return sp

    def model_flags(sp):
        sp.add_argument("--variant")
        sp.add_argument("--lambda", dest="lam", type=float, help="orientation loss weight")
        sp.add_argument("--iters", type=int)
        sp.add_argument("--crop", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--flips", action="store_true", default=None)
        sp.add_argument("--checkpoint-every", type=int)

    g = common(sub.add_parser("gen-data", help="write a synthetic dataset"))
    g.add_argument("--n", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--force", action="store_true", default=None)

    t = common(sub.add_parser("train", help="train a model"))
    t.add_argument("--dataset")
    model_flags(t)

    i = common(sub.add_parser("infer", help="run a checkpoint on images"))
    i.add_argument("--checkpoint")
    i.add_argument("--dataset")
    i.add_argument("--images", nargs="+", help="PNG files or directories")

    e = common(sub.add_parser("eval", help="score predictions against ground truth"))
    e.add_argument("--predictions")
    e.add_argument("--dataset")
    e.add_argument("--tol", type=float)
    e.add_argument("--thresholds", type=int)

    pl = common(sub.add_parser("plot", help="draw PR curves as SVG"))
    pl.add_argument("reports", nargs="*", help="evaluation output directories or PR CSV files")

    a = common(sub.add_parser("ablate", help="compare model variants over seeds"))
    a.add_argument("--dataset")
    a.add_argument("--test-dataset")
    a.add_argument("--variants", help="comma-separated variant names")
    a.add_argument("--seeds", help="comma-separated seeds")
    a.add_argument("--tol", type=float)
    a.add_argument("--thresholds", type=int)
    model_flags(a)
    return p


_PLAIN = ("out", "seed", "n", "height", "width", "force", "dataset", "test_dataset", "checkpoint", "predictions", "variant", "tol", "thresholds")
_TRAIN = {"iters": "iters", "crop": "crop", "batch_size": "batch_size", "lr": "learning_rate", "flips": "flips", "checkpoint_every": "checkpoint_every"}


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    d = base.to_dict()
    d["command"] = args.command
    for key in _PLAIN:
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    for key, target in _TRAIN.items():
        v = getattr(args, key, None)
        if v is not None:
            d["train"][target] = v
    if getattr(args, "seed", None) is not None:
        d["train"]["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        d["loss"]["lam"] = args.lam
    if getattr(args, "reports", None):
        d["reports"] = [str(r) for r in args.reports]
    if getattr(args, "variants", None):
        d["variants"] = [v.strip() for v in args.variants.split(",") if v.strip()]
    if getattr(args, "seeds", None):
        try:
            d["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    return RunConfig.from_dict(d)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        if not args.command:
            raise UsageError("a subcommand is required (gen-data, train, infer, eval, plot, ablate)")
        cfg = resolve_config(args)
        if args.command == "infer":
            cmd_infer(cfg, args.images)
        else:
            COMMANDS[args.command](cfg)
        return EXIT_OK
    except NumericError as exc:
        print(f"ofnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigurationError) as exc:
        print(f"ofnet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"ofnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
