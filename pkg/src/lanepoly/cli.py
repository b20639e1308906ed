"""Command-line entry point: training, evaluation, polynomial upper-bound
studies, and overlay export.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure.
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import config as config_mod
from . import data, metrics, overlay, training
from .errors import ConfigError, DivergedLoss, LanePolyError, ParseError
from .model import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class DataError(LanePolyError):
    pass


def _load_config(config_path, preset) -> config_mod.RunConfig:
    if preset is not None:
        if preset not in config_mod.PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {sorted(config_mod.PRESETS)}")
        return config_mod.PRESETS[preset]()
    if config_path is not None:
        if not Path(config_path).exists():
            raise ConfigError(f"config file not found: {config_path}")
        return config_mod.load(config_path)
    return config_mod.RunConfig()


def _load_annotations(path, image_size):
    if path is None:
        raise DataError("no annotation file configured")
    if not Path(path).exists():
        raise DataError(f"annotation file not found: {path}")
    try:
        return data.load_annotation_file(path, image_size=image_size)
    except ParseError as e:
        raise DataError(f"{path}: {e}") from e


def _load_image(image_dir, raw_file):
    path = Path(image_dir) / raw_file if image_dir else Path(raw_file)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    return np.asarray(Image.open(path))


def _build_dataset(cfg: config_mod.RunConfig):
    """(image, annotation) pairs from the synthetic generator or from disk."""
    if cfg.synthetic.enabled:
        images, annos = data.generate_synthetic(
            cfg.synthetic.seed, cfg.synthetic.n_images, cfg.synthetic.spec())
        return list(zip(images, annos))
    annos = _load_annotations(cfg.dataset.annotations, cfg.dataset.image_size)
    return [(_load_image(cfg.dataset.image_dir, a.raw_file), a) for a in annos]


def _model_predictions(model, params, image, anno, conf_threshold):
    x = training.to_model_input(image, model.input_size, model.in_channels)
    out = model.predict(params, x)
    return metrics.prediction_lanes(out, anno.image_size, conf_threshold)


def _self_evaluate(model, params, dataset, conf_threshold):
    per_image = []
    for image, anno in dataset:
        preds = _model_predictions(model, params, image, anno, conf_threshold)
        scores, _ = metrics.score_image(preds, anno.usable_lanes(), anno.image_size)
        per_image.append(scores)
    return metrics.aggregate_images(per_image)


@click.group()
def cli():
    """Polynomial lane estimation toolkit."""


@cli.command("upperbound")
@click.option("--gt", "gt_path", type=str, required=True,
              help="TuSimple-format annotation file.")
@click.option("--degree", type=int, default=None, help="Single degree (1..5).")
@click.option("--sweep", is_flag=True, help="Evaluate degrees 1 through 5.")
@click.option("--image-size", default="1280x720", show_default=True,
              help="Annotation resolution, WxH.")
@click.option("--out", "out_path", type=str, default=None,
              help="Write the report table to this file.")
def cmd_upperbound(gt_path, degree, sweep, image_size, out_path):
    """Best-case benchmark scores of least-squares polynomial lane fits."""
    if (degree is None) == (not sweep):
        raise click.UsageError("give exactly one of --degree or --sweep")
    degrees = list(range(1, 6)) if sweep else [degree]
    for d in degrees:
        if not 1 <= d <= 5:
            raise click.UsageError(f"--degree must be in 1..5, got {d}")
    annotations = _load_annotations(gt_path, _parse_size(image_size))
    lines = ["degree     Acc      FP      FN     LPD(px)  fallbacks  greedy-vs-optimal"]
    if not annotations:
        click.echo("warning: annotation file is empty", err=True)
    for d in degrees:
        rep = metrics.upper_bound(annotations, d)
        lines.append(
            f"{d:>6}  {rep.acc:7.4f} {rep.fp:7.4f} {rep.fn:7.4f} {rep.lpd:8.3f}"
            f"  {rep.degenerate_fallbacks:>9}  {rep.greedy_optimal_gap:12.4f}")
    table = "\n".join(lines)
    click.echo(table)
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(table + "\n")


def _parse_size(text) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise click.UsageError(f"invalid size {text!r}, expected WxH") from e


@cli.command("train")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--preset", type=str, default=None,
              help=f"Built-in config preset ({', '.join(config_mod.PRESETS)}).")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--epochs", type=int, default=None)
@click.option("--out", "out_dir", type=str, default=None,
              help="Override the output directory.")
@click.option("--dry-run", is_flag=True,
              help="Validate config, build the model, run one step, exit.")
def cmd_train(config_path, preset, seed, epochs, out_dir, dry_run):
    """Train the regression model and write a checkpoint plus log."""
    cfg = _load_config(config_path, preset)
    if seed is not None:
        cfg = _override(cfg, seed=seed)
    if epochs is not None:
        cfg = _override(cfg, epochs=epochs)
    if out_dir is not None:
        cfg = _override(cfg, output_dir=out_dir)
    model = cfg.model.build()
    dataset = _build_dataset(cfg)
    if not dataset:
        raise DataError("dataset is empty")
    train_cfg = cfg.train_config()
    if dry_run:
        params = model.init_params(np.random.default_rng([cfg.seed, 0]))
        image, anno = dataset[0]
        x = training.to_model_input(image, model.input_size, model.in_channels)
        raw, cache = model.forward(params, x)
        tgt = data.build_target(anno, model.layout.m_max)
        _, _, draw = training.loss_and_grad_raw(
            raw, model.layout, tgt, cfg.loss, anno.image_size[0])
        model.backward(params, cache, draw)
        click.echo("dry run ok: config valid, one forward/backward step done")
        return
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(config_mod.dump(cfg))
    params, log = training.train(model, dataset, train_cfg, cfg.loss,
                                 log_path=out / "train_log.ndjson")
    save_checkpoint(out / "checkpoint.ckpt", model, params)
    click.echo(f"checkpoint: {out / 'checkpoint.ckpt'}")
    click.echo(f"final loss: {log[-1]['loss']:.6f} (initial {log[0]['loss']:.6f})")
    if cfg.dataset.val_annotations:
        val_annos = _load_annotations(cfg.dataset.val_annotations,
                                      cfg.dataset.image_size)
        val = [(_load_image(cfg.dataset.image_dir, a.raw_file), a)
               for a in val_annos]
        rep = _self_evaluate(model, params, val, train_cfg.conf_threshold)
        click.echo(f"validation: {rep.format()}")
    elif cfg.synthetic.enabled:
        rep = _self_evaluate(model, params, dataset, train_cfg.conf_threshold)
        click.echo(f"self-evaluation: {rep.format()}")


def _override(cfg: config_mod.RunConfig, seed=None, epochs=None, output_dir=None):
    d = config_mod.to_dict(cfg)
    if seed is not None:
        d["seed"] = seed
        d["train"]["seed"] = seed
    if epochs is not None:
        d["train"]["epochs"] = epochs
    if output_dir is not None:
        d["output_dir"] = output_dir
    return config_mod.from_dict(d)


@cli.command("evaluate")
@click.option("--gt", "gt_path", type=str, required=True)
@click.option("--pred", "pred_path", type=str, default=None,
              help="TuSimple-style prediction file.")
@click.option("--checkpoint", "ckpt_path", type=str, default=None,
              help="Run inference with this checkpoint instead.")
@click.option("--images", "image_dir", type=str, default=None,
              help="Image root for checkpoint inference.")
@click.option("--image-size", default="1280x720", show_default=True)
@click.option("--conf-threshold", type=float, default=0.5, show_default=True)
@click.option("--out", "out_path", type=str, default=None)
def cmd_evaluate(gt_path, pred_path, ckpt_path, image_dir, image_size,
                 conf_threshold, out_path):
    """Score predictions against ground truth (Acc, FP, FN, LPD)."""
    if (pred_path is None) == (ckpt_path is None):
        raise click.UsageError("give exactly one of --pred or --checkpoint")
    size = _parse_size(image_size)
    gt_annos = _load_annotations(gt_path, size)
    if ckpt_path is not None:
        if not Path(ckpt_path).exists():
            raise DataError(f"checkpoint not found: {ckpt_path}")
        model, params = load_checkpoint(ckpt_path)
        pred_annos = []
        for a in gt_annos:
            image = _load_image(image_dir, a.raw_file)
            preds = _model_predictions(model, params, image, a, conf_threshold)
            pred_annos.append(metrics.sample_to_annotation(preds, a))
        if out_path:
            pred_file = Path(out_path).with_suffix(".pred.json")
            pred_file.parent.mkdir(parents=True, exist_ok=True)
            pred_file.write_text(data.serialize_annotations(pred_annos))
    else:
        pred_annos = _load_annotations(pred_path, size)
    try:
        rep = metrics.evaluate_annotations(gt_annos, pred_annos)
    except ValueError as e:
        raise DataError(str(e)) from e
    click.echo(rep.format())
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(rep.format() + "\n")


@cli.command("overlay")
@click.option("--checkpoint", "ckpt_path", type=str, required=True)
@click.option("--images", "image_paths", type=str, multiple=True, required=True,
              help="Image file(s); repeatable.")
@click.option("--out", "out_dir", type=str, required=True)
@click.option("--conf-threshold", type=float, default=0.5, show_default=True)
def cmd_overlay(ckpt_path, image_paths, out_dir, conf_threshold):
    """Draw detected lanes on images and write one PNG per input."""
    if not Path(ckpt_path).exists():
        raise DataError(f"checkpoint not found: {ckpt_path}")
    model, params = load_checkpoint(ckpt_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for path in image_paths:
        try:
            image = np.asarray(Image.open(path))
            h, w = image.shape[:2]
            x = training.to_model_input(image, model.input_size, model.in_channels)
            model_out = model.predict(params, x)
            preds = metrics.prediction_lanes(model_out, (w, h), conf_threshold)
            rendered = overlay.draw_predictions(image, preds)
            target = out / (Path(path).stem + ".png")
            Image.fromarray(rendered).save(target)
            click.echo(f"{path} -> {target} ({len(preds)} lanes)")
        except Exception as e:  # per-file failures are warnings
            failures += 1
            click.echo(f"warning: {path}: {e}", err=True)
    if failures == len(image_paths):
        raise DataError("all overlay inputs failed")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except (click.UsageError, ConfigError) as e:
        click.echo(f"error: {e.format_message() if hasattr(e, 'format_message') else e}",
                   err=True)
        return EXIT_USAGE
    except (DataError, ParseError) as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_DATA
    except (DivergedLoss, FloatingPointError) as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
