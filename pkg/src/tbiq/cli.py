from __future__ import annotations

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .checkpoint import CheckpointFormatError
from .config_utils import read_package_text, resolve_study_config, resolve_study_filename
from .dataset import DatasetFormatError, ImageSet, load_dataset
from .ensemble import TaskSpec, crop_set
from .study_config import STUDY_COMMANDS, ConfigError, StudySpec, config_dict

logger = logging.getLogger("tbiq")

_FORMAT_ERRORS = (ConfigError, DatasetFormatError, CheckpointFormatError)
_RESOLUTION_CHOICES = ("HR", "LR", "SR")


def _append_arg(argv: list[str], flag: str, value, *, formatter=str) -> None:
    if value is None:
        return
    if isinstance(value, str) and value == "":
        return
    argv.extend([flag, formatter(value)])


def _append_repeat_args(argv: list[str], flag: str, values) -> None:
    if not values:
        return
    for entry in values:
        argv.extend([flag, str(entry)])


def _load_study(args, ref: Optional[str] = None) -> tuple[StudySpec, TaskSpec]:
    """Resolve the config, apply ``--seed``/``--threads``/``--log-level`` and configure logging."""
    from .pipeline import setup_logging

    resolved = resolve_study_config(getattr(args, "config", None) or ref)
    study, task = resolved.parse()
    if getattr(args, "seed", None) is not None:
        if int(args.seed) < 0:
            raise SystemExit(f"--seed must be >= 0, got {args.seed}")
        study = replace(study, seed=int(args.seed))
    setup_logging(
        {"logging": {"level": study.log_level, "file": study.log_file}},
        getattr(args, "log_level", None),
    )
    threads = getattr(args, "threads", None) or study.threads
    if threads:
        import torch

        torch.set_num_threads(int(threads))
    logger.debug("Loaded config from %s", resolved.source)
    return study, task


def _with_length(task: TaskSpec, length: Optional[int]) -> TaskSpec:
    if length is None:
        return task
    if task.kind != "rayleigh":
        raise SystemExit("--length only applies to the rayleigh task.")
    if int(length) < 3:
        raise SystemExit(f"--length must be >= 3, got {length}")
    return task.with_signal_length(int(length))


def _load_net(path: Optional[str]):
    if not path:
        return None
    from .checkpoint import load_checkpoint

    net, _, _ = load_checkpoint(path)
    return net


def _fit_crop(images: ImageSet, task: TaskSpec) -> ImageSet:
    if images.shape == tuple(task.crop_size):
        return images
    return crop_set(images, task.crop_size)


def _images(
    path: Optional[str],
    task: TaskSpec,
    study: StudySpec,
    split: str,
    n_per_class: int,
    resolution: str,
    *,
    sr_net=None,
    crop: bool = True,
) -> ImageSet:
    """Load a dataset file, or generate the split from the config's seed streams."""
    if path:
        images = load_dataset(path)
        return _fit_crop(images, task) if crop else images
    from .studies import measured_set

    if resolution == "SR" and sr_net is None:
        raise SystemExit("SR images need --sr-model.")
    return measured_set(task, study, split, n_per_class, resolution, sr_net=sr_net, crop=crop)


def _create_run(args, study: StudySpec, task: TaskSpec, suffix: str = ""):
    from .pipeline import create_run_dir, resolve_out_dir, save_text
    from .study_config import emit_config

    out_dir = resolve_out_dir(getattr(args, "out_dir", None), study.output.dir)
    run = create_run_dir(out_dir, f"{study.run_name}{suffix}", config_dict(study, task))
    save_text(emit_config(study, task), run.path("config.used.yml"))
    return run


def _handle_gen(args) -> int:
    from .dataset import save_dataset

    study, task = _load_study(args)
    task = _with_length(task, args.length)
    images = _images(
        None,
        task,
        study,
        args.split,
        args.n_per_class,
        args.resolution,
        sr_net=_load_net(args.sr_model),
        crop=not args.full_size,
    )
    path = save_dataset(args.out, images.images, images.labels)
    height, width = images.shape
    logger.info("Wrote %d %s images (%dx%d) to %s", len(images), args.resolution, height, width, path)
    print(f"Wrote {path}")
    return 0


def _handle_train_sr(args) -> int:
    from .checkpoint import save_checkpoint
    from .modeling import build_model
    from .pipeline import save_frame
    from .seeding import derive_seed
    from .sr_models import train_sr

    study, task = _load_study(args)
    task = _with_length(task, args.length)
    if bool(args.lr_data) != bool(args.hr_data):
        raise SystemExit("--lr-data and --hr-data must be given together.")
    spec = study.srcnn if args.layers is None else replace(study.srcnn, n_layers=int(args.layers))
    config = study.sr_training
    if args.epochs is not None:
        config = replace(config, epochs=int(args.epochs))
    if args.learning_rate is not None:
        config = replace(config, learning_rate=float(args.learning_rate))
    config = replace(config, seed=derive_seed(study.seed, "srcnn_shuffle", spec.n_layers), on_the_fly_noise=False)
    sizes = study.sizes
    lr_train = _images(args.lr_data, task, study, "sr_train", sizes.sr_train_per_class, "LR", crop=False)
    hr_train = _images(args.hr_data, task, study, "sr_train", sizes.sr_train_per_class, "HR", crop=False)
    lr_val: Optional[ImageSet] = None
    hr_val: Optional[ImageSet] = None
    if not args.lr_data:
        lr_val = _images(None, task, study, "sr_val", sizes.sr_val_per_class, "LR", crop=False)
        hr_val = _images(None, task, study, "sr_val", sizes.sr_val_per_class, "HR", crop=False)
    net = build_model("srcnn", spec, derive_seed(study.seed, "srcnn_init", spec.n_layers))
    result = train_sr(
        net,
        lr_train.images,
        hr_train.images,
        config,
        lr_val=None if lr_val is None else lr_val.images,
        hr_val=None if hr_val is None else hr_val.images,
        label=f"srcnn[{spec.n_layers}]",
    )
    run = _create_run(args, study, task, "_srcnn")
    path = save_checkpoint(
        run.path("srcnn.olnn"),
        result.net,
        result.optimizer,
        metadata={"kind": "srcnn", "n_layers": spec.n_layers, "best_epoch": result.best_epoch},
    )
    save_frame(result.history, run.path("history_sr.csv"))
    logger.info("SRCNN best epoch %d (loss %.6g)", result.best_epoch, result.best_loss)
    print(f"Wrote {path}")
    return 0


def _handle_train_observer(args) -> int:
    from .checkpoint import save_checkpoint
    from .learned import LearnedObserverSpec, train_learned_observer
    from .modeling import build_model
    from .observers import load_template
    from .pipeline import save_frame
    from .seeding import derive_seed

    study, task = _load_study(args)
    task = _with_length(task, args.length)
    blocks = int(args.blocks) if args.blocks is not None else int(study.resnet.blocks[0])
    init = args.init or study.resnet.init
    rho = load_template(args.template) if args.template else None
    if init == "rho_template" and rho is None:
        raise SystemExit("init 'rho_template' needs --template (an RHO .tmpl file).")
    side = int(task.crop_size[0])
    spec = LearnedObserverSpec(
        n_residual_blocks=blocks,
        filters=study.resnet.filters,
        init=init,
        template_kernel=side if init == "rho_template" else 0,
    )
    sr_net = _load_net(args.sr_model)
    sizes = study.sizes
    train_set = _images(
        args.train_data, task, study, "obs_train", sizes.observer_train_per_class, args.resolution, sr_net=sr_net
    )
    val_set = _images(
        args.val_data, task, study, "obs_val", sizes.observer_val_per_class, args.resolution, sr_net=sr_net
    )
    config = replace(
        study.observer_training,
        seed=derive_seed(study.seed, "resnet_shuffle", args.resolution, blocks),
        on_the_fly_noise=False,
    )
    if args.epochs is not None:
        config = replace(config, epochs=int(args.epochs))
    net = build_model(
        "resnet_observer",
        spec,
        derive_seed(study.seed, "resnet_init", args.resolution, blocks),
        rho_template=rho,
    )
    result = train_learned_observer(
        net,
        train_set.images,
        train_set.labels,
        config,
        val_images=val_set.images,
        val_labels=val_set.labels,
        augment=study.augment_flips,
        label=f"ResNet-{blocks}[{args.resolution}]",
    )
    run = _create_run(args, study, task, f"_resnet{blocks}_{args.resolution}")
    path = save_checkpoint(
        run.path("observer.olnn"),
        result.net,
        result.optimizer,
        metadata={"kind": "resnet_observer", "blocks": blocks, "resolution": args.resolution},
    )
    save_frame(result.history, run.path("history_observer.csv"))
    print(f"Wrote {path}")
    return 0


def _linear_scores(args, study: StudySpec, task: TaskSpec, test: ImageSet, sr_net) -> tuple[str, np.ndarray]:
    from .gabor import channelize, channelized_stats, gabor_channels
    from .observers import (
        cho_template,
        estimate_stats,
        hotelling_template,
        lambda_grid,
        score_linear,
        select_rho_lambda,
    )

    sizes = study.sizes
    stats_set = _images(args.stats, task, study, "stats", sizes.stats_per_class, args.resolution, sr_net=sr_net)
    if args.observer == "cho":
        channels = gabor_channels(task.crop_size)
        stats = channelized_stats(channels, stats_set.class_images(0), stats_set.class_images(1))
        template = cho_template(stats, study.cho.regularize_lambda)
        return "CHO", score_linear(template, channelize(channels, test.images))
    stats = estimate_stats(stats_set.class_images(0), stats_set.class_images(1))
    if args.observer == "ho":
        return "HO", score_linear(hotelling_template(stats), test.images)
    val = _images(args.val, task, study, "val", sizes.val_per_class, args.resolution, sr_net=sr_net)
    grid = study.rho
    selection = select_rho_lambda(
        stats,
        val.class_images(0),
        val.class_images(1),
        lambda_grid(grid.lambda_min, grid.lambda_max, grid.per_decade),
    )
    return "RHO", score_linear(selection.template, test.images)


def _handle_eval(args) -> int:
    from .metrics import delong_ci
    from .pipeline import save_frame

    study, task = _load_study(args)
    task = _with_length(task, args.length)
    sr_net = _load_net(args.sr_model)
    test = _images(args.test, task, study, "test", study.sizes.test_per_class, args.resolution, sr_net=sr_net)
    if args.model:
        from .learned import score_learned

        net = _load_net(args.model)
        observer, scores = "learned", score_learned(net, test.images)
    elif args.template:
        from .gabor import channelize, gabor_channels
        from .observers import load_template, score_linear

        template = load_template(args.template)
        data = test.images
        if template.kind == "CHO":
            data = channelize(gabor_channels(task.crop_size), data)
        observer, scores = template.kind, score_linear(template, data)
    else:
        observer, scores = _linear_scores(args, study, task, test, sr_net)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    test_set_id = args.test or f"test:{args.resolution}"
    roc = delong_ci(scores[test.labels == 0], scores[test.labels == 1], study.ci_level, test_set_id=test_set_id)
    if args.scores_out:
        frame = pd.DataFrame({"id": test.ids, "label": test.labels.astype(int), "score": scores})
        out_path = Path(args.scores_out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_frame(frame, out_path)
    payload = {
        "observer": observer,
        "resolution": args.resolution,
        "auc": roc.auc,
        "ci_lo": roc.ci_lo,
        "ci_hi": roc.ci_hi,
        "level": roc.level,
        "variance": roc.delong_variance,
        "n0": roc.n0,
        "n1": roc.n1,
        "test_set": test_set_id,
    }
    print(json.dumps(payload, ensure_ascii=False, indent=2))
    return 0


def _handle_study(args) -> int:
    from .studies import run_study

    study, task = _load_study(args, args.kind)
    expected = STUDY_COMMANDS[args.kind]
    if study.kind != expected:
        raise SystemExit(f"Config describes a {study.kind} study, but '{args.kind}' runs {expected}.")
    if args.run_name:
        study = replace(study, output=replace(study.output, run_name=args.run_name))
    run = _create_run(args, study, task)
    result = run_study(study, task, run=run)
    failed = int((result.report["status"] == "failed").sum()) if not result.report.empty else 0
    print(f"Wrote {run.path('report.csv')} ({len(result.report)} rows, {failed} failed)")
    return 0


def _handle_seeds(args) -> int:
    from .project_tools import seed_sweep

    argv: list[str] = []
    _append_arg(argv, "--config", getattr(args, "config", None))
    _append_repeat_args(argv, "--seed", getattr(args, "seeds", None))
    _append_arg(argv, "--out-dir", getattr(args, "out_dir", None))
    _append_arg(argv, "--output", getattr(args, "output", None))
    _append_arg(argv, "--run-name-prefix", getattr(args, "run_name_prefix", None))
    _append_arg(argv, "--threads", getattr(args, "threads", None))
    _append_arg(argv, "--log-level", getattr(args, "log_level", None))
    return int(seed_sweep.main(argv) or 0)


def _handle_summarize(args) -> int:
    from .project_tools import summarize_runs

    summarize_runs.run(args)
    return 0


def _handle_init_config(args) -> int:
    filename = resolve_study_filename(args.name)
    content = read_package_text("tbiq.config", filename)

    if args.out:
        out_path = Path(args.out)
        if out_path.exists() and out_path.is_dir():
            out_path = out_path / filename
        elif not out_path.suffix:
            out_path.mkdir(parents=True, exist_ok=True)
            out_path = out_path / filename
    else:
        out_dir = Path.cwd() / "config"
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / filename

    if out_path.exists() and not args.force:
        raise SystemExit(f"Refusing to overwrite existing file: {out_path}")

    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(content, encoding="utf-8")
    print(f"Wrote {out_path}")
    return 0


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        help="Path to YAML config or built-in name (default/rayleigh-length/srcnn-depth/mc-capacity).",
    )
    common.add_argument("--seed", type=int, help="Override study.seed.")
    common.add_argument("--out-dir", help="Run output directory (default: $TBIQ_OUT_DIR, then output.dir).")
    common.add_argument("--threads", type=int, help="torch intra-op threads.")
    common.add_argument("--log-level", help="Override logging.level (DEBUG/INFO/WARNING).")
    return common


def build_parser() -> argparse.ArgumentParser:
    from .project_tools import summarize_runs

    parser = argparse.ArgumentParser(prog="tbiq", description="Task-based image quality for super-resolution")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    gen = subparsers.add_parser("gen", parents=[common], help="Generate a measured dataset file")
    gen.add_argument("--split", default="test", help="Seed-stream split name (default: test).")
    gen.add_argument("--n-per-class", type=int, required=True, help="Images per class.")
    gen.add_argument("--resolution", choices=_RESOLUTION_CHOICES, default="HR")
    gen.add_argument("--length", type=int, help="Rayleigh signal length L.")
    gen.add_argument("--sr-model", help="SRCNN checkpoint (.olnn) for SR images.")
    gen.add_argument("--full-size", action="store_true", help="Skip the observer crop.")
    gen.add_argument("--out", required=True, help="Output .tbiq path.")
    gen.set_defaults(func=_handle_gen)

    train_sr = subparsers.add_parser("train-sr", parents=[common], help="Train an SRCNN and save its checkpoint")
    train_sr.add_argument("--layers", type=int, help="SRCNN depth (2-8).")
    train_sr.add_argument("--epochs", type=int)
    train_sr.add_argument("--learning-rate", type=float)
    train_sr.add_argument("--length", type=int, help="Rayleigh signal length L.")
    train_sr.add_argument("--lr-data", help="LR training images (.tbiq); requires --hr-data.")
    train_sr.add_argument("--hr-data", help="HR training images (.tbiq), paired with --lr-data.")
    train_sr.set_defaults(func=_handle_train_sr)

    train_obs = subparsers.add_parser(
        "train-observer", parents=[common], help="Train a ResNet observer and save its checkpoint"
    )
    train_obs.add_argument("--resolution", choices=_RESOLUTION_CHOICES, default="HR")
    train_obs.add_argument("--blocks", type=int, help="Residual blocks (2/4/6/8).")
    train_obs.add_argument("--init", choices=("random", "rho_template"))
    train_obs.add_argument("--template", help="RHO template (.tmpl) for rho_template init.")
    train_obs.add_argument("--sr-model", help="SRCNN checkpoint (.olnn) for SR images.")
    train_obs.add_argument("--train-data", help="Training images (.tbiq).")
    train_obs.add_argument("--val-data", help="Validation images (.tbiq).")
    train_obs.add_argument("--epochs", type=int)
    train_obs.add_argument("--length", type=int, help="Rayleigh signal length L.")
    train_obs.set_defaults(func=_handle_train_observer)

    evaluate = subparsers.add_parser("eval", parents=[common], help="AUC with DeLong CI for one observer")
    source = evaluate.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", help="Learned observer checkpoint (.olnn).")
    source.add_argument("--template", help="Linear template (.tmpl).")
    source.add_argument("--observer", choices=("rho", "cho", "ho"), help="Fit a linear observer first.")
    evaluate.add_argument("--resolution", choices=_RESOLUTION_CHOICES, default="HR")
    evaluate.add_argument("--sr-model", help="SRCNN checkpoint (.olnn) for SR images.")
    evaluate.add_argument("--test", help="Test images (.tbiq); generated when omitted.")
    evaluate.add_argument("--stats", help="Covariance-estimation images (.tbiq) for --observer.")
    evaluate.add_argument("--val", help="Validation images (.tbiq) for the RHO lambda selection.")
    evaluate.add_argument("--length", type=int, help="Rayleigh signal length L.")
    evaluate.add_argument("--scores-out", help="Optional CSV of per-image scores.")
    evaluate.set_defaults(func=_handle_eval)

    study = subparsers.add_parser("study", parents=[common], help="Run one of the three studies")
    study.add_argument("kind", choices=tuple(STUDY_COMMANDS))
    study.add_argument("--run-name", help="Override output.run_name.")
    study.set_defaults(func=_handle_study)

    seeds = subparsers.add_parser("seeds", help="Repeat a study over several master seeds and summarize")
    seeds.add_argument("--config", help="Path to YAML config or built-in name.")
    seeds.add_argument("--seed", dest="seeds", type=int, action="append", help="Master seed (repeatable).")
    seeds.add_argument("--out-dir", help="Run output directory.")
    seeds.add_argument("--output", help="Combined report CSV (default: <out-dir>/seeds_<name>.csv).")
    seeds.add_argument("--run-name-prefix", help="Run name prefix (default: study name).")
    seeds.add_argument("--threads", type=int)
    seeds.add_argument("--log-level")
    seeds.set_defaults(func=_handle_seeds)

    summarize = subparsers.add_parser("summarize", help="Summarize saved study runs into one CSV")
    summarize_runs.add_summarize_args(summarize)
    summarize.set_defaults(func=_handle_summarize)

    init_cfg = subparsers.add_parser(
        "init-config", help="Export a packaged config template to the filesystem"
    )
    init_cfg.add_argument(
        "--name",
        default="default",
        help="Template to export (default/rayleigh-length/srcnn-depth/mc-capacity).",
    )
    init_cfg.add_argument(
        "--out",
        help="Output path or directory (default: ./config/<template>.yml).",
    )
    init_cfg.add_argument(
        "--force",
        action="store_true",
        help="Overwrite existing files.",
    )
    init_cfg.set_defaults(func=_handle_init_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func = getattr(args, "func", None)
    if func is None:
        parser.print_help()
        return 1
    try:
        return int(func(args) or 0)
    except _FORMAT_ERRORS as exc:
        raise SystemExit(str(exc)) from exc


if __name__ == "__main__":
    raise SystemExit(main())
