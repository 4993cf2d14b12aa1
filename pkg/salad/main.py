# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Application layer.
CLI logic and the command functions behind `salad <command>`.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from textwrap import dedent

from . import __version__
from ._schema import (
    SCHEMA_PATH,
    AblationSuite,
    InferenceConfig,
    ReportFormat,
    RunConfig,
    ThresholdPreset,
    run_schema,
)
from .config import (
    apply_overrides,
    load_config,
    strategy_overrides,
    verify,
    write_effective_config,
)
from .datagen import generate_synthetic
from .evaluation import map_at_thresholds
from .exceptions import ConfigError, SaladError
from .inference import detect
from .io import (
    MetricLog,
    load_checkpoint,
    load_dataset,
    read_proposals,
    save_checkpoint,
    save_dataset,
    write_proposals,
)
from .outputs import render_report, write_reports
from .trainer import evaluate, run_ablation, train
from .utils import ensure_dir

logger = logging.getLogger(__name__)

ANET_TOP_K = 20
LAST_CHECKPOINT = "checkpoint-last.ckpt"
FINAL_CHECKPOINT = "checkpoint-final.ckpt"
BEST_CHECKPOINT = "checkpoint-best.ckpt"
METRIC_LOG = "metrics.jsonl"


def effective_inference(cfg: RunConfig) -> InferenceConfig:
    """The inference settings, capping proposals at 20 per video for the `anet` preset."""
    inference = cfg.inference
    if inference.top_k is None and cfg.evaluation.thresholds == ThresholdPreset.ANET:
        inference = inference.model_copy(update={"top_k": ANET_TOP_K})
    return inference


def parse_thresholds(text: str):
    if text in {p.value for p in ThresholdPreset}:
        return text
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(
            f"thresholds must be a preset ({', '.join(p.value for p in ThresholdPreset)}) "
            f"or a comma separated list of numbers, got '{text}'"
        ) from None


def parse_seeds(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"seeds must be a comma separated list of integers, got '{text}'") from None


def _checkpoint_run_config(checkpoint, config_path, overrides) -> RunConfig:
    """The run config of an evaluation: the given file, else the one stored in the checkpoint."""
    if config_path is not None:
        return load_config(config_path, overrides)
    stored = dict(checkpoint.config)
    stored.setdefault("seed", checkpoint.model_config.seed)
    return verify(apply_overrides(stored, overrides))


def cmd_gen_data(config_path, out_path, overrides=()):
    cfg = load_config(config_path, overrides)
    dataset = generate_synthetic(cfg.synth)
    out_path = Path(out_path)
    ensure_dir(out_path.parent)
    save_dataset(dataset, out_path)
    write_effective_config(cfg, out_path.parent)
    print(f"videos: {len(dataset)}")
    print(f"instances: {dataset.num_instances}")
    for name, count in dataset.class_histogram().items():
        print(f"  {name}: {count}")


def cmd_train(config_path, data_path, out_dir, overrides=(), resume=None, reset_optimizer=False):
    cfg = load_config(config_path, overrides)
    out_dir = ensure_dir(out_dir)
    dataset = load_dataset(data_path)
    checkpoint = None
    if resume is not None:
        checkpoint = load_checkpoint(resume, cfg.model, reset_optimizer=reset_optimizer)
        logger.info("resuming from %s at epoch %d, step %d", resume, checkpoint.epoch, checkpoint.step)
    write_effective_config(cfg, out_dir)
    config_echo = cfg.model_dump(mode="json")
    metric_log = MetricLog(out_dir / METRIC_LOG, truncate=checkpoint is None)

    def save_last(result):
        save_checkpoint(result.checkpoint(config_echo), out_dir / LAST_CHECKPOINT)

    result = train(
        dataset,
        cfg.model,
        cfg.train,
        effective_inference(cfg),
        resume=checkpoint,
        metric_log=metric_log,
        on_epoch=save_last,
    )
    save_checkpoint(result.checkpoint(config_echo), out_dir / FINAL_CHECKPOINT)
    save_checkpoint(result.checkpoint(config_echo, best=True), out_dir / BEST_CHECKPOINT)
    if result.best_map is not None:
        logger.info(
            "best validation mAP@%g = %.4f at epoch %d",
            cfg.train.select_threshold,
            result.best_map,
            result.best_epoch,
        )
    return result


def cmd_eval(
    data_path,
    out_dir,
    checkpoint_path=None,
    proposals_path=None,
    config_path=None,
    overrides=(),
    thresholds=None,
    fmt=None,
):
    if (checkpoint_path is None) == (proposals_path is None):
        raise ConfigError("give exactly one of --checkpoint and --proposals")
    dataset = load_dataset(data_path)
    gts = {v.video_id: v.ground_truth for v in dataset}
    if checkpoint_path is not None:
        model_cfg = load_config(config_path, overrides).model if config_path is not None else None
        checkpoint = load_checkpoint(checkpoint_path, model_cfg, reset_optimizer=True)
        cfg = _checkpoint_run_config(checkpoint, config_path, overrides)
    else:
        checkpoint = None
        cfg = load_config(config_path, overrides) if config_path is not None else None
    thresholds = thresholds or (cfg.evaluation.thresholds if cfg is not None else ThresholdPreset.THUMOS)
    fmt = fmt or (cfg.evaluation.format if cfg is not None else ReportFormat.TABLE)
    if checkpoint is not None:
        if cfg.evaluation.thresholds != thresholds:
            cfg = cfg.model_copy(update={"evaluation": cfg.evaluation.model_copy(update={"thresholds": thresholds})})
        report = evaluate(checkpoint.params, dataset, effective_inference(cfg), thresholds)
    else:
        report = map_at_thresholds(read_proposals(proposals_path), gts, thresholds, dataset.class_map)
    out_dir = ensure_dir(out_dir)
    if cfg is not None:
        write_effective_config(cfg, out_dir)
    write_reports(report, out_dir, "report")
    print(render_report(report, fmt), end="")
    return report


def cmd_infer(checkpoint_path, data_path, out_path, config_path=None, overrides=()):
    model_cfg = load_config(config_path, overrides).model if config_path is not None else None
    checkpoint = load_checkpoint(checkpoint_path, model_cfg, reset_optimizer=True)
    cfg = _checkpoint_run_config(checkpoint, config_path, overrides)
    dataset = load_dataset(data_path)
    inference = effective_inference(cfg)
    proposals = {
        video.video_id: detect(video.features, checkpoint.params, video.frame_rate, inference)
        for video in dataset
    }
    out_path = Path(out_path)
    ensure_dir(out_path.parent)
    write_proposals(proposals, out_path)
    write_effective_config(cfg, out_path.parent)
    logger.info("wrote %d proposals for %d videos to %s", sum(map(len, proposals.values())), len(dataset), out_path)
    return proposals


def cmd_ablate(config_path, data_path, suite, seeds, out_dir, overrides=(), checkpoint_path=None, fmt=None):
    try:
        suite = AblationSuite(suite)
    except ValueError:
        valid = ", ".join(s.value for s in AblationSuite)
        raise ConfigError(f"unknown ablation suite '{suite}'; valid suites: {valid}") from None
    cfg = load_config(config_path, overrides)
    params = None
    if checkpoint_path is not None:
        if suite != AblationSuite.FUSION:
            raise ConfigError("--checkpoint only applies to the fusion suite")
        params = load_checkpoint(checkpoint_path, cfg.model, reset_optimizer=True).params
    dataset = load_dataset(data_path)
    out_dir = ensure_dir(out_dir)
    write_effective_config(cfg, out_dir)
    table = run_ablation(
        dataset,
        cfg.model,
        cfg.train,
        effective_inference(cfg),
        suite,
        seeds or [cfg.seed],
        cfg.evaluation.thresholds,
        params=params,
    )
    write_reports(table, out_dir, f"ablation-{suite}")
    print(render_report(table, fmt or cfg.evaluation.format), end="")
    return table


class _HelpConfigAction(argparse.Action):
    def __init__(
        self,
        option_strings,
        dest=argparse.SUPPRESS,
        default=argparse.SUPPRESS,
        help="describe the available keys of salad run configuration files and exit",
    ):
        super().__init__(
            option_strings=option_strings,
            dest=dest,
            default=default,
            nargs=0,
            help=help,
        )

    def __call__(self, parser, namespace, values, option_string=None):
        parser._print_message(self._build_message(), sys.stdout)
        parser.exit()

    def _build_message(self):
        msg = dedent(
            """
            salad run configuration
            =======================

            salad version {version}

            A run configuration is a YAML file (optionally a Jinja template of
            one) with a required top-level `seed` and the sections below. Any
            key can be overridden on the command line with
            `--set section.key=value`.

            Available keys
            --------------

            {available_keys}
            """
        )
        available_keys = [f"> Run `python -m salad._schema` to write the full schema to {SCHEMA_PATH}", ""]
        schema = run_schema()
        for name, prop in schema["properties"].items():
            available_keys.append(f"{name}")
            available_keys.append("·" * len(name))
            available_keys.append(prop.get("description", "No description found."))
            ref = prop.get("$ref") or next(
                (item["$ref"] for item in prop.get("allOf", ()) if "$ref" in item), None
            )
            if ref:
                section = schema["$defs"][ref.rsplit("/", 1)[-1]]
                for key, sub in section.get("properties", {}).items():
                    available_keys.append(f"  {name}.{key}: {sub.get('description', '')}")
            available_keys.append("")
        return msg.format(version=__version__, available_keys="\n".join(available_keys))


def _add_config_args(p, required=True):
    if required:
        p.add_argument("config", help="run configuration YAML file", metavar="CONFIG")
    else:
        p.add_argument(
            "-c", "--config", help="run configuration YAML file", metavar="CONFIG", default=None
        )
    p.add_argument(
        "--set",
        action="append",
        default=[],
        dest="overrides",
        metavar="KEY=VALUE",
        help="override a configuration value, e.g. --set train.epochs=5 (repeatable)",
    )


def _add_format_arg(p):
    p.add_argument(
        "--format",
        choices=[str(f) for f in ReportFormat],
        default=None,
        dest="fmt",
        help="report format printed to stdout (all formats are written to the output directory)",
    )


def build_parser():
    p = argparse.ArgumentParser(
        prog="salad", description="self-assessment learning for temporal action detection"
    )
    p.add_argument("--help-config", action=_HelpConfigAction)
    p.add_argument("--debug", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument(
        "-V",
        "--version",
        help="display the version being used and exit",
        action="version",
        version=f"%(prog)s {__version__}",
    )
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_config_args(gen)
    gen.add_argument("-o", "--output", required=True, metavar="PATH", help="dataset file to write")

    tr = sub.add_parser("train", help="train a model")
    _add_config_args(tr)
    tr.add_argument("data", metavar="DATASET")
    tr.add_argument("-o", "--output-dir", required=True, metavar="DIR")
    tr.add_argument(
        "--strategy",
        metavar="NAME",
        help="assignment or pruning variant, e.g. top1iou, no_pruning, iou_threshold",
    )
    tr.add_argument("--resume", metavar="CHECKPOINT", help="continue from this checkpoint")
    tr.add_argument(
        "--reset-optimizer",
        action="store_true",
        help="start Adam afresh when resuming (required if the checkpoint has no optimizer state)",
    )

    ev = sub.add_parser("eval", help="score a checkpoint or a proposal file")
    ev.add_argument("data", metavar="DATASET")
    ev.add_argument("-o", "--output-dir", required=True, metavar="DIR")
    source = ev.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", metavar="CHECKPOINT")
    source.add_argument("--proposals", metavar="CSV")
    ev.add_argument(
        "--thresholds",
        metavar="PRESET|LIST",
        help="'thumos', 'anet' or a comma separated list of tIoU thresholds",
    )
    _add_config_args(ev, required=False)
    _add_format_arg(ev)

    inf = sub.add_parser("infer", help="write the detections of a checkpoint")
    inf.add_argument("checkpoint", metavar="CHECKPOINT")
    inf.add_argument("data", metavar="DATASET")
    inf.add_argument("-o", "--output", required=True, metavar="CSV")
    _add_config_args(inf, required=False)

    ab = sub.add_parser("ablate", help="compare the variants of an ablation suite")
    _add_config_args(ab)
    ab.add_argument("data", metavar="DATASET")
    ab.add_argument("--suite", required=True, choices=[str(s) for s in AblationSuite])
    ab.add_argument("--seeds", default="", metavar="LIST", help="comma separated seeds")
    ab.add_argument("--checkpoint", metavar="CHECKPOINT", help="trained model for the fusion suite")
    ab.add_argument("-o", "--output-dir", required=True, metavar="DIR")
    _add_format_arg(ab)
    return p


def _dispatch(args):
    if args.command == "gen-data":
        cmd_gen_data(args.config, args.output, args.overrides)
    elif args.command == "train":
        overrides = list(args.overrides)
        if args.strategy:
            overrides.extend(strategy_overrides(args.strategy))
        cmd_train(
            args.config,
            args.data,
            args.output_dir,
            overrides,
            resume=args.resume,
            reset_optimizer=args.reset_optimizer,
        )
    elif args.command == "eval":
        cmd_eval(
            args.data,
            args.output_dir,
            checkpoint_path=args.checkpoint,
            proposals_path=args.proposals,
            config_path=args.config,
            overrides=args.overrides,
            thresholds=parse_thresholds(args.thresholds) if args.thresholds else None,
            fmt=args.fmt,
        )
    elif args.command == "infer":
        cmd_infer(args.checkpoint, args.data, args.output, args.config, args.overrides)
    elif args.command == "ablate":
        cmd_ablate(
            args.config,
            args.data,
            args.suite,
            parse_seeds(args.seeds),
            args.output_dir,
            args.overrides,
            checkpoint_path=args.checkpoint,
            fmt=args.fmt,
        )


def main(argv=None):
    logging.basicConfig(level=logging.INFO)
    p = build_parser()
    args = p.parse_args(argv)
    logger.debug("Got the following cli arguments: '%s'", args)

    if args.verbose or args.debug:
        logging.getLogger("salad").setLevel(logging.DEBUG)

    try:
        _dispatch(args)
    except ConfigError as exc:
        print(exc.error_msg(), file=sys.stderr)
        sys.exit(exc.exit_code)
    except SaladError as exc:
        if args.debug:
            logger.exception("%s failed", args.command)
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    main()
