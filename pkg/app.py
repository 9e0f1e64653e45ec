import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from components.errors import CompletionError, ConfigError, DataError, GraphError, NumericError
from components.masks.mask_algebra import CompositeSample, amodal_union, build_weighted_mask
from models.completion_config import LOSS_TERMS, ExperimentConfig, RunConfig
from models.report_model import MetricReport
from models.sample_model import SynthesisReport
from services.audit.gradient_audit import FAULT_TARGETS, run_audit
from services.config.config_loader import load_experiment
from services.data.annotation_loader import load_image, parse_annotations
from services.data.sample_store import load_split, read_index
from services.data.synthesis import build_manifest, synthesize_split
from services.reporting.panels import write_panel
from services.reporting.report_format import audit_frame, format_audit_table, write_metrics
from services.training.ablation import run_ablation
from services.training.evaluation import BASELINES, complete_image, evaluate, model_completer
from services.training.trainer import LATEST, CompletionTrainer, train

logger = logging.getLogger("completion")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _split_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _parse_sets(pairs: Sequence[str]) -> Dict[str, str]:
    overrides = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _experiment(args, extra: Dict[str, object]) -> ExperimentConfig:
    overrides: Dict[str, object] = _parse_sets(args.set)
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_experiment(args.config, overrides)


def _log_resolved(args, experiment: ExperimentConfig, seed: int, paths: Dict[str, object]) -> RunConfig:
    run = RunConfig(command=args.command, config_path=args.config, overrides=_parse_sets(args.set), seed=seed,
                    paths={k: str(v) for k, v in paths.items() if v is not None}, experiment=experiment)
    logger.info("resolved config %s", run.resolved())
    return run


def cmd_synth(args) -> int:
    extra = {"data.augment": args.augment, "data.crop_size": args.crop_size}
    if args.filter is not None:
        extra["data.category_filter"] = _split_list(args.filter)
    experiment = _experiment(args, extra)
    _log_resolved(args, experiment, args.seed, {"annotations": args.annotations, "images": args.images,
                                                "out": args.out})
    parsed = parse_annotations(args.annotations, args.images)
    if parsed.skipped:
        print(f"skipped {parsed.skipped} annotations ({parsed.skipped_empty_segmentation} empty segmentation, "
              f"{parsed.skipped_missing_image} missing image, {parsed.skipped_empty_mask} empty mask)")
    manifest = build_manifest(parsed.records, args.split, experiment.data, args.seed)
    report: SynthesisReport = synthesize_split(manifest, experiment.data, args.images, args.out, workers=args.workers)
    print(f"synthesized {report.written} samples from {report.targets} targets into {report.out_dir} "
          f"({report.skipped_no_occluder} without a feasible occluder, {report.skipped_empty_target} too small)")
    if report.written == 0:
        logger.error("no sample could be synthesized")
        return EXIT_DATA
    return EXIT_OK


def cmd_train(args) -> int:
    extra = {"train.steps": args.steps, "train.seed": args.seed}
    if args.ablate:
        extra["train.ablate"] = _split_list(args.ablate)
    experiment = _experiment(args, extra)
    _log_resolved(args, experiment, experiment.train.seed, {"data": args.data, "out": args.out,
                                                            "resume": args.resume})
    samples = load_split(args.data)
    trainer, rows = train(experiment, samples, args.out, resume=args.resume)
    if rows:
        last = rows[-1]
        print(f"trained to step {trainer.step}: total={last['total']:.5f} "
              f"reconstruction={last['reconstruction']:.5f}; checkpoint {Path(args.out) / LATEST}")
    return EXIT_OK


def _completions(args, samples: Sequence[CompositeSample]):
    if args.completer in BASELINES:
        return BASELINES[args.completer](samples)
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required with --completer model")
    trainer = CompletionTrainer.from_checkpoint(args.checkpoint)
    return model_completer(trainer.generator, trainer.experiment.train.batch_size)(samples)


def cmd_eval(args) -> int:
    experiment = _experiment(args, {})
    _log_resolved(args, experiment, 0, {"data": args.data, "checkpoint": args.checkpoint, "out": args.out})
    names = [name for name, _ in read_index(args.data)][:args.limit]
    samples = load_split(args.data, limit=args.limit)
    outputs = _completions(args, samples)
    report: MetricReport = evaluate(samples, outputs, region=args.region, completer=args.completer, names=names)
    written = write_metrics(args.out, report)
    if args.panel:
        written.append(write_panel(Path(args.out) / "panel.png", samples, outputs, limit=args.panel))
    print(json.dumps(report.aggregate_record()))
    logger.info("evaluation outputs: %s", ", ".join(str(p) for p in written))
    return EXIT_OK


def _read_mask(path: str) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("L")) > 127
    except (FileNotFoundError, OSError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc


def cmd_complete(args) -> int:
    experiment = _experiment(args, {})
    _log_resolved(args, experiment, 0, {"checkpoint": args.checkpoint, "image": args.image, "out": args.out})
    image = load_image(args.image) / 255.0
    occluded, visible = _read_mask(args.occluded), _read_mask(args.visible)
    trainer = CompletionTrainer.from_checkpoint(args.checkpoint)
    output = complete_image(trainer.generator, image, occluded, visible)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(output.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.ascontiguousarray(pixels)).save(out)
    sample = CompositeSample(gt_image=image, erased_image=np.where(occluded[None], 0.0, image), occluded=occluded,
                             visible=visible, amodal=amodal_union(occluded, visible),
                             weighted=build_weighted_mask(occluded, visible))
    write_panel(out.with_name(out.stem + "_panel.png"), [sample], [output])
    print(f"completed image written to {out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    experiment = _experiment(args, {})
    _log_resolved(args, experiment, args.seed, {"out": args.out})
    report = run_audit(seed=args.seed, fault=args.inject_fault)
    print(format_audit_table(report), end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        audit_frame(report).to_csv(args.out, index=False)
    print("audit passed" if report.passed else f"audit FAILED: {len(report.failures)} checks")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_ablate(args) -> int:
    experiment = _experiment(args, {"train.steps": args.steps, "train.seed": args.seed})
    _log_resolved(args, experiment, experiment.train.seed, {"data": args.data, "eval_data": args.eval_data,
                                                            "out": args.out})
    train_samples = load_split(args.data)
    eval_samples = load_split(args.eval_data) if args.eval_data else train_samples
    terms = _split_list(args.terms) if args.terms else None
    if terms:
        unknown = [t for t in terms if t not in LOSS_TERMS or t == "adversarial"]
        if unknown:
            raise ConfigError(f"cannot ablate {unknown}; choose from {list(LOSS_TERMS[1:])}")
    rows = run_ablation(experiment, train_samples, eval_samples, args.out, region=args.region, terms=terms)
    for row in rows:
        print(f"{row.description:<26} l1={row.l1_error:.5f} l2={row.l2_error:.5f} "
              f"psnr={row.psnr_db:.2f} ssim={row.ssim:.5f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="completion", description="Amodal content completion: synthesize, train, evaluate.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file (section.key = value)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    synth = commands.add_parser("synth", parents=[common], help="composite occlusions into a sample split")
    synth.add_argument("--annotations", required=True)
    synth.add_argument("--images", required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--split", default="train")
    synth.add_argument("--filter", help="comma-separated category or supercategory names")
    synth.add_argument("--augment", choices=["none", "x4"])
    synth.add_argument("--crop-size", type=int)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--workers", type=int, default=1)
    synth.set_defaults(handler=cmd_synth)

    trainp = commands.add_parser("train", parents=[common], help="train the completion network")
    trainp.add_argument("--data", required=True)
    trainp.add_argument("--out", required=True)
    trainp.add_argument("--steps", type=int)
    trainp.add_argument("--seed", type=int)
    trainp.add_argument("--ablate", help="comma-separated loss terms to drop")
    trainp.add_argument("--resume", help="checkpoint to continue from")
    trainp.set_defaults(handler=cmd_train)

    evalp = commands.add_parser("eval", parents=[common], help="score completions of a split")
    evalp.add_argument("--data", required=True)
    evalp.add_argument("--out", required=True)
    evalp.add_argument("--checkpoint")
    evalp.add_argument("--completer", default="model", choices=["model", *BASELINES])
    evalp.add_argument("--region", default="full", choices=["full", "hole"])
    evalp.add_argument("--panel", type=int, default=0, metavar="ROWS", help="write a comparison panel")
    evalp.add_argument("--limit", type=int)
    evalp.set_defaults(handler=cmd_eval)

    complete = commands.add_parser("complete", parents=[common], help="complete one image")
    complete.add_argument("--checkpoint", required=True)
    complete.add_argument("--image", required=True)
    complete.add_argument("--occluded", required=True, help="mask of the hidden region")
    complete.add_argument("--visible", required=True, help="mask of the visible object region")
    complete.add_argument("--out", required=True)
    complete.set_defaults(handler=cmd_complete)

    audit = commands.add_parser("audit", parents=[common], help="gradient and invariant self-audit")
    audit.add_argument("--seed", type=int, default=0)
    audit.add_argument("--out", help="write the audit table as CSV")
    audit.add_argument("--inject-fault", choices=sorted(FAULT_TARGETS), help=argparse.SUPPRESS)
    audit.set_defaults(handler=cmd_audit)

    ablate = commands.add_parser("ablate", parents=[common], help="train and score the loss ablation table")
    ablate.add_argument("--data", required=True)
    ablate.add_argument("--eval-data")
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--terms", help="comma-separated subset of terms to drop")
    ablate.add_argument("--steps", type=int)
    ablate.add_argument("--seed", type=int)
    ablate.add_argument("--region", default="full", choices=["full", "hole"])
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (None, 0) else EXIT_USAGE
    logging.basicConfig(format=LOG_FORMAT, level=args.log_level)
    logging.getLogger().setLevel(args.log_level)
    try:
        return args.handler(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_USAGE
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        where = f" in {exc.component}" if exc.component else ""
        logger.error("numeric failure%s: %s", where, exc)
        return EXIT_NUMERIC
    except GraphError as exc:
        logger.error("graph error: %s", exc)
        return EXIT_NUMERIC
    except CompletionError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
