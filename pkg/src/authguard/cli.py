"""Command-line entry point.

Subcommands::

    authguard synth           generate a synthetic corpus
    authguard datagen         captions + instruction pairs (``--stub`` for offline)
    authguard train-encoder   stage 1, one ablation preset or ``--ablation all``
    authguard train-reasoner  stage 2 on a stage-1 checkpoint or an untrained encoder
    authguard eval            detection and caption metrics as JSON on stdout
    authguard generate        answer a question about corpus images
    authguard report          ablation tables and training curves as images

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""

# Import built-in modules
import argparse
from collections.abc import Sequence
from datetime import datetime
from datetime import timezone
import json
from pathlib import Path
import re
import sys
from typing import Any

# Import third-party modules
from loguru import logger
from pydantic import BaseModel
from pydantic import Field
from pydantic import ValidationError

# Import local modules
from authguard.__version__ import __version__
from authguard.app import APP_DESCRIPTION
from authguard.app import APP_NAME
from authguard.checkpoint import load_checkpoint
from authguard.client_config import MllmClientConfig
from authguard.config import ABLATION_PRESETS
from authguard.config import RunConfig
from authguard.config import apply_overrides
from authguard.config import load_run_config
from authguard.datagen import DETECTION_QUESTION
from authguard.datagen import build_instruction_samples
from authguard.datagen import captions_by_image
from authguard.datagen import generate_captions_sync
from authguard.datagen import read_captions
from authguard.datagen import read_instructions
from authguard.datagen import write_captions
from authguard.datagen import write_instructions
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.log_config import setup_logging
from authguard.metrics import evaluate_predictions
from authguard.metrics import read_predictions
from authguard.metrics import write_predictions
from authguard.reasoning import detection_references
from authguard.reasoning import generate
from authguard.reasoning import load_reasoner
from authguard.reasoning import predict_with_reasoner
from authguard.reasoning import train_stage2
from authguard.report import render_report
from authguard.synthface import DEFAULT_IMAGE_SIDE
from authguard.synthface import Split
from authguard.synthface import load_corpus
from authguard.synthface import make_corpus
from authguard.train import ABLATION_FILE
from authguard.train import UNTRAINED_CHECKPOINT
from authguard.train import ablation_row
from authguard.train import load_stage1
from authguard.train import predict
from authguard.train import run_ablation_sweep
from authguard.train import train_stage1
from authguard.train import update_ablation_table

MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.json"
CAPTIONS_FILE = "captions.jsonl"
INSTRUCTIONS_FILE = "instructions.jsonl"

_DOT_OVERRIDE = re.compile(r"^--[A-Za-z_]\w*(\.\w+)+=")


class RunManifest(BaseModel):
    """Provenance record written to every output directory."""

    command: str
    argv: list[str]
    version: str = __version__
    config_hash: str | None = None
    seed: int | None = None
    started: str
    finished: str | None = None
    artifacts: list[str] = Field(default_factory=list)

    def write(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.finished = datetime.now(timezone.utc).isoformat()
        path = directory / MANIFEST_FILE
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _print_json(payload: Any) -> None:
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    sys.stdout.flush()


def _run_config(
    args: argparse.Namespace, base: dict[str, Any] | None = None, flags: Sequence[str] = ()
) -> RunConfig:
    """Config from --config (or ``base`` when no file is given) plus overrides; ``flags`` apply last."""
    overrides = [*(args.set or []), *args.dot_overrides, *flags]
    if base is None or args.config:
        return load_run_config(args.config, overrides)
    try:
        return RunConfig.model_validate(apply_overrides(base, overrides))
    except ValidationError as e:
        raise AuthGuardError(f"Invalid configuration: {e}", ErrorCode.CONFIG_ERROR) from e


def cmd_synth(args: argparse.Namespace, manifest: RunManifest) -> int:
    corpus = make_corpus(args.seed, args.n, image_side=args.side, workers=args.workers)
    out = corpus.save(args.out)
    manifest.seed = args.seed
    manifest.artifacts = [str(out / "corpus.json")]
    manifest.write(out)
    return 0


def cmd_datagen(args: argparse.Namespace, manifest: RunManifest) -> int:
    client_config = MllmClientConfig.from_env(
        endpoint=args.endpoint,
        model=args.model,
        api_key_env=args.api_key_env,
        timeout=args.timeout,
        retries=args.retries,
        concurrency=args.concurrency,
        stub=args.stub or None,
    )
    corpus = load_corpus(args.corpus)
    records = generate_captions_sync(corpus, client_config)
    instructions = build_instruction_samples([record for record in records if record.ok])
    out = Path(args.out)
    write_captions(out / CAPTIONS_FILE, records)
    write_instructions(out / INSTRUCTIONS_FILE, instructions)
    manifest.seed = corpus.seed
    manifest.artifacts = [str(out / CAPTIONS_FILE), str(out / INSTRUCTIONS_FILE)]
    manifest.write(out)
    return 0


def cmd_train_encoder(args: argparse.Namespace, manifest: RunManifest) -> int:
    flags = [
        f"train.{name}={value}" for name, value in (("seed", args.seed), ("epochs", args.epochs)) if value is not None
    ]
    config = _run_config(args, flags=flags)
    corpus = load_corpus(args.corpus)
    captions = captions_by_image(read_captions(args.captions)) if args.captions else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.seed = config.train.seed

    if args.ablation == "all":
        config.save(out / CONFIG_FILE)
        rows = run_ablation_sweep(corpus, captions or {}, config, out)
        manifest.config_hash = config.hash()
        manifest.artifacts = [str(out / ABLATION_FILE), *(row["checkpoint"] for row in rows)]
        manifest.write(out)
        _print_json({"rows": rows})
        return 0

    if args.ablation is not None:
        config = config.model_copy(update={"train": config.train.with_preset(args.ablation)})
    run_dir = out / config.train.preset_name
    config.save(run_dir / CONFIG_FILE)
    result = train_stage1(corpus, captions if config.train.use_contrastive else None, config, run_dir)
    rows = update_ablation_table(out / ABLATION_FILE, ablation_row(result, config.train))
    manifest.config_hash = config.hash()
    manifest.artifacts = [str(result.best_checkpoint), str(result.final_checkpoint), str(run_dir / CONFIG_FILE)]
    manifest.write(run_dir)
    manifest.artifacts = [str(out / ABLATION_FILE)]
    manifest.write(out)
    _print_json({"rows": rows})
    return 0


def cmd_train_reasoner(args: argparse.Namespace, manifest: RunManifest) -> int:
    if args.encoder:
        encoder = load_checkpoint(args.encoder, kind="encoder")
        config = _run_config(args, base=encoder.config.model_dump(mode="json"))
    else:
        config = _run_config(args)
    corpus = load_corpus(args.corpus)
    instructions = read_instructions(args.instructions)
    out = Path(args.out)
    config.save(out / CONFIG_FILE)
    result = train_stage2(instructions, corpus, args.encoder or None, config, out)
    manifest.config_hash = config.hash()
    manifest.seed = config.train.seed
    manifest.artifacts = [str(result.checkpoint), str(out / CONFIG_FILE)]
    if not args.encoder:
        manifest.artifacts.append(str(out / UNTRAINED_CHECKPOINT))
    manifest.write(out)
    _print_json(
        {"initial_loss": result.initial_loss, "final_loss": result.final_loss, "checkpoint": str(result.checkpoint)}
    )
    return 0


def cmd_eval(args: argparse.Namespace, manifest: RunManifest) -> int:
    config_hash = None
    metrics_config = RunConfig().metrics
    if args.pred:
        predictions = read_predictions(args.pred)
    elif args.reasoner:
        if not args.corpus:
            raise AuthGuardError("eval --reasoner needs --corpus", ErrorCode.CONFIG_ERROR)
        reasoner = load_reasoner(args.reasoner, args.checkpoint)
        samples = load_corpus(args.corpus).by_split(args.split)
        references = detection_references(read_instructions(args.instructions)) if args.instructions else None
        predictions = predict_with_reasoner(reasoner, samples, references)
        config_hash, metrics_config = reasoner.config.hash(), reasoner.config.metrics
    elif args.checkpoint:
        if not args.corpus:
            raise AuthGuardError("eval --checkpoint needs --corpus", ErrorCode.CONFIG_ERROR)
        model, checkpoint = load_stage1(args.checkpoint)
        predictions = predict(model, load_corpus(args.corpus).by_split(args.split))
        config_hash, metrics_config = checkpoint.config.hash(), checkpoint.config.metrics
    else:
        raise AuthGuardError("eval needs --pred, --checkpoint or --reasoner", ErrorCode.CONFIG_ERROR)

    if args.pred_out:
        write_predictions(args.pred_out, predictions)
        manifest.config_hash = config_hash
        manifest.artifacts = [str(args.pred_out)]
        manifest.write(Path(args.pred_out).parent)
    report = evaluate_predictions(predictions, metrics_config, config_hash)
    _print_json(report.model_dump(mode="json"))
    return 0


def cmd_generate(args: argparse.Namespace, manifest: RunManifest) -> int:
    reasoner = load_reasoner(args.reasoner, args.checkpoint)
    corpus = load_corpus(args.corpus)
    for image_id in args.image_id:
        result = generate(reasoner, corpus.get(image_id), args.question, args.max_new)
        sys.stdout.write(json.dumps(result.to_json()) + "\n")
    return 0


def cmd_report(args: argparse.Namespace, manifest: RunManifest) -> int:
    artifacts = render_report(args.run, args.out)
    manifest.artifacts = [str(path) for path in artifacts]
    manifest.write(args.out)
    return 0


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run config")
    parser.add_argument(
        "--set",
        action="append",
        metavar="SECTION.FIELD=VALUE",
        help="override a config field, e.g. train.lr_base=5e-6 (repeatable; --train.lr_base=5e-6 also works)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME, description=APP_DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {__version__}")
    parser.add_argument("--log-level", help="override AUTHGUARD_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    synth = commands.add_parser("synth", help="generate a synthetic corpus")
    synth.add_argument("--seed", type=int, required=True)
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--side", type=int, default=DEFAULT_IMAGE_SIDE)
    synth.add_argument("--workers", type=int)
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=cmd_synth)

    datagen = commands.add_parser("datagen", help="generate captions and instruction pairs")
    datagen.add_argument("--corpus", required=True)
    datagen.add_argument("--out", required=True)
    datagen.add_argument("--stub", action="store_true", help="use the deterministic offline client")
    datagen.add_argument("--endpoint")
    datagen.add_argument("--model")
    datagen.add_argument("--api-key-env")
    datagen.add_argument("--timeout", type=float)
    datagen.add_argument("--retries", type=int)
    datagen.add_argument("--concurrency", type=int)
    datagen.set_defaults(handler=cmd_datagen)

    encoder = commands.add_parser("train-encoder", help="stage 1: train the expert encoder")
    encoder.add_argument("--corpus", required=True)
    encoder.add_argument("--captions", help="captions JSONL; required unless the preset is 'none'")
    encoder.add_argument("--out", required=True)
    encoder.add_argument("--ablation", choices=[*ABLATION_PRESETS, "all"])
    encoder.add_argument("--seed", type=int)
    encoder.add_argument("--epochs", type=int)
    _add_config_args(encoder)
    encoder.set_defaults(handler=cmd_train_encoder, accepts_overrides=True)

    reasoner = commands.add_parser("train-reasoner", help="stage 2: instruction-tune projector and LM")
    reasoner.add_argument("--corpus", required=True)
    reasoner.add_argument("--instructions", required=True)
    source = reasoner.add_mutually_exclusive_group(required=True)
    source.add_argument("--encoder", help="stage-1 checkpoint")
    source.add_argument(
        "--untrained-encoder", action="store_true", help="freeze a freshly initialised encoder instead (baseline)"
    )
    reasoner.add_argument("--out", required=True)
    _add_config_args(reasoner)
    reasoner.set_defaults(handler=cmd_train_reasoner, accepts_overrides=True)

    evaluate = commands.add_parser("eval", help="score predictions; prints an EvalReport")
    evaluate.add_argument("--pred", help="predictions JSONL")
    evaluate.add_argument("--checkpoint", help="stage-1 checkpoint")
    evaluate.add_argument("--reasoner", help="stage-2 checkpoint")
    evaluate.add_argument("--corpus")
    evaluate.add_argument("--instructions", help="instructions JSONL providing caption references")
    evaluate.add_argument("--split", choices=[split.value for split in Split], default=Split.TEST.value)
    evaluate.add_argument("--pred-out", help="also write the predictions JSONL here")
    evaluate.set_defaults(handler=cmd_eval)

    gen = commands.add_parser("generate", help="answer a question about corpus images")
    gen.add_argument("--reasoner", required=True)
    gen.add_argument("--checkpoint", help="stage-1 checkpoint, if moved since training")
    gen.add_argument("--corpus", required=True)
    gen.add_argument("--image-id", nargs="+", required=True)
    gen.add_argument("--question", default=DETECTION_QUESTION)
    gen.add_argument("--max-new", type=int)
    gen.set_defaults(handler=cmd_generate)

    report = commands.add_parser("report", help="render tables and curves as image files")
    report.add_argument("--run", required=True, help="directory containing training outputs")
    report.add_argument("--out", required=True)
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        args.dot_overrides = [arg[2:] for arg in extra if _DOT_OVERRIDE.match(arg)]
        unknown = [arg for arg in extra if not _DOT_OVERRIDE.match(arg)]
        if unknown or (args.dot_overrides and not getattr(args, "accepts_overrides", False)):
            parser.error(f"unrecognized arguments: {' '.join(unknown or args.dot_overrides)}")
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)
    manifest = RunManifest(command=args.command, argv=argv, started=_now())
    try:
        return args.handler(args, manifest)
    except AuthGuardError as e:
        logger.error(f"{args.command} failed [{e.error_code.name}]: {e}")
        return 1
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
