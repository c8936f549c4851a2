"""Command-line entry point: corpus generation, training, identification and evaluation."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .corpus import ManifestError, SynthSpec, generate_synthetic_corpus, load_manifest
from .frontend import FrontendConfig, FrontendError, extract_features, read_wav
from .hmm import HmmError
from .harness import (
    ExperimentConfig,
    NumericError,
    ProtocolError,
    check_protocol,
    emit_report,
    load_features,
    parse_alpha_range,
    prepare,
)
from .recognizer import EnrollmentError, enroll_gender, enroll_speakers, identify, load_bundle, save_bundle
from .suprasegmental import SupraError, check_alpha

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ERRORS = (
    FrontendError,
    ManifestError,
    ProtocolError,
    EnrollmentError,
    HmmError,
    SupraError,
    OSError,
    KeyError,
)

log = logging.getLogger("sphmm_sid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _alpha(text: str) -> float:
    try:
        return check_alpha(float(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _alphas(text: str) -> list[float]:
    try:
        return parse_alpha_range(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}: {exc}") from None


def _load_config(args) -> ExperimentConfig:
    try:
        config = ExperimentConfig.load(args.config)
    except json.JSONDecodeError:
        raise
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad experiment config {args.config}: {exc}") from None
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(
            config, seed=args.seed, model=dataclasses.replace(config.model, seed=args.seed)
        )
    if getattr(args, "out", None) is not None:
        config = dataclasses.replace(config, output_dir=Path(args.out))
    return config


def cmd_gen_synth(args) -> int:
    data = json.loads(Path(args.spec).read_text()) if args.spec else {}
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        spec = SynthSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad synth spec: {exc}") from None
    manifest = generate_synthetic_corpus(spec, args.out)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    records = load_manifest(config.manifest_path, check_audio=True)
    check_protocol(records)
    labeled = list(zip(records, load_features(config.manifest_path, records, config.frontend)))
    models = enroll_gender(labeled, config.model)
    registry = enroll_speakers(labeled, config.model)
    metadata = {
        "frontend": json.loads(config.frontend.to_json()),
        "model": dataclasses.asdict(config.model),
        "manifest": str(config.manifest_path),
    }
    out = save_bundle(args.out, models, registry, metadata)
    print(out)
    return EXIT_OK


def cmd_identify(args) -> int:
    models, registry, manifest = load_bundle(args.models)
    frontend = FrontendConfig.from_dict(manifest.get("frontend", {}))
    features = extract_features(read_wav(args.wav), frontend)
    result = identify(models, registry, features, args.alpha)
    scores = list(result.gender_scores) + list(result.speaker_scores)
    if not all(map(_finite, scores)):
        raise NumericError("non-finite model score encountered")
    print(
        json.dumps(
            {
                "wav": str(args.wav),
                "alpha": result.alpha,
                "gender": result.gender,
                "speaker": result.speaker,
                "gender_scores": dict(zip(("M", "F"), result.gender_scores)),
                "speaker_scores": dict(zip(result.speaker_labels, result.speaker_scores)),
            },
            indent=2,
        )
    )
    return EXIT_OK


def _finite(x: float) -> bool:
    return x == x and abs(x) != float("inf")


def _summary(report) -> str:
    return "  ".join(
        f"{stage}/{condition}: {correct}/{total} ({pct:.1f}%)"
        for _, stage, condition, correct, total, pct in report.rows()
    )


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    models = registry = None
    if args.models:
        models, registry, _ = load_bundle(args.models)
    report = prepare(config, models, registry).report(config.alpha, config.gender_alpha)
    emit_report(report, config.output_dir)
    print(f"alpha={report.alpha:g}  {_summary(report)}")
    print(f"reports written to {config.output_dir}")
    return EXIT_OK


def cmd_sweep_alpha(args) -> int:
    config = _load_config(args)
    alphas = args.alphas if args.alphas is not None else list(config.alphas)
    if len(alphas) < 2:
        raise UsageError("an alpha sweep needs at least two values")
    prepared = prepare(config)
    reports = [prepared.report(a, config.gender_alpha) for a in alphas]
    emit_report(reports, config.output_dir, plot=args.plot)
    for report in reports:
        print(f"alpha={report.alpha:g}  {_summary(report)}")
    print(f"reports written to {config.output_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sphmm-sid", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="render the seeded synthetic corpus")
    p.add_argument("--spec", help="SynthSpec JSON (defaults when omitted)")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--seed", type=int, help="override the corpus seed")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="enroll gender and speaker models")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="model bundle directory")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("identify", help="identify gender and speaker of one WAV")
    p.add_argument("--models", required=True, help="model bundle directory")
    p.add_argument("--wav", required=True, help="16-bit or float mono WAV file")
    p.add_argument("--alpha", type=_alpha, default=0.5, help="prosodic weight (default 0.5)")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("evaluate", help="run the train/test protocol at one alpha")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--models", help="score with a saved bundle instead of training")
    p.add_argument("--out", help="override the config's output_dir")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-alpha", help="evaluate over a grid of alphas")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--alphas", type=_alphas, help="start:stop:step or comma list (default 0:1:0.1)")
    p.add_argument("--plot", action="store_true", help="also write sweep.svg")
    p.add_argument("--out", help="override the config's output_dir")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.set_defaults(func=cmd_sweep_alpha)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (*DATA_ERRORS, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
