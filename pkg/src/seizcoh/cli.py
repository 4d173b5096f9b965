"""Command-line entry point: ``seizcoh <stage> [--config PATH] [--scenario NAME] ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .features import FeatureError
from .nnet import TrainingDiverged
from .pipeline import STAGES, ConfigError, Pipeline, PipelineConfig, StageError
from .recording import RecordingError

log = logging.getLogger("seizcoh")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_HELP = {
    "synth": "generate the scenario recording",
    "ingest": "import an on-disk recording (config key 'recording')",
    "label": "cut labeled clips and write the manifest",
    "features": "extract every feature block for all clips",
    "train": "feature search plus both ensembles",
    "evaluate": "clip-level predictions and AUCs on the test half",
    "coherence": "error-coherence statistics with permutation p-values",
    "transfer": "information-transfer curves in both directions",
    "report": "tables, figures and report.json",
    "run": "all stages (or up to --stage)",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML pipeline configuration")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--scenario", help="synthetic scenario name (overrides the config)")
    common.add_argument("--stage", choices=STAGES, help="with 'run': stop after this stage")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="seizcoh", description="Seizure-prediction ensembles and error-coherence analysis.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in _HELP.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return p


def load_config(args) -> tuple[PipelineConfig, str | None]:
    text = None
    raw = {}
    if args.config is not None:
        text = args.config.read_text()
        raw = yaml.safe_load(text) or {}
    if args.scenario is not None:
        raw["scenario"] = args.scenario
        raw.pop("recording", None)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = str(args.out)
    cfg = PipelineConfig.from_dict(raw)
    # overrides change the effective config, so provenance gets the merged form
    if text is not None and (args.scenario is not None or args.seed is not None or args.out is not None):
        text = None
    return cfg, text


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg, text = load_config(args)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"seizcoh: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "run":
        until = args.stage or "report"
    else:
        until = args.command
    if until == "ingest" and cfg.recording is None:
        print("seizcoh: 'ingest' needs a 'recording' path in the config", file=sys.stderr)
        return EXIT_USAGE
    if until == "synth" and cfg.scenario is None:
        print("seizcoh: 'synth' needs a scenario", file=sys.stderr)
        return EXIT_USAGE

    try:
        result = Pipeline(cfg, text).run(until)
    except StageError as exc:
        print(f"seizcoh: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, (TrainingDiverged, FloatingPointError)):
            return EXIT_NUMERIC
        if isinstance(cause, (RecordingError, FeatureError, OSError, ValueError, KeyError)):
            return EXIT_DATA
        return EXIT_NUMERIC if isinstance(cause, ArithmeticError) else EXIT_DATA
    except ConfigError as exc:
        print(f"seizcoh: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if isinstance(result, dict):
        for m, a in result["auc"].items():
            print(f"{m}: test AUC {a['auc']:.4f} (Hanley-McNeil p={a['p']:.3g})")
        coh = result["coherence"]
        print(f"c={coh['c']:.4f} (p={coh['p_c']:.4g})  c_w={coh['c_w']:.4f} (p={coh['p_cw']:.4g})  N={coh['N']}")
        print(f"report: {cfg.out}/report.json")
    else:
        print(f"{until}: done -> {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
