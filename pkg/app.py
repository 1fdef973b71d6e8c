"""
Command-line entry point for Audio ALBERT experiments
"""
import argparse
import logging
import sys
from typing import List, Optional, Sequence, Tuple

from core.pipeline import pipeline, sharing_reduction
from src.utils.constants import EXIT_OK
from src.utils.exceptions import AalbertError, ConfigError
from src.utils.logging_utils import configure_logging
from src.utils.run_config import RunConfig

logger = logging.getLogger(__name__)

# flag destination -> configuration key(s)
FLAG_KEYS = {
    "synthetic": ("run.synthetic",),
    "corpus": ("data.corpus",),
    "layers": ("encoder.num_layers",),
    "share_weights": ("encoder.share_weights",),
    "steps": ("pretrain.steps",),
    "seed": ("run.seed", "mask.seed"),
    "threads": ("run.threads",),
    "output_dir": ("run.output_dir",),
    "checkpoint": ("run.checkpoint",),
    "task": ("downstream.task",),
    "mode": ("downstream.mode",),
    "fusion": ("downstream.fusion",),
    "label_fraction": ("downstream.label_fraction",),
    "export_embeddings": ("downstream.export_embeddings",),
    "depths": ("probe.depths",),
    "tasks": ("probe.tasks",),
    "sample_size": ("analysis.sample_size",),
}


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems as configuration errors."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> CliParser:
    common = CliParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--synthetic", action="store_true", default=None,
                        help="generate the synthetic corpus instead of reading one")
    common.add_argument("--corpus", help="manifest CSV or directory of feature files")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker cap")
    common.add_argument("--output-dir", help="run directory (default: run/<timestamp>)")
    common.add_argument("--checkpoint", help="encoder weight file")
    common.add_argument("--verbose", action="store_true")

    parser = CliParser(
        prog="aalbert",
        description="Shared-weight transformer encoders for speech: pre-train, adapt, probe, analyze.",
        epilog="Any configuration key can be overridden with --namespace.key value.",
        allow_abbrev=False,
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    pretrain = commands.add_parser("pretrain", parents=[common], allow_abbrev=False,
                                   help="masked spectrogram reconstruction")
    pretrain.add_argument("--layers", type=int)
    pretrain.add_argument("--share-weights")
    pretrain.add_argument("--steps", type=int)

    downstream = commands.add_parser("downstream", parents=[common], allow_abbrev=False,
                                     help="train and evaluate a task head")
    downstream.add_argument("--task", choices=["phoneme", "speaker"])
    downstream.add_argument("--mode", choices=["feature_extraction", "fine_tune"])
    downstream.add_argument("--fusion", choices=["last", "weighted_sum"])
    downstream.add_argument("--input-baseline", action="store_true",
                            help="train on the input features instead of an encoder")
    downstream.add_argument("--label-fraction", type=float)
    downstream.add_argument("--export-embeddings", action="store_true", default=None)

    probe = commands.add_parser("probe", parents=[common], allow_abbrev=False,
                                help="layer-wise probing classifiers")
    probe.add_argument("--depths", help="comma separated: linear,one_hidden,two_hidden")
    probe.add_argument("--tasks", help="comma separated: phoneme,speaker")

    analyze = commands.add_parser("analyze-attention", parents=[common], allow_abbrev=False,
                                  help="JS divergence of attention across layers")
    analyze.add_argument("--sample-size", type=int)

    count = commands.add_parser("count-params", parents=[common], allow_abbrev=False,
                                help="parameter counts and breakdown")
    count.add_argument("--layers", type=int)
    count.add_argument("--share-weights")
    count.add_argument("--paper-table", action="store_true",
                       help="count the six published 3/6/12-layer configurations")
    return parser


def parse_overrides(tokens: Sequence[str]) -> List[Tuple[str, str]]:
    """Turn ``--a.b value`` / ``--a.b=value`` tokens into (key, value) pairs."""
    pairs = []
    index = 0
    while index < len(tokens):
        token = tokens[index]
        if not token.startswith("--") or "." not in token.split("=", 1)[0]:
            raise ConfigError(f"Unrecognized argument: {token}")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            index += 1
        else:
            if index + 1 >= len(tokens):
                raise ConfigError(f"Missing value for {token}")
            key, value = token[2:], tokens[index + 1]
            index += 2
        pairs.append((key, value))
    return pairs


def format_error(error: AalbertError) -> str:
    message = " ".join(str(error).split()).replace('"', '\\"')
    return f'error kind={error.kind} exit={error.exit_code} message="{message}"'


class AalbertApp:
    """Parses the command line and dispatches one experiment."""

    def __init__(self, experiment_pipeline=None):
        self.pipeline = experiment_pipeline or pipeline
        self.parser = build_parser()

    def build_config(self, args: argparse.Namespace, extras: Sequence[str]) -> RunConfig:
        overrides = []
        for dest, keys in FLAG_KEYS.items():
            value = getattr(args, dest, None)
            if value is not None:
                overrides.extend((key, value) for key in keys)
        if getattr(args, "input_baseline", False):
            overrides.append(("downstream.source", "input"))
        overrides.extend(parse_overrides(extras))
        return RunConfig.load(args.config, overrides)

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        try:
            args, extras = self.parser.parse_known_args(argv)
            configure_logging(args.verbose)
            config = self.build_config(args, extras)
            run_dir = self.pipeline.prepare(config)
            handler = getattr(self, f"cmd_{args.command.replace('-', '_')}")
            handler(args)
            print(run_dir)
            return EXIT_OK
        except AalbertError as error:
            print(format_error(error), file=sys.stderr)
            return error.exit_code

    # Subcommands

    def cmd_pretrain(self, args) -> None:
        result = self.pipeline.pretrain()
        losses = result.losses()
        if len(losses):
            logger.info(f"Loss {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} steps")

    def cmd_downstream(self, args) -> None:
        result = self.pipeline.downstream()
        print(f"{result.task} {result.mode.value} {result.fusion.mode.value} "
              f"layers={result.layer_count} test_accuracy={result.test_accuracy:.4f}")

    def cmd_probe(self, args) -> None:
        report = self.pipeline.probe()
        print(report.to_frame().to_string(index=False))

    def cmd_analyze_attention(self, args) -> None:
        _, average = self.pipeline.analyze_attention()
        print(f"max off-diagonal JS divergence (head average): {average.max_off_diagonal():.4f}")

    def cmd_count_params(self, args) -> None:
        table = self.pipeline.count_params(reference_table=args.paper_table)
        print(table.to_string(index=False))
        if args.paper_table:
            print(f"reduction (12 layers, shared vs unshared): {sharing_reduction(table):.4f}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    return AalbertApp().run(argv)


if __name__ == "__main__":
    sys.exit(main())
