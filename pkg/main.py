"""Main entry point for the CUSP uncertainty toolkit."""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from config import settings
from experiments.commands import COMMANDS
from experiments.config import load_config
from utils.exceptions import CuspError, UsageError

logger = logging.getLogger("cusp")

DESCRIPTIONS = {
    "train": "Train a pattern-regularized classifier and write its checkpoint",
    "eval-ood": "Out-of-domain detection AUC for every score method",
    "eval-flip": "Uncertainty of flipped-label vs clean training samples",
    "eval-adv": "FGM accuracy per epsilon, regularized vs plain model",
    "eval-detector": "10:1:1 protocol with the secondary CNN detector",
    "dump-patterns": "Target and reconstructed patterns as PGM images",
    "eval-corrupt": "Uncertainty under rotation, noise and erasing",
    "patterns": "Generate a pattern set with bitmaps and statistics",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cusp", description="Classification uncertainty from surrogate patterns")
    subparsers = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    subparsers.required = True
    for name, description in DESCRIPTIONS.items():
        sub = subparsers.add_parser(name, help=description, description=description)
        sub.add_argument("--config", help="Experiment JSON document")
        sub.add_argument("--seed", type=_seed, help="Master seed (overrides the document)")
        sub.add_argument("--out", help="Output directory (overrides the document)")
    return parser


def configure_logging():
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run one command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, experiment=args.command, seed=args.seed, output_dir=args.out)
        print(f"🚀 Running {args.command} (seed {cfg.master_seed}) -> {cfg.out_path}")
        result = COMMANDS[args.command](cfg)
    except CuspError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        print(f"❌ Invalid configuration:\n{exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"❌ I/O error: {exc}", file=sys.stderr)
        return 2
    print(f"✅ Report written to {result.report_path}")
    return 0


if __name__ == "__main__":
    configure_logging()
    sys.exit(run())
