#!/usr/bin/env python3
# vim: set fileencoding=utf-8 :
"""Command-line interface: the argparse parser, subcommand dispatch and exit codes.

    main.py <command> [--seed N] [--out DIR] [--log-level LEVEL] [options]

Exit codes
----------
    0   success
    1   usage: bad flags or values
    2   validation: a scenario, skill, annotation, selector, estimator or file-format error, or a
        failed annotation check
    3   I/O: a file could not be read or written

The pipeline on defaults (no configuration editing):
    main.py generate
    main.py annotate
    main.py fit
    main.py run --estimator knn
"""
from __future__ import annotations
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, NoReturn, Sequence
from engine.log import setup_logging
from engine.scenario import PRESETS
from engine.world import SimError
from skillkit.annotation import AnnotationError, DEFAULT_DILATION
from skillkit.estimator import DEFAULT_K, EstimatorError
from skillkit.experiments import GRIDS
from skillkit.formats import FormatError
from skillkit.selector import SelectorError
from skillkit.skills import SkillError
from . import commands
from .context import Context, namespace

log = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_IO = 3
DOMAIN_ERRORS = (SimError, SkillError, AnnotationError, SelectorError, EstimatorError,
                 FormatError)
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
CORNERS = ("tl", "tr", "bl", "br")


class UsageError(Exception):
    """Bad command-line flags."""


class _Parser(argparse.ArgumentParser):
    """An ArgumentParser that raises instead of exiting."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def positive(text: str) -> int:
    """argparse type: an integer >= 1.

    >>> positive("3")
    3
    >>> positive("0")
    Traceback (most recent call last):
    ...
    argparse.ArgumentTypeError: expected an integer >= 1, got '0'
    """
    try:
        value = int(text)
    except ValueError:
        value = 0
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text!r}")
    return value


def non_negative(text: str) -> int:
    """argparse type: an integer >= 0."""
    try:
        value = int(text)
    except ValueError:
        value = -1
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text!r}")
    return value


@namespace
class App:
    """Parse, set up logging and the session context, then dispatch.

    >>> import contextlib, io, tempfile
    >>> out = tempfile.mkdtemp()
    >>> App.run(["frobnicate"])
    1
    >>> App.run(["export", "--out", out, "--log-level", "WARNING"])
    Export
    |
    +- scenario gc written to .../scenario.toml
    0

    The default pipeline runs end to end:
    >>> steps = [["generate", "--count", "1", "--seed", "2"], ["annotate"], ["fit"],
    ...          ["run", "--estimator", "knn", "--seed", "1"]]
    >>> with contextlib.redirect_stdout(io.StringIO()):
    ...     codes = [App.run(step + ["--out", out, "--log-level", "WARNING"]) for step in steps]
    >>> codes
    [0, 0, 0, 0]
    >>> sorted(p.name for p in Path(out).iterdir())
    ['annotated.jsonl', 'decisions.csv', 'demos.jsonl', 'estimator.npz', 'manifest.toml',
     'scenario.toml', 'stats.toml', 'trace.csv']

    A missing artifact is a validation failure:
    >>> App.run(["library", "--out", tempfile.mkdtemp(), "--log-level", "ERROR"])
    2
    """
    COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
            "generate": commands.cmd_generate,
            "annotate": commands.cmd_annotate,
            "fit": commands.cmd_fit,
            "library": commands.cmd_library,
            "run": commands.cmd_run,
            "evaluate": commands.cmd_evaluate,
            "export": commands.cmd_export,
            }

    @staticmethod
    def parser() -> argparse.ArgumentParser:
        """The full parser, one subparser per command."""
        common = _Parser(add_help=False)
        common.add_argument("--seed", type=int, default=0, help="base seed of all randomness")
        common.add_argument("--out", default="out", help="output directory (holds the manifest)")
        common.add_argument("--log-level", default="INFO", choices=LOG_LEVELS,
                            type=str.upper)
        scenario = _Parser(add_help=False)
        scenario.add_argument("--scenario", help=f"preset ({', '.join(sorted(PRESETS))}) or a "
                                                 "scenario TOML file")
        scenario.add_argument("--goal", choices=CORNERS, help="goal corner override")
        estimator = _Parser(add_help=False)
        estimator.add_argument("--estimator", choices=("oracle", "knn"), default="oracle")

        parser = _Parser(prog="main.py", description="Progress-based skill chaining in a "
                                                     "simulated tote world.")
        sub = parser.add_subparsers(dest="command", required=True)
        generate = sub.add_parser("generate", parents=[common],
                                  help="scripted demos of every ordering")
        generate.add_argument("--scenario", action="append",
                              help="repeatable; default: gc and gc-edge")
        generate.add_argument("--goal", choices=CORNERS)
        generate.add_argument("--count", type=positive, default=15,
                              help="seeds per scenario (one demo per seed and ordering)")
        annotate = sub.add_parser("annotate", parents=[common], help="label the demos")
        annotate.add_argument("--k-dilation", type=non_negative, default=DEFAULT_DILATION)
        fit = sub.add_parser("fit", parents=[common], help="fit the k-NN estimator")
        fit.add_argument("--k", type=positive, default=DEFAULT_K)
        library = sub.add_parser("library", parents=[common], help="build the sequence library")
        library.add_argument("--scenario", help="whose orderings to use")
        run = sub.add_parser("run", parents=[common, scenario, estimator], help="one episode")
        run.add_argument("--trace", help="trace CSV path (default: OUT/trace.csv)")
        evaluate = sub.add_parser("evaluate", parents=[common, estimator],
                                  help="experiment grids")
        evaluate.add_argument("--trials", type=positive, default=10)
        evaluate.add_argument("--cells", nargs="+",
                              help=f"grids ({', '.join(GRIDS)}) or preset names; default gc")
        evaluate.add_argument("--workers", type=positive, default=1)
        evaluate.add_argument("--metrics", help="metrics CSV path (default: OUT/metrics.csv)")
        export = sub.add_parser("export", parents=[common, scenario],
                                help="default scenario and manifest, or the library as CSV")
        export.add_argument("--what", choices=("scenario", "library"), default="scenario")
        return parser

    @classmethod
    def run(cls, argv: Sequence[str] | None = None) -> int:
        """Run one command and return its exit code."""
        try:
            args = cls.parser().parse_args(argv)
        except UsageError as err:
            print(f"usage error: {err}", file=sys.stderr)
            return EXIT_USAGE
        setup_logging(args.log_level)
        log.debug("%s %s", args.command, vars(args))
        try:
            Context.open(Path(args.out), args.seed)
            return cls.COMMANDS[args.command](args)
        except DOMAIN_ERRORS as err:
            log.debug("%s", args.command, exc_info=True)
            print(f"error: {err}", file=sys.stderr)
            return commands.EXIT_VALIDATION
        except ValueError as err:
            print(f"usage error: {err}", file=sys.stderr)
            return EXIT_USAGE
        except OSError as err:
            print(f"I/O error: {err}", file=sys.stderr)
            return EXIT_IO
