# /src/airsq/cli/app.py

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from airsq import __version__
from airsq.errors import AirsqError
from airsq.utils.config import RunConfig, derive_seed, load_run_config, log_level, split_flag
from airsq.utils.report_formatter import ReportFormatter

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

Argument = Tuple[Tuple[str, ...], Dict[str, Any]]


def arg(*flags: str, **kwargs: Any) -> Argument:
    return flags, kwargs


@dataclass
class Context:
    """What a subcommand handler sees: parsed flags, the merged config and its derived seed."""

    args: argparse.Namespace
    config: RunConfig
    seed: int
    formatter: ReportFormatter

    def require(self, *paths: Optional[str]) -> None:
        for path in paths:
            if path is not None and not Path(path).exists():
                raise FileNotFoundError(f"input not found: {path}")


@dataclass
class Command:
    name: str
    handler: Callable[[Context], Optional[dict]]
    kind: Optional[str] = None


class CommandApp:
    """
    argparse front end with decorator-registered subcommands.

    Flags whose dest is "<section>.<key>" override that key of the run config; `--seed`,
    `--config`, `--json` and `--verbose` are accepted by every subcommand.
    """

    def __init__(self, prog: str = "airsq"):
        self.parser = argparse.ArgumentParser(prog=prog, description="Anchored joint interaction prediction.")
        self.parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
        self._common = argparse.ArgumentParser(add_help=False)
        self._common.add_argument("--config", help="JSON run config (defaults to $AIRSQ_CONFIG)")
        self._common.add_argument("--seed", type=int, default=None, help="root seed for every random stream")
        self._common.add_argument("--json", action="store_true", help="print the report as JSON")
        self._common.add_argument("--verbose", action="store_true", help="debug logging")
        self._subparsers = self.parser.add_subparsers(dest="command", metavar="COMMAND")
        self._subparsers.required = True
        self.commands: Dict[str, Command] = {}
        self.formatter = ReportFormatter()

    def command(self, name: str, help: str, arguments: Sequence[Argument] = (), kind: Optional[str] = None):
        def decorator(fn: Callable[[Context], Optional[dict]]):
            sub = self._subparsers.add_parser(name, help=help, parents=[self._common])
            for flags, kwargs in arguments:
                sub.add_argument(*flags, **kwargs)
            self.commands[name] = Command(name, fn, kind)
            return fn

        return decorator

    # -------------------------
    # Dispatch
    # -------------------------
    def _overrides(self, args: argparse.Namespace) -> Dict[str, Any]:
        overrides: Dict[str, Any] = {}
        for dest, value in vars(args).items():
            if "." not in dest or value is None:
                continue
            section, key = split_flag(dest)
            overrides.setdefault(section, {})[key] = value
        if args.seed is not None:
            overrides["seed"] = args.seed
        return overrides

    def _fail(self, kind: str, message: str) -> int:
        print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
        return 1

    def run(self, argv: Optional[List[str]] = None) -> int:
        try:
            args = self.parser.parse_args(argv)
        except SystemExit as e:
            # argparse already printed usage; 0 for --help/--version, 2 for bad arguments
            return int(e.code or 0)

        logging.getLogger().setLevel(logging.DEBUG if args.verbose else log_level())
        command = self.commands[args.command]
        try:
            config = load_run_config(args.config, self._overrides(args))
            ctx = Context(args=args, config=config, seed=derive_seed(config.seed, command.name),
                          formatter=self.formatter)
            report = command.handler(ctx)
        except AirsqError as e:
            logger.debug("%s failed", command.name, exc_info=True)
            return self._fail(e.kind, str(e))
        except FileNotFoundError as e:
            return self._fail("missing_file", str(e))
        except ValueError as e:
            logger.debug("%s failed", command.name, exc_info=True)
            return self._fail("invalid_value", str(e))

        if report is not None:
            print(self.formatter.render(report, as_json=args.json, kind=command.kind))
        return 0


def build_app() -> CommandApp:
    from airsq.cli.handlers import register_handlers

    app = CommandApp()
    register_handlers(app)
    return app


def main(argv: Optional[List[str]] = None) -> None:
    logging.basicConfig(level=log_level(), format=LOG_FORMAT, stream=sys.stderr)
    sys.exit(build_app().run(argv))


if __name__ == "__main__":
    main()
