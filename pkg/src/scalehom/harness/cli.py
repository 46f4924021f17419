"""Command line entry point: one subcommand per experiment.

Parameter flags are generated from the experiment's parameter model
(``T_list`` becomes ``--T-list``).  Values are read as JSON when possible;
lists may also be written comma separated, and ``@path`` reads the value
from a file.  Flags override a ``--config`` file, which overrides defaults.

Exit codes: 0 all checks pass, 1 parameter error, 2 check failure,
3 resource or integration abort.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence, get_origin

from ..errors import ParameterError, ScalehomError
from .config import PARAMS, SEED_MAX, load_config, make_config
from .experiments import run_config


def parse_value(text: str) -> Any:
    """JSON scalar or list, a comma separated list, or a bare string."""
    if text.startswith("@"):
        try:
            text = Path(text[1:]).read_text().strip()
        except OSError as exc:
            raise ParameterError(f"cannot read {text[1:]}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text or any(c.isspace() for c in text.strip()):
        parts = [p for p in text.replace(",", " ").split() if p]
        return [parse_value(p) for p in parts]
    return text


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v <= SEED_MAX:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64 - 1]")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def flag_name(field: str) -> str:
    return "--" + field.replace("_", "-")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors are parameter errors
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scalehom", description="Run a numerical experiment and its checks.")
    sub = parser.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    for name, model in PARAMS.items():
        p = sub.add_parser(name, help=(model.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", help="JSON config file (flags override its values)")
        p.add_argument("--seed", type=_seed, help="64-bit root seed (default 0)")
        p.add_argument("--threads", type=_positive, help="parallelism degree (default 1)")
        p.add_argument("--out", help="output directory for CSV and JSON files")
        p.add_argument("--quiet", action="store_true", help="print only the final status line")
        grp = p.add_argument_group("parameters")
        for field, info in model.model_fields.items():
            default = info.get_default(call_default_factory=True)
            grp.add_argument(flag_name(field), dest=f"param_{field}", type=parse_value, metavar="VALUE",
                             help=f"default: {json.dumps(default)}")
    return parser


def _wants_list(model, field: str) -> bool:
    """True when the field only accepts a list (a bare value is then wrapped)."""
    ann = model.model_fields[field].annotation
    return get_origin(ann) in (list, tuple)


def config_from_args(args: argparse.Namespace):
    model = PARAMS[args.experiment]
    raw: dict[str, Any] = {"experiment": args.experiment, "params": {}}
    if args.config:
        base = load_config(args.config)
        if base.experiment != args.experiment:
            raise ParameterError(f"config is for {base.experiment!r}, not {args.experiment!r}")
        raw = base.model_dump(mode="json")
    for key, value in vars(args).items():
        if key.startswith("param_") and value is not None:
            field = key[len("param_"):]
            if _wants_list(model, field) and not isinstance(value, list):
                value = [value]
            raw["params"][field] = value
    for key in ("seed", "threads", "out"):
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    return make_config(raw)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        bundle = run_config(config)
    except ScalehomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError:
        print("error: out of memory", file=sys.stderr)
        return 3
    if not args.quiet:
        for name, ok in bundle.checks.items():
            print(f"{'PASS' if ok else 'FAIL'} {name}")
    status = "PASS" if bundle.passed else "FAIL"
    print(f"{status} {config.experiment} ({bundle.elapsed:.1f} s)")
    return 0 if bundle.passed else 2


if __name__ == "__main__":
    sys.exit(main())
