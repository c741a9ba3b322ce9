"""Command-line entry point: ``qcnet run|sweep|gen-data|validate-config``.

Errors go to stderr as one JSON object ``{"error": ..., "message": ...}``
(plus ``path`` for config errors) with a nonzero exit status.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments
from .exceptions import ConfigError, DataError, QcnError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _parse_values(text: str) -> list:
    try:
        values = json.loads(text) if text.strip().startswith("[") else [
            json.loads(v) for v in text.split(",") if v.strip()]
    except json.JSONDecodeError:
        raise ConfigError(f"cannot parse sweep values {text!r}", "values") from None
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise ConfigError("sweep values must be numbers", "values")
    return values


def _parse_params(text: str | None) -> dict:
    if not text:
        return {}
    try:
        params = json.loads(text)
    except json.JSONDecodeError:
        raise ConfigError("params must be a JSON object", "params") from None
    if not isinstance(params, dict):
        raise ConfigError("params must be a JSON object", "params")
    return params


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and validate every repetition of a config")
    p.add_argument("config", help="JSON experiment config")
    p.add_argument("-o", "--output-dir",
                   help=f"overrides the config and ${experiments.OUTPUT_ENV}")

    p = sub.add_parser("sweep", help="repeat a run across values of one parameter")
    p.add_argument("config")
    p.add_argument("--axis", required=True, choices=experiments.SWEEP_AXES)
    p.add_argument("--values", required=True, help='comma list or JSON array, e.g. "0,1,10,100"')
    p.add_argument("-o", "--output-dir")

    p = sub.add_parser("gen-data", help="write a reproducible task file")
    p.add_argument("kind", choices=experiments.GEN_KINDS)
    p.add_argument("path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help='JSON object, e.g. \'{"L": 5, "N_TS": 10}\'')

    p = sub.add_parser("validate-config", help="check a config and print it with defaults")
    p.add_argument("config")
    return parser


def _error(kind: str, exc: Exception, code: int) -> int:
    payload = {"error": kind, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload.update(path=exc.path, message=exc.detail)
    if isinstance(exc, DataError) and exc.row is not None:
        payload["row"] = exc.row
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate-config":
            cfg = experiments.load_config(args.config)
            print(json.dumps({**cfg, "config_hash": experiments.config_hash(cfg)},
                             indent=2, sort_keys=True))
        elif args.command == "run":
            cfg = experiments.load_config(args.config)
            print(json.dumps(experiments.run(cfg, args.output_dir), indent=2, sort_keys=True))
        elif args.command == "sweep":
            cfg = experiments.load_config(args.config)
            sys.stdout.write(experiments.sweep(cfg, args.axis, _parse_values(args.values),
                                               args.output_dir))
        elif args.command == "gen-data":
            path = experiments.gen_data(args.kind, _parse_params(args.params), args.seed,
                                        args.path)
            print(json.dumps({"path": str(path)}))
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    except DataError as exc:
        return _error("data", exc, EXIT_DATA)
    except QcnError as exc:
        return _error("runtime", exc, EXIT_RUNTIME)
    except OSError as exc:
        return _error("io", exc, EXIT_RUNTIME)
    return 0


if __name__ == "__main__":
    sys.exit(main())
