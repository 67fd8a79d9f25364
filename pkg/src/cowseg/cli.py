"""Command line entry point: ``cowseg gen-data | train | eval | export-protos``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .container import FormatError
from .core import ConfigError, NumericError

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _gen_data(args) -> int:
    from .data import generate_dataset
    from .harness.config import load_config

    cfg = load_config(args.config)
    manifest = generate_dataset(cfg.data, cfg.fold, args.out, cfg.episodes_per_class)
    print(manifest)
    return EXIT_OK


def _train(args) -> int:
    from .harness.config import load_config
    from .harness.training import train

    cfg = load_config(args.config)
    print(train(cfg, args.out, resume=args.resume))
    return EXIT_OK


def _eval(args) -> int:
    from .harness.evaluation import evaluate

    report = evaluate(args.ckpt, args.fold, args.episodes, args.seed)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _export(args) -> int:
    from .harness.evaluation import export_prototypes

    export_prototypes(args.ckpt, args.episode, args.out)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cowseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic episode files and a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_gen_data)

    p = sub.add_parser("train", help="episodic training")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="mean Dice / boundary-F1 on held-out classes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_eval)

    p = sub.add_parser("export-protos", help="dump prototype banks for one episode")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
