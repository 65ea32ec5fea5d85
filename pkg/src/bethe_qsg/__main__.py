"""Command line: python -m bethe_qsg <kind> [--config PATH] [--out DIR] ..."""

import argparse
import logging
import sys

from .driver import KINDS, ConfigInvalid, ExperimentConfig, IoFailure, run_experiment


def build_parser():
    p = argparse.ArgumentParser(prog="bethe_qsg", description="Run a seeded experiment and append its rows to a result store.")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind)
        s.add_argument("--config", help="JSON file mirroring ExperimentConfig")
        s.add_argument("--out", help="output directory (overrides out_dir)")
        s.add_argument("--workers", type=int, default=None,
                       help="worker processes (BETHE_QSG_WORKERS overrides)")
        s.add_argument("--master-seed", type=int, default=None)
        s.add_argument("--resume", action="store_true", help="skip tasks already in the store")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        d = ExperimentConfig.load(args.config).to_dict() if args.config else {"kind": args.kind}
        if d["kind"] != args.kind:
            raise ConfigInvalid(f"config is for {d['kind']!r}, not {args.kind!r}")
        if args.out:
            d["out_dir"] = args.out
        if args.master_seed is not None:
            d["master_seed"] = args.master_seed
        config = ExperimentConfig.from_dict(d)
        n = run_experiment(config, workers=args.workers, resume=args.resume,
                           progress=lambda i, k: print(f"{i}/{k}", file=sys.stderr) if args.verbose else None)
    except (ConfigInvalid, IoFailure) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"{config.experiment_id}: {n} new tasks -> {config.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
