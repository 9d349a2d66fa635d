"""Command line entry point: ``ehrfm <stage> --config run.json``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..analytics import PerfectSeparationError, SingularInformationError
from ..clif import ClifError
from ..seqmodel import NumericalError
from .config import ConfigError, RunConfig
from .manifest import MissingArtifactError, StaleArtifactError
from .stages import STAGE_NAMES, LeakageError, run_experiment, run_stage

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_NUMERIC = 4

log = logging.getLogger("ehrfm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ehrfm", description=__doc__)
    parser.add_argument("verb", nargs="?", choices=[*STAGE_NAMES, "run-all", "run"],
                        help="stage to run, 'run-all' for every stage, or 'run' with --stage")
    parser.add_argument("--config", required=True, help="run configuration (JSON)")
    parser.add_argument("--stage", choices=[*STAGE_NAMES, "run-all"], help="stage to run")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--force", action="store_true", help="run even if inputs are stale")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.stage if args.verb in (None, "run") else args.verb
    if args.stage and args.verb not in (None, "run") and args.stage != args.verb:
        parser.error(f"verb {args.verb!r} conflicts with --stage {args.stage!r}")
    if stage is None:
        parser.error("name a stage (positional verb or --stage)")
    try:
        cfg = RunConfig.load(args.config).with_overrides(args.seed, args.out)
        if stage == "run-all":
            stages = run_experiment(cfg, force=args.force)
            result = {name: entry["outputs"] for name, entry in stages.items()}
        else:
            result = run_stage(cfg, stage, force=args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifactError, StaleArtifactError) as exc:
        print(f"artifact error in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (NumericalError, PerfectSeparationError, SingularInformationError) as exc:
        print(f"numeric failure in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ClifError, LeakageError) as exc:
        print(f"data error in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
