"""Command line front end: ``nnxva run --config bermudan.cfg --out runs/berm``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 failed acceptance check (``--check``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import FitError, ProjectionError
from .bsde import RolloutError, TrainingError
from .config import ConfigError, describe_keys, parse_config
from .io import FormatError
from .pipeline import METHODS, STAGES, CheckFailure, OrchestrationError, run_pipeline

__all__ = ["main", "build_parser", "shipped_config"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


def shipped_config(name: str) -> Path:
    """Path of a config file shipped with the package (e.g. 'bermudan.cfg')."""
    p = resources.files("nnxva") / "configs" / name
    if not p.is_file():
        raise ConfigError(f"no shipped config named {name!r}")
    return Path(str(p))


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    try:
        return shipped_config(p.name)
    except ConfigError:
        raise ConfigError(f"config file {path} not found") from None


def _stages(text: str | None, command: str):
    if command != "run":
        return [command]
    if text is None or text.strip() == "all":
        return list(STAGES)
    out = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in out if s not in STAGES]
    if bad:
        raise ConfigError(f"--stages: unknown stage(s) {', '.join(bad)}; choose from {', '.join(STAGES)} or all")
    return out


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys ([section] key  unit  default  meaning):\n" + describe_keys()
    p = argparse.ArgumentParser(prog="nnxva", description="Deep-BSDE exposure and XVA runs.", epilog=epilog,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="config file; a bare name falls back to the shipped configs")
    common.add_argument("--out", default="nnxva_out", help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    common.add_argument("--method", choices=METHODS, default="nn", help="exposure method (default: nn)")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    common.add_argument("--check", action="store_true", help="evaluate built-in acceptance checks; exit 4 on failure")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage only")
    r = sub.add_parser("run", parents=[common], help="run several stages in order")
    r.add_argument("--stages", default="all", help="'all' or a comma list of " + ", ".join(STAGES))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_config(_resolve(args.config))
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        stages = _stages(getattr(args, "stages", None), args.command)
        with threadpool_limits(limits=args.threads):
            rep = run_pipeline(cfg, args.out, stages, args.method, args.check)
    except (ConfigError, OrchestrationError, FormatError) as e:
        print(f"nnxva: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailure as e:
        print(f"nnxva: acceptance check failed: {e}", file=sys.stderr)
        return EXIT_CHECK
    except (RolloutError, TrainingError, FitError, ProjectionError, ArithmeticError,
            np.linalg.LinAlgError) as e:
        print(f"nnxva: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"config_hash {rep.config_hash}: stages {', '.join(rep.stages) or 'none'} done in {rep.out}")
    for k, v in rep.checks.items():
        print(f"check {k}: {'pass' if v else 'fail'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
