#!/usr/bin/env python3
"""
kv_lab - Batch front-end for the Kelvin-Voigt wave laboratory

    python kv_lab.py spectrum --config configs/spectrum_asymptotics.json
    python kv_lab.py resolvent --config configs/resolvent_constant_1d.json --workers 8
    python kv_lab.py report runs/*/manifest.json
    python kv_lab.py validate --config configs/h5_decay.json

Flags beat KVLAB_* environment variables, which beat the config file.
Exit status: 0 success, 1 pipeline failure, 2 invalid config or arguments.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

load_dotenv()

from modules.errors import ConfigError, KVLabError, PipelineError
from modules.experiment_config import PIPELINES, apply_overrides, config_hash, load_config
from modules.experiment_logger import ExperimentLogger
from modules.pipelines import run_pipeline
from modules.report import build_report, manifests_from_index, write_report

logger = logging.getLogger('kv_lab')

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def setup_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else os.getenv('KVLAB_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def write_error_report(error: KVLabError, out_dir: str) -> Optional[str]:
    """Drop error.json into out_dir; never raises"""
    try:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, 'error.json')
        with open(path, 'w') as f:
            json.dump(error.to_dict(), f, indent=2)
        return path
    except OSError as e:
        logger.error(f"could not write error report: {e}")
        return None


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_pipeline(args) -> int:
    config = load_config(args.config)
    if config.pipeline != args.command:
        raise ConfigError('pipeline', f"config selects '{config.pipeline}' but the '{args.command}' command was run")
    config = apply_overrides(config, out_dir=args.out, workers=args.workers, seed=args.seed)
    args.error_dir = config.out_dir

    print(f"📦 {config.pipeline}: {config.name} [{config_hash(config)}]")
    manifest, result = run_pipeline(config, ExperimentLogger(config.out_dir))
    run_dir = os.path.dirname(manifest)
    for name in result.artifacts:
        print(f"💾 {os.path.join(run_dir, name)}")
    print(f"✅ manifest {manifest}")
    return EXIT_OK


def cmd_report(args) -> int:
    paths: List[str] = list(args.manifests)
    if args.index:
        paths += manifests_from_index(args.index)
    report = build_report(paths)
    out_dir = args.out or os.getenv('KVLAB_OUT_DIR') or 'runs'
    args.error_dir = out_dir
    written = write_report(report, out_dir)
    print(report.to_text(), end='')
    for path in written:
        print(f"💾 {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    config = load_config(args.config)
    config = apply_overrides(config, out_dir=args.out, workers=args.workers, seed=args.seed)
    print(f"✅ {args.config}: {config.pipeline} '{config.name}' valid, hash {config_hash(config)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='kv_lab', description='Kelvin-Voigt coupled wave laboratory')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def run_flags(p):
        p.add_argument('--config', required=True, help='experiment JSON file')
        p.add_argument('--out', help='output root (KVLAB_OUT_DIR)')
        p.add_argument('--workers', type=int, help='parallel workers (KVLAB_WORKERS, default: all cores)')
        p.add_argument('--seed', type=int, help='seed for random initial data (KVLAB_SEED)')

    for name in PIPELINES:
        p = sub.add_parser(name, help=f'run the {name} pipeline')
        run_flags(p)
        p.set_defaults(handler=cmd_pipeline)

    p = sub.add_parser('validate', help='check a config file without running it')
    run_flags(p)
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser('report', help='consolidate manifests into a PASS/INFO table')
    p.add_argument('manifests', nargs='*', help='manifest.json paths')
    p.add_argument('--index', help='runs.json index to read manifests from')
    p.add_argument('--out', help='directory for report.json and report.txt')
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    args.error_dir = getattr(args, 'out', None) or os.getenv('KVLAB_OUT_DIR') or 'runs'

    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"❌ invalid config: {e.message}")
        write_error_report(e, args.error_dir)
        return EXIT_CONFIG
    except KVLabError as e:
        print(f"❌ {args.command} failed: {e.message}")
        write_error_report(e, args.error_dir)
        return EXIT_FAILED
    except Exception as e:
        logger.exception(f"{args.command} raised {type(e).__name__}")
        wrapped = PipelineError.wrap(e)
        print(f"❌ {args.command} failed: {wrapped.message}")
        write_error_report(wrapped, args.error_dir)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
