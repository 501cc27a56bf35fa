"""``recon`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .config import ConfigError, load_config, resolve_config
from .io import ArtifactWriter, FormatError
from .solver import DivergenceError
from .trajectory import NumericGuardError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

COMMANDS = {
    "synth-rgb": ("synth_rgb", experiments.run_synth_rgb),
    "phantom": ("phantom", experiments.run_phantom),
    "recon": ("recon", experiments.run_recon),
    "r2star": ("r2star", experiments.run_r2star),
    "traj": ("traj", experiments.run_traj),
}

log = logging.getLogger("jointrecon")


def build_parser():
    p = argparse.ArgumentParser(prog="recon", description="Joint multi-echo motion-resolved reconstruction.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config; omitted keys take their defaults")
        s.add_argument("--out", help="output directory (overrides out_dir)")
        s.add_argument("--seed", type=int, help="RNG seed, unsigned 64-bit")
        s.add_argument("--threads", type=int, help="coil-parallel workers")
    return p


def run(command, config_path=None, out=None, seed=None, threads=None):
    """Resolve the config, run one command and write the manifest; returns the writer."""
    kind, fn = COMMANDS[command]
    overrides = {}
    if out is not None:
        overrides["out_dir"] = out
    if seed is not None:
        overrides["seed"] = seed
    if threads is not None:
        overrides["threads"] = threads
    if config_path is None:
        cfg = resolve_config({}, kind, overrides)
    else:
        cfg = load_config(config_path, kind, overrides)
    writer = ArtifactWriter(cfg.out_dir)
    writer.add(cfg.write(writer.path("config.json")))
    fn(cfg, writer)
    writer.finalize()
    return writer


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args.command, args.config, args.out, args.seed, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NumericGuardError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
