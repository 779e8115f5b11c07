"""Command-line driver: ``grosslab validate`` and ``grosslab run``.

Exit codes: 0 when every selected experiment passes, 1 when any fails,
2 for configuration or usage errors.  Reports are written either way.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .experiments import EXPERIMENTS, predicted_dimension
from .hamiltonians import HamiltonianSet
from .model import ConfigError, load_config

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


@dataclass(frozen=True)
class RunManifest:
    config_path: str
    experiments: tuple
    out_dir: str
    timestamp: str
    version: str = __version__

    def __post_init__(self):
        if not self.experiments:
            raise ConfigError("empty experiment selection")
        unknown = [e for e in self.experiments if e not in EXPERIMENTS]
        if unknown:
            raise ConfigError(f"unknown experiment(s): {', '.join(unknown)}; known: {', '.join(EXPERIMENTS)}")

    def to_dict(self):
        return {
            "config": self.config_path,
            "experiments": list(self.experiments),
            "out": self.out_dir,
            "timestamp": self.timestamp,
            "version": self.version,
        }


def _floats(text, name):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from None


def _complex(text):
    parts = _floats(text, "--z")
    if len(parts) != 2:
        raise ConfigError(f"--z: expected RE,IM, got {text!r}")
    return complex(*parts)


def worker_count(n_jobs):
    """Workers allowed by ``GROSSLAB_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("GROSSLAB_THREADS", "0").strip() or "0"
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"GROSSLAB_THREADS must be an integer, got {raw!r}") from None
    if cap <= 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_jobs))


def build_parser():
    p = argparse.ArgumentParser(prog="grosslab", description="Lattice polaron verification experiments.")
    p.add_argument("--version", action="version", version=f"grosslab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse a config and echo the model")
    v.add_argument("--config", required=True)
    v.add_argument("--seed", type=int)

    r = sub.add_parser("run", help="run experiments and write JSON/CSV reports")
    r.add_argument("--config", required=True)
    r.add_argument("--exp", default="all", help="comma-separated names or 'all'")
    r.add_argument("--out", default="results")
    r.add_argument("--s-list", default="1.0,1.25,1.5,1.75")
    r.add_argument("--t-list", default="0.5,1.0")
    r.add_argument("--z", default="0,1", help="complex shift as RE,IM")
    r.add_argument("--seed", type=int)
    r.add_argument("--dry-run", action="store_true", help="build operators, solve nothing")
    return p


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _selection(text):
    if text.strip() == "all":
        return tuple(EXPERIMENTS)
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _kwargs(name, args):
    if name == "regularity":
        return {"s_list": _floats(args.s_list, "--s-list")}
    if name == "dynamics":
        return {"t_list": _floats(args.t_list, "--t-list")}
    if name == "resolvent_rate":
        return {"z": _complex(args.z)}
    return {}


def cmd_validate(args, out):
    config = _load(args)
    print(json.dumps(config.to_dict(), indent=2, sort_keys=True), file=out)
    print(f"predicted dimension: {predicted_dimension(config)}", file=out)
    return EXIT_OK


def _dry_run(config, names, out):
    hs = HamiltonianSet(config)
    for lam in hs.lambdas:
        hs.fields(lam)
        hs.sector_H(lam, 0)
    print(f"modes: {hs.space.n_modes}  fock dim: {hs.space.D}  sites: {hs.space.n_sites}", file=out)
    print(f"predicted dimension: {predicted_dimension(config)}", file=out)
    print(f"would run: {', '.join(names)}", file=out)
    return EXIT_OK


def cmd_run(args, out):
    config = _load(args)
    names = _selection(args.exp)
    manifest = RunManifest(
        args.config, names, args.out,
        _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    )
    kwargs = {n: _kwargs(n, args) for n in names}
    if args.dry_run:
        return _dry_run(config, names, out)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise ConfigError(f"output directory not writable: {out_dir}")

    def job(name):
        return EXPERIMENTS[name](config, **kwargs[name])

    with ThreadPoolExecutor(max_workers=worker_count(len(names))) as pool:
        futures = [pool.submit(job, n) for n in names]
        reports = [f.result() for f in futures]

    ok = True
    for name, rep in zip(names, reports):
        rep.write(out_dir)
        fails = rep.failures()
        ok &= rep.verdict
        status = "PASS" if rep.verdict else f"FAIL ({len(fails)} of {len(rep.records)} records)"
        print(f"{name}: {status}", file=out)
        for rec in fails:
            print(f"  {rec.key}: measured {rec.measured:.6g} vs bound {rec.bound:.6g}", file=out)
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def run(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "validate":
            return cmd_validate(args, out)
        return cmd_run(args, out)
    except (ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"grosslab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
