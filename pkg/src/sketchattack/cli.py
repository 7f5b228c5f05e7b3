"""Command-line entry point: ``sketchattack {attack,verify-pools,baseline,axioms}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from . import harness
from .harness import ConfigError, ExperimentConfig

log = logging.getLogger("sketchattack")

COMMANDS = {
    "attack": harness.cmd_attack,
    "verify-pools": harness.cmd_verify_pools,
    "baseline": harness.cmd_baseline,
    "axioms": harness.cmd_axioms,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sketchattack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH", help="YAML experiment config (defaults if omitted)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", metavar="DIR", help="output directory")
        s.add_argument("--trials", type=int, help="number of independent trials")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config field, e.g. --set attack.r=100 (value parsed as YAML)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "axioms":
            s.add_argument("--n-max", type=int, help="ground-set size for the exhaustive checks")
            s.add_argument("--mutation", action="store_true", help="include the broken-compose fixture")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"{item}: expected KEY=VALUE")
        cfg = cfg.override(key.strip(), yaml.safe_load(raw))
    if args.seed is not None:
        cfg = cfg.override("seed", args.seed)
    if args.trials is not None:
        cfg = cfg.override("trials", args.trials)
    if args.out is not None:
        cfg = cfg.override("out", args.out)
    if getattr(args, "n_max", None) is not None:
        cfg = cfg.override("axioms.n_max", args.n_max)
    if getattr(args, "mutation", False):
        cfg = cfg.override("axioms.mutation", True)
    return cfg


def _report(command: str, result) -> str:
    if command in ("attack", "baseline"):
        agg = result.aggregate
        if not result.trials:
            return f"{command}: no rounds"
        lines = [f"trial {t['trial']}: error_fraction={t['error_fraction']:.4f} |M|={len(t['mask'])}"
                 + (f" eta_hat={t['eta_hat']:.4f}" if t.get("eta_hat") is not None else "")
                 for t in result.trials]
        lines.append(f"median error_fraction={agg['median_error_fraction']:.4f}")
        return "\n".join(lines)
    if command == "verify-pools":
        out = []
        for r in result["reports"]:
            out.append(f"{r['family']}: |L|={r['pool_size']} (cap {r['pool_cap']}), "
                       f"max rate={max(c['rate'] for c in r['cells']):.4f}, "
                       f"termination={r['termination_rate']}, {'ok' if r['ok'] else 'VIOLATION'}")
            out += [f"  violation: mask {c['mask']} q={c['q']} rate={c['rate']:.4f} > {c['bound']:.4f}"
                    for c in r["violations"]]
        return "\n".join(out)
    return "\n".join(r["text"] if not r["passed"] else f"{r['family']} (n={r['n']}): PASS"
                     for r in result["reports"])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        code, result = COMMANDS[args.command](cfg, cfg.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(_report(args.command, result))
    log.info("record: %s", json.dumps({"command": args.command, "exit": code}))
    return code


if __name__ == "__main__":
    sys.exit(main())
