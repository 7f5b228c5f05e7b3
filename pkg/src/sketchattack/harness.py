"""Experiment configuration, scenario builders and the command implementations.

A run is a pure function of its :class:`ExperimentConfig` (seed included).
Trial ``i`` draws everything from ``RngHandle(seed).child(i)``: sketch maps
from ``child(i, 10 + copy)``, the responder from ``child(i, 20)``, the attack
streams from ``child(i, 30)`` and certification from ``child(i, 40)``.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import statistics
import time
import types
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .attack import (AttackConfig, ComposableSystem, FpLinearSystem, RealSmallSystem,
                     certify_adversarial, default_rounds, mask_outside_pool, run_attack, run_baseline)
from .composable import (BlockChainSketchMap, BooleanLinearSketchMap, BottomKSketchMap,
                         BrokenComposeMap, KPartitionSketchMap, SampleSketchMap, brute_force_axioms,
                         check_termination, peel, pool_from_peeling, pool_layers, pool_size_cap,
                         verify_pool)
from .core import KeySet, RateDistribution, ThresholdPair
from .linear import (GreedyBasisSketchMap, PrimeFieldMatrix, RealAuxParams, RealMatrix,
                     SpanSketchMap, basis_pool, linear_pool_cap, shifted_thresholds_fp,
                     verify_linear_pool)
from .responders import (ConstantResponder, OccupancyBayesResponder, OmniscientBayesResponder,
                         RobustWrapper, StandardResponder, wrap_natural)
from .rng import RngHandle

CSV_HEADER = ("t", "q", "setsize", "masksize", "z", "err")
COMPOSABLE = ("bottomk", "kpartition", "sample", "boolean", "blockchain")
LINEAR = ("fp", "real-small")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ThresholdSpec:
    A: int = 614
    B: int = 1024


@dataclass
class RateSpec:
    qmin: float = 0.1
    q1: float = 0.2
    q2: float = 0.55
    qmax: float = 0.7
    separation: float = 0.02


@dataclass
class SketchSpec:
    family: str = "bottomk"
    k: int = 8
    copies: int = 8
    delta: float = 0.01
    p: int = 257
    row_supports: list[int] = field(default_factory=lambda: [2, 3, 4, 6, 8, 11, 16, 23])
    density: float = 0.5
    gamma: float = 1.0
    C: float = 8.0


@dataclass
class ResponderSpec:
    kind: str = "robust-random"
    z: int = 0


@dataclass
class AttackSpec:
    r: int | None = None
    r_multiplier: float = 1.0
    slack_const: float = 16.0
    validation: str = "advisory"
    csv: bool = True
    shift_c: float = 0.01


@dataclass
class CertifySpec:
    trials: int = 10_000
    grouping: str = "statistic"


@dataclass
class PoolSpec:
    trials: int = 10_000
    q_grid: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.4, 0.7])
    masks: int = 3
    layers: int | None = None
    termination_q: float | None = None
    termination_trials: int = 2_000


@dataclass
class AxiomSpec:
    n_max: int = 10
    mutation: bool = False


@dataclass
class ExperimentConfig:
    scenario: str = "desk-bottomk"
    seed: int = 0
    trials: int = 1
    workers: int = 1
    n: int = 2048
    out: str = "runs"
    thresholds: ThresholdSpec = field(default_factory=ThresholdSpec)
    rates: RateSpec = field(default_factory=RateSpec)
    sketch: SketchSpec = field(default_factory=SketchSpec)
    responder: ResponderSpec = field(default_factory=ResponderSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    certify: CertifySpec = field(default_factory=CertifySpec)
    pools: PoolSpec = field(default_factory=PoolSpec)
    axioms: AxiomSpec = field(default_factory=AxiomSpec)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        return _build(cls, data or {}, "")

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def override(self, dotted: str, value) -> "ExperimentConfig":
        """Copy with one field replaced, e.g. ``override("attack.r", 10)``."""
        data = self.to_dict()
        node = data
        *head, last = dotted.split(".")
        for part in head:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"{dotted}: no such section")
            node = node[part]
        if last not in node:
            raise ConfigError(f"{dotted}: unknown field")
        node[last] = value
        return ExperimentConfig.from_dict(data)


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        (arg,) = typing.get_args(tp)
        return [_coerce(arg, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build(tp, value, path + ".")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: dict, prefix: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{prefix}{key}: unknown field")
    kwargs = {k: _coerce(hints[k], v, f"{prefix}{k}") for k, v in data.items()}
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    system: object
    responder: object
    thresholds: ThresholdPair
    secondary: ThresholdPair | None
    pool: KeySet | None
    pool_bound: int
    maps: list = field(default_factory=list)
    matrix: object = None


def rate_distribution(cfg: ExperimentConfig) -> RateDistribution:
    r = cfg.rates
    try:
        return RateDistribution(r.qmin, r.q1, r.q2, r.qmax, separation=r.separation)
    except ValueError as exc:
        raise ConfigError(f"rates: {exc}") from None


def threshold_pair(cfg: ExperimentConfig) -> ThresholdPair:
    try:
        return ThresholdPair(cfg.thresholds.A, cfg.thresholds.B, cfg.n)
    except ValueError as exc:
        raise ConfigError(f"thresholds: {exc}") from None


def build_map(family: str, n: int, k: int, rng, density: float = 0.5, delta: float = 0.01):
    if family == "bottomk":
        return BottomKSketchMap.random(n, k, rng)
    if family == "kpartition":
        return KPartitionSketchMap.random(n, k, rng)
    if family == "sample":
        return SampleSketchMap.random(n, k, rng)
    if family == "boolean":
        return BooleanLinearSketchMap.random(n, k, rng, density)
    if family == "blockchain":
        return BlockChainSketchMap.for_rank(n, k, delta)
    raise ConfigError(f"sketch.family: unknown family {family!r}")


def composable_pool(smap, qmin: float, delta: float, layers: int | None = None):
    """Peeling-prefix pool of one map; ``layers`` overrides the prescribed prefix length."""
    pe = peel(smap)
    if len(pe) == 0:
        return pe, KeySet((), smap.n), 0
    if layers is not None:
        ell = min(layers, len(pe))
        return pe, pe.prefix(ell), ell
    pool = pool_from_peeling(pe, smap, qmin, delta)
    return pe, pool.keys, pool.layers_used


def build_scenario(cfg: ExperimentConfig, trial: int) -> Scenario:
    h = RngHandle(cfg.seed).child(trial)
    sk, n = cfg.sketch, cfg.n
    th = threshold_pair(cfg)
    dist = rate_distribution(cfg)
    kind = cfg.responder.kind
    if sk.family in COMPOSABLE:
        if sk.copies < 1:
            raise ConfigError("sketch.copies: must be at least 1")
        maps = [build_map(sk.family, n, sk.k, h.child(10 + c), sk.density, sk.delta)
                for c in range(sk.copies)]
        _, pool, _ = composable_pool(maps[0], dist.qmin, sk.delta)
        system = ComposableSystem(maps)
        if kind in ("robust-random", "robust-fresh"):
            qr = RobustWrapper(maps, th, kind.split("-")[1], h.child(20))
        elif kind == "standard":
            qr = StandardResponder(maps[0], th)
        elif kind == "constant":
            qr = ConstantResponder(cfg.responder.z)
        elif kind == "omniscient":
            union = KeySet((), n)
            for m in maps:
                union = union | composable_pool(m, dist.qmin, sk.delta)[1]
            qr = OmniscientBayesResponder(dist, th, union)
        else:
            raise ConfigError(f"responder.kind: {kind!r} is not available for composable maps")
        return Scenario(system, qr, th, None, pool, max(len(pool), 1), maps)
    if sk.family == "fp":
        A = PrimeFieldMatrix.random_sparse(sk.p, n, sk.row_supports, h.child(10))
        system = FpLinearSystem(A)
        try:
            a2, b2 = shifted_thresholds_fp(th.A, th.B, sk.p, n, cfg.attack.shift_c)
        except ValueError as exc:
            raise ConfigError(f"attack.shift_c: {exc}") from None
        secondary = ThresholdPair(a2, b2, n)
        theta = (sk.p - 1) / sk.p
        base = OccupancyBayesResponder(dist, th, theta=theta, size_theta=theta)
        pool = basis_pool(A, dist.qmin, sk.delta, "basis").keys
    elif sk.family == "real-small":
        A = RealMatrix.random_sparse01(n, sk.row_supports, h.child(10))
        params = RealAuxParams.small(n, A.k, sk.gamma, sk.delta, dist.qmin, sk.C)
        system = RealSmallSystem(A, params)
        secondary = None
        base = OccupancyBayesResponder(dist, th, q0=params.q0)
        pool = basis_pool(A, dist.qmin, sk.delta, "greedy-basis").keys
    else:
        raise ConfigError(f"sketch.family: unknown family {sk.family!r}")
    if kind == "occupancy-bayes":
        qr = wrap_natural(base, system.statistic)
    elif kind == "constant":
        qr = ConstantResponder(cfg.responder.z)
    else:
        raise ConfigError(f"responder.kind: {kind!r} is not available for linear sketches")
    return Scenario(system, qr, th, secondary, pool, max(len(pool), 1), matrix=A)


def attack_config(cfg: ExperimentConfig, sc: Scenario, r: int | None = None) -> AttackConfig:
    a = cfg.attack
    rounds = r if r is not None else (a.r if a.r is not None
                                      else default_rounds(sc.pool_bound, cfg.n, a.r_multiplier))
    try:
        return AttackConfig(rounds, sc.pool_bound, sc.thresholds, rate_distribution(cfg),
                            slack_const=a.slack_const, validation=a.validation,
                            secondary_thresholds=sc.secondary)
    except ValueError as exc:
        raise ConfigError(f"attack: {exc}") from None


# ---------------------------------------------------------------------------
# records and writers


@dataclass
class RunRecord:
    command: str
    config_hash: str
    config: dict
    trials: list[dict]
    aggregate: dict

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=False)


def write_csv(path: Path, log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(log.rows())


def _aggregate(trials: list[dict]) -> dict:
    if not trials:
        return {}
    fr = [t["error_fraction"] for t in trials]
    out = {"median_error_fraction": statistics.median(fr), "min_error_fraction": min(fr),
           "max_error_fraction": max(fr)}
    etas = [t["eta_hat"] for t in trials if t.get("eta_hat") is not None]
    if etas:
        out["median_eta_hat"] = statistics.median(etas)
    return out


def attack_trial(cfg: ExperimentConfig, trial: int, certify: bool = True):
    """One attack session; returns ``(summary dict, AttackState)``."""
    h = RngHandle(cfg.seed).child(trial)
    sc = build_scenario(cfg, trial)
    ac = attack_config(cfg, sc)
    st = run_attack(ac, sc.system, sc.responder, h.child(30))
    eta = per_copy = None
    if certify and cfg.certify.trials > 0:
        cert = certify_adversarial(st.mask, ac.rates, sc.system, sc.thresholds, cfg.certify.trials,
                                   h.child(40), cfg.certify.grouping)
        eta, per_copy = cert.eta, cert.per_copy
    summary = {
        "trial": trial,
        "rounds": st.rounds,
        "error_count": st.errors,
        "error_fraction": st.error_fraction,
        "mask": st.mask.tolist(),
        "mask_size": len(st.mask),
        "eta_hat": eta,
        "eta_per_copy": per_copy,
        "pool_size": sc.pool_bound,
        "mask_outside_pool": mask_outside_pool(st.mask, sc.pool) if sc.pool is not None else None,
        "slack": st.slack,
        "runtime_s": st.runtime,
        "breakpoint_failures": list(ac.breakpoints.failures),
    }
    if st.secondary_errors is not None:
        summary["secondary_error_count"] = st.secondary_errors
        summary["secondary_error_fraction"] = st.secondary_errors / st.rounds
        summary["secondary_thresholds"] = [ac.secondary_thresholds.A, ac.secondary_thresholds.B]
    return summary, st


def baseline_trial(cfg: ExperimentConfig, trial: int, r: int | None = None):
    h = RngHandle(cfg.seed).child(trial)
    sc = build_scenario(cfg, trial)
    ac = attack_config(cfg, sc, r)
    st = run_baseline(ac, sc.system, sc.responder, h.child(30))
    return {"trial": trial, "rounds": st.rounds, "error_count": st.errors,
            "error_fraction": st.error_fraction, "mask": [], "eta_hat": None,
            "runtime_s": st.runtime}, st


def _run_trials(fn, cfg: ExperimentConfig, **kw):
    idx = range(cfg.trials)
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            return list(ex.map(_call, [(fn, cfg, i, kw) for i in idx]))
    return [fn(cfg, i, **kw) for i in idx]


def _call(args):
    fn, cfg, i, kw = args
    return fn(cfg, i, **kw)


def _finish(command: str, cfg: ExperimentConfig, out: Path, results, write_logs: bool) -> RunRecord:
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for summary, st in results:
        i = summary["trial"]
        if write_logs:
            write_csv(out / f"{command}_trial{i:03d}.csv", st.log)
        (out / f"{command}_trial{i:03d}.json").write_text(json.dumps(summary, indent=2))
        summaries.append(summary)
    rec = RunRecord(command, cfg.config_hash(), cfg.to_dict(), summaries, _aggregate(summaries))
    (out / f"{command}_record.json").write_text(rec.to_json())
    return rec


def cmd_attack(cfg: ExperimentConfig, out: str | Path | None = None) -> tuple[int, RunRecord]:
    results = _run_trials(attack_trial, cfg)
    rec = _finish("attack", cfg, Path(out or cfg.out), results, cfg.attack.csv)
    return 0, rec


def cmd_baseline(cfg: ExperimentConfig, out: str | Path | None = None) -> tuple[int, RunRecord]:
    outp = Path(out or cfg.out)
    if cfg.attack.r == 0:
        outp.mkdir(parents=True, exist_ok=True)
        rec = RunRecord("baseline", cfg.config_hash(), cfg.to_dict(), [], {})
        (outp / "baseline_record.json").write_text(rec.to_json())
        return 0, rec
    results = _run_trials(baseline_trial, cfg)
    return 0, _finish("baseline", cfg, outp, results, cfg.attack.csv)


# ---------------------------------------------------------------------------
# pools and axioms


def pool_masks(L: KeySet, count: int, gen) -> list[KeySet]:
    """The empty mask plus ``count - 1`` random subsets of ``L`` of increasing size."""
    masks = [KeySet((), L.n)]
    members = L.members
    for j in range(1, count):
        size = int(round(len(members) * j / (2 * max(count - 1, 1))))
        masks.append(KeySet(gen.choice(members, size, replace=False) if size else (), L.n))
    return masks


def verify_pools_report(cfg: ExperimentConfig, trial: int = 0) -> dict:
    sk, pc, n = cfg.sketch, cfg.pools, cfg.n
    dist = rate_distribution(cfg)
    h = RngHandle(cfg.seed).child(trial)
    gen = h.child(50).generator()
    if sk.family in COMPOSABLE:
        smap = build_map(sk.family, n, sk.k, h.child(10), sk.density, sk.delta)
        pe, L, ell = composable_pool(smap, dist.qmin, sk.delta, pc.layers)
        cap = pool_size_cap(max(smap.rank_bound, 1), dist.qmin, sk.delta, smap.monotone)
        report = verify_pool(smap, L, pool_masks(L, pc.masks, gen), pc.q_grid, pc.trials, gen, sk.delta)
        term = None
        if len(pe) and (pc.termination_q is not None or smap.monotone):
            q = pc.termination_q if pc.termination_q is not None else dist.qmin
            t_ell = min(ell, len(pe)) if pc.layers is not None else \
                min(pool_layers(max(smap.rank_bound, 1), dist.qmin, sk.delta, smap.monotone), len(pe))
            term = check_termination(smap, pe, t_ell, q, pc.termination_trials, gen)
        layers, monotone = ell, smap.monotone
    elif sk.family in LINEAR:
        if sk.family == "fp":
            A = PrimeFieldMatrix.random_sparse(sk.p, n, sk.row_supports, h.child(10))
            bp = basis_pool(A, dist.qmin, sk.delta, "basis")
            aux = "fp"
        else:
            A = RealMatrix.random_sparse01(n, sk.row_supports, h.child(10))
            bp = basis_pool(A, dist.qmin, sk.delta, "greedy-basis")
            aux = "real-large"
        L, layers, monotone, term = bp.keys, bp.layers_used, True, None
        cap = linear_pool_cap(A.k, dist.qmin, sk.delta)
        report = verify_linear_pool(A, bp, aux, pool_masks(L, pc.masks, gen), pc.q_grid, pc.trials, gen)
    else:
        raise ConfigError(f"sketch.family: unknown family {sk.family!r}")
    cells = [{"mask": c.mask_index, "q": c.q, "failures": c.failures, "trials": c.trials,
              "rate": c.rate, "bound": report.bound(c.trials)} for c in report.cells]
    term_ok = term is None or term <= sk.delta + 3 * np.sqrt(sk.delta * (1 - sk.delta) / pc.termination_trials)
    return {
        "family": sk.family, "pool_size": len(L), "pool_cap": cap, "layers": layers,
        "monotone": monotone, "delta": sk.delta, "cells": cells,
        "violations": [c for c in cells if c["rate"] > c["bound"]],
        "termination_rate": term, "termination_ok": bool(term_ok),
        "size_ok": len(L) <= cap, "ok": bool(report.ok and term_ok and len(L) <= cap),
    }


def cmd_verify_pools(cfg: ExperimentConfig, out: str | Path | None = None) -> tuple[int, dict]:
    outp = Path(out or cfg.out)
    outp.mkdir(parents=True, exist_ok=True)
    reports = [verify_pools_report(cfg, i) for i in range(cfg.trials)]
    doc = {"command": "verify-pools", "config_hash": cfg.config_hash(), "config": cfg.to_dict(),
           "reports": reports, "ok": all(r["ok"] for r in reports)}
    (outp / "verify_pools.json").write_text(json.dumps(doc, indent=2))
    return (0 if doc["ok"] else 1), doc


def axiom_maps(n: int, seed: int, mutation: bool = False) -> list:
    """Every shipped composable map at ground-set size ``n``, plus the mutation fixture on request."""
    h = RngHandle(seed)
    k = max(2, n // 4)
    maps = [
        SampleSketchMap.random(n, k, h.child(1)),
        BottomKSketchMap.random(n, k, h.child(2)),
        KPartitionSketchMap.random(n, k, h.child(3)),
        BooleanLinearSketchMap.random(n, 3, h.child(4), 0.4),
        BlockChainSketchMap(n, 2, max(1, n // 4), 2),
        SpanSketchMap(PrimeFieldMatrix.random(5, 3, n, h.child(5))),
        GreedyBasisSketchMap(PrimeFieldMatrix.random(5, 3, n, h.child(6))),
        SpanSketchMap(RealMatrix.random_integer(3, n, 2, h.child(7))),
        GreedyBasisSketchMap(RealMatrix.random_integer(3, n, 2, h.child(8))),
    ]
    if mutation:
        maps.append(BrokenComposeMap(BottomKSketchMap.random(n, k, h.child(9))))
    return maps


def cmd_axioms(cfg: ExperimentConfig, out: str | Path | None = None) -> tuple[int, dict]:
    outp = Path(out or cfg.out)
    outp.mkdir(parents=True, exist_ok=True)
    n = cfg.axioms.n_max
    reports = []
    for smap in axiom_maps(n, cfg.seed, cfg.axioms.mutation):
        t0 = time.perf_counter()
        rep = brute_force_axioms(smap, n_max=n)
        bad = rep.first_failure()
        label = rep.family + (f"[p={smap.A.p}]" if hasattr(smap, "A") else "")
        reports.append({"family": label, "n": rep.n, "passed": rep.passed,
                        "checks": {c.name: c.ok for c in rep.checks},
                        "witness": None if bad is None else f"{bad.name}: {bad.witness}",
                        "seconds": time.perf_counter() - t0, "text": rep.summary().replace(rep.family, label, 1)})
    doc = {"command": "axioms", "config_hash": cfg.config_hash(), "n": n, "reports": reports,
           "ok": all(r["passed"] for r in reports)}
    (outp / "axioms.json").write_text(json.dumps(doc, indent=2))
    return (0 if doc["ok"] else 1), doc
