"""The universal attack loop, its replay, and post-attack diagnostics.

Each round samples a rate ``q``, a Bernoulli subset ``U`` and sends
``U | M`` to the system.  When the responder says 1, every key of
``U \\ M`` scores a point; keys whose score clears the lower median of the
unmasked scores by the promotion slack join the mask ``M``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .composable import BottomKSketchMap, ComposableMap
from .core import (BreakpointCheck, KeySet, RateDistribution, ThresholdPair, bernoulli_block,
                   bernoulli_words, rate_threshold, sample_rates, validate_rate_breakpoints)
from .linear.aux import RealAuxParams, aux_real_small
from .linear.matrix import PrimeFieldMatrix, QueryVector, RealMatrix, sketch_vector
from .responders import OccupancyStatistic, QueryHandle, Responder
from .rng import RngHandle, as_generator

DEFAULT_SLACK = 16.0


def promotion_slack(r: int, n: int, const: float = DEFAULT_SLACK) -> float:
    """``const * sqrt(r ln(r n))`` with the natural log."""
    return const * math.sqrt(r * math.log(r * n))


def default_rounds(pool_bound: int, n: int, multiplier: float = 1.0) -> int:
    return int(math.ceil(multiplier * pool_bound ** 2 * math.ceil(math.log(n))))


@dataclass
class AttackConfig:
    r: int
    pool_bound: int
    thresholds: ThresholdPair
    rates: RateDistribution
    slack_const: float = DEFAULT_SLACK
    validation: str = "strict"
    secondary_thresholds: ThresholdPair | None = None
    breakpoints: BreakpointCheck = field(init=False)

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be at least 1")
        if self.validation not in ("strict", "advisory"):
            raise ValueError(f"unknown validation mode {self.validation!r}")
        # the shifted thresholds, when present, are the ones the rate schedule is built for
        th = self.secondary_thresholds or self.thresholds
        self.breakpoints = validate_rate_breakpoints(th, self.pool_bound, th.n, *self.rates.breakpoints,
                                                     separation=self.rates.separation)
        if not self.breakpoints and self.validation == "strict":
            raise ValueError("rate breakpoints invalid: " + "; ".join(self.breakpoints.failures))

    @property
    def n(self) -> int:
        return self.thresholds.n

    @property
    def slack(self) -> float:
        return promotion_slack(self.r, self.n, self.slack_const)


# ---------------------------------------------------------------------------
# systems: what the attacked party computes from a query


class ComposableSystem:
    """One or more composable maps; the responder sees a :class:`QueryHandle`."""

    def __init__(self, maps: ComposableMap | Sequence[ComposableMap]):
        self.maps = [maps] if isinstance(maps, ComposableMap) else list(maps)
        self.n = self.maps[0].n

    def present(self, U: np.ndarray, M: np.ndarray, q: float, gen) -> tuple[object, int]:
        union = U | M
        return QueryHandle(union, M), int(np.count_nonzero(union))

    def statistics(self, union: np.ndarray, M: np.ndarray, grouping: str = "statistic") -> list:
        """Per copy, what an estimator on that copy can use.

        For bottom-k the priority position of the k-th sketch key is
        sufficient for the rate once ``M`` is fixed (the sketch likelihood
        depends only on how many unmasked keys were seen and skipped before
        it), so draws are grouped on that position.
        """
        out = []
        for m in self.maps:
            if grouping == "statistic" and isinstance(m, BottomKSketchMap):
                pos = kernels.kth_present(union, m.order, m.k)
                out.append(pos if pos >= 0 else ("all", int(np.count_nonzero(union))))
            else:
                out.append(m.sketch_mask(union))
        return out


@dataclass
class LinearView:
    """Measurements ``A v`` plus the current mask (the responders here are white-box on ``M``)."""

    measurement: tuple
    mask: np.ndarray


class _SparseRows:
    def __init__(self, A):
        self.A = A
        self.n = A.n
        self.k = A.k
        self.row_support = [np.asarray(A.row_support(j)) for j in range(A.k)]
        self.row_size = tuple(int(s.size) for s in self.row_support)
        self.active = np.zeros(A.n, dtype=bool)
        for s in self.row_support:
            self.active[s] = True
        self.key_rows = [[] for _ in range(A.n)]
        for j, s in enumerate(self.row_support):
            for i in s:
                self.key_rows[int(i)].append(j)

    def rows_free_of(self, M: np.ndarray) -> list[int]:
        touched = set()
        for i in np.flatnonzero(M & self.active):
            touched.update(self.key_rows[int(i)])
        return [j for j in range(self.k) if j not in touched]


class FpLinearSystem(_SparseRows):
    """``S(v) = A v`` over F_p with uniform auxiliary values on ``U | M``.

    The responder's problem is the support size ``||v||_0``.  Values on
    columns of ``A`` that are entirely zero never reach the sketch, so only
    their zero count is drawn (binomially); the distribution of
    ``(A v, ||v||_0)`` is unchanged.
    """

    def __init__(self, A: PrimeFieldMatrix):
        super().__init__(A)
        self.p = A.p
        self.theta = (A.p - 1) / A.p

    def present(self, U, M, q, gen):
        union = U | M
        size = int(np.count_nonzero(union))
        act = np.flatnonzero(union & self.active)
        vals = gen.integers(0, self.p, size=act.size)
        zeros = int(np.count_nonzero(vals == 0)) + int(gen.binomial(size - act.size, 1 / self.p))
        meas = tuple(int(x) for x in (self.A.entries[:, act] @ vals) % self.p)
        return LinearView(meas, M), size - zeros

    def statistic(self, view: LinearView) -> OccupancyStatistic:
        """Zero/nonzero pattern of the rows whose support avoids ``M``."""
        rows = self.rows_free_of(view.mask)
        return OccupancyStatistic("hit", int(np.count_nonzero(view.mask)),
                                  tuple(self.row_size[j] for j in rows),
                                  tuple(int(view.measurement[j] != 0) for j in rows))


class RealSmallSystem(_SparseRows):
    """Small-magnitude real scheme on an integral sparse matrix.

    Large keys ``H | M`` carry ``Exp`` values of mean ``beta`` and the other
    keys of ``U`` carry 1, so a row is an integer exactly when its support
    avoids ``H | M``; then it counts the unit keys it contains.
    """

    def __init__(self, A: RealMatrix, params: RealAuxParams):
        if not A.integral:
            raise ValueError("the small-magnitude system expects an integral matrix")
        super().__init__(A)
        self.params = params

    def present(self, U, M, q, gen):
        n = self.n
        qv, _ = aux_real_small(KeySet.from_mask(M), KeySet.from_mask(U), q, self.params, gen,
                               active=self.active, restrict=True)
        return LinearView(sketch_vector(self.A, qv), M), int(np.count_nonzero(U | M))

    def statistic(self, view: LinearView) -> OccupancyStatistic:
        """Unit-entry counts of the rows whose measurement is an integer."""
        sizes, counts = [], []
        for j, val in enumerate(view.measurement):
            if val.denominator == 1:
                sizes.append(self.row_size[j])
                counts.append(int(val))
        return OccupancyStatistic("count", int(np.count_nonzero(view.mask)), tuple(sizes), tuple(counts))


# ---------------------------------------------------------------------------
# the attack


@dataclass
class AttackLog:
    q: np.ndarray
    setsize: np.ndarray
    masksize: np.ndarray
    z: np.ndarray
    err: np.ndarray
    err2: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.q.size)

    def truncate(self, t: int) -> "AttackLog":
        return AttackLog(self.q[:t], self.setsize[:t], self.masksize[:t], self.z[:t], self.err[:t],
                         None if self.err2 is None else self.err2[:t])

    def rows(self):
        for t in range(len(self)):
            yield (t, float(self.q[t]), int(self.setsize[t]), int(self.masksize[t]),
                   int(self.z[t]), int(self.err[t]))


@dataclass
class AttackState:
    mask: KeySet
    counts: np.ndarray
    rounds: int
    errors: int
    log: AttackLog
    promotions: list[tuple[int, int]]
    slack: float
    runtime: float = 0.0
    secondary_errors: int | None = None

    @property
    def error_fraction(self) -> float:
        return self.errors / self.rounds if self.rounds else 0.0

    def mask_history(self) -> list[KeySet]:
        return [KeySet([x for t, x in self.promotions if t <= s], self.mask.n)
                for s in range(self.rounds)]


def _streams(rng) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    h = rng if isinstance(rng, RngHandle) else RngHandle(int(rng))
    return h.child(0).generator(), h.child(1).generator(), h.child(2).generator()


def run_attack(config: AttackConfig, system, qr: Responder, rng, block: int = 256,
               progress: Callable[[int, "AttackState"], None] | None = None) -> AttackState:
    """Run ``config.r`` rounds of the attack against ``system`` answered by ``qr``.

    Randomness: rates, subsets and auxiliary values come from three child
    streams of ``rng`` (an :class:`RngHandle` or an int seed), so a replay can
    regenerate every query without the responder.
    """
    n = system.n
    r = config.r
    dist = config.rates
    th, th2 = config.thresholds, config.secondary_thresholds
    slack = config.slack
    q_gen, u_gen, aux_gen = _streams(rng)

    board = kernels.ScoreBoard(n)
    counts = board.counts
    M = board.masked.view(np.bool_)
    union8 = np.empty(n, np.uint8)
    log = AttackLog(np.empty(r), np.empty(r, np.int32), np.empty(r, np.int32), np.empty(r, np.int8),
                    np.empty(r, np.int8), np.empty(r, np.int8) if th2 else None)
    promotions: list[tuple[int, int]] = []
    errors = errors2 = 0
    msize = 0
    A, B = th.A, th.B
    t0 = time.perf_counter()
    for start in range(0, r, block):
        b = min(block, r - start)
        qs = sample_rates(dist, b, q_gen)
        words = np.ascontiguousarray(bernoulli_words(u_gen, b, n))
        for j in range(b):
            t = start + j
            q = qs[j]
            U8 = np.empty(n, np.uint8)
            setsize = kernels.bernoulli_union(words[j], rate_threshold(q), board.masked, U8, union8)
            U = U8.view(np.bool_)
            view, size = system.present(U, M, q, aux_gen)
            z = qr.respond(view, t)
            e = (size <= A and z == 1) or (size >= B and z == 0)
            errors += e
            log.q[t], log.setsize[t], log.masksize[t], log.z[t], log.err[t] = q, setsize, msize, z, e
            if th2 is not None:
                e2 = th2.is_error(setsize, z)
                errors2 += e2
                log.err2[t] = e2
            if z:
                promoted = board.update(U8, slack)
                if promoted.size:
                    promotions.extend((t, int(x)) for x in promoted)
                    msize += int(promoted.size)
        if progress is not None:
            progress(start + b, AttackState(KeySet.from_mask(M.copy()), counts, start + b, errors,
                                            log.truncate(start + b), promotions, slack))
    return AttackState(KeySet.from_mask(M.copy()), counts, r, errors, log, promotions, slack,
                       time.perf_counter() - t0, errors2 if th2 else None)


def run_baseline(config: AttackConfig, system, qr: Responder, rng, block: int = 256) -> AttackState:
    """The same query stream with no mask and no scoring: the non-adaptive control."""
    n = system.n
    q_gen, u_gen, aux_gen = _streams(rng)
    r = config.r
    th = config.thresholds
    empty = np.zeros(n, dtype=bool)
    log = AttackLog(np.empty(r), np.empty(r, np.int32), np.zeros(r, np.int32), np.empty(r, np.int8),
                    np.empty(r, np.int8))
    batch = getattr(qr, "respond_batch", None) if isinstance(system, ComposableSystem) else None
    t0 = time.perf_counter()
    for start in range(0, r, block):
        b = min(block, r - start)
        qs = sample_rates(config.rates, b, q_gen)
        us = bernoulli_block(u_gen, qs, n)
        if batch is not None:
            zs = batch(us)
            sizes = us.sum(axis=1)
        else:
            zs = np.empty(b, np.int8)
            sizes = np.empty(b, np.int64)
            for j in range(b):
                view, sizes[j] = system.present(us[j], empty, qs[j], aux_gen)
                zs[j] = qr.respond(view, start + j)
        sl = slice(start, start + b)
        log.q[sl], log.setsize[sl], log.z[sl] = qs, us.sum(axis=1), zs
        log.err[sl] = ((sizes <= th.A) & (zs == 1)) | ((sizes >= th.B) & (zs == 0))
    errors = int(log.err.sum())
    return AttackState(KeySet((), n), np.zeros(n, np.int64), r, errors, log, [], 0.0,
                       time.perf_counter() - t0)


def promotion_check(C: np.ndarray, M: KeySet, r: int, n: int, x: int,
                    slack_const: float = DEFAULT_SLACK) -> bool:
    """``C[x] >= lower-median(C over keys outside M) + slack``."""
    if x in M:
        raise ValueError("x is already masked")
    free = np.ones(len(C), dtype=bool)
    free[M.members] = False
    vals = np.sort(np.asarray(C)[free])
    med = vals[(vals.size - 1) // 2]
    return bool(C[x] >= med + promotion_slack(r, n, slack_const))


def replay_attack(log: AttackLog, config: AttackConfig, n: int, rng,
                  block: int = 256) -> tuple[np.ndarray, KeySet, bool]:
    """Recompute scores and mask from the logged answers alone.

    Regenerates the rate and subset streams, applies the logged ``z`` values
    and a sort-based median.  Returns ``(counts, mask, queries_match)``.
    """
    q_gen, u_gen, _ = _streams(rng)
    slack = config.slack
    counts = np.zeros(n, dtype=np.int64)
    M = np.zeros(n, dtype=bool)
    ok = True
    r = len(log)
    for start in range(0, r, block):
        b = min(block, r - start)
        qs = sample_rates(config.rates, b, q_gen)
        us = bernoulli_block(u_gen, qs, n)
        for j in range(b):
            t = start + j
            U = us[j]
            if qs[j] != log.q[t] or int(np.count_nonzero(U | M)) != log.setsize[t] \
                    or int(M.sum()) != log.masksize[t]:
                ok = False
            if log.z[t]:
                live = U & ~M
                counts[live] += 1
                vals = np.sort(counts[~M])
                med = vals[(vals.size - 1) // 2]
                M |= live & (counts >= med + slack)
    return counts, KeySet.from_mask(M), ok


# ---------------------------------------------------------------------------
# certification and probes


@dataclass
class Certificate:
    eta: float
    per_copy: list[float]
    groups: int
    trials: int
    p_low: float
    p_high: float


def certify_adversarial(M: KeySet, dist: RateDistribution, system, thresholds: ThresholdPair,
                        trials: int, rng, grouping: str = "statistic", block: int = 256) -> Certificate:
    """Lower bound on every estimator's error on the query distribution shifted by ``M``.

    Fresh draws ``V = U | M`` are grouped by what the estimator can see; within
    a group the best fixed answer still errs on the smaller of the two
    threshold sides, and ``eta`` is the total of those minima over ``trials``.
    For multi-copy systems the copy used per query is uniform and independent,
    so ``eta`` is the average over copies.
    """
    gen = as_generator(rng)
    n = system.n
    Mm = M.mask(n)
    linear = hasattr(system, "statistic")
    ncopy = 1 if linear else len(system.maps)
    tables = [dict() for _ in range(ncopy)]
    low = high = 0
    done = 0
    while done < trials:
        b = min(block, trials - done)
        qs = sample_rates(dist, b, gen)
        us = bernoulli_block(gen, qs, n)
        for j in range(b):
            if linear:
                view, size = system.present(us[j], Mm, qs[j], gen)
                keys = [system.statistic(view)]
            else:
                union = us[j] | Mm
                size = int(np.count_nonzero(union))
                keys = system.statistics(union, Mm, grouping)
            lo, hi = size <= thresholds.A, size >= thresholds.B
            low += lo
            high += hi
            for tab, key in zip(tables, keys):
                cell = tab.setdefault(key, [0, 0])
                cell[0] += lo
                cell[1] += hi
        done += b
    per_copy = [sum(min(a, c) for a, c in tab.values()) / trials for tab in tables]
    return Certificate(float(np.mean(per_copy)), per_copy, sum(len(t) for t in tables), trials,
                       low / trials, high / trials)


@dataclass
class ProbeResult:
    p_bar: float
    p_star: float
    eta: float
    diff: float
    se_p_bar: float
    se_p_star: float
    se_eta: float
    se_diff: float
    trials: int

    @property
    def diff_lower95(self) -> float:
        """One-sided 95% lower confidence bound on ``p_bar - p_star``."""
        return self.diff - 1.6448536269514722 * self.se_diff


def score_advantage_probe(phi, M: KeySet, L_truth: KeySet, dist: RateDistribution,
                          thresholds: ThresholdPair, trials: int, rng, batch: int = 2048) -> ProbeResult:
    """Monte-Carlo estimates of the pool-key and transparent-key score probabilities.

    ``phi`` maps a stack of query masks to answers (``respond_batch``) or is a
    :class:`Responder` answering a :class:`QueryHandle`.  With ``L' = L \\ M``
    and ``T`` the keys outside ``L | M``, per query we record
    ``z |U & L'|/|L'|``, ``z |U & T|/|T|`` and the error indicator with
    strict thresholds; the difference is estimated pairwise per query.
    """
    gen = as_generator(rng)
    n = thresholds.n
    Mm = M.mask(n)
    Lp = L_truth.mask(n) & ~Mm
    T = ~(L_truth.mask(n) | Mm)
    nl, nt = int(Lp.sum()), int(T.sum())
    if nl == 0 or nt == 0:
        raise ValueError("need nonempty pool and transparent sets")
    fn = getattr(phi, "respond_batch", None)
    sums = np.zeros(3)
    sq = np.zeros(4)
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        qs = sample_rates(dist, b, gen)
        U = bernoulli_block(gen, qs, n)
        V = U | Mm
        if fn is not None:
            z = np.asarray(fn(V), dtype=float)
        else:
            z = np.array([phi.respond(QueryHandle(v, Mm)) for v in V], dtype=float)
        a = z * (U & Lp).sum(axis=1) / nl
        c = z * (U & T).sum(axis=1) / nt
        size = V.sum(axis=1)
        e = np.where(z == 1, size < thresholds.A, size > thresholds.B).astype(float)
        d = a - c
        sums += [a.sum(), c.sum(), e.sum()]
        sq += [(a * a).sum(), (c * c).sum(), (e * e).sum(), (d * d).sum()]
        done += b
    mean = sums / trials
    diff = mean[0] - mean[1]
    var = np.maximum(sq[:3] / trials - mean ** 2, 0.0)
    var_d = max(sq[3] / trials - diff ** 2, 0.0)
    se = np.sqrt(var / trials)
    return ProbeResult(float(mean[0]), float(mean[1]), float(mean[2]), float(diff),
                       float(se[0]), float(se[1]), float(se[2]), math.sqrt(var_d / trials), trials)


def mask_outside_pool(M: KeySet, L: KeySet) -> int:
    """Number of masked keys that are not pool keys (transparent keys promoted)."""
    return len(M - L)


def mask_is_monotone(state: AttackState) -> bool:
    ts = [t for t, _ in state.promotions]
    return ts == sorted(ts) and len({x for _, x in state.promotions}) == len(state.promotions)
