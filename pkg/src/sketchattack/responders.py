"""Query responders: standard estimators, robust multi-copy wrappers, Bayes responders.

A responder turns whatever the system hands it for one query (a
:class:`QueryHandle` for composable maps, a measurement view for linear
sketches, or an extracted statistic) into one bit ``Z``.  Whether ``Z`` is an
error is decided outside, from the true query size.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from . import kernels
from .composable import BottomKSketchMap, ComposableMap, Sketch
from .core import KeySet, RateDistribution, ThresholdPair
from .rng import as_generator

POSTERIOR_BINS = 1 << 10


class ResponderExhausted(RuntimeError):
    """A fresh-copy wrapper ran out of unused copies."""


class QueryHandle:
    """What a composable-map system hands the responder for one query.

    Responders obtain sketches through :meth:`sketch`; only white-box
    responders call :meth:`white_box`.
    """

    __slots__ = ("_union", "_mask", "_cache")

    def __init__(self, union: np.ndarray, mask: np.ndarray | None = None):
        self._union = union
        self._mask = mask
        self._cache: dict = {}

    def sketch(self, smap: ComposableMap) -> Sketch:
        key = id(smap)
        s = self._cache.get(key)
        if s is None:
            s = self._cache[key] = smap.sketch_mask(self._union)
        return s

    def kth_position(self, smap: BottomKSketchMap) -> int:
        """Priority position of the k-th key of the sketch (-1 if fewer than k keys)."""
        return kernels.kth_present(self._union, smap.order, smap.k)

    def white_box(self) -> tuple[np.ndarray, np.ndarray | None]:
        return self._union, self._mask


# ---------------------------------------------------------------------------
# standard estimators


def bottomk_estimate_from_position(pos: int, k: int, n: int, present: int | None = None) -> float:
    if pos < 0:
        return float(present if present is not None else 0)
    return (k - 1) * n / (pos + 1)


def occupancy_mle(hits: Sequence[int], sizes: Sequence[int], theta: float = 1.0,
                  grid: np.ndarray | None = None) -> float:
    """Rate maximizing the likelihood of per-row hit indicators.

    A row with ``s`` member keys is hit with probability ``theta (1 - (1-q)^s)``.
    """
    hits = np.asarray(hits, dtype=bool)
    sizes = np.asarray(sizes, dtype=float)
    if hits.size == 0:
        return 0.0
    if not hits.any():
        return 0.0
    grid = np.linspace(1e-4, 1 - 1e-4, 2000) if grid is None else grid
    p = theta * (1 - (1 - grid[:, None]) ** sizes[None, :])
    p = np.clip(p, 1e-300, 1 - 1e-15)
    ll = np.where(hits[None, :], np.log(p), np.log1p(-p)).sum(axis=1)
    return float(grid[int(np.argmax(ll))])


def standard_estimate(sketch: Sketch, smap: ComposableMap) -> float:
    """The family's usual cardinality estimate from a sketch alone."""
    fam, pay, n = sketch.family, sketch.payload, smap.n
    if fam == "sample":
        k = smap.rank_bound
        return len(pay) * n / k if k else 0.0
    if fam == "bottomk":
        if len(pay) < smap.k:
            return float(len(pay))
        return bottomk_estimate_from_position(int(smap.rank[pay[-1]]), smap.k, n)
    if fam == "kpartition":
        # rate MLE: a nonempty bucket shows rank r (r misses then a hit), an empty one s misses
        hits = sum(1 for x in pay if x >= 0)
        if hits == 0:
            return 0.0
        trials = sum(smap.bucket_rank[x] + 1 for x in pay if x >= 0)
        trials += sum(int(smap.bucket_size[b]) for b, x in enumerate(pay) if x < 0)
        return hits / trials * n
    if fam == "boolean":
        sizes = smap.matrix.sum(axis=1)
        return occupancy_mle(pay, sizes) * n
    raise ValueError(f"no standard estimator for family {fam!r}")


def standard_threshold_respond(sketch: Sketch, smap: ComposableMap, A: int, B: int) -> int:
    """1 iff the standard estimate reaches the geometric midpoint of the thresholds."""
    return int(standard_estimate(sketch, smap) >= math.sqrt(A * B))


class Responder(ABC):
    @abstractmethod
    def respond(self, view, t: int = 0) -> int:
        ...

    def reset(self) -> None:
        pass


class ConstantResponder(Responder):
    def __init__(self, z: int):
        self.z = int(z)

    def respond(self, view, t=0):
        return self.z


class StandardResponder(Responder):
    """Threshold the family's standard estimate of one sketching map."""

    def __init__(self, smap: ComposableMap, thresholds: ThresholdPair):
        self.smap = smap
        self.thresholds = thresholds
        self.cut = math.sqrt(thresholds.A * thresholds.B)
        self._bottomk = isinstance(smap, BottomKSketchMap)

    def respond(self, view, t=0):
        if self._bottomk and isinstance(view, QueryHandle):
            pos = view.kth_position(self.smap)
            if pos >= 0:
                return int((self.smap.k - 1) * self.smap.n / (pos + 1) >= self.cut)
        sk = view.sketch(self.smap) if isinstance(view, QueryHandle) else view
        return int(standard_estimate(sk, self.smap) >= self.cut)

    def respond_batch(self, union2d: np.ndarray) -> np.ndarray:
        """Vectorized responses for a stack of query masks (bottom-k only)."""
        if not self._bottomk:
            return np.array([self.respond(QueryHandle(u)) for u in union2d], dtype=np.int8)
        pos = kernels.kth_present_batch(union2d, self.smap.order, self.smap.k)
        est = np.where(pos >= 0, (self.smap.k - 1) * self.smap.n / (pos + 1.0), union2d.sum(axis=1))
        return (est >= self.cut).astype(np.int8)


class RobustWrapper(Responder):
    """``c`` independent copies; each query is answered from exactly one copy.

    ``fresh``: copies are used in order and never reused, then
    :class:`ResponderExhausted` is raised.  ``random``: a uniformly random copy
    per query.
    """

    def __init__(self, maps: Sequence[ComposableMap], thresholds: ThresholdPair,
                 strategy: str = "random", rng=0, block: int = 4096):
        if strategy not in ("fresh", "random"):
            raise ValueError(f"unknown strategy {strategy!r}")
        self.maps = list(maps)
        self.copies = [StandardResponder(m, thresholds) for m in self.maps]
        self.thresholds = thresholds
        self.strategy = strategy
        self._gen = as_generator(rng)
        self._block = block
        self._picks = np.empty(0, dtype=np.int64)
        self._cursor = 0
        self.used = 0
        self.last_copy = -1

    @property
    def c(self) -> int:
        return len(self.maps)

    def choose(self) -> int:
        if self.strategy == "fresh":
            if self.used >= self.c:
                raise ResponderExhausted(f"all {self.c} copies used")
            return self.used
        if self._cursor >= self._picks.size:
            self._picks = self._gen.integers(0, self.c, size=self._block)
            self._cursor = 0
        i = int(self._picks[self._cursor])
        self._cursor += 1
        return i

    def respond(self, view, t=0):
        i = self.choose()
        self.used += 1
        self.last_copy = i
        return self.copies[i].respond(view, t)

    def respond_batch(self, union2d: np.ndarray) -> np.ndarray:
        """Answers for a stack of queries, consuming copy choices exactly as ``respond`` would."""
        picks = np.array([self.choose() if self.strategy == "random" else self._take_fresh()
                          for _ in range(len(union2d))], dtype=np.int64)
        if self.strategy == "random":
            self.used += len(union2d)
        out = np.empty(len(union2d), dtype=np.int8)
        for i in np.unique(picks):
            rows = picks == i
            out[rows] = self.copies[i].respond_batch(union2d[rows])
        return out

    def _take_fresh(self) -> int:
        i = self.choose()
        self.used += 1
        return i

    def reset(self):
        self.used = 0


def robust_respond(wrapper: RobustWrapper, handle: QueryHandle, A: int | None = None,
                   B: int | None = None, rng=None) -> int:
    """One answer from ``wrapper``; ``A``/``B`` override the wrapper's thresholds when given."""
    if A is not None and B is not None and (A, B) != (wrapper.thresholds.A, wrapper.thresholds.B):
        i = wrapper.choose()
        wrapper.used += 1
        return standard_threshold_respond(handle.sketch(wrapper.maps[i]), wrapper.maps[i], A, B)
    return wrapper.respond(handle)


# ---------------------------------------------------------------------------
# Bayes responders


def _normal_tails(mean, var, A, B):
    sd = np.sqrt(np.maximum(var, 1e-12))
    lo = special.ndtr((A + 0.5 - mean) / sd)
    hi = special.ndtr((mean - (B - 0.5)) / sd)
    return lo, hi


class RatePosterior:
    """Posterior over the rate on a fixed discretization of the rate distribution."""

    def __init__(self, dist: RateDistribution, bins: int = POSTERIOR_BINS):
        self.q, self.prior = dist.discretized(bins)
        self.log_prior = np.log(self.prior)

    def normalize(self, loglik: np.ndarray) -> np.ndarray:
        lp = self.log_prior + loglik
        lp -= lp.max()
        w = np.exp(lp)
        return w / w.sum()


def decide(post: np.ndarray, mean: np.ndarray, var: np.ndarray, A: int, B: int) -> int:
    lo, hi = _normal_tails(mean, var, A, B)
    return int(float(post @ hi) > float(post @ lo))


def omniscient_bayes_respond(w: int, pool_free: int, mask_size: int, dist: RateDistribution,
                             A: int, B: int, n: int, posterior: RatePosterior | None = None) -> int:
    """Answer from ``|W| = |U & (L \\ M)|`` with ``|L \\ M|``, ``|M|`` and the rate prior known.

    The posterior over ``q`` uses the binomial likelihood of ``|W|``; the
    query size is then ``|M| + |W| + Bin(n - |M| - |L \\ M|, q)``.
    """
    post_obj = posterior or RatePosterior(dist)
    q = post_obj.q
    ll = stats.binom.logpmf(w, pool_free, q) if pool_free else np.zeros_like(q)
    post = post_obj.normalize(ll)
    rest = n - mask_size - pool_free
    mean = mask_size + w + rest * q
    var = rest * q * (1 - q)
    return decide(post, mean, var, A, B)


class OmniscientBayesResponder(Responder):
    """White-box responder given the true pool; answers from ``|U & (L \\ M)|``."""

    def __init__(self, dist: RateDistribution, thresholds: ThresholdPair, pool: KeySet):
        self.dist = dist
        self.thresholds = thresholds
        self.n = thresholds.n
        self.pool = pool.mask(self.n)
        self.posterior = RatePosterior(dist)
        self._cache: dict = {}

    def respond(self, view, t=0):
        union, mask = view.white_box()
        free = self.pool & ~mask if mask is not None else self.pool
        w = int(np.count_nonzero(union & free))
        key = (w, int(free.sum()), int(mask.sum()) if mask is not None else 0)
        z = self._cache.get(key)
        if z is None:
            z = self._cache[key] = omniscient_bayes_respond(
                key[0], key[1], key[2], self.dist, self.thresholds.A, self.thresholds.B, self.n,
                self.posterior)
        return z


class NaturalResponder(Responder):
    """Feeds the base responder only ``extractor(view)``."""

    def __init__(self, base: Responder, extractor: Callable):
        self.base = base
        self.extractor = extractor

    def respond(self, view, t=0):
        return self.base.respond(self.extractor(view), t)

    def reset(self):
        self.base.reset()


def wrap_natural(base: Responder, extractor: Callable) -> NaturalResponder:
    return NaturalResponder(base, extractor)


@dataclass(frozen=True)
class OccupancyStatistic:
    """Per informative row: its support size and observation, plus ``|M|``.

    ``kind`` is ``"hit"`` (observation is 0/1, row nonzero) or ``"count"``
    (observation is the number of unit entries in a clean row).
    """

    kind: str
    mask_size: int
    sizes: tuple
    obs: tuple


class OccupancyBayesResponder(Responder):
    """Bayes responder on a row-occupancy statistic of a sparse linear sketch.

    ``hit`` statistics: a row whose support meets ``U`` is nonzero with
    probability ``theta`` (``(p-1)/p`` over F_p).  ``count`` statistics: a
    clean row of support ``s`` holds ``Bin(s, (q - q0)/(1 - q0))`` unit entries.
    The answer thresholds the query size ``|M| + Bin(n - |M|, q)``, thinned by
    ``theta`` when ``size_theta`` is set (support size over F_p).
    """

    def __init__(self, dist: RateDistribution, thresholds: ThresholdPair, theta: float = 1.0,
                 q0: float = 0.0, size_theta: float = 1.0):
        self.dist = dist
        self.thresholds = thresholds
        self.n = thresholds.n
        self.theta = theta
        self.q0 = q0
        self.size_theta = size_theta
        self.posterior = RatePosterior(dist)
        self._cache: dict = {}
        self._tables: dict = {}

    def _table(self, kind: str, s: int) -> np.ndarray:
        """Log-likelihood rows over the rate grid for one row size, indexed by observation."""
        tab = self._tables.get((kind, s))
        if tab is None:
            q = self.posterior.q
            if kind == "hit":
                p = self.theta * (1 - (1 - q) ** s)
                tab = np.stack([np.log1p(-p), np.log(p)])
            elif kind == "count":
                rho = np.clip((q - self.q0) / (1 - self.q0), 1e-12, 1 - 1e-12)
                tab = stats.binom.logpmf(np.arange(s + 1)[:, None], s, rho[None, :])
            else:
                raise ValueError(f"unknown statistic kind {kind!r}")
            self._tables[(kind, s)] = tab
        return tab

    def loglik(self, stat: OccupancyStatistic) -> np.ndarray:
        ll = np.zeros_like(self.posterior.q)
        for s, c in zip(stat.sizes, stat.obs):
            ll += self._table(stat.kind, s)[int(c)]
        return ll

    def respond(self, stat: OccupancyStatistic, t=0):
        z = self._cache.get(stat)
        if z is None:
            q = self.posterior.q
            post = self.posterior.normalize(self.loglik(stat))
            m = stat.mask_size
            th = self.size_theta
            size_mean = m + (self.n - m) * q
            mean = th * size_mean
            var = th * th * (self.n - m) * q * (1 - q) + th * (1 - th) * size_mean
            z = self._cache[stat] = decide(post, mean, var, self.thresholds.A, self.thresholds.B)
        return z
