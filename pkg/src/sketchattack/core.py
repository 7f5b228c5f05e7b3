"""Ground sets, key sets, and the attack's rate/query distributions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .rng import RngHandle, as_generator

DEFAULT_SEPARATION = 0.02
CDF_KNOTS = 1 << 12


class KeySet:
    """Immutable sorted set of key indices drawn from a ground set of size ``n``."""

    __slots__ = ("_members", "n", "_hash")

    def __init__(self, members: Iterable[int] | np.ndarray = (), n: int | None = None):
        arr = np.unique(np.asarray(list(members) if not isinstance(members, np.ndarray) else members,
                                   dtype=np.int64))
        if arr.size and arr[0] < 0:
            raise ValueError(f"negative key {int(arr[0])}")
        if n is not None and arr.size and arr[-1] >= n:
            raise ValueError(f"key {int(arr[-1])} out of range for ground set of size {n}")
        arr.setflags(write=False)
        self._members = arr
        self.n = n
        self._hash = None

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "KeySet":
        ks = cls.__new__(cls)
        arr = np.flatnonzero(mask).astype(np.int64)
        arr.setflags(write=False)
        ks._members = arr
        ks.n = int(mask.shape[0])
        ks._hash = None
        return ks

    @property
    def members(self) -> np.ndarray:
        return self._members

    def mask(self, n: int | None = None) -> np.ndarray:
        n = self.n if n is None else n
        if n is None:
            raise ValueError("ground-set size unknown; pass n")
        if self._members.size and self._members[-1] >= n:
            raise ValueError(f"key {int(self._members[-1])} out of range for n={n}")
        out = np.zeros(n, dtype=bool)
        out[self._members] = True
        return out

    def __len__(self) -> int:
        return int(self._members.size)

    def __iter__(self):
        return (int(x) for x in self._members)

    def __contains__(self, key) -> bool:
        i = np.searchsorted(self._members, key)
        return bool(i < self._members.size and self._members[i] == key)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KeySet):
            return NotImplemented
        return np.array_equal(self._members, other._members)

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self._members.tobytes())
        return self._hash

    def _n(self, other: "KeySet") -> int | None:
        return self.n if self.n is not None else other.n

    def __or__(self, other: "KeySet") -> "KeySet":
        return KeySet(np.union1d(self._members, other._members), self._n(other))

    def __and__(self, other: "KeySet") -> "KeySet":
        return KeySet(np.intersect1d(self._members, other._members), self._n(other))

    def __sub__(self, other: "KeySet") -> "KeySet":
        return KeySet(np.setdiff1d(self._members, other._members), self._n(other))

    def issubset(self, other: "KeySet") -> bool:
        return bool(np.isin(self._members, other._members).all())

    def tolist(self) -> list[int]:
        return [int(x) for x in self._members]

    def __repr__(self) -> str:
        body = self.tolist() if len(self) <= 12 else f"{self.tolist()[:12]}... ({len(self)} keys)"
        return f"KeySet({body})"


@dataclass(frozen=True)
class GroundSet:
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("ground set needs n >= 2")

    def all(self) -> KeySet:
        return KeySet(np.arange(self.n), self.n)

    def empty(self) -> KeySet:
        return KeySet((), self.n)

    def keyset(self, keys: Iterable[int]) -> KeySet:
        return KeySet(keys, self.n)


@dataclass(frozen=True)
class ThresholdPair:
    A: int
    B: int
    n: int

    def __post_init__(self):
        if not 0 < self.A < self.B < self.n:
            raise ValueError(f"need 0 < A < B < n, got A={self.A} B={self.B} n={self.n}")

    @property
    def a(self) -> float:
        return self.A / self.n

    @property
    def b(self) -> float:
        return self.B / self.n

    def is_error(self, size: int, z: int) -> bool:
        """Soft threshold accounting: answers inside the open gap (A, B) are always correct."""
        return (size <= self.A and z == 1) or (size >= self.B and z == 0)


@dataclass
class BreakpointCheck:
    ok: bool
    failures: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate_rate_breakpoints(thresholds: ThresholdPair, pool_bound: int, n: int,
                              qmin: float, q1: float, q2: float, qmax: float,
                              separation: float = DEFAULT_SEPARATION) -> BreakpointCheck:
    """Check ``qmin < q1 < (A - |L|)/n`` and ``B/n < q2 < qmax < 1`` with margin."""
    for name, v in (("qmin", qmin), ("q1", q1), ("q2", q2), ("qmax", qmax)):
        if not 0.0 < v < 1.0:
            return BreakpointCheck(False, [f"{name}={v} not in (0,1)"])
    upper1 = (thresholds.A - pool_bound) / n
    chain = [
        ("0 < qmin", 0.0, qmin),
        ("qmin < q1", qmin, q1),
        ("q1 < (A-|L|)/n", q1, upper1),
        ("B/n < q2", thresholds.B / n, q2),
        ("q2 < qmax", q2, qmax),
        ("qmax < 1", qmax, 1.0),
    ]
    failures = [f"{label}: {lo:.6g} vs {hi:.6g} (need gap >= {separation})"
                for label, lo, hi in chain if hi - lo < separation - 1e-12]
    return BreakpointCheck(not failures, failures)


class RateDistribution:
    """Density proportional to ``f(q) / (q (1 - q))`` with trapezoidal ``f``.

    ``f`` rises linearly on ``[qmin, q1]``, is 1 on ``[q1, q2]`` and falls
    linearly on ``[q2, qmax]``.  The normalization and the CDF are evaluated in
    closed form: on a piece where ``f(q) = a q + b`` the antiderivative of the
    unnormalized density is ``b ln q - (a + b) ln(1 - q)``.
    """

    def __init__(self, qmin: float, q1: float, q2: float, qmax: float,
                 separation: float = DEFAULT_SEPARATION, knots: int = CDF_KNOTS):
        if not 0.0 < qmin < q1 < q2 < qmax < 1.0:
            raise ValueError(f"need 0 < qmin < q1 < q2 < qmax < 1, got {(qmin, q1, q2, qmax)}")
        gaps = (q1 - qmin, q2 - q1, qmax - q2)
        if min(gaps) < separation - 1e-12:
            raise ValueError(f"breakpoint gaps {gaps} below minimum separation {separation}")
        self.qmin, self.q1, self.q2, self.qmax = float(qmin), float(q1), float(q2), float(qmax)
        self.separation = separation
        self._pieces = (
            (self.qmin, self.q1, 1.0 / (self.q1 - self.qmin), -self.qmin / (self.q1 - self.qmin)),
            (self.q1, self.q2, 0.0, 1.0),
            (self.q2, self.qmax, -1.0 / (self.qmax - self.q2), self.qmax / (self.qmax - self.q2)),
        )
        self._mass = [self._piece_integral(lo, hi, a, b) for lo, hi, a, b in self._pieces]
        self.total = sum(self._mass)
        self.c_nu = 1.0 / self.total
        grid = np.union1d(np.linspace(self.qmin, self.qmax, knots + 1), [self.q1, self.q2])
        self.knots = grid
        self.cdf_table = self.cdf(grid)
        self.cdf_table[0], self.cdf_table[-1] = 0.0, 1.0

    @classmethod
    def epsilon_preset(cls, thresholds: ThresholdPair, eps: float, **kw) -> "RateDistribution":
        """Breakpoints for the small-gap regime: q1 = a - 2 eps, q2 = b + 2 eps, width sqrt(eps)."""
        q1 = thresholds.a - 2 * eps
        q2 = thresholds.b + 2 * eps
        w = math.sqrt(eps)
        return cls(q1 - w, q1, q2, q2 + w, **kw)

    @property
    def breakpoints(self) -> tuple[float, float, float, float]:
        return (self.qmin, self.q1, self.q2, self.qmax)

    @staticmethod
    def _antideriv(q, a, b):
        return b * np.log(q) - (a + b) * np.log1p(-q)

    def _piece_integral(self, lo, hi, a, b) -> float:
        return float(self._antideriv(hi, a, b) - self._antideriv(lo, a, b))

    def f(self, q):
        q = np.asarray(q, dtype=float)
        out = np.zeros_like(q)
        rise = (q > self.qmin) & (q < self.q1)
        out[rise] = (q[rise] - self.qmin) / (self.q1 - self.qmin)
        out[(q >= self.q1) & (q <= self.q2)] = 1.0
        fall = (q > self.q2) & (q < self.qmax)
        out[fall] = (self.qmax - q[fall]) / (self.qmax - self.q2)
        return out if out.ndim else float(out)

    def density(self, q):
        q = np.asarray(q, dtype=float)
        inside = (q > 0) & (q < 1)
        out = np.zeros_like(q)
        qi = q[inside]
        out[inside] = self.c_nu * np.asarray(self.f(qi)) / (qi * (1 - qi))
        return out if out.ndim else float(out)

    def cdf(self, q):
        scalar = np.ndim(q) == 0
        q = np.atleast_1d(np.clip(np.asarray(q, dtype=float), self.qmin, self.qmax))
        acc = np.zeros_like(q)
        for (lo, hi, a, b), mass in zip(self._pieces, self._mass):
            full = q >= hi
            part = (q > lo) & (q < hi)
            acc = acc + np.where(full, mass, 0.0)
            acc[part] += self._antideriv(q[part], a, b) - self._antideriv(lo, a, b)
        out = acc / self.total
        return float(out[0]) if scalar else out

    def ppf(self, u):
        """Inverse CDF by linear interpolation on the tabulated CDF."""
        return np.interp(u, self.cdf_table, self.knots)

    def mean(self) -> float:
        mid = 0.5 * (self.knots[1:] + self.knots[:-1])
        return float(np.sum(mid * np.diff(self.cdf_table)))

    def discretized(self, bins: int = 1 << 10) -> tuple[np.ndarray, np.ndarray]:
        """Bin midpoints and probability masses for posterior computations."""
        edges = np.linspace(self.qmin, self.qmax, bins + 1)
        mass = np.diff(self.cdf(edges))
        return 0.5 * (edges[1:] + edges[:-1]), mass / mass.sum()

    def to_dict(self) -> dict:
        return {"qmin": self.qmin, "q1": self.q1, "q2": self.q2, "qmax": self.qmax,
                "separation": self.separation}

    def __repr__(self) -> str:
        return f"RateDistribution{self.breakpoints}"


def sample_rate(dist: RateDistribution, rng: RngHandle | np.random.Generator) -> float:
    return float(dist.ppf(as_generator(rng).random()))


def sample_rates(dist: RateDistribution, size: int, rng: RngHandle | np.random.Generator) -> np.ndarray:
    return dist.ppf(as_generator(rng).random(size))


def sample_bernoulli_subset(n: int, q: float, rng: RngHandle | np.random.Generator) -> KeySet:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q={q} not a probability")
    return KeySet.from_mask(as_generator(rng).random(n) < q)


def sample_query(dist: RateDistribution, n: int,
                 rng: RngHandle | np.random.Generator) -> tuple[float, KeySet]:
    gen = as_generator(rng)
    q = sample_rate(dist, gen)
    return q, sample_bernoulli_subset(n, q, gen)


def rate_threshold(q: float) -> int:
    """Integer cut ``t`` with ``P[w < t] = t / 2**32`` within ``2**-33`` of ``q`` for a uniform 32-bit ``w``."""
    return min(int(round(float(q) * 4294967296.0)), 1 << 32)


def bernoulli_words(gen: np.random.Generator, rows: int, n: int) -> np.ndarray:
    """``(rows, n)`` uniform 32-bit words taken straight from the bit generator."""
    raw = gen.bit_generator.random_raw((rows, (n + 1) // 2))
    return raw.view(np.uint32)[:, :n]


def bernoulli_block(gen: np.random.Generator, qs: np.ndarray, n: int) -> np.ndarray:
    """Boolean ``(len(qs), n)`` block whose row ``j`` includes each key w.p. ``qs[j]``."""
    words = bernoulli_words(gen, len(qs), n)
    cuts = np.array([rate_threshold(q) for q in qs], dtype=np.uint64)
    return words < cuts[:, None]
