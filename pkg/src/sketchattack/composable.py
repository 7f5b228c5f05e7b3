"""Composable sketching maps, core peeling and determining pools.

A composable map sends a key subset ``U`` to a sketch ``S(U)`` such that
``S(U | V) == compose(S(U), S(V))``.  Sketches are plain hashable values
(:class:`Sketch`) so that equality is exact and structural.
"""
from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .core import KeySet
from .rng import RngHandle, as_generator


@dataclass(frozen=True)
class Sketch:
    family: str
    payload: tuple

    def to_bytes(self) -> bytes:
        return (self.family + ":" + json.dumps(self.payload, separators=(",", ":"))).encode()


def _as_mask(U, n: int) -> np.ndarray:
    if isinstance(U, KeySet):
        return U.mask(n)
    if isinstance(U, np.ndarray) and U.dtype == bool:
        if U.shape != (n,):
            raise ValueError(f"mask of shape {U.shape} for ground set of size {n}")
        return U
    keys = np.asarray(list(U), dtype=np.int64)
    if keys.size and (keys.min() < 0 or keys.max() >= n):
        raise ValueError(f"key out of range for ground set of size {n}")
    out = np.zeros(n, dtype=bool)
    out[keys] = True
    return out


class ComposableMap(ABC):
    """Contract shared by all composable maps."""

    family: str = "abstract"
    monotone: bool = True

    def __init__(self, n: int, rank_bound: int):
        self.n = int(n)
        self.rank_bound = int(rank_bound)

    def sketch(self, U) -> Sketch:
        return self.sketch_mask(_as_mask(U, self.n))

    @abstractmethod
    def sketch_mask(self, mask: np.ndarray) -> Sketch:
        ...

    @abstractmethod
    def _compose(self, p1: tuple, p2: tuple) -> tuple:
        ...

    def compose(self, s1: Sketch, s2: Sketch) -> Sketch:
        if s1.family != self.family or s2.family != self.family:
            raise ValueError(f"cannot compose {s1.family} with {s2.family} under {self.family}")
        return Sketch(self.family, self._compose(s1.payload, s2.payload))

    def empty(self) -> Sketch:
        return self.sketch_mask(np.zeros(self.n, dtype=bool))

    def in_core(self, U) -> KeySet:
        """A minimal subset of ``U`` with the same sketch.

        Generic version: drop keys in ascending order whenever the sketch is
        unchanged.  One pass is minimal because preimages are convex.
        """
        mask = _as_mask(U, self.n).copy()
        target = self.sketch_mask(mask)
        for x in np.flatnonzero(mask):
            mask[x] = False
            if self.sketch_mask(mask) != target:
                mask[x] = True
        return KeySet.from_mask(mask)

    def params(self) -> dict:
        return {"family": self.family, "n": self.n, "rank_bound": self.rank_bound}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, k={self.rank_bound})"


class SampleSketchMap(ComposableMap):
    """``S(U) = U & R`` for a fixed sample ``R``."""

    family = "sample"

    def __init__(self, n: int, sample: Iterable[int]):
        self.sample = KeySet(sample, n)
        super().__init__(n, len(self.sample))
        self._sample_mask = self.sample.mask()

    @classmethod
    def random(cls, n: int, k: int, rng) -> "SampleSketchMap":
        return cls(n, as_generator(rng).choice(n, size=k, replace=False))

    def sketch_mask(self, mask):
        return Sketch(self.family, tuple(int(x) for x in np.flatnonzero(mask & self._sample_mask)))

    def _compose(self, p1, p2):
        return tuple(sorted(set(p1) | set(p2)))

    def in_core(self, U):
        return KeySet(self.sketch(U).payload, self.n)

    def params(self):
        return {**super().params(), "sample": self.sample.tolist()}


class BottomKSketchMap(ComposableMap):
    """Keeps the ``k`` highest-priority keys; ``order[0]`` is the highest priority."""

    family = "bottomk"

    def __init__(self, n: int, k: int, order: Sequence[int] | None = None):
        super().__init__(n, k)
        self.k = int(k)
        order = np.arange(n) if order is None else np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(n)):
            raise ValueError("order must be a permutation of range(n)")
        self.order = np.ascontiguousarray(order, dtype=np.int64)
        self.rank = np.empty(n, dtype=np.int64)
        self.rank[self.order] = np.arange(n)

    @classmethod
    def random(cls, n: int, k: int, rng) -> "BottomKSketchMap":
        return cls(n, k, as_generator(rng).permutation(n))

    def sketch_mask(self, mask):
        keys = kernels.first_present(mask, self.order, self.k)
        return Sketch(self.family, tuple(int(x) for x in keys))

    def _compose(self, p1, p2):
        merged = sorted(set(p1) | set(p2), key=lambda x: self.rank[x])
        return tuple(merged[: self.k])

    def in_core(self, U):
        return KeySet(self.sketch(U).payload, self.n)

    def params(self):
        return {**super().params(), "k": self.k, "order": self.order.tolist()}


class KPartitionSketchMap(ComposableMap):
    """Keys are split into ``k`` buckets; per bucket the highest-priority member is kept."""

    family = "kpartition"

    def __init__(self, n: int, k: int, bucket_of: Sequence[int], order: Sequence[int] | None = None):
        super().__init__(n, k)
        self.k = int(k)
        self.bucket_of = np.ascontiguousarray(bucket_of, dtype=np.int64)
        if self.bucket_of.shape != (n,) or self.bucket_of.min() < 0 or self.bucket_of.max() >= k:
            raise ValueError("bucket_of must assign every key a bucket in [0, k)")
        order = np.arange(n) if order is None else np.asarray(order, dtype=np.int64)
        self.order = np.ascontiguousarray(order, dtype=np.int64)
        self.rank = np.empty(n, dtype=np.int64)
        self.rank[self.order] = np.arange(n)
        # rank of each key among the members of its own bucket
        self.bucket_rank = np.empty(n, dtype=np.int64)
        self.bucket_size = np.bincount(self.bucket_of, minlength=k)
        seen = np.zeros(k, dtype=np.int64)
        for key in self.order:
            b = self.bucket_of[key]
            self.bucket_rank[key] = seen[b]
            seen[b] += 1

    @classmethod
    def random(cls, n: int, k: int, rng) -> "KPartitionSketchMap":
        gen = as_generator(rng)
        return cls(n, k, gen.integers(0, k, size=n), gen.permutation(n))

    def sketch_mask(self, mask):
        reps = kernels.bucket_minima(mask, self.order, self.bucket_of, self.k)
        return Sketch(self.family, tuple(int(x) for x in reps))

    def _compose(self, p1, p2):
        out = []
        for a, b in zip(p1, p2):
            if a < 0:
                out.append(b)
            elif b < 0:
                out.append(a)
            else:
                out.append(a if self.rank[a] < self.rank[b] else b)
        return tuple(out)

    def in_core(self, U):
        return KeySet([x for x in self.sketch(U).payload if x >= 0], self.n)

    def params(self):
        return {**super().params(), "k": self.k, "bucket_of": self.bucket_of.tolist(),
                "order": self.order.tolist()}


class BooleanLinearSketchMap(ComposableMap):
    """``S(U)`` is the OR of the 0/1 columns indexed by ``U``.

    Cores are minimal row covers and may differ in size, so the map is not
    flagged monotone.
    """

    family = "boolean"
    monotone = False

    def __init__(self, matrix):
        m = np.asarray(matrix).astype(bool)
        super().__init__(m.shape[1], m.shape[0])
        self.matrix = m
        self._rows_of = [np.flatnonzero(m[:, j]) for j in range(m.shape[1])]

    @classmethod
    def random(cls, n: int, k: int, rng, density: float | Sequence[float] = 0.5) -> "BooleanLinearSketchMap":
        gen = as_generator(rng)
        dens = np.broadcast_to(np.asarray(density, dtype=float), (k,))
        return cls(gen.random((k, n)) < dens[:, None])

    def sketch_mask(self, mask):
        hit = self.matrix[:, mask].any(axis=1)
        return Sketch(self.family, tuple(int(x) for x in hit))

    def _compose(self, p1, p2):
        return tuple(a | b for a, b in zip(p1, p2))

    def in_core(self, U):
        mask = _as_mask(U, self.n)
        keep = mask.copy()
        cover = self.matrix[:, mask].sum(axis=1)
        for x in np.flatnonzero(mask):
            rows = self._rows_of[x]
            if np.all(cover[rows] >= 2):
                keep[x] = False
                cover[rows] -= 1
        return KeySet.from_mask(keep)

    def params(self):
        return {**super().params(), "matrix": self.matrix.astype(int).tolist()}


class BlockChainSketchMap(ComposableMap):
    """Long-and-thin fixture: disjoint blocks plus a bottom-k' tail.

    The block part records the index of the first block fully contained in
    ``U`` together with ``U``'s intersection with every earlier block; its core
    peeling is one block per layer.  Keys past the blocks carry a bottom-k'
    sketch in identity priority order.
    """

    family = "blockchain"
    monotone = False

    def __init__(self, n: int, block_size: int, n_blocks: int, k_tail: int):
        if block_size * n_blocks > n:
            raise ValueError("blocks do not fit in the ground set")
        self.block_size, self.n_blocks, self.k_tail = int(block_size), int(n_blocks), int(k_tail)
        super().__init__(n, block_size * n_blocks + k_tail)
        self._block_end = block_size * n_blocks
        self._tail_order = np.arange(self._block_end, n, dtype=np.int64)

    @classmethod
    def for_rank(cls, n: int, k: int, delta: float) -> "BlockChainSketchMap":
        """Blocks of size ceil(log2(10 k / delta)) using half the rank budget."""
        w = math.ceil(math.log2(10 * k / delta))
        return cls(n, w, max(1, (k // 2) // w), k // 2)

    def blocks(self) -> list[KeySet]:
        w = self.block_size
        return [KeySet(range(i * w, (i + 1) * w), self.n) for i in range(self.n_blocks)]

    def _block_payload(self, mask):
        w = self.block_size
        parts = []
        first_full = self.n_blocks
        for i in range(self.n_blocks):
            blk = mask[i * w:(i + 1) * w]
            if blk.all():
                first_full = i
                break
            parts.append(tuple(int(i * w + j) for j in np.flatnonzero(blk)))
        return first_full, tuple(parts)

    def sketch_mask(self, mask):
        first_full, parts = self._block_payload(mask)
        tail = kernels.first_present(mask[self._block_end:], np.arange(self.n - self._block_end,
                                                                       dtype=np.int64), self.k_tail)
        return Sketch(self.family, (first_full, parts, tuple(int(x + self._block_end) for x in tail)))

    def _compose(self, p1, p2):
        f1, parts1, tail1 = p1
        f2, parts2, tail2 = p2
        bound = min(f1, f2)
        parts = []
        first_full = bound
        w = self.block_size
        for i in range(bound):
            merged = tuple(sorted(set(parts1[i]) | set(parts2[i])))
            if len(merged) == w:
                first_full = i
                break
            parts.append(merged)
        tail = tuple(sorted(set(tail1) | set(tail2))[: self.k_tail])
        return (first_full, tuple(parts), tail)

    def in_core(self, U):
        first_full, parts, tail = self.sketch(U).payload
        keys = [x for part in parts for x in part] + list(tail)
        if first_full < self.n_blocks:
            w = self.block_size
            keys += list(range(first_full * w, (first_full + 1) * w))
        return KeySet(keys, self.n)

    def params(self):
        return {**super().params(), "block_size": self.block_size, "n_blocks": self.n_blocks,
                "k_tail": self.k_tail}


class BrokenComposeMap(ComposableMap):
    """Mutation fixture: wraps a map but ``compose`` returns its first argument."""

    def __init__(self, base: ComposableMap):
        super().__init__(base.n, base.rank_bound)
        self.base = base
        self.family = base.family
        self.monotone = base.monotone

    def sketch_mask(self, mask):
        return self.base.sketch_mask(mask)

    def _compose(self, p1, p2):
        return p1

    def in_core(self, U):
        return self.base.in_core(U)


# ---------------------------------------------------------------------------
# peeling and pools


@dataclass
class CorePeeling:
    layers: list[KeySet]
    sketches: list[Sketch]
    remainder: KeySet

    def __len__(self) -> int:
        return len(self.layers)

    def prefix(self, ell: int) -> KeySet:
        ell = min(ell, len(self.layers))
        if ell == 0:
            return KeySet((), self.remainder.n)
        return KeySet(np.concatenate([ly.members for ly in self.layers[:ell]]), self.remainder.n)


def peel(smap: ComposableMap, max_layers: int | None = None) -> CorePeeling:
    """Iteratively extract in-cores of the not-yet-peeled keys.

    Stops when the remaining keys sketch like the empty set (they are
    transparent) or the ground set is exhausted.
    """
    remaining = np.ones(smap.n, dtype=bool)
    empty = smap.empty()
    layers, sketches = [], []
    while remaining.any() and (max_layers is None or len(layers) < max_layers):
        s = smap.sketch_mask(remaining)
        if s == empty:
            break
        core = smap.in_core(remaining)
        if len(core) == 0:
            break
        layers.append(core)
        sketches.append(smap.sketch(core))
        remaining[core.members] = False
    return CorePeeling(layers, sketches, KeySet.from_mask(remaining))


def pool_layers(k: int, qmin: float, delta: float, monotone: bool) -> int:
    """Peeling prefix length: ln(k/delta)/qmin (monotone) or (k + 4 sqrt(k ln(1/delta)))/qmin."""
    if monotone:
        return math.ceil(math.log(k / delta) / qmin)
    return math.ceil((k + 4 * math.sqrt(k * math.log(1 / delta))) / qmin)


@dataclass
class DeterminingPool:
    keys: KeySet
    delta: float
    layers_used: int | None = None
    provenance: str = "peeling"

    def __len__(self) -> int:
        return len(self.keys)


def pool_from_peeling(peeling: CorePeeling, smap: ComposableMap, qmin: float, delta: float,
                      monotone_hint: bool | None = None) -> DeterminingPool:
    if len(peeling) == 0:
        raise ValueError("empty peeling")
    monotone = smap.monotone if monotone_hint is None else monotone_hint
    ell = min(pool_layers(max(smap.rank_bound, 1), qmin, delta, monotone), len(peeling))
    return DeterminingPool(peeling.prefix(ell), delta, ell,
                           f"peeling prefix ({'monotone' if monotone else 'general'} formula)")


def pool_size_cap(k: int, qmin: float, delta: float, monotone: bool) -> int:
    return pool_layers(k, qmin, delta, monotone) * k


@dataclass
class PoolCell:
    mask_index: int
    q: float
    failures: int
    trials: int

    @property
    def rate(self) -> float:
        return self.failures / self.trials if self.trials else 0.0


@dataclass
class PoolReport:
    cells: list[PoolCell]
    delta: float | None = None

    def bound(self, trials: int) -> float:
        d = self.delta or 0.0
        return d + 3 * math.sqrt(max(d * (1 - d), 0.0) / trials)

    @property
    def max_rate(self) -> float:
        return max((c.rate for c in self.cells), default=0.0)

    def violations(self) -> list[PoolCell]:
        if self.delta is None:
            return []
        return [c for c in self.cells if c.rate > self.bound(c.trials)]

    @property
    def ok(self) -> bool:
        return not self.violations()


def verify_pool(smap: ComposableMap, L: KeySet, masks: Sequence[KeySet], q_grid: Sequence[float],
                trials: int, rng, delta: float | None = None) -> PoolReport:
    """Monte-Carlo rate of ``S((U & L) | M) != S(U | M)`` per (mask, q) cell."""
    gen = as_generator(rng)
    Lm = L.mask(smap.n)
    cells = []
    for mi, M in enumerate(masks):
        Mm = M.mask(smap.n)
        for q in q_grid:
            fails = 0
            for _ in range(trials):
                U = gen.random(smap.n) < q
                if smap.sketch_mask((U & Lm) | Mm) != smap.sketch_mask(U | Mm):
                    fails += 1
            cells.append(PoolCell(mi, float(q), fails, trials))
    return PoolReport(cells, delta)


def check_termination(smap: ComposableMap, peeling: CorePeeling, ell: int, q: float,
                      trials: int, rng) -> float:
    """Fraction of layer-wise draws for which no ``i <= ell`` has ``S(Q_<=i) == S(Q_<=i | A_i+1)``."""
    if ell > len(peeling):
        raise ValueError("ell exceeds the number of layers")
    gen = as_generator(rng)
    layer_masks = [ly.mask(smap.n) for ly in peeling.layers]
    next_sketch = [peeling.sketches[i + 1] if i + 1 < len(peeling) else smap.empty()
                   for i in range(len(peeling))]
    failures = 0
    for _ in range(trials):
        acc = np.zeros(smap.n, dtype=bool)
        done = False
        for i in range(ell):
            draw = layer_masks[i] & (gen.random(smap.n) < q)
            acc |= draw
            s = smap.sketch_mask(acc)
            if smap.compose(s, next_sketch[i]) == s:
                done = True
                break
        failures += not done
    return failures / trials


# ---------------------------------------------------------------------------
# exhaustive axiom checks


@dataclass
class CheckResult:
    name: str
    ok: bool
    witness: str = ""


@dataclass
class AxiomReport:
    family: str
    n: int
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def first_failure(self) -> CheckResult | None:
        return next((c for c in self.checks if not c.ok), None)

    def summary(self) -> str:
        lines = [f"{self.family} (n={self.n}): {'PASS' if self.passed else 'FAIL'}"]
        lines += [f"  {'ok ' if c.ok else 'BAD'} {c.name}" + (f"  -- {c.witness}" if c.witness else "")
                  for c in self.checks]
        return "\n".join(lines)


def _bits(mask: int, n: int) -> list[int]:
    return [i for i in range(n) if mask >> i & 1]


def brute_force_axioms(smap: ComposableMap, n_max: int = 12) -> AxiomReport:
    """Enumerate all 2^n subsets and check the composable-map axioms.

    Covers composability, identity, idempotence, convexity of preimages
    (midpoint property), MaxSet closure and containment, containment implying
    sketch order, the core characterization, in-core minimality, the rank
    bound, and for maps flagged monotone the core-size monotonicity surrogate.
    """
    n = smap.n
    if n > n_max:
        raise ValueError(f"n={n} exceeds n_max={n_max}")
    N = 1 << n
    report = AxiomReport(smap.family, n)
    add = report.checks.append

    bitmat = ((np.arange(N)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    sketches = [smap.sketch_mask(bitmat[m]) for m in range(N)]
    ids: dict[Sketch, int] = {}
    sid = np.array([ids.setdefault(s, len(ids)) for s in sketches], dtype=np.int64)
    distinct = list(ids)
    d = len(distinct)

    # composability: S(U | V) == S(U) + S(V), through a table over distinct sketches
    table = np.full((d, d), -1, dtype=np.int64)
    witness = ""
    for a in range(d):
        for b in range(d):
            c = smap.compose(distinct[a], distinct[b])
            table[a, b] = ids.get(c, -1)
    allm = np.arange(N)
    bad = None
    for U in range(N):
        got = table[sid[U], sid]
        want = sid[U | allm]
        mism = np.flatnonzero(got != want)
        if mism.size:
            bad = (U, int(mism[0]))
            break
    if bad:
        witness = f"U={_bits(bad[0], n)} V={_bits(bad[1], n)}"
    add(CheckResult("composability", bad is None, witness))

    empty_id = sid[0]
    ok = all(table[empty_id, a] == a for a in range(d))
    add(CheckResult("identity (S(empty) + s == s)", ok))
    idem = [a for a in range(d) if table[a, a] != a]
    add(CheckResult("idempotence", not idem, f"sketch={distinct[idem[0]]}" if idem else ""))

    maxset = np.zeros(d, dtype=np.int64)
    np.bitwise_or.at(maxset, sid, allm)
    closure = sid[maxset] == np.arange(d)
    add(CheckResult("MaxSet closure", bool(closure.all()),
                    "" if closure.all() else f"sketch={distinct[int(np.argmin(closure))]}"))
    contains = (maxset[sid] & allm) == allm
    add(CheckResult("U subset of MaxSet(S(U))", bool(contains.all())))

    mid_bad = order_bad = None
    for x in range(n):
        bit = 1 << x
        ext = allm | bit
        fresh = (allm & bit) == 0
        inside = fresh & ((maxset[sid] & bit) != 0)
        viol = np.flatnonzero(inside & (sid[ext] != sid))
        if mid_bad is None and viol.size:
            mid_bad = (int(viol[0]), x)
        sub = (maxset[sid] & ~maxset[sid[ext]]) != 0
        viol = np.flatnonzero(fresh & sub)
        if order_bad is None and viol.size:
            order_bad = (int(viol[0]), x)
    add(CheckResult("midpoint property", mid_bad is None,
                    f"U={_bits(mid_bad[0], n)} x={mid_bad[1]}" if mid_bad else ""))
    add(CheckResult("containment implies sketch order", order_bad is None,
                    f"U={_bits(order_bad[0], n)} x={order_bad[1]}" if order_bad else ""))

    is_core = np.ones(N, dtype=bool)
    for x in range(n):
        has = (allm >> x) & 1 == 1
        is_core &= ~has | (sid[allm & ~(1 << x)] != sid)
    char_bad = None
    for C in np.flatnonzero(is_core):
        sup = ((allm & C) == C) & ((allm & ~maxset[sid[C]]) == 0)
        viol = np.flatnonzero(sup & (sid != sid[C]))
        if viol.size:
            char_bad = (int(C), int(viol[0]))
            break
    add(CheckResult("core characterization", char_bad is None,
                    f"core={_bits(char_bad[0], n)} U={_bits(char_bad[1], n)}" if char_bad else ""))

    popcount = bitmat.sum(axis=1)
    true_rank = int(popcount[is_core].max()) if is_core.any() else 0
    add(CheckResult("rank bound (all cores)", true_rank <= smap.rank_bound,
                    f"rank={true_rank} > {smap.rank_bound}" if true_rank > smap.rank_bound else ""))

    core_size = np.zeros(N, dtype=np.int64)
    incore_bad = None
    for U in range(N):
        C = smap.in_core(bitmat[U])
        cm = int(sum(1 << int(x) for x in C.members))
        core_size[U] = len(C)
        if incore_bad is None and ((cm & ~U) or sid[cm] != sid[U] or not is_core[cm]
                                   or len(C) > smap.rank_bound):
            incore_bad = U
    add(CheckResult("in_core minimal, inside U, within rank", incore_bad is None,
                    f"U={_bits(incore_bad, n)}" if incore_bad is not None else ""))

    if smap.monotone:
        mono_bad = None
        for x in range(n):
            fresh = np.flatnonzero(((allm >> x) & 1) == 0)
            viol = fresh[core_size[fresh] > core_size[fresh | (1 << x)]]
            if viol.size:
                mono_bad = (int(viol[0]), x)
                break
        add(CheckResult("monotone in-core sizes", mono_bad is None,
                        f"U={_bits(mono_bad[0], n)} x={mono_bad[1]}" if mono_bad else ""))
        sizes: dict[int, set] = {}
        for C in np.flatnonzero(is_core):
            sizes.setdefault(int(sid[C]), set()).add(int(popcount[C]))
        uneven = [s for s, v in sizes.items() if len(v) > 1]
        add(CheckResult("equal core sizes per sketch", not uneven,
                        f"sketch={distinct[uneven[0]]}" if uneven else ""))
    return report


def rank_of(smap: ComposableMap, samples: int, rng, extra: Iterable[KeySet] = ()) -> int:
    """Largest in-core observed over random subsets, boundary sets and ``extra``.

    Raises when the observation exceeds the declared rank bound.
    """
    gen = as_generator(rng)
    n = smap.n
    candidates = [np.ones(n, dtype=bool), np.zeros(n, dtype=bool)]
    candidates += [s.mask(n) for s in extra]
    for _ in range(samples):
        candidates.append(gen.random(n) < gen.random())
    best = 0
    for m in candidates:
        size = len(smap.in_core(m))
        if size > smap.rank_bound:
            raise AssertionError(f"observed core of size {size} > declared rank {smap.rank_bound}")
        best = max(best, size)
    return best
