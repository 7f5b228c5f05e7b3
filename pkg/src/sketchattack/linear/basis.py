"""Greedy bases, change-of-basis matrices, and basis pools for linear sketches."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from ..composable import ComposableMap, Sketch, peel, pool_from_peeling
from ..core import KeySet
from ..rng import as_generator
from .fields import QQ, Echelon, invert, matmul, rank_mod_p
from .matrix import PrimeFieldMatrix, RealMatrix


def greedy_basis(columns: Sequence[Sequence], field=QQ, dim: int | None = None) -> list[int]:
    """Indices of the lexicographically first basis: keep ``i`` iff column ``i`` is
    outside the span of the columns kept before it."""
    cols = list(columns)
    if not cols:
        return []
    ech = Echelon(field, dim if dim is not None else len(cols[0]))
    return [i for i, c in enumerate(cols) if ech.rank < ech.dim and ech.add(c)]


def _columns(A) -> list[list]:
    return [A.column(i) for i in range(A.n)]


@dataclass
class ChangeOfBasis:
    """Invertible ``F_B`` with ``F_B a_(b_j) = e_j`` for the basis columns ``b_j``.

    When ``B`` spans less than the full space it is completed with standard
    unit vectors before inverting.
    """

    basis: tuple[int, ...]
    F: list[list]
    field: object

    @classmethod
    def from_basis(cls, A: PrimeFieldMatrix | RealMatrix, basis: Sequence[int]) -> "ChangeOfBasis":
        F = A.field
        cols = [[F.convert(x) for x in A.column(b)] for b in basis]
        ech = Echelon(F, A.k)
        for c in cols:
            if not ech.add(c):
                raise ValueError(f"columns {list(basis)} are linearly dependent")
        for i in range(A.k):
            if ech.rank == A.k:
                break
            unit = [F.one if j == i else F.zero for j in range(A.k)]
            if ech.add(unit):
                cols.append(unit)
        square = [[cols[c][r] for c in range(A.k)] for r in range(A.k)]
        return cls(tuple(int(b) for b in basis), invert(F, square), F)

    def apply(self, A: PrimeFieldMatrix | RealMatrix) -> list[list]:
        F = self.field
        dense = [[F.convert(x) for x in row] for row in A.entries]
        return matmul(F, self.F, dense)

    def check(self, A: PrimeFieldMatrix | RealMatrix) -> bool:
        F = self.field
        for j, b in enumerate(self.basis):
            col = [[F.convert(x)] for x in A.column(b)]
            img = matmul(F, self.F, col)
            if any(img[i][0] != (F.one if i == j else F.zero) for i in range(len(img))):
                return False
        return True


class SpanSketchMap(ComposableMap):
    """``S(U)`` is the span of the columns indexed by ``U``, encoded as its RREF."""

    family = "span"

    def __init__(self, A: PrimeFieldMatrix | RealMatrix):
        super().__init__(A.n, A.k)
        self.A = A
        self.fld = A.field
        self._cols = [[self.fld.convert(x) for x in A.column(i)] for i in range(A.n)]

    def _echelon(self, idx) -> Echelon:
        ech = Echelon(self.fld, self.A.k)
        for i in idx:
            if ech.rank == ech.dim:
                break
            ech.add(self._cols[i])
        return ech

    def sketch_mask(self, mask):
        return Sketch(self.family, self._echelon(np.flatnonzero(mask)).canonical())

    def _decode(self, row):
        return Fraction(*row) if self.fld is QQ else row

    def _compose(self, p1, p2):
        ech = Echelon(self.fld, self.A.k)
        for row in p1 + p2:
            ech.add([self._decode(x) for x in row])
        return ech.canonical()

    def in_core(self, U):
        from ..composable import _as_mask
        idx = np.flatnonzero(_as_mask(U, self.n))
        return KeySet([int(idx[i]) for i in greedy_basis([self._cols[j] for j in idx], self.fld, self.A.k)],
                      self.n)

    def params(self):
        return {**super().params(), "p": self.A.p}


class GreedyBasisSketchMap(SpanSketchMap):
    """``S(U)`` is the greedy (lexicographically first) basis of the columns in ``U``."""

    family = "greedybasis"

    def sketch_mask(self, mask):
        return Sketch(self.family, tuple(self.in_core(mask).tolist()))

    def _compose(self, p1, p2):
        idx = sorted(set(p1) | set(p2))
        return tuple(idx[i] for i in greedy_basis([self._cols[j] for j in idx], self.fld, self.A.k))

    def in_core(self, U):
        return SpanSketchMap.in_core(self, U)


@dataclass
class BasisPool:
    keys: KeySet
    kind: str
    delta: float
    layers_used: int

    def __len__(self) -> int:
        return len(self.keys)


def basis_pool(A: PrimeFieldMatrix | RealMatrix, qmin: float, delta: float,
               kind: str = "basis") -> BasisPool:
    """Peel the span (``basis``) or greedy-basis map and keep the monotone-formula prefix."""
    if kind == "basis":
        smap = SpanSketchMap(A)
    elif kind == "greedy-basis":
        smap = GreedyBasisSketchMap(A)
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    pe = peel(smap)
    if len(pe) == 0:
        return BasisPool(KeySet((), A.n), kind, delta, 0)
    pool = pool_from_peeling(pe, smap, qmin, delta, monotone_hint=True)
    return BasisPool(pool.keys, kind, delta, pool.layers_used)


def linear_pool_cap(k: int, qmin: float, delta: float) -> int:
    return math.ceil(math.log(k / delta) / qmin) * k


def _rank_of(A, idx) -> int:
    if isinstance(A, PrimeFieldMatrix) and A.p < 1 << 31:
        return rank_mod_p(A.entries[:, idx], A.p) if len(idx) else 0
    ech = Echelon(A.field, A.k)
    for i in idx:
        if ech.rank == A.k:
            break
        ech.add(A.column(int(i)))
    return ech.rank


def verify_linear_pool(A, pool: BasisPool | KeySet, aux_kind: str, masks: Sequence[KeySet],
                       q_grid: Sequence[float], trials: int, rng):
    """Per (mask, q) failure fraction of the structural pool event.

    ``fp``: span of ``U | M`` differs from span of ``(U & L) | M``.
    ``real-large``: the greedy basis of ``U | M`` is not inside ``(U & L) | M``.
    """
    from ..composable import PoolCell, PoolReport
    L = pool.keys if isinstance(pool, BasisPool) else pool
    Lm = L.mask(A.n)
    delta = pool.delta if isinstance(pool, BasisPool) else None
    gen = as_generator(rng)
    cells = []
    cols = _columns(A) if aux_kind == "real-large" else None
    for mi, M in enumerate(masks):
        Mm = M.mask(A.n)
        if aux_kind == "fp" and not (Mm <= Lm).all():
            raise ValueError("masks must lie inside the pool for the F_p check")
        for q in q_grid:
            fails = 0
            for _ in range(trials):
                U = gen.random(A.n) < q
                full = np.flatnonzero(U | Mm)
                inner = U & Lm | Mm
                if aux_kind == "fp":
                    bad = _rank_of(A, full) != _rank_of(A, np.flatnonzero(inner))
                elif aux_kind == "real-large":
                    gb = greedy_basis([cols[i] for i in full], A.field, A.k)
                    bad = not inner[full[gb]].all()
                else:
                    raise ValueError(f"unknown aux kind {aux_kind!r}")
                fails += bad
            cells.append(PoolCell(mi, float(q), fails, trials))
    return PoolReport(cells, delta)


def gamma0_estimate(A: RealMatrix | PrimeFieldMatrix, samples: int, rng, exact_max_n: int = 12) -> Fraction:
    """Largest |entry| of ``F_B A`` over column bases ``B``.

    Exact enumeration over all bases when ``n <= exact_max_n``; otherwise the
    greedy bases of ``samples`` random column orders (a lower bound on the
    worst case).
    """
    F = A.field
    cols = _columns(A)
    r = _rank_of(A, np.arange(A.n))
    if r == 0:
        return Fraction(0)
    candidates = []
    if A.n <= exact_max_n:
        for B in itertools.combinations(range(A.n), r):
            ech = Echelon(F, A.k)
            if all(ech.add(cols[b]) for b in B):
                candidates.append(B)
    else:
        gen = as_generator(rng)
        for _ in range(samples):
            perm = gen.permutation(A.n)
            gb = greedy_basis([cols[i] for i in perm], F, A.k)
            candidates.append(tuple(int(perm[i]) for i in gb))
    best = Fraction(0)
    for B in candidates:
        try:
            fb = ChangeOfBasis.from_basis(A, B)
        except ValueError:
            continue
        rotated = fb.apply(A)
        best = max(best, max(abs(Fraction(x)) for row in rotated for x in row))
    return best
