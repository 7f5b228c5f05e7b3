"""Sketching matrices over F_p and the rationals, query vectors, and S(v) = A v."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import KeySet
from ..rng import as_generator
from .fields import QQ, PrimeField


class PrimeFieldMatrix:
    """A k x n matrix of residues mod a prime ``p``."""

    def __init__(self, p: int, entries):
        self.field = PrimeField(p)
        self.p = self.field.p
        arr = np.asarray(entries, dtype=object if self.p >= 1 << 31 else np.int64)
        if arr.ndim != 2:
            raise ValueError("entries must be a 2-d array")
        if self.p < 1 << 31 and (arr.min() < 0 or arr.max() >= self.p):
            raise ValueError(f"entries must lie in [0, {self.p})")
        self.entries = arr
        self.k, self.n = arr.shape

    @classmethod
    def random(cls, p: int, k: int, n: int, rng) -> "PrimeFieldMatrix":
        return cls(p, as_generator(rng).integers(0, p, size=(k, n)))

    @classmethod
    def random_sparse(cls, p: int, n: int, row_supports: Sequence[int], rng) -> "PrimeFieldMatrix":
        """Rows with disjoint random supports of the given sizes and nonzero entries."""
        gen = as_generator(rng)
        support = _disjoint_supports(n, row_supports, gen)
        entries = np.zeros((len(row_supports), n), dtype=np.int64)
        for j, cols in enumerate(support):
            entries[j, cols] = gen.integers(1, p, size=cols.size)
        return cls(p, entries)

    def column(self, i: int) -> list[int]:
        return [int(x) for x in self.entries[:, i]]

    def row_support(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.entries[j] != 0)

    def __repr__(self):
        return f"PrimeFieldMatrix(p={self.p}, k={self.k}, n={self.n})"


class RealMatrix:
    """A k x n matrix of exact rationals (the real-RAM model realized exactly)."""

    field = QQ
    p = 0

    def __init__(self, entries, gamma0: Fraction | None = None):
        rows = [[Fraction(x) for x in row] for row in entries]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError("entries must be a non-empty rectangular array")
        self.k, self.n = len(rows), len(rows[0])
        self.entries = np.empty((self.k, self.n), dtype=object)
        for j, row in enumerate(rows):
            self.entries[j, :] = row
        self.integral = all(x.denominator == 1 for x in self.entries.flat)
        if self.integral:
            self.int_entries = np.array([[int(x) for x in row] for row in rows], dtype=object)
        self.gamma0 = gamma0

    @classmethod
    def random_sparse01(cls, n: int, row_supports: Sequence[int], rng) -> "RealMatrix":
        gen = as_generator(rng)
        entries = np.zeros((len(row_supports), n), dtype=np.int64)
        for j, cols in enumerate(_disjoint_supports(n, row_supports, gen)):
            entries[j, cols] = 1
        return cls(entries.tolist())

    @classmethod
    def random_integer(cls, k: int, n: int, bound: int, rng) -> "RealMatrix":
        return cls(as_generator(rng).integers(-bound, bound + 1, size=(k, n)).tolist())

    def column(self, i: int) -> list[Fraction]:
        return list(self.entries[:, i])

    def row_support(self, j: int) -> np.ndarray:
        return np.flatnonzero([x != 0 for x in self.entries[j]])

    def scaled(self, factor) -> "RealMatrix":
        f = Fraction(factor)
        return RealMatrix([[x * f for x in row] for row in self.entries])

    def __repr__(self):
        return f"RealMatrix(k={self.k}, n={self.n})"


def _disjoint_supports(n: int, sizes: Sequence[int], gen) -> list[np.ndarray]:
    total = int(sum(sizes))
    if total > n:
        raise ValueError("row supports do not fit in the ground set")
    picked = gen.choice(n, size=total, replace=False)
    cuts = np.cumsum(sizes)[:-1]
    return [np.sort(s) for s in np.split(picked, cuts)]


@dataclass
class QueryVector:
    """Sparse query vector ``v``: entry ``i`` equals ``values[j] / denominator`` for ``indices[j] == i``.

    Over F_p the denominator is 1 and sampled zeros are kept in the support
    and listed in ``zeros``.  Real vectors may carry their exponent-separated
    form (``mantissa`` scaled by 2**-bits, times ``base ** -exponent``) for audits.
    """

    n: int
    indices: np.ndarray
    values: list
    denominator: int = 1
    p: int = 0
    zeros: KeySet | None = None
    mantissa: list | None = None
    exponent: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def support(self) -> KeySet:
        return KeySet(self.indices, self.n)

    @property
    def l0(self) -> int:
        """Number of nonzero entries."""
        return int(sum(1 for x in self.values if x % self.p != 0)) if self.p else \
            int(sum(1 for x in self.values if x != 0))

    def value(self, i: int):
        pos = int(np.searchsorted(self.indices, i))
        if pos < len(self.indices) and self.indices[pos] == i:
            x = self.values[pos]
            return x % self.p if self.p else Fraction(x, self.denominator)
        return 0

    def dense(self) -> list:
        out = [0 if self.p else Fraction(0)] * self.n
        for i, x in zip(self.indices, self.values):
            out[int(i)] = x % self.p if self.p else Fraction(x, self.denominator)
        return out

    @classmethod
    def from_dense(cls, values: Sequence, p: int = 0) -> "QueryVector":
        vals = list(values)
        if p:
            idx = np.array([i for i, x in enumerate(vals) if int(x) % p], dtype=np.int64)
            return cls(len(vals), idx, [int(vals[i]) % p for i in idx], 1, p)
        fr = [Fraction(x) for x in vals]
        idx = np.array([i for i, x in enumerate(fr) if x != 0], dtype=np.int64)
        den = int(np.lcm.reduce([fr[i].denominator for i in idx] or [1]))
        return cls(len(fr), idx, [int(fr[i] * den) for i in idx], den, 0)


def sketch_vector(A: PrimeFieldMatrix | RealMatrix, v: QueryVector) -> tuple:
    """Exact product ``A v``: residues over F_p, Fractions over the rationals."""
    if v.n != A.n:
        raise ValueError(f"vector of dimension {v.n} for a matrix with {A.n} columns")
    idx = np.asarray(v.indices, dtype=np.int64)
    if isinstance(A, PrimeFieldMatrix):
        if v.p and v.p != A.p:
            raise ValueError("field mismatch")
        if idx.size == 0:
            return tuple([0] * A.k)
        if A.p < 1 << 20:
            vals = np.asarray(v.values, dtype=np.int64) % A.p
            return tuple(int(x) for x in (A.entries[:, idx] @ vals) % A.p)
        vals = [int(x) % A.p for x in v.values]
        return tuple(sum(int(a) * x for a, x in zip(A.entries[j, idx], vals)) % A.p for j in range(A.k))
    if v.p:
        raise ValueError("F_p vector against a real matrix")
    out = []
    if A.integral:
        for j in range(A.k):
            row = A.int_entries[j]
            s = 0
            for i, x in zip(idx, v.values):
                a = row[i]
                if a:
                    s += a * x
            out.append(Fraction(s, v.denominator))
        return tuple(out)
    for j in range(A.k):
        row = A.entries[j]
        s = Fraction(0)
        for i, x in zip(idx, v.values):
            a = row[i]
            if a:
                s += a * x
        out.append(s / v.denominator)
    return tuple(out)


def save_matrix(A: PrimeFieldMatrix | RealMatrix, path: str | Path) -> None:
    """Text format: header ``p k n`` (p = 0 for reals), then row-major entries."""
    lines = [f"{A.p} {A.k} {A.n}"]
    for row in A.entries:
        lines.append(" ".join(_fmt(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(x) -> str:
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    return str(int(x))


def load_matrix(path: str | Path) -> PrimeFieldMatrix | RealMatrix:
    tokens = Path(path).read_text().split()
    if len(tokens) < 3:
        raise ValueError("missing header 'p k n'")
    p, k, n = (int(t) for t in tokens[:3])
    body = tokens[3:]
    if len(body) != k * n:
        raise ValueError(f"expected {k * n} entries, found {len(body)}")
    rows = [body[j * n:(j + 1) * n] for j in range(k)]
    if p == 0:
        return RealMatrix([[Fraction(t) for t in row] for row in rows])
    return PrimeFieldMatrix(p, [[int(t) for t in row] for row in rows])
