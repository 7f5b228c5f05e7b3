"""Exact arithmetic over prime fields and the rationals.

Everything here is exact: residues are Python/numpy integers reduced mod p,
rationals are :class:`fractions.Fraction`.  No floating point is involved.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

# deterministic Miller-Rabin witnesses for all n < 3.3e24
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def is_prime(n: int) -> bool:
    n = int(n)
    if n < 2:
        return False
    for b in _MR_BASES:
        if n % b == 0:
            return n == b
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


class PrimeField:
    """Residues mod a prime ``p``; elements are plain ints in ``[0, p)``."""

    def __init__(self, p: int):
        if not is_prime(p):
            raise ValueError(f"{p} is not prime")
        self.p = int(p)

    zero, one = 0, 1

    def convert(self, x) -> int:
        if isinstance(x, Fraction):
            if x.denominator % self.p == 0:
                raise ZeroDivisionError(f"denominator divisible by {self.p}")
            return x.numerator * pow(x.denominator, -1, self.p) % self.p
        return int(x) % self.p

    def add(self, a, b):
        return (a + b) % self.p

    def sub(self, a, b):
        return (a - b) % self.p

    def mul(self, a, b):
        return a * b % self.p

    def inv(self, a):
        if a % self.p == 0:
            raise ZeroDivisionError("inverse of zero")
        return pow(int(a), -1, self.p)

    def encode(self, a):
        return int(a)

    def __eq__(self, other):
        return isinstance(other, PrimeField) and other.p == self.p

    def __hash__(self):
        return hash(("F", self.p))

    def __repr__(self):
        return f"F_{self.p}"


class RationalField:
    """Exact rationals."""

    zero, one = Fraction(0), Fraction(1)
    p = 0

    def convert(self, x) -> Fraction:
        return Fraction(x)

    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b

    def mul(self, a, b):
        return a * b

    def inv(self, a):
        if a == 0:
            raise ZeroDivisionError("inverse of zero")
        return 1 / Fraction(a)

    def encode(self, a):
        return (a.numerator, a.denominator)

    def __eq__(self, other):
        return isinstance(other, RationalField)

    def __hash__(self):
        return hash("Q")

    def __repr__(self):
        return "Q"


QQ = RationalField()


class Echelon:
    """Incrementally maintained reduced row-echelon basis of a subspace.

    ``add`` returns whether the vector was independent of what was added so
    far, which is exactly the greedy-basis test.
    """

    def __init__(self, field, dim: int):
        self.field = field
        self.dim = int(dim)
        self.rows: dict[int, list] = {}

    @property
    def rank(self) -> int:
        return len(self.rows)

    def reduce(self, vec: Sequence) -> list:
        F = self.field
        v = [F.convert(x) for x in vec]
        if len(v) != self.dim:
            raise ValueError(f"vector of length {len(v)}, expected {self.dim}")
        for piv, row in self.rows.items():
            c = v[piv]
            if c != F.zero:
                v = [F.sub(a, F.mul(c, b)) for a, b in zip(v, row)]
        return v

    def add(self, vec: Sequence) -> bool:
        F = self.field
        v = self.reduce(vec)
        piv = next((i for i, x in enumerate(v) if x != F.zero), None)
        if piv is None:
            return False
        scale = F.inv(v[piv])
        v = [F.mul(scale, x) for x in v]
        for p_old, row in self.rows.items():
            c = row[piv]
            if c != F.zero:
                self.rows[p_old] = [F.sub(a, F.mul(c, b)) for a, b in zip(row, v)]
        self.rows[piv] = v
        return True

    def contains(self, vec: Sequence) -> bool:
        F = self.field
        return all(x == F.zero for x in self.reduce(vec))

    def canonical(self) -> tuple:
        """The RREF rows sorted by pivot, as a hashable, encodable tuple."""
        F = self.field
        return tuple(tuple(F.encode(x) for x in self.rows[p]) for p in sorted(self.rows))


def rank(field, columns: Iterable[Sequence], dim: int) -> int:
    ech = Echelon(field, dim)
    for col in columns:
        ech.add(col)
        if ech.rank == dim:
            break
    return ech.rank


def rank_mod_p(matrix: np.ndarray, p: int) -> int:
    """Rank of an integer matrix mod ``p`` by vectorized Gaussian elimination (p < 2**31)."""
    M = np.array(matrix, dtype=np.int64) % p
    rows, cols = M.shape
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nz = np.flatnonzero(M[r:, c])
        if nz.size == 0:
            continue
        piv = r + nz[0]
        if piv != r:
            M[[r, piv]] = M[[piv, r]]
        M[r] = M[r] * pow(int(M[r, c]), -1, p) % p
        others = np.flatnonzero(M[:, c])
        others = others[others != r]
        if others.size:
            M[others] = (M[others] - np.outer(M[others, c], M[r])) % p
        r += 1
    return r


def invert(field, matrix: Sequence[Sequence]) -> list[list]:
    """Exact inverse by Gauss-Jordan; raises ``ValueError`` when singular."""
    F = field
    k = len(matrix)
    aug = [[F.convert(x) for x in row] + [F.one if i == j else F.zero for j in range(k)]
           for i, row in enumerate(matrix)]
    for c in range(k):
        piv = next((r for r in range(c, k) if aug[r][c] != F.zero), None)
        if piv is None:
            raise ValueError("singular matrix")
        aug[c], aug[piv] = aug[piv], aug[c]
        s = F.inv(aug[c][c])
        aug[c] = [F.mul(s, x) for x in aug[c]]
        for r in range(k):
            if r != c and aug[r][c] != F.zero:
                f = aug[r][c]
                aug[r] = [F.sub(a, F.mul(f, b)) for a, b in zip(aug[r], aug[c])]
    return [row[k:] for row in aug]


def matmul(field, X: Sequence[Sequence], Y: Sequence[Sequence]) -> list[list]:
    F = field
    out = []
    for row in X:
        acc = []
        for j in range(len(Y[0])):
            s = F.zero
            for a, yrow in zip(row, Y):
                if a != F.zero and yrow[j] != F.zero:
                    s = F.add(s, F.mul(a, yrow[j]))
            acc.append(s)
        out.append(acc)
    return out
