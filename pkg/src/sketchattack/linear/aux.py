"""Auxiliary value distributions for linear sketches.

Over F_p the attack sends uniform field elements on ``U | M``.  Over the
reals it sends exponentials: with index-dependent scales ``beta ** -i``
(large-magnitude scheme) or with a thinned set ``H`` of large keys and unit
values elsewhere (small-magnitude scheme).  Exponentials are drawn by
inverse CDF from a uniform 128-bit dyadic and stored as an exact dyadic
mantissa, so every value is an exact rational.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from mpmath import libmp

from ..core import KeySet
from ..rng import as_generator
from .fields import is_prime
from .matrix import QueryVector

MANTISSA_BITS = 128


def exp_mantissas(count: int, rng, bits: int = MANTISSA_BITS) -> list[int]:
    """Integers ``m`` with ``m / 2**bits`` ~ Exp(1), accurate to ``2**-bits``.

    Uses ``E = -ln((u + 1/2) / 2**bits)`` for a uniform ``bits``-bit integer
    ``u``; results are always at least 1.
    """
    gen = as_generator(rng)
    nbytes = (bits + 7) // 8
    blob = gen.bytes(nbytes * count)
    prec = bits + 40
    out = []
    for j in range(count):
        u = int.from_bytes(blob[j * nbytes:(j + 1) * nbytes], "little") >> (8 * nbytes - bits)
        x = libmp.from_man_exp(2 * u + 1, -(bits + 1))
        e = libmp.mpf_neg(libmp.mpf_log(x, prec))
        out.append(max(1, libmp.to_int(libmp.mpf_shift(e, bits), rnd="n")))
    return out


def aux_fp(M: KeySet, U_minus_M: KeySet, p: int, rng) -> QueryVector:
    """Uniform F_p values on ``U | M``; zeros stay in the support and are flagged."""
    if not is_prime(p):
        raise ValueError(f"{p} is not prime")
    n = M.n if M.n is not None else U_minus_M.n
    if len(M & U_minus_M):
        raise ValueError("M and U \\ M must be disjoint")
    support = (M | U_minus_M).members
    vals = as_generator(rng).integers(0, p, size=support.size)
    zeros = KeySet(support[vals == 0], n)
    return QueryVector(n, np.array(support), [int(x) for x in vals], 1, int(p), zeros)


def shifted_thresholds_fp(A: int, B: int, p: int, n: int, c: float = 0.01) -> tuple[int, int]:
    """Thresholds on ``|U | M|`` matching thresholds ``(A, B)`` on the support size of ``v``."""
    if not B / n < (p - 1) / p:
        raise ValueError(f"need B/n < (p-1)/p, got B/n={B / n:.4g}")
    f = p / (p - 1)
    a2 = math.floor(f * A - c * n + 0.5)
    b2 = math.floor(f * B + c * n + 0.5)
    if a2 >= b2 or a2 <= 0 or b2 >= n:
        raise ValueError(f"shifted thresholds out of range: A'={a2}, B'={b2}, n={n}")
    return a2, b2


@dataclass(frozen=True)
class RealAuxParams:
    mode: str
    beta: int
    q0: float | None = None
    bits: int = MANTISSA_BITS
    C: float = 8.0

    @classmethod
    def large(cls, n: int, k: int, gamma: float, delta: float, C: float = 8.0) -> "RealAuxParams":
        beta = math.ceil(C * gamma * n * math.log(n / delta) * k / delta)
        return cls("large", beta, None, MANTISSA_BITS, C)

    @classmethod
    def small(cls, n: int, k: int, gamma: float, delta: float, qmin: float,
              C: float = 8.0) -> "RealAuxParams":
        beta = math.ceil(C * n * gamma * k / delta)
        return cls("small", beta, qmin / 2, MANTISSA_BITS, C)


def aux_real_large(M: KeySet, U_minus_M: KeySet, params: RealAuxParams, rng) -> QueryVector:
    """``v_i`` ~ Exp with mean ``beta ** -(i + 1)`` on ``U | M``, exponent-separated and exact."""
    if params.mode != "large":
        raise ValueError("parameters are not for the large-magnitude scheme")
    n = M.n if M.n is not None else U_minus_M.n
    support = (M | U_minus_M).members
    if support.size == 0:
        return QueryVector(n, support, [], 1, 0, mantissa=[], exponent=support.copy())
    mant = exp_mantissas(support.size, rng, params.bits)
    expo = support + 1
    top = int(expo.max())
    beta = params.beta
    vals = [m * beta ** (top - int(e)) for m, e in zip(mant, expo)]
    return QueryVector(n, np.array(support), vals, (1 << params.bits) * beta ** top, 0,
                       mantissa=mant, exponent=expo, meta={"beta": beta, "bits": params.bits})


def aux_real_small(M: KeySet, U: KeySet, q: float, params: RealAuxParams, rng,
                   active: np.ndarray | None = None, restrict: bool = False) -> tuple[QueryVector, KeySet]:
    """Thin ``U`` at rate ``q0/q`` to get the large keys ``H``.

    ``v_i`` ~ Exp with mean ``beta`` on ``H | M`` and ``v_i = 1`` on the rest
    of ``U``.  Values are exact: numerators over the denominator ``2**bits``.
    With ``active`` (a boolean column mask) exponential draws are made only
    for active keys; inactive large keys get the placeholder mantissa
    ``2**bits`` (value ``beta``), which leaves ``A v`` unchanged whenever the
    inactive columns of ``A`` are zero.  ``restrict`` additionally drops the
    inactive keys from the returned vector; ``H`` is always the full thinning.
    """
    if params.mode != "small":
        raise ValueError("parameters are not for the small-magnitude scheme")
    if q < params.q0:
        raise ValueError(f"q={q} below q0={params.q0}")
    n = M.n if M.n is not None else U.n
    gen = as_generator(rng)
    Um = U.mask(n)
    H = Um & (gen.random(n) < params.q0 / q)
    Mm = M.mask(n)
    big = H | Mm
    support = np.flatnonzero(Um | Mm)
    one = 1 << params.bits
    big_idx = support[big[support]]
    if active is None:
        draws = big_idx
    else:
        draws = big_idx[active[big_idx]]
    mant = dict(zip(draws.tolist(), exp_mantissas(draws.size, gen, params.bits)))
    if restrict and active is not None:
        support = support[active[support]]
    vals = [(mant.get(i, one) * params.beta if big[i] else one) for i in support.tolist()]
    qv = QueryVector(n, support, vals, one, 0, meta={"beta": params.beta, "H": KeySet.from_mask(H)})
    return qv, KeySet.from_mask(H)


def log_magnitude_ratio(v: QueryVector) -> float:
    """Natural log of (largest nonzero |v_i|) / (smallest nonzero |v_i|)."""
    if v.p:
        raise ValueError("magnitudes are not defined over F_p")
    if v.mantissa is not None and v.exponent is not None and len(v.mantissa):
        beta = v.meta["beta"]
        logs = [math.log(m) - float(e) * math.log(beta) for m, e in zip(v.mantissa, v.exponent)]
    else:
        logs = [math.log(abs(x)) for x in v.values if x != 0]
    if not logs:
        return 0.0
    return max(logs) - min(logs)
