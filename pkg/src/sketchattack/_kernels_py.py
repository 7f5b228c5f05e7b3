"""Pure-numpy implementations of the hot kernels.

Semantics are identical to the compiled ``_kernels`` module; the test-suite
checks both against each other.  Boolean arrays are passed as ``uint8`` or
``bool`` (any array where nonzero means present).
"""
from __future__ import annotations

import numpy as np

IMPLEMENTATION = "python"


def kth_present(present, order, k):
    """Position (in ``order``) of the k-th present key, or -1 if fewer than k are present."""
    hits = np.flatnonzero(np.asarray(present, dtype=bool)[order])
    return int(hits[k - 1]) if hits.size >= k else -1


def first_present(present, order, k):
    """The first ``k`` present keys in ``order`` (fewer if not enough are present)."""
    seq = np.asarray(order)[np.asarray(present, dtype=bool)[order]]
    return seq[:k].astype(np.int64)


def kth_present_batch(present2d, order, k):
    """Row-wise :func:`kth_present` over a (T, n) presence matrix."""
    reordered = np.asarray(present2d, dtype=bool)[:, order]
    csum = np.cumsum(reordered, axis=1, dtype=np.int64)
    reached = csum >= k
    pos = np.argmax(reached, axis=1).astype(np.int64)
    pos[~reached[:, -1]] = -1
    return pos


def bucket_minima(present, order, bucket_of, k):
    """Per bucket, the first present key in ``order`` (-1 for an empty bucket)."""
    seq = np.asarray(order)[np.asarray(present, dtype=bool)[order]]
    out = np.full(k, -1, dtype=np.int64)
    if seq.size == 0:
        return out
    buckets = np.asarray(bucket_of)[seq]
    uniq, first = np.unique(buckets, return_index=True)
    out[uniq] = seq[first]
    return out


def lower_median(counts, masked):
    """Lower median (index floor((m-1)/2) of the sorted values) over unmasked keys."""
    vals = np.asarray(counts)[~np.asarray(masked, dtype=bool)]
    if vals.size == 0:
        return 0
    mid = (vals.size - 1) // 2
    return int(np.partition(vals, mid)[mid])


def score_and_promote(counts, masked, sampled, z, slack):
    """One scoring step of the attack, updating ``counts`` (int64) and ``masked`` (uint8) in place.

    When ``z`` is 1, every sampled unmasked key gains one point.  Sampled
    unmasked keys whose count reaches the lower median over unmasked keys
    plus ``slack`` are then added to the mask.  Returns promoted keys.
    """
    if not z:
        return np.empty(0, dtype=np.int64)
    live = np.asarray(sampled, dtype=bool) & (masked == 0)
    counts[live] += 1
    med = lower_median(counts, masked)
    keys = np.flatnonzero(live & (counts >= med + slack)).astype(np.int64)
    masked[keys] = 1
    return keys


class ScoreBoard:
    """Attack scores and mask; the median is recomputed on every update."""

    def __init__(self, n):
        self.counts = np.zeros(n, dtype=np.int64)
        self.masked = np.zeros(n, dtype=np.uint8)

    def median(self):
        return lower_median(self.counts, self.masked)

    def update(self, sampled, slack):
        return score_and_promote(self.counts, self.masked, sampled, 1, slack)


def bernoulli_union(raw, thr, masked, U, union):
    """``U = raw < thr`` and ``union = U | masked``; returns ``|union|``."""
    U[:] = raw < np.uint64(thr)
    np.bitwise_or(U, masked, out=union)
    return int(np.count_nonzero(union))
