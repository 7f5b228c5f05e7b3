# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint8_t, uint32_t, uint64_t
from libcpp.vector cimport vector
from libcpp.algorithm cimport nth_element

cnp.import_array()

IMPLEMENTATION = "compiled"


cdef inline const uint8_t[::1] _u8(object a):
    arr = np.asarray(a)
    if arr.dtype == np.bool_:
        arr = arr.view(np.uint8)
    return np.ascontiguousarray(arr, dtype=np.uint8)


def kth_present(present, const int64_t[::1] order, Py_ssize_t k):
    cdef const uint8_t[::1] p = _u8(present)
    cdef Py_ssize_t i, seen = 0, n = order.shape[0], pos = -1
    with nogil:
        for i in range(n):
            if p[order[i]]:
                seen += 1
                if seen == k:
                    pos = i
                    break
    return pos


def first_present(present, const int64_t[::1] order, Py_ssize_t k):
    cdef const uint8_t[::1] p = _u8(present)
    out = np.empty(k, dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef Py_ssize_t i, seen = 0, n = order.shape[0]
    with nogil:
        for i in range(n):
            if seen == k:
                break
            if p[order[i]]:
                o[seen] = order[i]
                seen += 1
    return out[:seen]


def kth_present_batch(present2d, const int64_t[::1] order, Py_ssize_t k):
    arr = np.asarray(present2d)
    if arr.dtype == np.bool_:
        arr = arr.view(np.uint8)
    cdef const uint8_t[:, ::1] p = np.ascontiguousarray(arr, dtype=np.uint8)
    cdef Py_ssize_t t, i, seen, T = p.shape[0], n = order.shape[0]
    out = np.full(T, -1, dtype=np.int64)
    cdef int64_t[::1] o = out
    with nogil:
        for t in range(T):
            seen = 0
            for i in range(n):
                if p[t, order[i]]:
                    seen += 1
                    if seen == k:
                        o[t] = i
                        break
    return out


def bucket_minima(present, const int64_t[::1] order, const int64_t[::1] bucket_of, Py_ssize_t k):
    cdef const uint8_t[::1] p = _u8(present)
    out = np.full(k, -1, dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef Py_ssize_t i, key, b, filled = 0, n = order.shape[0]
    with nogil:
        for i in range(n):
            key = order[i]
            if p[key]:
                b = bucket_of[key]
                if o[b] < 0:
                    o[b] = key
                    filled += 1
                    if filled == k:
                        break
    return out


cdef int64_t _lower_median(int64_t[::1] counts, uint8_t[::1] masked, vector[int64_t]& buf) nogil:
    cdef Py_ssize_t i, n = counts.shape[0]
    buf.clear()
    for i in range(n):
        if not masked[i]:
            buf.push_back(counts[i])
    if buf.size() == 0:
        return 0
    cdef size_t mid = (buf.size() - 1) // 2
    nth_element(buf.begin(), buf.begin() + mid, buf.end())
    return buf[mid]


def lower_median(counts, masked):
    cdef int64_t[::1] c = np.ascontiguousarray(counts, dtype=np.int64)
    cdef uint8_t[::1] m = np.ascontiguousarray(np.asarray(masked).view(np.uint8)
                                               if np.asarray(masked).dtype == np.bool_
                                               else masked, dtype=np.uint8)
    cdef vector[int64_t] buf
    return int(_lower_median(c, m, buf))


def score_and_promote(int64_t[::1] counts, uint8_t[::1] masked, sampled, int z, double slack):
    if not z:
        return np.empty(0, dtype=np.int64)
    cdef const uint8_t[::1] s = _u8(sampled)
    cdef Py_ssize_t i, n = counts.shape[0], npro = 0
    cdef vector[int64_t] buf
    cdef vector[int64_t] promoted
    cdef int64_t med
    with nogil:
        for i in range(n):
            if s[i] and not masked[i]:
                counts[i] += 1
        med = _lower_median(counts, masked, buf)
        for i in range(n):
            if s[i] and not masked[i] and counts[i] >= med + slack:
                promoted.push_back(i)
        for i in range(<Py_ssize_t>promoted.size()):
            masked[promoted[i]] = 1
    out = np.empty(promoted.size(), dtype=np.int64)
    for i in range(<Py_ssize_t>promoted.size()):
        out[i] = promoted[i]
    return out


cdef class ScoreBoard:
    """Attack scores with an incrementally maintained lower median.

    Scores only ever grow by one, so a histogram of unmasked scores plus a
    running (median value, number of unmasked keys below it) pair moves in
    O(1) amortized per update.
    """

    cdef int64_t[::1] _c
    cdef uint8_t[::1] _m
    cdef vector[int64_t] hist
    cdef int64_t med, below, live
    cdef public object counts, masked

    def __init__(self, Py_ssize_t n):
        self.counts = np.zeros(n, dtype=np.int64)
        self.masked = np.zeros(n, dtype=np.uint8)
        self._c = self.counts
        self._m = self.masked
        self.hist.assign(2, 0)
        self.hist[0] = n
        self.med = 0
        self.below = 0
        self.live = n

    cdef void _rebalance(self) nogil:
        cdef int64_t idx
        if self.live == 0:
            return
        idx = (self.live - 1) // 2
        while self.below + self.hist[self.med] <= idx:
            self.below += self.hist[self.med]
            self.med += 1
        while self.below > idx:
            self.med -= 1
            self.below -= self.hist[self.med]

    def median(self):
        return int(self.med) if self.live else 0

    def update(self, sampled, double slack):
        """Score every sampled unmasked key, then mask those at least ``slack`` above the median."""
        cdef const uint8_t[::1] s = _u8(sampled)
        cdef Py_ssize_t i, n = self._c.shape[0]
        cdef int64_t c
        cdef vector[int64_t] promoted
        with nogil:
            for i in range(n):
                if s[i] and not self._m[i]:
                    c = self._c[i]
                    self._c[i] = c + 1
                    if <size_t>(c + 2) > self.hist.size():
                        self.hist.push_back(0)
                    self.hist[c] -= 1
                    self.hist[c + 1] += 1
                    if c + 1 == self.med:
                        self.below -= 1
            self._rebalance()
            # the histogram's top index bounds every unmasked score
            if <double>(self.hist.size() - 1) >= self.med + slack:
                for i in range(n):
                    if s[i] and not self._m[i] and self._c[i] >= self.med + slack:
                        promoted.push_back(i)
            for i in range(<Py_ssize_t>promoted.size()):
                c = self._c[promoted[i]]
                self._m[promoted[i]] = 1
                self.hist[c] -= 1
                self.live -= 1
                if c < self.med:
                    self.below -= 1
            while self.hist.size() > 2 and self.hist.back() == 0:
                self.hist.pop_back()
            self._rebalance()
        out = np.empty(promoted.size(), dtype=np.int64)
        for i in range(<Py_ssize_t>promoted.size()):
            out[i] = promoted[i]
        return out


def bernoulli_union(const uint32_t[::1] raw, uint64_t thr, const uint8_t[::1] masked,
                    uint8_t[::1] U, uint8_t[::1] union):
    """``U = raw < thr`` and ``union = U | masked``; returns ``|union|``."""
    cdef Py_ssize_t i, n = U.shape[0], size = 0
    cdef uint8_t u, v
    with nogil:
        for i in range(n):
            u = raw[i] < thr
            v = u | masked[i]
            U[i] = u
            union[i] = v
            size += v
    return size
