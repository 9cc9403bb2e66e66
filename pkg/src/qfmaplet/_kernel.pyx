# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rank/select quotient filter kernel.

Mirrors ``_kernel_py.QuotientKernel`` slot for slot; see that module for the
layout description.
"""

from array import array

from libc.stdint cimport uint64_t, uint32_t, int64_t

from qfmaplet._kernel_py import CapacityExceeded


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil
    int __builtin_ctzll(unsigned long long) nogil


cdef inline int _select64(uint64_t word, int k) noexcept nogil:
    cdef int i
    for i in range(k):
        word &= word - 1
    return __builtin_ctzll(word)


cdef class QuotientKernel:
    cdef readonly int qbits, rbits
    cdef readonly int64_t nslots, nblocks
    cdef public int64_t max_items
    cdef readonly int64_t count
    cdef int64_t mask
    cdef uint64_t rmask
    cdef readonly object occupieds, runends, offsets, slots
    cdef uint64_t[::1] occ
    cdef uint64_t[::1] ends
    cdef uint32_t[::1] offs
    cdef uint64_t[::1] sl

    def __init__(self, int qbits, int rbits, int64_t max_items):
        if qbits < 6:
            raise ValueError("qbits must be >= 6")
        self.qbits = qbits
        self.rbits = rbits
        self.nslots = (<int64_t>1) << qbits
        self.mask = self.nslots - 1
        self.rmask = ((<uint64_t>1) << rbits) - 1
        self.nblocks = self.nslots >> 6
        self.max_items = max_items
        self.count = 0
        self.occupieds = array("Q", bytes(8 * self.nblocks))
        self.runends = array("Q", bytes(8 * self.nblocks))
        self.offsets = array("I", bytes(4 * self.nblocks))
        self.slots = array("Q", bytes(16 * self.nslots))
        self.occ = self.occupieds
        self.ends = self.runends
        self.offs = self.offsets
        self.sl = self.slots

    # -- bit helpers -------------------------------------------------------

    cdef inline int _occupied(self, int64_t x) noexcept nogil:
        return (self.occ[x >> 6] >> (x & 63)) & 1

    cdef inline int _runend(self, int64_t pos) noexcept nogil:
        cdef int64_t i = pos & self.mask
        return (self.ends[i >> 6] >> (i & 63)) & 1

    cdef inline void _set_runend(self, int64_t pos, int bit) noexcept nogil:
        cdef int64_t i = pos & self.mask
        cdef uint64_t m = (<uint64_t>1) << (i & 63)
        if bit:
            self.ends[i >> 6] |= m
        else:
            self.ends[i >> 6] &= ~m

    cdef int64_t _select_from(self, int64_t start, int k) noexcept nogil:
        cdef int64_t pos = start, i
        cdef int sh, c
        cdef uint64_t word
        while True:
            i = pos & self.mask
            sh = i & 63
            word = self.ends[i >> 6] >> sh
            c = __builtin_popcountll(word)
            if c >= k:
                return pos + _select64(word, k - 1)
            k -= c
            pos += 64 - sh

    cdef int64_t _end_before(self, int64_t x, bint inclusive) noexcept nogil:
        cdef int64_t b = x >> 6
        cdef int64_t i0 = b << 6
        cdef int64_t spill = self.offs[b]
        cdef int nbits = <int>(x - i0) + (1 if inclusive else 0)
        cdef uint64_t m
        if nbits >= 64:
            m = ~(<uint64_t>0)
        else:
            m = ((<uint64_t>1) << nbits) - 1
        cdef int d = __builtin_popcountll(self.occ[b] & m)
        if d == 0:
            return i0 + spill - 1
        return self._select_from(i0 + spill, d)

    cdef int64_t _first_unused(self, int64_t pos) noexcept nogil:
        cdef int64_t base, t
        while True:
            base = pos - (pos & self.mask)
            t = self._end_before(pos & self.mask, True) + base
            if t < pos:
                return pos
            pos = t + 1

    cdef int64_t _next_occupied(self, int64_t x, int64_t limit) noexcept nogil:
        cdef int64_t pos = x + 1, i, y
        cdef int sh
        cdef uint64_t word
        while pos <= limit:
            i = pos & self.mask
            sh = i & 63
            word = self.occ[i >> 6] >> sh
            if word:
                y = pos + __builtin_ctzll(word)
                return y if y <= limit else -1
            pos += 64 - sh
        return -1

    cdef void _shift_offsets(self, int64_t home, int64_t last, int delta) noexcept nogil:
        cdef int64_t i0 = ((home >> 6) + 1) << 6
        while i0 <= last:
            self.offs[(i0 & self.mask) >> 6] += delta
            i0 += 64

    cdef inline void _run_bounds(self, int64_t home, int64_t* start, int64_t* end) noexcept nogil:
        cdef int64_t s = self._end_before(home, False) + 1
        if s < home:
            s = home
        start[0] = s
        end[0] = self._end_before(home, True)

    cdef int64_t _find(self, uint64_t fp, int64_t* first) noexcept nogil:
        cdef int64_t home = <int64_t>(fp >> self.rbits)
        cdef uint64_t rem = fp & self.rmask
        cdef int64_t start, end, pos
        if not self._occupied(home):
            first[0] = 0
            return 0
        self._run_bounds(home, &start, &end)
        pos = start
        while pos <= end and self.sl[2 * (pos & self.mask)] < rem:
            pos += 1
        first[0] = pos
        while pos <= end and self.sl[2 * (pos & self.mask)] == rem:
            pos += 1
        return pos - first[0]

    cdef void _shift_right(self, int64_t pos, int64_t empty) noexcept nogil:
        cdef int64_t i = empty, dst, src
        while i > pos:
            dst = i & self.mask
            src = (i - 1) & self.mask
            self.sl[2 * dst] = self.sl[2 * src]
            self.sl[2 * dst + 1] = self.sl[2 * src + 1]
            self._set_runend(i, self._runend(i - 1))
            i -= 1

    cdef int64_t _insert(self, uint64_t fp, uint64_t value) noexcept nogil:
        cdef int64_t home = <int64_t>(fp >> self.rbits)
        cdef uint64_t rem = fp & self.rmask
        cdef int64_t pos, empty, start, end, i
        if not self._occupied(home):
            pos = self._end_before(home, False) + 1
            if pos < home:
                pos = home
            empty = self._first_unused(pos)
            self._shift_right(pos, empty)
            i = pos & self.mask
            self.sl[2 * i] = rem
            self.sl[2 * i + 1] = value
            self._set_runend(pos, 1)
            self.occ[home >> 6] |= (<uint64_t>1) << (home & 63)
        else:
            self._run_bounds(home, &start, &end)
            pos = start
            while pos <= end and self.sl[2 * (pos & self.mask)] <= rem:
                pos += 1
            empty = self._first_unused(pos)
            self._shift_right(pos, empty)
            i = pos & self.mask
            self.sl[2 * i] = rem
            self.sl[2 * i + 1] = value
            if pos == end + 1:
                self._set_runend(end, 0)
                self._set_runend(pos, 1)
            else:
                self._set_runend(pos, 0)
        self._shift_offsets(home, empty, 1)
        self.count += 1
        return pos & self.mask

    # -- python surface ----------------------------------------------------

    def find(self, uint64_t fp):
        cdef int64_t first
        cdef int64_t n = self._find(fp, &first)
        return first, n

    def values(self, uint64_t fp):
        cdef int64_t first, i
        cdef int64_t n = self._find(fp, &first)
        return [self.sl[2 * ((first + i) & self.mask) + 1] for i in range(n)]

    def restore_count(self, int64_t count):
        self.count = count

    def get_value(self, int64_t pos):
        return self.sl[2 * (pos & self.mask) + 1]

    def set_value(self, int64_t pos, uint64_t value):
        self.sl[2 * (pos & self.mask) + 1] = value

    def insert(self, uint64_t fp, uint64_t value):
        if self.count >= self.max_items:
            raise CapacityExceeded
        return self._insert(fp, value)

    def delete(self, uint64_t fp, int64_t pos):
        cdef int64_t home = <int64_t>(fp >> self.rbits)
        cdef int64_t start, end, last, limit, j, i, dst, src, f
        cdef int was_end
        self._run_bounds(home, &start, &end)
        last = end
        limit = home + self.nslots - 1
        j = self._next_occupied(home, limit)
        while j >= 0 and j <= last:
            last = self._select_from(last + 1, 1)
            j = self._next_occupied(j, limit)
        was_end = self._runend(pos)
        i = pos
        while i < last:
            dst = i & self.mask
            src = (i + 1) & self.mask
            self.sl[2 * dst] = self.sl[2 * src]
            self.sl[2 * dst + 1] = self.sl[2 * src + 1]
            self._set_runend(i, self._runend(i + 1))
            i += 1
        f = last & self.mask
        self.sl[2 * f] = 0
        self.sl[2 * f + 1] = 0
        self._set_runend(last, 0)
        if start == end:
            self.occ[home >> 6] &= ~((<uint64_t>1) << (home & 63))
        elif was_end:
            self._set_runend(pos - 1, 1)
        self._shift_offsets(home, last, -1)
        self.count -= 1

    def enumerate(self):
        fps = array("Q", bytes(8 * self.count))
        vals = array("Q", bytes(8 * self.count))
        cdef uint64_t[::1] fo = fps
        cdef uint64_t[::1] vo = vals
        cdef int64_t n = 0, x, start, end, pos, prev_end = 0, i
        cdef bint first_run = True
        cdef uint64_t base
        if self.count == 0:
            return fps, vals
        with nogil:
            x = self._next_occupied(-1, self.nslots - 1)
            while x >= 0:
                if first_run:
                    start = self._end_before(x, False) + 1
                    first_run = False
                else:
                    start = prev_end + 1
                if start < x:
                    start = x
                end = self._select_from(start, 1)
                base = (<uint64_t>x) << self.rbits
                pos = start
                while pos <= end:
                    i = pos & self.mask
                    fo[n] = base | self.sl[2 * i]
                    vo[n] = self.sl[2 * i + 1]
                    n += 1
                    pos += 1
                prev_end = end
                x = self._next_occupied(x, self.nslots - 1)
        return fps, vals

    def count_matches(self, const uint64_t[::1] fps):
        cdef Py_ssize_t n = fps.shape[0], k
        out = array("q", bytes(8 * n))
        cdef int64_t[::1] o = out
        cdef int64_t first
        with nogil:
            for k in range(n):
                o[k] = self._find(fps[k], &first)
        return out

    def lookup_batch(self, const uint64_t[::1] fps):
        cdef Py_ssize_t n = fps.shape[0], k
        counts = array("q", bytes(8 * n))
        cdef int64_t[::1] c = counts
        cdef int64_t first, total = 0, m, i
        with nogil:
            for k in range(n):
                c[k] = self._find(fps[k], &first)
                total += c[k]
        vals = array("Q", bytes(8 * total))
        cdef uint64_t[::1] vo = vals
        total = 0
        with nogil:
            for k in range(n):
                m = self._find(fps[k], &first)
                for i in range(m):
                    vo[total] = self.sl[2 * ((first + i) & self.mask) + 1]
                    total += 1
        return counts, vals

    def add_batch(self, const uint64_t[::1] fps, Py_ssize_t start, uint64_t inc, uint64_t cap):
        cdef Py_ssize_t n = fps.shape[0], i = start
        cdef int64_t first, m, j
        cdef uint64_t v
        with nogil:
            while i < n:
                m = self._find(fps[i], &first)
                if m:
                    j = 2 * (first & self.mask) + 1
                    v = self.sl[j]
                    if v > cap - inc:
                        v = cap
                    else:
                        v = v + inc
                    self.sl[j] = v
                else:
                    if self.count >= self.max_items:
                        break
                    self._insert(fps[i], inc if inc < cap else cap)
                i += 1
        return i
