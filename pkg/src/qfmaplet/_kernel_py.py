"""Pure-Python rank/select quotient filter kernel.

This is the fallback for ``_kernel.pyx`` and must stay layout-identical to it:
the same arrays, the same slot placement, the same offsets. Tests compare the
two backends array for array.

Layout
------
``2**q`` slots arranged circularly in 64-slot blocks. Per block:

* ``occupieds`` word: bit ``i`` set iff quotient ``64*b + i`` has a run.
* ``runends`` word: bit ``i`` set iff slot ``64*b + i`` ends a run.
* ``offsets`` entry: how many slots starting at the block's first slot are
  used by runs whose quotient precedes that slot in cluster order.

Slot payloads live in one interleaved array, ``slots[2*i]`` the remainder and
``slots[2*i + 1]`` the value, so a value sits next to its remainder and moves
with it whenever a run is shifted.

Positions handed between helpers are *unwrapped*: they may exceed ``nslots``
when a cluster wraps around the end of the table. ``pos & mask`` is the slot.
"""

from array import array

_ONES = (1 << 64) - 1


class CapacityExceeded(Exception):
    pass


def _select(word, k):
    # position of the k-th (0-based) set bit
    for _ in range(k):
        word &= word - 1
    return (word & -word).bit_length() - 1


class QuotientKernel:
    def __init__(self, qbits, rbits, max_items):
        if qbits < 6:
            raise ValueError("qbits must be >= 6")
        self.qbits = qbits
        self.rbits = rbits
        self.nslots = 1 << qbits
        self.mask = self.nslots - 1
        self.rmask = (1 << rbits) - 1
        self.nblocks = self.nslots >> 6
        self.max_items = max_items
        self.count = 0
        self.occupieds = array("Q", bytes(8 * self.nblocks))
        self.runends = array("Q", bytes(8 * self.nblocks))
        self.offsets = array("I", bytes(4 * self.nblocks))
        self.slots = array("Q", bytes(16 * self.nslots))

    # -- bit helpers -------------------------------------------------------

    def _occupied(self, x):
        return (self.occupieds[x >> 6] >> (x & 63)) & 1

    def _runend(self, pos):
        i = pos & self.mask
        return (self.runends[i >> 6] >> (i & 63)) & 1

    def _set_runend(self, pos, bit):
        i = pos & self.mask
        b = i >> 6
        if bit:
            self.runends[b] |= 1 << (i & 63)
        else:
            self.runends[b] &= _ONES ^ (1 << (i & 63))

    def _select_from(self, start, k):
        """Unwrapped position of the k-th (1-based) runend at or after start."""
        mask = self.mask
        pos = start
        while True:
            i = pos & mask
            sh = i & 63
            word = self.runends[i >> 6] >> sh
            c = word.bit_count()
            if c >= k:
                return pos + _select(word, k - 1)
            k -= c
            pos += 64 - sh

    def _end_before(self, x, inclusive):
        """End of the run of the last occupied quotient before x (or <= x).

        Returns a position below the block start when no such run reaches
        into x's block.
        """
        b = x >> 6
        i0 = b << 6
        spill = self.offsets[b]
        nbits = (x - i0) + (1 if inclusive else 0)
        d = (self.occupieds[b] & ((1 << nbits) - 1)).bit_count()
        if d == 0:
            return i0 + spill - 1
        return self._select_from(i0 + spill, d)

    def _first_unused(self, pos):
        mask = self.mask
        while True:
            base = pos - (pos & mask)
            t = self._end_before(pos & mask, True) + base
            if t < pos:
                return pos
            pos = t + 1

    def _next_occupied(self, x, limit):
        """Smallest occupied quotient y with x < y <= limit (unwrapped), or -1."""
        mask = self.mask
        pos = x + 1
        while pos <= limit:
            i = pos & mask
            sh = i & 63
            word = self.occupieds[i >> 6] >> sh
            if word:
                y = pos + ((word & -word).bit_length() - 1)
                return y if y <= limit else -1
            pos += 64 - sh
        return -1

    def _shift_offsets(self, home, last, delta):
        i0 = ((home >> 6) + 1) << 6
        mask = self.mask
        offsets = self.offsets
        while i0 <= last:
            offsets[(i0 & mask) >> 6] += delta
            i0 += 64

    def _run_bounds(self, home):
        start = self._end_before(home, False) + 1
        if start < home:
            start = home
        return start, self._end_before(home, True)

    # -- queries -----------------------------------------------------------

    def find(self, fp):
        """(first unwrapped slot, match count) for fingerprint fp."""
        home = fp >> self.rbits
        if not self._occupied(home):
            return 0, 0
        rem = fp & self.rmask
        start, end = self._run_bounds(home)
        slots = self.slots
        mask = self.mask
        pos = start
        while pos <= end and slots[2 * (pos & mask)] < rem:
            pos += 1
        first = pos
        while pos <= end and slots[2 * (pos & mask)] == rem:
            pos += 1
        return first, pos - first

    def values(self, fp):
        first, n = self.find(fp)
        slots = self.slots
        mask = self.mask
        return [slots[2 * ((first + i) & mask) + 1] for i in range(n)]

    def restore_count(self, count):
        self.count = count

    def get_value(self, pos):
        return self.slots[2 * (pos & self.mask) + 1]

    def set_value(self, pos, value):
        self.slots[2 * (pos & self.mask) + 1] = value

    # -- mutation ----------------------------------------------------------

    def insert(self, fp, value):
        """Insert one instance; returns its slot index."""
        if self.count >= self.max_items:
            raise CapacityExceeded
        home = fp >> self.rbits
        rem = fp & self.rmask
        slots = self.slots
        mask = self.mask
        if not self._occupied(home):
            pos = self._end_before(home, False) + 1
            if pos < home:
                pos = home
            empty = self._first_unused(pos)
            self._shift_right(pos, empty)
            i = pos & mask
            slots[2 * i] = rem
            slots[2 * i + 1] = value
            self._set_runend(pos, 1)
            self.occupieds[home >> 6] |= 1 << (home & 63)
        else:
            start, end = self._run_bounds(home)
            pos = start
            while pos <= end and slots[2 * (pos & mask)] <= rem:
                pos += 1
            empty = self._first_unused(pos)
            self._shift_right(pos, empty)
            i = pos & mask
            slots[2 * i] = rem
            slots[2 * i + 1] = value
            if pos == end + 1:
                self._set_runend(end, 0)
                self._set_runend(pos, 1)
            else:
                self._set_runend(pos, 0)
        self._shift_offsets(home, empty, 1)
        self.count += 1
        return pos & mask

    def _shift_right(self, pos, empty):
        slots = self.slots
        mask = self.mask
        i = empty
        while i > pos:
            dst = i & mask
            src = (i - 1) & mask
            slots[2 * dst] = slots[2 * src]
            slots[2 * dst + 1] = slots[2 * src + 1]
            self._set_runend(i, self._runend(i - 1))
            i -= 1

    def delete(self, fp, pos):
        """Remove the instance of fp stored at unwrapped position pos."""
        home = fp >> self.rbits
        start, end = self._run_bounds(home)
        mask = self.mask
        last = end
        limit = home + self.nslots - 1
        j = self._next_occupied(home, limit)
        while j >= 0 and j <= last:
            last = self._select_from(last + 1, 1)
            j = self._next_occupied(j, limit)
        was_end = self._runend(pos)
        slots = self.slots
        i = pos
        while i < last:
            dst = i & mask
            src = (i + 1) & mask
            slots[2 * dst] = slots[2 * src]
            slots[2 * dst + 1] = slots[2 * src + 1]
            self._set_runend(i, self._runend(i + 1))
            i += 1
        f = last & mask
        slots[2 * f] = 0
        slots[2 * f + 1] = 0
        self._set_runend(last, 0)
        if start == end:
            self.occupieds[home >> 6] &= _ONES ^ (1 << (home & 63))
        elif was_end:
            self._set_runend(pos - 1, 1)
        self._shift_offsets(home, last, -1)
        self.count -= 1

    # -- bulk --------------------------------------------------------------

    def enumerate(self):
        """All (fingerprint, value) instances as two arrays, fingerprint order."""
        fps = array("Q")
        vals = array("Q")
        if self.count == 0:
            return fps, vals
        slots = self.slots
        mask = self.mask
        r = self.rbits
        prev_end = None
        x = self._next_occupied(-1, self.nslots - 1)
        while x >= 0:
            if prev_end is None:
                start = self._end_before(x, False) + 1
            else:
                start = prev_end + 1
            if start < x:
                start = x
            end = self._select_from(start, 1)
            base = x << r
            for pos in range(start, end + 1):
                i = pos & mask
                fps.append(base | slots[2 * i])
                vals.append(slots[2 * i + 1])
            prev_end = end
            x = self._next_occupied(x, self.nslots - 1)
        return fps, vals

    def count_matches(self, fps):
        out = array("q", bytes(8 * len(fps)))
        for n, fp in enumerate(fps):
            out[n] = self.find(int(fp))[1]
        return out

    def lookup_batch(self, fps):
        """Per-fingerprint match counts plus all matched values, concatenated."""
        counts = array("q", bytes(8 * len(fps)))
        vals = array("Q")
        for n, fp in enumerate(fps):
            v = self.values(int(fp))
            counts[n] = len(v)
            vals.extend(v)
        return counts, vals

    def add_batch(self, fps, start, inc, cap):
        """Counter fast path: fold inc into each fingerprint's single slot.

        Stops before an insert that would exceed max_items and returns the
        index of the first unprocessed fingerprint.
        """
        n = len(fps)
        i = start
        while i < n:
            fp = int(fps[i])
            first, m = self.find(fp)
            if m:
                v = self.get_value(first) + inc
                self.set_value(first, cap if v > cap else v)
            else:
                if self.count >= self.max_items:
                    return i
                self.insert(fp, inc if inc < cap else cap)
            i += 1
        return n
