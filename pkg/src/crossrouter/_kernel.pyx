# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of :func:`crossrouter.kernel.serve_python`.

Same arithmetic in the same order, so both backends agree bit for bit when the
C compiler does not contract multiply-adds.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fmod, INFINITY, NAN
from libc.stdlib cimport malloc, realloc, free

cnp.import_array()

cdef int PS = 0


cdef struct Heap:
    double *key
    long long *order
    long long *job
    Py_ssize_t size
    Py_ssize_t cap


cdef inline bint _less(Heap *h, Py_ssize_t a, Py_ssize_t b) nogil:
    if h.key[a] < h.key[b]:
        return True
    if h.key[a] > h.key[b]:
        return False
    return h.order[a] < h.order[b]


cdef inline void _swap(Heap *h, Py_ssize_t a, Py_ssize_t b) nogil:
    cdef double k = h.key[a]
    cdef long long o = h.order[a]
    cdef long long j = h.job[a]
    h.key[a] = h.key[b]
    h.order[a] = h.order[b]
    h.job[a] = h.job[b]
    h.key[b] = k
    h.order[b] = o
    h.job[b] = j


cdef int _push(Heap *h, double key, long long order, long long job) except -1:
    cdef Py_ssize_t i, parent, newcap
    if h.size == h.cap:
        newcap = h.cap * 2 if h.cap else 16
        h.key = <double *> realloc(h.key, newcap * sizeof(double))
        h.order = <long long *> realloc(h.order, newcap * sizeof(long long))
        h.job = <long long *> realloc(h.job, newcap * sizeof(long long))
        if h.key == NULL or h.order == NULL or h.job == NULL:
            raise MemoryError()
        h.cap = newcap
    i = h.size
    h.key[i] = key
    h.order[i] = order
    h.job[i] = job
    h.size += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(h, i, parent):
            _swap(h, i, parent)
            i = parent
        else:
            break
    return 0


cdef void _pop(Heap *h) nogil:
    cdef Py_ssize_t i = 0, l, r, m
    h.size -= 1
    if h.size == 0:
        return
    h.key[0] = h.key[h.size]
    h.order[0] = h.order[h.size]
    h.job[0] = h.job[h.size]
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < h.size and _less(h, l, m):
            m = l
        if r < h.size and _less(h, r, m):
            m = r
        if m == i:
            break
        _swap(h, i, m)
        i = m


cdef double avail_advance(double x, double work, long long g, double s) nogil:
    cdef double period = 2.0 * s
    cdef double ph, room
    if work <= 0.0:
        return x
    while True:
        ph = fmod(x + g * s, period)
        if ph >= s:
            x += period - ph
            ph = 0.0
        room = s - ph
        if work <= room:
            return x + work
        work -= room
        x += room


cdef double avail_between(double a, double b, long long g, double s) nogil:
    cdef double total = 0.0
    cdef double period = 2.0 * s
    cdef double x = a
    cdef double ph, end
    while x < b:
        ph = fmod(x + g * s, period)
        if ph >= s:
            x += period - ph
            continue
        end = x + (s - ph)
        if end >= b:
            total += b - x
            break
        total += end - x
        x = end
    return total


cdef void _advance_ps(Heap *h, Py_ssize_t r, double until, double *now, double *vt,
                      long long *own, long long g, double s, bint sliced,
                      double[::1] finish) nogil:
    cdef Py_ssize_t active
    cdef double vf, need, done, dt
    cdef long long j
    while h.size > 0:
        active = h.size
        vf = h.key[0]
        j = h.job[0]
        need = (vf - vt[r]) * active
        if need < 0.0:
            need = 0.0
        if sliced:
            done = avail_advance(now[r], need, g, s)
        else:
            done = now[r] + need
        if done > until:
            if sliced:
                dt = avail_between(now[r], until, g, s)
            else:
                dt = until - now[r]
            vt[r] += dt / active
            now[r] = until
            return
        _pop(h)
        vt[r] = vf
        now[r] = done
        if j >= 0:
            finish[j] = done
            own[r] -= 1
    if until > now[r]:
        now[r] = until


cdef void _advance_fifo(Heap *h, Py_ssize_t r, double until, long long *own) nogil:
    while h.size > 0 and h.key[0] <= until:
        if h.job[0] >= 0:
            own[r] -= 1
        _pop(h)


def serve(const double[::1] t, const long long[::1] cls, const double[::1] svc,
          const unsigned char[:, ::1] couple, const long long[::1] seg,
          const long long[::1] limit, const double[::1] holdoff,
          long long capacity, double slice_us, int discipline):
    cdef Py_ssize_t n = t.shape[0]
    cdef Py_ssize_t n_cls = seg.shape[0]
    cdef Py_ssize_t i, r, k
    cdef long long c, j, counter = 0
    cdef double ti, start, done
    cdef bint sliced = slice_us > 0.0
    cdef bint ps = discipline == PS
    cdef double s = slice_us

    out = np.full(n, np.nan)
    cdef double[::1] finish = out

    cdef Heap *heaps = <Heap *> malloc(n_cls * sizeof(Heap))
    cdef double *now = <double *> malloc(n_cls * sizeof(double))
    cdef double *vt = <double *> malloc(n_cls * sizeof(double))
    cdef double *busy = <double *> malloc(n_cls * sizeof(double))
    cdef double *hold = <double *> malloc(n_cls * sizeof(double))
    cdef long long *own = <long long *> malloc(n_cls * sizeof(long long))
    # targets[c] lists the views a class-c arrival enters, own view first
    cdef long long *targets = <long long *> malloc(n_cls * n_cls * sizeof(long long))
    cdef long long *n_targets = <long long *> malloc(n_cls * sizeof(long long))
    if (heaps == NULL or now == NULL or vt == NULL or busy == NULL or hold == NULL
            or own == NULL or targets == NULL or n_targets == NULL):
        raise MemoryError()

    try:
        for r in range(n_cls):
            heaps[r].key = NULL
            heaps[r].order = NULL
            heaps[r].job = NULL
            heaps[r].size = 0
            heaps[r].cap = 0
            now[r] = 0.0
            vt[r] = 0.0
            busy[r] = 0.0
            hold[r] = -INFINITY
            own[r] = 0
        for c in range(n_cls):
            targets[c * n_cls] = c
            n_targets[c] = 1
            for r in range(n_cls):
                if r != c and couple[r, c] and not (sliced and seg[r] != seg[c]):
                    targets[c * n_cls + n_targets[c]] = r
                    n_targets[c] += 1

        for i in range(n):
            ti = t[i]
            c = cls[i]
            if ps:
                _advance_ps(&heaps[c], c, ti, now, vt, own, seg[c], s, sliced, finish)
            else:
                _advance_fifo(&heaps[c], c, ti, own)
            if ti < hold[c]:
                continue
            if limit[c] > 0 and own[c] >= limit[c]:
                continue
            if capacity > 0 and heaps[c].size >= capacity:
                continue
            if holdoff[c] > 0.0:
                hold[c] = ti + holdoff[c]
            for k in range(n_targets[c]):
                r = targets[c * n_cls + k]
                j = i if r == c else -1
                if r != c:
                    if ps:
                        _advance_ps(&heaps[r], r, ti, now, vt, own, seg[r], s, sliced, finish)
                    else:
                        _advance_fifo(&heaps[r], r, ti, own)
                counter += 1
                if ps:
                    _push(&heaps[r], vt[r] + svc[i], counter, j)
                else:
                    start = busy[r] if busy[r] > ti else ti
                    if sliced:
                        done = avail_advance(start, svc[i], seg[r], s)
                    else:
                        done = start + svc[i]
                    busy[r] = done
                    _push(&heaps[r], done, counter, j)
                    if j >= 0:
                        finish[j] = done
                if j >= 0:
                    own[r] += 1

        if ps:
            for r in range(n_cls):
                _advance_ps(&heaps[r], r, INFINITY, now, vt, own, seg[r], s, sliced, finish)
    finally:
        for r in range(n_cls):
            free(heaps[r].key)
            free(heaps[r].order)
            free(heaps[r].job)
        free(heaps)
        free(now)
        free(vt)
        free(busy)
        free(hold)
        free(own)
        free(targets)
        free(n_targets)
    return out
