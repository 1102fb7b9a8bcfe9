"""Control-plane scheduling kernel.

Every request belongs to a class ``(segment, kind)``. A class sees a *view* of
the routing processor: its own arrivals plus the arrivals of every class coupled
into it (``couple[r, c]`` means class ``c`` loads the view of class ``r``). A
request's response time is its completion time in its own view. When all
classes are fully coupled this reduces to a single shared server.

Two service disciplines per view:

* ``PS`` (processor sharing): ``n`` requests in a view each progress at rate
  ``1/n``. Tracked with a virtual clock so each arrival and completion is
  ``O(log n)``.
* ``FIFO``: completion = ``max(arrival, busy_until) + service``.

Admission, checked on the arriving request's own view, in this order: holdoff
window of the class, per-class backlog limit, total view capacity. Rejected
requests get ``NaN`` and never load any view.

With ``slice_us > 0`` (time slicing) host classes are served only during
``[2kS, (2k+1)S)`` and guest classes during ``[(2k+1)S, (2k+2)S)``, and cross
segment coupling is ignored because the segments no longer share the CPU.

The compiled ``_kernel`` extension implements the same arithmetic in the same
order; :func:`serve` dispatches to it when it is importable unless
``CROSSROUTER_PURE`` is set.
"""

from __future__ import annotations

import heapq
import math
import os

import numpy as np

PS = 0
FIFO = 1
DISCIPLINES = {"ps": PS, "fifo": FIFO}


def avail_advance(x: float, work: float, g: int, s: float) -> float:
    """Time at which ``work`` units of segment ``g`` slice time, started at ``x``, are done."""
    if work <= 0.0:
        return x
    period = 2.0 * s
    while True:
        ph = math.fmod(x + g * s, period)
        if ph >= s:
            x += period - ph
            ph = 0.0
        room = s - ph
        if work <= room:
            return x + work
        work -= room
        x += room


def avail_between(a: float, b: float, g: int, s: float) -> float:
    """Amount of segment ``g`` slice time inside ``[a, b)``."""
    total = 0.0
    period = 2.0 * s
    x = a
    while x < b:
        ph = math.fmod(x + g * s, period)
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


def serve_python(t, cls, svc, couple, seg, limit, holdoff, capacity, slice_us, discipline):
    n = len(t)
    n_cls = len(seg)
    finish = np.full(n, np.nan)
    t = [float(x) for x in t]
    cls = [int(x) for x in cls]
    svc = [float(x) for x in svc]
    seg = [int(x) for x in seg]
    limit = [int(x) for x in limit]
    holdoff = [float(x) for x in holdoff]
    s = float(slice_us)
    sliced = s > 0.0
    ps = discipline == PS

    targets = []
    for c in range(n_cls):
        views = [c]
        for r in range(n_cls):
            if r != c and couple[r][c] and not (sliced and seg[r] != seg[c]):
                views.append(r)
        targets.append(views)

    heaps = [[] for _ in range(n_cls)]
    now = [0.0] * n_cls
    vt = [0.0] * n_cls
    own = [0] * n_cls
    busy = [0.0] * n_cls
    hold = [-math.inf] * n_cls
    counter = 0

    def advance_ps(r, until):
        h = heaps[r]
        g = seg[r]
        while h:
            active = len(h)
            vf, _, j = h[0]
            need = (vf - vt[r]) * active
            if need < 0.0:
                need = 0.0
            done = avail_advance(now[r], need, g, s) if sliced else now[r] + need
            if done > until:
                dt = avail_between(now[r], until, g, s) if sliced else until - now[r]
                vt[r] += dt / active
                now[r] = until
                return
            heapq.heappop(h)
            vt[r] = vf
            now[r] = done
            if j >= 0:
                finish[j] = done
                own[r] -= 1
        if until > now[r]:
            now[r] = until

    def advance_fifo(r, until):
        h = heaps[r]
        while h and h[0][0] <= until:
            _, _, j = heapq.heappop(h)
            if j >= 0:
                own[r] -= 1

    advance = advance_ps if ps else advance_fifo

    for i in range(n):
        ti = t[i]
        c = cls[i]
        advance(c, ti)
        if ti < hold[c]:
            continue
        if limit[c] > 0 and own[c] >= limit[c]:
            continue
        if capacity > 0 and len(heaps[c]) >= capacity:
            continue
        if holdoff[c] > 0.0:
            hold[c] = ti + holdoff[c]
        for r in targets[c]:
            j = i if r == c else -1
            if r != c:
                advance(r, ti)
            counter += 1
            if ps:
                heapq.heappush(heaps[r], (vt[r] + svc[i], counter, j))
            else:
                start = busy[r] if busy[r] > ti else ti
                done = avail_advance(start, svc[i], seg[r], s) if sliced else start + svc[i]
                busy[r] = done
                heapq.heappush(heaps[r], (done, counter, j))
                if j >= 0:
                    finish[j] = done
            if j >= 0:
                own[r] += 1

    if ps:
        for r in range(n_cls):
            advance_ps(r, math.inf)
    return finish


try:
    if os.environ.get("CROSSROUTER_PURE"):
        raise ImportError("pure-Python kernel requested")
    from ._kernel import serve as serve_compiled
    BACKEND = "cython"
except ImportError:
    serve_compiled = None
    BACKEND = "python"


def serve(t, cls, svc, couple, seg, limit, holdoff, capacity=0, slice_us=0.0, discipline=PS):
    """Completion time of each request, ``NaN`` where admission rejected it.

    ``t`` must be sorted; requests at equal times are taken in array order.
    """
    t = np.ascontiguousarray(t, dtype=np.float64)
    cls = np.ascontiguousarray(cls, dtype=np.int64)
    svc = np.ascontiguousarray(svc, dtype=np.float64)
    couple = np.ascontiguousarray(couple, dtype=np.uint8)
    seg = np.ascontiguousarray(seg, dtype=np.int64)
    limit = np.ascontiguousarray(limit, dtype=np.int64)
    holdoff = np.ascontiguousarray(holdoff, dtype=np.float64)
    if not (len(t) == len(cls) == len(svc)):
        raise ValueError("t, cls and svc must have equal length")
    if len(t) > 1 and np.any(np.diff(t) < 0):
        raise ValueError("arrival times must be sorted")
    fn = serve_compiled if serve_compiled is not None else serve_python
    return fn(t, cls, svc, couple, seg, limit, holdoff, int(capacity), float(slice_us), int(discipline))
