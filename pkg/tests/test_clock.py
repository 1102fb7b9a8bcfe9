import random

import numpy as np
import pytest

from crossrouter.clock import EventQueue, VirtualClock
from crossrouter.errors import PastEvent
from crossrouter.rng import poisson_arrivals, stream


def test_events_run_in_time_order():
    rng = random.Random(7)
    q = EventQueue()
    seen = []
    times = [rng.uniform(0, 1e6) for _ in range(100_000)]
    for i, t in enumerate(times):
        q.schedule(t, lambda t=t, i=i: seen.append((t, i)))
    assert q.run() == len(times)
    assert seen == sorted(zip(times, range(len(times))))
    assert q.clock.now == max(times)


def test_ties_break_by_insertion():
    q = EventQueue()
    out = []
    for k in range(5):
        q.schedule(10.0, lambda k=k: out.append(k))
    q.run()
    assert out == [0, 1, 2, 3, 4]


def test_past_event_rejected():
    q = EventQueue(VirtualClock(5.0))
    with pytest.raises(PastEvent):
        q.schedule(4.0, lambda: None)
    q.schedule(6.0, lambda: q.schedule(5.5, lambda: None))
    with pytest.raises(PastEvent):
        q.run()


def test_run_until_leaves_later_events():
    q = EventQueue()
    for t in (1.0, 2.0, 3.0):
        q.schedule(t, lambda: None)
    assert q.run(until=2.0) == 2
    assert len(q) == 1


def test_streams_are_named_and_reproducible():
    a = stream(3, "x").random(4)
    assert np.array_equal(a, stream(3, "x").random(4))
    assert not np.array_equal(a, stream(3, "y").random(4))
    assert not np.array_equal(a, stream(4, "x").random(4))


def test_poisson_count_and_nesting():
    t, z = poisson_arrivals(0, "load", 400.0, 0.0, 10e6)
    assert abs(t.size - 4000) < 3 * np.sqrt(4000)
    assert np.all(np.diff(t) >= 0) and t.size == z.size
    lo, _ = poisson_arrivals(0, "load", 200.0, 0.0, 10e6)
    assert set(lo.tolist()) <= set(t.tolist())
