import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossrouter import kernel


def random_jobs(n, seed, n_classes=4):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, n * 200.0, n))
    cls = rng.integers(0, n_classes, n).astype(np.int64)
    svc = rng.exponential(150.0, n)
    couple = (rng.random((n_classes, n_classes)) < 0.6).astype(np.uint8)
    np.fill_diagonal(couple, 1)
    seg = (np.arange(n_classes) % 2).astype(np.int64)
    limit = np.array([0, 1, 0, 3][:n_classes], dtype=np.int64)
    holdoff = np.array([0.0, 0.0, 500.0, 0.0][:n_classes])
    return t, cls, svc, couple, seg, limit, holdoff


@pytest.mark.skipif(kernel.serve_compiled is None, reason="compiled kernel not built")
@pytest.mark.parametrize("discipline", [kernel.PS, kernel.FIFO])
@pytest.mark.parametrize("slice_us", [0.0, 2_000.0])
def test_backends_bit_identical(discipline, slice_us):
    for seed in range(5):
        args = random_jobs(5000, seed) + (16, slice_us, discipline)
        a = kernel.serve_python(*args)
        b = kernel.serve_compiled(*args)
        assert np.array_equal(a, b, equal_nan=True)


def test_single_class_fifo_matches_lindley():
    rng = np.random.default_rng(1)
    t = np.sort(rng.uniform(0, 1e5, 500))
    svc = rng.exponential(150.0, 500)
    fin = kernel.serve(t, np.zeros(500, dtype=np.int64), svc, np.ones((1, 1)), [0], [0], [0.0],
                       discipline=kernel.FIFO)
    busy, expect = 0.0, []
    for a, s in zip(t, svc):
        busy = max(a, busy) + s
        expect.append(busy)
    assert np.allclose(fin, expect)


def test_ps_two_equal_jobs_finish_together():
    fin = kernel.serve([0.0, 0.0], [0, 0], [100.0, 100.0], np.ones((1, 1)), [0], [0], [0.0])
    assert np.allclose(fin, [200.0, 200.0])


def test_uncoupled_classes_do_not_interact():
    couple = np.eye(2, dtype=np.uint8)
    fin = kernel.serve([0.0, 0.0], [0, 1], [100.0, 100.0], couple, [0, 1], [0, 0], [0.0, 0.0])
    assert np.allclose(fin, [100.0, 100.0])


def test_admission_limit_capacity_and_holdoff():
    one = np.ones((1, 1))
    fin = kernel.serve([0.0, 1.0, 2.0], [0, 0, 0], [10.0] * 3, one, [0], [1], [0.0])
    assert not np.isnan(fin[0]) and np.isnan(fin[1:]).all()
    fin = kernel.serve([0.0, 1.0, 2.0], [0, 0, 0], [10.0] * 3, one, [0], [0], [0.0], capacity=2)
    assert np.isnan(fin[2]) and not np.isnan(fin[:2]).any()
    fin = kernel.serve([0.0, 50.0, 150.0], [0, 0, 0], [1.0] * 3, one, [0], [0], [100.0])
    assert np.isnan(fin[1]) and not np.isnan(fin[[0, 2]]).any()


def test_time_slice_serves_inside_own_slices():
    s = 1000.0
    t = np.array([0.0, 0.0, 100.0, 2500.0])
    fin = kernel.serve(t, [0, 1, 0, 1], [300.0, 300.0, 900.0, 50.0], np.ones((2, 2)), [0, 1], [0, 0], [0.0, 0.0],
                       slice_us=s)
    assert fin[0] == pytest.approx(500.0)   # shares the host slice [0, 1000) with job 2 from t=100
    assert fin[1] == pytest.approx(1300.0)  # guest slice [1000, 2000)
    assert fin[2] == pytest.approx(2200.0)  # 200 us left over for the next host slice
    assert fin[3] == pytest.approx(3050.0)  # waits for the guest slice [3000, 4000)


def test_unsorted_input_rejected():
    with pytest.raises(ValueError):
        kernel.serve([1.0, 0.0], [0, 0], [1.0, 1.0], np.ones((1, 1)), [0], [0], [0.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 400.0))
def test_ps_extra_load_never_speeds_up_probe(seed, extra_rate):
    rng = np.random.default_rng(seed)
    probes = np.arange(1, 41) * 1000.0
    load = np.sort(rng.uniform(0, 41_000.0, int(extra_rate * 0.041)))
    couple = np.ones((2, 2), dtype=np.uint8)

    def probe_finish(load_times):
        t = np.concatenate([probes, load_times])
        cls = np.concatenate([np.zeros(probes.size, dtype=np.int64), np.ones(load_times.size, dtype=np.int64)])
        svc = np.full(t.size, 200.0)
        order = np.lexsort((cls, t))
        fin = np.empty(t.size)
        fin[order] = kernel.serve(t[order], cls[order], svc[order], couple, [0, 1], [0, 0], [0.0, 0.0])
        return fin[:probes.size] - probes

    assert np.all(probe_finish(load) >= probe_finish(load[:0]) - 1e-9)


def test_pure_fallback_selected_by_env():
    import os
    import subprocess
    import sys
    code = ("from crossrouter import kernel, harness;"
            "print(kernel.BACKEND, harness.ber_sweep('dhcp-direct', 'TP2', [3000, 3400], seeds=1).sweep)")
    outs = {}
    for pure in ("", "1"):
        env = dict(os.environ)
        env.pop("CROSSROUTER_PURE", None)
        if pure:
            env["CROSSROUTER_PURE"] = pure
        outs[pure] = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                    check=True).stdout.split(" ", 1)
    assert outs["1"][0] == "python"
    assert outs[""][1] == outs["1"][1]
