"""Statistics and defences: Welch t-test, rate and correlation detectors, mitigations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateSample

RATE_ANOMALY = "rate_anomaly"
CROSS_SEGMENT = "cross_segment_correlation"


@dataclass(frozen=True)
class TTestResult:
    t_stat: float
    dof: float
    p_value: float
    mean_a: float
    mean_b: float


def t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided Welch (unequal variance) t-test.

    Zero variance in both samples is handled explicitly: equal means give
    ``t = 0, p = 1``; different means give ``p = 0`` with an infinite ``t``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DegenerateSample(f"need at least 2 samples per group, got {a.size} and {b.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DegenerateSample("samples must be finite")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    na, nb = a.size, b.size
    se2 = va / na + vb / nb
    if se2 == 0.0:
        if ma == mb:
            return TTestResult(0.0, float(na + nb - 2), 1.0, ma, mb)
        return TTestResult(math.copysign(math.inf, ma - mb), float(na + nb - 2), 0.0, ma, mb)
    t = (ma - mb) / math.sqrt(se2)
    denom = (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)
    dof = se2 * se2 / denom
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), dof)))
    return TTestResult(float(t), float(dof), p, ma, mb)


def permutation_p(a, b, n_perm: int = 20000, seed: int = 0) -> float:
    """Two-sided permutation p-value for a difference in means (test oracle)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    pooled = np.concatenate([a, b])
    observed = abs(a.mean() - b.mean())
    rng = np.random.default_rng(seed)
    idx = np.argsort(rng.random((n_perm, pooled.size)), axis=1)
    perm = pooled[idx]
    diffs = np.abs(perm[:, :a.size].mean(axis=1) - perm[:, a.size:].mean(axis=1))
    return float((np.sum(diffs >= observed - 1e-12) + 1) / (n_perm + 1))


@dataclass(frozen=True)
class Alarm:
    window_start: float
    segment: str
    kind: str
    score: float
    proto: str = ""


def rate_monitor(timeline, window_us: float = 1e6, threshold_pps: float = 50.0,
                 start_us: float = 0.0, end_us: Optional[float] = None) -> list[Alarm]:
    """Flag each (window, segment, protocol) whose frame rate is strictly above the threshold.

    ``timeline`` is anything with ``times``, ``segments`` (0 host, 1 guest) and
    ``protos`` arrays, e.g. :meth:`Simulation.timeline`.
    """
    if window_us <= 0:
        raise ValueError("window must be positive")
    times = np.asarray(timeline.times, dtype=np.float64)
    if end_us is None:
        end_us = float(times.max()) + 1.0 if times.size else start_us
    n_win = max(0, int(math.ceil((end_us - start_us) / window_us)))
    alarms = []
    segs = np.asarray(timeline.segments)
    protos = np.asarray(timeline.protos)
    for s_idx, seg in enumerate(("host", "guest")):
        for proto in sorted(set(protos[segs == s_idx].tolist())):
            sel = times[(segs == s_idx) & (protos == proto)]
            idx = np.floor((sel - start_us) / window_us).astype(np.int64)
            idx = idx[(idx >= 0) & (idx < n_win)]
            counts = np.bincount(idx, minlength=n_win)
            rates = counts / (window_us / 1e6)
            for w in np.nonzero(rates > threshold_pps)[0]:
                alarms.append(Alarm(start_us + w * window_us, seg, RATE_ANOMALY, float(rates[w]), proto))
    alarms.sort(key=lambda a: (a.window_start, a.segment, a.proto))
    return alarms


def _window_rates(times, start, window, n_win):
    idx = np.floor((np.asarray(times, dtype=np.float64) - start) / window).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < n_win)]
    return np.bincount(idx, minlength=n_win) / (window / 1e6)


def correlate_segments(host_times, guest_times, window_us: float = 100_000.0, baseline_windows: int = 50,
                       percentile: float = 95.0, persistence: int = 3,
                       start_us: float = 0.0, end_us: Optional[float] = None) -> list[Alarm]:
    """Alarm when both segments exceed their baseline rate together for ``persistence`` windows.

    The baseline is the given percentile of each segment's per-window request
    rate over the first ``baseline_windows`` windows. The score is the smaller of
    the two excesses over baseline.
    """
    host_times = np.asarray(host_times, dtype=np.float64)
    guest_times = np.asarray(guest_times, dtype=np.float64)
    if end_us is None:
        last = [x.max() for x in (host_times, guest_times) if x.size]
        end_us = max(last) + 1.0 if last else start_us
    n_win = max(0, int(math.ceil((end_us - start_us) / window_us)))
    if n_win <= baseline_windows:
        return []
    h = _window_rates(host_times, start_us, window_us, n_win)
    g = _window_rates(guest_times, start_us, window_us, n_win)
    hb = float(np.percentile(h[:baseline_windows], percentile))
    gb = float(np.percentile(g[:baseline_windows], percentile))
    hot = (h > hb) & (g > gb)
    hot[:baseline_windows] = False
    alarms = []
    run = 0
    for w in range(n_win):
        run = run + 1 if hot[w] else 0
        if run >= persistence:
            score = float(min(h[w] - hb, g[w] - gb))
            alarms.append(Alarm(start_us + w * window_us, "both", CROSS_SEGMENT, score))
    return alarms


def export_alarms(alarms: Iterable[Alarm], fp: IO[str]) -> None:
    fp.write("window_start_us,segment,kind,score\n")
    for a in alarms:
        fp.write(f"{a.window_start:.0f},{a.segment},{a.kind},{a.score:.6g}\n")


@dataclass(frozen=True)
class MitigationConfig:
    mode: str = "none"  # none | random_delay | time_slice
    max_us: float = 0.0
    slice_us: float = 0.0

    def __post_init__(self):
        if self.mode not in ("none", "random_delay", "time_slice"):
            raise ValueError(f"unknown mitigation mode {self.mode!r}")
        if self.mode == "random_delay" and not self.max_us > 0:
            raise ValueError("random delay needs max_us > 0")
        if self.mode == "time_slice" and not self.slice_us > 0:
            raise ValueError("time slicing needs slice_us > 0")

    @classmethod
    def none(cls) -> "MitigationConfig":
        return cls()

    @classmethod
    def random_delay(cls, max_us: float) -> "MitigationConfig":
        return cls("random_delay", max_us=float(max_us))

    @classmethod
    def time_slice(cls, slice_us: float = 10_000.0) -> "MitigationConfig":
        return cls("time_slice", slice_us=float(slice_us))

    def describe(self) -> str:
        if self.mode == "random_delay":
            return f"random_delay({self.max_us:g}us)"
        if self.mode == "time_slice":
            return f"time_slice({self.slice_us:g}us)"
        return "none"


def apply_mitigation(profile, config: MitigationConfig):
    """A router for ``profile`` whose control plane applies ``config``."""
    from .router import Router

    base = profile.profile if hasattr(profile, "profile") else profile
    return Router(base, None if config.mode == "none" else config)
