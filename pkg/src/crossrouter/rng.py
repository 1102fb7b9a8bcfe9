"""Named, independent random streams derived from one 64-bit seed.

Each consumer draws from its own stream (``stream(seed, "probe")``), so adding
or removing one traffic source never shifts the numbers another one sees.
Paired runs (load on versus off) therefore share every draw they have in common.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def _words(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *names: str) -> np.random.Generator:
    seed = int(seed) & MASK64
    key = [seed & 0xFFFF_FFFF, seed >> 32] + [_words(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(key))


def poisson_arrivals(seed: int, name: str, rate_pps: float, start_us: float, duration_us: float,
                     chunk_pps: float = 100.0) -> tuple[np.ndarray, np.ndarray]:
    """Poisson arrivals in ``[start, start + duration)`` with nested realisations.

    The process is a superposition of independent ``chunk_pps`` streams, the last
    one thinned with common uniforms. A higher rate therefore always contains
    every arrival of a lower rate drawn with the same seed and name, which keeps
    load comparisons path-wise monotone.
    """
    if rate_pps <= 0 or duration_us <= 0:
        return np.empty(0)
    full, frac = divmod(rate_pps, chunk_pps)
    parts, draws = [], []
    k = 0
    while k < full or (k == full and frac > 0):
        g = stream(seed, name, f"chunk{k}")
        n = g.poisson(chunk_pps * duration_us / 1e6)
        times = g.uniform(start_us, start_us + duration_us, n)
        z = g.standard_normal(n)
        if k == full:
            keep = g.uniform(0.0, 1.0, n) < frac / chunk_pps
            times, z = times[keep], z[keep]
        parts.append(times)
        draws.append(z)
        k += 1
    times = np.concatenate(parts)
    z = np.concatenate(draws)
    order = np.argsort(times, kind="stable")
    return times[order], z[order]
