"""Compiled inner loops for path sampling.

Each path owns a splitmix64 stream keyed by (root seed, global path index),
so its draws do not depend on how paths are split into shards.  Time runs in
the outer loop so that independent paths overlap in the pipeline.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_KEY = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TO_UNIT = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _next_uniform(state):
    s = state + _GOLDEN
    z = s
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    z = z ^ (z >> np.uint64(31))
    return s, (z >> np.uint64(11)) * _TO_UNIT


@njit(cache=True)
def simulate_shard(seed, first_index, n_paths, n_steps, cum_mu, cum_k, tabs,
                   out_sums, out_paths, keep_paths):
    width = cum_k.shape[2]
    m0 = cum_mu.shape[0]
    block = 512
    st = np.empty(block, dtype=np.uint64)
    xs = np.zeros(block, dtype=np.int64)
    acc = np.zeros(block)
    for b0 in range(0, n_paths, block):
        nb = min(block, n_paths - b0)
        for p in range(nb):
            st[p] = (np.uint64(seed) + np.uint64(first_index + b0 + p) * _KEY) * _GOLDEN
            s, u = _next_uniform(st[p])
            st[p] = s
            y = 0
            for j in range(m0 - 1):
                y += u >= cum_mu[j]
            xs[p] = y
            acc[p] = 0.0
            if keep_paths:
                out_paths[b0 + p, 0] = y
        for t in range(n_steps):
            for p in range(nb):
                s, u = _next_uniform(st[p])
                st[p] = s
                x = xs[p]
                y = 0
                for j in range(width - 1):
                    y += u >= cum_k[t, x, j]
                acc[p] += tabs[t, x, y]
                xs[p] = y
                if keep_paths:
                    out_paths[b0 + p, t + 1] = y
        for p in range(nb):
            out_sums[b0 + p] = acc[p]
