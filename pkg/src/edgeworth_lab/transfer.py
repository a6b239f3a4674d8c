"""Exact characteristic functions, moments and lattice laws of S_N via transfer products."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.special import comb

from ._quadrature import adaptive_simpson
from .chain import AdditiveFunctional, ChainSpec, centered, check_compatible, marginal_laws, \
    sample_paths, summand_means
from .errors import DegenerateVarianceError, OverflowGuardError, RangeError, UnsupportedInputError

DKW_DELTA = 1e-3
_PRUNE = 1e-300


@dataclass(frozen=True)
class CharFnTable:
    """Phi_N on a grid.  ``log_abs`` stays finite when |Phi_N| underflows."""

    xi: np.ndarray
    values: np.ndarray
    log_abs: np.ndarray
    centered: bool
    mean: float

    @property
    def abs(self) -> np.ndarray:
        return np.abs(self.values)


def _separable(table: np.ndarray, tol: float = 1e-13):
    """(a, b) with table[x, y] = a[x] + b[y], or None."""
    a = table[:, 0] - table[0, 0]
    b = table[0, :]
    if np.max(np.abs(table - a[:, None] - b[None, :]), initial=0.0) <= tol * max(1.0, np.max(np.abs(table))):
        return a, b
    return None


def _step(v: np.ndarray, kernel: np.ndarray, table: np.ndarray, w: np.ndarray, sep) -> np.ndarray:
    """One transfer step v -> v (K * exp(w f)) for a batch of multipliers w."""
    if sep is not None:
        a, b = sep
        return ((v * np.exp(w[:, None] * a[None, :])) @ kernel) * np.exp(w[:, None] * b[None, :])
    op = kernel[None, :, :] * np.exp(w[:, None, None] * table[None, :, :])
    return np.matmul(v[:, None, :], op)[:, 0, :]


def _chunks(n_points: int, m: int, budget: int = 4_000_000):
    size = max(1, budget // max(1, m * m))
    for lo in range(0, n_points, size):
        yield slice(lo, min(n_points, lo + size))


def char_fn(chain: ChainSpec, f: AdditiveFunctional, xi_grid, N: int | None = None,
            center: bool = False) -> CharFnTable:
    """E exp(i xi S_N) for every xi in the grid (or of S_N - E S_N when ``center``)."""
    N = check_compatible(chain, f, N)
    xi = np.atleast_1d(np.asarray(xi_grid, dtype=float))
    mean = float(summand_means(chain, f, N).sum()) if N else 0.0
    values = np.empty(xi.size, dtype=complex)
    log_abs = np.empty(xi.size)
    m = max(chain.sizes)
    seps = [_separable(f.tables[t]) for t in range(N)]
    budget = 4_000_000 if any(s is None for s in seps) else 4_000_000 * m
    for sl in _chunks(xi.size, m, budget):
        x = xi[sl]
        v = np.broadcast_to(chain.mu1.astype(complex), (x.size, chain.sizes[0])).copy()
        log_scale = np.zeros(x.size)
        for t in range(N):
            v = _step(v, chain.kernels[t], f.tables[t], 1j * x, seps[t])
            s = np.max(np.abs(v), axis=1)
            s = np.where(s > 0, s, 1.0)
            v /= s[:, None]
            log_scale += np.log(s)
        total = v.sum(axis=1)
        if center:
            total = total * np.exp(-1j * x * mean)
        with np.errstate(divide="ignore"):
            la = log_scale + np.log(np.abs(total))
        log_abs[sl] = la
        values[sl] = np.where(np.isfinite(la), np.exp(log_scale) * total, 0.0)
    zero = xi == 0
    values[zero] = 1.0
    log_abs[zero] = 0.0
    return CharFnTable(xi=xi, values=values, log_abs=log_abs, centered=center, mean=mean)


def log_mgf(chain: ChainSpec, f: AdditiveFunctional, z, N: int | None = None,
            center: bool = True, prefixes: bool = False) -> np.ndarray:
    """log E exp(z S_n) for complex z, on the branch continuous from log 1 = 0.

    The transfer vector is renormalized by its total mass each step and the
    principal logs of the per-step ratios are summed; for |z| small enough each
    ratio stays near 1, so the sum is the analytic branch.  With ``prefixes``
    the result has one row per n = 1..N.
    """
    N = check_compatible(chain, f, N)
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    g = centered(chain, f, N) if center else f
    v = np.broadcast_to(chain.mu1.astype(complex), (z.size, chain.sizes[0])).copy()
    acc = np.zeros(z.size, dtype=complex)
    out = np.empty((N, z.size), dtype=complex) if prefixes else None
    for t in range(N):
        v = _step(v, chain.kernels[t], g.tables[t], z, _separable(g.tables[t]))
        s = v.sum(axis=1)
        acc += np.log(s)
        v /= s[:, None]
        if prefixes:
            out[t] = acc
    return out if prefixes else acc


def exact_moments(chain: ChainSpec, f: AdditiveFunctional, k_max: int, N: int | None = None,
                  center: bool = True) -> np.ndarray:
    """E[S_N^j] for j = 0..k_max, with S_N centered by its mean unless ``center`` is False."""
    if k_max < 1:
        raise RangeError("k_max must be at least 1")
    N = check_compatible(chain, f, N)
    g = centered(chain, f, N) if center else f
    binom = np.array([[comb(j, l, exact=True) if l <= j else 0 for l in range(k_max + 1)]
                      for j in range(k_max + 1)], dtype=float)
    m = np.zeros((k_max + 1, chain.sizes[0]))
    m[0] = chain.mu1
    for t in range(N):
        R = chain.kernels[t]
        F = g.tables[t]
        # T[p] = R * F^p
        T = np.empty((k_max + 1,) + R.shape)
        T[0] = R
        with np.errstate(over="ignore", invalid="ignore"):
            for p in range(1, k_max + 1):
                T[p] = T[p - 1] * F
            new = np.zeros((k_max + 1, R.shape[1]))
            for j in range(k_max + 1):
                for l in range(j + 1):
                    new[j] += binom[j, l] * (m[l] @ T[j - l])
        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > 1e300:
            raise OverflowGuardError(
                f"moment recursion exceeded 1e300 at step {t}; center the functional first")
        m = new
    return m.sum(axis=1)


def mean_and_sigma(chain: ChainSpec, f: AdditiveFunctional, N: int | None = None) -> tuple[float, float]:
    N = check_compatible(chain, f, N)
    mean = float(summand_means(chain, f, N).sum())
    var = float(exact_moments(chain, f, 2, N)[2])
    return mean, math.sqrt(max(var, 0.0))


@dataclass(frozen=True)
class LatticePMF:
    """Law of S on (1/denominator)Z: P(S = (offset + k)/denominator) = probs[k]."""

    denominator: int
    offset: int
    probs: object
    provenance: str = "exact"

    @property
    def is_rational(self) -> bool:
        return not isinstance(self.probs, np.ndarray)

    def as_float(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs]) if self.is_rational else self.probs

    @property
    def values(self) -> np.ndarray:
        return (self.offset + np.arange(len(self.probs))) / self.denominator

    def total(self):
        return sum(self.probs) if self.is_rational else float(np.sum(self.probs))

    def mean(self) -> float:
        p = self.as_float()
        return float(p @ self.values)

    def variance(self) -> float:
        p, v = self.as_float(), self.values
        mu = p @ v
        return float(p @ (v - mu) ** 2)

    def max_atom(self) -> float:
        return float(np.max(self.as_float()))

    def support(self) -> np.ndarray:
        p = self.as_float()
        return self.values[p > 0]

    def min_gap(self) -> float:
        s = self.support()
        return float(np.min(np.diff(s))) if s.size > 1 else math.inf

    def fourier(self, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        p = self.as_float()
        keep = p > 0
        return np.exp(1j * np.outer(xi, self.values[keep])) @ p[keep]

    def normalized(self, mean: float, sigma: float):
        """Step CDF of (S - mean)/sigma."""
        from .edgeworth import StepCDF
        p = self.as_float()
        keep = p > 0
        return StepCDF((self.values[keep] - mean) / sigma, p[keep])


def _independent_layout(chain: ChainSpec, f: AdditiveFunctional, N: int):
    """Per-summand (law, integer values) when S_N is a sum of independent f_t(X_t), else None."""
    if any(not chain.is_rank_one(t) for t in range(N - 1)):
        return None
    if any(not f.depends_on_first_only(t) for t in range(N)):
        return None
    laws = [chain.mu1] + [chain.kernels[t][0] for t in range(N - 1)]
    return [(laws[t], f.numerators[t][:, 0]) for t in range(N)]


def _convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.size * b.size <= 5e7:
        out = np.convolve(a, b)
    else:
        out = signal.fftconvolve(a, b)
        out[out < _PRUNE] = 0.0
    return out


def _group_pmf_real(law: np.ndarray, vals: np.ndarray, m: int) -> tuple[int, np.ndarray, int]:
    """Law of the sum of m iid copies; returns (offset, probs, stride)."""
    table = defaultdict(float)
    for p, v in zip(law, vals):
        if p > 0:
            table[int(v)] += float(p)
    support = sorted(table)
    lo = support[0]
    if len(support) == 1:
        return lo * m, np.ones(1), 1
    g = 0
    for v in support:
        g = math.gcd(g, v - lo)
    base = np.zeros((support[-1] - lo) // g + 1)
    for v in support:
        base[(v - lo) // g] = table[v]
    if len(support) == 2:
        from scipy.stats import binom
        probs = np.zeros(m * (base.size - 1) + 1)
        probs[::base.size - 1] = binom.pmf(np.arange(m + 1), m, table[support[-1]])
    else:
        probs, power, e = np.ones(1), base, m
        while e:
            if e & 1:
                probs = _convolve(probs, power)
            e >>= 1
            if e:
                power = _convolve(power, power)
    return lo * m, probs, g


def _spread(probs: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return probs
    out = np.zeros((probs.size - 1) * stride + 1)
    out[::stride] = probs
    return out


def _independent_real(layout) -> tuple[int, np.ndarray]:
    groups = Counter()
    keyed = {}
    for law, vals in layout:
        key = (tuple(np.round(law, 17)), tuple(int(v) for v in vals))
        groups[key] += 1
        keyed[key] = (law, vals)
    offset, probs = 0, np.ones(1)
    for key in sorted(groups):
        law, vals = keyed[key]
        o, p, g = _group_pmf_real(law, vals, groups[key])
        probs = _convolve(probs, _spread(p, g))
        offset += o
    nz = np.nonzero(probs > 0)[0]
    return offset + int(nz[0]), probs[nz[0]:nz[-1] + 1]


def _dp_real(chain: ChainSpec, f: AdditiveFunctional, N: int) -> tuple[int, np.ndarray]:
    P = np.asarray(chain.mu1, dtype=float)[:, None].copy()
    offset = 0
    for t in range(N):
        R, num = chain.kernels[t], f.numerators[t]
        lo, hi = int(num.min()), int(num.max())
        K = P.shape[1]
        new = np.zeros((R.shape[1], K + hi - lo))
        for x in range(R.shape[0]):
            if not P[x].any():
                continue
            for y in range(R.shape[1]):
                if R[x, y] > 0:
                    s = int(num[x, y]) - lo
                    new[y, s:s + K] += R[x, y] * P[x]
        new[new < _PRUNE] = 0.0
        offset += lo
        cols = np.nonzero(new.any(axis=0))[0]
        P = new[:, cols[0]:cols[-1] + 1]
        offset += int(cols[0])
    return offset, P.sum(axis=0)


def _dp_rational(chain: ChainSpec, f: AdditiveFunctional, N: int) -> tuple[int, tuple]:
    kernels = chain.exact_kernels or tuple(
        tuple(tuple(Fraction(float(v)) for v in row) for row in k) for k in chain.kernels)
    state = {(x, 0): Fraction(float(p)) if not isinstance(p, Fraction) else p
             for x, p in enumerate(chain.mu1) if p > 0}
    for t in range(N):
        R, num = kernels[t], f.numerators[t]
        new = defaultdict(Fraction)
        for (x, k), p in state.items():
            for y, r in enumerate(R[x]):
                if r:
                    new[(y, k + int(num[x][y]))] += p * r
        state = new
    law = defaultdict(Fraction)
    for (_, k), p in state.items():
        law[k] += p
    lo, hi = min(law), max(law)
    return lo, tuple(law.get(k, Fraction(0)) for k in range(lo, hi + 1))


def lattice_distribution(chain: ChainSpec, f: AdditiveFunctional, N: int | None = None,
                         rational: bool = False) -> LatticePMF:
    """Exact law of S_N for a lattice functional.

    Sums of independent summands are convolved group by group; otherwise a
    dynamic program over (state, accumulated numerator) runs in O(N M^2 K).
    Real mode prunes masses below 1e-300; rational mode is exact.
    """
    if f.lattice is None:
        raise UnsupportedInputError("lattice_distribution needs a functional with lattice metadata")
    N = check_compatible(chain, f, N)
    if N == 0:
        return LatticePMF(f.lattice, 0, (Fraction(1),) if rational else np.ones(1))
    if rational:
        offset, probs = _dp_rational(chain, f, N)
        return LatticePMF(f.lattice, offset, probs, "exact")
    layout = _independent_layout(chain, f, N)
    if layout is not None:
        offset, probs = _independent_real(layout)
    else:
        offset, probs = _dp_real(chain, f, N)
    return LatticePMF(f.lattice, offset, probs, "exact")


@dataclass(frozen=True)
class EmpiricalCDF:
    """Empirical law of the normalized sum with its DKW half-width."""

    sorted_samples: np.ndarray
    halfwidth: float
    mean: float
    sigma: float
    delta: float = DKW_DELTA

    def __call__(self, t) -> np.ndarray:
        return np.searchsorted(self.sorted_samples, np.asarray(t, dtype=float), side="right") \
            / self.sorted_samples.size

    def step_cdf(self):
        from .edgeworth import StepCDF
        vals, counts = np.unique(self.sorted_samples, return_counts=True)
        return StepCDF(vals, counts / self.sorted_samples.size)


def dkw_halfwidth(n: int, delta: float = DKW_DELTA) -> float:
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def cdf_estimate(chain: ChainSpec, f: AdditiveFunctional, n_paths: int, seed: int,
                 N: int | None = None, delta: float = DKW_DELTA) -> EmpiricalCDF:
    """Monte Carlo CDF of (S_N - E S_N)/sigma_N using the exact mean and variance."""
    if n_paths < 1:
        raise RangeError("n_paths must be at least 1")
    N = check_compatible(chain, f, N)
    mean, sigma = mean_and_sigma(chain, f, N)
    if sigma < 1e-8:
        raise DegenerateVarianceError(f"sigma_N = {sigma:.3e} is below 1e-8")
    s = sample_paths(chain, f, n_paths, seed, n=N).sums
    z = np.sort((s - mean) / sigma)
    return EmpiricalCDF(z, dkw_halfwidth(n_paths, delta), mean, sigma, delta)


@dataclass(frozen=True)
class TailIntegral:
    value: float
    error: float
    lower: float
    upper: float
    sigma: float


def tail_integral(chain: ChainSpec, f: AdditiveFunctional, delta: float, B: float, r: int,
                  N: int | None = None, side: str = "both") -> TailIntegral:
    """Integral of |E exp(ix S_N)/x| over delta <= |x| <= B sigma_N^(r-1).

    ``side`` selects the positive half, the negative half or both.  The first
    panel width is a fraction of 1/sigma_N so that isolated peaks of |Phi_N|
    (lattice resonances) are resolved.
    """
    N = check_compatible(chain, f, N)
    _, sigma = mean_and_sigma(chain, f, N)
    if sigma < 1e-8:
        raise DegenerateVarianceError(f"sigma_N = {sigma:.3e} is below 1e-8")
    upper = B * sigma ** (r - 1)
    if not 0 < delta < upper:
        raise RangeError(f"need 0 < delta < B*sigma^(r-1) = {upper:.6g}, got delta = {delta}")

    def integrand(x, sgn):
        return np.exp(char_fn(chain, f, sgn * x, N).log_abs) / x

    value, err = 0.0, 0.0
    signs = {"both": (1.0, -1.0), "positive": (1.0,), "negative": (-1.0,)}[side]
    for sgn in signs:
        v, e = adaptive_simpson(lambda x: integrand(x, sgn), delta, upper, tol_density=1e-10,
                                initial_width=min(0.5 / sigma, (upper - delta) / 4))
        value += v
        err += e
    return TailIntegral(value, err, delta, upper, sigma)


def write_charfn_csv(table: CharFnTable, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "re", "im", "abs"])
        for x, v in zip(table.xi, table.values):
            w.writerow([repr(float(x)), repr(v.real), repr(v.imag), repr(abs(v))])
    return path


def write_pmf_csv(pmf: LatticePMF, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        if pmf.is_rational:
            w.writerow(["k", "num", "den"])
            for i, p in enumerate(pmf.probs):
                if p:
                    w.writerow([pmf.offset + i, p.numerator, p.denominator])
        else:
            w.writerow(["k", "p"])
            for i, p in enumerate(pmf.probs):
                if p > 0:
                    w.writerow([pmf.offset + i, repr(float(p))])
    return path


def write_cdf_csv(cdf: EmpiricalCDF, path, grid=None) -> Path:
    path = Path(path)
    grid = np.linspace(-4, 4, 161) if grid is None else np.asarray(grid)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "F", "dkw_halfwidth"])
        for t, F in zip(grid, cdf(grid)):
            w.writerow([repr(float(t)), repr(float(F)), repr(cdf.halfwidth)])
    return path


def enumerate_law(chain: ChainSpec, f: AdditiveFunctional, N: int | None = None,
                  max_paths: int = 2_000_000) -> tuple[np.ndarray, np.ndarray]:
    """(values, probs) of S_N over every path; exponential cost, meant for small N."""
    N = check_compatible(chain, f, N)
    n_paths = math.prod(chain.sizes[:N + 1])
    if n_paths > max_paths:
        raise RangeError(f"{n_paths} paths exceed the enumeration budget {max_paths}")
    # explicit enumeration keeps the oracle independent of the transfer recursion
    states = [np.arange(m) for m in chain.sizes[:N + 1]]
    grids = np.meshgrid(*states, indexing="ij")
    flat = [g.ravel() for g in grids]
    prob = np.asarray(chain.mu1)[flat[0]].astype(float)
    val = np.zeros(prob.size)
    for t in range(N):
        prob = prob * chain.kernels[t][flat[t], flat[t + 1]]
        val = val + f.tables[t][flat[t], flat[t + 1]]
    return val, prob
