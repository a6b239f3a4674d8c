"""Hexagon structure constants u_n^2, d_n^2(xi) and the checks built on them.

Indices n follow the hexagon convention (1-based times): the hexagon based at
n uses the summands f_{n-2}, f_{n-1}, f_n, i.e. tables n-3, n-2, n-1 of an
:class:`AdditiveFunctional`, so 3 <= n <= N.

The hexagon expectation factorizes over a 6-cycle

    (x_{n-2}, x_{n-1}) -- bridge x_n -- (y_n, y_{n+1}) -- bridge y_{n-1} -- back,

so E exp(i xi Gamma) = sum((A @ W1 @ C.T) * W2) with M x M matrices, O(M^3).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chain import AdditiveFunctional, ChainSpec, check_compatible, marginal_laws
from .errors import ConvergenceError, EllipticityError, RangeError
from .transfer import char_fn, exact_moments

SMALL_XI_DELTA = 0.1


def bridge_kernel(chain: ChainSpec, n: int) -> np.ndarray:
    """b[x, z, y] = P(X_n = y | X_{n-1} = x, X_{n+1} = z), hexagon time n (2 <= n <= N).

    In 0-based kernel terms this is R_{n-2}(x, y) R_{n-1}(y, z) normalized over y.
    """
    if n < 2 or n > chain.n_steps:
        raise RangeError(f"bridge needs 2 <= n <= {chain.n_steps}, got {n}")
    R0, R1 = chain.kernels[n - 2], chain.kernels[n - 1]
    joint = R0[:, :, None] * R1[None, :, :]          # (x, y, z)
    Z = joint.sum(axis=1)                              # (x, z)
    if np.any(Z <= 0):
        raise EllipticityError(f"bridge at n={n} has a zero normalizer")
    return np.transpose(joint / Z[:, None, :], (0, 2, 1))


def _pieces(chain: ChainSpec, f: AdditiveFunctional, n: int, laws):
    t0, t1, t2 = n - 3, n - 2, n - 1
    return (laws[t0], laws[t2], chain.kernels[t0], chain.kernels[t1], chain.kernels[t2],
            f.tables[t0], f.tables[t1], f.tables[t2])


def _check_n(chain: ChainSpec, f: AdditiveFunctional, n: int) -> None:
    N = check_compatible(chain, f)
    if n < 3 or n > N:
        raise RangeError(f"hexagon index must satisfy 3 <= n <= {N}, got {n}")


def _hexagon_cf(mu0, mu2, R0, R1, R2, F0, F1, F2, xi: np.ndarray) -> np.ndarray:
    """E exp(i xi Gamma(P_n)) for each xi, by the 6-cycle contraction."""
    x = xi[:, None, None]
    Z1 = R1 @ R2
    Z2 = R0 @ R1
    A = (mu0[:, None] * R0)[None] * np.exp(1j * x * F0)
    C = (mu2[:, None] * R2)[None] * np.exp(-1j * x * F2)
    W1 = (R1[None] * np.exp(1j * x * F1)) @ (R2[None] * np.exp(1j * x * F2)) / Z1
    W2 = (R0[None] * np.exp(-1j * x * F0)) @ (R1[None] * np.exp(-1j * x * F1)) / Z2
    return np.einsum("gac,gac->g", A @ W1 @ np.transpose(C, (0, 2, 1)), W2)


def _jet(base: np.ndarray, g: np.ndarray, sign: float) -> np.ndarray:
    """Order-2 jet of base * exp(sign * eps * g) in eps."""
    return np.stack([base, sign * base * g, 0.5 * base * g * g])


def _jmm(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.stack([X[0] @ Y[0], X[0] @ Y[1] + X[1] @ Y[0],
                     X[0] @ Y[2] + X[1] @ Y[1] + X[2] @ Y[0]])


def _hexagon_u2(mu0, mu2, R0, R1, R2, F0, F1, F2) -> float:
    """E[Gamma^2] as twice the eps^2 coefficient of E exp(eps Gamma)."""
    Z1 = R1 @ R2
    Z2 = R0 @ R1
    A = _jet(mu0[:, None] * R0, F0, 1.0)
    C = _jet(mu2[:, None] * R2, F2, -1.0)
    W1 = _jmm(_jet(R1, F1, 1.0), _jet(R2, F2, 1.0)) / Z1
    W2 = _jmm(_jet(R0, F0, -1.0), _jet(R1, F1, -1.0)) / Z2
    left = _jmm(_jmm(A, W1), np.transpose(C, (0, 2, 1)))
    c2 = np.sum(left[0] * W2[2] + left[1] * W2[1] + left[2] * W2[0])
    return max(2.0 * float(c2), 0.0)


def hexagon_u2(chain: ChainSpec, f: AdditiveFunctional, n: int, laws=None) -> float:
    _check_n(chain, f, n)
    laws = marginal_laws(chain) if laws is None else laws
    return _hexagon_u2(*_pieces(chain, f, n, laws))


def hexagon_d2(chain: ChainSpec, f: AdditiveFunctional, n: int, xi_grid, laws=None) -> np.ndarray:
    """d_n^2(xi) = 2 - 2 Re E exp(i xi Gamma(P_n)), clipped to [0, 4]."""
    _check_n(chain, f, n)
    laws = marginal_laws(chain) if laws is None else laws
    xi = np.atleast_1d(np.asarray(xi_grid, dtype=float))
    cf = _hexagon_cf(*_pieces(chain, f, n, laws), xi)
    return np.clip(2.0 - 2.0 * cf.real, 0.0, 4.0)


def hexagon_brute(chain: ChainSpec, f: AdditiveFunctional, n: int, xi_grid=()):
    """(u_n^2, d_n^2(xi)) by summing over all six-tuples; O(M^6), for testing."""
    _check_n(chain, f, n)
    laws = marginal_laws(chain)
    mu0, mu2, R0, R1, R2, F0, F1, F2 = _pieces(chain, f, n, laws)
    b1 = bridge_kernel(chain, n - 1)   # y_{n-1} | (x_{n-2}, y_n)
    b2 = bridge_kernel(chain, n)       # x_n | (x_{n-1}, y_{n+1})
    # axes: a=x_{n-2}, b=x_{n-1}, x=x_n, y=y_{n-1}, c=y_n, d=y_{n+1}
    a, b, x, y, c, d = np.ix_(*(np.arange(m) for m in (
        R0.shape[0], R0.shape[1], R1.shape[1], R0.shape[1], R2.shape[0], R2.shape[1])))
    w = (mu0[a] * R0[a, b]) * (mu2[c] * R2[c, d]) * b2[b, d, x] * b1[a, c, y]
    gam = F0[a, b] + F1[b, x] + F2[x, d] - F0[a, y] - F1[y, c] - F2[c, d]
    u2 = float(np.sum(w * gam ** 2))
    xi = np.atleast_1d(np.asarray(xi_grid, dtype=float))
    d2 = np.array([float(np.sum(w * 4.0 * np.sin(0.5 * s * gam) ** 2)) for s in xi])
    return u2, d2


@dataclass(frozen=True)
class HexagonStats:
    n_range: np.ndarray
    u2: np.ndarray
    xi: np.ndarray
    d2: np.ndarray

    @property
    def D(self) -> np.ndarray:
        """D[i, :] = sum of d_n^2 over hexagons n <= n_range[i] (none exist below n = 3)."""
        return np.cumsum(self.d2, axis=0)

    def write_csv(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        p1, p2 = out / "u2.csv", out / "d2.csv"
        with p1.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "u2"])
            for n, u in zip(self.n_range, self.u2):
                w.writerow([int(n), repr(float(u))])
        with p2.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "xi", "d2"])
            for n, row in zip(self.n_range, self.d2):
                for s, v in zip(self.xi, row):
                    w.writerow([int(n), repr(float(s)), repr(float(v))])
        return p1, p2


def hexagon_stats(chain: ChainSpec, f: AdditiveFunctional, N: int | None = None,
                  xi_grid=()) -> HexagonStats:
    """u_n^2 and d_n^2(xi) for every hexagon 3 <= n <= N."""
    N = check_compatible(chain, f, N)
    laws = marginal_laws(chain)
    xi = np.atleast_1d(np.asarray(xi_grid, dtype=float))
    ns = np.arange(3, N + 1)
    u2 = np.empty(ns.size)
    d2 = np.empty((ns.size, xi.size))
    for i, n in enumerate(ns):
        pieces = _pieces(chain, f, int(n), laws)
        u2[i] = _hexagon_u2(*pieces)
        if xi.size:
            d2[i] = np.clip(2.0 - 2.0 * _hexagon_cf(*pieces, xi).real, 0.0, 4.0)
    return HexagonStats(ns, u2, xi, d2)


def window_variances(chain: ChainSpec, f: AdditiveFunctional, lengths, N: int | None = None) -> dict:
    """Var(S_{m+L} - S_m) for every start m and every L in ``lengths``.

    Built from the exact lag-covariance band; entry [m] of the result for L is
    the variance of the summands with 0-based indices m..m+L-1.
    """
    from .chain import covariance_band
    N = check_compatible(chain, f, N)
    lengths = sorted(set(int(L) for L in lengths))
    Lmax = lengths[-1]
    band = covariance_band(chain, f, Lmax - 1, start=0, stop=N)
    # T[i, r] = Var(Y_i) + 2 sum_{k=1}^{r} Cov(Y_i, Y_{i+k})
    T = band[:, :1] + 2.0 * np.concatenate([np.zeros((N, 1)), np.cumsum(band[:, 1:], axis=1)], axis=1)
    out = {}
    for L in lengths:
        starts = N - L + 1
        if starts <= 0:
            out[L] = np.zeros(0)
            continue
        acc = np.zeros(starts)
        for j in range(L):
            acc += T[j:j + starts, L - 1 - j]
        out[L] = acc
    return out


@dataclass(frozen=True)
class SandwichReport:
    windows: list
    variances: np.ndarray
    u2_sums: np.ndarray
    ratios: np.ndarray

    @property
    def min_ratio(self) -> float:
        return float(np.min(self.ratios))

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    def within(self, lo: float = 1 / 64, hi: float = 64.0) -> bool:
        return bool(np.all((self.ratios >= lo) & (self.ratios <= hi)))


def sandwich_check(chain: ChainSpec, f: AdditiveFunctional, windows, u2=None) -> SandwichReport:
    """(Var + 1)/(sum u^2 + 1) for windows (m, L): summands m+1..m+L, hexagons m+3..m+L.

    ``u2`` may carry precomputed u_n^2 indexed so that u2[n] is hexagon n.
    """
    windows = [(int(m), int(L)) for m, L in windows]
    N = check_compatible(chain, f)
    for m, L in windows:
        if L < 3 or m < 0 or m + L > N:
            raise RangeError(f"window (m={m}, L={L}) invalid for N={N}")
    if u2 is None:
        stats = hexagon_stats(chain, f, max(m + L for m, L in windows))
        u2 = np.zeros(stats.n_range[-1] + 1)
        u2[stats.n_range] = stats.u2
    prefix = np.concatenate([[0.0], np.cumsum(u2)])
    lengths = sorted({L for _, L in windows})
    wv = window_variances(chain, f, lengths, N)
    var = np.array([wv[L][m] for m, L in windows])
    usum = np.array([prefix[m + L + 1] - prefix[m + 3] for m, L in windows])
    return SandwichReport(windows, var, usum, (var + 1.0) / (usum + 1.0))


def window_variance_exact(chain: ChainSpec, f: AdditiveFunctional, m: int, L: int) -> float:
    """Var(S_{m+L} - S_m) through the moment recursion on the sub-chain."""
    return float(exact_moments(chain.window(m, L), f.window(m, L), 2)[2])


@dataclass(frozen=True)
class DecayFit:
    c: float
    C: float
    log_C_fit: float
    n_fit_points: int
    inconclusive: bool
    violations: int
    xi: np.ndarray
    log_abs_phi: np.ndarray
    D: np.ndarray

    @property
    def passed(self) -> bool:
        return (not self.inconclusive) and self.c > 0 and self.violations == 0

    def to_json(self) -> str:
        return json.dumps({"c": self.c, "C": self.C, "violations": self.violations,
                           "inconclusive": self.inconclusive})


def decay_check(chain: ChainSpec, f: AdditiveFunctional, N: int, xi_grid,
                stats: HexagonStats | None = None) -> DecayFit:
    """Fit -log|Phi_N(xi)| = c D_N(xi) - log C over points with D_N >= 1.

    The fitted C is then raised to the smallest value for which
    |Phi_N| <= C exp(-c D_N) at every grid point, and the pointwise
    inequality is re-checked with that pair.
    """
    xi = np.asarray(xi_grid, dtype=float)
    if np.any(xi == 0):
        raise RangeError("decay_check grid must avoid xi = 0")
    if stats is None:
        stats = hexagon_stats(chain, f, N, xi)
    D = stats.d2.sum(axis=0) if stats.d2.size else np.zeros(xi.size)
    la = char_fn(chain, f, xi, N).log_abs
    y = -la
    use = (D >= 1.0) & np.isfinite(y)
    if use.sum() < 2:
        return DecayFit(math.nan, math.nan, math.nan, int(use.sum()), True, 0, xi, la, D)
    X = np.stack([D[use], np.ones(use.sum())], axis=1)
    (c, b), *_ = np.linalg.lstsq(X, y[use], rcond=None)
    log_C_fit = -b
    finite = np.isfinite(la)
    log_C = max(log_C_fit, float(np.max(la[finite] + c * D[finite])))
    viol = int(np.sum(la[finite] > log_C - c * D[finite] + 1e-12))
    return DecayFit(float(c), float(math.exp(log_C)), float(log_C_fit), int(use.sum()),
                    False, viol, xi, la, D)


@dataclass(frozen=True)
class SmallXiReport:
    violations: list
    n_checked: int
    points_checked: int

    @property
    def passed(self) -> bool:
        return not self.violations


def small_xi_check(chain: ChainSpec, f: AdditiveFunctional, n_range, xi_grid,
                   delta: float = SMALL_XI_DELTA, stats: HexagonStats | None = None) -> SmallXiReport:
    """List (n, xi) with d_n^2(xi) < xi^2 u_n^2/2 among |xi| * K_n <= delta.

    K_n is the largest sup norm of the three summands entering hexagon n.
    """
    xi = np.asarray(xi_grid, dtype=float)
    laws = marginal_laws(chain)
    norms = f.norms()
    viols, points, count = [], 0, 0
    for n in n_range:
        n = int(n)
        _check_n(chain, f, n)
        K = float(max(norms[n - 3:n]))
        sel = xi if K == 0 else xi[np.abs(xi) * K <= delta]
        if sel.size == 0:
            continue
        count += 1
        pieces = _pieces(chain, f, n, laws)
        if stats is not None and np.array_equal(stats.xi, xi):
            i = n - int(stats.n_range[0])
            u2 = stats.u2[i]
            d2 = stats.d2[i][np.isin(xi, sel)]
        else:
            u2 = _hexagon_u2(*pieces)
            d2 = np.clip(2.0 - 2.0 * _hexagon_cf(*pieces, sel).real, 0.0, 4.0)
        bound = 0.5 * sel ** 2 * u2
        bad = d2 < bound - 64 * np.finfo(float).eps
        points += sel.size
        viols.extend((n, float(s)) for s in sel[bad])
    return SmallXiReport(viols, count, points)


@dataclass(frozen=True)
class ExponentFit:
    c: float
    theta: float
    xi: np.ndarray
    y: np.ndarray
    variance: float


def decay_exponent_fit(chain: ChainSpec, f: AdditiveFunctional, N: int, xi_range=(1.0, 100.0),
                       n_grid: int = 400, n_bands: int = 8, extra_points=()) -> ExponentFit:
    """Fit -log|Phi_N(xi)| ~ c V_N xi^theta through the lower envelope.

    The range is cut into log-spaced bands; in each band the smallest value of
    -log|Phi_N|/V_N (over a geometric grid plus ``extra_points``) is kept, and
    theta is the slope of log(min) against log(argmin).
    """
    lo, hi = xi_range
    if not 0 < lo < hi:
        raise RangeError("xi_range must satisfy 0 < lo < hi")
    xi = np.geomspace(lo, hi, n_grid)
    extra = np.asarray([x for x in extra_points if lo <= x <= hi], dtype=float)
    xi = np.unique(np.concatenate([xi, extra]))
    V = float(exact_moments(chain, f, 2, N)[2])
    y = -char_fn(chain, f, xi, N).log_abs / V
    edges = np.geomspace(lo, hi, n_bands + 1)
    px, py = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (xi >= a) & (xi <= b) & (y > 0)
        if sel.any():
            i = np.flatnonzero(sel)[np.argmin(y[sel])]
            px.append(xi[i])
            py.append(y[i])
    if len(px) < 2:
        raise ConvergenceError("fewer than two bands with positive decay")
    theta, logc = np.polyfit(np.log(px), np.log(py), 1)
    return ExponentFit(float(math.exp(logc)), float(theta), np.array(px), np.array(py), V)
