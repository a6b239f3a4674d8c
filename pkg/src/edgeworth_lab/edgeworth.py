"""Cumulants, Edgeworth polynomials, expansion CDFs and distances between distribution functions.

Polynomials in t are stored as real coefficient arrays c[k] of the monomials
(it)^k, so the i^k factor is implicit.  Polynomials in z are ordinary ascending
coefficient arrays.

For a centered S with variance sigma^2 the characteristic function of
S/sigma is approximated by exp(-t^2/2) (1 + sum_j sigma^-j A_j(t)).  Since
(it)^k exp(-t^2/2) is the Fourier transform of He_k(z) phi(z), the polynomial
P_j = sum_k c_k He_k corrects the Gaussian density, and integrating
He_k phi gives -He_{k-1} phi, which yields the CDF correction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.special import ndtr

from ._quadrature import adaptive_simpson
from .errors import ConvergenceError, DegenerateVarianceError, InvalidSpecError

_SQRT2PI = math.sqrt(2.0 * math.pi)


def normal_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / _SQRT2PI


def normal_cdf(z):
    return ndtr(np.asarray(z, dtype=float))


@lru_cache(maxsize=None)
def hermite_coefficients(k: int) -> tuple:
    """Integer coefficients (ascending) of the probabilists' Hermite polynomial He_k."""
    prev, cur = (1,), (0, 1)
    if k == 0:
        return prev
    for n in range(1, k):
        nxt = [0] * (n + 2)
        for i, c in enumerate(cur):
            nxt[i + 1] += c
        for i, c in enumerate(prev):
            nxt[i] -= n * c
        prev, cur = cur, tuple(nxt)
    return cur


@dataclass(frozen=True)
class CumulantTable:
    """gammas[k-1] is the k-th cumulant; normalized[j] = a_j = Gamma_j/(j! sigma^2)."""

    sigma: float
    gammas: np.ndarray
    normalized: dict = field(default_factory=dict)

    @property
    def order(self) -> int:
        return len(self.gammas)

    def gamma(self, k: int) -> float:
        return float(self.gammas[k - 1])

    def a(self, j: int) -> float:
        return self.normalized.get(j, 0.0)


def cumulants_from_moments(moments) -> CumulantTable:
    """Cumulants Gamma_1..Gamma_K from raw moments alpha_1..alpha_K.

    Gamma_k = sum_v (-1)^(v-1)/v * sum over compositions k_1+..+k_v = k of
    k!/(k_1!...k_v!) alpha_{k_1}...alpha_{k_v}.  The inner sum is k! times the
    x^k coefficient of g(x)^v with g(x) = sum_m alpha_m x^m/m!.
    """
    alpha = np.asarray(moments, dtype=float)
    K = alpha.size
    if K < 2:
        raise InvalidSpecError("need at least two moments")
    var = alpha[1] - alpha[0] ** 2
    if not var > 0:
        raise DegenerateVarianceError(f"variance {var:.3e} is not positive")
    g = np.zeros(K + 1)
    g[1:] = alpha / np.array([math.factorial(m) for m in range(1, K + 1)])
    acc = np.zeros(K + 1)
    power = np.zeros(K + 1)
    power[0] = 1.0
    for v in range(1, K + 1):
        power = np.convolve(power, g)[:K + 1]
        acc += (-1) ** (v - 1) / v * power
    gammas = acc[1:] * np.array([math.factorial(k) for k in range(1, K + 1)])
    gammas[1] = var
    sigma = math.sqrt(var)
    normalized = {j: float(gammas[j - 1] / (math.factorial(j) * var)) for j in range(3, K + 1)}
    return CumulantTable(sigma=sigma, gammas=gammas, normalized=normalized)


def aj_polynomials(a: dict, r: int) -> list:
    """A_1..A_r as coefficient arrays over (it)^k.

    Expands exp(sum_{j=3}^{r+2} a_j s^(j-2) u^j) as a series in s = 1/sigma and
    u = it, truncated at s^r, and returns the s^j slices.  ``a`` maps j to a_j;
    missing entries count as 0.
    """
    if r < 1:
        return []
    deg = 3 * r
    base = np.zeros((r + 1, deg + 1))
    for j in range(3, r + 3):
        base[j - 2, j] = a.get(j, 0.0)
    total = np.zeros_like(base)
    total[0, 0] = 1.0
    term = total.copy()
    for m in range(1, r + 1):
        term = _mul2(term, base, r, deg) / m
        total += term
    return [total[j].copy() for j in range(1, r + 1)]


def _mul2(x: np.ndarray, y: np.ndarray, smax: int, umax: int) -> np.ndarray:
    out = np.zeros((smax + 1, umax + 1))
    for i in range(smax + 1):
        for j in range(smax + 1 - i):
            out[i + j] += np.convolve(x[i], y[j])[:umax + 1]
    return out


def hermite_translate(A: np.ndarray) -> np.ndarray:
    """Map sum_k c_k (it)^k to sum_k c_k He_k(z), as ascending monomial coefficients."""
    A = np.asarray(A, dtype=float)
    out = np.zeros(max(A.size, 1))
    for k, c in enumerate(A):
        if c:
            out[:k + 1] += c * np.array(hermite_coefficients(k), dtype=float)
    return out


def cdf_correction(A: np.ndarray) -> np.ndarray:
    """Q with phi*Q the antiderivative of phi*P for P = hermite_translate(A)."""
    A = np.asarray(A, dtype=float)
    out = np.zeros(max(A.size - 1, 1))
    for k, c in enumerate(A):
        if not c:
            continue
        if k == 0:
            raise InvalidSpecError("a constant term in A_j has no polynomial antiderivative")
        out[:k] -= c * np.array(hermite_coefficients(k - 1), dtype=float)
    return out


def _trim(p: np.ndarray) -> np.ndarray:
    nz = np.nonzero(p)[0]
    return p[:nz[-1] + 1].copy() if nz.size else np.zeros(1)


@dataclass(frozen=True)
class EdgeworthExpansion:
    order: int
    sigma: float
    A_polys: tuple
    P_polys: tuple
    cdf_polys: tuple

    def _sum(self, polys, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for j, p in enumerate(polys, start=1):
            out = out + self.sigma ** (-j) * npoly.polyval(z, p)
        return out

    def cdf(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return normal_cdf(z) + normal_pdf(z) * self._sum(self.cdf_polys, z)

    __call__ = cdf

    def density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return normal_pdf(z) * (1.0 + self._sum(self.P_polys, z))

    def charfn(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        acc = np.ones_like(t, dtype=complex)
        for j, A in enumerate(self.A_polys, start=1):
            acc = acc + self.sigma ** (-j) * npoly.polyval(1j * t, A)
        return np.exp(-0.5 * t * t) * acc

    def density_polynomial(self) -> np.ndarray:
        out = np.zeros(1 + max((p.size for p in self.P_polys), default=1))
        out[0] = 1.0
        for j, p in enumerate(self.P_polys, start=1):
            out[:p.size] += self.sigma ** (-j) * p
        return _trim(out)

    def critical_points(self) -> np.ndarray:
        """Real zeros of the density, where the expansion CDF can turn."""
        p = self.density_polynomial()
        if p.size <= 1:
            return np.zeros(0)
        roots = npoly.polyroots(p)
        return np.sort(roots[np.abs(roots.imag) < 1e-9].real)

    def density_sup(self) -> float:
        """max |density| over the real line (grid plus local refinement)."""
        z = np.linspace(-12, 12, 24001)
        d = np.abs(self.density(z))
        i = int(np.argmax(d))
        zz = np.linspace(z[max(i - 1, 0)], z[min(i + 1, z.size - 1)], 2001)
        return float(max(d[i], np.max(np.abs(self.density(zz)))))

    def to_json(self) -> str:
        return json.dumps({"r": self.order, "sigma": self.sigma,
                           "P": [list(map(float, p)) for p in self.P_polys],
                           "A": [list(map(float, a)) for a in self.A_polys]})


def build_expansion(table: CumulantTable, r: int) -> EdgeworthExpansion:
    """The order-r expansion; needs cumulants up to order r + 2."""
    if table.order < r + 2 and r > 0:
        raise InvalidSpecError(f"order {r} needs cumulants up to {r + 2}, have {table.order}")
    A = [_trim(x) for x in aj_polynomials(table.normalized, r)]
    P = [_trim(hermite_translate(x)) for x in A]
    Q = [_trim(cdf_correction(x)) for x in A]
    return EdgeworthExpansion(order=r, sigma=table.sigma, A_polys=tuple(A),
                              P_polys=tuple(P), cdf_polys=tuple(Q))


def fourier_identity_error(expansion: EdgeworthExpansion, j: int, t_grid=None,
                           half_width: float = 40.0, h: float = 0.005) -> float:
    """max_t |int e^(itx) phi(x) P_j(x) dx - e^(-t^2/2) A_j(it)| by the trapezoid rule.

    The integrand is entire and Gaussian-damped, so the trapezoid rule is
    accurate to roundoff at this step size; sums run in long double.
    """
    if not 1 <= j <= expansion.order:
        raise InvalidSpecError(f"j = {j} outside 1..{expansion.order}")
    t = np.linspace(-5.0, 5.0, 201) if t_grid is None else np.asarray(t_grid, dtype=float)
    # long double keeps the cancellation in large-coefficient P_j below 1e-12
    ld = np.longdouble
    n = int(round(half_width / h))
    x = np.arange(-n, n + 1, dtype=ld) * ld(h)
    w = np.exp(-x * x / 2) / np.sqrt(ld(2) * np.pi) * npoly.polyval(x, np.asarray(expansion.P_polys[j - 1], dtype=ld))
    tx = np.outer(t.astype(ld), x)
    ft = ((np.cos(tx) @ w) * ld(h)).astype(float) + 1j * ((np.sin(tx) @ w) * ld(h)).astype(float)
    target = np.exp(-0.5 * t * t) * npoly.polyval(1j * t, expansion.A_polys[j - 1])
    return float(np.max(np.abs(ft - target)))


def p1_formula_error(expansion: EdgeworthExpansion, a3: float) -> float:
    """Coefficient gap between P_1 and a_3 He_3(x) = a_3 (x^3 - 3x)."""
    ref = np.array([0.0, -3.0 * a3, 0.0, a3])
    p = np.zeros(4)
    got = np.asarray(expansion.P_polys[0], dtype=float)
    p[:got.size] = got
    return float(np.max(np.abs(p - ref)))


def expansion_cdf(expansion: EdgeworthExpansion, z_grid) -> np.ndarray:
    return expansion.cdf(z_grid)


def esseen_bound(f_char, g_char, T: float, g_density_sup: float,
                 tol_density: float = 1e-10) -> float:
    """2 * int_{-T}^{T} |f(t) - g(t)|/|t| dt + 24 g_density_sup/(pi T)."""
    if not T > 0:
        raise InvalidSpecError("T must be positive")

    def integrand(t):
        t = np.where(t == 0.0, 1e-12 * T, t)
        return np.abs(np.asarray(f_char(t)) - np.asarray(g_char(t))) / np.abs(t)

    try:
        left, _ = adaptive_simpson(integrand, -T, 0.0, tol_density=tol_density,
                                   initial_width=T / 64, min_width=1e-9 * T)
        right, _ = adaptive_simpson(integrand, 0.0, T, tol_density=tol_density,
                                    initial_width=T / 64, min_width=1e-9 * T)
    except ConvergenceError as exc:
        raise ConvergenceError(f"Esseen integral did not converge: {exc}") from exc
    return 2.0 * (left + right) + 24.0 * g_density_sup / (math.pi * T)


@dataclass(frozen=True)
class StepCDF:
    """Right-continuous CDF of a discrete law with atoms ``locations`` (sorted)."""

    locations: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if loc.shape != p.shape:
            raise InvalidSpecError("locations and probs differ in shape")
        if np.any(p < 0):
            raise InvalidSpecError("step CDF is not monotone: negative atom")
        order = np.argsort(loc, kind="stable")
        loc, p = loc[order], p[order]
        if loc.size and np.any(np.diff(loc) == 0):
            uniq, inv = np.unique(loc, return_inverse=True)
            p = np.bincount(inv, weights=p)
            loc = uniq
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_cum", np.cumsum(p))

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.locations, np.asarray(t, dtype=float), side="right")
        return np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)

    def left(self, t) -> np.ndarray:
        idx = np.searchsorted(self.locations, np.asarray(t, dtype=float), side="left")
        return np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)

    @classmethod
    def point_mass(cls, x: float = 0.0) -> "StepCDF":
        return cls(np.array([x]), np.array([1.0]))


def kolmogorov_distance(F, G, grid=None, critical_points=None, tol: float = 1e-10) -> float:
    """sup_t |F(t) - G(t)| with G smooth.

    For a StepCDF, G is compared with F at every atom from both sides and at the
    critical points of G (its local extrema), which covers the supremum on each
    flat stretch of F.  For a smooth F the grid is refined around the current
    maximiser until the gain drops below ``tol``.
    """
    if critical_points is None and hasattr(G, "critical_points"):
        critical_points = G.critical_points()
    crit = np.zeros(0) if critical_points is None else np.asarray(critical_points, dtype=float)
    if isinstance(F, StepCDF):
        a = F.locations
        Ga = np.asarray(G(a), dtype=float)
        best = max(float(np.max(np.abs(F(a) - Ga), initial=0.0)),
                   float(np.max(np.abs(F.left(a) - Ga), initial=0.0)))
        if crit.size:
            best = max(best, float(np.max(np.abs(F(crit) - np.asarray(G(crit))))))
        return best
    grid = np.linspace(-10, 10, 20001) if grid is None else np.sort(np.asarray(grid, dtype=float))
    Fg = np.asarray(F(grid), dtype=float)
    if np.any(np.diff(Fg) < -1e-12):
        raise InvalidSpecError("F is not non-decreasing on the grid")
    diff = np.abs(Fg - np.asarray(G(grid), dtype=float))
    best = float(np.max(diff))
    i = int(np.argmax(diff))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    for _ in range(60):
        zz = np.linspace(lo, hi, 101)
        d = np.abs(np.asarray(F(zz)) - np.asarray(G(zz)))
        j = int(np.argmax(d))
        new = max(best, float(d[j]))
        gain = new - best
        best = new
        lo, hi = zz[max(j - 1, 0)], zz[min(j + 1, zz.size - 1)]
        if gain < tol and hi - lo < 1e-12 + 1e-9 * abs(lo):
            break
    if crit.size:
        best = max(best, float(np.max(np.abs(np.asarray(F(crit)) - np.asarray(G(crit))))))
    return best
