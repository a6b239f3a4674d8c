"""Sequential RPF triplets, pressure functions and derivative audits.

Index convention: j = 1..N labels the summand f_j = ``f.tables[j-1]`` and the
complex transfer operator (L_j g)(x) = sum_y R_j(x, y) exp(z f_j(x, y)) g(y).

The chain is padded on the left by operators g -> E g(X_1) and on the right by
rank-one uniform kernels with f = 0.  With these pads the triplets are exact:

    nu_1 = mu_1,  lambda_j = nu_j(L_j 1),  nu_{j+1} = L_j^T nu_j / lambda_j,
    h_{N+1} = 1,  h_j = L_j h_{j+1} / lambda_j,

so nu_j(1) = nu_j(h_j) = 1 for every j.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import comb

from .chain import AdditiveFunctional, ChainSpec, centered, check_compatible, summand_means
from .errors import ConvergenceError, DegenerateVarianceError, OutOfDiskError, RangeError
from .transfer import exact_moments, log_mgf

RESIDUAL_TOL = 1e-9
RESIDUAL_FAIL = 1e-6
CONTOUR_NODES = 64
GROWTH_DELTA = 0.1


def default_radius(f: AdditiveFunctional) -> float:
    K = f.norm_sup
    return 0.5 if K == 0 else min(0.5, 0.25 / K)


def _operators(chain: ChainSpec, g: AdditiveFunctional, z: np.ndarray, t: int) -> np.ndarray:
    return chain.kernels[t][None] * np.exp(z[:, None, None] * g.tables[t][None])


def _sweeps(chain: ChainSpec, g: AdditiveFunctional, z: np.ndarray, N: int, keep: bool = True):
    Z = z.size
    nu = np.broadcast_to(chain.mu1.astype(complex), (Z, chain.sizes[0])).copy()
    lam = np.empty((N, Z), dtype=complex)
    nus = [nu] if keep else None
    dual_res = np.zeros(N)
    for t in range(N):
        L = _operators(chain, g, z, t)
        Lnu = np.einsum("zi,zij->zj", nu, L)
        lam[t] = Lnu.sum(axis=1)
        nxt = Lnu / lam[t][:, None]
        dual_res[t] = float(np.max(np.abs(Lnu - lam[t][:, None] * nxt)))
        nu = nxt
        if keep:
            nus.append(nu)
    h = np.ones((Z, chain.sizes[N]), dtype=complex)
    hs = [None] * (N + 1)
    hs[N] = h
    res = np.zeros(N)
    for t in range(N - 1, -1, -1):
        L = _operators(chain, g, z, t)
        Lh = np.einsum("zij,zj->zi", L, h)
        new = Lh / lam[t][:, None]
        res[t] = float(np.max(np.abs(Lh - lam[t][:, None] * new)))
        h = new
        if keep:
            hs[t] = h
    return lam, nus, hs, res, dual_res


def _unwrap_logs(lam_path: np.ndarray) -> np.ndarray:
    """Continuous log along axis 0 (path from z = 0); lam_path[0] must be 1."""
    logs = np.log(lam_path)
    arg = np.angle(lam_path)
    d = np.diff(arg, axis=0)
    d = (d + np.pi) % (2 * np.pi) - np.pi
    if np.any(np.abs(d) > np.pi / 2):
        bad = np.argwhere(np.abs(d) > np.pi / 2)[0]
        raise ConvergenceError(
            f"branch tracking rejected a step at path point {bad[0]} (index {bad[1]}): "
            "|delta arg lambda| > pi/2")
    phase = np.concatenate([arg[:1], arg[:1] + np.cumsum(d, axis=0)], axis=0)
    return logs.real + 1j * phase


@dataclass(frozen=True)
class PressureTable:
    z: complex
    lambdas: np.ndarray
    pressures: np.ndarray
    h: list
    nu: list
    residuals: np.ndarray
    dual_residuals: np.ndarray
    centering_shift: np.ndarray
    z0: float

    @property
    def max_residual(self) -> float:
        return float(max(np.max(self.residuals, initial=0.0), np.max(self.dual_residuals, initial=0.0)))

    def normalization_errors(self) -> tuple[float, float]:
        """max |nu_j(1) - 1| and max |nu_j(h_j) - 1|."""
        e1 = max(abs(n.sum() - 1) for n in self.nu)
        e2 = max(abs(n @ h - 1) for n, h in zip(self.nu, self.h))
        return float(e1), float(e2)

    def raw_pressures(self) -> np.ndarray:
        """Pressures of the uncentered summands: Pi_j(z) + z E f_j."""
        return self.pressures + self.z * self.centering_shift

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "re_lambda", "im_lambda", "re_pi", "im_pi", "residual"])
            for j, (lam, pi, r) in enumerate(zip(self.lambdas, self.pressures, self.residuals), 1):
                w.writerow([j, repr(lam.real), repr(lam.imag), repr(pi.real), repr(pi.imag), repr(float(r))])
        return path


def rpf_sweep(chain: ChainSpec, f: AdditiveFunctional, z: complex, N: int | None = None,
              z0: float | None = None, path_steps: int = 16, center: bool = True) -> PressureTable:
    """RPF triplets of the centered functional at z, with pressures tracked from 0."""
    N = check_compatible(chain, f, N)
    z0 = default_radius(f) if z0 is None else z0
    z = complex(z)
    if abs(z) > z0 * (1 + 1e-12):
        raise OutOfDiskError(f"|z| = {abs(z):.4g} exceeds the validated radius z0 = {z0:.4g}")
    g = centered(chain, f, N) if center else f
    path = np.linspace(0.0, 1.0, path_steps + 1) * z
    lam_path, _, _, _, _ = _sweeps(chain, g, path[:-1], N, keep=False) if path_steps else (None,) * 5
    lam, nus, hs, res, dres = _sweeps(chain, g, np.array([z]), N)
    full = np.concatenate([lam_path, lam], axis=1) if path_steps else lam
    logs = _unwrap_logs(full.T)[-1]
    worst = max(float(np.max(res, initial=0)), float(np.max(dres, initial=0)))
    if worst > RESIDUAL_FAIL:
        j = int(np.argmax(np.maximum(res, dres))) + 1
        raise ConvergenceError(f"eigen-relation residual {worst:.3e} at index j={j}")
    shift = summand_means(chain, f, N) if center else np.zeros(N)
    return PressureTable(z=z, lambdas=lam[:, 0], pressures=logs, h=[x[0] for x in hs],
                         nu=[x[0] for x in nus], residuals=res, dual_residuals=dres,
                         centering_shift=shift, z0=z0)


def validated_radius(chain: ChainSpec, f: AdditiveFunctional, radii, n_angles: int = 16,
                     N: int | None = None) -> float:
    """Largest radius in ``radii`` at which sweeps on a circle pass the residual gate."""
    best = 0.0
    for r in sorted(radii):
        zs = r * np.exp(2j * np.pi * np.arange(n_angles) / n_angles)
        try:
            for z in zs:
                if rpf_sweep(chain, f, z, N=N, z0=max(r, 1e-300)).max_residual > RESIDUAL_TOL:
                    raise ConvergenceError("residual")
        except ConvergenceError:
            break
        best = r
    return best


@dataclass(frozen=True)
class ConvergenceAudit:
    n_list: np.ndarray
    norms: np.ndarray
    delta: float


def exp_convergence_audit(chain: ChainSpec, f: AdditiveFunctional, z: complex, j: int, n_list,
                          table: PressureTable | None = None) -> ConvergenceAudit:
    """||L_j...L_{j+n-1} 1 / lambda_{j,n} - nu_{j+n}(1) h_j||_inf for n in ``n_list``.

    delta is the geometric rate fitted to the norms above the roundoff floor
    1e-12 max(1, |h_j|) (0 when they are at roundoff from the start).
    """
    table = rpf_sweep(chain, f, z) if table is None else table
    N = table.lambdas.size
    g = centered(chain, f, N)
    zz = np.array([complex(z)])
    n_list = np.asarray(sorted(int(n) for n in n_list))
    if j < 1 or j + n_list[-1] - 1 > N:
        raise RangeError(f"window j={j}, n up to {n_list[-1]} leaves 1..{N}")
    norms = []
    floor = 1e-12 * max(1.0, float(np.max(np.abs(table.h[j - 1]))))
    for n in n_list:
        v = np.ones(chain.sizes[j + n - 1], dtype=complex)
        for t in range(j + n - 2, j - 2, -1):
            v = (_operators(chain, g, zz, t)[0] @ v) / table.lambdas[t]
        target = table.nu[j + n - 1].sum() * table.h[j - 1]
        norms.append(float(np.max(np.abs(v - target))))
    norms = np.array(norms)
    use = norms > floor
    delta = 0.0
    if use.sum() >= 2:
        slope = np.polyfit(n_list[use], np.log(norms[use]), 1)[0]
        delta = float(math.exp(slope))
    return ConvergenceAudit(n_list, norms, delta)


@dataclass(frozen=True)
class PressureSum:
    value: complex
    log_mgf: complex
    difference: float


def pressure_sum(chain: ChainSpec, f: AdditiveFunctional, z: complex, j: int, n: int,
                 table: PressureTable | None = None) -> PressureSum:
    """Pi_{j,n}(z) = sum_{s=j}^{j+n-1} Pi_s(z) next to log E exp(z S_{j,n}) (centered)."""
    table = rpf_sweep(chain, f, z) if table is None else table
    N = table.lambdas.size
    if j < 1 or n < 1 or j + n - 1 > N:
        raise RangeError(f"window (j={j}, n={n}) leaves 1..{N}")
    value = complex(np.sum(table.pressures[j - 1:j + n - 1]))
    sub_chain = chain.window(j - 1, n)
    sub_f = centered(chain, f, N).window(j - 1, n)
    gam = complex(log_mgf(sub_chain, sub_f, z, center=False)[0])
    return PressureSum(value, gam, abs(gam - value))


def pressure_gap_profile(chain: ChainSpec, f: AdditiveFunctional, z: complex, n_list,
                         table: PressureTable | None = None) -> np.ndarray:
    """|Gamma_{1,n}(z) - Pi_{1,n}(z)| for each n, from one prefix pass."""
    table = rpf_sweep(chain, f, z) if table is None else table
    N = table.lambdas.size
    gam = log_mgf(chain, f, z, N=N, center=True, prefixes=True)[:, 0]
    pi = np.cumsum(table.pressures)
    return np.array([abs(gam[n - 1] - pi[n - 1]) for n in n_list])


def cauchy_derivative(g, center: complex, k: int, radius: float, nodes: int = CONTOUR_NODES,
                      tol: float = 1e-9, max_nodes: int = 1 << 14) -> complex:
    """k-th derivative of an analytic ``g`` at ``center`` via the trapezoidal Cauchy formula.

    Nodes are doubled until two successive estimates differ by at most
    tol * max(1, |estimate|).
    """
    nodes = max(int(nodes), 8 * k)
    prev = None
    while nodes <= max_nodes:
        theta = 2 * np.pi * np.arange(nodes) / nodes
        w = radius * np.exp(1j * theta)
        vals = np.asarray(g(center + w), dtype=complex)
        est = math.factorial(k) / radius ** k * np.mean(vals * np.exp(-1j * k * theta))
        if prev is not None and abs(est - prev) <= tol * max(1.0, abs(est)):
            return complex(est)
        prev = est
        nodes *= 2
    raise ConvergenceError(f"Cauchy derivative of order {k} did not stabilize by {max_nodes} nodes")


def _cauchy_many(g, centers: np.ndarray, ks, radius: float, nodes: int, tol: float,
                 max_nodes: int = 1 << 12) -> dict:
    """Cauchy derivatives of every order in ``ks`` at several centers.

    Each refinement level doubles the nodes and evaluates ``g`` only at the new
    (odd) ones, so all orders share a single set of function values.
    """
    ks = sorted({int(k) for k in np.atleast_1d(ks)})
    nodes = max(int(nodes), 8 * ks[-1])
    theta = 2 * np.pi * np.arange(nodes) / nodes
    vals = np.asarray(g((centers[:, None] + radius * np.exp(1j * theta)[None, :]).ravel()))
    vals = vals.reshape(centers.size, nodes)
    prev = None
    while True:
        est = {k: math.factorial(k) / radius ** k * np.mean(vals * np.exp(-1j * k * theta)[None], axis=1)
               for k in ks}
        if prev is not None and all(np.all(np.abs(est[k] - prev[k]) <= tol * np.maximum(1.0, np.abs(est[k])))
                                    for k in ks):
            return est
        if 2 * nodes > max_nodes:
            raise ConvergenceError(f"batched Cauchy derivatives of orders {ks} did not stabilize")
        prev = est
        odd = 2 * np.pi * (2 * np.arange(nodes) + 1) / (2 * nodes)
        new = np.asarray(g((centers[:, None] + radius * np.exp(1j * odd)[None, :]).ravel()))
        merged = np.empty((centers.size, 2 * nodes), dtype=complex)
        merged[:, 0::2] = vals
        merged[:, 1::2] = new.reshape(centers.size, nodes)
        vals = merged
        nodes *= 2
        theta = 2 * np.pi * np.arange(nodes) / nodes


@dataclass(frozen=True)
class GrowthRow:
    n: int
    sigma: float
    k: int
    value: float
    t_grid: np.ndarray
    profile: np.ndarray


@dataclass(frozen=True)
class GrowthAudit:
    rows: list
    delta_k: float

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])

    @property
    def max_over_median(self) -> float:
        v = self.values
        return float(np.max(v) / np.median(v))


def growth_audits(chain: ChainSpec, f: AdditiveFunctional, N_list, ks,
                  delta_k: float = GROWTH_DELTA, n_t: int = 17, radius: float | None = None,
                  tol: float = 1e-9) -> dict:
    """``growth_audit`` for several orders at once, sharing the contour evaluations."""
    ks = sorted({int(k) for k in np.atleast_1d(ks)})
    if ks[0] < 3:
        raise RangeError("growth_audit needs k >= 3")
    radius = default_radius(f) / 2 if radius is None else radius
    rows = {k: [] for k in ks}
    for n in N_list:
        n = int(n)
        var = float(exact_moments(chain, f, 2, N=n)[2])
        sigma = math.sqrt(max(var, 0.0))
        if sigma < 1e-6:
            raise DegenerateVarianceError(f"sigma_{n} = {sigma:.3e} is below 1e-6")
        t = np.linspace(-delta_k * sigma, delta_k * sigma, n_t)
        centers = 1j * t / sigma

        def gamma(zs, n=n):
            return log_mgf(chain, f, zs, N=n, center=True)

        d = _cauchy_many(gamma, centers, ks, radius, CONTOUR_NODES, tol)
        for k in ks:
            prof = np.abs(d[k]) / sigma ** 2
            rows[k].append(GrowthRow(n, sigma, k, float(np.max(prof)), t, prof))
    return {k: GrowthAudit(rows[k], delta_k) for k in ks}


def growth_audit(chain: ChainSpec, f: AdditiveFunctional, N_list, k: int,
                 delta_k: float = GROWTH_DELTA, n_t: int = 17, radius: float | None = None,
                 tol: float = 1e-9) -> GrowthAudit:
    """sup_{|t| <= delta_k sigma_n} |Lambda_n^(k)(t)| sigma_n^(k-2) for each n.

    With Gamma_n(z) = log E exp(z (S_n - E S_n)), Lambda_n^(k)(t) =
    i^k sigma_n^-k Gamma_n^(k)(i t / sigma_n) for k >= 3, so the table entry is
    |Gamma_n^(k)(i t/sigma_n)| / sigma_n^2.  The derivative is a Cauchy
    integral of radius z0/2 around each point; the sup is taken over n_t
    equally spaced t (odd n_t keeps t = 0 on the grid).
    """
    if k < 3:
        raise RangeError("growth_audit needs k >= 3")
    return growth_audits(chain, f, N_list, (k,), delta_k, n_t, radius, tol)[k]


def _bell_matrix(x: np.ndarray, k: int) -> np.ndarray:
    """Partial Bell polynomials B[n, m](x_1, x_2, ...) for 0 <= m <= n <= k (x[0] unused)."""
    B = np.zeros((k + 1, k + 1) + x.shape[1:], dtype=complex)
    B[0, 0] = 1.0
    for n in range(1, k + 1):
        for m in range(1, n + 1):
            acc = 0.0
            for i in range(1, n - m + 2):
                acc = acc + comb(n - 1, i - 1, exact=True) * x[i] * B[n - i, m - 1]
            B[n, m] = acc
    return B


def log_charfn_derivative(values: np.ndarray, probs: np.ndarray, t, k: int) -> np.ndarray:
    """Lambda^(k)(t) for Lambda = log E exp(itS) of a discrete law (Faa di Bruno)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    e = np.exp(1j * np.outer(values, t)) * probs[:, None]
    phi = np.stack([((1j * values[:, None]) ** j * e).sum(axis=0) for j in range(k + 1)])
    B = _bell_matrix(phi, k)
    out = np.zeros(t.size, dtype=complex)
    for m in range(1, k + 1):
        out += (-1) ** (m - 1) * math.factorial(m - 1) * phi[0] ** (-m) * B[k, m]
    return out


@dataclass(frozen=True)
class CharLogReport:
    D_k: float
    min_abs_phi: float
    r0: float
    abs_moment: float

    @property
    def passed(self) -> bool:
        return self.min_abs_phi >= 0.5 and math.isfinite(self.D_k)


def charfn_log_bound_check(values, probs, k: int, n_t: int = 201, center: bool = True) -> CharLogReport:
    """Fit D_k = sup_{|t| <= r0} |Lambda^(k)(t)| / E|S|^k with r0 = 1/(2 sqrt(E S^2))."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if center:
        values = values - probs @ values
    m2 = float(probs @ values ** 2)
    if m2 <= 0:
        raise DegenerateVarianceError("S is degenerate")
    r0 = 1.0 / (2.0 * math.sqrt(m2))
    t = np.linspace(-r0, r0, n_t)
    phi = np.exp(1j * np.outer(t, values)) @ probs
    deriv = log_charfn_derivative(values, probs, t, k)
    absk = float(probs @ np.abs(values) ** k)
    return CharLogReport(float(np.max(np.abs(deriv)) / absk), float(np.min(np.abs(phi))), r0, absk)
