"""Adaptive Simpson quadrature that refines all panels of a level in one vectorized call."""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError


def adaptive_simpson(g, a: float, b: float, tol_density: float = 1e-12,
                     initial_width: float | None = None, min_width: float = 1e-6,
                     max_levels: int = 60, max_panels: int = 20_000_000) -> tuple[float, float]:
    """Integrate ``g`` over [a, b]; return (value, error estimate).

    A panel is accepted when its Richardson error estimate is at most
    ``tol_density`` times its width, or when its width falls below ``min_width``.
    ``g`` must accept and return 1-d arrays.
    """
    if b <= a:
        return 0.0, 0.0
    width = b - a
    n0 = 1 if initial_width is None else max(1, int(np.ceil(width / initial_width)))
    edges = np.linspace(a, b, n0 + 1)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    vals = g(np.concatenate([lo, mid, hi[-1:]]))
    flo = vals[:n0]
    fmid = vals[n0:2 * n0]
    fhi = np.concatenate([vals[1:n0], vals[-1:]])
    total, err = 0.0, 0.0
    for _ in range(max_levels):
        if lo.size == 0:
            return total, err
        if lo.size > max_panels:
            raise ConvergenceError(f"quadrature exceeded {max_panels} panels")
        h = hi - lo
        q1 = 0.5 * (lo + mid)
        q3 = 0.5 * (mid + hi)
        fq = g(np.concatenate([q1, q3]))
        fq1, fq3 = fq[:lo.size], fq[lo.size:]
        coarse = h / 6.0 * (flo + 4.0 * fmid + fhi)
        fine = h / 12.0 * (flo + 4.0 * fq1 + 2.0 * fmid + 4.0 * fq3 + fhi)
        est = np.abs(fine - coarse) / 15.0
        done = (est <= tol_density * h) | (h <= min_width)
        total += float(np.sum(fine[done] + (fine[done] - coarse[done]) / 15.0))
        err += float(np.sum(est[done]))
        keep = ~done
        lo, mid, hi = lo[keep], mid[keep], hi[keep]
        flo, fmid, fhi = flo[keep], fmid[keep], fhi[keep]
        fq1, fq3 = fq1[keep], fq3[keep]
        lo, mid, hi = (np.concatenate([lo, mid]), np.concatenate([q1[keep], q3[keep]]),
                       np.concatenate([mid, hi]))
        flo, fmid, fhi = (np.concatenate([flo, fmid]), np.concatenate([fq1, fq3]),
                          np.concatenate([fmid, fhi]))
    if lo.size:
        raise ConvergenceError("quadrature did not converge within the refinement budget")
    return total, err
