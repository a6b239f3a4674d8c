import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_chain
from edgeworth_lab.chain import AdditiveFunctional
from edgeworth_lab.errors import RangeError
from edgeworth_lab.gallery import make_elliptic_random_chain
from edgeworth_lab.hexagon import (bridge_kernel, decay_check, hexagon_brute, hexagon_d2, hexagon_stats,
                                   hexagon_u2, sandwich_check, small_xi_check, window_variance_exact,
                                   window_variances)
from edgeworth_lab.transfer import exact_moments

XI = np.array([0.3, 1.0, 3.0])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), sizes=st.lists(st.integers(1, 4), min_size=4, max_size=7))
def test_contraction_matches_brute_force(seed, sizes):
    chain, f = random_chain(seed, sizes)
    for n in range(3, chain.n_steps + 1):
        u2, d2 = hexagon_brute(chain, f, n, XI)
        assert hexagon_u2(chain, f, n) == pytest.approx(u2, abs=1e-12)
        assert np.allclose(hexagon_d2(chain, f, n, XI), d2, atol=1e-12)


def test_bridge_rows_are_laws():
    chain, _ = random_chain(2, [3, 4, 2, 3])
    b = bridge_kernel(chain, 2)
    assert b.shape == (3, 2, 4)
    assert np.allclose(b.sum(axis=2), 1.0)
    with pytest.raises(RangeError):
        bridge_kernel(chain, 1)


def test_coboundary_is_annihilated():
    chain, _ = random_chain(9, [3] * 8)
    rng = np.random.default_rng(1)
    g = [rng.normal(size=3) for _ in range(8)]
    f = AdditiveFunctional(tables=tuple(g[t + 1][None, :] - g[t][:, None] for t in range(7)))
    stats = hexagon_stats(chain, f, xi_grid=XI)
    assert np.max(stats.u2) < 1e-13
    assert np.max(stats.d2) < 1e-12


def test_constant_shifts_do_not_change_balance():
    chain, f = random_chain(4, [3] * 7)
    shifted = f.shifted(np.arange(6) * 1.7)
    a = hexagon_stats(chain, f, xi_grid=XI)
    b = hexagon_stats(chain, shifted, xi_grid=XI)
    assert np.allclose(a.u2, b.u2, atol=1e-12)
    assert np.allclose(a.d2, b.d2, atol=1e-12)


def test_d2_bounded_by_quadratic():
    chain, f = random_chain(5, [4] * 10)
    xi = np.geomspace(1e-3, 5, 30)
    s = hexagon_stats(chain, f, xi_grid=xi)
    assert np.all(s.d2 <= xi[None, :] ** 2 * s.u2[:, None] + 1e-12)


def test_small_xi_lower_bound_holds():
    chain, f = make_elliptic_random_chain(4, 1.0, 42, 200)
    rep = small_xi_check(chain, f, range(3, 201), np.geomspace(1e-4, 1.0, 40))
    assert rep.passed and rep.points_checked > 0


def test_window_variances_match_moment_recursion():
    chain, f = random_chain(6, [3] * 41)
    wv = window_variances(chain, f, [5, 12])
    for L in (5, 12):
        for m in (0, 7, 40 - L):
            assert wv[L][m] == pytest.approx(window_variance_exact(chain, f, m, L), rel=1e-10)
    full = window_variances(chain, f, [40])[40][0]
    assert full == pytest.approx(exact_moments(chain, f, 2)[2], rel=1e-12)


def test_sandwich_ratios_are_moderate():
    chain, f = make_elliptic_random_chain(4, 1.0, 3, 300)
    rep = sandwich_check(chain, f, [(m, 50) for m in range(0, 250, 10)])
    assert rep.within()
    assert 0 < rep.min_ratio <= rep.max_ratio


def test_sandwich_rejects_bad_window():
    chain, f = random_chain(6, [2] * 10)
    with pytest.raises(RangeError):
        sandwich_check(chain, f, [(5, 8)])


def test_decay_fit_on_elliptic_chain():
    chain, f = make_elliptic_random_chain(4, 1.0, 42, 256)
    fit = decay_check(chain, f, 256, np.geomspace(0.05, 3.0, 30))
    assert fit.passed
    assert fit.c > 0
    with pytest.raises(RangeError):
        decay_check(chain, f, 256, np.array([0.0, 1.0]))


def test_decay_fit_inconclusive_without_variance_growth():
    chain, _ = random_chain(1, [2] * 6)
    zero = AdditiveFunctional(tables=(np.zeros((2, 2)),) * 5)
    fit = decay_check(chain, zero, 5, np.array([0.5, 1.0]))
    assert fit.inconclusive and not fit.passed
