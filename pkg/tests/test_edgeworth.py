import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import hermite_e, polynomial as npoly
from scipy import stats

from conftest import coin_chain
from edgeworth_lab.edgeworth import (StepCDF, aj_polynomials, build_expansion, cdf_correction,
                                     cumulants_from_moments, esseen_bound, fourier_identity_error,
                                     hermite_coefficients, hermite_translate, kolmogorov_distance,
                                     normal_cdf, normal_pdf, p1_formula_error)
from edgeworth_lab.errors import DegenerateVarianceError, InvalidSpecError
from edgeworth_lab.transfer import exact_moments, lattice_distribution, mean_and_sigma
from edgeworth_lab.chain import AdditiveFunctional


@pytest.mark.parametrize("k", range(0, 12))
def test_hermite_matches_numpy(k):
    ref = hermite_e.herme2poly([0] * k + [1])
    assert np.array_equal(np.array(hermite_coefficients(k), dtype=float), ref)


def test_cumulants_of_poisson():
    lam = 2.5
    raw = [stats.poisson(lam).moment(k) for k in range(1, 7)]
    t = cumulants_from_moments(raw)
    assert np.allclose(t.gammas, lam, rtol=1e-10)


def test_cumulants_of_exponential():
    raw = [math.factorial(k) for k in range(1, 7)]      # rate 1
    t = cumulants_from_moments(raw)
    assert np.allclose(t.gammas, [math.factorial(k - 1) for k in range(1, 7)])
    assert t.a(3) == pytest.approx(2 / 6)


def test_degenerate_moments_refused():
    with pytest.raises(DegenerateVarianceError):
        cumulants_from_moments([1.0, 1.0, 1.0])


def _aj_oracle(a, j):
    """A_j by direct enumeration: sum over m and compositions (j_1..j_m) of j into parts >= 1."""
    out = np.zeros(3 * j + 1)
    for m in range(1, j + 1):
        for parts in itertools.product(range(1, j + 1), repeat=m):
            if sum(parts) != j:
                continue
            coef = np.prod([a.get(p + 2, 0.0) for p in parts]) / math.factorial(m)
            out[sum(p + 2 for p in parts)] += coef
    return out


@settings(max_examples=30, deadline=None)
@given(vals=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_aj_polynomials_match_enumeration(vals):
    a = {3 + i: v for i, v in enumerate(vals)}
    A = aj_polynomials(a, 4)
    for j in range(1, 5):
        ref = _aj_oracle(a, j)
        got = np.zeros(max(ref.size, A[j - 1].size))
        got[:A[j - 1].size] = A[j - 1]
        assert np.allclose(got[:ref.size], ref, atol=1e-12)
        assert np.allclose(got[ref.size:], 0)


def test_a1_a2_closed_forms():
    A = aj_polynomials({3: 0.7, 4: -0.2}, 2)
    assert A[0][3] == pytest.approx(0.7)
    assert A[1][4] == pytest.approx(-0.2)
    assert A[1][6] == pytest.approx(0.7 ** 2 / 2)


@settings(max_examples=20, deadline=None)
@given(c=st.lists(st.floats(-2, 2), min_size=1, max_size=8))
def test_cdf_correction_is_antiderivative(c):
    A = np.array([0.0] + c)
    P = hermite_translate(A)
    Q = cdf_correction(A)
    z = np.linspace(-4, 4, 41)
    h = 1e-5
    lhs = (normal_pdf(z + h) * npoly.polyval(z + h, Q) - normal_pdf(z - h) * npoly.polyval(z - h, Q)) / (2 * h)
    rhs = normal_pdf(z) * (npoly.polyval(z, P) - A[0])
    assert np.allclose(lhs, rhs, atol=1e-7)


def test_fourier_identity_and_p1_formula():
    expn = build_expansion(cumulants_from_moments([0.0, 1.0, 0.8, 4.0, 3.0, 20.0]), 3)
    for j in (1, 2, 3):
        assert fourier_identity_error(expn, j) < 1e-10
    assert p1_formula_error(expn, 0.8 / 6) < 1e-14


def test_expansion_cdf_limits_and_density_integral():
    expn = build_expansion(cumulants_from_moments([0.0, 4.0, 3.0, 50.0, 10.0]), 2)
    assert expn.cdf(-40.0) == pytest.approx(0.0, abs=1e-15)
    assert expn.cdf(40.0) == pytest.approx(1.0, abs=1e-15)
    z = np.linspace(-12, 12, 24001)
    assert np.trapezoid(expn.density(z), z) == pytest.approx(1.0, abs=1e-9)
    # cdf is the integral of the density
    assert expn.cdf(0.7) - expn.cdf(-0.3) == pytest.approx(
        np.trapezoid(expn.density(np.linspace(-0.3, 0.7, 2001)), np.linspace(-0.3, 0.7, 2001)), abs=1e-8)


def test_coin_fourth_cumulant():
    chain, f = coin_chain(8)
    t = cumulants_from_moments(exact_moments(chain, f, 4)[1:])
    # kappa_4 of a +-1 coin is -2, so Gamma_4 = -16 and a_4 = -16/(24*8)
    assert t.gamma(4) == pytest.approx(-16.0)
    assert t.a(4) == pytest.approx(-16 / (24 * 8))


def test_order_zero_needs_no_cumulants():
    expn = build_expansion(cumulants_from_moments([0.0, 1.0]), 0)
    z = np.linspace(-3, 3, 7)
    assert np.allclose(expn.cdf(z), normal_cdf(z))
    with pytest.raises(InvalidSpecError):
        build_expansion(cumulants_from_moments([0.0, 1.0, 0.5]), 2)


def test_kolmogorov_point_mass_vs_normal():
    assert kolmogorov_distance(StepCDF.point_mass(0.0), normal_cdf) == pytest.approx(0.5)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_kolmogorov_dominates_dense_grid(seed):
    rng = np.random.default_rng(seed)
    F = StepCDF(np.sort(rng.normal(size=15)), rng.dirichlet(np.ones(15)))
    expn = build_expansion(cumulants_from_moments([0.0, 1.0, rng.uniform(-1, 1), 3.0]), 1)
    expn = type(expn)(expn.order, 1.5, expn.A_polys, expn.P_polys, expn.cdf_polys)
    grid = np.linspace(-8, 8, 200001)
    dense = np.max(np.abs(F(grid) - expn.cdf(grid)))
    d = kolmogorov_distance(F, expn)
    assert d >= dense - 1e-12
    assert d <= dense + 1e-3


def test_step_cdf_merges_duplicates_and_rejects_negative():
    F = StepCDF(np.array([1.0, 0.0, 1.0]), np.array([0.25, 0.5, 0.25]))
    assert F(1.0) == 1.0 and F.left(1.0) == 0.5
    with pytest.raises(InvalidSpecError):
        StepCDF(np.array([0.0]), np.array([-0.1]))


def test_esseen_bound_dominates_distance():
    N = 30
    chain, f = coin_chain(N)
    f = AdditiveFunctional(tables=f.tables, lattice=1)
    mean, sigma = mean_and_sigma(chain, f)
    dist = kolmogorov_distance(lattice_distribution(chain, f).normalized(mean, sigma), normal_cdf)
    bound = esseen_bound(lambda t: np.cos(t / sigma) ** N, lambda t: np.exp(-t * t / 2), T=3.0,
                         g_density_sup=normal_pdf(0.0))
    assert bound >= dist


def test_esseen_rejects_nonpositive_T():
    with pytest.raises(InvalidSpecError):
        esseen_bound(np.cos, np.cos, 0.0, 1.0)


def test_symmetric_coin_first_order_equals_clt():
    chain, f = coin_chain(64)
    t = cumulants_from_moments(exact_moments(chain, f, 3)[1:])
    expn = build_expansion(t, 1)
    z = np.linspace(-3, 3, 13)
    assert np.allclose(expn.cdf(z), normal_cdf(z), atol=1e-15)
