import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from edgeworth_lab.chain import validate_ellipticity
from edgeworth_lab.errors import InvalidSpecError, ParameterError
from edgeworth_lab.gallery import (BetaParams, CantorParams, cantor_eval, cantor_grid_values,
                                   circle_holder_norm, gallery, holder_quotient, make_beta_lattice_chain,
                                   make_cantor_iid_chain, make_circle_holder_chain,
                                   make_elliptic_random_chain, make_named_chain, make_rare_jump_chain,
                                   plateau_measure)
from edgeworth_lab.transfer import lattice_distribution


def test_beta_examples():
    bp = BetaParams(0.3, 0.35)
    assert (bp.q(1), bp.p(1), bp.a(1)) == (1, 1, 1)
    assert (bp.q(8), bp.p(8), bp.a(8)) == (2, 1, Fraction(1, 2))
    assert (bp.q(1024), bp.p(1024), bp.a(1024)) == (8, 1, Fraction(1, 8))


def test_beta_floor_matches_float_formula():
    bp = BetaParams(0.3, 0.35)
    for n in range(1, 3000, 7):
        q = 2 ** math.floor(0.35 * math.log2(n) + 1e-12)
        assert bp.q(n) == q
        assert bp.p(n) == math.floor(n ** -0.3 * q + 1e-12)
        assert bp.a(n) <= Fraction(n) ** 0 and float(bp.a(n)) <= n ** -0.3 + 1e-12


def test_beta_denominators_divide():
    bp = BetaParams(0.3, 0.35)
    N = 4096
    assert all(bp.q(N) % bp.q(n) == 0 for n in range(1, N + 1))


def test_beta_admissible_interval_enforced():
    with pytest.raises(ParameterError, match="admissible interval"):
        BetaParams(0.3, 0.5)
    with pytest.raises(ParameterError):
        BetaParams(0.3, 0.2)


def test_beta_chain_sum_lives_on_lattice():
    chain, f = make_beta_lattice_chain(BetaParams(), 64)
    pmf = lattice_distribution(chain, f, rational=True)
    assert pmf.denominator == BetaParams().q(64)
    assert sum(pmf.probs) == 1


def test_beta_one_step_atom():
    chain, f = make_beta_lattice_chain(BetaParams(), 1)
    assert lattice_distribution(chain, f).max_atom() == pytest.approx(0.5, abs=1e-15)


def test_cantor_eval_examples():
    P = CantorParams(3, 1)
    assert cantor_eval(P, []) == 0
    assert cantor_eval(P, [], whole=1) == 1
    assert cantor_eval(P, [2]) == Fraction(1, 3)
    assert cantor_eval(P, [1]) == Fraction(1, 3)
    with pytest.raises(InvalidSpecError):
        cantor_eval(P, [5])


def test_cantor_params_derived():
    P = CantorParams(3, 2)
    assert (P.q, P.base) == (4, 7)
    assert P.alpha == pytest.approx(math.log(3) / math.log(7))


@pytest.mark.parametrize("p,k", [(3, 1), (3, 2), (5, 1)])
def test_plateau_measure_formula_and_oracle(p, k):
    P = CantorParams(p, k)
    assert plateau_measure(P, 0) == 1
    for n in range(1, 5):
        assert plateau_measure(P, n) == Fraction(p, P.base) ** n
    # oracle: interior points of every depth-D cell, evaluated digit by digit
    n, D = 2, 3
    hits = 0
    for digits in itertools.product(range(P.base), repeat=D):
        val = cantor_eval(P, list(digits) + [1, 1])
        hits += (val * p ** n).denominator != 1
    assert Fraction(hits, P.base ** D) == plateau_measure(P, n)


def test_plateau_example_values():
    assert plateau_measure(CantorParams(3, 1), 1) == Fraction(3, 5)
    assert plateau_measure(CantorParams(5, 1), 3) == Fraction(125, 729)


def test_cantor_monotone_depth4():
    vals = cantor_grid_values(CantorParams(3, 1), 4)
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_cantor_chain_is_odd_with_atom_at_zero():
    P = CantorParams(3, 1)
    chain, f = make_cantor_iid_chain(P, 50, 2)
    col = f.numerators[0][:, 0]
    assert np.array_equal(col, -col[::-1])
    pmf = lattice_distribution(chain, f)
    zero = np.flatnonzero(pmf.values == 0)
    assert zero.size == 1 and pmf.as_float()[zero[0]] > 0
    with pytest.raises(ParameterError):
        make_cantor_iid_chain(P, 60, 2)


def test_cantor_holder_quotient_depth4():
    P = CantorParams(3, 1)
    vals = cantor_grid_values(P, 4) + [Fraction(1)]
    x = np.arange(len(vals)) / 5 ** 4
    assert holder_quotient(x, np.array([float(v) for v in vals]), P.alpha) <= 2.1


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_circle_chain_densities_and_holder_norm(seed):
    M = 50
    chain, f = make_circle_holder_chain(M, seed=seed, N=20)
    for t in range(chain.n_steps):
        d = chain.density(t)
        assert d.min() >= 0.5 - 1e-12 and d.max() <= 2.0 + 1e-12
        assert circle_holder_norm(f, t, CantorParams(3, 1).alpha, M) <= 1 + 1e-9
    assert validate_ellipticity(chain).passed


def test_circle_degenerate_flagged():
    _, f = make_circle_holder_chain(50, N=5, degenerate=True)
    assert f.labels["degenerate"] and f.norm_sup == 0


def test_elliptic_seed42_passes():
    chain, _ = make_elliptic_random_chain(4, 1.0, 42, 512)
    rep = validate_ellipticity(chain)
    assert rep.passed and rep.eps_two_step >= 0.1


def test_elliptic_eta_zero_is_uniform():
    chain, _ = make_elliptic_random_chain(3, 1.0, 0, 10, eta=0.0)
    rep = validate_ellipticity(chain)
    assert rep.eps_two_step == pytest.approx(1.0) and rep.eps_upper == pytest.approx(1.0)


def test_elliptic_decay_scaling():
    _, f = make_elliptic_random_chain(4, 1.0, 5, 200, decay_beta=0.3)
    _, g = make_elliptic_random_chain(4, 1.0, 5, 200)
    ratio = f.norms() / g.norms()
    assert np.allclose(ratio, np.arange(1, 201) ** -0.3)


def test_elliptic_lattice_variant():
    _, f = make_elliptic_random_chain(4, 1.0, 5, 20, lattice=True)
    assert f.lattice == 64


def test_rare_jump_chain_is_elliptic():
    chain, f = make_rare_jump_chain(512)
    assert validate_ellipticity(chain).passed
    assert f.labels["irreducible"]


def test_every_gallery_chain_passes_its_declared_eps0():
    for name, (chain, _) in gallery(N=128).items():
        assert validate_ellipticity(chain).passed, name


def test_named_generator_lookup():
    chain, f = make_named_chain("beta", 16, {"beta": 0.3, "c": 0.35})
    assert chain.n_steps == 16
    with pytest.raises(ParameterError):
        make_named_chain("nope", 4)
