import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import coin_chain, enumerate_law, random_chain
from edgeworth_lab.chain import (AdditiveFunctional, ChainSpec, centered, chain_from_json, chain_to_json,
                                 covariance_band, mixing_covariance, sample_paths, summand_means,
                                 validate_ellipticity)
from edgeworth_lab.errors import InvalidSpecError, RangeError, StructuralError


def test_rows_must_sum_to_one():
    with pytest.raises(InvalidSpecError):
        ChainSpec(kernels=[np.array([[0.5, 0.4], [0.5, 0.5]])], mu1=np.array([0.5, 0.5]))


def test_negative_entries_rejected():
    with pytest.raises(InvalidSpecError):
        ChainSpec(kernels=[np.array([[1.2, -0.2], [0.5, 0.5]])], mu1=np.array([0.5, 0.5]))


def test_shape_mismatch_rejected():
    k1 = np.full((2, 3), 1 / 3)
    k2 = np.full((2, 2), 0.5)
    with pytest.raises(StructuralError):
        ChainSpec(kernels=[k1, k2], mu1=np.array([0.5, 0.5]))


def test_functional_off_lattice_rejected():
    with pytest.raises(InvalidSpecError):
        AdditiveFunctional(tables=(np.array([[0.3, 0.0]]),), lattice=2)


def test_uniform_chain_has_ellipticity_one():
    M = 3
    k = np.full((M, M), 1 / M)
    rep = validate_ellipticity(ChainSpec(kernels=[k] * 5, mu1=np.full(M, 1 / M), eps0_declared=1.0))
    assert rep.passed
    assert rep.eps_upper == pytest.approx(1.0)
    assert rep.eps_two_step == pytest.approx(1.0)


def test_ellipticity_fails_for_deterministic_chain():
    k = np.array([[0.0, 1.0], [1.0, 0.0]])
    rep = validate_ellipticity(ChainSpec(kernels=[k] * 4, mu1=np.array([1.0, 0.0])))
    assert not rep.passed
    assert rep.eps_two_step == 0.0


def test_centered_summands_have_zero_mean():
    chain, f = random_chain(3, [3, 2, 4, 3])
    assert np.allclose(summand_means(chain, centered(chain, f)), 0.0, atol=1e-15)


def test_summand_means_against_enumeration():
    chain, f = random_chain(11, [2, 3, 2])
    vals, probs = enumerate_law(chain, f)
    assert summand_means(chain, f).sum() == pytest.approx(vals @ probs, abs=1e-14)


def test_mixing_covariance_against_enumeration():
    import itertools
    chain, f = random_chain(5, [2, 3, 2, 3, 2])
    n, k = 0, 2
    ex = ey = exy = 0.0
    for path in itertools.product(*[range(m) for m in chain.sizes]):
        p = chain.mu1[path[0]] * np.prod([chain.kernels[t][path[t], path[t + 1]] for t in range(4)])
        a = f.tables[n][path[n], path[n + 1]]
        b = f.tables[n + k][path[n + k], path[n + k + 1]]
        ex += p * a
        ey += p * b
        exy += p * a * b
    assert mixing_covariance(chain, f, n, k) == pytest.approx(exy - ex * ey, abs=1e-14)


def test_covariance_band_decays_for_elliptic_chain():
    chain, f = random_chain(8, [3] * 41, floor=0.5)
    band = covariance_band(chain, f, 12)
    ratio = np.max(np.abs(band[:20, 12])) / np.max(np.abs(band[:20, 0]))
    assert ratio < 1e-3


def test_mixing_covariance_range_error():
    chain, f = random_chain(1, [2, 2, 2])
    with pytest.raises(RangeError):
        mixing_covariance(chain, f, 1, 5)


def test_sampler_shard_invariance_and_determinism():
    chain, f = random_chain(2, [3, 4, 3, 3, 2])
    a = sample_paths(chain, f, 3000, seed=9, shard_size=1 << 16).sums
    b = sample_paths(chain, f, 3000, seed=9, shard_size=257).sums
    c = sample_paths(chain, f, 3000, seed=10).sums
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sampler_matches_path_law():
    chain, f = random_chain(4, [2, 3, 2])
    s = sample_paths(chain, f, 200_000, seed=1, return_paths=True)
    paths = s.paths
    emp = np.zeros((2, 3, 2))
    np.add.at(emp, (paths[:, 0], paths[:, 1], paths[:, 2]), 1)
    emp /= paths.shape[0]
    exact = chain.mu1[:, None, None] * chain.kernels[0][:, :, None] * chain.kernels[1][None]
    # 5 standard errors per cell
    se = np.sqrt(exact * (1 - exact) / paths.shape[0])
    assert np.all(np.abs(emp - exact) <= 5 * se + 1e-12)
    recomputed = f.tables[0][paths[:, 0], paths[:, 1]] + f.tables[1][paths[:, 1], paths[:, 2]]
    assert np.allclose(recomputed, s.sums)


def test_sampler_mean_for_coin():
    chain, f = coin_chain(50)
    s = sample_paths(chain, f, 100_000, seed=3).sums
    assert abs(s.mean()) < 5 * math.sqrt(50 / 100_000)
    assert s.var() == pytest.approx(50, rel=0.02)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), sizes=st.lists(st.integers(1, 4), min_size=2, max_size=6),
       lattice=st.sampled_from([None, 1, 3, 8]))
def test_json_round_trip(seed, sizes, lattice):
    chain, f = random_chain(seed, sizes, lattice=lattice)
    text = chain_to_json(chain, f, {"seed": seed})
    c2, f2 = chain_from_json(text)
    assert c2.sizes == chain.sizes
    assert all(np.array_equal(a, b) for a, b in zip(c2.kernels, chain.kernels))
    assert all(np.array_equal(a, b) for a, b in zip(f2.tables, f.tables))
    assert f2.lattice == f.lattice


def test_json_schema_errors():
    chain, f = random_chain(0, [2, 2, 2])
    import json
    doc = json.loads(chain_to_json(chain, f))
    doc["kernels"][1] = doc["kernels"][1][:3]
    with pytest.raises(StructuralError):
        chain_from_json(json.dumps(doc))
    with pytest.raises(InvalidSpecError):
        chain_from_json("{not json")
    with pytest.raises(InvalidSpecError):
        chain_from_json(json.dumps({"version": 7}))


def test_window_is_the_sub_chain():
    chain, f = random_chain(6, [2, 3, 4, 2, 3])
    sub = chain.window(1, 2)
    assert sub.sizes == (3, 4, 2)
    assert np.allclose(sub.mu1, chain.mu1 @ chain.kernels[0])
    assert np.array_equal(f.window(1, 2).tables[0], f.tables[1])
