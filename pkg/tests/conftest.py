import numpy as np
import pytest

from edgeworth_lab.chain import AdditiveFunctional, ChainSpec

ACCEPTANCE_LINES = []


def random_chain(seed, sizes, lattice=None, scale=1.0, floor=0.05):
    """Dirichlet kernels bounded away from 0 and uniform f on [-scale, scale] (or (1/L)Z)."""
    rng = np.random.default_rng(seed)
    kernels = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        k = rng.dirichlet(np.ones(b), size=a) + floor
        kernels.append(k / k.sum(axis=1, keepdims=True))
    mu1 = rng.dirichlet(np.ones(sizes[0]))
    chain = ChainSpec(kernels=kernels, mu1=mu1, eps0_declared=1e-3)
    shapes = list(zip(sizes[:-1], sizes[1:]))
    if lattice:
        nums = tuple(rng.integers(-3 * lattice, 3 * lattice + 1, size=s) for s in shapes)
        f = AdditiveFunctional(tables=(), lattice=lattice, numerators=nums)
    else:
        f = AdditiveFunctional(tables=tuple(rng.uniform(-scale, scale, size=s) for s in shapes))
    return chain, f


def coin_chain(N, value=1.0, p=0.5):
    """iid X_t in {0, 1} with P(1) = p, f_t(x, y) = value * (2x - 1) on the first coordinate."""
    k = np.array([[1 - p, p], [1 - p, p]])
    chain = ChainSpec(kernels=(k,) * N, mu1=np.array([1 - p, p]), eps0_declared=0.5)
    tab = np.array([[-value, -value], [value, value]])
    return chain, AdditiveFunctional(tables=(tab,) * N)


def enumerate_law(chain, f, N=None):
    """Brute-force law of S_N by listing every path (small chains only)."""
    import itertools
    N = chain.n_steps if N is None else N
    vals, probs = [], []
    for path in itertools.product(*[range(m) for m in chain.sizes[:N + 1]]):
        p = chain.mu1[path[0]]
        s = 0.0
        for t in range(N):
            p *= chain.kernels[t][path[t], path[t + 1]]
            s += f.tables[t][path[t], path[t + 1]]
        vals.append(s)
        probs.append(p)
    return np.array(vals), np.array(probs)


@pytest.fixture
def acceptance():
    def record(k, ok, detail):
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
