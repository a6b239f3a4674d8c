"""Named example chains: slow-variance lattice coins, Cantor-function families,
Hölder profiles on a discretized circle, a skewed rare-jump chain and generic
seeded elliptic chains.  Every generator returns ``(ChainSpec, AdditiveFunctional)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .chain import AdditiveFunctional, ChainSpec, validate_ellipticity
from .errors import InvalidSpecError, ParameterError


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass(frozen=True)
class BetaParams:
    """a_n = p_n/q_n with q_n = 2^floor(c log2 n) and p_n = floor(n^-beta q_n).

    ``s`` is the expansion order meant to fail; c must lie in (beta, s_beta)
    with s_beta = (s - 1)(1/2 - beta).
    """

    beta: float = 0.3
    c: float = 0.35
    s: int = 3

    def __post_init__(self):
        b, c = _frac(self.beta), _frac(self.c)
        if not 0 < b < Fraction(1, 2):
            raise ParameterError(f"beta must lie in (0, 1/2), got {self.beta}")
        hi = self.s_beta
        if not b < c < hi:
            raise ParameterError(f"c = {self.c} outside the admissible interval ({b}, {hi}) "
                                 f"= ({float(b)}, {float(hi)})")

    @property
    def s_beta(self) -> Fraction:
        return (self.s - 1) * (Fraction(1, 2) - _frac(self.beta))

    def q(self, n: int) -> int:
        return 2 ** _floor_log2_power(n, _frac(self.c))

    def p(self, n: int) -> int:
        """floor(n^-beta q_n), exactly: largest p with p^d n^u <= q^d for beta = u/d."""
        b = _frac(self.beta)
        u, d = b.numerator, b.denominator
        q = self.q(n)
        lhs_n, rhs = n ** u, q ** d
        lo, hi = 0, q
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if mid ** d * lhs_n <= rhs:
                lo = mid
            else:
                hi = mid - 1
        return lo

    def a(self, n: int) -> Fraction:
        return Fraction(self.p(n), self.q(n))


def _floor_log2_power(n: int, c: Fraction) -> int:
    """floor(c log2 n): largest k with 2^(k den) <= n^num."""
    u, d = c.numerator, c.denominator
    target = n ** u
    k = 0
    while 2 ** ((k + 1) * d) <= target:
        k += 1
    return k


def make_beta_lattice_chain(params: BetaParams, N: int):
    """Independent fair signs Y_n = +-1 with f_n = a_n Y_n on the lattice (1/q_N)Z.

    The sign of summand n is the state X_{n-1} (0 -> -1, 1 -> +1), so f_n
    depends on its first argument only.
    """
    if N < 1:
        raise ParameterError("N must be positive")
    half = Fraction(1, 2)
    kernel = np.full((2, 2), 0.5)
    exact = ((half, half), (half, half))
    chain = ChainSpec(kernels=(kernel,) * N, mu1=np.array([0.5, 0.5]), eps0_declared=1.0,
                      exact_kernels=(exact,) * N)
    qN = params.q(N)
    nums = []
    for n in range(1, N + 1):
        a = params.a(n)
        v = int(a * qN)
        if Fraction(v, qN) != a:
            raise InvalidSpecError(f"q_{n} does not divide q_{N}")
        nums.append(np.array([[-v, -v], [v, v]], dtype=np.int64))
    f = AdditiveFunctional(tables=(), lattice=qN, numerators=tuple(nums),
                           labels={"reducible_by_construction": True, "irreducible": False,
                                   "family": "beta-lattice", "beta": params.beta, "c": params.c})
    return chain, f


@dataclass(frozen=True)
class CantorParams:
    p: int = 3
    k: int = 1

    def __post_init__(self):
        if self.p < 3 or self.k < 1:
            raise ParameterError(f"need p >= 3 and k >= 1, got p={self.p}, k={self.k}")

    @property
    def q(self) -> int:
        return (self.p - 1) * self.k

    @property
    def base(self) -> int:
        return self.p + self.q

    @property
    def alpha(self) -> float:
        return math.log(self.p) / math.log(self.base)


def cantor_eval(params: CantorParams, digits, whole: int = 0) -> Fraction:
    """Cantor function at x = whole.d_1 d_2 ... in base p+q, exactly.

    Digits divisible by k+1 contribute d/(k+1) as base-p digits; the first
    other digit d_n closes the value with (floor(d_n/(k+1)) + 1) p^-n.
    """
    if whole == 1:
        if any(d for d in digits):
            raise InvalidSpecError("x > 1 is outside [0, 1]")
        return Fraction(1)
    if whole != 0:
        raise InvalidSpecError("x must lie in [0, 1]")
    p, k1 = params.p, params.k + 1
    val = Fraction(0)
    scale = Fraction(1)
    for d in digits:
        d = int(d)
        if not 0 <= d < params.base:
            raise InvalidSpecError(f"digit {d} out of range for base {params.base}")
        scale /= p
        if d % k1:
            return val + (d // k1 + 1) * scale
        val += (d // k1) * scale
    return val


def plateau_measure(params: CantorParams, n: int) -> Fraction:
    """Lebesgue measure of {x in [0,1]: p^n f(x) is not an integer}.

    Walks the base-(p+q) cells of depth n: a cell whose digits already hit a
    stop digit lies on a plateau valued in p^-n Z; a surviving cell carries an
    increasing piece strictly between two points of p^-n Z except at its ends.
    """
    if n < 0:
        raise ParameterError("n must be non-negative")
    base, k1 = params.base, params.k + 1

    @lru_cache(maxsize=None)
    def surviving(depth: int) -> int:
        if depth == 0:
            return 1
        return sum(surviving(depth - 1) for d in range(base) if d % k1 == 0)

    return Fraction(surviving(n), base ** n)


def cantor_grid_values(params: CantorParams, depth: int) -> list:
    """f at the left endpoints j/base^depth, j = 0..base^depth - 1."""
    out = []
    for j in range(params.base ** depth):
        digits = []
        x = j
        for _ in range(depth):
            digits.append(x % params.base)
            x //= params.base
        out.append(cantor_eval(params, digits[::-1]))
    return out


def holder_quotient(x: np.ndarray, y: np.ndarray, alpha: float, circle: float | None = None) -> float:
    """max |y_i - y_j| / dist(x_i, x_j)^alpha over all pairs (circle length optional)."""
    dx = np.abs(x[:, None] - x[None, :])
    if circle is not None:
        dx = np.minimum(dx, circle - dx)
    dy = np.abs(y[:, None] - y[None, :])
    mask = dx > 0
    return float(np.max(dy[mask] / dx[mask] ** alpha))


def make_cantor_iid_chain(params: CantorParams, M_disc: int, N: int):
    """Iid uniform cells of [-1, 1] with the odd Cantor function on the lattice p^-depth Z.

    M_disc must be 2 base^depth; cell i >= M_disc/2 has left endpoint
    (i - M_disc/2)/base^depth and its value is f there, the mirrored cell carries -f.
    """
    half = M_disc // 2
    depth = 0
    while params.base ** depth < half:
        depth += 1
    if M_disc % 2 or params.base ** depth != half:
        raise ParameterError(f"M_disc must equal 2*{params.base}^depth, got {M_disc}")
    right = cantor_grid_values(params, depth)
    L = params.p ** depth
    vals = [-right[half - 1 - i] for i in range(half)] + right
    nums = np.array([int(v * L) for v in vals], dtype=np.int64)
    table = np.repeat(nums[:, None], M_disc, axis=1)
    kernel = np.full((M_disc, M_disc), 1.0 / M_disc)
    chain = ChainSpec(kernels=(kernel,) * N, mu1=np.full(M_disc, 1.0 / M_disc), eps0_declared=1.0)
    f = AdditiveFunctional(tables=(), lattice=L, numerators=(table,) * N,
                           labels={"reducible_by_construction": True, "irreducible": False,
                                   "family": "cantor-iid", "p": params.p, "k": params.k,
                                   "depth": depth})
    return chain, f


def _elliptic_kernels(rng, M: int, N: int, lo: float = 0.5, hi: float = 2.0, modes: int = 3):
    """Smooth seeded perturbations of the uniform kernel on Z/M with densities in [lo, hi]."""
    theta = 2 * np.pi * np.arange(M) / M
    kernels = []
    for _ in range(N):
        dens = np.ones((M, M))
        for m in range(1, modes + 1):
            a, b = rng.uniform(-1, 1, size=2) * 0.35 / m
            ph = rng.uniform(0, 2 * np.pi)
            dens += a * np.cos(m * (theta[None, :] - theta[:, None]) + ph) \
                + b * np.sin(m * theta[None, :] + ph) * np.cos(theta[:, None])
        for _ in range(50):
            dens = np.clip(dens, lo, hi)
            dens /= dens.mean(axis=1, keepdims=True)
            if dens.min() >= lo and dens.max() <= hi:
                break
        kernels.append(dens / M)
    return kernels


def make_circle_holder_chain(M_disc: int, alpha: float | None = None, seed: int = 0, N: int = 256,
                             params: CantorParams | None = None, degenerate: bool = False):
    """Markov chain on M_disc points of a circle of length 2 with Cantor-profile summands.

    The profile is g(x) = F(1 - |x|) on [-1, 1) with F the Cantor function of
    ``params`` (so g is Hölder with exponent alpha = log p/log(p+q)), rotated by
    a seeded number of cells at each time and scaled so that sup|f_n| plus its
    grid Hölder constant is at most 1.  M_disc must be 2 (p+q)^depth.
    """
    if M_disc < 16:
        raise ParameterError("M_disc must be at least 16")
    params = CantorParams(3, 1) if params is None else params
    if alpha is not None and abs(alpha - params.alpha) > 1e-12:
        raise ParameterError(f"alpha {alpha} does not match the Cantor exponent {params.alpha}")
    rng = np.random.default_rng(seed)
    kernels = _elliptic_kernels(rng, M_disc, N)
    chain = ChainSpec(kernels=kernels, mu1=np.full(M_disc, 1.0 / M_disc), eps0_declared=0.25)
    if degenerate:
        f = AdditiveFunctional(tables=tuple(np.zeros((M_disc, M_disc)) for _ in range(N)),
                               labels={"degenerate": True, "family": "circle-holder"})
        return chain, f
    half = M_disc // 2
    depth = round(math.log(half, params.base))
    if params.base ** depth != half:
        raise ParameterError(f"M_disc must equal 2*{params.base}^depth, got {M_disc}")
    F = cantor_grid_values(params, depth) + [Fraction(1)]
    x = -1.0 + 2.0 * np.arange(M_disc) / M_disc
    # g(x) = F(1 - |x|) at grid points, exact because 1 - |x| is a grid point
    idx = half - np.abs(np.arange(M_disc) - half)
    g = np.array([float(F[i]) for i in idx])
    hol = holder_quotient(x, g, params.alpha, circle=2.0)
    scale = 1.0 / (np.max(np.abs(g)) + hol)
    tables = []
    for _ in range(N):
        shift = int(rng.integers(M_disc))
        prof = scale * np.roll(g, shift)
        tables.append(np.repeat(prof[:, None], M_disc, axis=1))
    f = AdditiveFunctional(tables=tuple(tables),
                           labels={"irreducible": True, "family": "circle-holder",
                                   "alpha": params.alpha, "scale": scale, "seed": seed})
    return chain, f


def circle_holder_norm(f: AdditiveFunctional, n: int, alpha: float, M_disc: int) -> float:
    """sup|f_n| + grid Hölder constant of x -> f_n(x, .) on the circle of length 2."""
    x = -1.0 + 2.0 * np.arange(M_disc) / M_disc
    prof = f.tables[n][:, 0]
    return float(np.max(np.abs(prof)) + holder_quotient(x, prof, alpha, circle=2.0))


def make_elliptic_random_chain(M: int, K: float, seed: int, N: int, decay_beta: float | None = None,
                               eta: float | None = None, lattice: bool = False, eps0: float = 0.1):
    """Kernels (1 - eta) uniform + eta Dirichlet noise, f_n uniform in [-K, K].

    eta defaults to 0.9 and is halved until the two-step bound reaches eps0.
    With ``decay_beta`` f_n is scaled by n^-beta; with ``lattice`` values are
    rounded to (1/64)Z.
    """
    if M < 2 or not K > 0:
        raise ParameterError("need M >= 2 and K > 0")
    rng = np.random.default_rng(seed)
    noise = [rng.dirichlet(np.ones(M), size=M) for _ in range(N)]
    raw = [rng.uniform(-K, K, size=(M, M)) for _ in range(N)]
    u = np.full((M, M), 1.0 / M)
    e = 0.9 if eta is None else float(eta)
    while True:
        kernels = [(1 - e) * u + e * z for z in noise]
        kernels = [k / k.sum(axis=1, keepdims=True) for k in kernels]
        chain = ChainSpec(kernels=kernels, mu1=np.full(M, 1.0 / M), eps0_declared=eps0)
        if e == 0 or validate_ellipticity(chain).passed or eta is not None:
            break
        e /= 2
    if decay_beta is not None:
        raw = [r * (n + 1) ** (-decay_beta) for n, r in enumerate(raw)]
    labels = {"irreducible": not lattice, "family": "elliptic-random", "seed": seed,
              "M": M, "K": K, "eta": e}
    if decay_beta is not None:
        labels["decay_beta"] = decay_beta
    if lattice:
        f = AdditiveFunctional(tables=tuple(np.round(r * 64) / 64 for r in raw), lattice=64,
                               labels=labels)
    else:
        f = AdditiveFunctional(tables=tuple(raw), labels=labels)
    return chain, f


def make_rare_jump_chain(N: int, expected_jumps: float = 2.0, jump: float = 80.0, seed: int = 7):
    """A skewed, non-lattice chain: rare states carry large jumps.

    States 0, 1 are common and states 2, 3 rare with total stationary weight
    expected_jumps/N.  The reference measure is that stationary law, so every
    density stays in [1/2, 3/2] even though the rare states are rare.  Kernels
    are seeded multiplicative perturbations of the stationary law.
    """
    rng = np.random.default_rng(seed)
    rho = expected_jumps / N
    pi = np.array([(1 - rho) / 2, (1 - rho) / 2, rho / 2, rho / 2])
    kernels = []
    for _ in range(N):
        eps = rng.uniform(-0.4, 0.4, size=(4, 4))
        eps -= (eps @ pi)[:, None]                # rows of pi*(1+eps) sum to 1
        eps = np.clip(eps, -0.5, 0.5)
        k = pi[None, :] * (1 + eps)
        k /= k.sum(axis=1, keepdims=True)
        kernels.append(k)
    chain = ChainSpec(kernels=kernels, mu1=pi, reference=[pi] * N, eps0_declared=0.2)
    base = np.array([-1.0, 1.0, jump, jump * (math.sqrt(5) - 1) / 1.2])
    tables = []
    for _ in range(N):
        wiggle = rng.uniform(-0.3, 0.3, size=(4, 1)) * np.array([[1.0, 1.0, 1.0, 1.0]])
        tables.append(base[None, :] + wiggle * math.sqrt(2))
    f = AdditiveFunctional(tables=tuple(tables),
                           labels={"irreducible": True, "family": "rare-jump", "seed": seed,
                                   "expected_jumps": expected_jumps, "jump": jump})
    return chain, f


def gallery(seed: int = 42, N: int = 4096, M: int = 4, circle_M: int = 50, cantor_M: int = 50) -> dict:
    """The named chains used by audits: name -> (chain, functional)."""
    return {
        "elliptic_seed": make_elliptic_random_chain(M, 1.0, seed, N),
        "elliptic_decay": make_elliptic_random_chain(M, 1.0, seed + 1, N, decay_beta=0.3),
        "elliptic_lattice": make_elliptic_random_chain(M, 1.0, seed + 2, N, lattice=True),
        "beta_lattice": make_beta_lattice_chain(BetaParams(0.3, 0.35), N),
        "cantor_iid": make_cantor_iid_chain(CantorParams(3, 1), cantor_M, N),
        "circle_holder": make_circle_holder_chain(circle_M, seed=seed, N=N),
        "rare_jump": make_rare_jump_chain(N, seed=seed),
    }


GENERATORS = {
    "beta": lambda N, beta=0.3, c=0.35, s=3: make_beta_lattice_chain(BetaParams(beta, c, s), N),
    "cantor": lambda N, p=3, k=1, M_disc=50: make_cantor_iid_chain(CantorParams(p, k), M_disc, N),
    "circle": lambda N, M_disc=50, seed=0, p=3, k=1, degenerate=False: make_circle_holder_chain(
        M_disc, seed=seed, N=N, params=CantorParams(p, k), degenerate=degenerate),
    "elliptic": lambda N, M=4, K=1.0, seed=42, decay_beta=None, lattice=False:
        make_elliptic_random_chain(M, K, seed, N, decay_beta=decay_beta, lattice=lattice),
    "rare_jump": lambda N, expected_jumps=2.0, jump=80.0, seed=7:
        make_rare_jump_chain(N, expected_jumps, jump, seed),
}


def make_named_chain(name: str, N: int, params: dict | None = None):
    """Build a generator by name; unknown names raise ParameterError."""
    if name not in GENERATORS:
        raise ParameterError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    try:
        return GENERATORS[name](N, **(params or {}))
    except TypeError as exc:
        raise ParameterError(f"bad parameters for generator {name!r}: {exc}") from exc
