"""Finite inhomogeneous Markov chains and additive functionals over them.

Times are 0-based internally: the chain visits X_0, ..., X_N and kernel
``kernels[t]`` moves X_t to X_{t+1}.  The summand ``f.tables[t]`` is evaluated
on the pair (X_t, X_{t+1}), so S_N = sum_t f_t(X_t, X_{t+1}) has N terms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidSpecError, RangeError, StructuralError

ROW_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """A finite inhomogeneous Markov chain with reference measures.

    ``reference[t]`` is the reference law at time t.  Entry 0 is never used in
    a density (the initial law plays that role) and is stored as uniform.
    """

    kernels: tuple
    mu1: np.ndarray
    reference: tuple = None
    eps0_declared: float = 0.1
    exact_kernels: tuple | None = None

    def __post_init__(self):
        if len(self.kernels) == 0:
            raise StructuralError("a chain needs at least one kernel")
        kernels = tuple(_frozen(k) for k in self.kernels)
        for t, k in enumerate(kernels):
            if k.ndim != 2:
                raise StructuralError(f"kernel {t} is not a matrix")
            if t > 0 and k.shape[0] != kernels[t - 1].shape[1]:
                raise StructuralError(
                    f"kernel {t} has {k.shape[0]} rows but kernel {t - 1} "
                    f"has {kernels[t - 1].shape[1]} columns")
        sizes = (kernels[0].shape[0],) + tuple(k.shape[1] for k in kernels)
        mu1 = _frozen(self.mu1)
        if mu1.shape != (sizes[0],):
            raise StructuralError(f"mu1 has shape {mu1.shape}, expected ({sizes[0]},)")

        if self.reference is None:
            reference = tuple(_frozen(np.full(m, 1.0 / m)) for m in sizes)
        else:
            ref = list(self.reference)
            if len(ref) == len(sizes) - 1:
                ref = [np.full(sizes[0], 1.0 / sizes[0])] + ref
            if len(ref) != len(sizes):
                raise StructuralError(
                    f"expected {len(sizes) - 1} reference laws, got {len(self.reference)}")
            reference = tuple(_frozen(r) for r in ref)
            for t, (r, m) in enumerate(zip(reference, sizes)):
                if r.shape != (m,):
                    raise StructuralError(f"reference {t} has shape {r.shape}, expected ({m},)")

        for t, k in enumerate(kernels):
            if np.any(k < 0):
                raise InvalidSpecError(f"kernel {t} has negative entries")
            dev = np.max(np.abs(k.sum(axis=1) - 1.0))
            if dev > ROW_TOL:
                raise InvalidSpecError(f"kernel {t} rows deviate from 1 by {dev:.3e}")
        if np.any(mu1 < 0) or abs(mu1.sum() - 1.0) > ROW_TOL:
            raise InvalidSpecError("mu1 is not a probability vector")
        for t, r in enumerate(reference[1:], start=1):
            if np.any(r <= 0):
                raise InvalidSpecError(f"reference law at time {t} has a non-positive weight")
            if abs(r.sum() - 1.0) > ROW_TOL:
                raise InvalidSpecError(f"reference law at time {t} does not sum to 1")
        if not self.eps0_declared > 0:
            raise InvalidSpecError("eps0_declared must be positive")

        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "reference", reference)
        object.__setattr__(self, "eps0_declared", float(self.eps0_declared))
        if self.exact_kernels is not None:
            ek = tuple(tuple(tuple(Fraction(v) for v in row) for row in k)
                       for k in self.exact_kernels)
            for t, k in enumerate(ek):
                if any(sum(row) != 1 for row in k):
                    raise InvalidSpecError(f"exact kernel {t} rows do not sum to 1")
            object.__setattr__(self, "exact_kernels", ek)

    @property
    def n_steps(self) -> int:
        return len(self.kernels)

    @property
    def sizes(self) -> tuple:
        return (self.kernels[0].shape[0],) + tuple(k.shape[1] for k in self.kernels)

    def density(self, t: int) -> np.ndarray:
        """Density of kernel t with respect to the reference law at time t+1."""
        return self.kernels[t] / self.reference[t + 1][None, :]

    def is_rank_one(self, t: int) -> bool:
        """True when kernel t has identical rows (X_{t+1} independent of X_t)."""
        k = self.kernels[t]
        return bool(np.all(k == k[0:1, :]))

    def window(self, start: int, n: int) -> "ChainSpec":
        """The chain restricted to kernels start..start+n-1, started from the law of X_start."""
        if start < 0 or n < 1 or start + n > self.n_steps:
            raise RangeError(f"window ({start}, {n}) outside 0..{self.n_steps}")
        mu = marginal_laws(self)[start]
        mu = np.clip(mu, 0.0, None)
        mu = mu / mu.sum()
        ek = None if self.exact_kernels is None else self.exact_kernels[start:start + n]
        return ChainSpec(kernels=self.kernels[start:start + n], mu1=mu,
                         reference=self.reference[start:start + n + 1],
                         eps0_declared=self.eps0_declared, exact_kernels=ek)


@dataclass(frozen=True, eq=False)
class AdditiveFunctional:
    """Tables f_t(x, y) of an additive functional, optionally on a lattice (1/L)Z.

    With a lattice, ``numerators[t]`` holds the exact integers L*f_t and the
    float ``tables`` are derived from them.
    """

    tables: tuple
    lattice: int | None = None
    numerators: tuple | None = None
    labels: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.lattice is not None:
            L = int(self.lattice)
            if L < 1:
                raise InvalidSpecError("lattice denominator must be a positive integer")
            if self.numerators is None:
                nums = []
                for t, tab in enumerate(self.tables):
                    scaled = np.asarray(tab, dtype=float) * L
                    rounded = np.rint(scaled)
                    if np.any(np.abs(scaled - rounded) > 1e-9):
                        raise InvalidSpecError(f"table {t} is not on the lattice (1/{L})Z")
                    nums.append(rounded.astype(np.int64))
            else:
                nums = [np.asarray(n_, dtype=np.int64) for n_ in self.numerators]
            nums = tuple(_frozen(n_, dtype=np.int64) for n_ in nums)
            tables = tuple(_frozen(n_ / L) for n_ in nums)
            object.__setattr__(self, "lattice", L)
            object.__setattr__(self, "numerators", nums)
        else:
            if self.numerators is not None:
                raise InvalidSpecError("numerators given without a lattice denominator")
            tables = tuple(_frozen(t) for t in self.tables)
        for t, tab in enumerate(tables):
            if tab.ndim != 2:
                raise StructuralError(f"table {t} is not a matrix")
            if not np.all(np.isfinite(tab)):
                raise InvalidSpecError(f"table {t} has non-finite entries")
        object.__setattr__(self, "tables", tables)
        object.__setattr__(self, "labels", dict(self.labels))

    @classmethod
    def from_fractions(cls, tables, labels=None) -> "AdditiveFunctional":
        """Build a lattice functional from tables of Fractions (common denominator found)."""
        fr = [[[Fraction(v) for v in row] for row in tab] for tab in tables]
        L = 1
        for tab in fr:
            for row in tab:
                for v in row:
                    L = L * v.denominator // math.gcd(L, v.denominator)
        nums = [np.array([[int(v * L) for v in row] for row in tab], dtype=np.int64) for tab in fr]
        return cls(tables=(), lattice=L, numerators=tuple(nums), labels=labels or {})

    @property
    def n_steps(self) -> int:
        return len(self.tables)

    @property
    def norm_sup(self) -> float:
        return max(float(np.max(np.abs(t))) for t in self.tables)

    def norms(self) -> np.ndarray:
        """Per-summand sup norms ||f_t||_inf."""
        return np.array([float(np.max(np.abs(t))) for t in self.tables])

    def exact(self, t: int) -> list:
        """Table t as nested lists of Fractions (lattice functionals only)."""
        if self.lattice is None:
            raise InvalidSpecError("exact values need lattice metadata")
        return [[Fraction(int(v), self.lattice) for v in row] for row in self.numerators[t]]

    def depends_on_first_only(self, t: int) -> bool:
        tab = self.tables[t]
        return bool(np.all(tab == tab[:, 0:1]))

    def window(self, start: int, n: int) -> "AdditiveFunctional":
        if start < 0 or n < 1 or start + n > self.n_steps:
            raise RangeError(f"window ({start}, {n}) outside 0..{self.n_steps}")
        if self.lattice is not None:
            return AdditiveFunctional(tables=(), lattice=self.lattice,
                                      numerators=self.numerators[start:start + n],
                                      labels=self.labels)
        return AdditiveFunctional(tables=self.tables[start:start + n], labels=self.labels)

    def scaled(self, c: float) -> "AdditiveFunctional":
        return AdditiveFunctional(tables=tuple(c * t for t in self.tables), labels=self.labels)

    def shifted(self, shifts: Sequence[float]) -> "AdditiveFunctional":
        return AdditiveFunctional(tables=tuple(t + s for t, s in zip(self.tables, shifts)),
                                  labels=self.labels)


def check_compatible(chain: ChainSpec, f: AdditiveFunctional, n: int | None = None) -> int:
    """Validate shapes of ``f`` against ``chain`` and return the number of summands used."""
    n = chain.n_steps if n is None else int(n)
    if n < 0 or n > chain.n_steps:
        raise RangeError(f"N={n} outside 0..{chain.n_steps}")
    if f.n_steps < n:
        raise StructuralError(f"functional has {f.n_steps} tables, need {n}")
    for t in range(n):
        if f.tables[t].shape != chain.kernels[t].shape:
            raise StructuralError(
                f"table {t} has shape {f.tables[t].shape}, kernel has {chain.kernels[t].shape}")
    return n


@dataclass(frozen=True)
class EllipticityReport:
    eps_upper: float
    eps_two_step: float
    eps0_declared: float
    passed: bool

    @property
    def pass_(self) -> bool:
        return self.passed


def validate_ellipticity(chain: ChainSpec) -> EllipticityReport:
    """Largest one-step density and smallest two-step density of the chain."""
    eps_upper = max(float(np.max(chain.density(t))) for t in range(chain.n_steps))
    eps_two = math.inf
    for t in range(chain.n_steps - 1):
        two = (chain.kernels[t] @ chain.kernels[t + 1]) / chain.reference[t + 2][None, :]
        eps_two = min(eps_two, float(np.min(two)))
    eps0 = chain.eps0_declared
    passed = eps_two >= eps0 and eps_upper <= 1.0 / eps0
    return EllipticityReport(eps_upper, eps_two, eps0, bool(passed))


def marginal_laws(chain: ChainSpec) -> list:
    """Laws of X_0, ..., X_N."""
    laws = [np.array(chain.mu1)]
    for k in chain.kernels:
        laws.append(laws[-1] @ k)
    return laws


def summand_means(chain: ChainSpec, f: AdditiveFunctional, n: int | None = None) -> np.ndarray:
    """E f_t(X_t, X_{t+1}) for t < n."""
    n = check_compatible(chain, f, n)
    laws = marginal_laws(chain)
    return np.array([float(laws[t] @ (chain.kernels[t] * f.tables[t]).sum(axis=1))
                     for t in range(n)])


def centered(chain: ChainSpec, f: AdditiveFunctional, n: int | None = None) -> AdditiveFunctional:
    """The functional with each summand centered by its mean (lattice metadata dropped)."""
    n = check_compatible(chain, f, n)
    means = summand_means(chain, f, n)
    return AdditiveFunctional(tables=tuple(f.tables[t] - means[t] for t in range(n)),
                              labels=f.labels)


def mixing_covariance(chain: ChainSpec, f: AdditiveFunctional, n: int, k: int) -> float:
    """Cov(f_n(X_n, X_{n+1}), f_{n+k}(X_{n+k}, X_{n+k+1})), computed exactly."""
    check_compatible(chain, f)
    if n < 0 or k < 0 or n + k >= chain.n_steps:
        raise RangeError(f"(n={n}, k={k}) outside the chain of length {chain.n_steps}")
    return float(covariance_band(chain, f, k, start=n, stop=n + 1)[0, k])


def covariance_band(chain: ChainSpec, f: AdditiveFunctional, max_lag: int,
                    start: int = 0, stop: int | None = None) -> np.ndarray:
    """B[i, k] = Cov(Y_{start+i}, Y_{start+i+k}) for 0 <= k <= max_lag (0 past the end).

    All start indices are propagated together, one lag at a time.
    """
    n = check_compatible(chain, f)
    stop = n if stop is None else stop
    laws = marginal_laws(chain)
    idx = np.arange(start, stop)
    means = summand_means(chain, f)
    # v_i(y) = E[(Y_i - EY_i) ; X_{i+1} = y]
    v = np.stack([laws[i][:, None] * chain.kernels[i] * (f.tables[i] - means[i])
                  for i in idx]).sum(axis=1) if len(set(chain.sizes)) == 1 else None
    band = np.zeros((len(idx), max_lag + 1))
    if v is None:
        for a, i in enumerate(idx):
            vi = (laws[i][:, None] * chain.kernels[i] * (f.tables[i] - means[i])).sum(axis=0)
            band[a, 0] = float(laws[i] @ (chain.kernels[i] * (f.tables[i] - means[i]) ** 2).sum(axis=1))
            for lag in range(1, max_lag + 1):
                j = i + lag
                if j >= n:
                    break
                g = (chain.kernels[j] * f.tables[j]).sum(axis=1)
                band[a, lag] = float(vi @ g)
                if j + 1 < n:
                    vi = vi @ chain.kernels[j]
        return band
    kern = np.stack(chain.kernels)
    gvec = np.stack([(chain.kernels[j] * f.tables[j]).sum(axis=1) for j in range(n)])
    band[:, 0] = [float(laws[i] @ (chain.kernels[i] * (f.tables[i] - means[i]) ** 2).sum(axis=1))
                  for i in idx]
    for lag in range(1, max_lag + 1):
        j = idx + lag
        ok = j < n
        if not ok.any():
            break
        band[ok, lag] = np.einsum("im,im->i", v[ok], gvec[j[ok]])
        nxt = np.minimum(j, n - 1)
        v = np.einsum("im,imk->ik", v, kern[nxt])
    return band


@dataclass(frozen=True)
class PathSample:
    sums: np.ndarray
    paths: np.ndarray | None
    centered: bool


def sample_paths(chain: ChainSpec, f: AdditiveFunctional, n_paths: int, seed: int,
                 n: int | None = None, center: bool = False, return_paths: bool = False,
                 shard_size: int = 1 << 16) -> PathSample:
    """Draw ``n_paths`` independent paths and return S_N for each.

    Every path draws from its own stream keyed by ``seed`` and its index, so
    the output does not depend on ``shard_size`` or on the order shards run.
    """
    from ._kernels import simulate_shard

    n = check_compatible(chain, f, n)
    if n_paths <= 0:
        return PathSample(np.zeros(0), np.zeros((0, n + 1), dtype=np.int64) if return_paths else None,
                          center)
    cum_mu = np.cumsum(chain.mu1)
    width = max(chain.sizes)
    cum_k = np.zeros((max(n, 1), width, width))
    tabs = np.zeros((max(n, 1), width, width))
    for t in range(n):
        m0, m1 = chain.kernels[t].shape
        c = np.cumsum(chain.kernels[t], axis=1)
        c[:, -1] = 1.0
        cum_k[t, :m0, :m1] = c
        cum_k[t, :m0, m1:] = 1.0
        tabs[t, :m0, :m1] = f.tables[t]
    cum_mu = cum_mu.copy()
    cum_mu[-1] = 1.0
    key = np.random.SeedSequence(seed).generate_state(1, dtype=np.uint64)[0]
    sums = np.empty(n_paths)
    paths = np.empty((n_paths, n + 1), dtype=np.int64) if return_paths else np.empty((0, 0), dtype=np.int64)
    for lo in range(0, n_paths, shard_size):
        hi = min(n_paths, lo + shard_size)
        sub_paths = paths[lo:hi] if return_paths else paths
        simulate_shard(key, lo, hi - lo, n, cum_mu, cum_k, tabs, sums[lo:hi], sub_paths, return_paths)
    if center:
        sums -= float(summand_means(chain, f, n).sum())
    return PathSample(sums, paths if return_paths else None, center)


def chain_to_json(chain: ChainSpec, f: AdditiveFunctional, provenance: Mapping | None = None) -> str:
    """Serialize a chain and functional (lattice values as num/den pairs)."""
    doc = {
        "version": 1,
        "sizes": list(chain.sizes),
        "kernels": [k.ravel().tolist() for k in chain.kernels],
        "reference": [r.tolist() for r in chain.reference[1:]],
        "mu1": chain.mu1.tolist(),
        "eps0": chain.eps0_declared,
        "labels": {k: v for k, v in f.labels.items()},
    }
    if f.lattice is not None:
        doc["f"] = [[{"num": int(v), "den": f.lattice} for v in t.ravel()] for t in f.numerators]
        doc["lattice"] = {"L": f.lattice}
    else:
        doc["f"] = [t.ravel().tolist() for t in f.tables]
        doc["lattice"] = None
    if provenance is not None:
        doc["provenance"] = dict(provenance)
    return json.dumps(doc)


def chain_from_json(text: str) -> tuple[ChainSpec, AdditiveFunctional]:
    """Parse the JSON chain-spec format; raises on schema violations."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpecError(f"not valid JSON: {exc}") from exc
    if doc.get("version") != 1:
        raise InvalidSpecError("unsupported chain-spec version")
    try:
        sizes = [int(m) for m in doc["sizes"]]
        if len(doc["kernels"]) != len(sizes) - 1:
            raise StructuralError(f"{len(doc['kernels'])} kernels for {len(sizes)} time slices")
        kernels = []
        for t, flat in enumerate(doc["kernels"]):
            if len(flat) != sizes[t] * sizes[t + 1]:
                raise StructuralError(f"kernel {t} has {len(flat)} entries, "
                                      f"expected {sizes[t]}x{sizes[t + 1]}")
            kernels.append(np.array(flat, dtype=float).reshape(sizes[t], sizes[t + 1]))
        ref = doc.get("reference")
        chain = ChainSpec(kernels=kernels, mu1=np.array(doc["mu1"], dtype=float),
                          reference=None if ref is None else [np.array(r, dtype=float) for r in ref],
                          eps0_declared=float(doc.get("eps0", 0.1)))
        labels = doc.get("labels") or {}
        shapes = [(sizes[t], sizes[t + 1]) for t in range(len(kernels))]
        if doc.get("lattice"):
            L = int(doc["lattice"]["L"])
            nums = []
            for t, flat in enumerate(doc["f"]):
                vals = [Fraction(int(v["num"]), int(v["den"])) if isinstance(v, dict) else Fraction(str(v))
                        for v in flat]
                scaled = [v * L for v in vals]
                if any(s.denominator != 1 for s in scaled):
                    raise InvalidSpecError(f"table {t} is not on the lattice (1/{L})Z")
                nums.append(np.array([int(s) for s in scaled], dtype=np.int64).reshape(shapes[t]))
            f = AdditiveFunctional(tables=(), lattice=L, numerators=tuple(nums), labels=labels)
        else:
            f = AdditiveFunctional(tables=tuple(np.array(flat, dtype=float).reshape(shapes[t])
                                                for t, flat in enumerate(doc["f"])), labels=labels)
    except (KeyError, TypeError) as exc:
        raise InvalidSpecError(f"malformed chain spec: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, (InvalidSpecError, StructuralError)):
            raise
        raise InvalidSpecError(f"malformed chain spec: {exc}") from exc
    return chain, f
