"""Experiment drivers: dyadic sweeps that write CSV/JSON reports plus a manifest.

Each driver returns an ``ExperimentReport`` whose ``checks`` hold the thresholds
asserted by the config; ``passed`` is their conjunction.  Exact mode (lattice
DP) carries no sampling noise, so repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import metadata
from pathlib import Path

import numpy as np

from .chain import AdditiveFunctional, ChainSpec, chain_from_json
from .edgeworth import build_expansion, cumulants_from_moments, kolmogorov_distance, normal_cdf
from .errors import (BudgetError, DegenerateVarianceError, InvalidSpecError, ParameterError,
                     RangeError, UnsupportedInputError)
from .gallery import CantorParams, make_named_chain, plateau_measure
from .hexagon import decay_check, hexagon_stats, sandwich_check
from .pressure import (default_radius, exp_convergence_audit, growth_audits, pressure_gap_profile,
                       pressure_sum, rpf_sweep, RESIDUAL_TOL)
from .transfer import (DKW_DELTA, cdf_estimate, dkw_halfwidth, exact_moments, lattice_distribution,
                       mean_and_sigma, tail_integral)

MODES = ("auto", "exact", "mc")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.  ``chain`` is {"generator": name, "params": {...}} or {"file": path}."""

    name: str
    chain: dict
    N_list: tuple = (64, 128, 256)
    orders: tuple = (1,)
    xi_grid: tuple | None = None
    t_grid: tuple | None = None
    z_grid: tuple | None = None
    seeds: tuple = (0,)
    out_dir: str = "runs"
    mode: str = "auto"
    n_paths: int = 100_000
    dkw_delta: float = DKW_DELTA
    thresholds: dict = field(default_factory=dict)
    tail: dict | None = None
    windows: tuple | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        N = [int(n) for n in self.N_list]
        if not N or any(n < 1 for n in N) or any(b <= a for a, b in zip(N, N[1:])):
            raise InvalidSpecError(f"N sweep must be positive and strictly increasing, got {N}")
        object.__setattr__(self, "N_list", tuple(N))
        object.__setattr__(self, "orders", tuple(int(r) for r in self.orders))
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds or any(not 0 <= s < 2 ** 64 for s in seeds):
            raise InvalidSpecError(f"seeds must be unsigned 64-bit integers, got {seeds}")
        object.__setattr__(self, "seeds", seeds)
        if self.windows is not None:
            object.__setattr__(self, "windows", tuple(tuple(int(v) for v in w) for w in self.windows))
        if self.mode not in MODES:
            raise InvalidSpecError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not ("generator" in self.chain or "file" in self.chain):
            raise InvalidSpecError("chain source needs a 'generator' or a 'file' entry")
        for name in ("xi_grid", "t_grid", "z_grid"):
            g = getattr(self, name)
            if g is not None:
                arr = np.asarray(g, dtype=complex if name == "z_grid" else float)
                if not np.all(np.isfinite(arr)):
                    raise InvalidSpecError(f"{name} has non-finite entries")
                object.__setattr__(self, name, tuple(arr.tolist()) if name != "z_grid"
                                   else tuple(complex(z) for z in arr))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if d.get("z_grid") is not None:
            d["z_grid"] = [complex(*z) if isinstance(z, (list, tuple)) else complex(z) for z in d["z_grid"]]
        if d.get("windows") is not None:
            d["windows"] = tuple(tuple(w) for w in d["windows"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpecError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise InvalidSpecError(f"config {path} is not valid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.z_grid is not None:
            d["z_grid"] = [[z.real, z.imag] for z in self.z_grid]
        if self.windows is not None:
            d["windows"] = [list(w) for w in self.windows]
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")            # where results land does not change what they are
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ExperimentReport:
    name: str
    rows: list
    checks: dict
    outputs: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())


def _versions() -> dict:
    out = {"python": platform.python_version()}
    own = metadata.packages_distributions().get("edgeworth_lab", ["edgeworth_lab"])[0]
    for pkg in ("numpy", "scipy", "numba", own):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(config: ExperimentConfig, report: ExperimentReport, out_dir: Path) -> Path:
    """Everything needed to rerun: full config, its hash, seeds, versions, output digests."""
    doc = {
        "experiment": config.name,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seeds": list(config.seeds),
        "versions": _versions(),
        "outputs": {Path(p).name: _sha(Path(p)) for p in report.outputs},
        "passed": report.passed,
        "checks": report.checks,
    }
    path = out_dir / f"{config.name}.manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))
    return path


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, Fraction):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _out_dir(config: ExperimentConfig) -> Path:
    p = Path(config.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_csv(path: Path, header: list, rows: list) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(r[h])) if isinstance(r[h], (float, np.floating)) else r[h]
                        for h in header])
    return path


def _finish(config, report, csv_name=None, header=None, json_doc=None) -> ExperimentReport:
    out = _out_dir(config)
    if csv_name is not None:
        report.outputs.append(str(_write_csv(out / csv_name, header, report.rows)))
    if json_doc is not None:
        p = out / f"{config.name}.json"
        p.write_text(json.dumps(json_doc, indent=2, sort_keys=True, default=_jsonable))
        report.outputs.append(str(p))
    report.outputs.append(str(write_manifest(config, report, out)))
    return report


def build_chain(config: ExperimentConfig, N: int) -> tuple[ChainSpec, AdditiveFunctional]:
    """The chain of the config truncated (or generated) at length N."""
    src = config.chain
    if "file" in src:
        chain, f = chain_from_json(Path(src["file"]).read_text())
        if N > chain.n_steps:
            raise RangeError(f"file chain has {chain.n_steps} steps, sweep asks for N = {N}")
        return chain.window(0, N), f.window(0, N)
    return make_named_chain(src["generator"], N, src.get("params"))


def _check(value, threshold, ok) -> dict:
    return {"value": value, "threshold": threshold, "passed": bool(ok)}


def _use_exact(config: ExperimentConfig, f: AdditiveFunctional) -> bool:
    if config.mode == "exact":
        if f.lattice is None:
            raise UnsupportedInputError("exact mode needs a lattice functional")
        return True
    if config.mode == "mc":
        return False
    return f.lattice is not None


def required_paths(sigma: float, resolution: float = 0.1, delta: float = DKW_DELTA) -> int:
    """Smallest n with DKW half-width <= resolution / sigma."""
    target = resolution / sigma
    return int(math.ceil(math.log(2.0 / delta) / (2.0 * target * target)))


class _Law:
    """Normalized law of S_N: exact step CDF or Monte Carlo empirical CDF."""

    def __init__(self, config, chain, f, N, seed):
        self.mean, self.sigma = mean_and_sigma(chain, f, N)
        if self.sigma < 1e-8:
            raise DegenerateVarianceError(f"sigma_N = {self.sigma:.3e} at N = {N}; refusing")
        if _use_exact(config, f):
            self.method, self.band = "exact", 0.0
            self.step = lattice_distribution(chain, f, N).normalized(self.mean, self.sigma)
        else:
            need = required_paths(self.sigma, delta=config.dkw_delta)
            if config.n_paths < need:
                raise BudgetError(f"N = {N}: sigma_N = {self.sigma:.4g} needs n_paths >= {need} "
                                  f"(have {config.n_paths})")
            emp = cdf_estimate(chain, f, config.n_paths, seed, N, delta=config.dkw_delta)
            self.method, self.band = "mc", emp.halfwidth
            self.step = emp.step_cdf()

    def distance(self, G) -> float:
        return kolmogorov_distance(self.step, G)


def run_berry_esseen(config: ExperimentConfig) -> ExperimentReport:
    """sup |P(S_N^ <= x) - Phi(x)| and its product with sigma_N across the sweep."""
    rows = []
    for N in config.N_list:
        chain, f = build_chain(config, N)
        law = _Law(config, chain, f, N, config.seeds[0])
        d = law.distance(normal_cdf)
        rows.append({"N": N, "sigma": law.sigma, "dist": d, "dist_times_sigma": d * law.sigma,
                     "method": law.method, "band": law.band})
    prod = np.array([r["dist_times_sigma"] for r in rows])
    checks = {}
    thr = config.thresholds.get("band_ratio", 2.0)
    if prod.size > 1:
        ratio = float(prod.max() / prod.min())
        checks["band_ratio"] = _check(ratio, thr, ratio <= thr)
    report = ExperimentReport(config.name, rows, checks)
    return _finish(config, report, f"{config.name}.csv",
                   ["N", "sigma", "dist", "dist_times_sigma", "method", "band"])


def _expansions(chain, f, N, orders):
    top = max(orders)
    if top == 0:
        return {0: normal_cdf}
    m = exact_moments(chain, f, top + 2, N)
    table = cumulants_from_moments(m[1:])
    return {r: (normal_cdf if r == 0 else build_expansion(table, r)) for r in orders}


def run_edgeworth_order(config: ExperimentConfig) -> ExperimentReport:
    """Distances to the order-r expansions, scaled by sigma_N^r, with tail diagnostics."""
    rows = []
    for N in config.N_list:
        chain, f = build_chain(config, N)
        law = _Law(config, chain, f, N, config.seeds[0])
        exps = _expansions(chain, f, N, config.orders)
        for r in config.orders:
            d = law.distance(exps[r])
            tail = math.nan
            if config.tail and r >= 1:
                ti = tail_integral(chain, f, config.tail.get("delta", 0.5), config.tail.get("B", 1.0),
                                   r, N)
                tail = ti.value * law.sigma ** r
            rows.append({"N": N, "r": r, "sigma": law.sigma, "dist": d,
                         "dist_times_sigma_pow_r": d * law.sigma ** r,
                         "tail_integral_times_sigma_pow_r": tail,
                         "method": law.method, "band": law.band})
    checks = {}
    for spec in config.thresholds.get("trend", []):
        r = int(spec["r"])
        v = [row["dist_times_sigma_pow_r"] for row in rows if row["r"] == r]
        if len(v) < 2:
            continue
        ratio = v[-1] / v[0]
        if "max_ratio" in spec:
            checks[f"trend_r{r}_max"] = _check(ratio, spec["max_ratio"], ratio <= spec["max_ratio"])
        if "min_ratio" in spec:
            checks[f"trend_r{r}_min"] = _check(ratio, spec["min_ratio"], ratio >= spec["min_ratio"])
    imp = config.thresholds.get("improvement")
    if imp:
        r = int(imp["r"])
        last = config.N_list[-1]
        d0 = next(row["dist"] for row in rows if row["N"] == last and row["r"] == 0)
        dr = next(row["dist"] for row in rows if row["N"] == last and row["r"] == r)
        checks[f"improvement_r{r}"] = _check(dr / d0, imp["max"], dr <= imp["max"] * d0)
    mult = config.thresholds.get("dkw_multiple")
    if mult is not None:
        worst = min((row["dist"] / row["band"] for row in rows if row["band"] > 0), default=math.inf)
        checks["dkw_multiple"] = _check(worst, mult, worst >= mult)
    report = ExperimentReport(config.name, rows, checks)
    return _finish(config, report, f"{config.name}.csv",
                   ["N", "r", "sigma", "dist", "dist_times_sigma_pow_r",
                    "tail_integral_times_sigma_pow_r", "method", "band"])


def run_counterexample(config: ExperimentConfig) -> ExperimentReport:
    """Atom diagnostics for lattice families: max atom, lattice gap, off-lattice probability."""
    rows = []
    for N in config.N_list:
        chain, f = build_chain(config, N)
        if f.lattice is None:
            raise UnsupportedInputError("run_counterexample needs a lattice functional")
        pmf = lattice_distribution(chain, f, N)
        _, sigma = mean_and_sigma(chain, f, N)
        row = {"N": N, "sigma": sigma, "max_atom": pmf.max_atom(),
               "max_atom_times_sigma3": pmf.max_atom() * sigma ** 3,
               "gap": 1.0 / f.lattice, "prob_offlattice": 0.0,
               "prob_offlattice_summand": "0", "prob_offlattice_exact": 0.0}
        if f.labels.get("family") == "cantor-iid":
            params = CantorParams(int(f.labels["p"]), int(f.labels["k"]))
            c = float(config.extra.get("c", 0.5))
            n = int(math.floor(c * math.log(N) / math.log(params.p) + 1e-12))
            per = plateau_measure(params, n) if n >= 1 else Fraction(1)
            row["prob_offlattice_summand"] = str(per)
            row["prob_offlattice"] = float(min(Fraction(1), N * per))
            depth = int(f.labels["depth"])
            row["gap"] = float(params.p) ** (-n)
            if n <= depth:
                k = (pmf.offset + np.arange(len(pmf.probs))) % params.p ** (depth - n)
                row["prob_offlattice_exact"] = float(np.sum(pmf.as_float()[k != 0]))
            else:
                row["prob_offlattice_exact"] = 0.0      # values already lie on p^-depth Z
        rows.append(row)
    checks = {}
    thr = config.thresholds.get("max_atom_sigma3_growth")
    if thr is not None and len(rows) > 1:
        ratio = rows[-1]["max_atom_times_sigma3"] / rows[0]["max_atom_times_sigma3"]
        checks["max_atom_sigma3_growth"] = _check(ratio, thr, ratio > thr)
    report = ExperimentReport(config.name, rows, checks)
    return _finish(config, report, f"{config.name}.csv",
                   ["N", "sigma", "max_atom", "max_atom_times_sigma3", "gap", "prob_offlattice",
                    "prob_offlattice_summand", "prob_offlattice_exact"])


def default_windows(N: int, lengths=(50, 100, 200), stride: int = 1) -> list:
    return [(m, L) for L in lengths for m in range(0, N - L + 1, stride)]


def run_pressure_audit(config: ExperimentConfig) -> ExperimentReport:
    """RPF residuals, transfer convergence, pressure gaps, growth, sandwich and decay in one JSON."""
    th = config.thresholds
    N = config.N_list[-1]
    chain, f = build_chain(config, N)
    z0 = default_radius(f)
    doc, checks = {"N": N, "z0": z0}, {}

    zs = config.z_grid or tuple(z0 * (1.0 if k % 2 == 0 else 0.5) * np.exp(2j * np.pi * k / 16)
                                for k in range(16))
    res = []
    tables = {}
    for z in zs:
        tab = rpf_sweep(chain, f, z, z0=z0)
        tables[complex(z)] = tab
        res.append(tab.max_residual)
    doc["residuals"] = {"z": [complex(z) for z in zs], "max_residual": res}
    worst = float(max(res))
    checks["rpf_residual"] = _check(worst, th.get("residual", RESIDUAL_TOL), worst <= th.get("residual", RESIDUAL_TOL))

    z = complex(zs[1] if len(zs) > 1 else zs[0])
    tab = tables[z]
    n_conv = [n for n in (1, 2, 4, 8, 16, 32) if n <= N]
    conv = exp_convergence_audit(chain, f, z, 1, n_conv, table=tab)
    doc["convergence"] = {"z": z, "n": conv.n_list, "norms": conv.norms, "delta": conv.delta}
    checks["convergence_delta"] = _check(conv.delta, th.get("delta", 0.9), conv.delta <= th.get("delta", 0.9))

    n_gap = [n for n in (2 ** k for k in range(4, 11)) if n <= N]
    gap1 = pressure_gap_profile(chain, f, z, n_gap, table=tab)
    later = []
    for j in sorted({N // 4 + 1, N // 2 + 1}):
        for n in n_gap:
            if j + n - 1 <= N:
                later.append({"j": j, "n": n, "gap": pressure_sum(chain, f, z, j, n, table=tab).difference})
    doc["pressure_gap"] = {"n": n_gap, "gap_j1": gap1, "later_windows": later}
    if n_gap:
        bound = 2.0 * gap1[0] + 1.0
        checks["pressure_gap_j1"] = _check(float(gap1.max()), bound, gap1.max() <= bound)
        for j in sorted({w["j"] for w in later}):
            g = np.array([w["gap"] for w in later if w["j"] == j])
            checks[f"pressure_gap_j{j}"] = _check(float(g.max()), 2.0 * g[0] + 1.0, g.max() <= 2.0 * g[0] + 1.0)

    growth_N = config.extra.get("growth_N") or [n for n in config.N_list if n >= 64]
    if growth_N:
        doc["growth"] = {}
        audits = growth_audits(chain, f, growth_N, (3, 4))
        for k, ga in audits.items():
            doc["growth"][str(k)] = {"n": [r.n for r in ga.rows], "sigma": [r.sigma for r in ga.rows],
                                     "value": ga.values, "max_over_median": ga.max_over_median}
            lim = th.get("growth_max_over_median", 5.0)
            checks[f"growth_k{k}"] = _check(ga.max_over_median, lim, ga.max_over_median <= lim)

    xi = np.asarray(config.xi_grid if config.xi_grid is not None else np.geomspace(0.05, 3.0, 40))
    stats = hexagon_stats(chain, f, N, xi)
    windows = config.windows or default_windows(N, stride=int(config.extra.get("window_stride", 1)))
    sw = sandwich_check(chain, f, windows, u2=np.concatenate([np.zeros(3), stats.u2]))
    doc["sandwich"] = {"n_windows": len(windows), "min_ratio": sw.min_ratio, "max_ratio": sw.max_ratio}
    lo, hi = th.get("sandwich", (1 / 64, 64.0))
    checks["sandwich"] = _check([sw.min_ratio, sw.max_ratio], [lo, hi], sw.within(lo, hi))

    dec = decay_check(chain, f, N, xi, stats=stats)
    doc["decay"] = {"c": dec.c, "C": dec.C, "n_fit_points": dec.n_fit_points,
                    "inconclusive": dec.inconclusive, "violations": dec.violations}
    checks["decay"] = _check(dec.c, 0.0, dec.passed)

    report = ExperimentReport(config.name, [], checks, extra=doc)
    doc["checks"] = checks
    return _finish(config, report, json_doc=doc)
