"""Command-line front end.  Exit codes: 0 all checks pass, 1 a threshold failed, 2 bad input."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .chain import chain_to_json, validate_ellipticity
from .edgeworth import build_expansion, cumulants_from_moments, fourier_identity_error, p1_formula_error
from .errors import EdgeworthLabError
from .gallery import gallery
from .hexagon import hexagon_stats, small_xi_check
from .transfer import char_fn, exact_moments, write_charfn_csv

EXIT_PASS, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _load_config(args, default_name: str) -> ex.ExperimentConfig:
    if args.config:
        cfg = ex.ExperimentConfig.from_json(args.config)
    elif args.chain:
        cfg = ex.ExperimentConfig(default_name, {"file": args.chain}, N_list=(args.N,))
    elif args.generator:
        cfg = ex.ExperimentConfig(default_name, {"generator": args.generator}, N_list=(args.N,))
    else:
        raise ex.InvalidSpecError("give --config, --chain or --generator")
    changes = {}
    if args.out:
        changes["out_dir"] = args.out
    if args.seed is not None:
        changes["seeds"] = (args.seed,) + tuple(cfg.seeds[1:])
    if args.mode:
        changes["mode"] = args.mode
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _emit(doc: dict, cfg: ex.ExperimentConfig, name: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=ex._jsonable))
    return path


def _print_checks(checks: dict) -> bool:
    ok = True
    for name, c in checks.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: value={c['value']} threshold={c['threshold']}")
        ok &= bool(c["passed"])
    return ok


def cmd_validate(cfg):
    chain, f = ex.build_chain(cfg, cfg.N_list[-1])
    rep = validate_ellipticity(chain)
    checks = {"ellipticity": ex._check(rep.eps_two_step, chain.eps0_declared, rep.passed)}
    _emit({"eps_upper": rep.eps_upper, "eps_two_step": rep.eps_two_step, "passed": rep.passed},
          cfg, f"{cfg.name}.validate.json")
    return checks


def cmd_char_fn(cfg):
    N = cfg.N_list[-1]
    chain, f = ex.build_chain(cfg, N)
    xi = cfg.xi_grid if cfg.xi_grid is not None else np.linspace(-3, 3, 121)
    table = char_fn(chain, f, xi, N, center=True)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    print(write_charfn_csv(table, out / f"{cfg.name}.charfn.csv"))
    return {}


def _expansion(cfg, min_order: int = 1):
    N = cfg.N_list[-1]
    chain, f = ex.build_chain(cfg, N)
    r = max(max(cfg.orders), min_order)
    table = cumulants_from_moments(exact_moments(chain, f, r + 2, N)[1:])
    return table, build_expansion(table, r)


def cmd_cumulants(cfg):
    table, expn = _expansion(cfg)
    _emit({"sigma": table.sigma, "gammas": table.gammas, "a": table.normalized,
           "expansion": json.loads(expn.to_json())}, cfg, f"{cfg.name}.cumulants.json")
    return {}


def cmd_expansion_test(cfg):
    table, expn = _expansion(cfg, min_order=3)
    checks = {"p1_formula": ex._check(p1_formula_error(expn, table.a(3)), 1e-10,
                                      p1_formula_error(expn, table.a(3)) <= 1e-10)}
    for j in range(1, expn.order + 1):
        e = fourier_identity_error(expn, j)
        checks[f"fourier_P{j}"] = ex._check(e, 1e-8, e <= 1e-8)
    _emit({"checks": checks}, cfg, f"{cfg.name}.expansion_test.json")
    return checks


def cmd_hexagon(cfg):
    N = cfg.N_list[-1]
    chain, f = ex.build_chain(cfg, N)
    xi = np.asarray(cfg.xi_grid if cfg.xi_grid is not None else np.geomspace(1e-3, 3.0, 40))
    stats = hexagon_stats(chain, f, N, xi)
    print(*stats.write_csv(cfg.out_dir), sep="\n")
    rep = small_xi_check(chain, f, stats.n_range, xi, stats=stats)
    return {"small_xi": ex._check(len(rep.violations), 0, rep.passed)}


def cmd_gallery(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0] if cfg.seeds else 42
    for name, (chain, f) in gallery(seed=seed, N=cfg.N_list[-1]).items():
        path = out / f"{name}.chain.json"
        path.write_text(chain_to_json(chain, f, {"generator": name, "seed": seed, "N": cfg.N_list[-1]}))
        print(path)
    return {}


def _runner(fn):
    def run(cfg):
        return fn(cfg).checks
    return run


COMMANDS = {
    "validate": cmd_validate,
    "char-fn": cmd_char_fn,
    "cumulants": cmd_cumulants,
    "edgeworth": _runner(ex.run_edgeworth_order),
    "berry-esseen": _runner(ex.run_berry_esseen),
    "expansion-test": cmd_expansion_test,
    "hexagon": cmd_hexagon,
    "pressure": _runner(ex.run_pressure_audit),
    "counterexample": _runner(ex.run_counterexample),
    "gallery": cmd_gallery,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgeworth-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="experiment config JSON")
        s.add_argument("--chain", help="chain-spec JSON (instead of --config)")
        s.add_argument("--generator", help="named generator (instead of --config)")
        s.add_argument("--N", type=int, default=256, help="chain length with --chain/--generator")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int, help="root seed (u64)")
        mode = s.add_mutually_exclusive_group()
        mode.add_argument("--exact", dest="mode", action="store_const", const="exact")
        mode.add_argument("--mc", dest="mode", action="store_const", const="mc")
        s.add_argument("--threads", type=int, default=1,
                       help="accepted for interface compatibility; kernels run on one thread")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ex.InvalidSpecError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ex.InvalidSpecError("--threads must be positive")
        cfg = _load_config(args, args.command.replace("-", "_"))
        checks = COMMANDS[args.command](cfg)
    except (EdgeworthLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_PASS if _print_checks(checks) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
