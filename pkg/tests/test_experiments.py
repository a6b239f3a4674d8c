import json
import math

import numpy as np
import pytest

from edgeworth_lab import experiments as ex
from edgeworth_lab.chain import AdditiveFunctional, ChainSpec, chain_to_json
from edgeworth_lab.cli import main
from edgeworth_lab.errors import BudgetError, DegenerateVarianceError, InvalidSpecError, ParameterError


def lattice_coin_file(tmp_path, N, half=True):
    """iid fair ±1/2 (or ±1) steps stored as a lattice chain file."""
    k = np.full((2, 2), 0.5)
    chain = ChainSpec(kernels=(k,) * N, mu1=np.array([0.5, 0.5]), eps0_declared=0.5)
    num = np.array([[-1, -1], [1, 1]])
    f = AdditiveFunctional(tables=(), lattice=2 if half else 1, numerators=(num,) * N)
    path = tmp_path / f"coin{N}.json"
    path.write_text(chain_to_json(chain, f))
    return str(path)


def cfg(tmp_path, **kw):
    base = dict(name="t", chain={"generator": "elliptic", "params": {"seed": 3}}, N_list=(16, 32),
                out_dir=str(tmp_path / "out"))
    base.update(kw)
    return ex.ExperimentConfig(**base)


def test_config_validation(tmp_path):
    with pytest.raises(InvalidSpecError):
        cfg(tmp_path, N_list=(32, 16))
    with pytest.raises(InvalidSpecError):
        cfg(tmp_path, N_list=(0, 4))
    with pytest.raises(InvalidSpecError):
        cfg(tmp_path, xi_grid=(0.0, float("nan")))
    with pytest.raises(InvalidSpecError):
        cfg(tmp_path, mode="fast")
    with pytest.raises(InvalidSpecError):
        ex.ExperimentConfig.from_dict({"name": "x", "chain": {"generator": "beta"}, "bogus": 1})


def test_config_round_trip_and_hash(tmp_path):
    c = cfg(tmp_path, z_grid=(0.1 + 0.2j,), windows=((0, 4),))
    d = json.loads(json.dumps(c.to_dict()))
    c2 = ex.ExperimentConfig.from_dict(d)
    assert c2 == c and c2.config_hash() == c.config_hash()
    assert cfg(tmp_path, N_list=(16, 64)).config_hash() != c.config_hash()


def test_required_paths_formula():
    n = ex.required_paths(5.0)
    assert ex.dkw_halfwidth(n) <= 0.1 / 5.0 < ex.dkw_halfwidth(n - 1)


def test_manifest_written(tmp_path):
    rep = ex.run_berry_esseen(cfg(tmp_path, chain={"generator": "beta"}))
    man = json.loads((tmp_path / "out" / "t.manifest.json").read_text())
    assert man["config_hash"] == cfg(tmp_path, chain={"generator": "beta"}).config_hash()
    assert man["seeds"] == [0] and "numpy" in man["versions"]
    assert set(man["outputs"]) == {"t.csv"}
    assert rep.rows[0]["method"] == "exact"


def test_exact_mode_is_byte_reproducible(tmp_path):
    out = []
    for d in ("a", "b"):
        c = cfg(tmp_path, chain={"generator": "elliptic", "params": {"lattice": True}}, orders=(0, 1, 2),
                out_dir=str(tmp_path / d))
        ex.run_edgeworth_order(c)
        man = json.loads((tmp_path / d / "t.manifest.json").read_text())
        assert man["config"].pop("out_dir").endswith(d)
        out.append(((tmp_path / d / "t.csv").read_bytes(), man))
    assert out[0] == out[1]


def test_budget_error_names_required_paths(tmp_path):
    with pytest.raises(BudgetError, match="needs n_paths >="):
        ex.run_berry_esseen(cfg(tmp_path, mode="mc", n_paths=100))


def test_mc_mode_runs_within_budget(tmp_path):
    c = cfg(tmp_path, mode="mc", N_list=(8,), n_paths=20_000, seeds=(5,))
    rep = ex.run_berry_esseen(c)
    assert rep.rows[0]["method"] == "mc" and rep.rows[0]["band"] == pytest.approx(ex.dkw_halfwidth(20_000))


def test_zero_functional_refused(tmp_path):
    c = cfg(tmp_path, chain={"generator": "circle", "params": {"degenerate": True}}, N_list=(8,), mode="mc")
    with pytest.raises(DegenerateVarianceError):
        ex.run_berry_esseen(c)


def test_bad_generator_params(tmp_path):
    with pytest.raises(ParameterError):
        ex.run_berry_esseen(cfg(tmp_path, chain={"generator": "beta", "params": {"bet": 0.3}}))


def test_order_one_matches_berry_esseen_for_symmetric_coin(tmp_path):
    path = lattice_coin_file(tmp_path, 64)
    be = ex.run_berry_esseen(cfg(tmp_path, chain={"file": path}, N_list=(16, 64)))
    eo = ex.run_edgeworth_order(cfg(tmp_path, chain={"file": path}, N_list=(16, 64), orders=(1,)))
    assert [r["dist"] for r in eo.rows] == pytest.approx([r["dist"] for r in be.rows], abs=1e-12)


def test_half_coin_constant(tmp_path):
    # symmetric binomial: the jump at the median is the whole distance, ~1/(sigma sqrt(2 pi))/2
    rep = ex.run_berry_esseen(cfg(tmp_path, chain={"file": lattice_coin_file(tmp_path, 1024)},
                                  N_list=(256, 1024)))
    target = 1.0 / (2.0 * math.sqrt(2.0 * math.pi))
    for r in rep.rows:
        assert target / 2 <= r["dist_times_sigma"] <= 2 * target
    assert rep.checks["band_ratio"]["passed"]


def test_counterexample_cantor_exact_vs_union_bound(tmp_path):
    c = cfg(tmp_path, chain={"generator": "cantor", "params": {"M_disc": 50}}, N_list=(9, 27), extra={"c": 1.0})
    rep = ex.run_counterexample(c)
    for r in rep.rows:
        assert r["prob_offlattice_exact"] <= r["prob_offlattice"] + 1e-12


def test_counterexample_needs_lattice(tmp_path):
    with pytest.raises(ex.UnsupportedInputError):
        ex.run_counterexample(cfg(tmp_path))


def test_pressure_audit_on_uniform_independent_chain(tmp_path):
    N = 64
    k = np.full((3, 3), 1 / 3)
    chain = ChainSpec(kernels=(k,) * N, mu1=np.full(3, 1 / 3), eps0_declared=1.0)
    tab = np.array([[-1.0] * 3, [0.0] * 3, [1.0] * 3])
    path = tmp_path / "iid.json"
    path.write_text(chain_to_json(chain, AdditiveFunctional(tables=(tab,) * N)))
    rep = ex.run_pressure_audit(cfg(tmp_path, chain={"file": str(path)}, N_list=(N,),
                                    windows=((0, 8), (10, 16))))
    assert rep.passed, rep.checks
    assert rep.extra["convergence"]["delta"] == 0.0


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "cli")
    assert main(["validate", "--generator", "elliptic", "--N", "16", "--out", out]) == 0
    assert main(["expansion-test", "--generator", "elliptic", "--N", "32", "--out", out]) == 0
    assert main(["validate", "--generator", "nope", "--N", "16", "--out", out]) == 2
    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["validate", "--generator", "beta", "--seed", str(2 ** 64)]) == 2
    bad = tmp_path / "strict.json"
    bad.write_text(json.dumps({"name": "strict", "chain": {"generator": "elliptic"}, "N_list": [16, 64],
                               "out_dir": out, "n_paths": 100, "thresholds": {"band_ratio": 1.0000001}}))
    assert main(["berry-esseen", "--config", str(bad), "--mc"]) == 2      # budget refused
    bad.write_text(json.dumps({"name": "strict", "chain": {"generator": "beta"}, "N_list": [16, 64],
                               "out_dir": out, "thresholds": {"band_ratio": 1.0000001}}))
    assert main(["berry-esseen", "--config", str(bad)]) == 1
    assert "FAIL band_ratio" in capsys.readouterr().out


def test_cli_gallery_writes_loadable_chains(tmp_path):
    out = tmp_path / "g"
    assert main(["gallery", "--generator", "beta", "--N", "8", "--out", str(out)]) == 0
    files = sorted(out.glob("*.chain.json"))
    assert len(files) == 7
    assert main(["validate", "--chain", str(files[0]), "--N", "8", "--out", str(out)]) == 0
