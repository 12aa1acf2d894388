from __future__ import annotations

import csv
import dataclasses
import io

import pytest

from besselwalk import asymptotics as asy
from besselwalk.config import parse_config
from besselwalk.exact import ResourceLimitError
from besselwalk.harness import (
    RESULT_COLUMNS,
    ResultRow,
    derive_seed,
    render_csv,
    resource_estimate,
    run,
    run_experiment,
    summarize_series,
)

CFG = """[run]
n_grid = 256, 1024, 4096
k_list = 1, 4
x_max = 16384
reps = 2000
cap = 256
samples = 2000

[spec.zero]
delta = 0

[spec.half]
delta = 0.5
perturbation.kind = rational
"""


def cfg(**kw):
    return dataclasses.replace(parse_config(CFG), **kw)


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_converge_tail_table(tmp_path):
    res = run(cfg(), ["converge-tail"], str(tmp_path))
    assert res.exit_code == 0
    rows = read(tmp_path / "converge-tail.csv")
    assert tuple(rows[0]) == RESULT_COLUMNS
    zero = [r for r in rows if r["spec_id"] == "zero"]
    assert [int(r["n"]) for r in zero] == [256, 1024, 4096]
    assert abs(float(zero[-1]["ratio"]) - 1) <= 0.1
    for r in rows:
        assert float(r["ratio"]) == float(r["exact"]) / float(r["asymptotic"])
        assert r["formula_id"] in {f.value for f in asy.FormulaId}
    summ = read(tmp_path / "converge-tail_summary.csv")
    assert all(s["contracting"] == "true" for s in summ)
    assert all(s["n_last3"] == "256;1024;4096" for s in summ)
    man = {r["key"]: r["value"] for r in read(tmp_path / "converge-tail_manifest.csv")}
    assert man["seed"] == "0"


def test_audit_pass():
    out = run_experiment(cfg(n_grid=(64, 128)), "audit")
    assert out.passed
    cols, rows = out.tables["audit"]
    assert {r["check"] for r in rows} >= {"reversal", "renewal", "duality", "intervals2"}
    assert all(s["final_deviation"] <= 1e-12 for s in out.summary)


def test_llt_parity_adjustment_and_bounds():
    c = cfg(k_list=parse_config(CFG.replace("k_list = 1, 4", "k_list = 1, 4, sqrt:4")).k_list)
    out = run_experiment(c, "occupancy-llt")
    _, rows = out.tables["occupancy-llt"]
    adj = [r for r in rows if r["adjusted"]]
    assert adj and all(r["adjusted"] == "n+1" and (r["n"] - r["k"]) % 2 == 0 for r in adj)
    bounds = [r for r in rows if r["is_upper_bound"]]
    assert bounds and all(r["slack"] == r["asymptotic"] - r["exact"] for r in bounds)
    assert any(r["formula_id"].startswith("RET0") for r in rows)


def test_hit_regimes_default_chi_sweep():
    out = run_experiment(cfg(n_grid=(256, 1024, 4096)), "hit-regimes")
    _, rows = out.tables["hit-regimes"]
    assert {r["chi"] for r in rows} == {0.05, 0.1, 0.2}


def test_summaries():
    def row(n, exact, fid="EXCTAIL", bound=False, series=""):
        return ResultRow("s", 0.0, fid, n, 0, exact, 1.0, exact, "null_recurrent", bound,
                         slack=1.0 - exact if bound else None, series=series)
    ok = summarize_series([row(1, 1.2), row(2, 1.1), row(3, 1.05)], 0.1)[0]
    assert ok["status"] == "PASS" and ok["contracting"]
    bad = summarize_series([row(1, 1.2), row(2, 1.1), row(3, 1.15)], 0.2)[0]
    assert bad["status"] == "FAIL" and not bad["contracting"]
    floor = summarize_series([row(1, 1.0004), row(2, 0.9995), row(3, 1.0002)], 0.1)[0]
    assert floor["contracting"]
    b = summarize_series([row(1, 0.5, "HIT_HIGH_BOUND", True), row(2, 1.5, "HIT_HIGH_BOUND",
                                                                    True)], 0.1)[0]
    assert b["kind"] == "bound" and b["status"] == "FAIL"
    sh = summarize_series([row(1, 0.1, "OCC0_HIGH_NULLREC", True),
                           row(2, 0.2, "OCC0_HIGH_NULLREC", True)], 0.1)[0]
    assert sh["kind"] == "shape-only" and sh["status"] == "FAIL"


def test_resource_estimate_arithmetic():
    c = cfg(n_grid=(2**14,), k_list=())
    est = resource_estimate(c, "location-llt")
    n = 2**14 + 2
    assert est.cells == 2 * n * (n + 1)
    c = cfg(n_grid=(2**12,), k_list=parse_config(CFG.replace("k_list = 1, 4",
                                                             "k_list = 1, 2, 3, 4, 5")).k_list)
    per = [(2**12 + 1) * (2**12 + 1 + k + 1) for k in range(1, 6)]
    assert resource_estimate(c, "hit-regimes").cells == 2 * sum(per)
    c = cfg(reps=10**5, cap=2**12, k_list=parse_config(CFG.replace("k_list = 1, 4",
                                                                   "k_list = 16")).k_list)
    est = resource_estimate(c, "coupling-study")
    specs = len(c.specs)
    assert est.cells <= specs * (2 * c.reps * c.cap + c.reps * 166)


def test_resource_refusal_names_n_k():
    with pytest.raises(ResourceLimitError) as exc:
        run_experiment(cfg(max_cells=10**5), "converge-tail")
    assert "n=4096" in str(exc.value) and "k=0" in str(exc.value)


def test_render_csv_17_digits():
    text = render_csv(("a", "b", "c", "d"), [dict(a=0.1, b=True, c=None, d=3)])
    assert text == "a,b,c,d\n0.10000000000000001,true,,3\n"
    assert float(io.StringIO(text).read().split("\n")[1].split(",")[0]) == 0.1


def test_derive_seed_stable():
    assert derive_seed(5, "a", "sym", 16) == derive_seed(5, "a", "sym", 16)
    assert derive_seed(5, "a", "sym", 16) != derive_seed(6, "a", "sym", 16)


def test_bessel_and_k0(tmp_path):
    res = run(cfg(), ["bessel-check", "estimate-k0"], str(tmp_path))
    assert res.exit_code == 0
    rows = read(tmp_path / "bessel-check.csv")
    assert {float(r["delta"]) for r in rows} >= {-0.5, 0.5, 1.0, 2.0}
    assert {float(r["x"]) for r in rows} == {100.0, 1000.0, 10000.0}
    k0 = {r["spec_id"]: float(r["K0"]) for r in read(tmp_path / "estimate-k0.csv")}
    assert k0["zero"] == 1.0


def test_coupling_study(tmp_path):
    c = cfg(k_list=parse_config(CFG.replace("k_list = 1, 4", "k_list = 16")).k_list)
    res = run(c, ["coupling-study"], str(tmp_path))
    assert res.exit_code == 0
    rows = read(tmp_path / "coupling-study.csv")
    zero = [r for r in rows if r["spec_id"] == "zero"]
    assert all(float(r["missteps_mean"]) == 0 for r in zero)
    fid = read(tmp_path / "coupling-study_fidelity.csv")
    assert all(abs(float(r["z"])) <= 4 for r in fid)
