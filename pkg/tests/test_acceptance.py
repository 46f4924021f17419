"""Acceptance runs at the stated tolerances, one test per criterion.

Every criterion runs the corresponding experiment with its default
parameters through :func:`run_config`, so the CLI reproduces the same
numbers.  A summary line per criterion is printed at the end of the session.
"""
from __future__ import annotations

import hashlib
import math
import time

import pytest

from scalehom.harness.config import default_config
from scalehom.harness.experiments import run_config

from .conftest import ACCEPTANCE

pytestmark = pytest.mark.slow

_CACHE: dict[tuple, object] = {}


def bundle(experiment: str, seed: int = 0, **params):
    key = (experiment, seed, tuple(sorted((k, repr(v)) for k, v in params.items())))
    if key not in _CACHE:
        t0 = time.perf_counter()
        b = run_config(default_config(experiment, seed, **params), write=False)
        b.summary.setdefault("_wall", time.perf_counter() - t0)
        _CACHE[key] = b
    return _CACHE[key]


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _fmt(checks: dict, names) -> str:
    return ", ".join(f"{n}={'ok' if checks[n] else 'FAIL'}" for n in names)


def test_c01_flow_normalization():
    b = bundle("slflow-moments")
    dev = b.summary["max_entry_dev"]
    record(1, b.checks["c1_normalization"], f"max|E FF* - e Id|/e = {dev:.4f} (< 0.03)")


def test_c02_moment_growth():
    b = bundle("scalar-n2")
    rows = {r["tau"]: r for r in b.tables["R_moments"]}
    errs = ", ".join(f"tau={t}: {abs(rows[t]['E_R'] / math.exp(t) - 1):.4f}" for t in (0.5, 1.0, 1.5))
    ok = b.checks["c2_mean"] and b.checks["c2_second_moment"]
    record(2, ok, f"|E R/e^tau - 1| {errs}; E R^2 in bounds: {b.checks['c2_second_moment']}")


def test_c03_geometric_bm():
    b = bundle("scalar-n2")
    q = {r["statistic"]: r for r in b.tables["Q_statistics"]}
    ok = b.checks["c3_Q_moments"] and b.checks["c3_Q_tail"]
    record(3, ok, f"E Q/e = {q['E Q^1']['value'] / math.e:.4f}, E Q^2/e^3 = {q['E Q^2']['value'] / math.e**3:.4f}, "
                  f"tail ratio = {q['tail ratio']['value']:.4f}")


def test_c04_intermittency():
    b = bundle("scalar-n2")
    rows = [r for r in b.tables["Q_statistics"] if r["statistic"].startswith("Z tail")]
    detail = "; ".join(f"{r['statistic']}: {r['value']:.4f} - {r['ci']:.4f} >= 0.25" for r in rows)
    record(4, b.checks["c4_intermittency"] and len(rows) == 2, detail)


def test_c05_domination():
    b = bundle("scalar-n2")
    v = b.summary["domination_violations"]
    record(5, b.checks["c5_domination"], f"violations = {v} over 10^4 coupled triples")


def test_c06_lyapunov():
    b = bundle("lyapunov")
    rows = b.tables["exponents"]
    ex = {(r["n"], r["index"]): r["exponent"] for r in rows}
    ok = all(b.checks.values())
    record(6, ok, f"n=2: ({ex[(2, 0)]:.4f}, {ex[(2, 1)]:.4f}); n=3: ({ex[(3, 0)]:.4f}, {ex[(3, 1)]:.4f}, "
                  f"{ex[(3, 2)]:.4f}); {_fmt(b.checks, b.checks)}")


def test_c07_sl2_law():
    b = bundle("slbm-moments")
    worst = max(r["rel_error"] for r in b.tables["forms"])
    ok = all(b.checks.values())
    record(7, ok, f"BB* dev {b.summary['max_dev_BBt_over_tau']:.4f}, BB {b.summary['max_BB_over_tau']:.4f} (< 0.02); "
                  f"worst form error {worst:.4f} (< 0.03)")


def test_c08_field_normalization():
    b = bundle("field-stats")
    rows = {r["quantity"]: r for r in b.tables["variance"]}
    ok = all(b.checks.values())
    rel = {k: abs(r["mode_sum"] / r["target"] - 1) for k, r in rows.items()}
    record(8, ok, f"mode-sum rel errors full {rel['variance_full']:.4f}, truncated {rel['variance_truncated']:.4f}; "
                  f"max |k.c| = {b.summary['max_mode_divergence']:.2e}")


def test_c09_quadratic_variation():
    b = bundle("qv-check")
    rows = b.tables["accumulators"]
    sym = max(r["dev_over_tau"] for r in rows if r["accumulator"] != "anti_points")
    anti = max(r["dev_over_tau"] for r in rows if r["accumulator"] == "anti_points")
    ok = b.checks["c9_symmetric"] and b.checks["c9_antisymmetric"]
    record(9, ok, f"max symmetric deviation {sym:.4f} tau, antisymmetric {anti:.4f} tau (< 0.05)")


def test_c10_coupling():
    b = bundle("coupling-check")
    ok = b.checks["c10_law"] and b.checks["c10_decorrelation"]
    record(10, ok, f"{_fmt(b.checks, b.checks)}; Bonferroni z = {b.summary['bonferroni_z']:.3f}")


def test_c11_bounds():
    b = bundle("homogenize-ladder")
    spreads = ", ".join(f"{k}: spread {b.summary[k]['spread']:.2f}" for k in ("phi", "sigma", "f"))
    ok = all(b.checks[f"c11_{k}_stable"] for k in ("phi", "sigma", "f"))
    record(11, ok, f"{spreads} (stable when <= 2)")


def test_c12_superdiffusion():
    pure = bundle("particle-msd", epsilon=0.0, T_list=[10.0], paths=100_000, fields=1)
    b = bundle("particle-msd")
    r0 = pure.tables["msd"][0]["ratio"]
    rows = b.tables["msd"]
    ratios = ", ".join(f"T={r['T']:g}: {r['ratio']:.3f}/lam {r['lambda_T']:.3f}" for r in rows)
    ok = pure.checks["c12_pure_diffusion"] and b.checks["c12_increasing"] and b.checks["c12_within_15pct"]
    record(12, ok, f"eps=0 ratio {r0:.4f}; eps=0.5 {ratios}")


SMALL = {
    "ladder-check": {},
    "envelope-integrals": {"tau_star_list": [0.0, 1.0]},
    "field-stats": {"M": 16, "n_real": 16},
    "slbm-moments": {"n_samples": 4096},
    "slflow-moments": {"n_paths": 256, "tau_end": 0.1, "dtau": 0.01},
    "lyapunov": {"tau_end": 10.0, "n_paths": 4, "dtau": 0.01},
    "scalar-n2": {"n_paths": 256, "coupled_paths": 64, "q_samples": 1024, "tau_end": 1.0, "dtau": 0.01},
    "homogenize-ladder": {"M": 16, "n_real": 2, "L_max": 4.0, "J": 2, "L_values": [2.0, 4.0],
                          "epsilon_list": [0.2]},
    "qv-check": {"M": 16, "n_real": 100, "J": 2, "L_max": 4.0},
    "coupling-check": {"M": 16, "n_real": 32, "J": 2, "L_max": 4.0, "separations": [2.0]},
    "particle-msd": {"T_list": [2.0], "paths": 32, "fields": 2},
    "aniso-flow": {"tau_end": 2.0, "fit_window": [0.5, 2.0]},
}


def _digest(path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


def test_c13_appendix_flow():
    b = bundle("aniso-flow")
    s = b.summary
    ok = all(b.checks.values())
    record(13, ok, f"|f(I)-I| {s['f_identity_error']:.1e}, |f(diag(4,1)) - diag(2/3,1/3)| {s['f_diag41_error']:.1e}, "
                   f"|a(40)-I| {s['final_distance']:.1e}, Df FD {s['df_fd_error']:.1e}, rate {s['decay_rate']:.4f}")


def test_c14_determinism(tmp_path):
    same = []
    for name, params in SMALL.items():
        digests = []
        for rep in range(2):
            cfg = default_config(name, 123, **params).model_copy(update={"out": str(tmp_path / f"{name}-{rep}")})
            run_config(cfg)
            digests.append(_digest(tmp_path / f"{name}-{rep}"))
        same.append(digests[0] == digests[1] and any(k.endswith(".csv") for k in digests[0]))
    bad = [n for n, ok in zip(SMALL, same) if not ok]
    record(14, not bad, f"{len(SMALL)} experiments byte-identical on re-run" if not bad else f"differ: {bad}")
