"""Acceptance criteria 1 to 8, run at their stated tolerances and time budgets.

Each test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary.
"""
import json
import math
import os
import subprocess
import sys
import time

import numpy as np

from bspde.basis import IntervalDomain, make_basis, project, reconstruct
from bspde.catalog import build_problem, get_entry
from bspde.cond_exp import GaussQuadrature, LeastSquares, cond_mean, cond_z
from bspde.harness import converge_space, converge_time, estimator_consistency, regularity_probe
from bspde.paths import PathEnsemble, make_grid, sample_ensemble
from bspde.stepper import StepperConfig, solve_backward

D1 = IntervalDomain(1.0)
PI2 = math.pi**2


def test_criterion_1_closed_recursion(record):
    start = time.perf_counter()
    problem = build_problem("heat_phi1", 1.0, 0.1)
    basis = make_basis(D1, 1)
    ens = sample_ensemble(make_grid(0.1, 10), 100, 0)
    target = (1 + PI2 / 100) ** -10
    worst = 0.0
    for est in (LeastSquares(0), LeastSquares(3), GaussQuadrature(2), GaussQuadrature(20)):
        proc = solve_backward(problem, basis, ens, StepperConfig(estimator=est))
        worst = max(worst, float(np.max(np.abs(proc.alpha[0, :, 0] - target))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 1.0
    record(1, "closed-recursion exactness", ok, f"max err {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_criterion_2_linear_wiener_oracle(record):
    start = time.perf_counter()
    T, N, M = 0.25, 16, 1000
    problem = build_problem("linear_wiener", 1.0, T)
    basis = make_basis(D1, 1)
    grid = make_grid(T, N)
    ens = sample_ensemble(grid, M, 1)
    # lambda_1^2 * mesh = 1.52 here, so the stated setting needs the CFL override
    proc = solve_backward(problem, basis, ens, StepperConfig(estimator=GaussQuadrature(20), override_cfl=True))
    a = 1 / (1 + PI2 * grid.mesh)
    j = np.arange(N + 1)
    err_a = np.max(np.abs(proc.alpha[..., 0] - a ** (N - j)[:, None] * ens.values.T))
    err_z = np.max(np.abs(proc.z[..., 0] - (a ** (N - j[:-1] - 1))[:, None]))
    elapsed = time.perf_counter() - start
    ok = err_a <= 1e-10 and err_z <= 1e-10 and elapsed < 10
    record(2, "linear Wiener oracle", ok, f"alpha {err_a:.1e}, z {err_z:.1e}, {elapsed:.2f} s")
    assert ok


def test_criterion_3_time_rate(record):
    start = time.perf_counter()
    # T = 0.08 keeps lambda_1^2 T / 8 <= 1 at the coarsest level
    T, levels = 0.08, [8, 16, 32, 64]
    cfg = StepperConfig(estimator=GaussQuadrature(20))
    basis = make_basis(D1, 1)
    slopes = {}
    for name in ("heat_phi1", "linear_wiener"):
        problem = build_problem(name, 1.0, T)
        rep = converge_time(problem, basis, 3, cfg, levels, M=1000, oracle=get_entry(name).oracle(problem, basis))
        assert max(rep.checks["cfl_numbers"]) <= 1.0
        slopes[name] = rep.fitted_slope_time
    elapsed = time.perf_counter() - start
    ok = all(s is not None and s >= 0.8 for s in slopes.values()) and elapsed < 60
    detail = ", ".join(f"{k} slope {v:.2f}" for k, v in slopes.items())
    record(3, "time rate", ok, f"{detail}, {elapsed:.1f} s")
    assert ok


def test_criterion_4_space_rate(record):
    start = time.perf_counter()
    T, N, M = 0.1, 64, 10**4
    grid = make_grid(T, N)
    ens = sample_ensemble(grid, M, 4)
    # n_ref = 32 gives lambda_32^2 * mesh ~ 1.6e7, so no N meets the CFL hypothesis
    cfg = StepperConfig(estimator=GaussQuadrature(20), override_cfl=True)
    details, ok = [], True
    for name in ("heat_parabola", "coupled"):
        rep = converge_space(build_problem(name, 1.0, T), grid, ens, cfg, [2, 4, 8], n_ref=32)
        good = rep.checks["strictly_decreasing"] and rep.checks["bound_holds"]
        ok &= good
        details.append(f"{name} " + "/".join(f"{r.total:.1e}" for r in rep.rows))
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 300
    record(4, "space rate", ok, f"{'; '.join(details)}, {elapsed:.1f} s")
    assert ok


def test_criterion_5_regression_vs_quadrature(record):
    start = time.perf_counter()
    T, N, M = 0.08, 16, 10**5
    problem = build_problem("linear_wiener", 1.0, T)
    basis = make_basis(D1, 1)
    ens = sample_ensemble(make_grid(T, N), M, 5)
    ls = solve_backward(problem, basis, ens, StepperConfig(estimator=LeastSquares(1)))
    gq = solve_backward(problem, basis, ens, StepperConfig(estimator=GaussQuadrature(20)))
    disc, budget, passes = estimator_consistency(ls, gq, sigmas=3.0)
    worst = float(np.max(disc[:-1] / budget[:-1]))
    elapsed = time.perf_counter() - start
    ok = bool(passes.all()) and elapsed < 120
    record(5, "regression vs quadrature", ok, f"max discrepancy/variance {worst:.2f} (limit 9), {elapsed:.1f} s")
    assert ok


def test_criterion_6_regularity(record):
    start = time.perf_counter()
    T, N, M = 0.08, 16, 10**5
    problem = build_problem("linear_wiener", 1.0, T)
    basis = make_basis(D1, 1)
    grid = make_grid(T, N)
    proc = solve_backward(problem, basis, sample_ensemble(grid, M, 6), StepperConfig(estimator=GaussQuadrature(20)))
    scales = get_entry("linear_wiener").increment_scales(problem, basis, grid)
    rows, summary = regularity_probe(proc, [1, 2, 4, 8], scales)
    elapsed = time.perf_counter() - start
    ok = all(r.within_3sigma for r in rows) and not summary["shape_violation"] and elapsed < 60
    ratios = "/".join(f"{r.ratio:.3f}" for r in rows)
    record(6, "regularity probe", ok, f"ratios {ratios}, {elapsed:.1f} s")
    assert ok


def _invariants():
    failures = []

    def check(name, cond):
        if not cond:
            failures.append(name)

    for n in (1, 8, 32):
        b = make_basis(D1, n)
        check(f"orthonormality n={n}", np.max(np.abs(b.gram() - np.eye(n))) <= 1e-10)
        dphi = b.eval_derivative(b.quadrature.nodes)
        check(f"rayleigh n={n}", np.max(np.abs(b.quadrature.integrate(dphi**2) - b.eigenvalues)) <= 1e-8)
    b = make_basis(D1, 6)
    c = np.random.default_rng(0).standard_normal(6)
    g = lambda x: reconstruct(b, c, x)
    check("parseval", abs(b.quadrature.integrate(g(b.quadrature.nodes) ** 2) - np.sum(c**2)) <= 1e-10)
    check("projection idempotent", np.max(np.abs(project(b, g) - c)) <= 1e-10)

    rng = np.random.default_rng(1)
    x, dw = rng.normal(0, 0.5, (2, 2000))
    y = np.c_[np.sin(3 * x) + dw, np.exp(x) * dw]
    once = cond_mean(LeastSquares(3), x, y)
    check("tower", np.max(np.abs(cond_mean(LeastSquares(3), x, once) - once)) <= 1e-10)
    y2 = rng.standard_normal((2000, 2))
    lin = cond_mean(LeastSquares(3), x, 2 * y - 3 * y2) - (2 * once - 3 * cond_mean(LeastSquares(3), x, y2))
    check("linearity", np.max(np.abs(lin)) <= 1e-10)
    poly = np.c_[1 + 2 * x - x**3]
    check("ls polynomial exactness", np.max(np.abs(cond_mean(LeastSquares(3), x, poly) - poly)) <= 1e-10)
    w = np.linspace(-1, 1, 5)
    check("gh second moment", np.max(np.abs(cond_mean(GaussQuadrature(4), w, lambda v: v**2, 0.3) - (w**2 + 0.3)))
          <= 1e-13)
    check("gh z of linear", np.max(np.abs(cond_z(GaussQuadrature(4), w, lambda v: 2 * v, None, 0.3) - 2)) <= 1e-13)

    problem = build_problem("reaction", 1.0, 0.05)
    basis = make_basis(D1, 3)
    grid = make_grid(0.05, 16)
    ens = sample_ensemble(grid, 500, 3)
    proc = solve_backward(problem, basis, ens, StepperConfig(estimator=LeastSquares(2), override_cfl=True))
    bound = grid.mesh / (1 + basis.eigenvalues[0] * grid.mesh) * (1 + 1e-6)
    ratios = [cur / prev for st in proc.steps for prev, cur in zip(st.update_norms, st.update_norms[1:])
              if prev > 1e-11]
    check("picard contraction", ratios and max(ratios) <= bound)

    values = ens.values.copy()
    values[1, 4] = values[0, 4]
    values.setflags(write=False)
    dup = PathEnsemble(grid, ens.M, ens.seed, values)
    proc = solve_backward(problem, basis, dup, StepperConfig(estimator=LeastSquares(2), override_cfl=True))
    check("measurability", np.array_equal(proc.alpha[4, 0], proc.alpha[4, 1]))
    return failures


def _cli(args, cwd, threads=None):
    env = dict(os.environ)
    if threads is not None:
        env["BSPDE_NUM_THREADS"] = str(threads)
    return subprocess.run([sys.executable, "-m", "bspde.cli", *map(str, args)],
                          capture_output=True, text=True, env=env, cwd=cwd)


def test_criterion_7_invariants(record, tmp_path):
    start = time.perf_counter()
    failures = _invariants()
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"problem_name": "coupled", "horizon_T": 0.02, "N": 8, "M": 9000, "n": 2,
                               "seed": 12, "estimator": {"kind": "least_squares", "degree": 2},
                               "override_cfl": True}))
    outputs = []
    for i, threads in enumerate((1, 1, 4)):
        run = tmp_path / f"run{i}"
        run.mkdir()
        res = _cli(["solve", "--config", cfg, "--output", "out.json"], run, threads)
        outputs.append((res.returncode, (run / "out.json").read_bytes() if res.returncode == 0 else b""))
    if not (outputs[0][0] == 0 and outputs[0] == outputs[1] == outputs[2]):
        failures.append("determinism")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60
    record(7, "invariant suites", ok, f"failures {failures or 'none'}, {elapsed:.1f} s")
    assert ok


def test_criterion_8_guards(record, tmp_path):
    start = time.perf_counter()
    from bspde.cli import main
    import contextlib
    import io

    def run(cfg, *extra):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        err = io.StringIO()
        with contextlib.redirect_stderr(err):
            code = main(["solve", "--config", str(path), "--output", str(tmp_path / "out.json"), *extra])
        lines = [ln for ln in err.getvalue().splitlines() if ln.startswith("{")]
        return code, json.loads(lines[-1]) if lines else None

    code_mesh, rec_mesh = run({"horizon_T": 10.0, "N": 5})
    cfl_cfg = {"problem_name": "heat_phi1", "horizon_T": 0.1, "N": 10, "M": 5, "n": 2,
               "estimator": {"kind": "gauss_quadrature", "points": 4}}
    code_cfl, rec_cfl = run(cfl_cfg)
    code_ovr, _ = run(cfl_cfg, "--override-cfl")
    report = json.loads((tmp_path / "out.json").read_text()) if code_ovr == 0 else {}
    elapsed = time.perf_counter() - start
    ok = (code_mesh == 2 and rec_mesh["error"] == "mesh_too_large"
          and code_cfl == 2 and rec_cfl["error"] == "cfl_violated"
          and code_ovr == 0 and report.get("cfl_overridden") is True
          and report["config"]["override_cfl"] is True and elapsed < 1.0)
    record(8, "guard behavior", ok, f"exits {code_mesh}/{code_cfl}/{code_ovr}, {elapsed:.2f} s")
    assert ok
