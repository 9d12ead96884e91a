"""Oracles, error norms, convergence studies and regularity probes.

All norms are computed in coefficient space: for an orthonormal basis the
L2(D) distance of two reconstructions equals the Euclidean distance of their
coefficient vectors.
"""

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from .basis import make_basis
from .exceptions import InvalidArgument
from .paths import make_grid, sample_ensemble
from .stepper import CoefficientProcess, check_cfl, solve_backward, solve_deterministic_ode

CSV_COLUMNS = ("n", "N", "M", "mesh", "err_q_max", "err_r_int", "mc_stderr_q", "mc_stderr_r")


@dataclass(frozen=True)
class OracleSolution:
    """Exact coefficient processes ``alpha(t, W(t))`` and deterministic ``beta(t)``."""

    alpha_exact: Callable
    beta_exact: Callable
    n: int


def _discounted_integral(lam, g_i, t, T, order=16):
    """``int_t^T exp(-lam (s - t)) g_i(s) ds`` by composite Gauss-Legendre."""
    if T <= t:
        return 0.0
    panels = int(min(4096, max(1, np.ceil(lam * (T - t) / 4.0))))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(t, T, panels + 1)
    h = np.diff(edges)[:, None]
    s = (edges[:-1, None] + 0.5 * h * (x + 1.0)).ravel()
    ws = (0.5 * h * w).ravel()
    return float(np.sum(ws * np.exp(-lam * (s - t)) * g_i(s)))


def oracle_linear(basis, T, terminal_weights, forcing=None, deterministic_terminal=None):
    """Closed-form solution of the coefficient BSDE when the driver is pure forcing.

    Terminal coefficients are ``c_i W(T) + d_i``; ``forcing(t)`` returns the
    projected forcing vector. Then

        alpha_i(t, w) = exp(-lambda_i (T - t)) (c_i w + d_i)
                        - int_t^T exp(-lambda_i (s - t)) g_i(s) ds
        beta_i(t)     = exp(-lambda_i (T - t)) c_i
    """
    lam = np.asarray(basis.eigenvalues, dtype=float)
    c = np.asarray(terminal_weights, dtype=float)
    d = np.zeros_like(lam) if deterministic_terminal is None else np.asarray(deterministic_terminal, dtype=float)
    if c.shape != lam.shape or d.shape != lam.shape:
        raise InvalidArgument(f"terminal coefficient vectors must have length {basis.n}")

    def forcing_integral(t):
        if forcing is None:
            return np.zeros_like(lam)
        return np.array([
            _discounted_integral(lam[i], lambda s, i=i: np.array([forcing(si)[i] for si in s]), t, T)
            for i in range(len(lam))
        ])

    cache = {}

    def alpha_exact(t, w):
        key = float(t)
        if key not in cache:
            cache[key] = forcing_integral(key)
        decay = np.exp(-lam * (T - t))
        w = np.asarray(w, dtype=float)
        return decay * (c * w[..., None] + d) - cache[key]

    def beta_exact(t):
        return np.exp(-lam * (T - t)) * c

    return OracleSolution(alpha_exact, beta_exact, basis.n)


def ode_oracle(problem, basis, substeps=2000):
    """Wrap the RK4 reference of a deterministic problem as an oracle (``beta = 0``)."""
    sol = solve_deterministic_ode(problem, basis, substeps)
    return OracleSolution(lambda t, w: np.broadcast_to(sol(t), np.shape(w) + (basis.n,)),
                          lambda t: np.zeros(basis.n), basis.n)


def _pad(a, n):
    if a.shape[-1] == n:
        return a
    out = np.zeros(a.shape[:-1] + (n,))
    out[..., : a.shape[-1]] = a
    return out


@dataclass
class LevelRow:
    n: int
    N: int
    M: int
    mesh: float
    err_q_max: float
    err_r_int: float
    mc_stderr_q: float
    mc_stderr_r: float

    @property
    def total(self):
        return self.err_q_max + self.err_r_int

    @property
    def total_stderr(self):
        return float(np.hypot(self.mc_stderr_q, self.mc_stderr_r))


@dataclass
class RegularityRow:
    lag: int
    s: float
    alpha_increment: float
    alpha_stderr: float
    z_increment: Optional[float]
    z_stderr: Optional[float]
    ratio: float
    oracle: Optional[float] = None
    within_3sigma: Optional[bool] = None


@dataclass
class ErrorReport:
    err_q_max: float = 0.0
    err_r_int: float = 0.0
    mc_stderr_q: float = 0.0
    mc_stderr_r: float = 0.0
    rows: list = field(default_factory=list)
    fitted_slope_space: Optional[float] = None
    fitted_slope_time: Optional[float] = None
    regularity: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    picard: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(getattr(row, col)) for col in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self):
        return _jsonable(asdict(self))

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _fmt(v):
    # repr gives the shortest string that parses back to the same float
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def error_norms(process: CoefficientProcess, reference, ensemble):
    """Sample estimates of ``E max_j |d alpha_j|^2`` and ``E sum_j delta |d z_j|^2``.

    ``reference`` is an :class:`OracleSolution` evaluated along the paths of
    ``ensemble``, or another :class:`CoefficientProcess` on the same grid
    (the shorter coefficient vectors are zero padded).
    """
    grid = process.grid
    if ensemble.grid != grid or ensemble.M != process.M:
        raise InvalidArgument("process, reference and ensemble must share a grid and path count",
                              code="grid_mismatch")
    times = grid.nodes
    if isinstance(reference, CoefficientProcess):
        if reference.grid != grid or reference.M != process.M:
            raise InvalidArgument("reference process lives on a different grid", code="grid_mismatch")
        n = max(process.n, reference.n)
        ref_alpha = _pad(reference.alpha, n)
        ref_z = _pad(reference.z, n)
    else:
        n = max(process.n, reference.n)
        ref_alpha = np.stack([_pad(np.asarray(reference.alpha_exact(t, ensemble.values[:, j])), n)
                              for j, t in enumerate(times)])
        ref_z = np.stack([np.broadcast_to(_pad(np.asarray(reference.beta_exact(t)), n), (process.M, n))
                          for t in times[:-1]])
    da = np.sum((_pad(process.alpha, n) - ref_alpha) ** 2, axis=-1)   # (N+1, M)
    dz = np.sum((_pad(process.z, n) - ref_z) ** 2, axis=-1)           # (N, M)
    per_path_q = np.max(da, axis=0)
    per_path_r = grid.mesh * np.sum(dz, axis=0)
    M = process.M
    se = (lambda v: float(np.std(v, ddof=1) / np.sqrt(M)) if M > 1 else 0.0)
    return ErrorReport(
        err_q_max=float(np.mean(per_path_q)),
        err_r_int=float(np.mean(per_path_r)),
        mc_stderr_q=se(per_path_q),
        mc_stderr_r=se(per_path_r),
    )


def _row(process, report, n=None):
    g = process.grid
    return LevelRow(n if n is not None else process.n, g.N, process.M, g.mesh,
                    report.err_q_max, report.err_r_int, report.mc_stderr_q, report.mc_stderr_r)


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``; ``None`` if undefined."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    # errors at round-off level carry no rate information
    if keep.sum() < 2 or np.max(y[keep]) < 1e-24:
        return None
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def converge_space(problem, grid, ensemble, config, levels, n_ref=None, reference=None, panels=None):
    """Spatial truncation error against a high-``n`` reference solve.

    Every level is solved on the same paths and compared with ``reference``
    (solved here at ``n_ref`` unless given). The bound ``err_n <= C / lambda_{n+1}``
    is checked with ``C`` calibrated at the coarsest level, with three Monte
    Carlo standard errors of slack on either side.
    """
    levels = [int(v) for v in levels]
    if not levels or levels != sorted(levels) or len(set(levels)) != len(levels):
        raise InvalidArgument(f"levels must be strictly ascending, got {levels}")
    if ensemble.grid != grid:
        raise InvalidArgument("ensemble does not live on the given grid", code="grid_mismatch")
    if reference is None:
        n_ref = int(n_ref if n_ref is not None else 2 * max(levels))
        if n_ref < 2 * max(levels) and not (len(levels) == 1 and levels[0] == n_ref):
            raise InvalidArgument(f"reference level n_ref={n_ref} must be >= 2 * max(levels)",
                                  code="reference_too_coarse")
        reference = solve_backward(problem, make_basis(problem.domain, n_ref, panels), ensemble, config)
    n_ref = reference.n
    report = ErrorReport()
    eig = []
    for n in levels:
        if n > n_ref:
            raise InvalidArgument(f"level {n} exceeds the reference level {n_ref}")
        basis = make_basis(problem.domain, n, panels)
        proc = reference if n == n_ref else solve_backward(problem, basis, ensemble, config)
        err = error_norms(proc, reference, ensemble)
        report.rows.append(_row(proc, err))
        report.picard.append({"n": n, **proc.picard_summary()})
        eig.append(basis.eigenvalue(n + 1))
    totals = np.array([r.total for r in report.rows])
    ses = np.array([r.total_stderr for r in report.rows])
    eig = np.array(eig)
    report.fitted_slope_space = loglog_slope(eig, totals)
    c_fit = (totals[0] + 3 * ses[0]) * eig[0]
    bound_ok = bool(np.all(totals - 3 * ses <= c_fit / eig * (1 + 1e-12) + 1e-300))
    decreasing = bool(np.all(np.diff(totals) < 0)) if len(totals) > 1 else True
    report.checks = {
        "C_fit": float(c_fit),
        "bound_holds": bound_ok,
        "strictly_decreasing": decreasing,
        "n_ref": int(n_ref),
        "cfl_overridden": bool(reference.cfl_overridden),
    }
    _summarise(report)
    return report


def converge_time(problem, basis, seed, config, levels, M=1000, oracle=None, min_slope=0.8):
    """Time-discretisation error for a sequence of ``N`` values against an oracle.

    Exact terminal coefficients are used at every level. ``oracle`` defaults
    to the RK4 reference for deterministic problems.
    """
    levels = [int(v) for v in levels]
    if not levels:
        raise InvalidArgument("at least one level is required")
    if oracle is None:
        if not problem.is_deterministic:
            raise InvalidArgument("a stochastic problem needs an explicit oracle for converge_time")
        oracle = ode_oracle(problem, basis)
    grids = [make_grid(problem.horizon_T, N) for N in levels]
    for g in grids:
        check_cfl(basis, g, config.override_cfl)
    report = ErrorReport()
    for g in grids:
        ens = sample_ensemble(g, M, seed)
        proc = solve_backward(problem, basis, ens, config)
        err = error_norms(proc, oracle, ens)
        report.rows.append(_row(proc, err))
        report.picard.append({"N": g.N, **proc.picard_summary()})
    mesh = [r.mesh for r in report.rows]
    slope_q = loglog_slope(mesh, [r.err_q_max for r in report.rows])
    slope_r = loglog_slope(mesh, [r.err_r_int for r in report.rows])
    slope_total = loglog_slope(mesh, [r.total for r in report.rows])
    report.fitted_slope_time = slope_total
    report.checks = {
        "slope_q": slope_q,
        "slope_r": slope_r,
        "min_slope": min_slope,
        "slope_ok": None if slope_total is None else bool(slope_total >= min_slope),
        "cfl_numbers": [float(basis.eigenvalues[-1] ** 2 * g.mesh) for g in grids],
    }
    _summarise(report)
    return report


def _summarise(report):
    if report.rows:
        last = report.rows[-1]
        report.err_q_max, report.err_r_int = last.err_q_max, last.err_r_int
        report.mc_stderr_q, report.mc_stderr_r = last.mc_stderr_q, last.mc_stderr_r


def linear_increment_moment(scales, times, lag):
    """``E|a(t_k) W(t_k) - a(t_j) W(t_j)|^2`` averaged over ``j`` with ``k = j + lag``.

    ``scales`` has shape ``(N + 1, n)``: the process is ``scales[j] * W(t_j)``.
    Uses ``E W(t_j) W(t_k) = min(t_j, t_k)``.
    """
    scales = np.asarray(scales, dtype=float)
    times = np.asarray(times, dtype=float)
    if lag == 0:
        return 0.0
    j = np.arange(len(times) - lag)
    k = j + lag
    aj, ak = scales[j], scales[k]
    term = np.sum(ak**2, axis=1) * times[k] + np.sum(aj**2, axis=1) * times[j] \
        - 2.0 * np.sum(aj * ak, axis=1) * times[j]
    return float(np.mean(term))


def regularity_probe(process: CoefficientProcess, lag_set, oracle_scales=None):
    """Monte Carlo increment moduli of ``alpha`` and ``z`` over step lags.

    For each lag ``l`` (time shift ``s = l * delta``) reports the path mean of
    ``|alpha(t_{j+l}) - alpha(t_j)|^2`` averaged over ``j``, likewise for
    ``z``, and the ratio ``estimate / ((1 + lambda_n^2 s) s)``. The fitted
    constant is the largest ratio; ``shape_violation`` is set if the ratio
    grows with ``s``. With ``oracle_scales`` (see
    :func:`linear_increment_moment`) each estimate is also compared with the
    exact Gaussian moment at three standard errors.
    """
    grid = process.grid
    N = grid.N
    lam_n = float(process.eigenvalues[-1])
    rows = []
    for lag in lag_set:
        lag = int(lag)
        if not 0 <= lag <= N:
            raise InvalidArgument(f"lag {lag} outside [0, {N}]", code="index_out_of_range")
        s = lag * grid.mesh
        if lag == 0:
            rows.append(RegularityRow(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                                      0.0 if oracle_scales is not None else None,
                                      True if oracle_scales is not None else None))
            continue
        d = np.sum((process.alpha[lag:] - process.alpha[:-lag]) ** 2, axis=-1)   # (N+1-lag, M)
        per_path = d.mean(axis=0)
        est = float(per_path.mean())
        se = float(per_path.std(ddof=1) / np.sqrt(len(per_path))) if len(per_path) > 1 else 0.0
        if lag < N:
            dz = np.sum((process.z[lag:] - process.z[:-lag]) ** 2, axis=-1).mean(axis=0)
            z_est = float(dz.mean())
            z_se = float(dz.std(ddof=1) / np.sqrt(len(dz))) if len(dz) > 1 else 0.0
        else:
            z_est = z_se = None
        ratio = est / ((1.0 + lam_n**2 * s) * s)
        row = RegularityRow(lag, s, est, se, z_est, z_se, ratio)
        if oracle_scales is not None:
            row.oracle = linear_increment_moment(oracle_scales, grid.nodes, lag)
            row.within_3sigma = bool(abs(est - row.oracle) <= 3.0 * se + 1e-14 * abs(row.oracle))
        rows.append(row)
    positive = [r for r in rows if r.lag > 0]
    ratios = [r.ratio for r in positive]
    violation = any(b > a for a, b in zip(ratios, ratios[1:]))
    summary = {
        "C_hat": float(max(ratios)) if ratios else 0.0,
        "shape_violation": bool(violation),
        "lambda_n": lam_n,
    }
    return rows, summary


def estimator_consistency(regression, quadrature, sigmas=3.0):
    """Compare a least-squares solve with a Gauss-Hermite solve on the same paths.

    For each node returns the path mean of ``|alpha_LS[j] - alpha_GQ[j]|^2``
    and the Monte Carlo variance budget of the regression solve, built
    backward from the per-step fit variances ``sigma^2 p / M`` and damped by
    ``(1 + lambda_i delta)^-2`` per step (exact propagation for ``f = 0``).
    ``passes[j]`` is true when the discrepancy is below ``sigmas^2`` times the
    budget.
    """
    if regression.grid != quadrature.grid or regression.alpha.shape != quadrature.alpha.shape:
        raise InvalidArgument("processes must share grid, paths and basis size", code="grid_mismatch")
    grid = regression.grid
    damp = (1.0 + np.asarray(regression.eigenvalues) * grid.mesh) ** -2
    budget = np.zeros((grid.N + 1, regression.n))
    for j in range(grid.N - 1, -1, -1):
        var = regression.steps[j].regression_variance
        if var is None:
            raise InvalidArgument("first process was not solved with LeastSquares")
        budget[j] = damp * (budget[j + 1] + var)
    discrepancy = np.mean(np.sum((regression.alpha - quadrature.alpha) ** 2, axis=-1), axis=1)
    budget = budget.sum(axis=1)
    passes = discrepancy <= sigmas**2 * budget
    # the terminal node is exact for both solvers
    passes[-1] = bool(discrepancy[-1] == 0.0)
    return discrepancy, budget, passes
