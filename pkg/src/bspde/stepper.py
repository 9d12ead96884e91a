"""Implicit backward Euler solver for the Galerkin coefficient BSDE.

In coefficient space the equation reads

    d alpha = (Lambda alpha + f_n(t, alpha, beta)) dt + beta dW,
    alpha(T) = <q_T, phi_i>,

with ``Lambda = diag(lambda_i)``. One backward step on a mesh of width
``delta`` is

    z_j     = E(alpha_{j+1} dW_j | F_{t_j}) / delta
    c_j     = E(alpha_{j+1} | F_{t_j})
    (I + delta Lambda) alpha_j = c_j - delta f_n(t_j, alpha_j, z_j)

and the implicit equation is solved by Picard iteration, which contracts
with factor ``L delta / (1 + lambda_1 delta)``.

With ``GaussQuadrature`` the solution at each time level is carried as a
Chebyshev interpolant in ``w = W(t_j)`` on a fixed window, which is then
evaluated at each path's Brownian value. Polynomial-in-``w`` solutions are
represented exactly.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev
from sklearn.base import BaseEstimator, clone

from ._parallel import chunked_map
from .basis import make_basis, reconstruct
from .cond_exp import GaussQuadrature, LeastSquares, cond_mean, cond_z
from .exceptions import InvalidArgument, IterationFailure
from .paths import increments
from .problem import project_driver, project_terminal

DEFAULT_SURFACE_DEGREE = 32


@dataclass(frozen=True)
class StepperConfig:
    picard_tol: float = 1e-12
    picard_max_iters: int = 50
    estimator: object = field(default_factory=lambda: LeastSquares(degree=3))
    override_cfl: bool = False

    def __post_init__(self):
        if not self.picard_tol > 0:
            raise InvalidArgument(f"picard_tol must be positive, got {self.picard_tol}")
        if int(self.picard_max_iters) != self.picard_max_iters or self.picard_max_iters < 1:
            raise InvalidArgument(f"picard_max_iters must be >= 1, got {self.picard_max_iters}")
        if not isinstance(self.estimator, (LeastSquares, GaussQuadrature)):
            raise InvalidArgument(f"unsupported estimator {self.estimator!r}")


@dataclass(eq=False)
class StepStats:
    picard_iters: int
    update_norms: list
    regression_truncated: bool = False
    # per-coordinate sigma^2 p / M of the conditional-mean fit (least squares only)
    regression_variance: object = None


@dataclass(eq=False)
class CoefficientProcess:
    """Per-time, per-path coefficient vectors of the discrete solution.

    ``alpha`` has shape ``(N + 1, M, n)``; ``z`` has shape ``(N, M, n)``
    and holds the martingale-density proxy on ``[t_j, t_{j+1})``.
    """

    grid: object
    n: int
    alpha: np.ndarray
    z: np.ndarray
    eigenvalues: np.ndarray
    steps: list = field(default_factory=list)
    cfl_number: float = 0.0
    cfl_overridden: bool = False
    elapsed: float = 0.0

    @property
    def M(self):
        return self.alpha.shape[1]

    @property
    def picard_iters(self):
        return [s.picard_iters for s in self.steps]

    def picard_summary(self):
        iters = self.picard_iters
        if not iters:
            return {"min": 0, "max": 0, "mean": 0.0, "total": 0}
        return {"min": int(min(iters)), "max": int(max(iters)),
                "mean": float(np.mean(iters)), "total": int(sum(iters))}


class ChebyshevSurface:
    """Vector-valued Chebyshev interpolant ``w -> alpha(w)`` on ``[-R, R]``."""

    def __init__(self, halfwidth, degree):
        self.halfwidth = float(halfwidth)
        self.degree = int(degree)
        self.coef = None

    @property
    def nodes(self):
        return self.halfwidth * chebyshev.chebpts1(self.degree + 1)

    def fit(self, node_values):
        """``node_values`` has shape ``(degree + 1, n)`` at ``self.nodes``."""
        t = self.nodes / self.halfwidth
        V = chebyshev.chebvander(t, self.degree)
        # discrete orthogonality at Chebyshev points makes this a well-conditioned solve
        self.coef = np.linalg.solve(V, node_values)
        return self

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        return chebyshev.chebval(w / self.halfwidth, self.coef).T


def _lambda_diag(basis, delta):
    return 1.0 + basis.eigenvalues * delta


def _picard(problem, basis, t, c, z, delta, config, step=None):
    """Fixed-point solve of ``Lambda_j a = c - delta f_n(t, a, z)`` row by row."""
    inv = 1.0 / _lambda_diag(basis, delta)
    alpha = c * inv
    norms = []
    for it in range(1, config.picard_max_iters + 1):
        fn = _project_driver_rows(problem, basis, t, alpha, z)
        new = (c - delta * fn) * inv
        upd = float(np.max(np.sqrt(np.sum((new - alpha) ** 2, axis=-1)))) if new.size else 0.0
        norms.append(upd)
        alpha = new
        if upd <= config.picard_tol:
            return alpha, it, norms
    raise IterationFailure(
        f"Picard iteration did not converge in {config.picard_max_iters} iterations "
        f"(last update {norms[-1]:.3e})", residual=norms[-1], step=step)


def _project_driver_rows(problem, basis, t, alpha, z):
    if alpha.ndim == 1 or len(alpha) <= 4096:
        return project_driver(problem, basis, t, alpha, z)
    out = np.empty_like(alpha)

    def work(lo, hi):
        out[lo:hi] = project_driver(problem, basis, t, alpha[lo:hi], z[lo:hi])

    chunked_map(work, len(alpha))
    return out


def _check_step_preconditions(problem, delta):
    L = problem.driver.lipschitz_L
    if L * delta >= 1.0:
        raise InvalidArgument(f"L * delta = {L * delta:.3g} >= 1: Picard iteration is not contractive",
                              code="picard_not_contractive")


def backward_step(j, alpha_next, ensemble, problem, basis, config):
    """One implicit step from ``t_{j+1}`` to ``t_j`` on sampled path values.

    ``alpha_next`` is either an ``(M, n)`` array of per-path coefficients
    (required for ``LeastSquares``) or, for ``GaussQuadrature``, a callable
    mapping ``W(t_{j+1})`` values to coefficient rows.

    Returns ``(alpha_j, z_j, picard_iters)``.
    """
    alpha, z, stats = _backward_step(j, alpha_next, ensemble, problem, basis, config)
    return alpha, z, stats.picard_iters


def _backward_step(j, alpha_next, ensemble, problem, basis, config):
    grid = ensemble.grid
    if int(j) != j or not 0 <= j < grid.N:
        raise InvalidArgument(f"step index {j} outside [0, {grid.N - 1}]", code="index_out_of_range")
    delta = grid.mesh
    _check_step_preconditions(problem, delta)
    t = float(grid.nodes[j])
    x = ensemble.values[:, j]
    est = config.estimator
    truncated = False
    variance = None
    if isinstance(est, GaussQuadrature):
        if not callable(alpha_next):
            values = np.asarray(alpha_next, dtype=float)
            if not np.all(values == values[:1]):
                raise InvalidArgument("GaussQuadrature needs alpha_{j+1} as a function of W(t_{j+1}) "
                                      "unless it is identical on every path", code="missing_function_handle")
            alpha_next = _constant_function(values[0])
        c = cond_mean(est, x, alpha_next, delta)
        z = cond_z(est, x, alpha_next, None, delta)
    else:
        if callable(alpha_next):
            alpha_next = alpha_next(ensemble.values[:, j + 1])
        alpha_next = np.asarray(alpha_next, dtype=float)
        if alpha_next.shape != (ensemble.M, basis.n):
            raise InvalidArgument(f"alpha_next must have shape {(ensemble.M, basis.n)}, got {alpha_next.shape}")
        dW = increments(ensemble, j)
        fit_c = clone(est).fit(x, alpha_next)
        c = fit_c.predict(x)
        # the fitted mean is W(t_j)-measurable so removing it leaves the target unchanged
        fit_z = clone(est).fit(x, (alpha_next - c) * dW[:, None])
        z = fit_z.predict(x) / delta
        truncated = bool(fit_c.truncated_ or fit_z.truncated_)
        variance = np.asarray(fit_c.estimator_variance(), dtype=float)
    alpha, iters, norms = _picard(problem, basis, t, c, z, delta, config, step=j)
    return alpha, z, StepStats(iters, norms, truncated, variance)


def _constant_function(row):
    row = np.asarray(row, dtype=float)
    return lambda w: np.broadcast_to(row, np.shape(w) + row.shape)


def cfl_number(basis, grid):
    return float(basis.eigenvalues[-1] ** 2 * grid.mesh)


def check_cfl(basis, grid, override=False):
    """Enforce ``lambda_n^2 |pi| <= 1``; returns the CFL number."""
    cfl = cfl_number(basis, grid)
    if cfl > 1.0 and not override:
        raise InvalidArgument(
            f"lambda_n^2 * mesh = {cfl:.4g} > 1 (n={basis.n}, mesh={grid.mesh:g}); "
            "refine the time grid or pass override_cfl", code="cfl_violated")
    return cfl


def solve_backward(problem, basis, ensemble, config=None):
    """Run the backward scheme from ``t_N = T`` down to ``t_0 = 0``."""
    config = config or StepperConfig()
    grid = ensemble.grid
    if abs(grid.horizon_T - problem.horizon_T) > 1e-12 * problem.horizon_T:
        raise InvalidArgument(f"ensemble horizon {grid.horizon_T} differs from problem horizon {problem.horizon_T}",
                              code="grid_mismatch")
    cfl = check_cfl(basis, grid, config.override_cfl)
    _check_step_preconditions(problem, grid.mesh)
    started = time.perf_counter()
    N, M, n = grid.N, ensemble.M, basis.n
    alpha = np.empty((N + 1, M, n))
    z = np.empty((N, M, n))
    alpha[N] = project_terminal(problem, basis, ensemble.values[:, N])
    steps = [None] * N

    if isinstance(config.estimator, GaussQuadrature):
        _solve_on_surfaces(problem, basis, ensemble, config, alpha, z, steps)
    else:
        for j in range(N - 1, -1, -1):
            try:
                alpha[j], z[j], steps[j] = _backward_step(j, alpha[j + 1], ensemble, problem, basis, config)
            except IterationFailure as exc:
                exc.step = j
                raise
    return CoefficientProcess(grid, n, alpha, z, basis.eigenvalues, steps, cfl, cfl > 1.0,
                              time.perf_counter() - started)


def surface_halfwidth(ensemble):
    T = ensemble.grid.horizon_T
    spread = float(np.max(np.abs(ensemble.values))) if ensemble.values.size else 0.0
    return max(spread, 6.0 * np.sqrt(T)) + 6.0 * np.sqrt(ensemble.grid.mesh)


def _solve_on_surfaces(problem, basis, ensemble, config, alpha, z, steps):
    est = config.estimator
    degree = getattr(est, "surface_degree", DEFAULT_SURFACE_DEGREE)
    grid = ensemble.grid
    delta = grid.mesh
    surface = ChebyshevSurface(surface_halfwidth(ensemble), degree)
    nodes = surface.nodes
    surface.fit(project_terminal(problem, basis, nodes))
    for j in range(grid.N - 1, -1, -1):
        t = float(grid.nodes[j])
        x = ensemble.values[:, j]
        c_nodes = cond_mean(est, nodes, surface, delta)
        z_nodes = cond_z(est, nodes, surface, None, delta)
        try:
            a_nodes, iters, norms = _picard(problem, basis, t, c_nodes, z_nodes, delta, config, step=j)
        except IterationFailure as exc:
            exc.step = j
            raise
        z_surface = ChebyshevSurface(surface.halfwidth, degree).fit(z_nodes)
        surface = ChebyshevSurface(surface.halfwidth, degree).fit(a_nodes)
        alpha[j] = surface(x)
        z[j] = z_surface(x)
        steps[j] = StepStats(iters, norms)


def reconstruct_solution(process, basis, j, m, x):
    """``(q, r)`` at node ``t_j`` on path ``m``; ``r`` is ``None`` at ``j = N``."""
    N = process.grid.N
    if int(j) != j or not 0 <= j <= N:
        raise InvalidArgument(f"time index {j} outside [0, {N}]", code="index_out_of_range")
    if int(m) != m or not 0 <= m < process.M:
        raise InvalidArgument(f"path index {m} outside [0, {process.M - 1}]", code="index_out_of_range")
    q = reconstruct(basis, process.alpha[j, m], x)
    r = None if j == N else reconstruct(basis, process.z[j, m], x)
    return q, r


class DeterministicSolution:
    """RK4 reference for ``alpha' = Lambda alpha + f_n(t, alpha, 0)``, integrated backward from ``T``."""

    def __init__(self, problem, basis, times, values):
        self.problem = problem
        self.basis = basis
        self.times = times
        self.values = values

    def _rhs(self, t, a):
        return self.basis.eigenvalues * a + project_driver(self.problem, self.basis, t, a, np.zeros_like(a))

    def __call__(self, t):
        T = self.times[-1]
        if not 0.0 <= t <= T * (1 + 1e-14):
            raise InvalidArgument(f"t = {t} outside [0, {T}]")
        k = int(np.searchsorted(self.times, t, side="left"))
        k = min(k, len(self.times) - 1)
        if abs(self.times[k] - t) <= 1e-14 * max(1.0, T):
            return self.values[k].copy()
        return _rk4_step(self._rhs, self.times[k], self.values[k], t - self.times[k])


def _rk4_step(rhs, t, a, h):
    k1 = rhs(t, a)
    k2 = rhs(t + h / 2, a + h / 2 * k1)
    k3 = rhs(t + h / 2, a + h / 2 * k2)
    k4 = rhs(t + h, a + h * k3)
    return a + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def solve_deterministic_ode(problem, basis, substeps=1000):
    """Classical RK4 backward in time on ``substeps`` uniform steps.

    The step count is raised if needed to keep ``lambda_n h`` inside the
    RK4 stability interval.
    """
    if not problem.is_deterministic:
        raise InvalidArgument("deterministic reference needs a deterministic terminal datum")
    T = problem.horizon_T
    stable = int(np.ceil(T * basis.eigenvalues[-1] / 2.0))
    steps = max(int(substeps), stable, 1)
    times = np.arange(steps + 1) * T / steps
    values = np.empty((steps + 1, basis.n))
    values[-1] = project_terminal(problem, basis, 0.0)
    sol = DeterministicSolution(problem, basis, times, values)
    h = -T / steps
    for k in range(steps, 0, -1):
        values[k - 1] = _rk4_step(sol._rhs, times[k], values[k], h)
    return sol


class BackwardEulerSolver(BaseEstimator):
    """Estimator-style wrapper around :func:`solve_backward`.

    ``fit(ensemble, problem)`` builds the basis, runs the scheme and stores
    the result in ``process_``; ``predict(x, j)`` evaluates ``q`` at
    spatial points ``x`` on every path at time index ``j``.
    """

    def __init__(self, n=8, panels=None, estimator=None, picard_tol=1e-12, picard_max_iters=50,
                 override_cfl=False):
        self.n = n
        self.panels = panels
        self.estimator = estimator
        self.picard_tol = picard_tol
        self.picard_max_iters = picard_max_iters
        self.override_cfl = override_cfl

    def _config(self):
        est = self.estimator if self.estimator is not None else LeastSquares(degree=3)
        return StepperConfig(self.picard_tol, self.picard_max_iters, clone(est), self.override_cfl)

    def fit(self, ensemble, problem):
        self.basis_ = make_basis(problem.domain, self.n, self.panels)
        self.process_ = solve_backward(problem, self.basis_, ensemble, self._config())
        return self

    def predict(self, x, j=0):
        if not hasattr(self, "process_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit before predict")
        return reconstruct(self.basis_, self.process_.alpha[j], x)

    def predict_r(self, x, j=0):
        if not hasattr(self, "process_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit before predict_r")
        return reconstruct(self.basis_, self.process_.z[j], x)
