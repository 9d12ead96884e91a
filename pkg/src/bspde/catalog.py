"""Named test problems with closed-form or reference oracles.

========================  ======================  ============================
name                      driver f(t, x, y, z)    terminal q_T(x, w)
========================  ======================  ============================
``heat_phi1``             0                       phi_1(x)
``heat_parabola``         0                       x (l - x)
``linear_wiener``         0                       phi_1(x) w
``reaction``              sin(y) + phi_1(x)       x (l - x)
``coupled``               y + z                   x (l - x) (1 + w)
========================  ======================  ============================
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .basis import IntervalDomain, project
from .exceptions import InvalidArgument
from .harness import OracleSolution, ode_oracle, oracle_linear
from .problem import BspdeProblem, Deterministic, Driver, WienerFunctional, zero_driver


def _phi1(length):
    k = np.pi / length
    return lambda x: np.sqrt(2.0 / length) * np.sin(k * np.asarray(x, dtype=float))


def _parabola(length):
    return lambda x: np.asarray(x, dtype=float) * (length - np.asarray(x, dtype=float))


def _e1(n):
    e = np.zeros(n)
    e[0] = 1.0
    return e


def oracle_affine(basis, T, wiener_coeffs, det_coeffs, y_coef, z_coef):
    """Exact solution for ``f = y_coef * y + z_coef * z`` and terminal ``c W(T) + d``.

    Per mode with ``k = lambda_i + y_coef``::

        beta_i(t)     = c_i exp(-k (T - t))
        alpha_i(t, w) = beta_i(t) w + exp(-k (T - t)) (d_i - z_coef c_i (T - t))
    """
    k = np.asarray(basis.eigenvalues, dtype=float) + y_coef
    c = np.asarray(wiener_coeffs, dtype=float)
    d = np.asarray(det_coeffs, dtype=float)

    def beta_exact(t):
        return c * np.exp(-k * (T - t))

    def alpha_exact(t, w):
        decay = np.exp(-k * (T - t))
        w = np.asarray(w, dtype=float)
        return (c * decay) * w[..., None] + decay * (d - z_coef * c * (T - t))

    return OracleSolution(alpha_exact, beta_exact, basis.n)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    build: Callable
    # (problem, basis) -> OracleSolution
    oracle: Callable
    # (problem, basis, grid) -> per-node scales a_j with alpha_j = a_j W(t_j), or None
    increment_scales: Optional[Callable] = None
    description: str = ""


def _heat_phi1(domain, T):
    return BspdeProblem(domain, T, zero_driver(), Deterministic(_phi1(domain.length)))


def _heat_parabola(domain, T):
    return BspdeProblem(domain, T, zero_driver(), Deterministic(_parabola(domain.length)))


def _linear_wiener(domain, T):
    phi = _phi1(domain.length)
    return BspdeProblem(domain, T, zero_driver(), WienerFunctional(lambda x, w: phi(x) * w))


def _reaction(domain, T):
    phi = _phi1(domain.length)
    driver = Driver(lambda t, x, y, z: np.sin(y) + 0.0 * z + phi(x), lipschitz_L=1.0, holder_L=1.0)
    return BspdeProblem(domain, T, driver, Deterministic(_parabola(domain.length)))


def _coupled(domain, T):
    par = _parabola(domain.length)
    driver = Driver(lambda t, x, y, z: y + z, lipschitz_L=1.0, holder_L=1.0)
    return BspdeProblem(domain, T, driver, WienerFunctional(lambda x, w: par(x) * (1.0 + w)))


def _deterministic_linear_oracle(problem, basis):
    return oracle_linear(basis, problem.horizon_T, np.zeros(basis.n),
                         deterministic_terminal=project(basis, problem.terminal.psi))


def _linear_wiener_oracle(problem, basis):
    return oracle_linear(basis, problem.horizon_T, _e1(basis.n))


def _coupled_oracle(problem, basis):
    par = project(basis, _parabola(problem.domain.length))
    return oracle_affine(basis, problem.horizon_T, par, par, 1.0, 1.0)


def _linear_wiener_scales(problem, basis, grid):
    j = np.arange(grid.N + 1)
    decay = (1.0 + basis.eigenvalues[None, :] * grid.mesh) ** (-(grid.N - j)[:, None].astype(float))
    return decay * _e1(basis.n)


CATALOG = {
    "heat_phi1": CatalogEntry("heat_phi1", _heat_phi1, _deterministic_linear_oracle,
                              description="f = 0, q_T = phi_1"),
    "heat_parabola": CatalogEntry("heat_parabola", _heat_parabola, _deterministic_linear_oracle,
                                  description="f = 0, q_T = x(l - x)"),
    "linear_wiener": CatalogEntry("linear_wiener", _linear_wiener, _linear_wiener_oracle,
                                  _linear_wiener_scales, description="f = 0, q_T = phi_1(x) W(T)"),
    "reaction": CatalogEntry("reaction", _reaction, lambda p, b: ode_oracle(p, b),
                             description="f = sin(y) + phi_1(x), q_T = x(l - x)"),
    "coupled": CatalogEntry("coupled", _coupled, _coupled_oracle,
                            description="f = y + z, q_T = x(l - x)(1 + W(T))"),
}


def get_entry(name):
    try:
        return CATALOG[name]
    except KeyError:
        raise InvalidArgument(f"unknown problem {name!r}; choose from {sorted(CATALOG)}",
                              code="unknown_problem") from None


def build_problem(name, domain_length=1.0, horizon_T=1.0):
    return get_entry(name).build(IntervalDomain(float(domain_length)), float(horizon_T))
