"""Problem definition: driver, terminal datum and their Galerkin projections.

The equation solved is

    dq = (-q_xx + f(t, x, q, r)) dt + r dW   on (0, T) x (0, length),
    q = 0 on the boundary,  q(T) = q_T.

Driver callables are vectorised: ``f(t, x, y, z)`` receives a scalar ``t`` and
broadcastable arrays ``x``, ``y``, ``z`` and must be a pure function of them.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import IntervalDomain, SpectralBasis, project_values
from .exceptions import InvalidArgument

BOUNDARY_TOL = 1e-8
VIOLATION_MARGIN = 0.01


@dataclass(frozen=True)
class Driver:
    eval: Callable
    lipschitz_L: float = 1.0
    holder_L: float = 1.0

    def __post_init__(self):
        if self.lipschitz_L <= 0 or self.holder_L <= 0:
            raise InvalidArgument("driver constants must be positive")

    def __call__(self, t, x, y, z):
        return self.eval(t, x, y, z)


def zero_driver():
    return Driver(lambda t, x, y, z: np.zeros(np.broadcast(x, y, z).shape), 1.0, 1.0)


@dataclass(frozen=True)
class Deterministic:
    """Terminal value ``q_T(x) = psi(x)``."""

    psi: Callable

    def __call__(self, x, w=0.0):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        out = np.asarray(self.psi(x), dtype=float)
        return np.broadcast_to(out, np.broadcast(x, w).shape)


@dataclass(frozen=True)
class WienerFunctional:
    """Terminal value ``q_T(x) = Phi(x, W(T))``."""

    phi: Callable

    def __call__(self, x, w):
        return np.asarray(self.phi(x, w), dtype=float)


@dataclass(frozen=True)
class BspdeProblem:
    domain: IntervalDomain
    horizon_T: float
    driver: Driver
    terminal: object
    # Recorded only; the moment/Malliavin constants cannot be checked numerically.
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise InvalidArgument(f"horizon T must be positive, got {self.horizon_T}")
        if not isinstance(self.terminal, (Deterministic, WienerFunctional)):
            raise InvalidArgument("terminal must be Deterministic or WienerFunctional")

    @property
    def is_deterministic(self):
        return isinstance(self.terminal, Deterministic)

    def check_boundary(self, w_samples=(-1.0, 0.0, 1.0)):
        """Dirichlet compatibility of the terminal datum at both endpoints.

        Returns the largest boundary value relative to the datum's scale;
        raises if it exceeds ``BOUNDARY_TOL``.
        """
        ends = np.array([0.0, self.domain.length])
        interior = np.linspace(0.0, self.domain.length, 65)[1:-1]
        worst = 0.0
        for w in w_samples:
            scale = max(1.0, float(np.max(np.abs(self.terminal(interior, w)))))
            worst = max(worst, float(np.max(np.abs(self.terminal(ends, w)))) / scale)
        if worst > BOUNDARY_TOL:
            raise InvalidArgument(f"terminal datum does not vanish on the boundary (|q_T| = {worst:.3g})",
                                  code="boundary_incompatible")
        return worst


def _check_domain(problem, basis):
    if problem.domain != basis.domain:
        raise InvalidArgument(f"basis domain {basis.domain} does not match problem domain {problem.domain}",
                              code="domain_mismatch")


def project_terminal(problem: BspdeProblem, basis: SpectralBasis, w_T=0.0):
    """Coefficients of ``q_T(., w_T)``; vector for scalar ``w_T``, ``(M, n)`` for a vector."""
    _check_domain(problem, basis)
    w = np.asarray(w_T, dtype=float)
    nodes = basis.quadrature.nodes
    values = problem.terminal(nodes, w[..., None])
    values = np.broadcast_to(values, w.shape + nodes.shape)
    return project_values(basis, values)


def project_driver(problem: BspdeProblem, basis: SpectralBasis, t, alpha, beta):
    """Galerkin projection of the driver evaluated on ``q_n`` and ``r_n``.

    ``alpha`` and ``beta`` hold coefficient vectors along the last axis (any
    matching leading batch shape). The solution fields are sampled at the
    quadrature nodes, ``f`` is applied pointwise, and the result projected.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if alpha.shape[-1] != basis.n or beta.shape[-1] != basis.n:
        raise InvalidArgument(f"coefficient vectors must have length {basis.n}")
    phi = basis.node_values
    q_nodes = alpha @ phi
    r_nodes = beta @ phi
    f_nodes = problem.driver(t, basis.quadrature.nodes, q_nodes, r_nodes)
    f_nodes = np.broadcast_to(np.asarray(f_nodes, dtype=float), np.broadcast(q_nodes, r_nodes).shape)
    return project_values(basis, f_nodes)


@dataclass
class AssumptionReport:
    lipschitz_ratio: float
    holder_ratio: float
    lipschitz_L: float
    holder_L: float
    samples: int

    @property
    def lipschitz_violated(self):
        return self.lipschitz_ratio > self.lipschitz_L * (1 + VIOLATION_MARGIN)

    @property
    def holder_violated(self):
        return self.holder_ratio > self.holder_L * (1 + VIOLATION_MARGIN)

    @property
    def flagged(self):
        return self.lipschitz_violated or self.holder_violated

    def to_dict(self):
        return {
            "lipschitz_ratio": self.lipschitz_ratio,
            "holder_ratio": self.holder_ratio,
            "lipschitz_L": self.lipschitz_L,
            "holder_L": self.holder_L,
            "samples": self.samples,
            "flagged": self.flagged,
        }


def probe_assumptions(problem: BspdeProblem, basis: SpectralBasis, samples=1000, seed=0, value_range=10.0):
    """Sampled difference quotients of the driver.

    Lipschitz ratios use ``|df| / (|dy| + |dz|)``; Hoelder ratios use
    ``|df| / sqrt(|dt|)``. Half of the pairs are close together so that
    local slopes are seen as well as global ones. This is a smoke test,
    not a proof.
    """
    if samples < 1:
        raise InvalidArgument("samples must be >= 1")
    rng = np.random.default_rng(seed)
    T = problem.horizon_T
    f = problem.driver
    x = rng.choice(basis.quadrature.nodes, size=samples)
    t = rng.uniform(0.0, T, samples)
    y1, z1 = rng.uniform(-value_range, value_range, (2, samples))
    spread = np.where(rng.random(samples) < 0.5, 1e-3, value_range)
    y2 = y1 + spread * rng.standard_normal(samples)
    z2 = z1 + spread * rng.standard_normal(samples)

    lip = 0.0
    hol = 0.0
    for i in range(samples):
        dyz = abs(y1[i] - y2[i]) + abs(z1[i] - z2[i])
        if dyz > 0:
            df = abs(float(f(t[i], x[i], y1[i], z1[i])) - float(f(t[i], x[i], y2[i], z2[i])))
            lip = max(lip, df / dyz)
        s = rng.uniform(0.0, T)
        if s != t[i]:
            df = abs(float(f(t[i], x[i], y1[i], z1[i])) - float(f(s, x[i], y1[i], z1[i])))
            hol = max(hol, df / np.sqrt(abs(t[i] - s)))
    return AssumptionReport(lip, hol, f.lipschitz_L, f.holder_L, samples)
