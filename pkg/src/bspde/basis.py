"""Dirichlet-Laplacian eigenbasis on an interval.

The eigenpairs of ``-d^2/dx^2`` on ``(0, length)`` with homogeneous Dirichlet
conditions are known in closed form::

    lambda_k = (k pi / length)^2,   phi_k(x) = sqrt(2/length) sin(k pi x / length)

Inner products against ``phi_k`` are evaluated with a composite
Gauss-Legendre rule stored on the basis.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidArgument

GAUSS_POINTS_PER_PANEL = 4


@dataclass(frozen=True)
class IntervalDomain:
    length: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.length) or self.length <= 0:
            raise InvalidArgument(f"domain length must be positive, got {self.length}")


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Composite Gauss-Legendre rule on ``(0, length)``.

    Exact for polynomials of degree ``2 * points_per_panel - 1`` on each panel.
    """

    nodes: np.ndarray
    weights: np.ndarray
    panels: int
    points_per_panel: int = GAUSS_POINTS_PER_PANEL

    @property
    def degree(self):
        return 2 * self.points_per_panel - 1

    def integrate(self, values):
        """Integrate sampled values; the last axis runs over the nodes."""
        return np.asarray(values) @ self.weights


def gauss_legendre_rule(length, panels, points=GAUSS_POINTS_PER_PANEL):
    if panels < 1:
        raise InvalidArgument(f"panels must be >= 1, got {panels}")
    ref_x, ref_w = np.polynomial.legendre.leggauss(points)
    h = length / panels
    left = np.arange(panels) * h
    nodes = (left[:, None] + 0.5 * h * (ref_x + 1.0)).ravel()
    weights = np.tile(0.5 * h * ref_w, panels)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, panels, points)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """The truncated eigenbasis ``phi_1 .. phi_n`` with its quadrature."""

    domain: IntervalDomain
    n: int
    eigenvalues: np.ndarray
    quadrature: QuadratureRule
    # phi_k sampled at the quadrature nodes, shape (n, nodes)
    _node_values: np.ndarray = field(repr=False)

    @property
    def length(self):
        return self.domain.length

    @property
    def wavenumbers(self):
        return np.arange(1, self.n + 1) * np.pi / self.length

    def eigenvalue(self, k):
        """``lambda_k`` for any ``k >= 1``, including ``k > n``."""
        return (k * np.pi / self.length) ** 2

    def eval(self, x):
        """Eigenfunctions at points ``x``; returns shape ``(n,) + x.shape``."""
        x = np.asarray(x, dtype=float)
        k = self.wavenumbers.reshape((-1,) + (1,) * x.ndim)
        return np.sqrt(2.0 / self.length) * np.sin(k * x)

    def eval_derivative(self, x):
        x = np.asarray(x, dtype=float)
        k = self.wavenumbers.reshape((-1,) + (1,) * x.ndim)
        return np.sqrt(2.0 / self.length) * k * np.cos(k * x)

    @property
    def node_values(self):
        return self._node_values

    @property
    def weighted_node_values(self):
        """``phi_k(x_q) w_q``; right-multiplying sampled data by its transpose projects."""
        return self._node_values * self.quadrature.weights

    def gram(self):
        """Quadrature Gram matrix of the stored eigenfunctions."""
        return self.weighted_node_values @ self._node_values.T

    def project(self, g):
        return project(self, g)

    def reconstruct(self, coeffs, x):
        return reconstruct(self, coeffs, x)


def default_panels(n):
    return max(4 * n, 64)


def make_basis(domain, n, panels=None):
    """Build the eigenbasis of size ``n`` with a ``panels``-panel quadrature.

    >>> make_basis(IntervalDomain(1.0), 3).eigenvalues / np.pi**2
    array([1., 4., 9.])
    """
    if not isinstance(domain, IntervalDomain):
        domain = IntervalDomain(float(domain))
    if int(n) != n or n < 1:
        raise InvalidArgument(f"truncation level n must be a positive integer, got {n}")
    n = int(n)
    if panels is None:
        panels = default_panels(n)
    if int(panels) != panels or panels < n:
        raise InvalidArgument(f"panels must be an integer >= n={n}, got {panels}")
    quad = gauss_legendre_rule(domain.length, int(panels))
    k = np.arange(1, n + 1)
    eigenvalues = (k * np.pi / domain.length) ** 2
    eigenvalues.setflags(write=False)
    node_values = np.sqrt(2.0 / domain.length) * np.sin(np.outer(k, quad.nodes) * np.pi / domain.length)
    node_values.setflags(write=False)
    return SpectralBasis(domain, n, eigenvalues, quad, node_values)


def project(basis, g):
    """Coefficients ``<g, phi_k>`` for k = 1..n by quadrature.

    ``g`` is called once with the full node vector and must return values of
    the same shape (or a scalar).
    """
    values = np.broadcast_to(np.asarray(g(basis.quadrature.nodes), dtype=float),
                             basis.quadrature.nodes.shape)
    return basis.weighted_node_values @ values


def project_values(basis, values):
    """Project data already sampled at the quadrature nodes (last axis)."""
    return np.asarray(values) @ basis.weighted_node_values.T


def reconstruct(basis, coeffs, x):
    """Evaluate ``sum_k coeffs_k phi_k(x)``.

    ``coeffs`` may carry leading batch axes; the last axis must have length n.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1:] != (basis.n,):
        raise InvalidArgument(f"expected {basis.n} coefficients, got shape {coeffs.shape}")
    x = np.asarray(x, dtype=float)
    phi = basis.eval(x)
    out = np.tensordot(coeffs, phi, axes=([-1], [0]))
    return float(out) if out.ndim == 0 else out


def l2_distance_squared(basis, g, h):
    """Quadrature of ``(g - h)^2`` for two pointwise functions."""
    nodes = basis.quadrature.nodes
    return float(basis.quadrature.integrate((np.asarray(g(nodes)) - np.asarray(h(nodes))) ** 2))
