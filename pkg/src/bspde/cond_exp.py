"""Conditional expectations given ``W(t_j)``.

With a Markovian terminal datum every quantity in the backward scheme is a
function of the current Brownian value, so ``E(. | F_{t_j})`` reduces to
``E(. | W(t_j))``. Two estimators are provided:

``LeastSquares``
    Global regression on probabilists' Hermite polynomials of the
    standardised regressor (Longstaff-Schwartz style).
``GaussQuadrature``
    Gauss-Hermite integration of a payload given as a function of
    ``W(t_{j+1})`` against the Gaussian transition density. Exact for
    polynomial payloads of degree ``<= 2 * points - 1``.
"""

import warnings

import numpy as np
from numpy.polynomial import hermite_e
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateRegression, InvalidArgument

COND_LIMIT = 1e12


class DegreeTruncationWarning(UserWarning):
    pass


class LeastSquares(RegressorMixin, BaseEstimator):
    """Polynomial least-squares regression of a vector payload on a scalar.

    Parameters
    ----------
    degree : int
        Highest Hermite degree in the regression basis.
    cond_limit : float
        If the design matrix condition number exceeds this, the degree is
        lowered until it does not; the reduction is recorded in
        ``truncated_`` and a ``DegreeTruncationWarning`` is issued.
    """

    def __init__(self, degree=3, cond_limit=COND_LIMIT):
        self.degree = degree
        self.cond_limit = cond_limit

    def _design(self, x, degree):
        xi = (x - self.center_) / self.scale_
        return hermite_e.hermevander(xi, degree)

    def fit(self, x, y):
        if int(self.degree) != self.degree or self.degree < 0:
            raise InvalidArgument(f"regression degree must be a non-negative integer, got {self.degree}")
        x = check_array(x, ensure_2d=False, dtype=float).ravel()
        y = np.asarray(y, dtype=float)
        self.n_outputs_ = None if y.ndim == 1 else y.shape[1]
        y2 = y.reshape(len(y), -1)
        if len(y2) != len(x):
            raise InvalidArgument(f"regressor has {len(x)} rows but payload has {len(y2)}")
        M = len(x)
        degree = int(self.degree)
        self.center_ = float(np.mean(x))
        spread = float(np.std(x))
        # a regressor with no spread (e.g. W(0) = 0 on every path) only supports constants
        if spread <= 1e-14 * max(1.0, abs(self.center_)):
            degree = 0
            spread = 1.0
        self.scale_ = spread
        if M <= degree + 1 and degree > 0:
            raise InvalidArgument(f"need more than degree + 1 = {degree + 1} samples, got {M}")
        requested = degree
        while True:
            X = self._design(x, degree)
            coef, _, rank, sv = np.linalg.lstsq(X, y2, rcond=None)
            cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
            if cond <= self.cond_limit and rank == degree + 1:
                break
            if degree == 0:
                raise DegenerateRegression("regression design is singular even at degree 0")
            degree -= 1
        self.degree_used_ = degree
        self.truncated_ = degree < requested
        if self.truncated_:
            warnings.warn(f"regression degree lowered from {requested} to {degree} (condition {cond:.2e})",
                          DegreeTruncationWarning, stacklevel=2)
        self.coef_ = coef
        self.condition_ = cond
        self.n_samples_ = M
        resid = y2 - X @ coef
        dof = max(M - (degree + 1), 1)
        self.residual_var_ = np.sum(resid * resid, axis=0) / dof
        return self

    def predict(self, x):
        check_is_fitted(self, "coef_")
        x = check_array(x, ensure_2d=False, dtype=float).ravel()
        out = self._design(x, self.degree_used_) @ self.coef_
        return out[:, 0] if self.n_outputs_ is None else out

    def estimator_variance(self):
        """Expected mean squared error of the fitted values, ``sigma^2 p / M`` per output."""
        check_is_fitted(self, "coef_")
        return self.residual_var_ * (self.degree_used_ + 1) / self.n_samples_

    def fit_predict(self, x, y):
        return self.fit(x, y).predict(x)


class GaussQuadrature(BaseEstimator):
    """Gauss-Hermite conditional expectation of ``g(W(t_{j+1}))`` given ``W(t_j)``.

    Parameters
    ----------
    points : int
        Number of Gauss-Hermite nodes (at least 2).
    surface_degree : int
        Degree of the Chebyshev interpolant in ``W(t_j)`` that the backward
        solver uses to carry the solution between time levels.
    """

    def __init__(self, points=20, surface_degree=32):
        self.points = points
        self.surface_degree = surface_degree

    def _rule(self):
        if int(self.points) != self.points or self.points < 2:
            raise InvalidArgument(f"Gauss-Hermite points must be an integer >= 2, got {self.points}")
        nodes, weights = hermite_e.hermegauss(int(self.points))
        return nodes, weights / np.sqrt(2.0 * np.pi)

    def expect(self, x, g, delta, weight_by_increment=False):
        """``E[g(x + dW)]`` (or ``E[g(x + dW) dW]``) with ``dW ~ N(0, delta)``.

        ``g`` maps an array of Brownian values of shape ``(M,)`` to an
        array of shape ``(M,)`` or ``(M, n)``.
        """
        if not callable(g):
            raise InvalidArgument("GaussQuadrature needs the payload as a function of W(t_{j+1})",
                                  code="missing_function_handle")
        if delta is None or not delta > 0:
            raise InvalidArgument(f"GaussQuadrature needs a positive step, got {delta}")
        x = np.asarray(x, dtype=float).ravel()
        nodes, weights = self._rule()
        sd = np.sqrt(delta)
        total = None
        for node, weight in zip(nodes, weights):
            term = np.asarray(g(x + sd * node), dtype=float)
            w = weight * sd * node if weight_by_increment else weight
            total = w * term if total is None else total + w * term
        return total


def _as_estimator(estimator):
    if isinstance(estimator, (LeastSquares, GaussQuadrature)):
        return estimator
    raise InvalidArgument(f"unknown estimator {estimator!r}")


def cond_mean(estimator, x, y, delta=None):
    """Per-path estimate of ``E(y | W(t_j) = x)``.

    For ``LeastSquares`` ``y`` is an ``(M, n)`` array of samples. For
    ``GaussQuadrature`` ``y`` is a callable of ``W(t_{j+1})`` and ``delta``
    the step length.
    """
    estimator = _as_estimator(estimator)
    if isinstance(estimator, GaussQuadrature):
        return estimator.expect(x, y, delta)
    if callable(y):
        raise InvalidArgument("LeastSquares needs sampled payload values, not a function")
    return clone(estimator).fit_predict(x, y)


def cond_z(estimator, x, y_next, dW, delta):
    """Per-path ``E(y_next * dW | W(t_j)) / delta``, the discrete martingale density."""
    estimator = _as_estimator(estimator)
    if not delta > 0:
        raise InvalidArgument(f"step must be positive, got {delta}")
    if isinstance(estimator, GaussQuadrature):
        return estimator.expect(x, y_next, delta, weight_by_increment=True) / delta
    if callable(y_next):
        raise InvalidArgument("LeastSquares needs sampled payload values, not a function")
    y_next = np.asarray(y_next, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if len(dW) != len(y_next):
        raise InvalidArgument("increment vector and payload lengths differ")
    # control variate: E(E(y|x) dW | x) = 0, so only the residual carries the signal
    resid = y_next - clone(estimator).fit_predict(x, y_next)
    weighted = resid * (dW[:, None] if y_next.ndim == 2 else dW)
    return clone(estimator).fit_predict(x, weighted) / delta
