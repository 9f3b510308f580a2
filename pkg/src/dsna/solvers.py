"""Weighted linear SVM/SVR solvers used as cost-sensitive node-splitting functions.

Both problems are smooth convex minimizations over an augmented parameter
vector [w, b] (the bias coordinate is excluded from the ridge penalty):

    svm:  ||w||^2 + C * sum_i weight_i * max(0, 1 - z_i (w.x_i + b))^2
    svr:  ||w||^2 + C * sum_i weight_i * max(0, |y_i - (w.x_i + b)| - margin)^2

They are solved by damped generalized-Newton steps with Armijo backtracking
(gradient-step fallback), stopping when the gradient norm drops below
1e-6 * (1 + objective) or after 2000 accepted steps. The accepted-step
objective trace is non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRAD_TOL = 1e-6
MAX_ITERS = 2000
ARMIJO_C = 1e-4


class DegenerateInput(ValueError):
    """Solver input admits no meaningful fit (e.g. all labels on one side)."""


@dataclass(frozen=True)
class LinearModel:
    """Linear decision function w.x + b over the features used at a node."""

    weights: np.ndarray
    bias: float

    def decision(self, X):
        X = np.asarray(X, dtype=np.float64)
        return X @ self.weights + self.bias


@dataclass(frozen=True)
class SolveDiagnostics:
    objective: float
    iterations: int
    grad_norm: float
    trace: tuple  # objective after every accepted step, initial point first


def cost_weight(p):
    """Reciprocal decreasing cost (1 - p) / p of a cluster/bin proportion p in (0, 1]."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"proportion must be in (0, 1], got {p}")
    return (1.0 - p) / p


def svm_objective_and_grad(wb, X, z, sample_weights, C):
    """Objective and analytic gradient of the weighted squared-hinge SVM."""
    w, b = wb[:-1], wb[-1]
    margins = 1.0 - z * (X @ w + b)
    active = margins > 0.0
    act_m = np.where(active, margins, 0.0)
    obj = float(w @ w + C * np.sum(sample_weights * act_m**2))
    coeff = sample_weights * z * act_m  # zero outside the active set
    grad = np.empty_like(wb)
    grad[:-1] = 2.0 * w - 2.0 * C * (X.T @ coeff)
    grad[-1] = -2.0 * C * np.sum(coeff)
    return obj, grad


def svr_objective_and_grad(wb, X, y, sample_weights, C, margin):
    """Objective and analytic gradient of the weighted squared margin-insensitive SVR."""
    w, b = wb[:-1], wb[-1]
    resid = y - (X @ w + b)
    excess = np.abs(resid) - margin
    active = excess > 0.0
    act_e = np.where(active, excess, 0.0)
    obj = float(w @ w + C * np.sum(sample_weights * act_e**2))
    coeff = sample_weights * np.sign(resid) * act_e
    grad = np.empty_like(wb)
    grad[:-1] = 2.0 * w - 2.0 * C * (X.T @ coeff)
    grad[-1] = -2.0 * C * np.sum(coeff)
    return obj, grad


def _minimize(fun_grad, hess, x0):
    """Damped Newton with Armijo backtracking; monotone in the objective."""
    x = np.asarray(x0, dtype=np.float64).copy()
    obj, grad = fun_grad(x)
    trace = [obj]
    iterations = 0
    ridge = 1e-10
    for _ in range(MAX_ITERS):
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < GRAD_TOL * (1.0 + obj):
            break
        H = hess(x)
        try:
            step = np.linalg.solve(H + ridge * np.eye(H.shape[0]), grad)
        except np.linalg.LinAlgError:
            step = grad
        direction = -step
        slope = float(grad @ direction)
        if slope >= 0.0:  # not a descent direction, fall back to steepest descent
            direction = -grad
            slope = -grad_norm**2
        t = 1.0
        while t > 1e-14:
            new_obj, new_grad = fun_grad(x + t * direction)
            if new_obj <= obj + ARMIJO_C * t * slope:
                break
            t *= 0.5
        else:
            break  # no improving step representable, accept current point
        if new_obj > obj:
            break
        x = x + t * direction
        obj, grad = new_obj, new_grad
        trace.append(obj)
        iterations += 1
    diag = SolveDiagnostics(
        objective=obj,
        iterations=iterations,
        grad_norm=float(np.linalg.norm(grad)),
        trace=tuple(trace),
    )
    return x, diag


def _validate_xw(X, sample_weights, C):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    w = np.asarray(sample_weights, dtype=np.float64)
    if w.shape != (X.shape[0],):
        raise ValueError("sample_weights must align with the sample rows")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("sample_weights must be finite and non-negative")
    if C <= 0:
        raise ValueError("C must be > 0")
    return X, w


def fit_weighted_svm(X, z, sample_weights, C):
    """Fit the weighted squared-hinge linear SVM; returns (LinearModel, diagnostics).

    Raises DegenerateInput when all signs are identical (the caller is
    expected to fall back to a simpler split).
    """
    X, wts = _validate_xw(X, sample_weights, C)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (X.shape[0],) or not np.all(np.abs(z) == 1.0):
        raise ValueError("z must be a vector of +/-1 signs, one per sample")
    if np.all(z == z[0]):
        raise DegenerateInput("all samples carry the same sign")

    d = X.shape[1]
    penalty = 2.0 * np.diag(np.append(np.ones(d), 0.0))
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])

    def fun_grad(wb):
        return svm_objective_and_grad(wb, X, z, wts, C)

    def hess(wb):
        margins = 1.0 - z * (Xa @ wb)
        active = wts * (margins > 0.0)
        return penalty + 2.0 * C * (Xa.T * active) @ Xa

    wb, diag = _minimize(fun_grad, hess, np.zeros(d + 1))
    return LinearModel(weights=wb[:-1], bias=float(wb[-1])), diag


def fit_weighted_svr(X, y, sample_weights, C, margin):
    """Fit the weighted squared margin-insensitive linear SVR."""
    X, wts = _validate_xw(X, sample_weights, C)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValueError("y must align with the sample rows")
    if X.shape[0] < 2:
        raise ValueError("SVR needs at least 2 samples")
    if margin < 0:
        raise ValueError("margin must be >= 0")

    d = X.shape[1]
    penalty = 2.0 * np.diag(np.append(np.ones(d), 0.0))
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])

    def fun_grad(wb):
        return svr_objective_and_grad(wb, X, y, wts, C, margin)

    def hess(wb):
        resid = y - Xa @ wb
        active = wts * (np.abs(resid) > margin)
        return penalty + 2.0 * C * (Xa.T * active) @ Xa

    wb, diag = _minimize(fun_grad, hess, np.zeros(d + 1))
    return LinearModel(weights=wb[:-1], bias=float(wb[-1])), diag
