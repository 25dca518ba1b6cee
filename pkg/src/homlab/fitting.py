"""Damped least-squares fitting with a monotone chi-square trace.

A small Levenberg-Marquardt implementation tuned for the curve fits in
this package: trial steps are accepted only when they strictly lower
chi-square, so ``LMResult.chi2_trace`` is non-increasing and usable as a
convergence diagnostic.  The normal matrix is solved through an SVD so a
rank deficiency is reported as a SingularNormalMatrixError carrying the
null-space direction (the parameter combination the data cannot see)
instead of a numpy LinAlgError deep in a solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from homlab.errors import (
    InvalidParamsError,
    NonConvergenceError,
    SingularNormalMatrixError,
)

_LAMBDA_INIT = 1e-3
_LAMBDA_UP = 10.0
_LAMBDA_DOWN = 10.0
_LAMBDA_MAX = 1e14
_SINGULAR_RTOL = 1e-12


@dataclass
class LMResult:
    """Outcome of a Levenberg-Marquardt minimization.

    x: best parameters.  covariance: inverse of J^T J at the solution
    (pseudo-inverse when exactly determined), scaled assuming unit-weight
    residuals.  chi2_trace: chi-square after each accepted step, starting
    with the initial value; strictly decreasing after the first entry.
    """

    x: np.ndarray
    covariance: np.ndarray
    chi2: float
    n_iterations: int
    converged: bool
    chi2_trace: np.ndarray
    message: str


def finite_difference_jacobian(residual_fn, x, rel_step: float = 1e-6):
    """Central-difference Jacobian of a residual vector at x."""
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(residual_fn(x), dtype=float)
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(abs(x[j]), 1.0)
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (
            np.asarray(residual_fn(xp), dtype=float)
            - np.asarray(residual_fn(xm), dtype=float)
        ) / (2.0 * h)
    return jac


def _solve_normal(jtj, rhs, lam, param_names):
    """Solve (J^T J + lam diag(J^T J)) step = rhs via SVD.

    The undamped matrix is checked for rank deficiency first so a
    structurally blind parameter combination is reported even though the
    damped system would be formally invertible.
    """
    u, s, vt = np.linalg.svd(jtj)
    if s[0] == 0.0 or s[-1] <= s[0] * _SINGULAR_RTOL:
        direction = vt[-1]
        if param_names is not None:
            pieces = ", ".join(
                f"{c:+.3f}*{n}" for c, n in zip(direction, param_names)
            )
        else:
            pieces = np.array2string(direction, precision=3)
        raise SingularNormalMatrixError(
            "normal matrix is singular: the data do not constrain the "
            f"parameter combination ({pieces})",
            direction=direction,
        )
    diag = np.diag(jtj).copy()
    diag[diag <= 0.0] = 1.0
    damped = jtj + lam * np.diag(diag)
    return np.linalg.solve(damped, rhs)


def levenberg_marquardt(
    residual_fn,
    x0,
    jacobian=None,
    bounds=None,
    max_iterations: int = 500,
    chi2_rtol: float = 1e-9,
    step_atol: float = 1e-10,
    param_names=None,
):
    """Minimize sum(residual_fn(x)**2) from x0.

    residual_fn maps parameters to a residual vector (already weighted).
    jacobian, if given, maps parameters to d residual / d x; otherwise a
    central finite difference is used.  bounds is an optional
    (lower, upper) pair of arrays; trial points are clipped into the box.

    Returns LMResult.  Raises NonConvergenceError (with the partial result
    attached) when the iteration budget is exhausted before the relative
    chi-square improvement falls below chi2_rtol, and
    SingularNormalMatrixError when J^T J is rank deficient.
    """
    x = np.asarray(x0, dtype=float).copy()
    if x.ndim != 1 or x.size == 0:
        raise InvalidParamsError("x0 must be a non-empty 1-D array")
    if bounds is not None:
        lo = np.asarray(bounds[0], dtype=float)
        hi = np.asarray(bounds[1], dtype=float)
        if lo.shape != x.shape or hi.shape != x.shape:
            raise InvalidParamsError("bounds must match x0 in shape")
        if np.any(lo >= hi):
            raise InvalidParamsError("lower bounds must be < upper bounds")
        x = np.clip(x, lo, hi)

    def jac_at(xv):
        if jacobian is None:
            return finite_difference_jacobian(residual_fn, xv)
        return np.asarray(jacobian(xv), dtype=float)

    r = np.asarray(residual_fn(x), dtype=float)
    if r.size < x.size:
        raise InvalidParamsError(
            f"need at least as many residuals ({r.size}) as free "
            f"parameters ({x.size})"
        )
    chi2 = float(r @ r)
    trace = [chi2]
    lam = _LAMBDA_INIT
    converged = False
    message = "iteration budget exhausted"
    n_iter = 0

    while n_iter < max_iterations:
        n_iter += 1
        jac = jac_at(x)
        if not np.all(np.isfinite(jac)):
            raise NonConvergenceError(
                "Jacobian became non-finite during the fit",
                result=_finish(x, jac_at, chi2, n_iter, False, trace, "non-finite"),
            )
        jtj = jac.T @ jac
        rhs = jac.T @ r
        accepted = False
        while lam <= _LAMBDA_MAX:
            step = _solve_normal(jtj, rhs, lam, param_names)
            x_try = x - step
            if bounds is not None:
                x_try = np.clip(x_try, lo, hi)
            r_try = np.asarray(residual_fn(x_try), dtype=float)
            chi2_try = float(r_try @ r_try)
            if np.isfinite(chi2_try) and chi2_try < chi2:
                accepted = True
                step_norm = float(np.linalg.norm(x_try - x))
                gain = (chi2 - chi2_try) / max(chi2, 1e-300)
                x, r, chi2 = x_try, r_try, chi2_try
                trace.append(chi2)
                lam = max(lam / _LAMBDA_DOWN, 1e-12)
                if gain < chi2_rtol or step_norm < step_atol:
                    converged = True
                    message = "relative chi-square decrease below tolerance"
                break
            lam *= _LAMBDA_UP
        if not accepted:
            # No downhill step exists at any damping: stationary point.
            converged = True
            message = "no downhill step found (stationary point)"
            break
        if converged:
            break

    result = _finish(x, jac_at, chi2, n_iter, converged, trace, message)
    if not converged:
        raise NonConvergenceError(
            f"fit did not converge within {max_iterations} iterations",
            result=result,
        )
    return result


def _finish(x, jac_at, chi2, n_iter, converged, trace, message):
    jac = jac_at(x)
    jtj = jac.T @ jac
    u, s, vt = np.linalg.svd(jtj)
    s_inv = np.where(s > s[0] * _SINGULAR_RTOL, 1.0 / np.maximum(s, 1e-300), 0.0)
    cov = (vt.T * s_inv) @ vt
    return LMResult(
        x=x.copy(),
        covariance=cov,
        chi2=chi2,
        n_iterations=n_iter,
        converged=converged,
        chi2_trace=np.asarray(trace, dtype=float),
        message=message,
    )
