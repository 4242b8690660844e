"""Damped Newton and Broyden root-finding for square nonlinear systems."""
import os
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from mestim.errors import NoConvergence, SingularJacobian
from mestim.numdiff import StepRule, jacobian_central

#: pivots smaller than this times the largest entry of the matrix are singular
PIVOT_THRESHOLD = 1e-13
MIN_DAMPING = 2.0 ** -10
#: broyden steps must beat the worst of this many recent residual norms
BROYDEN_WINDOW = 10
TOL_ENV_VAR = "SANDWICH_SOLVER_TOL"


def default_tolerance():
    """Solver tolerance, honouring the ``SANDWICH_SOLVER_TOL`` override."""
    value = os.environ.get(TOL_ENV_VAR)
    if value is None or value.strip() == "":
        return 1e-9
    tol = float(value)
    if not tol > 0:
        raise ValueError(f"{TOL_ENV_VAR} must be positive, got {value!r}")
    return tol


@dataclass(frozen=True)
class SolverConfig:
    method: str = "newton"
    tol: float = field(default_factory=default_tolerance)
    max_iter: int = 200
    step_rule: StepRule = field(default_factory=StepRule)
    damping: bool = True

    def __post_init__(self):
        if self.method not in ("newton", "broyden"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")


@dataclass(frozen=True)
class SolveReport:
    root: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    method: str = "newton"
    history: tuple = ()

    def as_dict(self):
        return {
            "root": [float(v) for v in self.root],
            "iterations": int(self.iterations),
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "method": self.method,
            "history": [float(v) for v in self.history],
        }


def lu_solve_checked(matrix, rhs):
    """Solve ``matrix @ x = rhs`` by pivoted LU, refusing near-singular input."""
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise SingularJacobian("matrix contains non-finite entries")
    scale = np.max(np.abs(matrix)) if matrix.size else 0.0
    if scale == 0.0:
        raise SingularJacobian("matrix is identically zero")
    with warnings.catch_warnings():
        # singularity is judged by the pivot test below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(matrix, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if np.min(pivots) < PIVOT_THRESHOLD * scale:
        raise SingularJacobian(
            f"smallest LU pivot {np.min(pivots):.3e} is below "
            f"{PIVOT_THRESHOLD:g} x {scale:.3e}"
        )
    return lu_solve((lu, piv), rhs, check_finite=False)


def _norm(v):
    return float(np.max(np.abs(v))) if v.size else 0.0


def _evaluate(f, x):
    fx = np.asarray(f(x), dtype=float).ravel()
    if fx.shape != x.shape:
        raise ValueError(
            f"function returned {fx.size} values for {x.size} unknowns"
        )
    return fx


def _line_search(f, x, fx, step, damping, reference=None):
    """Backtrack along ``step`` until the max-norm residual decreases.

    Returns ``(x_new, f_new, lam)`` where ``lam`` is the accepted damping
    factor, or ``None`` when no tried factor decreased the residual. In that
    case the full step is taken anyway if it is finite (non-monotone
    fallback), otherwise the point does not move. ``reference`` replaces
    ``max|f(x)|`` as the level to beat when given.
    """
    current = _norm(fx) if reference is None else reference
    full_x = x + step
    full_f = _evaluate(f, full_x)
    full_ok = bool(np.all(np.isfinite(full_f)))
    if full_ok and _norm(full_f) < current:
        return full_x, full_f, 1.0
    if damping:
        lam = 0.5
        while lam >= MIN_DAMPING:
            x_new = x + lam * step
            f_new = _evaluate(f, x_new)
            if np.all(np.isfinite(f_new)) and _norm(f_new) < current:
                return x_new, f_new, lam
            lam *= 0.5
    if full_ok:
        return full_x, full_f, None
    return x, fx, None


def newton_solve(f, x0, cfg=None):
    """Find ``x`` with ``f(x) = 0`` by damped Newton iterations.

    The Jacobian is recomputed by central differences at every iterate.
    Stops as soon as ``max|f(x)| <= cfg.tol``.

    Raises
    ------
    SingularJacobian
        If a Newton system cannot be solved.
    NoConvergence
        After ``cfg.max_iter`` iterations without meeting the tolerance.
    """
    cfg = cfg or SolverConfig()
    x = np.array(x0, dtype=float).ravel()
    fx = _evaluate(f, x)
    best_x, best_norm = x.copy(), _norm(fx)
    history = []
    for it in range(cfg.max_iter + 1):
        norm = _norm(fx)
        history.append(norm)
        if norm < best_norm:
            best_x, best_norm = x.copy(), norm
        if norm <= cfg.tol:
            return SolveReport(x, it, norm, True, "newton", tuple(history))
        if it == cfg.max_iter:
            break
        jac = jacobian_central(f, x, cfg.step_rule)
        step = lu_solve_checked(jac, -fx)
        x, fx, _ = _line_search(f, x, fx, step, cfg.damping)
    raise NoConvergence(
        f"newton did not reach tol={cfg.tol:g} in {cfg.max_iter} iterations "
        f"(best residual {best_norm:.3e})",
        best=best_x, residual_norm=best_norm, iterations=cfg.max_iter,
    )


def broyden_solve(f, x0, cfg=None):
    """Find ``x`` with ``f(x) = 0`` using Broyden's good update.

    The initial Jacobian comes from central differences. Steps are damped
    against the largest of the last few residual norms rather than the
    current one, which lets the iterates follow curved valleys. When the
    step from an updated approximation needs damping, the approximation is
    discarded and the Jacobian is re-differenced at the current point.
    """
    cfg = cfg or SolverConfig(method="broyden")
    x = np.array(x0, dtype=float).ravel()
    fx = _evaluate(f, x)
    jac = jacobian_central(f, x, cfg.step_rule)
    fresh = True
    best_x, best_norm = x.copy(), _norm(fx)
    recent = deque(maxlen=BROYDEN_WINDOW)
    history = []
    for it in range(cfg.max_iter + 1):
        norm = _norm(fx)
        recent.append(norm)
        history.append(norm)
        if norm < best_norm:
            best_x, best_norm = x.copy(), norm
        if norm <= cfg.tol:
            return SolveReport(x, it, norm, True, "broyden", tuple(history))
        if it == cfg.max_iter:
            break
        step = lu_solve_checked(jac, -fx)
        x_new, f_new, lam = _line_search(
            f, x, fx, step, cfg.damping, reference=max(recent)
        )
        if lam != 1.0 and not fresh:
            # secant model is poor here: re-difference and retry
            jac = jacobian_central(f, x, cfg.step_rule)
            fresh = True
            continue
        fresh = False
        s = x_new - x
        y = f_new - fx
        ss = float(s @ s)
        if ss > 0:
            jac = jac + np.outer(y - jac @ s, s) / ss
        x, fx = x_new, f_new
    raise NoConvergence(
        f"broyden did not reach tol={cfg.tol:g} in {cfg.max_iter} iterations "
        f"(best residual {best_norm:.3e})",
        best=best_x, residual_norm=best_norm, iterations=cfg.max_iter,
    )


SOLVERS = {"newton": newton_solve, "broyden": broyden_solve}


def solve(f, x0, cfg=None):
    cfg = cfg or SolverConfig()
    return SOLVERS[cfg.method](f, x0, cfg)
