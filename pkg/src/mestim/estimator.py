"""Solve stacked estimating equations and compute the sandwich variance."""
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from mestim.errors import (DimensionMismatch, MEstimationError, NoConvergence,
                           NonFiniteEvaluation, SingularBread, SingularJacobian)
from mestim.numdiff import StepRule, jacobian_central
from mestim.rootfind import SolveReport, SolverConfig, lu_solve_checked, solve


class EstimatingFunction:
    """Per-observation estimating equations for a block of parameters.

    Parameters
    ----------
    func : callable
        ``func(theta)`` returns the ``(arity, n_obs)`` matrix whose column
        ``i`` is the contribution of observation ``i``. When ``depends_on``
        is given the block reads other parameters of a stacked system and
        ``func`` is instead called as ``func(own, full)`` with its own slice
        and the complete parameter vector.
    arity : int
        Number of equations, equal to the number of parameters owned.
    n_obs : int
        Number of observations.
    depends_on : sequence of slice, optional
        Index ranges of the full stacked vector this block reads.
    init : array_like or callable, optional
        Default starting values. A callable receives the starting values of
        every preceding block in a stack (concatenated) and returns this
        block's.
    names : sequence of str, optional
        Parameter labels used in reports.
    """

    def __init__(self, func, arity, n_obs, depends_on=None, init=None,
                 names=None, family="custom"):
        self.func = func
        self.arity = int(arity)
        self.n_obs = int(n_obs)
        self.depends_on = tuple(depends_on or ())
        self.init = init
        self.family = family
        if names is None:
            names = [f"theta{j}" for j in range(self.arity)]
        if len(names) != self.arity:
            raise DimensionMismatch(
                f"{len(names)} names given for {self.arity} parameters"
            )
        self.names = list(names)

    def evaluate(self, own, full=None):
        """Contributions for this block's parameters ``own``.

        ``full`` is the complete stacked parameter vector, required for
        blocks that read parameters of other blocks.
        """
        own = np.asarray(own, dtype=float)
        if own.shape != (self.arity,):
            raise DimensionMismatch(
                f"expected {self.arity} parameters, got shape {own.shape}"
            )
        if self.depends_on:
            if full is None:
                raise DimensionMismatch(
                    f"{self.family} block reads other parameters and can only "
                    "be evaluated inside a stack"
                )
            out = self.func(own, np.asarray(full, dtype=float))
        else:
            out = self.func(own)
        out = np.asarray(out, dtype=float)
        if out.ndim == 1 and self.arity == 1:
            out = out[np.newaxis, :]
        if out.shape != (self.arity, self.n_obs):
            raise DimensionMismatch(
                f"estimating function returned shape {out.shape}, expected "
                f"{(self.arity, self.n_obs)}"
            )
        return out

    def __call__(self, theta):
        return self.evaluate(theta, None if self.depends_on else theta)

    def summed(self, theta):
        return self(theta).sum(axis=1)

    def starting_values(self, prefix=None):
        """Default initial values, zeros when the family declares none."""
        if self.init is None:
            return np.zeros(self.arity)
        if callable(self.init):
            prefix = np.zeros(0) if prefix is None else np.asarray(prefix)
            return np.asarray(self.init(prefix), dtype=float).ravel()
        return np.asarray(self.init, dtype=float).ravel()


@dataclass(frozen=True)
class MEstimationResult:
    theta_hat: np.ndarray
    bread: np.ndarray
    filling: np.ndarray
    asymptotic_variance: np.ndarray
    covariance: np.ndarray
    report: SolveReport
    n_obs: int
    names: tuple = ()

    @property
    def standard_errors(self):
        return np.sqrt(np.diag(self.covariance))

    def confidence_intervals(self, level=0.95):
        return wald_ci(self, level)


def compute_bread(ef, theta, rule=None):
    """Bread matrix ``-(1/n) d/dtheta sum_i psi(Z_i; theta)``."""
    theta = np.asarray(theta, dtype=float)
    _check_length(ef, theta)
    jac = jacobian_central(ef.summed, theta, rule or StepRule())
    return -jac / ef.n_obs


def compute_filling(ef, theta):
    """Filling (meat) matrix ``(1/n) sum_i psi_i psi_i^T``."""
    theta = np.asarray(theta, dtype=float)
    _check_length(ef, theta)
    m = ef(theta)
    if not np.all(np.isfinite(m)):
        raise NonFiniteEvaluation("estimating function is not finite at theta")
    return (m @ m.T) / ef.n_obs


def sandwich(bread, filling, n):
    """Return ``(V, V / n)`` with ``V = B^-1 F B^-T``.

    Both outputs are symmetrized.
    """
    bread = np.atleast_2d(np.asarray(bread, dtype=float))
    filling = np.atleast_2d(np.asarray(filling, dtype=float))
    try:
        bread_inv = lu_solve_checked(bread, np.eye(bread.shape[0]))
    except SingularJacobian as err:
        raise SingularBread(f"bread matrix is singular: {err}") from None
    v = bread_inv @ filling @ bread_inv.T
    v = (v + v.T) / 2.0
    return v, v / n


def wald_ci(result, level=0.95):
    """Wald intervals ``theta_j +/- z * se_j`` from the finite-sample covariance.

    Returns an array of shape ``(v, 2)`` holding lower and upper limits.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie strictly between 0 and 1")
    z = norm.ppf(1.0 - (1.0 - level) / 2.0)
    se = np.sqrt(np.clip(np.diag(result.covariance), 0.0, None))
    theta = np.asarray(result.theta_hat)
    return np.column_stack([theta - z * se, theta + z * se])


def polish(ef, report, rule=None):
    """One Newton correction from a converged root, kept only if it helps.

    The solver's last Jacobian was taken at the previous iterate; the
    Jacobian at the root itself (needed for the bread anyway) usually removes
    the remaining sub-tolerance error, e.g. making the mean of integers exact.
    """
    x = report.root
    fx = ef.summed(x)
    try:
        step = lu_solve_checked(jacobian_central(ef.summed, x, rule), fx)
        x_new = x - step
        f_new = ef.summed(x_new)
    except (MEstimationError, FloatingPointError):
        return report
    norm_new = float(np.max(np.abs(f_new)))
    if not (np.all(np.isfinite(x_new)) and norm_new < np.max(np.abs(fx))):
        return report
    return replace(report, root=x_new, residual_norm=norm_new,
                   history=tuple(report.history) + (norm_new,))


def estimate(ef, init=None, cfg=None, solver=None):
    """Fit an M-estimator.

    Parameters
    ----------
    ef : EstimatingFunction
        Possibly stacked estimating equations.
    init : array_like, optional
        Starting values; the family defaults are used when omitted.
    cfg : SolverConfig, optional
    solver : callable, optional
        Replacement root-finder with signature ``solver(f, x0) -> root``.
        Its answer is still checked against ``cfg.tol`` and
        :class:`NoConvergence` is raised when it misses.

    Returns
    -------
    MEstimationResult
    """
    cfg = cfg or SolverConfig()
    if ef.n_obs < 2:
        raise DimensionMismatch("at least two observations are required")
    x0 = ef.starting_values() if init is None else np.asarray(init, float).ravel()
    _check_length(ef, x0)

    if solver is None:
        report = solve(ef.summed, x0, cfg)
    else:
        root = np.asarray(solver(ef.summed, x0), dtype=float).ravel()
        _check_length(ef, root)
        resid = float(np.max(np.abs(ef.summed(root))))
        if not resid <= cfg.tol:
            raise NoConvergence(
                f"user solver returned a point with residual {resid:.3e} "
                f"> tol={cfg.tol:g}", best=root, residual_norm=resid,
            )
        report = SolveReport(root, 0, resid, True, "user")

    report = polish(ef, report, cfg.step_rule)
    theta = report.root
    bread = compute_bread(ef, theta, cfg.step_rule)
    filling = compute_filling(ef, theta)
    asym, cov = sandwich(bread, filling, ef.n_obs)
    return MEstimationResult(
        theta_hat=theta, bread=bread, filling=filling,
        asymptotic_variance=asym, covariance=cov, report=report,
        n_obs=ef.n_obs, names=tuple(ef.names),
    )


def _check_length(ef, theta):
    if theta.shape != (ef.arity,):
        raise DimensionMismatch(
            f"parameter vector has shape {theta.shape}, expected ({ef.arity},)"
        )
