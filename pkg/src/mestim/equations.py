"""Built-in estimating-equation families and stacking.

Every builder returns an :class:`~mestim.estimator.EstimatingFunction`
holding its own copy of the data. Blocks that are transformations of
another block's parameters (effective concentrations, weighted means) take
the index range of that block in the final stacked vector and can only be
evaluated through :func:`stack`.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr
from scipy.special import expit

from mestim.errors import (DegenerateWeights, DimensionMismatch, DomainError,
                           RankDeficientDesign)
from mestim.estimator import EstimatingFunction

#: Huber's tuning constant
HUBER_K = 1.345
_MAX_EXP = np.log(np.finfo(float).max)


@dataclass(frozen=True)
class ColumnBinding:
    """Which dataset columns feed an equation block."""

    outcome: str = None
    regressors: tuple = ()
    intercept: bool = True
    dose: str = None
    sample: str = None
    biomarkers: tuple = ()


@dataclass(frozen=True)
class BlockLayout:
    """Ordered ``(family, index range, binding)`` triples of a stacked system."""

    blocks: tuple = field(default_factory=tuple)

    @classmethod
    def contiguous(cls, arities, families=None, bindings=None):
        start, blocks = 0, []
        for j, a in enumerate(arities):
            fam = families[j] if families else "custom"
            bind = bindings[j] if bindings else None
            blocks.append((fam, range(start, start + a), bind))
            start += a
        return cls(tuple(blocks))

    @property
    def size(self):
        return self.blocks[-1][1].stop if self.blocks else 0

    def validate(self):
        expected = 0
        for family, rng, _ in self.blocks:
            if rng.step != 1 or rng.start != expected or len(rng) == 0:
                raise DimensionMismatch(
                    f"block {family!r} has range {rng.start}..{rng.stop}, "
                    f"expected a non-empty range starting at {expected}"
                )
            expected = rng.stop


def _as_slice(rng):
    if isinstance(rng, slice):
        return rng
    if isinstance(rng, range):
        return slice(rng.start, rng.stop)
    start, stop = rng
    return slice(int(start), int(stop))


def _design(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    if X.ndim != 2:
        raise DimensionMismatch("design matrix must be two-dimensional")
    return X


def check_full_rank(X):
    """Raise :class:`RankDeficientDesign` unless ``X`` has full column rank.

    Uses a column-pivoted QR factorization.
    """
    X = _design(X)
    n, p = X.shape
    if n < p:
        raise RankDeficientDesign(f"{n} observations for {p} regressors")
    if not np.all(np.isfinite(X)):
        raise RankDeficientDesign("design matrix contains non-finite values")
    r = qr(X, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < p:
        raise RankDeficientDesign(
            f"design matrix has rank {rank} but {p} columns"
        )
    return X


def add_intercept(X):
    X = _design(X)
    return np.column_stack([np.ones(X.shape[0]), X])


def ee_mean(y):
    y = np.array(y, dtype=float).ravel()

    def psi(theta):
        return (y - theta[0])[np.newaxis, :]

    return EstimatingFunction(psi, 1, y.size, names=["mean"], family="mean")


def huber_g(w, k=HUBER_K):
    """Huber's clipping function: ``w`` inside ``[-k, k]``, ``sign(w) k`` outside."""
    if not k > 0:
        raise DomainError("k must be positive")
    return np.clip(w, -k, k)


def ee_robust_location(y, k=HUBER_K):
    y = np.array(y, dtype=float).ravel()
    if not k > 0:
        raise DomainError("k must be positive")

    def psi(theta):
        return huber_g(y - theta[0], k)[np.newaxis, :]

    return EstimatingFunction(psi, 1, y.size, init=[np.median(y)],
                              names=["mean"], family="robust_location")


def _regression_names(p, names):
    return list(names) if names is not None else [f"x{j}" for j in range(p)]


def ee_linear_regression(X, y, names=None):
    """Least-squares normal equations ``(y_i - x_i'a) x_i``."""
    X = check_full_rank(np.array(X, dtype=float))
    y = np.array(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise DimensionMismatch("X and y have different numbers of rows")

    def psi(theta):
        resid = y - X @ theta
        return (X * resid[:, np.newaxis]).T

    return EstimatingFunction(psi, X.shape[1], y.size,
                              names=_regression_names(X.shape[1], names),
                              family="linear")


def ee_robust_regression(X, y, k=HUBER_K, names=None):
    """Huber regression equations ``g_k(y_i - x_i'a) x_i``.

    Starts from the least-squares fit: from zero, every residual can be
    clipped at once, which leaves the summed equations flat.
    """
    if not k > 0:
        raise DomainError("k must be positive")
    X = check_full_rank(np.array(X, dtype=float))
    y = np.array(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise DimensionMismatch("X and y have different numbers of rows")
    start = np.linalg.lstsq(X, y, rcond=None)[0]

    def psi(theta):
        resid = huber_g(y - X @ theta, k)
        return (X * resid[:, np.newaxis]).T

    return EstimatingFunction(psi, X.shape[1], y.size, init=start,
                              names=_regression_names(X.shape[1], names),
                              family="robust_linear")


def ee_logistic_regression(X, s, names=None):
    """Logistic score equations ``(s_i - expit(x_i'b)) x_i``."""
    X = check_full_rank(np.array(X, dtype=float))
    s = np.array(s, dtype=float).ravel()
    if s.size != X.shape[0]:
        raise DimensionMismatch("X and outcome have different numbers of rows")
    if not np.all((s == 0) | (s == 1)):
        raise DomainError("logistic outcome must be coded 0/1")
    if s.min() == s.max():
        raise DomainError("logistic outcome has only one class")

    def psi(theta):
        resid = s - expit(X @ theta)
        return (X * resid[:, np.newaxis]).T

    return EstimatingFunction(psi, X.shape[1], s.size,
                              names=_regression_names(X.shape[1], names),
                              family="logistic")


def inverse_odds_weight(x_row, beta):
    """``(1 - expit(x'b)) / expit(x'b)``, computed as ``exp(-x'b)``."""
    lin = np.dot(np.asarray(x_row, dtype=float), np.asarray(beta, dtype=float))
    return np.exp(np.clip(-lin, None, _MAX_EXP))


def _loglogistic_parts(dose, gamma):
    gamma = np.asarray(gamma, dtype=float)
    if gamma.size not in (3, 4):
        raise DimensionMismatch("log-logistic models take 3 or 4 parameters")
    g1, g2, g3 = gamma[:3]
    g4 = gamma[3] if gamma.size == 4 else 0.0
    if not g1 > 0:
        raise DomainError("half-effect dose gamma1 must be positive")
    dose = np.asarray(dose, dtype=float)
    if np.any(dose < 0):
        raise DomainError("doses must be non-negative")
    zero = dose == 0
    with np.errstate(divide="ignore"):
        logratio = np.where(zero, 0.0, np.log(np.where(zero, 1.0, dose)) - np.log(g1))
    t = g2 * logratio
    if g2 > 0:
        t = np.where(zero, -np.inf, t)
    elif g2 < 0:
        t = np.where(zero, np.inf, t)
    lower_share = expit(t)
    upper_share = expit(-t)
    mean = g4 + (g3 - g4) * upper_share
    dmean_dt = -(g3 - g4) * lower_share * upper_share
    grad = [dmean_dt * (-g2 / g1), np.where(zero, 0.0, dmean_dt * logratio),
            upper_share]
    if gamma.size == 4:
        grad.append(lower_share)
    return mean, np.vstack(np.broadcast_arrays(*grad))


def loglogistic_mean(dose, gamma):
    """Log-logistic dose-response mean and its gradient.

    ``f(D) = g4 + (g3 - g4) / (1 + exp(g2 (log D - log g1)))`` with ``g4 = 0``
    for the three-parameter model. Zero doses take the limiting value.

    Returns
    -------
    mean : ndarray
        Same shape as ``dose``.
    grad : ndarray
        ``(len(gamma),) + dose.shape`` partial derivatives.
    """
    return _loglogistic_parts(dose, gamma)


def loglogistic_start(dose, response, n_params=3):
    """Starting values for a log-logistic fit.

    Limits come from the response range (zero lower limit for three
    parameters). Half-effect dose and steepness come from regressing
    ``log((upper - R) / (R - lower))`` on ``log D`` over positive doses;
    when that is impossible the median positive dose and a unit slope are
    used.
    """
    dose = np.asarray(dose, dtype=float)
    response = np.asarray(response, dtype=float)
    upper = response.max()
    lower = response.min() if n_params == 4 else 0.0
    positive = dose > 0
    g1 = float(np.median(dose[positive])) if positive.any() else 1.0
    g2 = 1.0
    span = upper - lower
    if span > 0:
        # pull the limits outward so every response maps to a finite logit
        hi = upper + 0.05 * span
        lo = lower - 0.05 * span if n_params == 4 else lower
        use = positive & (response > lo) & (response < hi)
        if np.unique(dose[use]).size >= 2:
            z = np.log((hi - response[use]) / (response[use] - lo))
            slope, icept = np.polyfit(np.log(dose[use]), z, 1)
            if slope > 0:
                g1, g2 = float(np.exp(-icept / slope)), float(slope)
    start = [g1, g2, upper]
    if n_params == 4:
        start.append(lower)
    return np.array(start)


def ee_loglogistic(dose, response, n_params=3):
    """Nonlinear least-squares equations ``(R_i - f(D_i)) grad f(D_i)``."""
    if n_params not in (3, 4):
        raise DomainError("n_params must be 3 or 4")
    dose = np.array(dose, dtype=float).ravel()
    response = np.array(response, dtype=float).ravel()
    if dose.size != response.size:
        raise DimensionMismatch("dose and response lengths differ")
    if np.any(dose < 0):
        raise DomainError("doses must be non-negative")
    if not np.all(np.isfinite(response)):
        raise DomainError("responses must be finite")
    start = loglogistic_start(dose, response, n_params)

    def psi(theta):
        if not theta[0] > 0:
            # outside the domain: signal the solver to backtrack
            return np.full((n_params, dose.size), np.nan)
        mean, grad = _loglogistic_parts(dose, theta)
        return grad * (response - mean)

    names = ["gamma1", "gamma2", "gamma3", "gamma4"][:n_params]
    return EstimatingFunction(psi, n_params, dose.size, init=start, names=names,
                              family=f"loglogistic{n_params}")


def effective_concentration(gamma, delta):
    """Dose giving ``delta`` percent of the drop from upper to lower limit."""
    if not 0 < delta < 100:
        raise DomainError("delta must lie strictly between 0 and 100")
    return gamma[0] * (delta / (100.0 - delta)) ** (1.0 / gamma[1])


def ee_effective_concentration(delta, pl_block, n_obs):
    """Equation tying ``EC_delta`` to a fitted log-logistic block.

    The contribution is identical for every observation.
    """
    if not 0 < delta < 100:
        raise DomainError("delta must lie strictly between 0 and 100")
    pl = _as_slice(pl_block)
    n_obs = int(n_obs)

    def psi(own, full):
        value = own[0] - effective_concentration(full[pl], delta)
        return np.full((1, n_obs), value)

    def init(prefix):
        return [effective_concentration(prefix[pl], delta)]

    return EstimatingFunction(psi, 1, n_obs, depends_on=[pl], init=init,
                              names=[f"EC{delta:g}"],
                              family="effective_concentration")


def weighted_means(log_values, s, X, beta):
    """Inverse-odds weighted means of each column over the ``s == 1`` rows."""
    sel = np.asarray(s) == 1
    w = inverse_odds_weight(np.asarray(X)[sel], beta)
    total = w.sum()
    if not total > 0:
        raise DegenerateWeights("weights of the S=1 rows sum to zero")
    return (w[:, np.newaxis] * np.asarray(log_values)[sel]).sum(axis=0) / total


def ee_weighted_means(biomarkers, s, X, beta_block, names=None):
    """Inverse-odds weighted means of log-transformed biomarkers.

    Parameters
    ----------
    biomarkers : array_like
        ``(n, m)`` raw biomarker values. Only rows with ``s == 1`` are used
        and these must be positive; other rows may hold any finite filler.
    s : array_like
        Sample indicator, 1 for the sample the biomarkers were measured in.
    X : array_like
        Design of the weight model (same columns as its logistic block).
    beta_block : slice or range
        Location of the logistic coefficients in the stacked vector.
    """
    B = np.array(biomarkers, dtype=float)
    if B.ndim == 1:
        B = B[:, np.newaxis]
    s = np.array(s, dtype=float).ravel()
    X = _design(np.array(X, dtype=float))
    n, m = B.shape
    if s.size != n or X.shape[0] != n:
        raise DimensionMismatch("biomarkers, sample indicator and X differ in length")
    if not np.all((s == 0) | (s == 1)):
        raise DomainError("sample indicator must be coded 0/1")
    sel = s == 1
    if not sel.any():
        raise DomainError("no rows with S=1")
    if np.any(~np.isfinite(B[sel])) or np.any(B[sel] <= 0):
        raise DomainError("biomarker values must be positive before the log transform")
    logb = np.zeros_like(B)
    logb[sel] = np.log(B[sel])
    beta_sl = _as_slice(beta_block)
    if names is None:
        names = [f"mu{j + 1}" for j in range(m)]

    def psi(own, full):
        w = np.where(sel, inverse_odds_weight(X, full[beta_sl]), 0.0)
        return (w[:, np.newaxis] * (logb - own[np.newaxis, :])).T

    def init(prefix):
        return weighted_means(logb, s, X, prefix[beta_sl])

    return EstimatingFunction(psi, m, n, depends_on=[beta_sl], init=init,
                              names=list(names),
                              family="inverse_odds_weighted_mean")


def stack(blocks, layout=None):
    """Concatenate equation blocks over one shared parameter vector.

    Parameters
    ----------
    blocks : sequence of EstimatingFunction
    layout : BlockLayout, optional
        Defaults to consecutive ranges in block order.

    Returns
    -------
    EstimatingFunction
        Evaluates to the row-wise concatenation of the block matrices.
    """
    blocks = list(blocks)
    if not blocks:
        raise DimensionMismatch("nothing to stack")
    if layout is None:
        layout = BlockLayout.contiguous([b.arity for b in blocks],
                                        [b.family for b in blocks])
    layout.validate()
    if len(layout.blocks) != len(blocks):
        raise DimensionMismatch("layout and block counts differ")
    n = blocks[0].n_obs
    slices = []
    for block, (family, rng, _) in zip(blocks, layout.blocks):
        if block.n_obs != n:
            raise DimensionMismatch(
                f"block {family!r} has {block.n_obs} observations, expected {n}"
            )
        if block.arity != len(rng):
            raise DimensionMismatch(
                f"block {family!r} has {block.arity} parameters but range "
                f"{rng.start}..{rng.stop}"
            )
        own = slice(rng.start, rng.stop)
        for dep in block.depends_on:
            if dep.start is None or dep.stop is None \
                    or not 0 <= dep.start < dep.stop <= own.start:
                raise DimensionMismatch(
                    f"block {family!r} must read parameters of earlier blocks"
                )
        slices.append(own)
    v = layout.size

    def psi(theta):
        return np.vstack([b.evaluate(theta[sl], theta)
                          for b, sl in zip(blocks, slices)])

    def init(prefix):
        values = np.zeros(0)
        for b in blocks:
            values = np.concatenate([values, b.starting_values(values)])
        return values

    names = [name for b in blocks for name in b.names]
    if len(blocks) == 1:
        # a single independent block is returned unchanged
        if not blocks[0].depends_on:
            return blocks[0]
    return EstimatingFunction(psi, v, n, init=init, names=names, family="stack")
