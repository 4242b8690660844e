"""Central finite-difference Jacobians."""
from dataclasses import dataclass

import numpy as np

from mestim.errors import NonFiniteEvaluation

#: cube root of double precision machine epsilon
DEFAULT_STEP = float(np.finfo(float).eps ** (1.0 / 3.0))


@dataclass(frozen=True)
class StepRule:
    """How large a perturbation to use for each coordinate.

    In ``"relative"`` mode coordinate ``j`` is perturbed by
    ``base_step * max(|x_j|, 1)``; in ``"absolute"`` mode by ``base_step``.
    """

    mode: str = "relative"
    base_step: float = DEFAULT_STEP

    def __post_init__(self):
        if self.mode not in ("relative", "absolute"):
            raise ValueError(f"unknown step mode {self.mode!r}")
        if not self.base_step > 0:
            raise ValueError("base_step must be positive")

    def steps(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "relative":
            h = self.base_step * np.maximum(np.abs(x), 1.0)
        else:
            h = np.full(x.shape, self.base_step)
        # snap so that (x + h) - x is exactly representable
        return (x + h) - x


def jacobian_central(f, x, rule=None):
    """Approximate the Jacobian of ``f`` at ``x`` by central differences.

    Parameters
    ----------
    f : callable
        Maps a length-v vector to a length-m vector.
    x : array_like
        Point of evaluation. Never modified.
    rule : StepRule, optional
        Step-size rule, defaults to ``StepRule()``.

    Returns
    -------
    ndarray
        ``(m, v)`` matrix with entry ``(i, j)`` equal to
        ``(f_i(x + h_j e_j) - f_i(x - h_j e_j)) / (2 h_j)``.
    """
    rule = rule or StepRule()
    x = np.array(x, dtype=float).ravel()
    h = rule.steps(x)
    columns = []
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        fp = np.asarray(f(xp), dtype=float).ravel()
        fm = np.asarray(f(xm), dtype=float).ravel()
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteEvaluation(
                f"non-finite function value when perturbing coordinate {j} "
                f"of x = {x.tolist()}"
            )
        columns.append((fp - fm) / (2.0 * h[j]))
    return np.column_stack(columns)
