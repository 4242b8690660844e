"""Machine-readable result documents and their printed summaries."""
import json

import numpy as np

from mestim import __version__
from mestim.estimator import wald_ci

FORMAT = "mestim-result/1"


def _matrix(m):
    m = np.asarray(m, dtype=float)
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]),
            "values": [float(v) for v in m.ravel(order="C")]}


def result_document(result, ci_level=0.95, family=None, provenance=None,
                    cfg=None):
    """Describe a fitted model as plain JSON-compatible data."""
    ci = wald_ci(result, ci_level)
    se = np.sqrt(np.clip(np.diag(result.covariance), 0.0, None))
    params = []
    for j, name in enumerate(result.names):
        params.append({
            "name": name,
            "estimate": float(result.theta_hat[j]),
            "std_error": float(se[j]),
            "ci_lower": float(ci[j, 0]),
            "ci_upper": float(ci[j, 1]),
        })
    solver = result.report.as_dict()
    if cfg is not None:
        solver.update(tol=float(cfg.tol), max_iter=int(cfg.max_iter))
    return {
        "format": FORMAT,
        "version": __version__,
        "family": family,
        "n_obs": int(result.n_obs),
        "dimension": len(result.names),
        "ci_level": float(ci_level),
        "parameters": params,
        "bread": _matrix(result.bread),
        "filling": _matrix(result.filling),
        "asymptotic_variance": _matrix(result.asymptotic_variance),
        "covariance": _matrix(result.covariance),
        "solver": solver,
        "provenance": provenance or {},
    }


def failure_document(names, error, ci_level=0.95, family=None, n_obs=None,
                     provenance=None, cfg=None):
    """Document written when the solver gives up: best iterate, no variance."""
    best = error.best if error.best is not None else [np.nan] * len(names)
    params = [{"name": n, "estimate": float(v), "std_error": None,
               "ci_lower": None, "ci_upper": None}
              for n, v in zip(names, best)]
    solver = {"root": [float(v) for v in best],
              "iterations": error.iterations,
              "residual_norm": None if error.residual_norm is None
              else float(error.residual_norm),
              "converged": False, "message": str(error)}
    if cfg is not None:
        solver.update(method=cfg.method, tol=float(cfg.tol),
                      max_iter=int(cfg.max_iter))
    return {
        "format": FORMAT, "version": __version__, "family": family,
        "n_obs": n_obs, "dimension": len(names), "ci_level": float(ci_level),
        "parameters": params, "bread": None, "filling": None,
        "asymptotic_variance": None, "covariance": None,
        "solver": solver, "provenance": provenance or {},
    }


def dumps(doc):
    """Deterministic serialization (sorted keys, shortest float repr)."""
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _num(value, digits):
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def summary_table(doc, digits=4):
    """Aligned text table built only from the numbers in ``doc``."""
    level = doc["ci_level"]
    pct = f"{100 * level:g}% CI"
    header = ["parameter", "estimate", "std.err", pct]
    rows = []
    for p in doc["parameters"]:
        ci = "-" if p["ci_lower"] is None else \
            f"({_num(p['ci_lower'], digits)}, {_num(p['ci_upper'], digits)})"
        rows.append([p["name"], _num(p["estimate"], digits),
                     _num(p["std_error"], digits), ci])
    widths = [max(len(r[j]) for r in rows + [header]) for j in range(4)]
    lines = ["  ".join([header[0].ljust(widths[0])] +
                       [h.rjust(w) for h, w in zip(header[1:], widths[1:])])]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append("  ".join([r[0].ljust(widths[0])] +
                               [c.rjust(w) for c, w in zip(r[1:], widths[1:])]))
    s = doc["solver"]
    status = "converged" if s["converged"] else "NOT converged"
    lines.append(f"n = {doc['n_obs']}, solver {s.get('method', '?')} {status} "
                 f"after {s['iterations']} iterations")
    return "\n".join(lines)
