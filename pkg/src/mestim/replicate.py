"""Re-run the three worked examples: robust line, dose-response, standardization.

Each ``run_*`` function returns a :class:`Replication` holding the text of
every output file, so results can be compared byte for byte before they are
written anywhere.
"""
import hashlib
from dataclasses import dataclass, field

import numpy as np

from mestim import __version__
from mestim import equations as eqs
from mestim.dataset import Dataset, load_ryegrass
from mestim.estimator import (EstimatingFunction, MEstimationResult,
                              compute_bread, compute_filling, estimate,
                              sandwich)
from mestim.report import dumps, result_document
from mestim.rootfind import SolverConfig

EXAMPLES = ("robust-line", "dose-response", "standardize")
DEFAULT_SEED = 20220213

# robust-line simulation: y = intercept + slope * x + N(0, noise_sd^2),
# x ~ Uniform(0, 10); the outlier adds 3 to y at the smallest x
LINE_N = 15
LINE_INTERCEPT = 1.0
LINE_SLOPE = 0.5
LINE_NOISE_SD = 0.5
LINE_X_RANGE = (0.0, 10.0)
OUTLIER_SHIFT = 3.0

# standardization simulation: sample S=1 has 40 of 57 drug users (70%),
# the target population S=0 has 40 of 500 (8%)
STD_N_SAMPLE = 57
STD_USERS_SAMPLE = 40
STD_N_TARGET = 500
STD_USERS_TARGET = 40
# log biomarker = baseline + drug effect + N(0, sd^2)
BIOMARKERS = (
    ("sil2r", 7.0, 0.6, 0.5),
    ("il12", 5.0, 0.8, 0.6),
    ("crp", 1.0, -0.2, 0.8),
)


@dataclass
class Replication:
    example: str
    seed: int
    files: dict = field(default_factory=dict)
    summary: str = ""
    checks: dict = field(default_factory=dict)


def _csv(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(float(v))
                              for v in row))
    return "\n".join(lines) + "\n"


def _provenance(example, seed, data_text):
    return {"example": example, "seed": seed, "version": __version__,
            "data_sha256": hashlib.sha256(data_text.encode()).hexdigest()}


def simulate_line(seed=DEFAULT_SEED):
    """Simulated straight-line data; returns ``x``, clean ``y`` and ``y`` with the outlier."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(*LINE_X_RANGE, LINE_N))
    y = LINE_INTERCEPT + LINE_SLOPE * x + rng.normal(0.0, LINE_NOISE_SD, LINE_N)
    y_out = y.copy()
    y_out[np.argmin(x)] += OUTLIER_SHIFT
    return x, y, y_out


def robust_line_fits(x, y, y_out, k=eqs.HUBER_K, cfg=None):
    X = eqs.add_intercept(x)
    names = ["intercept", "slope"]
    return {
        "reference": estimate(eqs.ee_linear_regression(X, y, names), cfg=cfg),
        "ols_outlier": estimate(eqs.ee_linear_regression(X, y_out, names), cfg=cfg),
        "robust_outlier": estimate(eqs.ee_robust_regression(X, y_out, k, names),
                                   cfg=cfg),
    }


def run_robust_line(seed=DEFAULT_SEED, cfg=None):
    cfg = cfg or SolverConfig()
    x, y, y_out = simulate_line(seed)
    fits = robust_line_fits(x, y, y_out, cfg=cfg)
    slopes = {name: float(r.theta_hat[1]) for name, r in fits.items()}
    ref = slopes["reference"]
    ordered = abs(slopes["robust_outlier"] - ref) < abs(slopes["ols_outlier"] - ref)

    points = _csv(["x", "y", "y_outlier"], zip(x, y, y_out))
    prov = _provenance("robust-line", seed, points)
    doc = {
        "example": "robust-line",
        "simulation": {"n": LINE_N, "intercept": LINE_INTERCEPT,
                       "slope": LINE_SLOPE, "noise_sd": LINE_NOISE_SD,
                       "x_range": list(LINE_X_RANGE),
                       "outlier_shift": OUTLIER_SHIFT, "k": eqs.HUBER_K},
        "fits": {name: result_document(r, 0.95, family, prov, cfg)
                 for (name, r), family in zip(
                     fits.items(), ("linear", "linear", "robust_linear"))},
        "robust_closer_to_reference": bool(ordered),
        "provenance": prov,
    }
    lines = _csv(["model", "intercept", "slope"],
                 [[name, r.theta_hat[0], r.theta_hat[1]]
                  for name, r in fits.items()])
    summary = "\n".join(
        [f"{name:<15} slope = {slopes[name]:.4f}" for name in fits] +
        [f"|robust - reference| < |OLS with outlier - reference|: {ordered}"])
    return Replication("robust-line", seed,
                       {"points.csv": points, "lines.csv": lines,
                        "results.json": dumps(doc)},
                       summary, {"ordering": ordered})


DOSE_RESPONSE_CONFIG = """\
family = stack
stack.1.family = loglogistic3
stack.1.data.outcome = rootl
stack.1.data.dose = conc
stack.2.family = effective_concentration
stack.2.options.delta = 20
stack.2.options.block = 1
"""


def fit_dose_response(data=None, delta=20.0, n_params=3, cfg=None):
    data = data or load_ryegrass()
    dose, resp = data.column("conc"), data.column("rootl")
    ef = eqs.stack([eqs.ee_loglogistic(dose, resp, n_params),
                    eqs.ee_effective_concentration(delta, range(0, n_params),
                                                   data.n_obs)])
    return estimate(ef, cfg=cfg)


def run_dose_response(seed=None, cfg=None):
    cfg = cfg or SolverConfig()
    data = load_ryegrass()
    result = fit_dose_response(data, cfg=cfg)
    gamma = result.theta_hat[:3]
    grid = np.concatenate([[0.0], np.geomspace(0.1, 40.0, 200)])
    fitted, _ = eqs.loglogistic_mean(grid, gamma)
    points = data.to_csv()
    prov = _provenance("dose-response", seed, points)
    doc = result_document(result, 0.95, "stack", prov, cfg)
    ec = doc["parameters"][3]
    summary = (f"EC20 = {ec['estimate']:.2f} "
               f"(95% CI: {ec['ci_lower']:.2f}, {ec['ci_upper']:.2f})")
    return Replication(
        "dose-response", seed,
        {"points.csv": points,
         "curve.csv": _csv(["dose", "fitted"], zip(grid, fitted)),
         "model.cfg": DOSE_RESPONSE_CONFIG,
         "results.json": dumps(doc)},
        summary,
        {"ec20": ec["estimate"], "ci": (ec["ci_lower"], ec["ci_upper"])})


def simulate_standardization(seed=DEFAULT_SEED):
    """Two-source data: biomarkers measured only in the S=1 sample.

    Biomarker cells of S=0 rows hold 0 as filler; they never enter the
    equations.
    """
    rng = np.random.default_rng(seed)
    n = STD_N_SAMPLE + STD_N_TARGET
    s = np.r_[np.ones(STD_N_SAMPLE), np.zeros(STD_N_TARGET)]
    drug = np.r_[rng.permutation(np.r_[np.ones(STD_USERS_SAMPLE),
                                       np.zeros(STD_N_SAMPLE - STD_USERS_SAMPLE)]),
                 rng.permutation(np.r_[np.ones(STD_USERS_TARGET),
                                       np.zeros(STD_N_TARGET - STD_USERS_TARGET)])]
    cols = [s, drug]
    for _, base, effect, sd in BIOMARKERS:
        logb = base + effect * drug + rng.normal(0.0, sd, n)
        cols.append(np.where(s == 1, np.exp(logb), 0.0))
    names = ("s", "drug") + tuple(b[0] for b in BIOMARKERS)
    return Dataset(names, np.column_stack(cols))


STANDARDIZE_CONFIG = """\
family = stack
stack.1.family = logistic
stack.1.data.outcome = s
stack.1.data.regressors = drug
stack.2.family = inverse_odds_weighted_mean
stack.2.data.biomarkers = {markers}
stack.2.options.block = 1
""".format(markers=", ".join(b[0] for b in BIOMARKERS))


def standardization_fits(data, cfg=None):
    """Stacked fit, naive means and fixed-weight standard errors.

    Returns a dict with the stacked result, the naive (unweighted) results
    per biomarker, the fixed-weight covariance of the means and the direct
    weighted-average oracle evaluated at the fitted coefficients.
    """
    markers = [b for b in data.columns if b not in ("s", "drug")]
    s = data.column("s")
    X = eqs.add_intercept(data.column("drug"))
    B = data.matrix(markers)
    logistic = eqs.ee_logistic_regression(X, s, ["intercept", "drug"])
    p = logistic.arity
    means = eqs.ee_weighted_means(B, s, X, range(0, p),
                                  names=[f"mu_{m}" for m in markers])
    stacked = estimate(eqs.stack([logistic, means]), cfg=cfg)
    beta = stacked.theta_hat[:p]
    mu = stacked.theta_hat[p:]

    logb = np.where((s == 1)[:, None], np.log(np.where(B > 0, B, 1.0)), 0.0)
    oracle = eqs.weighted_means(logb, s, X, beta)

    # same equations with the coefficients held fixed at their estimates
    frozen = EstimatingFunction(
        lambda own: means.evaluate(own, np.concatenate([beta, own])),
        means.arity, means.n_obs, names=means.names)
    fb = compute_bread(frozen, mu)
    ff = compute_filling(frozen, mu)
    _, fixed_cov = sandwich(fb, ff, frozen.n_obs)

    sel = s == 1
    naive = [estimate(eqs.ee_mean(np.log(B[sel, j])), cfg=cfg)
             for j in range(len(markers))]
    return {"markers": markers, "stacked": stacked, "beta": beta, "mu": mu,
            "oracle": oracle, "fixed_cov": fixed_cov, "naive": naive}


def run_standardize(seed=DEFAULT_SEED, cfg=None):
    cfg = cfg or SolverConfig()
    data = simulate_standardization(seed)
    fits = standardization_fits(data, cfg)
    stacked = fits["stacked"]
    p = len(fits["beta"])
    markers = fits["markers"]
    se_stacked = stacked.standard_errors[p:]
    se_fixed = np.sqrt(np.diag(fits["fixed_cov"]))
    ci = stacked.confidence_intervals(0.95)[p:]
    oracle_gap = float(np.max(np.abs(fits["mu"] - fits["oracle"])))

    data_text = data.to_csv()
    prov = _provenance("standardize", seed, data_text)
    rows = []
    for j, m in enumerate(markers):
        nv = fits["naive"][j]
        nci = nv.confidence_intervals(0.95)[0]
        rows.append([m, nv.theta_hat[0], nci[0], nci[1], fits["mu"][j],
                     ci[j, 0], ci[j, 1], se_stacked[j], se_fixed[j]])
    forest = _csv(["biomarker", "naive", "naive_lower", "naive_upper",
                   "standardized", "standardized_lower", "standardized_upper",
                   "se_stacked", "se_fixed_weights"], rows)
    doc = {
        "example": "standardize",
        "simulation": {"n_sample": STD_N_SAMPLE, "users_sample": STD_USERS_SAMPLE,
                       "n_target": STD_N_TARGET, "users_target": STD_USERS_TARGET,
                       "biomarkers": [list(b) for b in BIOMARKERS]},
        "stacked": result_document(stacked, 0.95, "stack", prov, cfg),
        "naive": {m: result_document(r, 0.95, "mean", prov, cfg)
                  for m, r in zip(markers, fits["naive"])},
        "weighted_average_oracle": [float(v) for v in fits["oracle"]],
        "max_abs_oracle_gap": oracle_gap,
        "se_stacked": [float(v) for v in se_stacked],
        "se_fixed_weights": [float(v) for v in se_fixed],
        "provenance": prov,
    }
    summary = ["biomarker   naive    standardized (95% CI)         SE stacked  SE fixed-w"]
    for r in rows:
        summary.append(f"{r[0]:<10} {r[1]:7.3f}   {r[4]:7.3f} ({r[5]:.3f}, {r[6]:.3f})"
                       f"      {r[7]:.4f}      {r[8]:.4f}")
    summary.append(f"max |mu - weighted average| = {oracle_gap:.2e}")
    return Replication(
        "standardize", seed,
        {"data.csv": data_text, "forest.csv": forest,
         "model.cfg": STANDARDIZE_CONFIG, "results.json": dumps(doc)},
        "\n".join(summary),
        {"oracle_gap": oracle_gap, "se_stacked": se_stacked,
         "se_fixed": se_fixed})


RUNNERS = {"robust-line": run_robust_line, "dose-response": run_dose_response,
           "standardize": run_standardize}


def run(example, seed=None, cfg=None):
    if example not in RUNNERS:
        raise ValueError(f"unknown example {example!r}")
    if example == "dose-response":
        return run_dose_response(seed, cfg)
    return RUNNERS[example](DEFAULT_SEED if seed is None else seed, cfg)
