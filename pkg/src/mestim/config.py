"""Flat ``key = value`` model configuration files.

A configuration names one estimating-equation family and binds it to CSV
columns, for example::

    family = robust_linear
    data.outcome = y
    data.regressors = x
    options.k = 1.345

Stacked systems use ``family = stack`` and numbered sub-sections::

    family = stack
    stack.1.family = loglogistic3
    stack.1.data.outcome = rootl
    stack.1.data.dose = conc
    stack.2.family = effective_concentration
    stack.2.options.delta = 20
    stack.2.options.block = 1

Blank lines and lines starting with ``#`` are ignored. Unknown keys,
repeated keys and options that do not apply to the chosen family are
errors.
"""
import re
from dataclasses import dataclass, field, replace

import numpy as np

from mestim import equations as eqs
from mestim.equations import BlockLayout, ColumnBinding
from mestim.errors import ConfigError, DataError
from mestim.numdiff import StepRule
from mestim.rootfind import SolverConfig, default_tolerance

FAMILIES = (
    "mean", "robust_location", "linear", "robust_linear", "logistic",
    "loglogistic3", "loglogistic4", "effective_concentration",
    "inverse_odds_weighted_mean", "stack",
)

# family -> (allowed data keys, required data keys, allowed option keys)
_RULES = {
    "mean": ({"outcome"}, {"outcome"}, set()),
    "robust_location": ({"outcome"}, {"outcome"}, {"k"}),
    "linear": ({"outcome", "regressors", "intercept"}, {"outcome"}, set()),
    "robust_linear": ({"outcome", "regressors", "intercept"}, {"outcome"}, {"k"}),
    "logistic": ({"outcome", "regressors", "intercept"}, {"outcome"}, set()),
    "loglogistic3": ({"outcome", "dose"}, {"outcome", "dose"}, {"n_params"}),
    "loglogistic4": ({"outcome", "dose"}, {"outcome", "dose"}, {"n_params"}),
    "effective_concentration": (set(), set(), {"delta", "block"}),
    "inverse_odds_weighted_mean": ({"biomarkers", "sample"}, {"biomarkers"},
                                   {"block"}),
}
_DEPENDENT = {"effective_concentration": ("loglogistic3", "loglogistic4"),
              "inverse_odds_weighted_mean": ("logistic",)}
_SOLVER_KEYS = ("method", "tol", "max_iter", "damping")
_LINE = re.compile(r"^\s*([A-Za-z0-9_.]+)\s*=\s*(.*?)\s*$")


@dataclass(frozen=True)
class ModelSpec:
    """Parsed configuration.

    ``options`` holds only keys given explicitly or filled with documented
    defaults (``k = 1.345``). ``solver`` likewise holds explicit overrides;
    ``blocks`` is non-empty only for ``family = stack``.
    """

    family: str
    binding: ColumnBinding = field(default_factory=ColumnBinding)
    options: tuple = ()
    ci_level: float = 0.95
    solver: tuple = ()
    init: tuple = None
    blocks: tuple = ()

    def option(self, key, default=None):
        return dict(self.options).get(key, default)

    def solver_config(self):
        values = dict(self.solver)
        tol = values.get("tol", default_tolerance())
        return SolverConfig(method=values.get("method", "newton"), tol=tol,
                            max_iter=values.get("max_iter", 200),
                            step_rule=StepRule(),
                            damping=values.get("damping", True))

    def arity(self):
        b = self.binding
        if self.family in ("mean", "robust_location", "effective_concentration"):
            return 1
        if self.family in ("linear", "robust_linear", "logistic"):
            return len(b.regressors) + int(b.intercept)
        if self.family.startswith("loglogistic"):
            return int(self.family[-1])
        if self.family == "inverse_odds_weighted_mean":
            return len(b.biomarkers)
        return sum(blk.arity() for blk in self.blocks)

    def layout(self):
        """Parameter index ranges of each block (one block when unstacked)."""
        parts = self.blocks if self.family == "stack" else (self,)
        return BlockLayout.contiguous([p.arity() for p in parts],
                                      [p.family for p in parts],
                                      [p.binding for p in parts])


def _fail(message, line=None, key=None):
    raise ConfigError(message, line=line, key=key)


def _parse_float(value, line, key):
    try:
        out = float(value)
    except ValueError:
        _fail(f"expected a number, got {value!r}", line, key)
    if not np.isfinite(out):
        _fail("value must be finite", line, key)
    return out


def _parse_int(value, line, key):
    if not re.fullmatch(r"[+-]?\d+", value):
        _fail(f"expected an integer, got {value!r}", line, key)
    return int(value)


def _parse_bool(value, line, key):
    low = value.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    _fail(f"expected true or false, got {value!r}", line, key)


def _parse_list(value, line, key):
    items = [v.strip() for v in value.split(",")]
    if value.strip() == "":
        return ()
    if any(v == "" for v in items):
        _fail("empty entry in list", line, key)
    return tuple(items)


def _tokenize(text):
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _LINE.match(raw)
        if not m:
            _fail("expected 'key = value'", lineno)
        key, value = m.group(1), m.group(2)
        if key in entries:
            _fail(f"duplicate key (first set on line {entries[key][0]})",
                  lineno, key)
        entries[key] = (lineno, value)
    return entries


def _build_section(entries, prefix, top):
    """Interpret the keys under ``prefix`` as one model block."""
    fam_key = prefix + "family"
    if fam_key not in entries:
        _fail("missing required key", None, fam_key)
    fam_line, family = entries.pop(fam_key)
    if family not in FAMILIES:
        _fail(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}",
              fam_line, fam_key)
    if family == "stack" and not top:
        _fail("stacks cannot be nested", fam_line, fam_key)

    binding, options, solver, init, ci_level = {}, {}, {}, None, 0.95
    data_ok, data_req, opt_ok = _RULES.get(family, (set(), set(), set()))
    for key in sorted(k for k in entries if k.startswith(prefix)):
        rest = key[len(prefix):]
        if top and rest.startswith("stack."):
            continue
        line, value = entries.pop(key)
        section, _, name = rest.partition(".")
        if section == "data" and name in data_ok:
            if name in ("regressors", "biomarkers"):
                binding[name] = _parse_list(value, line, key)
            elif name == "intercept":
                binding[name] = _parse_bool(value, line, key)
            else:
                if value == "":
                    _fail("column name must not be empty", line, key)
                binding[name] = value
        elif section == "options" and name in opt_ok:
            if name in ("n_params", "block"):
                options[name] = _parse_int(value, line, key)
            else:
                options[name] = _parse_float(value, line, key)
        elif top and section == "solver" and name in _SOLVER_KEYS:
            if name == "method":
                if value not in ("newton", "broyden"):
                    _fail(f"unknown solver method {value!r}", line, key)
                solver[name] = value
            elif name == "tol":
                solver[name] = _parse_float(value, line, key)
                if not solver[name] > 0:
                    _fail("tol must be positive", line, key)
            elif name == "max_iter":
                solver[name] = _parse_int(value, line, key)
                if solver[name] < 1:
                    _fail("max_iter must be at least 1", line, key)
            else:
                solver[name] = _parse_bool(value, line, key)
        elif top and rest == "ci_level":
            ci_level = _parse_float(value, line, key)
            if not 0 < ci_level < 1:
                _fail("ci_level must lie strictly between 0 and 1", line, key)
        elif top and rest == "init":
            init = tuple(_parse_float(v, line, key)
                         for v in _parse_list(value, line, key))
        elif section in ("data", "options") and name:
            _fail(f"not valid for family {family!r}", line, key)
        else:
            _fail("unknown key", line, key)

    for name in sorted(data_req - binding.keys()):
        _fail(f"family {family!r} requires this key", fam_line, prefix + "data." + name)
    if family in ("linear", "robust_linear", "logistic") and \
            not binding.get("regressors") and not binding.get("intercept", True):
        _fail("model has no regressors and no intercept", fam_line,
              prefix + "data.regressors")
    if "k" in opt_ok:
        options.setdefault("k", eqs.HUBER_K)
        if not options["k"] > 0:
            _fail("k must be positive", None, prefix + "options.k")
    if "delta" in opt_ok:
        if "delta" not in options:
            _fail(f"family {family!r} requires this key", fam_line,
                  prefix + "options.delta")
        if not 0 < options["delta"] < 100:
            _fail("delta must lie strictly between 0 and 100", None,
                  prefix + "options.delta")
    if "n_params" in options and options["n_params"] != int(family[-1]):
        _fail(f"n_params={options['n_params']} contradicts family {family!r}",
              None, prefix + "options.n_params")
    if "block" in opt_ok and "block" not in options:
        _fail(f"family {family!r} must reference a block", fam_line,
              prefix + "options.block")
    return ModelSpec(family=family, binding=ColumnBinding(**binding),
                     options=tuple(sorted(options.items())), ci_level=ci_level,
                     solver=tuple(sorted(solver.items())), init=init), fam_line


def parse_config(text):
    """Parse configuration text into a :class:`ModelSpec`.

    Raises
    ------
    ConfigError
        For every malformed input, carrying the line and key when known.
    """
    try:
        return _parse(text)
    except ConfigError:
        raise
    except Exception as err:  # never let a parser bug escape as a crash
        raise ConfigError(f"invalid configuration: {err}") from None


def _parse(text):
    entries = _tokenize(text)
    spec, fam_line = _build_section(entries, "", top=True)
    if spec.family != "stack":
        for key, (line, _) in sorted(entries.items(), key=lambda kv: kv[1][0]):
            _fail("unknown key" if not key.startswith("stack.") else
                  "stack sections require family = stack", line, key)
        if spec.family in _DEPENDENT:
            _fail(f"family {spec.family!r} can only appear inside a stack",
                  fam_line, "family")
        return spec

    indices = set()
    for key, (line, _) in entries.items():
        m = re.match(r"^stack\.(\d+)\.", key)
        if not m:
            _fail("unknown key", line, key)
        indices.add(int(m.group(1)))
    if not indices:
        _fail("a stack needs at least one block", fam_line, "family")
    if sorted(indices) != list(range(1, len(indices) + 1)):
        _fail("stack blocks must be numbered 1, 2, 3, ... without gaps",
              None, "stack")
    blocks = []
    for j in range(1, len(indices) + 1):
        block, line = _build_section(entries, f"stack.{j}.", top=False)
        ref = block.option("block")
        if ref is not None:
            if not 1 <= ref < j:
                _fail(f"options.block must name an earlier block (1..{j - 1})",
                      line, f"stack.{j}.options.block")
            target = blocks[ref - 1].family
            if target not in _DEPENDENT[block.family]:
                _fail(f"block {ref} is {target!r}; {block.family!r} needs "
                      f"{' or '.join(_DEPENDENT[block.family])}",
                      line, f"stack.{j}.options.block")
        blocks.append(block)
    for key, (line, _) in entries.items():
        _fail("unknown key", line, key)
    spec = replace(spec, blocks=tuple(blocks))
    if spec.init is not None and len(spec.init) != spec.arity():
        _fail(f"init has {len(spec.init)} values for {spec.arity()} parameters",
              None, "init")
    return spec


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _section_lines(spec, prefix):
    lines = [f"{prefix}family = {spec.family}"]
    b = spec.binding
    data_ok = _RULES.get(spec.family, (set(), set(), set()))[0]
    for name in ("outcome", "regressors", "intercept", "dose", "sample",
                 "biomarkers"):
        value = getattr(b, name)
        if name not in data_ok:
            continue
        if name in ("regressors", "biomarkers") and not value:
            continue
        if value is None:
            continue
        lines.append(f"{prefix}data.{name} = {_fmt(value)}")
    for key, value in spec.options:
        lines.append(f"{prefix}options.{key} = {_fmt(value)}")
    return lines


def serialize_config(spec):
    """Canonical text form; ``parse_config`` of the output returns ``spec``."""
    lines = _section_lines(spec, "")
    lines.append(f"ci_level = {_fmt(float(spec.ci_level))}")
    for key, value in spec.solver:
        lines.append(f"solver.{key} = {_fmt(value)}")
    if spec.init is not None:
        lines.append(f"init = {_fmt(tuple(float(v) for v in spec.init))}")
    for j, block in enumerate(spec.blocks, start=1):
        lines.extend(_section_lines(block, f"stack.{j}."))
    return "\n".join(lines) + "\n"


def _design_matrix(spec, data):
    b = spec.binding
    X = data.matrix(b.regressors)
    names = list(b.regressors)
    if b.intercept:
        X = np.column_stack([np.ones(data.n_obs), X])
        names = ["intercept"] + names
    return X, names


def _build_block(spec, data, layout_ranges, built):
    fam = spec.family
    b = spec.binding
    if fam == "mean":
        return eqs.ee_mean(data.column(b.outcome))
    if fam == "robust_location":
        return eqs.ee_robust_location(data.column(b.outcome), spec.option("k"))
    if fam in ("linear", "robust_linear", "logistic"):
        X, names = _design_matrix(spec, data)
        y = data.column(b.outcome)
        if fam == "linear":
            return eqs.ee_linear_regression(X, y, names)
        if fam == "robust_linear":
            return eqs.ee_robust_regression(X, y, spec.option("k"), names)
        return eqs.ee_logistic_regression(X, y, names)
    if fam.startswith("loglogistic"):
        return eqs.ee_loglogistic(data.column(b.dose), data.column(b.outcome),
                                  int(fam[-1]))
    ref = spec.option("block") - 1
    if fam == "effective_concentration":
        return eqs.ee_effective_concentration(spec.option("delta"),
                                              layout_ranges[ref], data.n_obs)
    # inverse_odds_weighted_mean
    parent_spec, _ = built[ref]
    X, _ = _design_matrix(parent_spec, data)
    sample = b.sample or parent_spec.binding.outcome
    return eqs.ee_weighted_means(data.matrix(b.biomarkers), data.column(sample),
                                 X, layout_ranges[ref],
                                 names=[f"mu_{m}" for m in b.biomarkers])


def build_estimating_function(spec, data):
    """Turn a spec and a dataset into an estimating function.

    Raises :class:`DataError` for missing columns or data that the family
    rejects (rank deficiency, bad coding, non-positive biomarkers).
    """
    parts = spec.blocks if spec.family == "stack" else (spec,)
    layout = spec.layout()
    ranges = [rng for _, rng, _ in layout.blocks]
    built = []
    try:
        for part in parts:
            built.append((part, _build_block(part, data, ranges, built)))
    except (DataError, ConfigError):
        raise
    except (ValueError, ArithmeticError) as err:
        raise DataError(str(err)) from None
    blocks = [ef for _, ef in built]
    if spec.family != "stack":
        return blocks[0]
    return eqs.stack(blocks, layout)
