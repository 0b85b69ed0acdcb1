"""The model specification template: parse, validate, emit, compile, compare.

A specification file (extension ``.tmmp``) is a line-oriented, INI-like
document whose sections mirror the standard description template for
temporal models of multiple populations:

    [model]        citation, eta, g1, formula
    [covariate]    g2, covariates
    [systematic]   g3, alpha
    [offsets]      a
    [smoothing]    basis, kernel, r, constraints
    [projections]  mode
    [estimation]   fixed, vague, informative, hierarchical, multiplicative_tn

Absent entries are written with the marker ``.`` (the template's middle
dot is accepted too), never omitted.  Expressions use ``name(key=value,
...)`` calls, e.g. ``kernel = matern(kappa2=0.05, nu=1.5, ell=3)`` or
``constraints = [ref(k_star), sum_range(2, K)]``.  Every parameter
symbol referenced by an active component must appear in exactly one
estimation binding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import smoothing as sm
from .basis import BasisSpec, basis_from_name
from .errors import CoverageError, ParameterError, SpecError
from .hierarchy import (
    Fixed,
    Hierarchical,
    MultiplicativeTN,
    Prior,
    vague_prior,
)
from .inference import EstimationSetup
from .kernels import kernel_from_name
from .process import (
    GbdNonlinearCovariate,
    GridTable,
    LinearCovariate,
    LinearTrend,
    Link,
    LogisticTransition,
    NoCovariate,
    NoSystematic,
    PCRegressionCovariate,
    PiecewiseLogCovariate,
    ProcessModel,
    Trapezoid,
)
from .smoothing import SmoothingModel

__all__ = [
    "Finding",
    "ModelSpec",
    "parse_spec",
    "emit_spec",
    "validate_spec",
    "compile_spec",
    "compare_specs",
    "DataBindings",
    "CompiledModel",
    "ComparisonTable",
]

ABSENT = (".", "·")  # "." preferred on emit; the template's middle dot accepted

_SECTIONS = (
    "model",
    "covariate",
    "systematic",
    "offsets",
    "smoothing",
    "projections",
    "estimation",
)

_SECTION_KEYS = {
    "model": ("citation", "eta", "g1", "formula"),
    "covariate": ("g2", "covariates"),
    "systematic": ("g3", "alpha"),
    "offsets": ("a",),
    "smoothing": ("basis", "kernel", "r", "constraints"),
    "projections": ("mode",),
    "estimation": ("fixed", "vague", "informative", "hierarchical", "multiplicative_tn"),
}

# template labels used in findings and comparison rows
_SECTION_LABELS = {
    "model": "Process model formula",
    "covariate": "Covariate Component",
    "systematic": "Systematic Component",
    "offsets": "Offsets",
    "smoothing": "Smoothing Component",
    "projections": "Projections",
    "estimation": "Parameter Estimation",
}

_COVARIATE_VARIANTS = ("linear", "piecewise_log", "gbd_nonlinear", "pc_regression")
_SYSTEMATIC_VARIANTS = ("linear_trend", "logistic_transition", "trapezoid")

# parameter symbols and their per-population/shared roles per variant
_COVARIATE_ROLES = {
    "linear": (("beta0", "population"), ("beta", "vector")),
    "piecewise_log": (("beta0", "population"), ("beta1", "shared"), ("beta2", "shared")),
    "gbd_nonlinear": (
        ("beta1", "population"),
        ("beta2", "population"),
        ("beta3", "population"),
        ("beta4", "population"),
    ),
    "pc_regression": (("beta", "population_time_vector"),),
}
_SYSTEMATIC_ROLES = {
    "linear_trend": (
        ("alpha0", "population"),
        ("alpha1", "population"),
        ("t_star", "population"),
    ),
    "logistic_transition": (
        ("Ptilde", "population"),
        ("omega", "population"),
        ("Omega", "population"),
        ("t_star", "shared"),
    ),
    "trapezoid": (
        ("xi", "population"),
        ("gamma0", "population"),
        ("lambda1", "population"),
        ("lambda2", "population"),
        ("lambda3", "population"),
    ),
}

# working-scale domains used to concretize vague priors and transforms
_KERNEL_ARG_DOMAINS = {
    "kappa2": ("positive", None),
    "sigma2": ("positive", None),
    "ell": ("positive", None),
    "nu": ("positive", None),
    "rho": ("bounded", (0.0, 0.999)),
    "theta": ("bounded", (-1.0, 0.0)),
}
_PARAM_DOMAINS = {
    "Ptilde": ("bounded", (0.0, 1.0)),
    "omega": ("positive", None),
    "beta2": ("positive", None),
    "lambda1": ("positive", None),
    "lambda2": ("positive", None),
    "lambda3": ("positive", None),
}


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    message: str
    line: int | None = None

    def __str__(self):
        where = f" (line {self.line})" if self.line is not None else ""
        return f"{self.severity}: {self.message}{where}"


@dataclass(frozen=True)
class Call:
    """A parsed ``name(arg, key=value, ...)`` expression."""

    name: str
    positional: tuple = ()
    keywords: tuple = ()  # ((key, value), ...) preserving order

    def kwargs(self) -> dict:
        return dict(self.keywords)


@dataclass(frozen=True)
class ModelSpec:
    citation: str = ""
    eta_description: str = ""
    link_name: str = "identity"
    formula_terms: tuple = ("epsilon",)
    covariate_variant: str | None = None
    covariate_names: tuple = ()
    systematic_variant: str | None = None
    alpha_text: str = ""
    offsets: bool = False
    basis: Call = Call("identity")
    kernel: Call = Call("white_noise", keywords=(("sigma2", 1.0),))
    order: int = 0
    constraints: tuple = ()  # of Call
    projection: Call = Call("default")
    fixed: tuple = ()  # ((symbol, value-or-"mid"), ...)
    vague: tuple = ()  # symbols
    informative: tuple = ()  # ((symbol, Call), ...)
    hierarchical: tuple = ()  # ((symbol, Call), ...)
    multiplicative_tn: tuple = ()  # ((symbol, Call), ...)

    def referenced_symbols(self) -> tuple:
        """Symbols used by active components, in a stable order."""
        out = []
        if self.covariate_variant:
            out.extend(name for name, _ in _COVARIATE_ROLES[self.covariate_variant])
        if self.systematic_variant:
            out.extend(name for name, _ in _SYSTEMATIC_ROLES[self.systematic_variant])
        for _, value in self.kernel.keywords:
            if isinstance(value, str):
                out.append(value)
        unique = []
        for symbol in out:
            if symbol not in unique:
                unique.append(symbol)
        return tuple(unique)

    def bound_symbols(self) -> dict:
        """symbol -> list of binding kinds it appears under."""
        out = {}
        for symbol, _ in self.fixed:
            out.setdefault(symbol, []).append("fixed")
        for symbol in self.vague:
            out.setdefault(symbol, []).append("vague")
        for symbol, _ in self.informative:
            out.setdefault(symbol, []).append("informative")
        for symbol, _ in self.hierarchical:
            out.setdefault(symbol, []).append("hierarchical")
        for symbol, _ in self.multiplicative_tn:
            out.setdefault(symbol, []).append("multiplicative_tn")
        return out


# ------------------------------------------------------------------ lexing


def _split_top(text: str, sep: str = ",") -> list:
    """Split at top-level separators (outside parentheses/brackets/quotes)."""
    parts, depth, quote, token = [], 0, None, []
    for ch in text:
        if quote:
            token.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "\"'":
            quote = ch
            token.append(ch)
        elif ch in "([{":
            depth += 1
            token.append(ch)
        elif ch in ")]}":
            depth -= 1
            token.append(ch)
        elif ch == sep and depth == 0:
            parts.append("".join(token).strip())
            token = []
        else:
            token.append(ch)
    tail = "".join(token).strip()
    if tail:
        parts.append(tail)
    return parts


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


def _parse_value(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] in "\"'" and text[-1] == text[0]:
        return text[1:-1]
    if text.startswith("(") and text.endswith(")"):
        return tuple(_parse_value(p) for p in _split_top(text[1:-1]))
    if _NUMBER.match(text):
        return float(text)
    if _IDENT.match(text):
        return text
    raise ValueError(f"cannot parse value '{text}'")


def _parse_call(text: str) -> Call:
    text = text.strip()
    m = re.match(r"^([A-Za-z_][A-Za-z0-9_\-]*)\s*(\((.*)\))?$", text, re.DOTALL)
    if not m or (m.group(2) and not m.group(2).endswith(")")):
        raise ValueError(f"cannot parse expression '{text}'")
    name = m.group(1)
    inner = m.group(3)
    if inner is None:
        return Call(name)
    positional, keywords = [], []
    for part in _split_top(inner):
        if not part:
            continue
        if "=" in part and _IDENT.match(part.split("=", 1)[0].strip()):
            key, raw = part.split("=", 1)
            keywords.append((key.strip(), _parse_value(raw)))
        else:
            positional.append(_parse_value(part))
    return Call(name, tuple(positional), tuple(keywords))


def _is_absent(value: str) -> bool:
    return value.strip() in ABSENT


# ----------------------------------------------------------------- parsing


def parse_spec(text: str) -> ModelSpec:
    """Parse a specification document.

    Raises :class:`~tmmp.errors.SpecError` carrying the full list of
    findings (each with its line number) when the document is malformed;
    parsing itself never crashes on arbitrary input.
    """
    findings: list[Finding] = []
    sections: dict[str, dict] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                findings.append(Finding("error", f"unknown section '[{name}]'", lineno))
                current = None
                continue
            if name in sections:
                findings.append(Finding("error", f"duplicate section '[{name}]'", lineno))
            sections.setdefault(name, {})
            current = name
            continue
        if "=" not in line:
            findings.append(Finding("error", f"expected 'key = value', got '{line}'", lineno))
            continue
        if current is None:
            findings.append(Finding("error", f"key outside any section: '{line}'", lineno))
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SECTION_KEYS[current]:
            findings.append(Finding("error", f"unknown key '{key}' in [{current}]", lineno))
            continue
        if key in sections[current]:
            findings.append(Finding("error", f"duplicate key '{key}' in [{current}]", lineno))
            continue
        sections[current][key] = (value, lineno)

    for section in _SECTIONS:
        if section not in sections:
            findings.append(Finding("error", f"missing section: {_SECTION_LABELS[section]}"))
    if any(f.severity == "error" for f in findings):
        raise SpecError(findings)

    def get(section, key, default=None):
        if key in sections[section]:
            return sections[section][key]
        return (default, None)

    spec = ModelSpec()
    updates = {}

    citation, _ = get("model", "citation", "")
    eta, _ = get("model", "eta", "")
    updates["citation"] = "" if citation is None or _is_absent(citation) else citation
    updates["eta_description"] = "" if eta is None or _is_absent(eta) else eta

    g1, line = get("model", "g1")
    if g1 is None:
        findings.append(Finding("error", "missing key 'g1' in [model]"))
    elif g1 not in ("identity", "log", "log10", "logit"):
        findings.append(Finding("error", f"unknown link '{g1}'", line))
    else:
        updates["link_name"] = g1

    formula, line = get("model", "formula")
    if formula is None:
        findings.append(Finding("error", "missing section: Process model formula"))
    else:
        terms = tuple(t.strip() for t in formula.split("+"))
        bad = [t for t in terms if t not in ("g2", "g3", "a", "epsilon")]
        if bad:
            findings.append(Finding("error", f"unknown formula terms {bad}", line))
        else:
            canonical = tuple(t for t in ("g2", "g3", "a", "epsilon") if t in terms)
            updates["formula_terms"] = canonical

    g2, line = get("covariate", "g2", ".")
    if not _is_absent(g2):
        if g2 not in _COVARIATE_VARIANTS:
            findings.append(Finding("error", f"unknown covariate variant '{g2}'", line))
        else:
            updates["covariate_variant"] = g2
    names, line = get("covariate", "covariates", ".")
    if not _is_absent(names):
        updates["covariate_names"] = tuple(n.strip() for n in names.split(",") if n.strip())

    g3, line = get("systematic", "g3", ".")
    if not _is_absent(g3):
        if g3 not in _SYSTEMATIC_VARIANTS:
            findings.append(Finding("error", f"unknown systematic variant '{g3}'", line))
        else:
            updates["systematic_variant"] = g3
    alpha, _ = get("systematic", "alpha", ".")
    updates["alpha_text"] = "" if _is_absent(alpha) else alpha

    a_value, line = get("offsets", "a", ".")
    if not _is_absent(a_value):
        if a_value.strip() != "table":
            findings.append(Finding("error", f"offsets must be '.' or 'table', got '{a_value}'", line))
        else:
            updates["offsets"] = True

    basis_text, line = get("smoothing", "basis")
    if basis_text is None:
        findings.append(Finding("error", "missing key 'basis' in [smoothing]"))
    else:
        try:
            call = _parse_call(basis_text)
            basis_from_name(call.name, **call.kwargs())  # validates
            updates["basis"] = call
        except (ValueError, ParameterError) as exc:
            findings.append(Finding("error", f"malformed basis expression: {exc}", line))

    kernel_text, line = get("smoothing", "kernel")
    if kernel_text is None:
        findings.append(Finding("error", "missing key 'kernel' in [smoothing]"))
    else:
        try:
            call = _parse_call(kernel_text)
            _check_kernel_call(call)
            updates["kernel"] = call
        except (ValueError, ParameterError) as exc:
            findings.append(Finding("error", f"malformed kernel expression: {exc}", line))

    r_text, line = get("smoothing", "r")
    if r_text is None:
        findings.append(Finding("error", "missing key 'r' in [smoothing]"))
    else:
        try:
            order = int(float(r_text))
            if order < 0 or order != float(r_text):
                raise ValueError
            updates["order"] = order
        except ValueError:
            findings.append(Finding("error", f"r must be a nonnegative integer, got '{r_text}'", line))

    cons_text, line = get("smoothing", "constraints", ".")
    if not _is_absent(cons_text):
        stripped = cons_text.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            stripped = stripped[1:-1]
        try:
            calls = tuple(_parse_call(p) for p in _split_top(stripped) if p)
            for call in calls:
                _check_constraint_call(call)
            updates["constraints"] = calls
        except (ValueError, ParameterError) as exc:
            findings.append(Finding("error", f"malformed constraints: {exc}", line))

    mode_text, line = get("projections", "mode", ".")
    if not _is_absent(mode_text):
        try:
            call = _parse_call(mode_text)
            if call.name not in ("default", "pooled"):
                raise ValueError(f"unknown projection mode '{call.name}'")
            bad = [k for k, _ in call.keywords if k not in ("W", "G", "V")]
            if bad:
                raise ValueError(f"unknown pooled parameters {bad}")
            updates["projection"] = call
        except ValueError as exc:
            findings.append(Finding("error", f"malformed projections entry: {exc}", line))

    for key, attr in (
        ("informative", "informative"),
        ("hierarchical", "hierarchical"),
        ("multiplicative_tn", "multiplicative_tn"),
    ):
        text_value, line = get("estimation", key, ".")
        if _is_absent(text_value):
            continue
        try:
            entries = []
            for part in _split_top(text_value):
                if key == "informative":
                    if "~" not in part:
                        raise ValueError(f"informative entry '{part}' needs 'symbol~distribution'")
                    symbol, dist = (s.strip() for s in part.split("~", 1))
                    entries.append((symbol, _parse_call(dist)))
                else:
                    call = _parse_call(part)
                    entries.append((call.name, Call("options", (), call.keywords)))
            updates[attr] = tuple(entries)
        except ValueError as exc:
            findings.append(Finding("error", f"malformed {key} binding: {exc}", line))

    fixed_text, line = get("estimation", "fixed", ".")
    if not _is_absent(fixed_text):
        try:
            entries = []
            for part in _split_top(fixed_text):
                if "=" not in part:
                    raise ValueError(f"fixed entry '{part}' needs 'symbol=value'")
                symbol, raw = (s.strip() for s in part.split("=", 1))
                value = _parse_value(raw)
                if isinstance(value, str) and value != "mid":
                    raise ValueError(f"fixed value for '{symbol}' must be numeric or 'mid'")
                entries.append((symbol, value))
            updates["fixed"] = tuple(entries)
        except ValueError as exc:
            findings.append(Finding("error", f"malformed fixed binding: {exc}", line))

    vague_text, line = get("estimation", "vague", ".")
    if not _is_absent(vague_text):
        updates["vague"] = tuple(s.strip() for s in vague_text.split(",") if s.strip())

    if any(f.severity == "error" for f in findings):
        raise SpecError(findings)
    return replace(spec, **updates)


def _check_kernel_call(call: Call) -> None:
    numeric = {k: (1.0 if isinstance(v, str) else v) for k, v in call.keywords}
    if any(isinstance(v, tuple) for v in numeric.values()):
        raise ParameterError("kernel parameters must be numbers or symbols")
    probe = dict(numeric)
    # probe with safe values so symbolic parameters pass domain checks
    for key, value in call.keywords:
        if isinstance(value, str):
            probe[key] = {"rho": 0.5, "theta": -0.5}.get(key, 1.0)
    kernel_from_name(call.name, **probe)


def _check_constraint_call(call: Call) -> None:
    if call.name == "ref":
        kw = call.kwargs()
        if call.positional == ("k_star",) and not kw:
            return
        if len(call.positional) == 1 and isinstance(call.positional[0], float) and not kw:
            return
        if not call.positional and set(kw) == {"t"} and isinstance(kw["t"], float):
            return
        raise ParameterError("ref takes k_star, an index, or t=<time>")
    if call.name == "sum_all":
        if call.positional or call.keywords:
            raise ParameterError("sum_all takes no arguments")
        return
    if call.name == "sum_range":
        if len(call.positional) == 2 and not call.keywords:
            start, stop = call.positional
            if isinstance(start, float) and (stop == "K" or isinstance(stop, float)):
                return
        raise ParameterError("sum_range takes (start, stop) with stop an index or K")
    raise ParameterError(f"unknown constraint '{call.name}'")


# ---------------------------------------------------------------- emitting


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(int(value)) if value == int(value) and abs(value) < 1e15 else repr(value)
    if isinstance(value, tuple):
        return "(" + ", ".join(_format_value(v) for v in value) + ")"
    if isinstance(value, str) and not _IDENT.match(value):
        return f'"{value}"'
    return str(value)


def _format_call(call: Call) -> str:
    parts = [_format_value(v) for v in call.positional]
    parts += [f"{k}={_format_value(v)}" for k, v in call.keywords]
    return call.name if not parts else f"{call.name}({', '.join(parts)})"


def emit_spec(spec: ModelSpec) -> str:
    """Serialize a spec to the canonical file form; inverse of parse_spec."""
    lines = ["[model]"]
    lines.append(f"citation = {spec.citation or '.'}")
    lines.append(f"eta = {spec.eta_description or '.'}")
    lines.append(f"g1 = {spec.link_name}")
    lines.append(f"formula = {' + '.join(spec.formula_terms)}")
    lines.append("")
    lines.append("[covariate]")
    lines.append(f"g2 = {spec.covariate_variant or '.'}")
    lines.append(f"covariates = {', '.join(spec.covariate_names) or '.'}")
    lines.append("")
    lines.append("[systematic]")
    lines.append(f"g3 = {spec.systematic_variant or '.'}")
    lines.append(f"alpha = {spec.alpha_text or '.'}")
    lines.append("")
    lines.append("[offsets]")
    lines.append(f"a = {'table' if spec.offsets else '.'}")
    lines.append("")
    lines.append("[smoothing]")
    lines.append(f"basis = {_format_call(spec.basis)}")
    lines.append(f"kernel = {_format_call(spec.kernel)}")
    lines.append(f"r = {spec.order}")
    if spec.constraints:
        lines.append(f"constraints = [{', '.join(_format_call(c) for c in spec.constraints)}]")
    else:
        lines.append("constraints = .")
    lines.append("")
    lines.append("[projections]")
    lines.append(f"mode = {_format_call(spec.projection)}")
    lines.append("")
    lines.append("[estimation]")
    if spec.fixed:
        lines.append(
            "fixed = " + ", ".join(f"{s}={_format_value(v)}" for s, v in spec.fixed)
        )
    else:
        lines.append("fixed = .")
    lines.append(f"vague = {', '.join(spec.vague) or '.'}")
    if spec.informative:
        lines.append(
            "informative = "
            + ", ".join(f"{s}~{_format_call(c)}" for s, c in spec.informative)
        )
    else:
        lines.append("informative = .")
    for key, entries in (
        ("hierarchical", spec.hierarchical),
        ("multiplicative_tn", spec.multiplicative_tn),
    ):
        if entries:
            rendered = ", ".join(
                _format_call(Call(symbol, (), options.keywords)) for symbol, options in entries
            )
            lines.append(f"{key} = {rendered}")
        else:
            lines.append(f"{key} = .")
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- validation


def _symbol_domain(spec: ModelSpec, symbol: str):
    for key, value in spec.kernel.keywords:
        if value == symbol:
            return _KERNEL_ARG_DOMAINS.get(key, ("real", None))
    return _PARAM_DOMAINS.get(symbol, ("real", None))


def validate_spec(spec: ModelSpec) -> list:
    """Semantic findings for a parsed specification.

    An empty error set means the spec is runnable; warnings are advisory.
    """
    findings: list[Finding] = []

    def error(message):
        findings.append(Finding("error", message))

    def warning(message):
        findings.append(Finding("warning", message))

    if "epsilon" not in spec.formula_terms:
        error("process formula must include the smoothing term 'epsilon'")
    if ("g2" in spec.formula_terms) != (spec.covariate_variant is not None):
        error("formula term 'g2' and the covariate section must agree")
    if ("g3" in spec.formula_terms) != (spec.systematic_variant is not None):
        error("formula term 'g3' and the systematic section must agree")
    if ("a" in spec.formula_terms) != spec.offsets:
        error("formula term 'a' and the offsets section must agree")

    if spec.covariate_variant:
        expected = {"piecewise_log": 1, "gbd_nonlinear": 3}.get(spec.covariate_variant)
        if not spec.covariate_names:
            error(f"covariate component '{spec.covariate_variant}' needs covariate names")
        elif expected is not None and len(spec.covariate_names) != expected:
            error(
                f"covariate component '{spec.covariate_variant}' takes exactly "
                f"{expected} covariate(s), got {len(spec.covariate_names)}"
            )
    elif spec.covariate_names:
        warning("covariate names listed but no covariate component is active")

    if spec.systematic_variant == "logistic_transition" and spec.link_name != "logit":
        error("the logistic transition needs the logit link (its recursion works on proportions)")

    if spec.order >= 1 and not spec.constraints:
        error("non-stationary smoother requires K_{0,c}")
    elif len(spec.constraints) != spec.order:
        error(
            f"differencing order r={spec.order} needs exactly {spec.order} constraint "
            f"set(s), got {len(spec.constraints)}"
        )
    basis_is_identity = spec.basis.name == "identity"
    for call in spec.constraints:
        if call.name == "ref" and "t" in call.kwargs() and not basis_is_identity:
            error("time-referenced constraints need the identity basis")

    if spec.projection.name == "pooled":
        if spec.order != 2 or basis_is_identity:
            error("pooled projection requires a twice-differenced spline smoother")
        for key, value in spec.projection.keywords:
            if key == "W" and not (0.0 <= float(value) <= 1.0):
                error("pooled projection weight W must lie in [0, 1]")

    referenced = spec.referenced_symbols()
    bound = spec.bound_symbols()
    for symbol in referenced:
        kinds = bound.get(symbol, [])
        if not kinds:
            error(f"parameter '{symbol}' has no estimation binding")
        elif len(kinds) > 1:
            error(f"parameter '{symbol}' bound more than once ({' and '.join(kinds)})")
    for symbol in bound:
        if symbol not in referenced:
            warning(f"estimation binding for unused parameter '{symbol}'")

    for symbol, options in spec.hierarchical:
        kw = options.kwargs()
        levels = int(kw.get("levels", 1))
        if levels < 1:
            error(f"hierarchy for '{symbol}' needs levels >= 1")
        if kw.get("pi", "normal") not in ("normal", "truncated_normal"):
            error(f"hierarchy for '{symbol}' has unknown distribution '{kw.get('pi')}'")
        if kw.get("pi") == "truncated_normal" and "bounds" not in kw:
            error(f"truncated-normal hierarchy for '{symbol}' needs bounds=(lo, hi)")
    return findings


# -------------------------------------------------------------- compiling


@dataclass
class DataBindings:
    """Concrete data a spec is compiled against."""

    populations: tuple
    times: np.ndarray
    covariates: dict | None = None  # name -> GridTable
    offsets: GridTable | None = None
    groupings: dict | None = None  # population -> tuple of group labels


@dataclass
class CompiledModel:
    model: ProcessModel
    setup: EstimationSetup
    projection: Call
    spec: ModelSpec

    def fixed_params(self) -> dict:
        """Component parameters pinned by fixed bindings."""
        return {
            symbol: strategy.value
            for symbol, strategy in self.setup.bindings.items()
            if isinstance(strategy, Fixed) and symbol not in self.setup.kernel_map.values()
        }


def _build_covariate(spec: ModelSpec):
    variant = spec.covariate_variant
    if variant is None:
        return NoCovariate()
    if variant == "linear":
        return LinearCovariate(spec.covariate_names)
    if variant == "piecewise_log":
        return PiecewiseLogCovariate(spec.covariate_names[0])
    if variant == "gbd_nonlinear":
        names = spec.covariate_names
        return GbdNonlinearCovariate(ldi=names[0], edu=names[1], hiv=names[2])
    return PCRegressionCovariate(spec.covariate_names)


def _build_systematic(spec: ModelSpec):
    variant = spec.systematic_variant
    if variant is None:
        return NoSystematic()
    if variant == "linear_trend":
        return LinearTrend()
    if variant == "logistic_transition":
        return LogisticTransition()
    return Trapezoid()


def _build_constraints(spec: ModelSpec) -> tuple:
    out = []
    for call in spec.constraints:
        if call.name == "ref":
            kw = call.kwargs()
            if call.positional == ("k_star",):
                out.append(sm.middle_ref())
            elif "t" in kw:
                out.append(sm.time_ref(float(kw["t"])))
            else:
                out.append(sm.ref(int(call.positional[0])))
        elif call.name == "sum_all":
            out.append(sm.sum_all())
        else:
            start, stop = call.positional
            out.append(sm.sum_range(int(start), None if stop == "K" else int(stop)))
    return tuple(out)


def _strategy_for(spec: ModelSpec, symbol: str, bindings: DataBindings):
    """(strategy, transform) for one bound symbol."""
    kind, bounds = _symbol_domain(spec, symbol)
    transform = "log" if kind == "positive" else "identity"
    for s, value in spec.fixed:
        if s == symbol:
            if value == "mid":
                value = float(0.5 * (bindings.times[0] + bindings.times[-1]))
            return Fixed(float(value)), "identity"
    if symbol in spec.vague:
        return vague_prior(kind if kind != "bounded" else "bounded", bounds), transform
    for s, call in spec.informative:
        if s == symbol:
            args = tuple(
                v for v in (call.positional + tuple(v for _, v in call.keywords))
            )
            return Prior(call.name, tuple(float(a) for a in args)), transform
    for s, options in spec.hierarchical:
        if s == symbol:
            kw = options.kwargs()
            levels = int(kw.get("levels", 1))
            on_log = kw.get("scale") == "log" or (kind == "positive" and kw.get("scale") != "natural")
            groupings = None
            if levels > 1:
                if bindings.groupings is None:
                    raise CoverageError(
                        f"hierarchy for '{symbol}' has {levels} levels and needs a groupings table"
                    )
                groupings = bindings.groupings
            return (
                Hierarchical(
                    pi=kw.get("pi", "normal"),
                    levels=levels,
                    groupings=groupings,
                    level_sds=tuple([Prior("half_normal", (1.0,))] * levels),
                    mean=Prior("normal", (0.0, 100.0)),
                    bounds=tuple(float(b) for b in kw["bounds"]) if "bounds" in kw else None,
                    on_log_scale=on_log,
                ),
                "log" if on_log else "identity",
            )
    for s, options in spec.multiplicative_tn:
        if s == symbol:
            kw = options.kwargs()
            return (
                MultiplicativeTN(lo=float(kw.get("lo", -1.0)), hi=float(kw.get("hi", 2.0))),
                "log",
            )
    raise ParameterError(f"parameter '{symbol}' has no estimation binding")


def compile_spec(spec: ModelSpec, bindings: DataBindings) -> CompiledModel:
    """Turn a validated spec plus data into a runnable model and setup."""
    findings = validate_spec(spec)
    errors = [f for f in findings if f.severity == "error"]
    if errors:
        raise SpecError(errors)

    basis = basis_from_name(spec.basis.name, **spec.basis.kwargs())
    kernel_map = {}
    kernel_args = {}
    for key, value in spec.kernel.keywords:
        if isinstance(value, str):
            kernel_map[_kernel_field_name(key)] = value
            kernel_args[key] = None
        else:
            kernel_args[key] = float(value)

    covariate = _build_covariate(spec)
    systematic = _build_systematic(spec)
    constraints = _build_constraints(spec)

    roles = {}
    if spec.covariate_variant:
        roles.update(dict(_COVARIATE_ROLES[spec.covariate_variant]))
    if spec.systematic_variant:
        roles.update(dict(_SYSTEMATIC_ROLES[spec.systematic_variant]))

    setup = EstimationSetup(kernel_map=kernel_map)
    for symbol in spec.referenced_symbols():
        strategy, transform = _strategy_for(spec, symbol, bindings)
        setup.bindings[symbol] = strategy
        if transform != "identity":
            setup.transforms[symbol] = transform
        if symbol in roles:
            setup.roles[symbol] = roles[symbol]
        elif symbol in kernel_map.values():
            setup.roles[symbol] = (
                "population"
                if isinstance(strategy, (Hierarchical, MultiplicativeTN))
                else "shared"
            )
        else:
            setup.roles[symbol] = "shared"
    if spec.covariate_variant == "linear":
        setup.vector_lengths["beta"] = len(spec.covariate_names)

    # placeholder values for estimated kernel parameters (actual values
    # ride through the estimation setup during fitting and projection)
    probe = {}
    for key, value in kernel_args.items():
        if value is not None:
            probe[key] = value
        else:
            symbol = dict(spec.kernel.keywords)[key]
            strategy = setup.bindings[symbol]
            if isinstance(strategy, Fixed):
                probe[key] = strategy.value
            else:
                probe[key] = {"rho": 0.5, "theta": -0.3}.get(key, 1.0)
    kernel = kernel_from_name(spec.kernel.name, **probe)

    if spec.offsets and bindings.offsets is None:
        raise CoverageError("spec declares an offsets table but none was provided")

    model = ProcessModel(
        Link(spec.link_name),
        covariate,
        systematic,
        SmoothingModel(basis, kernel, spec.order, constraints),
        bindings.populations,
        bindings.times,
        offsets=bindings.offsets if spec.offsets else None,
    )
    return CompiledModel(model=model, setup=setup, projection=spec.projection, spec=spec)


def _kernel_field_name(key: str) -> str:
    return {
        "kappa2": "variance",
        "sigma2": "variance",
        "rho": "rho",
        "theta": "theta",
        "ell": "lengthscale",
        "nu": "nu",
    }[key]


# -------------------------------------------------------------- comparison


_KERNEL_DISPLAY = {
    "matern": "Matérn",
    "white_noise": "independent",
    "ar1": "AR(1)",
    "arma11": "ARMA(1,1)",
    "squared_exponential": "squared exponential",
}

_GROUPING_PHRASES = {
    1: "within world",
    2: "within region, world",
    3: "within sub-region, region, world",
}


@dataclass
class ComparisonTable:
    """Side-by-side rendering of several specs, one column per spec."""

    headers: tuple
    rows: tuple  # ((label, (cell, ...)), ...)

    def cell(self, label: str, column: int) -> str:
        for row_label, cells in self.rows:
            if row_label == label:
                return cells[column]
        raise KeyError(label)

    def render_text(self) -> str:
        widths = [max(len(label) for label, _ in self.rows)]
        for j in range(len(self.headers)):
            widths.append(
                max(len(self.headers[j]), max(len(cells[j]) for _, cells in self.rows))
            )
        lines = []
        header = ["".ljust(widths[0])] + [
            h.ljust(widths[j + 1]) for j, h in enumerate(self.headers)
        ]
        lines.append(" | ".join(header).rstrip())
        lines.append("-+-".join("-" * w for w in widths))
        for label, cells in self.rows:
            parts = [label.ljust(widths[0])] + [
                cells[j].ljust(widths[j + 1]) for j in range(len(self.headers))
            ]
            lines.append(" | ".join(parts).rstrip())
        return "\n".join(lines) + "\n"

    def csv_rows(self) -> list:
        out = [["field"] + list(self.headers)]
        for label, cells in self.rows:
            out.append([label] + list(cells))
        return out


def _display_basis(spec: ModelSpec) -> str:
    if spec.basis.name == "identity":
        return "identity"
    kw = spec.basis.kwargs()
    degree = int(kw.get("degree", 3))
    name = {3: "cubic"}.get(degree, f"degree-{degree}")
    spacing = kw.get("knot_spacing")
    suffix = f", knots every {_format_value(spacing)} years" if spacing else ""
    return f"{name} B-splines{suffix}"


def _display_kernel(spec: ModelSpec) -> str:
    return _KERNEL_DISPLAY.get(spec.kernel.name, spec.kernel.name)


def _display_constraints(spec: ModelSpec) -> str:
    if not spec.constraints:
        return "·"
    parts = []
    for d, call in enumerate(spec.constraints):
        if call.name == "ref":
            kw = call.kwargs()
            if call.positional == ("k_star",):
                body = "{k*}"
            elif "t" in kw:
                body = "{" + _format_value(kw["t"]) + "}"
            else:
                body = "{" + _format_value(call.positional[0]) + "}"
        elif call.name == "sum_all":
            body = "{1, ..., K}"
        else:
            start, stop = call.positional
            stop_text = "K" if stop == "K" else _format_value(stop)
            body = "{" + f"{_format_value(start)}, ..., {stop_text}" + "}"
        parts.append(f"K_{d} = {body}" if len(spec.constraints) > 1 else body)
    return ", ".join(parts)


def _display_projection(spec: ModelSpec) -> str:
    if spec.projection.name == "default":
        return "·"
    kw = spec.projection.kwargs()
    inside = ", ".join(f"{k}={_format_value(v)}" for k, v in kw.items())
    return f"logarithmic pooling ({inside})" if inside else "logarithmic pooling"


def _hier_symbols(spec: ModelSpec) -> list:
    return [s for s, _ in spec.hierarchical] + [s for s, _ in spec.multiplicative_tn]


def _display_levels(spec: ModelSpec) -> str:
    parts = []
    for symbol, options in spec.hierarchical:
        parts.append((symbol, str(int(options.kwargs().get("levels", 1)))))
    for symbol, _ in spec.multiplicative_tn:
        parts.append((symbol, "1"))
    if not parts:
        return "·"
    if len(parts) == 1:
        return parts[0][1]
    return "; ".join(f"{s}: {v}" for s, v in parts)


def _display_groupings(spec: ModelSpec) -> str:
    parts = []
    for symbol, options in spec.hierarchical:
        kw = options.kwargs()
        label = kw.get("label")
        if not label:
            label = "countries " + _GROUPING_PHRASES.get(int(kw.get("levels", 1)), "within world")
        parts.append((symbol, label))
    for symbol, _ in spec.multiplicative_tn:
        parts.append((symbol, "countries within world"))
    if not parts:
        return "·"
    if len(parts) == 1:
        return parts[0][1]
    return "; ".join(f"{s}: {v}" for s, v in parts)


def _display_pi(spec: ModelSpec) -> str:
    parts = []
    for symbol, options in spec.hierarchical:
        parts.append((symbol, options.kwargs().get("pi", "normal")))
    for symbol, _ in spec.multiplicative_tn:
        parts.append((symbol, "truncated normal"))
    if not parts:
        return "·"
    names = {p[1] for p in parts}
    if len(names) == 1:
        return names.pop().replace("truncated_normal", "truncated normal")
    return "; ".join(f"{s}: {v.replace('truncated_normal', 'truncated normal')}" for s, v in parts)


def compare_specs(specs, names=None) -> ComparisonTable:
    """Template-shaped comparison: one column per spec, one row per field."""
    specs = list(specs)
    if len(specs) < 2:
        raise ParameterError("comparison needs at least two specs")
    if names is None:
        names = [f"model {i + 1}" for i in range(len(specs))]

    def dot(value):
        return value if value else "·"

    rows = [
        ("Citation", [dot(s.citation) for s in specs]),
        ("eta_{c,t}", [dot(s.eta_description) for s in specs]),
        ("g1", [s.link_name for s in specs]),
        (
            "Process model formula",
            [f"g1(eta) = {' + '.join(s.formula_terms)}" for s in specs],
        ),
        ("g2", [dot(s.covariate_variant) for s in specs]),
        ("Covariates", [dot(", ".join(s.covariate_names)) for s in specs]),
        ("g3", [dot(s.systematic_variant) for s in specs]),
        ("alpha_c", [dot(s.alpha_text) for s in specs]),
        ("a_{c,t}", ["offsets table" if s.offsets else "·" for s in specs]),
        ("B", [_display_basis(s) for s in specs]),
        ("s(t1,t2)", [_display_kernel(s) for s in specs]),
        ("r", [str(s.order) for s in specs]),
        ("K_{d,c}", [_display_constraints(s) for s in specs]),
        ("Projections", [_display_projection(s) for s in specs]),
        (
            "Fixed",
            [dot(", ".join(f"{sym}={_format_value(v)}" for sym, v in s.fixed)) for s in specs],
        ),
        ("Vague priors", [dot(", ".join(s.vague)) for s in specs]),
        (
            "Informative priors",
            [dot(", ".join(sym for sym, _ in s.informative)) for s in specs],
        ),
        ("Hierarchical model", [dot(", ".join(_hier_symbols(s))) for s in specs]),
        ("Distribution pi", [_display_pi(s) for s in specs]),
        ("Levels", [_display_levels(s) for s in specs]),
        ("Groupings", [_display_groupings(s) for s in specs]),
    ]
    return ComparisonTable(tuple(names), tuple((label, tuple(cells)) for label, cells in rows))
