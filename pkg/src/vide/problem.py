"""Problem model for Volterra integro-differential equations.

An instance describes

    y^(n)(x) = f(x, y) + integral_{x0}^{x} K dt,      x > x0,

with one of the kernel structures

    XT         K(x, t)
    YT         K(y(t), t)
    DYT        K(y(t), y'(t), t)
    Separable  K1(x) * K2(y(t), y'(t), t)
    SystemIntegrand  K(y_1(t), ..., y_d(t), t)

Evaluator calling conventions (``y`` and ``dy`` are always sequences of the
``d`` state components, even when ``d == 1``)::

    f(x, y)          XT.K(x, t)          YT.K(y, t)
    DYT.K(y, dy, t)  Separable.K1(x)     Separable.K2(y, dy, t)
    SystemIntegrand.K(y, t)              exact(x)

Problems are built programmatically, loaded from a key/value (or JSON) problem
file, or taken from the built-in catalog of fourteen test problems.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence, Union

from . import expr as ex

__all__ = [
    "XT",
    "YT",
    "DYT",
    "Separable",
    "SystemIntegrand",
    "KernelForm",
    "ProblemSpec",
    "ValidationReport",
    "ProblemError",
    "ProblemFileError",
    "ValidationError",
    "KERNEL_FORMS",
    "REFERENCE_NODE_COUNTS",
    "builtin",
    "catalog_ids",
    "load",
    "load_path",
    "from_mapping",
    "dumps",
    "validate",
    "zero_kernel",
    "with_interval",
]

Evaluator = Callable[..., float]


@dataclass(frozen=True)
class XT:
    K: Evaluator
    form = "xt"
    needs_dy = False


@dataclass(frozen=True)
class YT:
    K: Evaluator
    form = "yt"
    needs_dy = False


@dataclass(frozen=True)
class DYT:
    K: Evaluator
    form = "dyt"
    needs_dy = True


@dataclass(frozen=True)
class Separable:
    K1: Evaluator
    K2: Evaluator
    uses_dy: bool = True
    form = "separable"

    @property
    def needs_dy(self) -> bool:
        return self.uses_dy


@dataclass(frozen=True)
class SystemIntegrand:
    K: Evaluator
    form = "system"
    needs_dy = False


KernelForm = Union[XT, YT, DYT, Separable, SystemIntegrand]
KERNEL_FORMS = ("xt", "yt", "dyt", "separable", "system")


def zero_kernel() -> YT:
    """A kernel that is identically zero (cheap running-sum form)."""
    return YT(lambda y, t: 0.0)


@dataclass(frozen=True)
class ProblemSpec:
    order: int
    dim: int
    f: tuple[Evaluator, ...]
    kernel: tuple[KernelForm, ...]
    interval: tuple[float, float]
    initial: tuple[float, ...]
    exact: tuple[Evaluator, ...] | None = None
    exact_kind: str = "exact"
    name: str = ""
    # problem-file keys when the instance is expression backed; used by dumps()
    source: Mapping[str, str] | None = field(default=None, compare=False, repr=False)

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]

    @property
    def has_exact(self) -> bool:
        """True when an exact (not merely approximate) reference solution is attached."""
        return self.exact is not None and self.exact_kind == "exact"

    @property
    def needs_dy(self) -> bool:
        return any(k.needs_dy for k in self.kernel)


class ProblemError(ValueError):
    pass


class ProblemFileError(ProblemError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ValidationError(ProblemError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid problem: " + "; ".join(self.violations))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


# --------------------------------------------------------------------------- validation

_PROBE_POINTS = 5


def _probe(report: ValidationReport, label: str, fn: Evaluator, *args) -> None:
    try:
        value = fn(*args)
    except (ArithmeticError, ValueError) as exc:
        report.warnings.append(f"{label}: domain error at x={_args_x(args)}: {exc}")
        return
    if not math.isfinite(value):
        report.warnings.append(f"{label}: non-finite value {value!r} at x={_args_x(args)}")


def _args_x(args: tuple) -> float:
    # the abscissa is the last argument for kernels, the first for f / K1 / exact
    for a in (args[-1], args[0]):
        if isinstance(a, (int, float)):
            return float(a)
    return float("nan")


def validate(spec: ProblemSpec) -> ValidationReport:
    """Check structural invariants and probe every evaluator on the interval.

    Structural problems are violations; evaluator failures at the probe points
    (with the state frozen at the initial values) are warnings.
    """
    report = ValidationReport()
    v = report.violations
    n, d = spec.order, spec.dim
    if n not in (1, 2, 3):
        v.append(f"order: expected 1, 2 or 3, got {n}")
    if d < 1:
        v.append(f"dim: expected >= 1, got {d}")
    if n >= 2 and d != 1:
        v.append(f"higher order (n={n}) requires a scalar equation, got dim={d}")
    x0, xn = spec.interval
    if not (math.isfinite(x0) and math.isfinite(xn)):
        v.append("interval: endpoints must be finite")
    elif not x0 < xn:
        v.append(f"interval: empty interval [{x0}, {xn}]")
    if len(spec.initial) != n * d:
        v.append(f"initial values: expected {n * d}, got {len(spec.initial)}")
    elif not all(math.isfinite(a) for a in spec.initial):
        v.append("initial values: must be finite")
    if len(spec.f) != d:
        v.append(f"f: expected {d} evaluators, got {len(spec.f)}")
    if len(spec.kernel) != d:
        v.append(f"kernel: expected {d} forms, got {len(spec.kernel)}")
    for k in spec.kernel:
        if not isinstance(k, (XT, YT, DYT, Separable, SystemIntegrand)):
            v.append(f"kernel: unsupported form {type(k).__name__}")
    if spec.exact is not None and len(spec.exact) != d:
        v.append(f"exact: expected {d} evaluators, got {len(spec.exact)}")
    if spec.exact_kind not in ("exact", "approximate"):
        v.append(f"exact_kind: expected 'exact' or 'approximate', got {spec.exact_kind!r}")
    if v:
        return report

    y = tuple(spec.initial[:d])
    # derivative values at the initial state: w0 for n >= 2, otherwise unknown -> 0
    dy = tuple(spec.initial[d:2 * d]) if n >= 2 else tuple(0.0 for _ in range(d))
    xs = [x0 + (xn - x0) * j / (_PROBE_POINTS - 1) for j in range(_PROBE_POINTS)]
    for idx in range(d):
        tag = idx + 1
        kern = spec.kernel[idx]
        for x in xs:
            _probe(report, f"f.{tag}", spec.f[idx], x, y)
            if isinstance(kern, XT):
                _probe(report, f"kernel.{tag}.K", kern.K, x, x)
            elif isinstance(kern, (YT, SystemIntegrand)):
                _probe(report, f"kernel.{tag}.K", kern.K, y, x)
            elif isinstance(kern, DYT):
                _probe(report, f"kernel.{tag}.K", kern.K, y, dy, x)
            elif isinstance(kern, Separable):
                # K1 is never evaluated at x0: the integral is empty there
                if x != x0:
                    _probe(report, f"kernel.{tag}.K1", kern.K1, x)
                _probe(report, f"kernel.{tag}.K2", kern.K2, y, dy, x)
            if spec.exact is not None:
                _probe(report, f"exact.{tag}", spec.exact[idx], x)
    return report


# --------------------------------------------------------------------------- problem files

def _state_names(d: int) -> tuple[list[str], list[str], dict[str, str]]:
    if d == 1:
        ys, dys = ["y"], ["dy"]
    else:
        ys = [f"y{k}" for k in range(1, d + 1)]
        dys = [f"dy{k}" for k in range(1, d + 1)]
    access = {name: f"y[{k}]" for k, name in enumerate(ys)}
    access.update({name: f"dy[{k}]" for k, name in enumerate(dys)})
    return ys, dys, access


_KEY_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_.]*)\s*[=:]\s*(.*?)\s*$")


def _parse_text(text: str) -> tuple[dict[str, object], dict[str, int]]:
    """Parse key/value text into a raw mapping plus the line number of each key."""
    raw: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _KEY_RE.match(line)
        if m is None:
            raise ProblemFileError(f"expected 'key = value', got {stripped!r}", lineno)
        key, value = m.group(1), m.group(2)
        if key in raw:
            raise ProblemFileError(f"duplicate key {key!r}", lineno)
        raw[key] = value
        lines[key] = lineno
    return raw, lines


def _reals(value: object, key: str, line: int | None) -> list[float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [s for s in re.split(r"[\s,\[\]]+", str(value)) if s]
    try:
        return [float(a) for a in items]
    except (TypeError, ValueError):
        raise ProblemFileError(f"{key}: expected a list of reals, got {value!r}", line) from None


def _int(value: object, key: str, line: int | None) -> int:
    try:
        out = int(str(value).strip())
    except ValueError:
        raise ProblemFileError(f"{key}: expected an integer, got {value!r}", line) from None
    return out


def from_mapping(
    raw: Mapping[str, object],
    lines: Mapping[str, int] | None = None,
    *,
    check: bool = True,
) -> ProblemSpec:
    """Build a spec from problem-file keys (already split into key -> value)."""
    lines = lines or {}

    def line(key: str) -> int | None:
        return lines.get(key)

    def need(key: str) -> object:
        if key not in raw:
            raise ProblemFileError(f"missing key {key!r}")
        return raw[key]

    order = _int(raw.get("order", 1), "order", line("order"))
    dim = _int(raw.get("dim", 1), "dim", line("dim"))
    if order not in (1, 2, 3):
        raise ProblemFileError(f"order: expected 1, 2 or 3, got {order}", line("order"))
    if dim < 1:
        raise ProblemFileError(f"dim: expected >= 1, got {dim}", line("dim"))
    if order >= 2 and dim != 1:
        raise ProblemFileError(
            f"order {order} requires dim = 1 (higher-order equations must be scalar)",
            line("dim"),
        )
    interval = _reals(need("interval"), "interval", line("interval"))
    if len(interval) != 2:
        raise ProblemFileError("interval: expected two reals", line("interval"))
    initial = _reals(need("initial"), "initial", line("initial"))

    ys, dys, access = _state_names(dim)
    sources: dict[str, str] = {}

    def compile_key(key: str, allowed: Sequence[str], signature: Sequence[str]):
        text = str(need(key))
        try:
            tree = ex.parse(text, allowed)
        except ex.ExprError as exc:
            raise ProblemFileError(f"{key}: {exc}", line(key)) from None
        sources[key] = ex.to_source(tree)
        return tree, ex.to_callable(tree, signature, access)

    f_list = []
    kernels: list[KernelForm] = []
    for k in range(1, dim + 1):
        _, fk = compile_key(f"f.{k}", ["x", *ys], ("x", "y"))
        f_list.append(fk)
        form_key = f"kernel.{k}.form"
        form = str(need(form_key)).strip().lower()
        sources[form_key] = form
        if form == "xt":
            kernels.append(XT(compile_key(f"kernel.{k}.K", ["x", "t"], ("x", "t"))[1]))
        elif form == "yt":
            kernels.append(YT(compile_key(f"kernel.{k}.K", [*ys, "t"], ("y", "t"))[1]))
        elif form == "system":
            kernels.append(
                SystemIntegrand(compile_key(f"kernel.{k}.K", [*ys, "t"], ("y", "t"))[1])
            )
        elif form == "dyt":
            kernels.append(
                DYT(compile_key(f"kernel.{k}.K", [*ys, *dys, "t"], ("y", "dy", "t"))[1])
            )
        elif form == "separable":
            _, k1 = compile_key(f"kernel.{k}.K1", ["x"], ("x",))
            tree2, k2 = compile_key(f"kernel.{k}.K2", [*ys, *dys, "t"], ("y", "dy", "t"))
            kernels.append(Separable(k1, k2, uses_dy=bool(ex.variables(tree2) & set(dys))))
        else:
            raise ProblemFileError(
                f"{form_key}: unknown kernel form {form!r} (expected one of {', '.join(KERNEL_FORMS)})",
                line(form_key),
            )

    exact = None
    exact_keys = [f"exact.{k}" for k in range(1, dim + 1)]
    present = [key in raw for key in exact_keys]
    if any(present):
        if not all(present):
            raise ProblemFileError("exact: give an expression for every component or none")
        exact = tuple(compile_key(key, ["x"], ("x",))[1] for key in exact_keys)
    exact_kind = str(raw.get("exact_kind", "exact")).strip().lower()
    if exact_kind not in ("exact", "approximate"):
        raise ProblemFileError(
            f"exact_kind: expected 'exact' or 'approximate', got {exact_kind!r}",
            line("exact_kind"),
        )
    name = str(raw.get("name", "")).strip()

    spec = ProblemSpec(
        order=order,
        dim=dim,
        f=tuple(f_list),
        kernel=tuple(kernels),
        interval=(interval[0], interval[1]),
        initial=tuple(initial),
        exact=exact,
        exact_kind=exact_kind,
        name=name,
        source=sources,
    )
    if check:
        report = validate(spec)
        if not report.ok:
            raise ValidationError(report.violations)
    return spec


def load(text: str) -> ProblemSpec:
    """Load a problem from key/value text, or from JSON when the text is a JSON object."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProblemFileError(f"invalid JSON: {exc.msg}", exc.lineno) from None
        if not isinstance(raw, dict):
            raise ProblemFileError("JSON problem must be an object")
        return from_mapping(raw)
    raw, lines = _parse_text(text)
    return from_mapping(raw, lines)


def load_path(path) -> ProblemSpec:
    with open(path, encoding="utf-8") as fh:
        return load(fh.read())


def _fmt_real(value: float) -> str:
    return repr(float(value))


def dumps(spec: ProblemSpec) -> str:
    """Print an expression-backed spec in the key/value problem-file format."""
    if spec.source is None:
        raise ProblemError("only expression-backed problems can be printed")
    out = []
    if spec.name:
        out.append(f"name = {spec.name}")
    out.append(f"order = {spec.order}")
    out.append(f"dim = {spec.dim}")
    out.append(f"interval = {_fmt_real(spec.interval[0])} {_fmt_real(spec.interval[1])}")
    out.append("initial = " + " ".join(_fmt_real(a) for a in spec.initial))
    src = spec.source
    for k in range(1, spec.dim + 1):
        out.append(f"f.{k} = {src[f'f.{k}']}")
        form = src[f"kernel.{k}.form"]
        out.append(f"kernel.{k}.form = {form}")
        for part in ("K", "K1", "K2"):
            key = f"kernel.{k}.{part}"
            if key in src:
                out.append(f"{key} = {src[key]}")
    if spec.exact is not None:
        for k in range(1, spec.dim + 1):
            out.append(f"exact.{k} = {src[f'exact.{k}']}")
        out.append(f"exact_kind = {spec.exact_kind}")
    return "\n".join(out) + "\n"


def with_interval(spec: ProblemSpec, a: float, b: float) -> ProblemSpec:
    """Pose ``spec`` on ``[a, b]``.

    For first-order problems with a reference solution the initial values are
    re-derived from it at ``a``; otherwise the existing initial values are
    taken to hold at ``a``.  Moving the left end also moves the lower limit of
    the memory integral, so the reference no longer solves the new problem and
    is dropped in that case.
    """
    a, b = float(a), float(b)
    initial = spec.initial
    if spec.exact is not None and spec.order == 1:
        initial = tuple(float(e(a)) for e in spec.exact)
    keep_exact = a == spec.interval[0]
    exact = spec.exact if keep_exact else None
    exact_kind = spec.exact_kind if keep_exact else "exact"
    source = None
    if spec.source is not None:
        source = {
            k: v
            for k, v in spec.source.items()
            if keep_exact or not (k.startswith("exact.") or k == "exact_kind")
        }
        source["interval"] = f"{a!r} {b!r}"
        source["initial"] = " ".join(repr(v) for v in initial)
    return replace(
        spec, interval=(a, b), initial=initial, exact=exact, exact_kind=exact_kind, source=source
    )


# --------------------------------------------------------------------------- catalog

# g(x) of example 4
_G4 = (
    "(-27*sin(x) + 27*x^4*cos(x) - 42*x^2*cos(x) + 2*x^2*cos(x)^3"
    " - 9*x^4*cos(x)^3 - 42*x^3*sin(x) + 6*x^3*cos(x)^2*sin(x) + 40*x^2)"
    " / (27*cos(x))"
)

_CATALOG: dict[int, dict[str, str]] = {
    1: {
        "f.1": "-1",
        "kernel.1.form": "yt", "kernel.1.K": "y^2",
        "exact.1": "(-x + x^4/28)/(1 + x^3/21)", "exact_kind": "approximate",
        "initial": "0",
    },
    2: {
        "f.1": "1",
        "kernel.1.form": "dyt", "kernel.1.K": "y*dy",
        "exact.1": "sqrt(2)*tan(x/sqrt(2))",
        "initial": "0",
    },
    3: {
        "f.1": "cos(x) - x/2 - sin(2*x)/4",
        "kernel.1.form": "dyt", "kernel.1.K": "dy^2",
        "exact.1": "sin(x)",
        "initial": "0",
    },
    4: {
        "f.1": f"{_G4}*y",
        "kernel.1.form": "separable", "kernel.1.K1": "x^2", "kernel.1.K2": "-t^2*dy^3",
        "exact.1": "cos(x)",
        "initial": "1",
    },
    5: {
        "f.1": "(-exp(x) - x^2*exp(2*x)/3)*y^2",
        "kernel.1.form": "separable", "kernel.1.K1": "1/x", "kernel.1.K2": "t^2",
        "exact.1": "exp(-x)",
        "initial": "1",
    },
    6: {
        "f.1": "(x^2 + x + 3)/(3*(x + 1)) + (2*x^3 - 3*x^2)/18 - y*(x^3 + 1)/3",
        "kernel.1.form": "yt", "kernel.1.K": "y*t^2",
        "exact.1": "ln(1 + x)",
        "initial": "0",
    },
    7: {
        "f.1": "3*x^2 - x^4/3",
        "kernel.1.form": "separable", "kernel.1.K1": "x", "kernel.1.K2": "t^2",
        "exact.1": "x^3",
        "initial": "0",
    },
    8: {
        "f.1": "y - x^2*exp(x)/2",
        "kernel.1.form": "separable", "kernel.1.K1": "exp(x)", "kernel.1.K2": "t",
        "exact.1": "exp(x)",
        "initial": "1",
    },
    9: {
        "f.1": "(2*x^3 + 2*x)/(y + 1) - x^5/4",
        "kernel.1.form": "separable", "kernel.1.K1": "x", "kernel.1.K2": "y*t",
        "exact.1": "x^2",
        "initial": "0",
    },
    10: {
        "order": "2",
        "f.1": "x*cosh(x)",
        "kernel.1.form": "yt", "kernel.1.K": "-y*t",
        "exact.1": "sinh(x)",
        "initial": "0 1",
    },
    11: {
        "order": "2",
        "f.1": "((ln(1 + x) - 1)*(x + 1) + 1)/((x^2 + 1)*(4*x^2 + 4*x + 1))*y^2",
        "kernel.1.form": "separable", "kernel.1.K1": "-1/(x^2 + 1)", "kernel.1.K2": "ln(t + 1)",
        "exact.1": "2*x + 1",
        "initial": "1 2",
    },
    12: {
        "order": "3",
        "f.1": "exp(x) + exp(-x) - 1",
        "kernel.1.form": "yt", "kernel.1.K": "1/y",
        "exact.1": "exp(x)",
        "initial": "1 1 1",
    },
    13: {
        "dim": "2",
        "f.1": "2*x - x^5/5 - x^10/10",
        "kernel.1.form": "system", "kernel.1.K": "y1^2 + y2^3",
        "f.2": "3*x^2",
        "kernel.2.form": "system", "kernel.2.K": "y1^3 - y2^2",
        "exact.1": "x^2", "exact.2": "x^3",
        "initial": "0 0",
    },
    14: {
        "dim": "2",
        "f.1": "1 + x + x^2 - y2",
        "kernel.1.form": "system", "kernel.1.K": "-(y1 + y2)",
        "f.2": "-1 - x + y1",
        "kernel.2.form": "system", "kernel.2.K": "-(y1 - y2)",
        "exact.1": "x + exp(x)", "exact.2": "x - exp(x)",
        "initial": "1 -1",
    },
}

# reference node counts (N1 at eps = 1e-6, N2 at eps = 1e-12) for each example
REFERENCE_NODE_COUNTS: dict[int, tuple[int, int]] = {
    1: (19, 1892),
    2: (86, 8513),
    3: (124, 12322),
    4: (38, 3718),
    5: (34, 3344),
    6: (17, 1642),
    7: (26, 2570),
    8: (45, 4463),
    9: (33, 3238),
    10: (30, 2937),
    11: (13, 1235),
    12: (33, 3286),
    13: (83, 8201),
    14: (30, 2939),
}


def catalog_ids() -> list[int]:
    return sorted(_CATALOG)


def catalog_source(id: int) -> dict[str, str]:
    """Raw problem-file keys of catalog entry ``id``."""
    if id not in _CATALOG:
        raise ProblemError(f"unknown example {id!r} (expected 1..{len(_CATALOG)})")
    raw = {"name": f"example {id}", "interval": "0 1"}
    raw.update(_CATALOG[id])
    return raw


def builtin(id: int) -> ProblemSpec:
    """Catalog example ``id`` (1..14), posed on [0, 1]."""
    return from_mapping(catalog_source(id))
