"""Experiment configuration: structured-text parsing with full error
collection, expression-defined coefficients, and the named-constants table.

The format is key = value lines inside [section] headers.  Coefficients
(beta, f, the dissipation envelope D, initial data) are expressions in
x, y, z and u parsed symbolically, so the u-derivatives of f are exact.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any

import numpy as np
import sympy

from .domain import Field, Grid, NonlinearitySpec, build_grid
from .errors import ConfigError
from .semiflow import SemiflowConfig
from .spectral import ConstantEntry, ConstantsTable, SpectralConfig

ENV_CONSTANTS_FILE = "ATTRACTOR_DIM_CONSTANTS"

_X, _Y, _Z, _U = sympy.symbols("x y z u")
_ALLOWED_FUNCS = {
    "sin": sympy.sin, "cos": sympy.cos, "tan": sympy.tan, "exp": sympy.exp,
    "log": sympy.log, "sqrt": sympy.sqrt, "tanh": sympy.tanh, "cosh": sympy.cosh,
    "sinh": sympy.sinh, "abs": sympy.Abs, "Abs": sympy.Abs, "pi": sympy.pi,
    "E": sympy.E, "min": sympy.Min, "max": sympy.Max,
}
_LOCALS = {"x": _X, "y": _Y, "z": _Z, "u": _U, **_ALLOWED_FUNCS}


class ExpressionError(ValueError):
    pass


def parse_expression(text: str, allow_u: bool = False) -> sympy.Expr:
    try:
        expr = sympy.parse_expr(text, local_dict=_LOCALS, evaluate=True)
    except Exception as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc}") from exc
    allowed = {_X, _Y, _Z} | ({_U} if allow_u else set())
    extra = expr.free_symbols - allowed
    if extra:
        names = ", ".join(sorted(str(s) for s in extra))
        raise ExpressionError(f"expression {text!r} uses unknown symbols: {names}")
    return expr


def _lambdify(expr: sympy.Expr, with_u: bool):
    args = (_X, _Y, _Z, _U) if with_u else (_X, _Y, _Z)
    fn = sympy.lambdify(args, expr, modules="numpy")

    def wrapped(*arrays):
        out = fn(*arrays)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), np.shape(arrays[0]))

    return wrapped


def spatial_field(grid: Grid, expr: sympy.Expr) -> Field:
    x, y, z = grid.node_coordinates()
    return Field(grid, np.array(_lambdify(expr, with_u=False)(x, y, z)))


def nonlinearity_from_expression(
    expr: sympy.Expr, growth_c: float, growth_gamma: float,
    q: float = 2.0, sigma: float = 2.0,
) -> NonlinearitySpec:
    d1 = sympy.diff(expr, _U)
    d2 = sympy.diff(expr, _U, 2)
    return NonlinearitySpec(
        value=_lambdify(expr, with_u=True),
        du=_lambdify(d1, with_u=True),
        duu=_lambdify(d2, with_u=True),
        growth_c=growth_c,
        growth_gamma=growth_gamma,
        q=q,
        sigma=sigma,
        description=str(expr),
    )


# ---------------------------------------------------------------------------
# raw structured-text parsing with line numbers

@dataclass
class RawValue:
    text: str
    line: int


def _parse_sections(text: str) -> tuple[dict[str, dict[str, RawValue]], list[str]]:
    sections: dict[str, dict[str, RawValue]] = {}
    errors: list[str] = []
    current: dict[str, RawValue] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if not name:
                errors.append(f"line {lineno}: empty section name")
                current = None
                continue
            if name in sections:
                errors.append(f"line {lineno}: duplicate section [{name}]")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        if current is None:
            errors.append(f"line {lineno}: key outside any [section]")
            continue
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if not key:
            errors.append(f"line {lineno}: empty key")
            continue
        if key in current:
            errors.append(
                f"line {lineno}: duplicate key {key!r} (first defined on "
                f"line {current[key].line})"
            )
            continue
        current[key] = RawValue(value, lineno)
    return sections, errors


# ---------------------------------------------------------------------------
# validated configuration

@dataclass(frozen=True)
class DimensionSettings:
    d_max: int = 4
    margin: float = 1e-3
    ensemble: tuple[str, ...] = ("0",)
    ensemble_random: int = 0
    ensemble_amplitude: float = 0.1
    settle_fraction: float = 0.2
    reortho_stride: int = 1
    set_h1: float | None = None
    set_l52: float | None = None
    set_l6: float | None = None


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    formats: tuple[str, ...] = ("json", "csv", "svg")
    save_fields: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    grid: Grid
    beta_expr: str
    f_expr: str
    u0_expr: str
    d_expr: str | None
    growth_c: float
    growth_gamma: float
    q: float
    sigma: float
    growth_check_range: float
    time: SemiflowConfig
    spectral: SpectralConfig
    dimension: DimensionSettings
    constants: ConstantsTable
    output: OutputSettings

    def canonical_dict(self) -> dict[str, Any]:
        return {
            "grid": {
                "extents": [list(e) for e in self.grid.extents],
                "shape": list(self.grid.shape),
            },
            "problem": {
                "beta": self.beta_expr,
                "f": self.f_expr,
                "u0": self.u0_expr,
                "d_potential": self.d_expr,
                "growth_c": self.growth_c,
                "growth_gamma": self.growth_gamma,
                "q": self.q,
                "sigma": self.sigma,
                "growth_check_range": self.growth_check_range,
            },
            "time": {
                "dt": self.time.dt,
                "t_end": self.time.t_end,
                "scheme": self.time.scheme,
                "newton_tol": self.time.newton_tol,
                "newton_max_iter": self.time.newton_max_iter,
                "alpha": self.time.alpha,
                "blowup_threshold": self.time.blowup_threshold,
                "snapshot_stride": self.time.snapshot_stride,
            },
            "spectral": {
                "k_eigs": self.spectral.k_eigs,
                "method": self.spectral.method,
                "tol": self.spectral.tol,
                "max_iter": self.spectral.max_iter,
            },
            "dimension": {
                "d_max": self.dimension.d_max,
                "margin": self.dimension.margin,
                "ensemble": list(self.dimension.ensemble),
                "ensemble_random": self.dimension.ensemble_random,
                "ensemble_amplitude": self.dimension.ensemble_amplitude,
                "settle_fraction": self.dimension.settle_fraction,
                "reortho_stride": self.dimension.reortho_stride,
                "set_h1": self.dimension.set_h1,
                "set_l52": self.dimension.set_l52,
                "set_l6": self.dimension.set_l6,
            },
            "constants": {
                **{k: [v.value, v.provenance] for k, v in sorted(self.constants.entries.items())},
                "delta": self.constants.delta,
            },
            "output": {
                "directory": self.output.directory,
                "formats": list(self.output.formats),
                "save_fields": self.output.save_fields,
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def nonlinearity(self) -> NonlinearitySpec:
        return nonlinearity_from_expression(
            parse_expression(self.f_expr, allow_u=True),
            self.growth_c, self.growth_gamma, self.q, self.sigma,
        )

    def beta_field(self) -> Field:
        return spatial_field(self.grid, parse_expression(self.beta_expr))

    def u0_field(self) -> Field:
        return spatial_field(self.grid, parse_expression(self.u0_expr))

    def d_field(self) -> Field | None:
        if self.d_expr is None:
            return None
        return spatial_field(self.grid, parse_expression(self.d_expr))

    def ensemble_fields(self, rng: np.random.Generator) -> list[Field]:
        members = [
            spatial_field(self.grid, parse_expression(expr))
            for expr in self.dimension.ensemble
        ]
        for _ in range(self.dimension.ensemble_random):
            noise = self.dimension.ensemble_amplitude * rng.standard_normal(self.grid.dof)
            members.append(Field(self.grid, noise))
        return members


class _Validator:
    """Collects every validation error instead of failing fast."""

    def __init__(self, sections: dict[str, dict[str, RawValue]]):
        self.sections = sections
        self.errors: list[str] = []
        self.seen: dict[str, set[str]] = {name: set() for name in sections}

    def error(self, raw: RawValue | None, message: str):
        prefix = f"line {raw.line}: " if raw is not None else ""
        self.errors.append(prefix + message)

    def take(self, section: str, key: str, kind: str, default=None, required=False):
        sec = self.sections.get(section)
        raw = sec.get(key) if sec else None
        if sec is not None and key in sec:
            self.seen[section].add(key)
        if raw is None:
            if required:
                self.error(None, f"missing required key {key!r} in section [{section}]")
            return default
        return self._convert(raw, kind, section, key)

    def _convert(self, raw: RawValue, kind: str, section: str, key: str):
        text = raw.text
        try:
            if kind == "float":
                return float(text)
            if kind == "int":
                val = float(text)
                if val != int(val):
                    raise ValueError("not an integer")
                return int(val)
            if kind == "bool":
                low = text.lower()
                if low in ("true", "yes", "1", "on"):
                    return True
                if low in ("false", "no", "0", "off"):
                    return False
                raise ValueError("not a boolean")
            if kind == "str":
                return text
            if kind == "pair":
                parts = [float(p) for p in text.replace(",", " ").split()]
                if len(parts) != 2:
                    raise ValueError("expected two numbers")
                return (parts[0], parts[1])
            if kind == "triple_int":
                parts = [int(p) for p in text.replace(",", " ").split()]
                if len(parts) != 3:
                    raise ValueError("expected three integers")
                return tuple(parts)
            if kind == "strlist":
                return tuple(p.strip() for p in text.split(";") if p.strip())
            if kind == "expr":
                parse_expression(text, allow_u=False)
                return text
            if kind == "expr_u":
                parse_expression(text, allow_u=True)
                return text
        except ExpressionError as exc:
            self.error(raw, str(exc))
            return None
        except ValueError as exc:
            self.error(raw, f"[{section}] {key} = {text!r}: {exc}")
            return None
        raise AssertionError(f"unknown kind {kind}")

    def reject_unknown(self, known_sections: dict[str, set[str]]):
        for name, body in self.sections.items():
            if name not in known_sections:
                line = min(v.line for v in body.values()) if body else 0
                self.error(None, f"unknown section [{name}] (near line {line})")
                continue
            for key, raw in body.items():
                if key not in self.seen.get(name, set()):
                    self.error(raw, f"unknown key {key!r} in section [{name}]")


_KNOWN = {
    "grid": {"x", "y", "z", "points"},
    "problem": {
        "beta", "f", "u0", "d_potential", "growth_c", "growth_gamma", "q",
        "sigma", "growth_check_range",
    },
    "time": {
        "dt", "t_end", "scheme", "newton_tol", "newton_max_iter", "alpha",
        "blowup_threshold", "snapshot_stride",
    },
    "spectral": {"k_eigs", "method", "tol", "max_iter"},
    "dimension": {
        "d_max", "margin", "ensemble", "ensemble_random", "ensemble_amplitude",
        "settle_fraction", "reortho_stride", "set_h1", "set_l52", "set_l6",
    },
    "constants": set(),  # dynamic keys, validated separately
    "output": {"directory", "formats", "save_fields"},
}

_CONSTANT_PREFIXES = ("m_b", "m_q_", "k_lt_", "c_clr_", "m_heat")


def _parse_constants(
    sections: dict[str, dict[str, RawValue]], val: _Validator
) -> ConstantsTable:
    body = sections.get("constants", {})
    delta = 0.5
    entries: dict[str, ConstantEntry] = {}
    numeric: dict[str, tuple[float, RawValue]] = {}
    prov: dict[str, str] = {}
    for key, raw in body.items():
        val.seen.setdefault("constants", set()).add(key)
        if key == "delta":
            try:
                delta = float(raw.text)
            except ValueError:
                val.error(raw, f"delta = {raw.text!r}: not a number")
                continue
            if not (0.0 < delta < 1.0):
                val.error(raw, "delta must lie in (0,1)")
            continue
        if key.endswith("_provenance"):
            prov[key[: -len("_provenance")]] = raw.text
            continue
        if not key.startswith(_CONSTANT_PREFIXES):
            val.error(raw, f"unknown constant key {key!r}")
            continue
        try:
            numeric[key] = (float(raw.text), raw)
        except ValueError:
            val.error(raw, f"{key} = {raw.text!r}: not a number")
    for key, (value, raw) in numeric.items():
        if key not in prov:
            val.error(
                raw,
                f"constant {key!r} lacks a provenance string "
                f"({key}_provenance); refusing to use it",
            )
            continue
        if value <= 0:
            val.error(raw, f"constant {key!r} must be positive")
            continue
        entries[key] = ConstantEntry(value, prov[key])
    for pkey in prov:
        if pkey not in numeric:
            val.error(None, f"provenance given for missing constant {pkey!r}")
    if not (0.0 < delta < 1.0):
        delta = 0.5
    return ConstantsTable(entries=entries, delta=delta)


def _merge_env_constants(table: ConstantsTable) -> ConstantsTable:
    """Fill constants absent from the config from the file named by the
    ATTRACTOR_DIM_CONSTANTS environment variable, then from the defaults."""
    from .spectral import default_constants

    merged = dict(table.entries)
    path = os.environ.get(ENV_CONSTANTS_FILE)
    if path and os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            sections, errs = _parse_sections(fh.read())
        if not errs and "constants" in sections:
            val = _Validator(sections)
            env_table = _parse_constants(sections, val)
            if not val.errors:
                for key, entry in env_table.entries.items():
                    merged.setdefault(key, entry)
    for key, entry in default_constants(table.delta).entries.items():
        merged.setdefault(key, entry)
    return ConstantsTable(entries=merged, delta=table.delta)


def parse_config(text: str, use_env_constants: bool = True) -> ExperimentConfig:
    """Validate structured text into an ExperimentConfig.

    Raises ConfigError carrying the full list of problems (with line
    numbers); the parse is not fail-fast.
    """
    sections, errors = _parse_sections(text)
    val = _Validator(sections)
    val.errors.extend(errors)

    if "grid" not in sections:
        val.error(None, "missing required section [grid]")
    if "problem" not in sections:
        val.error(None, "missing required section [problem]")

    ex = val.take("grid", "x", "pair", default=(0.0, 1.0))
    ey = val.take("grid", "y", "pair", default=(0.0, 1.0))
    ez = val.take("grid", "z", "pair", default=(0.0, 1.0))
    pts = val.take("grid", "points", "triple_int", required="grid" in sections,
                   default=(4, 4, 4))

    beta = val.take("problem", "beta", "expr", default="0")
    f_expr = val.take("problem", "f", "expr_u",
                      required="problem" in sections, default="0")
    u0 = val.take("problem", "u0", "expr", default="0")
    d_expr = val.take("problem", "d_potential", "expr", default=None)
    growth_c = val.take("problem", "growth_c", "float", default=6.0)
    growth_gamma = val.take("problem", "growth_gamma", "float", default=2.0)
    q = val.take("problem", "q", "float", default=2.0)
    sigma = val.take("problem", "sigma", "float", default=2.0)
    check_range = val.take("problem", "growth_check_range", "float", default=4.0)

    dt = val.take("time", "dt", "float", default=1e-3)
    t_end = val.take("time", "t_end", "float", default=0.5)
    scheme = val.take("time", "scheme", "str", default="imex-euler")
    newton_tol = val.take("time", "newton_tol", "float", default=1e-10)
    newton_max = val.take("time", "newton_max_iter", "int", default=30)
    alpha = val.take("time", "alpha", "float", default=0.25)
    blowup = val.take("time", "blowup_threshold", "float", default=1e8)
    stride = val.take("time", "snapshot_stride", "int", default=1)

    k_eigs = val.take("spectral", "k_eigs", "int", default=6)
    method = val.take("spectral", "method", "str", default="iterative")
    tol = val.take("spectral", "tol", "float", default=1e-9)
    max_iter = val.take("spectral", "max_iter", "int", default=10_000)

    d_max = val.take("dimension", "d_max", "int", default=4)
    margin = val.take("dimension", "margin", "float", default=1e-3)
    ensemble = val.take("dimension", "ensemble", "strlist", default=("0",))
    ens_rand = val.take("dimension", "ensemble_random", "int", default=0)
    ens_amp = val.take("dimension", "ensemble_amplitude", "float", default=0.1)
    settle = val.take("dimension", "settle_fraction", "float", default=0.2)
    reortho = val.take("dimension", "reortho_stride", "int", default=1)
    set_h1 = val.take("dimension", "set_h1", "float", default=None)
    set_l52 = val.take("dimension", "set_l52", "float", default=None)
    set_l6 = val.take("dimension", "set_l6", "float", default=None)

    directory = val.take("output", "directory", "str", default="out")
    formats = val.take("output", "formats", "strlist", default=("json", "csv", "svg"))
    save_fields = val.take("output", "save_fields", "bool", default=False)

    table = _parse_constants(sections, val)
    val.reject_unknown(_KNOWN)

    if ensemble is not None:
        for expr in ensemble:
            try:
                parse_expression(expr, allow_u=False)
            except ExpressionError as exc:
                val.error(None, f"[dimension] ensemble member: {exc}")

    # range checks that do not require building objects
    if method not in (None, "dense-oracle", "iterative"):
        val.error(None, f"[spectral] method must be dense-oracle or iterative, got {method!r}")
    if q is not None and not (1.2 < q <= 2.0):
        val.error(None, f"[problem] q must lie in (6/5, 2], got {q}")
    if sigma is not None and not (sigma > 1.5):
        val.error(None, f"[problem] sigma must exceed 3/2, got {sigma}")
    if growth_gamma is not None and not (2.0 <= growth_gamma < 3.0):
        val.error(None, f"[problem] growth_gamma must lie in [2, 3), got {growth_gamma}")
    if alpha is not None and not (0.0 < alpha <= 0.5):
        val.error(None, f"[time] alpha must lie in (0, 1/2], got {alpha}")
    if margin is not None and margin < 0:
        val.error(None, "[dimension] margin must be nonnegative")

    if val.errors:
        raise ConfigError(val.errors)

    try:
        grid = build_grid([ex, ey, ez], pts)
        time_cfg = SemiflowConfig(
            dt=dt, t_end=t_end, scheme=scheme, newton_tol=newton_tol,
            newton_max_iter=newton_max, alpha=alpha,
            blowup_threshold=blowup, snapshot_stride=stride,
        )
        spectral_cfg = SpectralConfig(k_eigs=k_eigs, method=method, tol=tol,
                                      max_iter=max_iter)
    except Exception as exc:
        raise ConfigError([str(exc)]) from exc

    if use_env_constants:
        table = _merge_env_constants(table)

    cfg = ExperimentConfig(
        grid=grid,
        beta_expr=beta,
        f_expr=f_expr,
        u0_expr=u0,
        d_expr=d_expr,
        growth_c=growth_c,
        growth_gamma=growth_gamma,
        q=q,
        sigma=sigma,
        growth_check_range=check_range,
        time=time_cfg,
        spectral=spectral_cfg,
        dimension=DimensionSettings(
            d_max=d_max, margin=margin, ensemble=tuple(ensemble),
            ensemble_random=ens_rand, ensemble_amplitude=ens_amp,
            settle_fraction=settle, reortho_stride=reortho,
            set_h1=set_h1, set_l52=set_l52, set_l6=set_l6,
        ),
        constants=table,
        output=OutputSettings(
            directory=directory, formats=tuple(formats), save_fields=save_fields
        ),
    )
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
