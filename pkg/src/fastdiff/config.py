"""TOML run configuration.

A configuration file has the tables ``[problem]``, ``[initial_data]``,
``[flux]``, ``[grid]``, ``[stepper]``, ``[checks]``, ``[continuation]``,
``[expansion]``, ``[planar]``, ``[sweep]`` and ``[output]`` plus a top-level
``seed``.  Every table is optional; defaults are those of the shipped
reference configuration (``fastdiff/data/reference.toml``).  Unknown keys are
rejected with the offending key and line.
"""
from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ParseError
from .flux import ConstantFlux, FluxSchedule, flux_from_dict
from .model import (
    ConstantProfile,
    Hole,
    ProblemSpec,
    SingularDataParams,
    alpha_flux,
    make_singular_initial_data,
    q_min,
    validate_spec,
)
from .radial import StepperConfig

DEFAULT_CHECKS = {
    "mass_balance": 1e-8,
    "l1_contraction": 1e-8,
    "aronson_benilan": 1e-6,
    "barrier_lower": 1e-10,
    "barrier_upper": 1e-8,
    "global_bound": 1e-8,
    "clamp_insensitivity": 1e-8,
}

_PROBLEM_KEYS = {"n", "m", "q", "p", "outer_radius", "delta1", "C1", "C2", "t_end", "holes"}
_HOLE_KEYS = {"center", "radius"}
_INITIAL_KEYS = {"kind", "value", "envelope"}
_FLUX_KEYS = {"scaling_mode", "outer", "holes", "monotone_decreasing"}
_GRID_KEYS = {"N", "grading", "per_octave"}
_CONT_KEYS = {"j_max", "ratio", "eps0", "sample_dt"}
_EXP_KEYS = {"radii"}
_PLANAR_KEYS = {"h", "outer", "outer_radius", "rectangle"}
_OUTPUT_KEYS = {"dir", "plots", "timestamps"}
_STEPPER_KEYS = {f.name for f in fields(StepperConfig)}
_TOP_KEYS = {
    "seed", "problem", "initial_data", "flux", "grid", "stepper", "checks",
    "continuation", "expansion", "planar", "sweep", "output",
}


@dataclass(frozen=True)
class GridSettings:
    N: int = 400
    grading: str = "geometric"
    per_octave: int | None = None


@dataclass(frozen=True)
class ContinuationSettings:
    j_max: int = 4
    ratio: float = 0.5
    eps0: float | None = None
    sample_dt: float = 0.05


@dataclass(frozen=True)
class PlanarSettings:
    h: float | None = None
    outer: str = "disk"
    outer_radius: float | None = None
    rectangle: tuple | None = None


@dataclass(frozen=True)
class RunConfig:
    spec: ProblemSpec
    t_end: float = 1.0
    grid: GridSettings = GridSettings()
    stepper: StepperConfig = StepperConfig()
    checks: dict = field(default_factory=lambda: dict(DEFAULT_CHECKS))
    continuation: ContinuationSettings = ContinuationSettings()
    radii: tuple = (2.0, 4.0, 8.0)
    planar: PlanarSettings = PlanarSettings()
    sweep: dict = field(default_factory=dict)
    out_dir: str = "out"
    plots: bool = True
    timestamps: bool = False
    seed: int = 0
    source: dict = field(default_factory=dict, repr=False, compare=False)
    notices: tuple = ()

    def with_tolerances(self, overrides):
        """Copy with ``checks`` entries replaced; unknown names raise ParseError."""
        checks = dict(self.checks)
        for name, val in overrides.items():
            if name not in checks:
                raise ParseError(f"unknown check {name!r}", key=name)
            checks[name] = float(val)
        return replace(self, checks=checks)


def reference_config_path():
    return resources.files("fastdiff") / "data" / "reference.toml"


def _line_of(text, key):
    pat = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=", re.M)
    mt = pat.search(text)
    if mt is None:
        pat = re.compile(rf"^\s*\[+\s*{re.escape(key)}\s*\]+", re.M)
        mt = pat.search(text)
    return text.count("\n", 0, mt.start()) + 1 if mt else None


def _check_keys(table, allowed, where, text):
    if not isinstance(table, dict):
        raise ParseError(f"{where} must be a table", key=where, line=_line_of(text, where.split(".")[-1]))
    for key in table:
        if key not in allowed:
            raise ParseError(f"unknown key {key!r} in {where}", key=f"{where}.{key}", line=_line_of(text, key))


def _hole_flux(entry, alpha):
    if isinstance(entry, str):
        if entry != "alpha":
            raise ParseError(f"hole flux string must be 'alpha', got {entry!r}", key="flux.holes")
        return ConstantFlux(alpha)
    if isinstance(entry, dict) and entry.get("amplitude") == "alpha":
        entry = dict(entry, amplitude=alpha)
    return flux_from_dict(entry)


def config_from_dict(data, text="", validate=True):
    """Build a :class:`RunConfig` from parsed TOML data."""
    _check_keys(data, _TOP_KEYS, "<root>", text)
    notices = []
    prob = dict(data.get("problem", {}))
    _check_keys(prob, _PROBLEM_KEYS, "problem", text)
    n = prob.get("n", 3)
    m = float(prob.get("m", 1.0 / 3.0))
    if "q" in prob:
        q = float(prob["q"])
    else:
        q = float(math.ceil(q_min(n, m)))
        notices.append(f"q not given; using ceil(max(n/(2m), (n-2)/m)) = {q:g}")
    delta1 = float(prob.get("delta1", 0.4))
    C1 = float(prob.get("C1", 1.0))
    C2 = float(prob.get("C2", 1.0))
    holes = []
    for i, hd in enumerate(prob.get("holes", [{"center": [0.0] * int(n), "radius": 0.1}])):
        _check_keys(hd, _HOLE_KEYS, f"problem.holes[{i}]", text)
        holes.append(Hole(tuple(float(c) for c in hd.get("center", [0.0] * int(n))), float(hd.get("radius", 0.1))))

    init = dict(data.get("initial_data", {}))
    _check_keys(init, _INITIAL_KEYS, "initial_data", text)
    kind = init.get("kind", "singular")
    if kind == "singular":
        profile = make_singular_initial_data(SingularDataParams(C1, C2, q, delta1), init.get("envelope", "geometric"))
    elif kind == "constant":
        profile = ConstantProfile(float(init.get("value", 1.0)))
    else:
        raise ParseError(f"unknown initial_data kind {kind!r}", key="initial_data.kind", line=_line_of(text, "kind"))

    fl = dict(data.get("flux", {}))
    _check_keys(fl, _FLUX_KEYS, "flux", text)
    alpha = alpha_flux(m, q, delta1)
    g_entries = fl.get("holes", ["alpha"] * len(holes))
    if len(g_entries) != len(holes):
        raise ParseError("flux.holes must have one entry per hole", key="flux.holes", line=_line_of(text, "holes"))
    try:
        schedule = FluxSchedule(
            flux_from_dict(fl.get("outer", 0.0)),
            tuple(_hole_flux(e, alpha) for e in g_entries),
            fl.get("scaling_mode", "paper_scaled"),
            fl.get("monotone_decreasing"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad flux table: {exc}", key="flux") from None

    spec = ProblemSpec(
        n=n, m=m, q=q, p=float(prob.get("p", 2.0)), outer_radius=float(prob.get("outer_radius", 1.0)),
        holes=tuple(holes), delta1=delta1, initial_data=profile, schedule=schedule, C1=C1, C2=C2,
    )
    gd = dict(data.get("grid", {}))
    _check_keys(gd, _GRID_KEYS, "grid", text)
    st = dict(data.get("stepper", {}))
    _check_keys(st, _STEPPER_KEYS, "stepper", text)
    ch = dict(data.get("checks", {}))
    _check_keys(ch, set(DEFAULT_CHECKS), "checks", text)
    co = dict(data.get("continuation", {}))
    _check_keys(co, _CONT_KEYS, "continuation", text)
    ex = dict(data.get("expansion", {}))
    _check_keys(ex, _EXP_KEYS, "expansion", text)
    pl = dict(data.get("planar", {}))
    _check_keys(pl, _PLANAR_KEYS, "planar", text)
    out = dict(data.get("output", {}))
    _check_keys(out, _OUTPUT_KEYS, "output", text)
    sweep = dict(data.get("sweep", {}))
    for key in sweep:
        table, _, name = key.partition(".")
        allowed = {"problem": _PROBLEM_KEYS - {"holes"}, "grid": _GRID_KEYS, "stepper": _STEPPER_KEYS}.get(table)
        if allowed is None or name not in allowed or not isinstance(sweep[key], list):
            raise ParseError(f"bad sweep parameter {key!r}", key=f"sweep.{key}", line=_line_of(text, key))

    try:
        stepper = StepperConfig(**st)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad stepper table: {exc}", key="stepper") from None
    checks = dict(DEFAULT_CHECKS)
    checks.update({k: float(v) for k, v in ch.items()})
    if validate:
        validate_spec(spec)
    rect = pl.get("rectangle")
    return RunConfig(
        spec=spec,
        t_end=float(prob.get("t_end", 1.0)),
        grid=GridSettings(int(gd.get("N", 400)), gd.get("grading", "geometric"), gd.get("per_octave")),
        stepper=stepper,
        checks=checks,
        continuation=ContinuationSettings(
            int(co.get("j_max", 4)), float(co.get("ratio", 0.5)), co.get("eps0"), float(co.get("sample_dt", 0.05))
        ),
        radii=tuple(float(r) for r in ex.get("radii", (2.0, 4.0, 8.0))),
        planar=PlanarSettings(pl.get("h"), pl.get("outer", "disk"), pl.get("outer_radius"), tuple(rect) if rect else None),
        sweep=sweep,
        out_dir=str(out.get("dir", "out")),
        plots=bool(out.get("plots", True)),
        timestamps=bool(out.get("timestamps", False)),
        seed=int(data.get("seed", 0)),
        source=data,
        notices=tuple(notices),
    )


def parse_config(path):
    """Read and validate a TOML configuration file.

    Raises
    ------
    ParseError
        On TOML syntax errors and unknown keys (with key and line).
    ConstraintViolation
        When the parameters fail :func:`~fastdiff.model.validate_spec`.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        mt = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"{path}: {exc}", line=int(mt.group(1)) if mt else None) from None
    return config_from_dict(data, text)


def apply_override(data, dotted, value):
    """Return a copy of parsed TOML data with ``table.key`` set to ``value``."""
    table, _, key = dotted.partition(".")
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    out.setdefault(table, {})
    out[table][key] = value
    return out
