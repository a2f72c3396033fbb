"""Declarative run configuration (INI text with explicit unit suffixes).

Every dimensional value carries its unit (``300nm``, ``20um``, ``4.8GHz``,
``50us``, ``1.24e6/m``); bare numbers are accepted only for dimensionless keys.
Unknown sections or keys are errors, and every problem is reported with the
line it came from.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field

from .errors import ConfigError, SurfpartError
from .field_solver import MaterialStack
from .geometry import INTERFACES, DesignParams, preset
from .mesh import MeshControls

COMMANDS = ("simulate", "sweep", "budget", "compare")

# value kind -> accepted suffixes and their scale to the internal unit
_UNITS = {
    "length": {"nm": 1.0, "um": 1e3, "µm": 1e3, "mm": 1e6},  # -> nm
    "freq": {"mhz": 1e-3, "ghz": 1.0},  # -> GHz
    "time": {"ns": 1e-3, "us": 1.0, "µs": 1.0, "ms": 1e3},  # -> µs
    "inv_length": {"/m": 1.0},  # -> 1/m
}

_SCHEMA = {
    "geometry": {
        "design": "str", "style": "str", "conductor_width": "length", "gap": "length", "n_repeats": "int",
        "metal_thickness": "length", "pad_height": "length", "finger_length": "length",
        "ground_box_span": "length", "include_ground": "bool", "trench": "length",
    },
    "materials": {
        "eps_substrate": "number", "eps_contamination": "number", "eps_sm": "number", "eps_sa": "number",
        "eps_ma": "number", "thickness": "length", "thickness_sm": "length", "thickness_sa": "length",
        "thickness_ma": "length", "tan_sm": "number", "tan_sa": "number", "tan_ma": "number",
        "tan_substrate": "number",
    },
    "mesh": {
        "h_max": "length", "corner_h_min": "length", "grading_ratio": "number", "max_refine_passes": "int",
        "marker_fraction": "number", "cutoff": "length", "include_sidewalls": "bool",
        "uniform_refinements": "int", "dump": "bool",
    },
    "sweep": {
        "depths": "length_list", "target_depth": "length", "min_fit_depth": "length", "designs": "str_list",
    },
    "budget": {
        "f": "freq", "other_loss": "number", "p_sm": "inv_length", "p_sa": "inv_length", "p_ma": "inv_length",
        "p_sub": "number", "q_measured": "number", "t1": "time", "g": "freq", "f_qubit": "freq",
        "f_res": "freq", "q_c": "number",
    },
}

_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")


@dataclass(frozen=True)
class RunConfig:
    command: str
    design: str = ""
    params: DesignParams | None = None
    trench: float | None = None  # nm
    materials: MaterialStack = field(default_factory=MaterialStack)
    controls: MeshControls = field(default_factory=MeshControls)
    marker_fraction: float = 0.25
    cutoff: float = 1.0  # nm
    include_sidewalls: bool = True
    uniform_refinements: int = 0
    dump: bool = False
    depths: tuple[float, ...] = ()
    target_depth: float | None = None
    min_fit_depth: float = 300.0
    designs: tuple[str, ...] = ()
    budget: dict = field(default_factory=dict)
    explicit: frozenset = frozenset()  # (section, key) pairs present in the file


def _parse_value(kind: str, raw: str):
    raw = raw.strip()
    if kind == "str":
        if not raw:
            raise ValueError("empty value")
        return raw
    if kind == "bool":
        low = raw.lower()
        if low in ("yes", "true", "on", "1"):
            return True
        if low in ("no", "false", "off", "0"):
            return False
        raise ValueError(f"expected yes/no, got {raw!r}")
    if kind == "int":
        if not re.fullmatch(r"[+-]?\d+", raw):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(raw)
    if kind.endswith("_list"):
        items = [x for x in (s.strip() for s in raw.split(",")) if x]
        if not items:
            raise ValueError("empty list")
        return [_parse_value(kind[:-5], x) for x in items]
    m = _NUMBER.match(raw)
    if not m:
        raise ValueError(f"expected a number, got {raw!r}")
    number = float(m.group(0))
    suffix = raw[m.end():].strip()
    if kind == "number":
        if suffix:
            raise ValueError(f"dimensionless value must not carry a unit, got {suffix!r}")
        return number
    units = _UNITS[kind]
    if not suffix:
        raise ValueError(f"missing unit; use one of {', '.join(units)}")
    scale = units.get(suffix.lower()) or units.get(suffix)
    if scale is None:
        raise ValueError(f"unknown unit {suffix!r}; use one of {', '.join(units)}")
    return number * scale


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = ""
    for no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        head = re.fullmatch(r"\[([^\]]+)\]", stripped)
        if head:
            section = head.group(1).strip()
            lines.setdefault((section, ""), no)
            continue
        key = re.match(r"([^=:]+?)\s*[=:]", stripped)
        if key:
            lines.setdefault((section, key.group(1).strip().lower()), no)
    return lines


def parse_config(text: str, command: str) -> RunConfig:
    """Validate ``text`` for ``command``; raises :class:`ConfigError` listing every problem."""
    if command not in COMMANDS:
        raise ConfigError([f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}"])
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError([f"line {line}: {exc.message}" if line else str(exc)]) from None
    lines = _line_numbers(text)
    errors: list[str] = []
    values: dict[str, dict] = {}

    def where(section: str, key: str = "") -> str:
        no = lines.get((section, key))
        return f"line {no}: " if no else ""

    for section in parser.sections():
        if section not in _SCHEMA:
            errors.append(f"{where(section)}unknown section [{section}]")
            continue
        values[section] = {}
        for key, raw in parser.items(section):
            kind = _SCHEMA[section].get(key)
            if kind is None:
                errors.append(f"{where(section, key)}[{section}] unknown key {key!r}")
                continue
            try:
                values[section][key] = _parse_value(kind, raw)
            except ValueError as exc:
                errors.append(f"{where(section, key)}[{section}] {key}: {exc}")

    def need(section: str, *keys: str) -> None:
        if section not in parser.sections():
            errors.append(f"missing section [{section}] required by '{command}'")
            return
        for key in keys:
            if key not in parser[section]:
                errors.append(f"{where(section)}[{section}] missing key {key!r} required by '{command}'")

    geo = values.get("geometry", {})
    mat = values.get("materials", {})
    swp = values.get("sweep", {})
    bud = values.get("budget", {})
    has_geometry = "geometry" in parser.sections()

    if command == "simulate":
        need("geometry", "trench")
    elif command == "sweep":
        need("geometry")
        need("sweep", "depths")
    elif command == "compare":
        need("sweep", "designs", "depths", "target_depth")
        if len(swp.get("designs", [])) == 1:
            errors.append(f"{where('sweep', 'designs')}[sweep] designs: a comparison needs at least two designs")
    elif command == "budget":
        need("budget", "f")
        need("materials", "tan_sm", "tan_sa", "tan_ma", "tan_substrate")
        if "materials" in parser.sections():
            for tag in INTERFACES:
                if "thickness" not in mat and f"thickness_{tag.lower()}" not in mat:
                    errors.append(f"{where('materials')}[materials] layer thickness for {tag} must be given "
                                  "(thickness or thickness_" + tag.lower() + ")")
        given = [k for k in ("p_sm", "p_sa", "p_ma", "p_sub") if k in bud]
        if given and len(given) != 4:
            errors.append(f"{where('budget')}[budget] give all of p_sm, p_sa, p_ma, p_sub or none of them")
        if not given and "budget" in parser.sections():
            if not has_geometry:
                errors.append("[budget] without p_sm/p_sa/p_ma/p_sub needs a [geometry] section to simulate")
            need("sweep", "depths", "target_depth")
        purcell = [k for k in ("g", "f_qubit", "f_res", "q_c") if k in bud]
        if purcell and len(purcell) != 4:
            errors.append(f"{where('budget')}[budget] Purcell estimate needs all of g, f_qubit, f_res, q_c")

    design, params = "", None
    if has_geometry and "geometry" in values:
        try:
            design, params = _design_params(geo)
        except (SurfpartError, TypeError, ValueError) as exc:
            errors.append(f"{where('geometry')}[geometry] {exc}")
    if "depths" in swp:
        if len(set(swp["depths"])) != len(swp["depths"]):
            errors.append(f"{where('sweep', 'depths')}[sweep] depths: duplicate values")
    min_fit = swp.get("min_fit_depth", 300.0)
    if command in ("sweep", "compare", "budget") and any(d < min_fit for d in swp.get("depths", [])):
        errors.append(f"{where('sweep', 'depths')}[sweep] depths: every depth must be >= min_fit_depth "
                      f"({min_fit:g} nm)")
    for name in swp.get("designs", []):
        try:
            preset(name)
        except SurfpartError as exc:
            errors.append(f"{where('sweep', 'designs')}[sweep] designs: {exc}")

    materials = controls = None
    try:
        materials = _materials(mat)
    except SurfpartError as exc:
        errors.append(f"{where('materials')}[materials] {exc}")
    msh = values.get("mesh", {})
    try:
        kwargs = {}
        if "h_max" in msh:
            kwargs["h_max"] = msh["h_max"] / 1e3
        if "corner_h_min" in msh:
            kwargs["corner_h_min"] = msh["corner_h_min"]
        for key in ("grading_ratio", "max_refine_passes"):
            if key in msh:
                kwargs[key] = msh[key]
        controls = MeshControls(**kwargs)
    except SurfpartError as exc:
        errors.append(f"{where('mesh')}[mesh] {exc}")
    mf = msh.get("marker_fraction", 0.25)
    if not 0 < mf <= 1:
        errors.append(f"{where('mesh', 'marker_fraction')}[mesh] marker_fraction must lie in (0, 1]")
    if msh.get("cutoff", 1.0) < 0:
        errors.append(f"{where('mesh', 'cutoff')}[mesh] cutoff must be >= 0")
    if msh.get("uniform_refinements", 0) < 0:
        errors.append(f"{where('mesh', 'uniform_refinements')}[mesh] uniform_refinements must be >= 0")
    if "trench" in geo and geo["trench"] < 0:
        errors.append(f"{where('geometry', 'trench')}[geometry] trench must be >= 0")
    for key in ("f", "q_measured", "t1", "q_c", "f_qubit", "f_res"):
        if key in bud and not bud[key] > 0:
            errors.append(f"{where('budget', key)}[budget] {key} must be positive")
    for key in ("other_loss", "p_sm", "p_sa", "p_ma", "p_sub", "g"):
        if key in bud and bud[key] < 0:
            errors.append(f"{where('budget', key)}[budget] {key} must be >= 0")
    if errors:
        raise ConfigError(errors)

    explicit = frozenset((s, k) for s in values for k in values[s])
    return RunConfig(
        command=command, design=design, params=params, trench=geo.get("trench"),
        materials=materials, controls=controls, marker_fraction=mf, cutoff=msh.get("cutoff", 1.0),
        include_sidewalls=msh.get("include_sidewalls", True),
        uniform_refinements=msh.get("uniform_refinements", 0), dump=msh.get("dump", False),
        depths=tuple(sorted(swp.get("depths", ()))), target_depth=swp.get("target_depth"),
        min_fit_depth=min_fit, designs=tuple(swp.get("designs", ())), budget=dict(bud), explicit=explicit,
    )


def _design_params(geo: dict) -> tuple[str, DesignParams]:
    fields = {
        "style": "style", "conductor_width": "conductor_width", "gap": "gap", "n_repeats": "n_repeats",
        "metal_thickness": "metal_thickness", "pad_height": "pad_height", "finger_length": "finger_length",
        "ground_box_span": "ground_box_span", "include_ground": "include_ground",
    }
    overrides = {}
    for key, name in fields.items():
        if key in geo:
            value = geo[key]
            # DesignParams holds µm except metal_thickness (nm)
            if key in ("conductor_width", "gap", "pad_height", "finger_length", "ground_box_span"):
                value = value / 1e3
            overrides[name] = value
    if "design" in geo:
        base = preset(geo["design"])
        name = f"mod_{base.id.lower()}"
        return name, dataclasses.replace(base.params, **overrides) if overrides else base.params
    missing = [k for k in ("style", "conductor_width", "gap") if k not in overrides]
    if missing:
        raise ValueError(f"custom geometry needs {', '.join(missing)} (or a design preset)")
    return "custom", DesignParams(**overrides)


def _materials(mat: dict) -> MaterialStack:
    kwargs = {}
    if "eps_substrate" in mat:
        kwargs["eps_substrate"] = mat["eps_substrate"]
    base_eps = mat.get("eps_contamination", 5.0)
    kwargs["eps_contamination"] = {t: mat.get(f"eps_{t.lower()}", base_eps) for t in INTERFACES}
    base_t = mat.get("thickness", 3.0)
    kwargs["layer_thicknesses"] = {t: mat.get(f"thickness_{t.lower()}", base_t) for t in INTERFACES}
    kwargs["loss_tangents"] = {t: mat.get(f"tan_{t.lower()}", 0.0) for t in (*INTERFACES, "substrate")}
    return MaterialStack(**kwargs)
