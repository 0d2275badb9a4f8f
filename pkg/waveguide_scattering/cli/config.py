"""
Run configuration: INI files read with configparser, checked key by key.

    [run]         command, threads, seed, strict
    [geometry]    preset, width, length, boundary_kind, truncation, bulge_height, bulge_length
    [rect.<n>]    x0, y0, x1, y1                       (preset = custom)
    [arm.<n>]     edge, edge_position, start, width, boundary_kind, truncation,
                  profile_amplitude, profile_decay, blending_t (preset = custom)
    [physics]     k | k_min, k_max, k_count; gamma, beta, threshold_mode
    [numerics]    divisions, mode_cutoff, threshold_tol, eigen_tol, t, t_values, l, tol,
                  max_iterations, transforms
    [model]       k_infinity, amplitude, decay_exponent, boundary_kind, width
    [output]      directory, formats
"""

import configparser
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import _defaults
from ..errors import ConfigError
from ..junction.geometry import PRESETS, ArmAttachment, Edge, JunctionGeometry, Rectangle
from ..model_problem.blending import ArmCoefficientProfile
from ..modes.cross_section import BoundaryKind, CrossSectionSpec

logger = logging.getLogger(__name__)

COMMANDS = ("spectrum", "modes", "scatter", "sweep", "trapped", "model-problem")
FORMATS = ("json", "csv", "txt")

KEYS = {
    "run": {"command", "threads", "seed", "strict"},
    "geometry": {"preset", "width", "length", "boundary_kind", "truncation", "bulge_height", "bulge_length"},
    "rect": {"x0", "y0", "x1", "y1"},
    "arm": {
        "edge", "edge_position", "start", "width", "boundary_kind", "truncation", "profile_amplitude",
        "profile_decay", "blending_t",
    },
    "physics": {"k", "k_min", "k_max", "k_count", "gamma", "beta", "threshold_mode"},
    "numerics": {
        "divisions", "mode_cutoff", "threshold_tol", "eigen_tol", "t", "t_values", "l", "tol", "max_iterations",
        "transforms",
    },
    "model": {"k_infinity", "amplitude", "decay_exponent", "boundary_kind", "width"},
    "output": {"directory", "formats"},
}


@dataclass
class GeometryConfig:
    preset: str = "straight_duct"
    width: float = 1.0
    length: float | None = None
    boundary_kind: str = "neumann"
    truncation: float | None = None
    bulge_height: float = 0.5
    bulge_length: float = 1.0
    rectangles: list = field(default_factory=list)
    arms: list = field(default_factory=list)


@dataclass
class PhysicsConfig:
    k: float | None = None
    k_min: float | None = None
    k_max: float | None = None
    k_count: int | None = None
    gamma: float | None = None
    beta: float = 0.0
    threshold_mode: bool = False


@dataclass
class NumericsConfig:
    divisions: int = _defaults.DIVISIONS
    mode_cutoff: int | None = None
    threshold_tol: float | None = None
    eigen_tol: float = _defaults.EIGEN_TOL
    T: float = 20.0
    T_values: tuple = ()
    L: float | None = None
    tol: float = _defaults.SERIES_TOL
    max_iterations: int = _defaults.SERIES_MAX_ITERATIONS
    transforms: int = 0


@dataclass
class ModelConfig:
    k_infinity: float = 2.5
    amplitude: float = 0.1
    decay_exponent: float = 1.0
    boundary_kind: str = "neumann"
    width: float = 1.0


@dataclass
class OutputConfig:
    directory: str = "workbench_output"
    formats: tuple = ("json", "csv")


@dataclass
class RunConfig:
    command: str
    threads: int = 1
    seed: int | None = None
    strict: bool = False
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def h(self):
        return self.geometry.width / self.numerics.divisions

    def k_values(self):
        p = self.physics
        if p.k is not None:
            return np.array([p.k])
        return np.linspace(p.k_min, p.k_max, p.k_count)

    def build_geometry(self):
        return build_geometry(self.geometry)

    def echo(self):
        return asdict(self)


def _line_numbers(text):
    """
    Line of every section header and key, so that semantic errors can point at the source.
    """
    lines = {}
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            lines[(section, None)] = number
        elif section is not None and ("=" in line or ":" in line):
            key = line.split("=", 1)[0].split(":", 1)[0].strip()
            lines[(section, key)] = number
    return lines


class _Section:
    """
    Typed access to one INI section with named-field diagnostics.
    """

    def __init__(self, parser, name, lines):
        self.name = name
        self.items = dict(parser.items(name)) if parser.has_section(name) else {}
        self.lines = lines

    def line(self, key):
        return self.lines.get((self.name, key))

    def _convert(self, key, converter, default):
        if key not in self.items:
            return default
        value = self.items[key]
        try:
            return converter(value)
        except ValueError as e:
            raise ConfigError(f"[{self.name}] {key} = {value!r} is invalid: {e}", key, self.line(key)) from None

    def string(self, key, default=None):
        return self._convert(key, str.strip, default)

    def number(self, key, default=None, positive=False):
        value = self._convert(key, float, default)
        if positive and value is not None and not value > 0:
            raise ConfigError(f"[{self.name}] {key} must be positive, got {value}", key, self.line(key))
        return value

    def integer(self, key, default=None, minimum=None):
        value = self._convert(key, int, default)
        if minimum is not None and value is not None and value < minimum:
            raise ConfigError(f"[{self.name}] {key} must be at least {minimum}, got {value}", key, self.line(key))
        return value

    def boolean(self, key, default=False):
        def convert(value):
            lowered = value.strip().lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError("expected a boolean")
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]

        return self._convert(key, convert, default)

    def numbers(self, key, default=()):
        return self._convert(key, lambda v: tuple(float(x) for x in v.replace(",", " ").split()), default)

    def words(self, key, default=()):
        return self._convert(key, lambda v: tuple(x for x in v.replace(",", " ").split()), default)


def _check_keys(parser, lines):
    for section in parser.sections():
        kind = section.split(".", 1)[0]
        if kind not in KEYS or (("." in section) != (kind in ("rect", "arm"))):
            raise ConfigError(f"Unknown section [{section}]", section, lines.get((section, None)))
        for key in parser.options(section):
            if key not in KEYS[kind]:
                raise ConfigError(f"Unknown key {key!r} in [{section}]", key, lines.get((section, key)))


def _boundary_kind(section, key, default):
    value = section.string(key, default)
    try:
        BoundaryKind.parse(value)
    except ValueError as e:
        raise ConfigError(str(e), key, section.line(key)) from None
    return value


def _read_geometry(parser, lines):
    s = _Section(parser, "geometry", lines)
    g = GeometryConfig(
        preset=s.string("preset", "straight_duct"),
        width=s.number("width", 1.0, positive=True),
        length=s.number("length", None, positive=True),
        boundary_kind=_boundary_kind(s, "boundary_kind", "neumann"),
        truncation=s.number("truncation", None, positive=True),
        bulge_height=s.number("bulge_height", 0.5, positive=True),
        bulge_length=s.number("bulge_length", 1.0, positive=True),
    )
    if g.preset not in (*PRESETS, "custom"):
        raise ConfigError(
            f"[geometry] preset must be one of {sorted(PRESETS)} or custom, got {g.preset!r}",
            "preset",
            s.line("preset"),
        )
    for name in sorted(n for n in parser.sections() if n.startswith("rect.")):
        r = _Section(parser, name, lines)
        g.rectangles.append({key: r.number(key, 0.0) for key in ("x0", "y0", "x1", "y1")})
    for name in sorted(n for n in parser.sections() if n.startswith("arm.")):
        a = _Section(parser, name, lines)
        try:
            arm_id = int(name.split(".", 1)[1])
        except ValueError:
            raise ConfigError(f"Arm section [{name}] must be numbered", name, a.line(None)) from None
        edge = a.string("edge")
        if edge is None:
            raise ConfigError(f"[{name}] needs an edge", "edge", a.line(None))
        try:
            Edge.parse(edge)
        except ValueError as e:
            raise ConfigError(str(e), "edge", a.line("edge")) from None
        g.arms.append(
            {
                "arm_id": arm_id,
                "edge": edge,
                "edge_position": a.number("edge_position", 0.0),
                "start": a.number("start", 0.0),
                "width": a.number("width", g.width, positive=True),
                "boundary_kind": _boundary_kind(a, "boundary_kind", g.boundary_kind),
                "truncation": a.number("truncation", g.truncation, positive=True),
                "profile_amplitude": a.number("profile_amplitude", None),
                "profile_decay": a.number("profile_decay", 1.0, positive=True),
                "blending_T": a.number("blending_t", 1.0, positive=True),
            }
        )
    if g.preset == "custom" and not (g.rectangles and g.arms):
        raise ConfigError("A custom geometry needs [rect.<n>] and [arm.<n>] sections", "preset", s.line("preset"))
    if g.preset != "custom" and (g.rectangles or g.arms):
        raise ConfigError("[rect.<n>] and [arm.<n>] sections need preset = custom", "preset", s.line("preset"))
    return g


def _read_physics(parser, lines, command):
    s = _Section(parser, "physics", lines)
    p = PhysicsConfig(
        k=s.number("k", None, positive=True),
        k_min=s.number("k_min", None, positive=True),
        k_max=s.number("k_max", None, positive=True),
        k_count=s.integer("k_count", None, minimum=1),
        gamma=s.number("gamma", None, positive=True),
        beta=s.number("beta", 0.0),
        threshold_mode=s.boolean("threshold_mode", False),
    )
    if p.beta < 0:
        raise ConfigError(f"[physics] beta must not be negative, got {p.beta}", "beta", s.line("beta"))
    ranged = (p.k_min, p.k_max, p.k_count)
    if p.k is not None and any(v is not None for v in ranged):
        raise ConfigError("[physics] give either k or k_min/k_max/k_count, not both", "k", s.line("k"))
    if p.k is None:
        if any(v is None for v in ranged):
            if command in ("model-problem", "spectrum"):
                return p
            raise ConfigError("[physics] needs k, or all of k_min, k_max and k_count", "k", s.line(None))
        if not p.k_max > p.k_min:
            raise ConfigError(
                f"[physics] k range must be increasing, got {p.k_min}..{p.k_max}", "k_max", s.line("k_max")
            )
    if command in ("sweep", "trapped") and p.k is not None:
        raise ConfigError(f"Command {command!r} needs a k range", "k", s.line("k"))
    if command == "trapped" and not p.beta:
        raise ConfigError("Command 'trapped' needs beta > 0", "beta", s.line("beta"))
    return p


def _read_numerics(parser, lines):
    s = _Section(parser, "numerics", lines)
    n = NumericsConfig(
        divisions=s.integer("divisions", _defaults.DIVISIONS, minimum=2),
        mode_cutoff=s.integer("mode_cutoff", None, minimum=0),
        threshold_tol=s.number("threshold_tol", None, positive=True),
        eigen_tol=s.number("eigen_tol", _defaults.EIGEN_TOL, positive=True),
        T=s.number("t", 20.0),
        T_values=s.numbers("t_values", ()),
        L=s.number("l", None, positive=True),
        tol=s.number("tol", _defaults.SERIES_TOL, positive=True),
        max_iterations=s.integer("max_iterations", _defaults.SERIES_MAX_ITERATIONS, minimum=1),
        transforms=s.integer("transforms", 0, minimum=0),
    )
    if n.T < 1 or any(T < 1 for T in n.T_values):
        raise ConfigError("[numerics] T must be at least 1", "T", s.line("t") or s.line("t_values"))
    return n


def _read_model(parser, lines):
    s = _Section(parser, "model", lines)
    return ModelConfig(
        k_infinity=s.number("k_infinity", 2.5, positive=True),
        amplitude=s.number("amplitude", 0.1),
        decay_exponent=s.number("decay_exponent", 1.0, positive=True),
        boundary_kind=_boundary_kind(s, "boundary_kind", "neumann"),
        width=s.number("width", 1.0, positive=True),
    )


def _read_output(parser, lines, default_directory):
    s = _Section(parser, "output", lines)
    formats = s.words("formats", ("json", "csv"))
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise ConfigError(f"[output] unknown formats {unknown}; choose from {FORMATS}", "formats", s.line("formats"))
    return OutputConfig(directory=s.string("directory", default_directory), formats=formats)


def parse_config(path=None, text=None, command=None):
    """
    Parse a run configuration from a file or from inline INI text, fill in defaults and validate it.
    A command given here takes the place of [run] command.
    """
    if (path is None) == (text is None):
        raise ValueError("Give exactly one of path or text")
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"Config file {path} cannot be found.")
        with open(path, encoding="utf-8") as f:
            text = f.read()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path or "<inline>"))
    except configparser.Error as e:
        raise ConfigError(f"Malformed config: {e}", line=getattr(e, "lineno", None)) from None
    lines = {(section, key.lower() if key else key): n for (section, key), n in _line_numbers(text).items()}
    _check_keys(parser, lines)

    run = _Section(parser, "run", lines)
    command = command or run.string("command")
    if command not in COMMANDS:
        raise ConfigError(f"[run] command must be one of {COMMANDS}, got {command!r}", "command", run.line("command"))
    config = RunConfig(
        command=command,
        threads=run.integer("threads", 1, minimum=1),
        seed=run.integer("seed", None),
        strict=run.boolean("strict", False),
        geometry=_read_geometry(parser, lines),
        physics=_read_physics(parser, lines, command),
        numerics=_read_numerics(parser, lines),
        model=_read_model(parser, lines),
        output=_read_output(parser, lines, "workbench_output"),
    )
    logger.debug(f"Parsed {command} config from {path or 'inline text'}")
    return config


def read_config(conf_file, command=None):
    """
    Read the passed-in configuration file
    """
    return parse_config(path=conf_file, command=command)


def build_geometry(g):
    """
    The JunctionGeometry described by a GeometryConfig.
    """
    kind = BoundaryKind.parse(g.boundary_kind)
    if g.preset == "straight_duct":
        return PRESETS[g.preset](g.width, g.length, kind, g.truncation)
    if g.preset == "bulge_duct":
        return PRESETS[g.preset](g.width, g.bulge_height, g.bulge_length, kind, g.truncation)
    if g.preset != "custom":
        return PRESETS[g.preset](g.width, kind, g.truncation)

    rectangles = tuple(Rectangle(r["x0"], r["y0"], r["x1"], r["y1"]) for r in g.rectangles)
    arms = []
    for arm in g.arms:
        truncation = arm["truncation"] or _defaults.TRUNCATION_LENGTH * arm["width"]
        profile = None
        blending_T = None
        if arm["profile_amplitude"]:
            # the arm's wavenumber is set per run, so the profile stores only the perturbation
            profile = ArmCoefficientProfile(1.0, arm["profile_amplitude"], arm["profile_decay"])
            blending_T = arm["blending_T"]
        arms.append(
            ArmAttachment(
                CrossSectionSpec(arm["arm_id"], arm["width"], BoundaryKind.parse(arm["boundary_kind"])),
                arm["edge"],
                arm["edge_position"],
                arm["start"],
                truncation,
                profile,
                blending_T,
            )
        )
    return JunctionGeometry(rectangles, tuple(arms), kind, "custom")
