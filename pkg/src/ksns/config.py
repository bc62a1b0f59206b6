"""Flat key-value run configuration: parse, validate, serialize.

The file format is `[section]` headers over `key = value` pairs, UTF-8, with
`#` comments.  parse(serialize(config)) == config holds exactly: floats are
serialized with repr so they round-trip bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .errors import ConfigError

RECTANGLE = "rectangle"
L_SHAPE = "l-shape"


@dataclass
class GridConfig:
    nx: int = 64
    ny: int = 64
    lx: float = 1.0
    ly: float = 1.0
    shape: str = RECTANGLE


@dataclass
class PhysicsConfig:
    alpha: float = 0.5
    c_s: float = 1.0
    kappa: float = 0.0
    eps_reg: float = 0.0
    sensitivity: str = "scalar-identity"
    theta_rot: float = 0.0
    rho_cutoff: str = "identity"
    rho_margin: float = 0.1
    chi_cutoff: str = "identity"


@dataclass
class PhiConfig:
    form: str = "constant"  # constant | linear | file
    value: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    path: str = ""


@dataclass
class InitialConfig:
    kind: str = "uniform"  # uniform | gaussian | file
    n0: float = 1.0
    c0: float = 1.0
    center_x: float = 0.5
    center_y: float = 0.5
    width: float = 0.1
    mass: float = 1.0
    path: str = ""


@dataclass
class NumericsConfig:
    dt: float = 1e-3
    t_end: float = 1.0
    adaptive: bool = False
    cfl_safety: float = 0.9
    tol_rel: float = 1e-8
    max_iter: int = 0  # 0 -> solver default
    solver: str = "direct"  # cg | direct
    strang: bool = False
    max_halvings: int = 20  # adaptive dt floor is dt / 2**max_halvings


@dataclass
class OutputConfig:
    cadence: int = 10  # record every this many steps
    csv: str = ""
    snapshot_every: int = 0  # snapshot every this many records; 0 disables
    snapshot_dir: str = ""


@dataclass
class MonitorConfig:
    sup_n_max: float = np.inf
    sup_grad_c_max: float = np.inf
    growth_ratio: float = np.inf


@dataclass
class SimConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    phi: PhiConfig = field(default_factory=PhiConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)


_SECTIONS = {
    "grid": GridConfig,
    "physics": PhysicsConfig,
    "phi": PhiConfig,
    "initial": InitialConfig,
    "numerics": NumericsConfig,
    "output": OutputConfig,
    "monitor": MonitorConfig,
}


def _parse_value(section, key, raw, ftype):
    label = f"{section}.{key}"
    raw = raw.strip()
    try:
        if ftype is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(label, str(exc)) from None


def parse_config(text):
    """Parse config text into a SimConfig; errors carry the offending field name."""
    cfg = SimConfig()
    section = None
    section_obj = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            section = body[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(section, f"unknown section (line {lineno})")
            section_obj = getattr(cfg, section)
            continue
        if "=" not in body:
            raise ConfigError(section or "?", f"malformed line {lineno}: {line.strip()!r}")
        if section is None:
            raise ConfigError("?", f"key before any [section] at line {lineno}")
        key, raw = (part.strip() for part in body.split("=", 1))
        ftypes = {f.name: f.type for f in dc_fields(section_obj)}
        if key not in ftypes:
            raise ConfigError(f"{section}.{key}", "unknown key")
        ftype = {"int": int, "float": float, "bool": bool, "str": str}[ftypes[key]] \
            if isinstance(ftypes[key], str) else ftypes[key]
        setattr(section_obj, key, _parse_value(section, key, raw, ftype))
    validate_config(cfg)
    return cfg


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg):
    lines = []
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in dc_fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc}") from None
    return parse_config(text)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))


def validate_config(cfg):
    gr, ph, nm, ini = cfg.grid, cfg.physics, cfg.numerics, cfg.initial
    if gr.nx < 4 or gr.ny < 4:
        raise ConfigError("grid.nx", "grid must be at least 4x4")
    if gr.lx <= 0 or gr.ly <= 0:
        raise ConfigError("grid.lx", "domain extents must be positive")
    if gr.shape not in (RECTANGLE, L_SHAPE):
        raise ConfigError("grid.shape", f"unknown shape {gr.shape!r}")
    if ph.alpha < 0:
        raise ConfigError("physics.alpha", "alpha must be >= 0")
    if ph.c_s <= 0:
        raise ConfigError("physics.c_s", "c_s must be > 0")
    if ph.eps_reg < 0:
        raise ConfigError("physics.eps_reg", "eps_reg must be >= 0")
    if ph.sensitivity not in ("scalar-identity", "rotation"):
        raise ConfigError("physics.sensitivity", f"unknown form {ph.sensitivity!r}")
    if cfg.phi.form not in ("constant", "linear", "file"):
        raise ConfigError("phi.form", f"unknown form {cfg.phi.form!r}")
    if ini.kind not in ("uniform", "gaussian", "file"):
        raise ConfigError("initial.kind", f"unknown kind {ini.kind!r}")
    if ini.kind == "uniform" and (ini.n0 < 0 or ini.c0 < 0):
        raise ConfigError("initial.n0", "initial data must be nonnegative")
    if ini.kind == "gaussian" and (ini.mass < 0 or ini.width <= 0 or ini.c0 < 0):
        raise ConfigError("initial.mass", "gaussian needs mass >= 0, width > 0, c0 >= 0")
    if nm.dt <= 0:
        raise ConfigError("numerics.dt", "dt must be > 0")
    if nm.t_end <= nm.dt:
        raise ConfigError("numerics.t_end", "t_end must exceed dt")
    if not (0 < nm.cfl_safety <= 1):
        raise ConfigError("numerics.cfl_safety", "cfl_safety must lie in (0, 1]")
    if not (0 < nm.tol_rel < 1):
        raise ConfigError("numerics.tol_rel", "tol_rel must lie in (0, 1)")
    if nm.solver not in ("cg", "direct"):
        raise ConfigError("numerics.solver", f"unknown solver {nm.solver!r}")
    if nm.max_iter < 0:
        raise ConfigError("numerics.max_iter", "max_iter must be >= 0")
    if cfg.output.cadence < 1:
        raise ConfigError("output.cadence", "cadence must be >= 1")
    if cfg.monitor.sup_n_max <= 0 or cfg.monitor.sup_grad_c_max <= 0 or cfg.monitor.growth_ratio <= 0:
        raise ConfigError("monitor.sup_n_max", "monitor thresholds must be positive")
    return cfg
