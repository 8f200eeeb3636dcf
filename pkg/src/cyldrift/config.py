"""Experiment configuration: TOML loading, validation, canonical hashing.

A configuration fully determines a run; the canonical hash goes into the
run manifest so two runs can be compared field by field.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import maps as mp
from .errors import ConfigError


@dataclass(frozen=True)
class MapSection:
    """Map family: base kind plus an optional coupling Hamiltonian."""

    kind: str = mp.PRODUCT_TWIST_STANDARD
    k: float = 4.0
    k1: float = 1.0
    k2: float = 1.0
    omega_coeffs: tuple = (0.0, 1.0)
    epsilon: float = 0.0
    # one table per trig term of the coupling Hamiltonian f(phi, x)
    terms: tuple = ({"m": 1, "n": -1, "coeff": 1.0, "basis": "sin"},)
    # negative-control knob: breaks symplecticity by a shear of this size
    defect_shear: float = 0.0


@dataclass(frozen=True)
class GeometrySection:
    """Band, grids, and channel size shared by all pipeline stages."""

    band: tuple = (0.5, 1.5)
    sub_band: tuple = (0.6, 1.4)
    cylinder_grid: tuple = (128, 32)
    excursion_grid: tuple = (32, 12)
    scattering_grid: tuple = (32, 16)
    cylinder_tol: float = 1e-8
    delta: float = 0.05
    homoclinic_count: int = 1


@dataclass(frozen=True)
class TransportSection:
    """Boundary curves and limits for the curve-evolution stage.

    A boundary curve is a constant action value or a list of [phi, y]
    samples interpolated periodically.
    """

    gamma_minus: object = 0.95
    gamma_plus: object = 1.05
    n_phi: int = 256
    tol: float = 1e-7
    max_gen: int = 4000


@dataclass(frozen=True)
class ShadowingSection:
    """Properness parameters and drift target for channel orbits."""

    k_bar: int = 10
    gamma_rate: float = 2.0
    D: int = 5
    drift_target: float = 0.05
    tol_factor: float = 1e-6
    tol_abs: float = 0.0


@dataclass(frozen=True)
class ScanSection:
    """Two-parameter family for the scan command.

    Node (mu1, mu2) scales the coupled terms (moving both actions) by mu1
    and the action-only terms (m = 0, conserving I) by mu2, all at overall
    strength ``scale``; the mu1 = 0 column conserves I exactly.
    """

    mu1: tuple = (0.0, 0.5, 1.0)
    mu2: tuple = (0.0, 0.5, 1.0)
    scale: float = 1e-3
    coupled_terms: tuple = ({"m": 1, "n": -1, "coeff": 1.0, "basis": "sin"},)
    action_terms: tuple = ({"m": 0, "n": 1, "coeff": 1.0, "basis": "sin"},)


@dataclass(frozen=True)
class RunSection:
    """Reproducibility and output plumbing."""

    seed: int = 0
    threads: int = 1
    tol: float = 1e-9
    out_dir: str = "out"


@dataclass(frozen=True)
class ExperimentConfig:
    map: MapSection = field(default_factory=MapSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    transport: TransportSection = field(default_factory=TransportSection)
    shadowing: ShadowingSection = field(default_factory=ShadowingSection)
    scan: ScanSection = field(default_factory=ScanSection)
    run: RunSection = field(default_factory=RunSection)


_SECTIONS = {
    "map": MapSection,
    "geometry": GeometrySection,
    "transport": TransportSection,
    "shadowing": ShadowingSection,
    "scan": ScanSection,
    "run": RunSection,
}


def _coerce(cls, table, where):
    names = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, val in table.items():
        if key not in names:
            raise ConfigError(f"unknown key {where}.{key}")
        default = names[key].default
        if isinstance(val, list):
            val = tuple(tuple(v) if isinstance(v, list) else v for v in val)
        if isinstance(default, bool) is not isinstance(val, bool) and \
                isinstance(default, bool):
            raise ConfigError(f"{where}.{key}: expected a boolean")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                # gamma curves may be scalars or sample lists
                if not (cls is TransportSection and key.startswith("gamma")):
                    raise ConfigError(f"{where}.{key}: expected a number, "
                                      f"got {type(val).__name__}")
        if isinstance(default, str) and not isinstance(val, str):
            raise ConfigError(f"{where}.{key}: expected a string")
        values[key] = val
    return cls(**values)


def from_tables(tables):
    """Build a validated config from nested dicts (parsed TOML)."""
    if not isinstance(tables, dict):
        raise ConfigError("configuration root must be a table")
    kwargs = {}
    for name, table in tables.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        kwargs[name] = _coerce(_SECTIONS[name], table, name)
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def load(path):
    try:
        with open(path, "rb") as f:
            tables = tomllib.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config syntax: {exc}") from exc
    return from_tables(tables)


def validate(cfg):
    g = cfg.geometry
    if not (len(g.band) == 2 and g.band[0] < g.band[1]):
        raise ConfigError("geometry.band must be an increasing pair")
    if not (g.band[0] <= g.sub_band[0] < g.sub_band[1] <= g.band[1]):
        raise ConfigError("geometry.sub_band must nest inside geometry.band")
    if g.delta <= 0:
        raise ConfigError("geometry.delta must be positive")
    if cfg.map.kind not in (mp.PRODUCT_TWIST_STANDARD, mp.DOUBLE_STANDARD):
        raise ConfigError(f"unknown map kind {cfg.map.kind!r}")
    for t in cfg.map.terms:
        _term(t)
    s = cfg.shadowing
    if s.k_bar < 1 or s.gamma_rate <= 0 or s.D < 0:
        raise ConfigError("shadowing properness parameters out of range")
    if cfg.run.threads < 1:
        raise ConfigError("run.threads must be at least 1")
    for name in ("gamma_minus", "gamma_plus"):
        spec = getattr(cfg.transport, name)
        if not isinstance(spec, (int, float)):
            try:
                arr = np.asarray(spec, dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"transport.{name}: scalar or list of "
                                  f"[phi, y] pairs required") from exc
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
                raise ConfigError(f"transport.{name}: need at least three "
                                  f"[phi, y] samples")


def _term(t):
    if not isinstance(t, dict) or set(t) - {"m", "n", "coeff", "basis"}:
        raise ConfigError(f"bad trig term {t!r}")
    return mp.TrigTerm(int(t["m"]), int(t["n"]), float(t["coeff"]),
                       basis=t.get("basis", "cos"))


def build_family(cfg):
    """Map family of the configured kind with the configured coupling."""
    base = mp.MapDef(kind=cfg.map.kind, k=cfg.map.k, k1=cfg.map.k1,
                     k2=cfg.map.k2, omega_coeffs=tuple(cfg.map.omega_coeffs),
                     defect_shear=cfg.map.defect_shear)
    step = mp.PerturbationStep(
        epsilon=1.0, terms=tuple(_term(t) for t in cfg.map.terms))
    return mp.make_family(base, [step])


def build_map(cfg, epsilon=None):
    eps = cfg.map.epsilon if epsilon is None else epsilon
    return build_family(cfg).at(eps)


def scan_family(cfg):
    """Two-step family for the scan; step 1 couples, step 2 conserves I."""
    base = mp.MapDef(kind=cfg.map.kind, k=cfg.map.k, k1=cfg.map.k1,
                     k2=cfg.map.k2, omega_coeffs=tuple(cfg.map.omega_coeffs))
    coupled = tuple(_term(t) for t in cfg.scan.coupled_terms)
    action = tuple(_term(t) for t in cfg.scan.action_terms)
    if any(t.m == 0 for t in coupled):
        raise ConfigError("scan.coupled_terms must have m != 0")
    if any(t.m != 0 for t in action):
        raise ConfigError("scan.action_terms must have m == 0")
    return mp.make_family(base, [mp.PerturbationStep(1.0, coupled),
                                 mp.PerturbationStep(1.0, action)])


def scan_map(cfg, mu1, mu2):
    """Family member at scan node (mu1, mu2); mu1 = 0 conserves I."""
    return scan_family(cfg).at(cfg.scan.scale * mu1, cfg.scan.scale * mu2)


def as_tables(cfg):
    """Nested plain dicts mirroring the section and field names."""
    return dataclasses.asdict(cfg)


def config_hash(cfg):
    """Stable content hash of the canonical JSON form."""
    doc = json.dumps(as_tables(cfg), sort_keys=True, default=list)
    return hashlib.sha256(doc.encode()).hexdigest()
