"""Run configuration: a YAML file mapped onto nested dataclasses.

Unknown keys are rejected at every level, and every module precondition that
can be checked before launch is checked here.  Example::

    domain:       {N: 64, L: 12.566370614359172, boundary_mode: periodic}
    potential:    {theta: 1.0, theta0: 2.0}
    regularization: {lambda: 0.01}
    noise:        {seed: 7, K1: 8, K2: 4, amp1: 0.5, amp2: 0.2}
    stepper:      {dt: 0.001, T: 0.5, scheme: semi_implicit_em}
    initial:      {phase: bubble, velocity: zero}
    output:       {cadence: 10}
    ensemble:     {members: 64, workers: 4}
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

PHASE_PRESETS = ("bubble", "random-band", "pure-phase", "pure-phase-with-defect", "snapshot")
VELOCITY_PRESETS = ("zero", "random-band", "snapshot")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message

    def to_dict(self):
        return {"error": "config", "path": self.path, "message": self.message}


@dataclass
class DomainSection:
    N: int = 64
    L: float = 4 * math.pi
    boundary_mode: str = "periodic"
    dealias_fraction: float = 2.0 / 3.0


@dataclass
class PotentialSection:
    theta: float = 1.0
    theta0: float = 2.0


@dataclass
class RegularizationSection:
    lam: float = 1e-2
    root_tolerance: float = 1e-12
    quadrature_order: int = 8
    quadrature_panels: int = 32
    energy_method: str = "envelope"


@dataclass
class NoiseSection:
    seed: int = 0
    K1: int = 8
    K2: int = 4
    decay: float = 2.0
    amp1: float = 0.1
    amp2: float = 0.1
    g1_kind: str = "additive"
    kappa: float = 0.0
    enabled: bool = True


@dataclass
class StepperSection:
    dt: float = 1e-3
    T: float = 0.1
    scheme: str = "semi_implicit_em"
    max_phase_clip: float = 1.0
    cfl_guard: bool = False


@dataclass
class InitialSection:
    phase: str = "bubble"
    velocity: str = "zero"
    radius: float | None = None
    width: float = 1.0
    amplitude: float | None = None
    center: list | None = None
    depth: float = 0.5
    kmax: int = 4
    velocity_amplitude: float = 0.0
    seed: int = 0
    phase_path: str | None = None
    velocity_path: str | None = None


@dataclass
class OutputSection:
    cadence: int = 10
    snapshots: bool = True
    plots: bool = True


@dataclass
class EnsembleSection:
    members: int = 1
    workers: int = 1
    z: float = 2.0
    bias_rate: float | None = None


@dataclass
class PerturbationSection:
    phase: str = "random-band"
    velocity: str = "zero"
    kmax: int = 4
    seed: int = 1


@dataclass
class DependenceSection:
    eps: list = field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])
    n_level: float = 50.0
    perturbation: PerturbationSection | None = None


@dataclass
class ConvergenceSection:
    kind: str = "in_dt"
    ladder: list = field(default_factory=lambda: [4e-3, 2e-3, 1e-3])
    members: int = 4


@dataclass
class RunConfig:
    domain: DomainSection = field(default_factory=DomainSection)
    potential: PotentialSection = field(default_factory=PotentialSection)
    regularization: RegularizationSection = field(default_factory=RegularizationSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    stepper: StepperSection = field(default_factory=StepperSection)
    initial: InitialSection = field(default_factory=InitialSection)
    output: OutputSection = field(default_factory=OutputSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    dependence: DependenceSection | None = None
    convergence: ConvergenceSection | None = None

    def to_dict(self):
        return to_dict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


# the YAML spelling differs from the attribute name only here
_RENAMES = {(RegularizationSection, "lambda"): "lam"}
_SECTIONS = {
    "domain": DomainSection, "potential": PotentialSection, "regularization": RegularizationSection,
    "noise": NoiseSection, "stepper": StepperSection, "initial": InitialSection, "output": OutputSection,
    "ensemble": EnsembleSection, "dependence": DependenceSection, "convergence": ConvergenceSection,
}


def _coerce(path, value, typ):
    if typ in ("int", int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if typ in ("float", float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if typ in ("bool", bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if typ in ("str", str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _parse_section(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    hidden = {n for (c, _), n in _RENAMES.items() if c is cls}
    kwargs = {}
    for key, value in data.items():
        name = _RENAMES.get((cls, key), key)
        if name not in fields or key in hidden:
            raise ConfigError(f"{path}.{key}", "unknown key")
        f = fields[name]
        sub = f"{path}.{key}"
        typ = f.type
        if value is None:
            kwargs[name] = None
            continue
        if name == "perturbation":
            kwargs[name] = _parse_section(PerturbationSection, value, sub)
        elif typ in ("list", "list | None"):
            if not isinstance(value, list):
                raise ConfigError(sub, f"expected a list, got {value!r}")
            kwargs[name] = [_coerce(f"{sub}[{i}]", v, float) for i, v in enumerate(value)]
        else:
            base = typ.split(" | ")[0] if isinstance(typ, str) else typ
            kwargs[name] = _coerce(sub, value, base)
    return cls(**kwargs)


def from_dict(data) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    sections = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(key, "unknown section")
        if value is None and key in ("dependence", "convergence"):
            sections[key] = None
            continue
        sections[key] = _parse_section(_SECTIONS[key], value, key)
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        key = next((k for (c, k), n in _RENAMES.items() if c is type(cfg) and n == f.name), f.name)
        if dataclasses.is_dataclass(value):
            out[key] = to_dict(value)
        elif isinstance(value, list):
            out[key] = list(value)
        else:
            out[key] = value
    return out


def load(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    return from_dict(data)


def dumps(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def validate(cfg: RunConfig):
    d, p, r, n, s, i = cfg.domain, cfg.potential, cfg.regularization, cfg.noise, cfg.stepper, cfg.initial
    if d.N < 4 or d.N % 2:
        raise ConfigError("domain.N", "must be an even integer >= 4")
    if not d.L > 0:
        raise ConfigError("domain.L", "must be positive")
    if d.boundary_mode not in ("periodic", "neumann_cosine"):
        raise ConfigError("domain.boundary_mode", "must be 'periodic' or 'neumann_cosine'")
    if not 0 < d.dealias_fraction <= 1:
        raise ConfigError("domain.dealias_fraction", "must lie in (0, 1]")
    if d.boundary_mode == "neumann_cosine" and (n.K1 > 0 and n.enabled or i.velocity != "zero"):
        raise ConfigError("domain.boundary_mode", "the cosine basis is scalar only; set noise.K1 = 0 and initial.velocity = zero")
    if not (p.theta > 0 and p.theta < p.theta0):
        raise ConfigError("potential", f"need 0 < theta < theta0 (convexity constant c_F = theta0 - theta > 0); got theta={p.theta}, theta0={p.theta0}")
    if not r.lam > 0:
        raise ConfigError("regularization.lambda", "must be positive")
    if not r.root_tolerance > 0:
        raise ConfigError("regularization.root_tolerance", "must be positive")
    if r.energy_method not in ("envelope", "quadrature"):
        raise ConfigError("regularization.energy_method", "must be 'envelope' or 'quadrature'")
    if r.quadrature_order < 1 or r.quadrature_panels < 1:
        raise ConfigError("regularization", "quadrature order and panels must be positive")
    if n.K1 < 0 or n.K2 < 0:
        raise ConfigError("noise", "K1 and K2 must be non-negative")
    if n.g1_kind not in ("additive", "multiplicative"):
        raise ConfigError("noise.g1_kind", "must be 'additive' or 'multiplicative'")
    if n.decay <= 0.5:
        raise ConfigError("noise.decay", "must exceed 1/2")
    if n.kappa < 0:
        raise ConfigError("noise.kappa", "must be non-negative")
    if not s.dt > 0:
        raise ConfigError("stepper.dt", "must be positive")
    if s.T < 0:
        raise ConfigError("stepper.T", "must be non-negative")
    if abs(s.T / s.dt - round(s.T / s.dt)) > 1e-9 * max(1.0, s.T / s.dt):
        raise ConfigError("stepper.T", "must be an integer multiple of dt")
    if s.scheme not in ("semi_implicit_em", "fully_explicit_em"):
        raise ConfigError("stepper.scheme", "must be 'semi_implicit_em' or 'fully_explicit_em'")
    if s.scheme == "fully_explicit_em" and s.dt > r.lam:
        raise ConfigError("stepper.dt", f"explicit scheme needs dt <= lambda ({s.dt} > {r.lam})")
    if i.phase not in PHASE_PRESETS:
        raise ConfigError("initial.phase", f"must be one of {PHASE_PRESETS}")
    if i.velocity not in VELOCITY_PRESETS:
        raise ConfigError("initial.velocity", f"must be one of {VELOCITY_PRESETS}")
    if i.phase == "snapshot" and not i.phase_path:
        raise ConfigError("initial.phase_path", "required for the snapshot preset")
    if i.velocity == "snapshot" and not i.velocity_path:
        raise ConfigError("initial.velocity_path", "required for the snapshot preset")
    if i.amplitude is not None and not 0 <= i.amplitude <= 1:
        raise ConfigError("initial.amplitude", "phase amplitude must lie in [0, 1]")
    if i.center is not None and len(i.center) != 2:
        raise ConfigError("initial.center", "must have two entries")
    if cfg.output.cadence < 1:
        raise ConfigError("output.cadence", "must be >= 1")
    if cfg.ensemble.members < 1:
        raise ConfigError("ensemble.members", "must be >= 1")
    if cfg.ensemble.workers < 1:
        raise ConfigError("ensemble.workers", "must be >= 1")
    if cfg.dependence is not None:
        dep = cfg.dependence
        if any(e < 0 for e in dep.eps) or not dep.eps:
            raise ConfigError("dependence.eps", "needs at least one non-negative value")
        if not dep.n_level > 0:
            raise ConfigError("dependence.n_level", "must be positive")
    if cfg.convergence is not None:
        cv = cfg.convergence
        if cv.kind not in ("in_dt", "in_lambda", "in_n"):
            raise ConfigError("convergence.kind", "must be in_dt, in_lambda or in_n")
        if len(cv.ladder) < 2:
            raise ConfigError("convergence.ladder", "needs at least two rungs")
        if cv.members < 1:
            raise ConfigError("convergence.members", "must be >= 1")
        if cv.kind == "in_dt":
            fine = min(cv.ladder)
            for v in cv.ladder:
                if abs(v / fine - round(v / fine)) > 1e-9:
                    raise ConfigError("convergence.ladder", "dt rungs must be integer multiples of the finest")
                if abs(s.T / v - round(s.T / v)) > 1e-9 * max(1.0, s.T / v):
                    raise ConfigError("convergence.ladder", f"T is not a multiple of dt={v}")
        if cv.kind == "in_n":
            for v in cv.ladder:
                if v != int(v) or int(v) < 4 or int(v) % 2:
                    raise ConfigError("convergence.ladder", "grid sizes must be even integers >= 4")
    return cfg
