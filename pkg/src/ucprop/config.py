"""Scenario configuration: YAML text to a validated, round-trippable dataclass.

Grammar (YAML mapping, every key optional except ``experiment``)::

    experiment: doubling          # one of EXPERIMENTS
    seed: 0
    output: out/doubling
    attrition: 0.05               # tolerated fraction of failed members
    domain:   {dim: 3, lo: -1.0, hi: 1.0}
    grid:     {n: 81, levels: [17, 33, 65]}
    coefficients:
      g: "1"                      # scalar expression or symmetric nested list
      V: "0"
      W1: []                      # list of dim expressions or empty
      W2: []
      singular:                   # power-law terms |x - center|^(-power)
        - {target: V, scale: 1.0, power: 1.5, center: [0, 0, 0]}
    ensemble: {size: 10, seed: 0, cap: 1, tol: 1.0e-10}
    constants: {kappa: 0.24, ...} # any ConstantsProfile field
    sweep:
      epsilons: [1.0e-2, 1.0e-4]
      radii: []
      gammas: []
      betas: [0.5]
      rho: 0.0                    # 0 means the experiment picks its own
      samples: 10000
      margin: 0.25
      stride: 1                   # center subsampling for ensemble scans
      step_ratio: 2.5             # chain step R / r
      step_slack: 1.01            # chain step kappa*rho / R
      solution: "sin(pi*x1)*exp(x2)*cos(x3)"   # manufactured solution
      r0_exponent: 1.0            # configured B in the crossing-radius lower bound
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields

import yaml

from .constants import ConstantsProfile
from .errors import ConfigError

EXPERIMENTS = (
    "caccioppoli",
    "doubling",
    "three-sphere",
    "muckenhoupt",
    "dyadic",
    "propagate-l2",
    "growth-linf",
    "convergence",
    "solve",
)


@dataclass
class DomainSpec:
    dim: int = 3
    lo: float = -1.0
    hi: float = 1.0


@dataclass
class GridSpec:
    n: int = 33
    levels: list = field(default_factory=lambda: [17, 33, 65])


@dataclass
class SingularSpec:
    target: str = "V"
    scale: float = 1.0
    power: float = 1.0
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    direction: list | None = None


@dataclass
class CoefficientSpec:
    g: object = "1"
    V: str = "0"
    W1: list = field(default_factory=list)
    W2: list = field(default_factory=list)
    singular: list = field(default_factory=list)


@dataclass
class EnsembleSpec:
    size: int = 10
    seed: int = 0
    cap: int = 1
    tol: float = 1e-10


@dataclass
class SweepSpec:
    epsilons: list = field(default_factory=lambda: [1e-2, 1e-4, 1e-6, 1e-8, 1e-10])
    radii: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    betas: list = field(default_factory=lambda: [0.5])
    rho: float = 0.0
    samples: int = 10000
    margin: float = 0.25
    stride: int = 1
    step_ratio: float = 2.5
    step_slack: float = 1.01
    solution: str = "sin(pi*x1)*exp(x2)*cos(x3)"
    r0_exponent: float = 1.0


@dataclass
class ScenarioConfig:
    experiment: str = "doubling"
    seed: int = 0
    output: str = "out"
    attrition: float = 0.05
    domain: DomainSpec = field(default_factory=DomainSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    coefficients: CoefficientSpec = field(default_factory=CoefficientSpec)
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    constants: dict = field(default_factory=dict)
    sweep: SweepSpec = field(default_factory=SweepSpec)

    @property
    def profile(self) -> ConstantsProfile:
        data = {"dim": self.domain.dim, **self.constants}
        return ConstantsProfile.from_dict(data)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))


_SECTIONS = {
    "domain": DomainSpec,
    "grid": GridSpec,
    "coefficients": CoefficientSpec,
    "ensemble": EnsembleSpec,
    "sweep": SweepSpec,
}


def _type_ok(value, default) -> bool:
    if default is None:
        return value is None or isinstance(value, list)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    if isinstance(default, dict):
        return isinstance(value, dict)
    return True


def _build(cls, data, path: str, problems: list):
    if not isinstance(data, dict):
        problems.append(f"{path}: expected a mapping")
        return cls()
    proto = cls()
    known = {f.name for f in fields(cls)}
    for k in data:
        if k not in known:
            problems.append(f"{path}.{k}: unknown key")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        default = getattr(proto, f.name)
        if f.name in _SECTIONS and cls is ScenarioConfig:
            kwargs[f.name] = _build(_SECTIONS[f.name], v, f"{path}.{f.name}", problems)
            continue
        if cls is CoefficientSpec and f.name == "g":
            if not isinstance(v, (str, int, float, list)):
                problems.append(f"{path}.g: expected expression or nested list")
                continue
            kwargs[f.name] = v if not isinstance(v, (int, float)) else str(v)
            continue
        if cls is CoefficientSpec and f.name == "singular":
            if not isinstance(v, list):
                problems.append(f"{path}.singular: expected a list")
                continue
            kwargs[f.name] = [
                _build(SingularSpec, item, f"{path}.singular[{i}]", problems) for i, item in enumerate(v)
            ]
            continue
        if not _type_ok(v, default):
            problems.append(f"{path}.{f.name}: expected {type(default).__name__}, got {type(v).__name__}")
            continue
        if isinstance(default, float) and isinstance(v, int):
            v = float(v)
        kwargs[f.name] = v
    return cls(**kwargs)


def validate(cfg: ScenarioConfig) -> list[str]:
    out = []
    if cfg.experiment not in EXPERIMENTS:
        out.append(f"experiment: unknown selector {cfg.experiment!r}")
    if cfg.domain.dim not in (2, 3):
        out.append("domain.dim: must be 2 or 3")
    if not cfg.domain.lo < cfg.domain.hi:
        out.append("domain: lo < hi required")
    if cfg.grid.n < 5:
        out.append("grid.n: at least 5 nodes required")
    if any(not isinstance(n, int) or n < 5 for n in cfg.grid.levels):
        out.append("grid.levels: integers >= 5 required")
    if cfg.ensemble.size < 1:
        out.append("ensemble.size: at least 1 required")
    if cfg.ensemble.cap < 0:
        out.append("ensemble.cap: nonnegative required")
    if not 0 <= cfg.attrition < 1:
        out.append("attrition: in [0, 1) required")
    if any(not 0 < e < 1 for e in cfg.sweep.epsilons):
        out.append("sweep.epsilons: values in (0, 1) required")
    if any(not 0 < g < 1 for g in cfg.sweep.gammas):
        out.append("sweep.gammas: values in (0, 1) required")
    if any(not 0 < b < 1 for b in cfg.sweep.betas):
        out.append("sweep.betas: values in (0, 1) required")
    if any(not r > 0 for r in cfg.sweep.radii):
        out.append("sweep.radii: positive values required")
    if cfg.sweep.stride < 1:
        out.append("sweep.stride: at least 1 required")
    if not cfg.sweep.step_ratio > 2:
        out.append("sweep.step_ratio: > 2 required")
    if not cfg.sweep.step_slack > 1:
        out.append("sweep.step_slack: > 1 required")
    if not cfg.sweep.r0_exponent > 0:
        out.append("sweep.r0_exponent: > 0 required")
    if cfg.sweep.rho < 0:
        out.append("sweep.rho: nonnegative required")
    for i, s in enumerate(cfg.coefficients.singular):
        if s.target not in ("V", "W1", "W2"):
            out.append(f"coefficients.singular[{i}].target: one of V, W1, W2")
        if len(s.center) != cfg.domain.dim:
            out.append(f"coefficients.singular[{i}].center: length must equal domain.dim")
    for name in ("W1", "W2"):
        vec = getattr(cfg.coefficients, name)
        if vec and len(vec) != cfg.domain.dim:
            out.append(f"coefficients.{name}: length must equal domain.dim")
    profile_data = {"dim": cfg.domain.dim, **cfg.constants}
    known = {f.name for f in fields(ConstantsProfile)}
    for k in profile_data:
        if k not in known:
            out.append(f"constants.{k}: unknown key")
    try:
        ConstantsProfile.from_dict({k: v for k, v in profile_data.items() if k in known})
    except ConfigError as exc:
        out.extend(f"constants: {v}" for v in exc.violations)
    except TypeError as exc:
        out.append(f"constants: {exc}")
    return out


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate; raises :class:`ConfigError` listing every violation."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"malformed YAML: {exc}"]) from None
    if data is None:
        data = {}
    problems: list[str] = []
    cfg = _build(ScenarioConfig, data, "config", problems)
    if "experiment" not in (data if isinstance(data, dict) else {}):
        problems.append("config.experiment: required")
    problems.extend(validate(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
