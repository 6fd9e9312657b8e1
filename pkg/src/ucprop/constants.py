"""Free constants treated as configuration."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


@dataclass(frozen=True)
class ConstantsProfile:
    """Non-constructive constants of the theory, with calibratable defaults.

    ``H1`` is derived as ``5 * H0`` and never stored separately.
    """

    dim: int = 3
    H0: float = 1.0
    b0: float = 1.0
    tau0: float = 0.0
    kappa: float = 0.24
    rho0: float = 1.0
    a_n: float = 1.0
    gamma_n: float = 1.0
    k: float = 0.5
    sigma: float = 0.3
    C: tuple[float, ...] = field(default_factory=lambda: (1.0,) * 11)
    A: float = 1.0
    delta: float = 0.5
    beta: float = 0.5
    gamma: float = 0.9
    eps0: float = math.exp(-1.0)
    trivial_A: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "C", tuple(float(c) for c in self.C))
        problems = self.violations()
        if problems:
            raise ConfigError(problems)

    @property
    def H1(self) -> float:
        return 5.0 * self.H0

    @property
    def C0(self) -> float:
        return self.C[0]

    @property
    def C7(self) -> float:
        return self.C[7]

    def violations(self) -> list[str]:
        out = []
        if self.dim not in (2, 3):
            out.append("dim must be 2 or 3")
        if not self.H0 >= 1:
            out.append("H0 >= 1 required")
        if not self.b0 >= 1:
            out.append("b0 >= 1 required")
        if not self.tau0 >= 0:
            out.append("tau0 >= 0 required")
        if not self.kappa > 0:
            out.append("kappa > 0 required")
        if not self.kappa < 0.25:
            out.append("kappa < 1/4 required")
        if not self.rho0 > 0:
            out.append("rho0 > 0 required")
        for name in ("a_n", "gamma_n", "k", "A", "trivial_A"):
            if not getattr(self, name) > 0:
                out.append(f"{name} > 0 required")
        if not 0 < self.sigma:
            out.append("sigma > 0 required")
        if not self.sigma * self.dim < 1:
            out.append("sigma < 1/n required")
        if len(self.C) != 11:
            out.append("C must list C0..C10")
        elif any(not c > 0 for c in self.C):
            out.append("C0..C10 must be positive")
        for name in ("delta", "beta", "gamma"):
            if not 0 < getattr(self, name) < 1:
                out.append(f"{name} in (0, 1) required")
        if not 0 < self.eps0 < 1:
            out.append("eps0 in (0, 1) required")
        return out

    def replace(self, **changes) -> "ConstantsProfile":
        data = self.to_dict()
        data.update(changes)
        return ConstantsProfile.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["C"] = list(self.C)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ConstantsProfile":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown constant {k!r}" for k in unknown])
        return cls(**data)
