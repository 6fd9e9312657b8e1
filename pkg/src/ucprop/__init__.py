"""Numerical laboratory for quantitative unique continuation of elliptic solutions."""
from .config import ScenarioConfig, dump_config, load_config, parse_config
from .constants import ConstantsProfile
from .dyadic import CubeFamily, DyadicCube, Root, bruteforce_step, iterate_families, nadirashvili_step
from .errors import (
    ConfigError,
    ContractError,
    DisconnectedError,
    DomainError,
    PreconditionError,
    ResolutionError,
    SolverError,
    UcpropError,
)
from .experiments import Bundle, run_experiment
from .geometry import Ball, Grid, RegionMask, ball_region, box_domain, inner_region
from .growth import growth_claim_check, growth_trace, linf_envelope
from .metrology import caccioppoli_ratio, doubling_check, doubling_constant, muckenhoupt_check
from .smallness import find_small_ball, phi_estimate, propagate_goodness, select_initial_family
from .solver import (
    CoefficientRecipe,
    SingularTerm,
    SolutionEnsemble,
    SolutionField,
    build_coefficients,
    laplacian_recipe,
    solve_dirichlet,
)
from .three_sphere import alpha_exponent, plan_chain, propagate_chain, verify_three_sphere

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "Bundle",
    "CoefficientRecipe",
    "ConfigError",
    "ConstantsProfile",
    "ContractError",
    "CubeFamily",
    "DisconnectedError",
    "DomainError",
    "DyadicCube",
    "Grid",
    "PreconditionError",
    "RegionMask",
    "ResolutionError",
    "Root",
    "ScenarioConfig",
    "SingularTerm",
    "SolutionEnsemble",
    "SolutionField",
    "SolverError",
    "UcpropError",
    "alpha_exponent",
    "ball_region",
    "box_domain",
    "bruteforce_step",
    "build_coefficients",
    "caccioppoli_ratio",
    "doubling_check",
    "doubling_constant",
    "dump_config",
    "find_small_ball",
    "growth_claim_check",
    "growth_trace",
    "inner_region",
    "iterate_families",
    "laplacian_recipe",
    "linf_envelope",
    "load_config",
    "muckenhoupt_check",
    "nadirashvili_step",
    "parse_config",
    "phi_estimate",
    "plan_chain",
    "propagate_chain",
    "propagate_goodness",
    "run_experiment",
    "select_initial_family",
    "solve_dirichlet",
    "verify_three_sphere",
]
