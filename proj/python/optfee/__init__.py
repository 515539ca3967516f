"""Brokerage-fee principal-agent solver.

Contracts are passed around as JSON text produced by ``constant_contract`` or
``polynomial_contract``.
"""

from ._optfee import (
    ConfigError,
    Estimate,
    HjbSolution,
    ModelError,
    ModelParams,
    check_contract,
    constant_contract,
    constant_rate_path,
    entropy_identity,
    evaluate_contract,
    optimize_constants,
    oracle_case,
    polynomial_contract,
    principal_objective,
    project_to_box,
    reduced_entropy_identity,
    reference_path,
    solve_hjb,
    solve_relaxed,
    solve_strong,
    two_atom_grid_oracle,
    validate_params,
    weight_mean,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Estimate",
    "HjbSolution",
    "ModelError",
    "ModelParams",
    "check_contract",
    "constant_contract",
    "constant_rate_path",
    "entropy_identity",
    "evaluate_contract",
    "optimize_constants",
    "oracle_case",
    "polynomial_contract",
    "principal_objective",
    "project_to_box",
    "reduced_entropy_identity",
    "reference_path",
    "solve_hjb",
    "solve_relaxed",
    "solve_strong",
    "two_atom_grid_oracle",
    "validate_params",
    "weight_mean",
]
