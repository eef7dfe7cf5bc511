"""Nested named entity recognition with parallel instance queries."""

from ._piqn import (
    AnnotationError,
    CapacityError,
    ConfigError,
    DimensionError,
    InfeasibleError,
    allocate_quantities,
    brute_force_lap,
    decode,
    evaluate,
    generate_synthetic,
    gradcheck,
    one_way_mask,
    run_cli,
    solve_lap,
)

__all__ = [
    "AnnotationError",
    "CapacityError",
    "ConfigError",
    "DimensionError",
    "InfeasibleError",
    "allocate_quantities",
    "brute_force_lap",
    "decode",
    "evaluate",
    "generate_synthetic",
    "gradcheck",
    "one_way_mask",
    "run_cli",
    "solve_lap",
]
