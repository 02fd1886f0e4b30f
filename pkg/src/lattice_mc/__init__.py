"""Sparse lattice Markov-chain discretization of SDEs via moment matching.

The pipeline: describe a diffusion (`SDEModel`, or a JSON config through
`load_config`/`config_to_model`), call `build_chain` to discretize it into a
`ChainModel` whose rows match local increment moments on a scaled lattice,
then analyze the chain (`chain_expectation`, `convergence_study`,
`optimal_stopping_value`, ...) or serialize it (`save_chain`,
`export_triplets`, `export_prism`).  The moment-matching layers underneath
(`match_moments_1d`, `match_moments_2d`, `caratheodory_reduce`, the
quadratic-program fallback) are public too, for building custom rows.
"""

__version__ = "0.1.0"

from .analysis import (
    ConvergenceReport,
    Functional,
    GrowthReport,
    MCReference,
    StoppingResult,
    chain_distribution,
    chain_expectation,
    chain_expectations,
    convergence_study,
    euler_mc_estimate,
    euler_mc_estimates,
    optimal_stopping_value,
    state_growth_report,
)
from .artifacts import (
    chain_from_json_dict,
    chain_to_json_dict,
    dumps_chain,
    export_prism,
    export_triplets,
    load_chain,
    parse_prism,
    parse_triplets,
    save_chain,
)
from .builder import (
    BuildError,
    BuildOptions,
    ChainModel,
    ConfigurationError,
    ConsistencyReport,
    RowMeta,
    SDEModel,
    build_chain,
    local_consistency_report,
    select_lattice,
    transformed_model,
)
from .config import (
    BUILTIN_NAMES,
    ModelConfig,
    builtin_config,
    builtin_model,
    config_to_model,
    load_config,
)
from .expressions import (
    ExpressionError,
    compile_expression,
    evaluate,
    parse_expression,
    unparse,
)
from .fallback import FallbackConfig, approx_match_qp
from .lattice import (
    DiscreteMeasure,
    LatticeCoord,
    LatticeSpec,
    MomentTarget,
    coord_to_point,
    lattice_round,
    measure_moments,
    point_to_coord,
)
from .moment1d import (
    ConstrainedInfeasibleError,
    InexactOnlyError,
    Match1DOptions,
    match_moments_1d,
    match_zero_mean_1d,
    variance_condition_holds,
)
from .moment_nd import (
    EigenSystem,
    jacobi_eigh,
    match_moments_2d,
    match_second_moment_2d_zero_mean,
    match_second_moment_nd_eigenlattice,
)
from .recombine import MomentMap, caratheodory_reduce, solve_simplex_weights

__all__ = [
    "BUILTIN_NAMES",
    "BuildError",
    "BuildOptions",
    "ChainModel",
    "ConfigurationError",
    "ConsistencyReport",
    "ConstrainedInfeasibleError",
    "ConvergenceReport",
    "DiscreteMeasure",
    "EigenSystem",
    "ExpressionError",
    "FallbackConfig",
    "Functional",
    "GrowthReport",
    "InexactOnlyError",
    "LatticeCoord",
    "LatticeSpec",
    "MCReference",
    "Match1DOptions",
    "ModelConfig",
    "MomentMap",
    "MomentTarget",
    "RowMeta",
    "SDEModel",
    "StoppingResult",
    "approx_match_qp",
    "build_chain",
    "builtin_config",
    "builtin_model",
    "caratheodory_reduce",
    "chain_distribution",
    "chain_expectation",
    "chain_expectations",
    "chain_from_json_dict",
    "chain_to_json_dict",
    "compile_expression",
    "config_to_model",
    "convergence_study",
    "coord_to_point",
    "dumps_chain",
    "euler_mc_estimate",
    "euler_mc_estimates",
    "evaluate",
    "export_prism",
    "export_triplets",
    "jacobi_eigh",
    "lattice_round",
    "load_chain",
    "load_config",
    "local_consistency_report",
    "match_moments_1d",
    "match_moments_2d",
    "match_second_moment_2d_zero_mean",
    "match_second_moment_nd_eigenlattice",
    "match_zero_mean_1d",
    "measure_moments",
    "optimal_stopping_value",
    "parse_expression",
    "parse_prism",
    "parse_triplets",
    "point_to_coord",
    "save_chain",
    "select_lattice",
    "solve_simplex_weights",
    "state_growth_report",
    "transformed_model",
    "unparse",
    "variance_condition_holds",
]
