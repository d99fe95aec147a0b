"""Numerical toolkit for sublaplacians, Hardy constants and commutator diagnostics on Carnot groups."""
from .algebra import (
    QuasiNorm,
    QuasiNormKind,
    StratifiedAlgebra,
    abelian,
    bch_multiply,
    build_algebra,
    dilate,
    gradient_rho,
    heisenberg,
    homogeneous_dimension,
    horizontal_part,
    load_algebra,
    preset_algebra,
    quasi_norm,
    quasi_norm_gradient,
    rho_gradient_weight,
    validate_algebra,
    vector_field_coefficients,
)
from .diagnostics import (
    OperatorTriple,
    RefinementLadder,
    assemble_hamiltonian,
    eigenvalue_persistence,
    lap_probe,
    positivity_margin,
    second_commutator_domination,
    spectral_measure,
    verify_commutator,
)
from .hardy import (
    HardyEstimate,
    HardyWeight,
    compare_weights,
    estimate_E_alpha,
    estimate_kappa,
    optimal_constant,
    weighted_positivity,
)
from .lattice import (
    GridFunction,
    Lattice,
    LatticeSpec,
    build_lattice,
    dilation_pullback,
    euler_operator,
    generator_A,
    horizontal_field_operator,
    multiplication_operator,
    sublaplacian,
)
from .potentials import (
    AdmissibilityReport,
    Criterion,
    Potential,
    check_admissibility,
    default_cloud,
    euler_derivative,
    make_potential,
    radial_limit,
)
from .spectral import fractional_power, sobolev_norm, sublaplacian_factorization

__version__ = "0.1.0"
