"""Spectral simulation of dispersive PDEs on the circle whose linear
dispersion is modulated by a rough function of time.

Submodules: ``modulation`` (paths, oscillatory phase integrals,
irregularity estimation), ``spectral`` (truncated Fourier fields and
propagators), ``operators`` (multilinear phase-weighted interaction
sums), ``solvers`` (normal-form fixed point, Riemann-sum mild marching,
one-step schemes), ``diagnostics`` (conservation, smoothing, scaling and
convergence probes) and ``cli`` (config-driven experiment runner).
"""

from .modulation import (
    IrregularityEstimate,
    ModulationPath,
    estimate_rho,
    from_samples,
    generate_fbm,
    irregularity_norm,
    linear_path,
    load_path,
    phase_integral,
    save_path,
)
from .spectral import (
    DispersionSymbol,
    EquationKind,
    SpectralField,
    default_symbol,
    dispersion_value,
    dispersion_values,
    load_field,
    propagator_apply,
    random_field,
    save_field,
    sobolev_norm,
)
from .operators import (
    OperatorContext,
    bilinear_driver,
    quintic_nn,
    quintic_nr,
    resonance_cubic_nls,
    resonance_quadratic,
    resonant_cubic,
    trilinear_nonresonant_nls,
    trilinear_normal_form,
)
from .solvers import (
    PicardDivergenceError,
    SolverConfig,
    Trajectory,
    corrected_step,
    gauge_transform,
    load_trajectory,
    save_trajectory,
    solve,
    solve_mild_riemann,
    solve_normal_form,
    verify_increment_identity,
)
from .diagnostics import (
    ConvergenceReport,
    RegimeVerdict,
    conservation_audit,
    convergence_study,
    fitted_decay_exponent,
    operator_norm_probe,
    regime_check,
    smoothing_residual,
)

__version__ = "0.1.0"
