"""Quasi-adiabatic control of 1D Schrodinger eigenmodes by moving potential walls."""

from .errors import (
    BisectionFailure,
    ClosureExceeded,
    ConvergenceFailure,
    CrossingInside,
    DegenerateSplit,
    Discontinuity,
    InfeasibleLengths,
    LinearSolveFailure,
    NormMismatch,
    RationalResonance,
    SpeedInfeasible,
    UnderResolved,
    WaitExceeded,
    WallflowError,
    ZeroNorm,
)
from .field import (
    PotentialField,
    SpatialGrid,
    WallState,
    potential_on_grid,
    resolving_grid,
    rho,
    rho_eta,
    single_wall,
)
from .state import WaveFunction, free_mode, inner
from .spectral import (
    DiscreteHamiltonian,
    IdealSpectrum,
    ModeLabel,
    ModePermutation,
    Side,
    SpectralDecomposition,
    assemble,
    crossing_points,
    ideal_eigenfunction,
    ideal_rank,
    ideal_spectrum,
    ideal_values,
    lowest_eigenpairs,
    mu_value,
    permutation_by_composition,
    quasi_adiabatic_permutation,
    tracked_closure,
)
from .control import (
    ControlPath,
    CrossingStage,
    SmoothRamp,
    Stage,
    concat,
    crossing_stage,
    horizontal_stage,
    prop42_parameter_budget,
    smooth_ramp,
    theta,
    vertical_stage,
    wait_stage,
)
from .propagate import (
    cn_phase,
    energy,
    fidelity,
    mode_overlaps,
    propagate,
    propagate_batch,
    step,
)

__version__ = "0.1.0"
