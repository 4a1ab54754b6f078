"""Field dynamics of multimode open resonators: Markovian moments, c-number
Langevin ensembles, biorthogonal resonances and memory-kernel dynamics."""

from __future__ import annotations

from .errors import (
    ConsistencyError,
    ExceptionalPointError,
    NumericalPreconditionError,
    OpenResError,
    ResolutionError,
    ResourceError,
    SpecificationError,
)
from .model import (
    OverlapReport,
    SystemSpec,
    build_damping_matrix,
    build_effective_hamiltonian,
    generate_example,
    overlap_diagnostics,
    validate_spec,
)
from .moments import (
    EquivalenceReport,
    GaussianState,
    derive_drift,
    equivalence_report,
    evolve_series,
    evolve_state,
    stationary_state,
    weak_coupling_reference,
)
from .resonances import (
    ResonanceDecomposition,
    decompose,
    lamprecht_ritsch_coefficients,
    lamprecht_ritsch_damping,
    petermann_factors,
)
from .trajectories import TrajectoryEnsemble, run_ensemble
from .memory import (
    MemoryKernel,
    SpectralProfile,
    compute_kernels,
    markov_limit_check,
    noise_autocorrelation,
    rwa_correction_scan,
    solve_mean_volterra,
)

__version__ = "0.1.0"
