"""High-order strong-solution SDE integrators.

Classical Runge-Kutta stage machinery applied to the modified-drift
displacement function turns ODE methods into strong stochastic integrators;
this package ships the order-2 and order-4 schemes, Euler-Maruyama and
derivative-free Milstein baselines, an adaptive driver whose rejections
preserve the realized Wiener path, six exact-solution benchmark problems,
and a quantum-state-diffusion ensemble for the driven nonlinear absorber.
"""

from .driver import (
    PendingIncrements,
    StepController,
    StiffnessError,
    Trajectory,
    error_norm,
    integrate_adaptive,
    integrate_fixed,
)
from .noise import RngStream, WienerGrid, bridge_split, coarsen, sample_increment
from .problems import (
    BenchmarkProblem,
    PathAccumulator,
    PoleProximityError,
    ProblemId,
    accumulate,
    exact,
    make_problem,
)
from .qsd import (
    AbsorberModel,
    EnsembleStats,
    FockState,
    absorber_diffusion,
    absorber_drift,
    apply_ladder,
    embedded_system,
    run_ensemble,
)
from .steppers import SchemeId, em_step, milstein_df_step, srk2_step, srk4_step, step
from .system import (
    BlowUpError,
    DomainError,
    NoiseIncrement,
    SdeError,
    SdeSystem,
    StepResult,
    UnsupportedNoiseError,
    fd_contraction,
    increment_function,
    modified_drift,
)
from .tableau import DOP853_TABLEAU, RK4_TABLEAU, ButcherTableau

__version__ = "0.1.0"
