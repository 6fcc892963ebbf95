"""Exact transition probabilities, likelihoods and Bayesian inference for
stochastic compartmental epidemic models via multivariate birth processes."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BadInit,
    ConfigError,
    DataError,
    DivergentTrajectory,
    EmptySupport,
    EpibirthError,
    ImpossibleTransition,
    InvalidParam,
    InvalidTime,
    NonConvergence,
    NumericalUnderflow,
    OverflowDomain,
    TruncationLeak,
    UnboundedLattice,
    UnstableEstimate,
)
from .laplace import InversionConfig, InversionReport, abscissae, invert_at, invert_grid  # noqa: E402
from .lattice import (  # noqa: E402
    BirthProcessSpec,
    backward_probabilities,
    sweep_backward,
    sweep_forward,
    sweep_forward_with_derivatives,
    transition_probabilities,
)
from .models import (  # noqa: E402
    Channel,
    CompartmentalModel,
    PowerLaw,
    as_birth_process,
    builtin_model,
    enumerate_event_solutions,
    event_bounds,
    sir_from_r0,
    transition_distribution,
    transition_probability,
    transition_table,
)
from .likelihood import (  # noqa: E402
    LogLikReport,
    ObservationSeries,
    backward_kernel,
    interval_kernel,
    loglik,
)
from .samplers import (  # noqa: E402
    ChainOutput,
    HMCConfig,
    PosteriorTarget,
    hmc_sample,
    laplace_approximation,
    rw_metropolis_sample,
)
from .hierarchical import HierConfig, HierarchicalState, hierarchical_gibbs  # noqa: E402
from .bayes import savage_dickey  # noqa: E402
