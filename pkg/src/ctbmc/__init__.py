"""Simulation and maximum-likelihood estimation for continuous-time
bivariate Markov chains: a visible coordinate modulated by a hidden one,
both jumping in continuous time."""

__version__ = "0.1.0"

from .baseline import fit_discrete, recover_generator, time_sample
from .em import EmConfig, FitResult, SufficientStats, e_step, fit, m_step
from .errors import (
    CtbmcError,
    DegenerateStateError,
    LogmError,
    ParseError,
    StationaryError,
    ValidationError,
    ZeroLikelihoodError,
)
from .inference import ForwardBackwardCache, filtered_state, forward_backward, log_likelihood
from .io import load_generator, load_path, save_generator, save_path
from .linalg import expm, principal_logm, stationary_row_vector, van_loan_integral
from .model import (
    Generator,
    InitialDistribution,
    PhaseTypeDwell,
    StationaryAnalysis,
    StructureFlags,
    ValidationReport,
    detect_structure,
    dwell_distribution,
    embedded_chain,
    make_bmap,
    make_mmmp,
    stationary,
    transition_density,
    survival,
    underlying_is_markov,
    validate,
)
from .simulate import JointPath, ObservedPath, observe, simulate_joint, simulate_until_jumps

__all__ = [name for name in dir() if not name.startswith("_")]
