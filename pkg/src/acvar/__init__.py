"""Asymptotic conditional value at risk for finite Markov chains.

Exact computation through the Perron root of the exponentially tilted
transition matrix, and a two-timescale stochastic-approximation scheme that
learns the same tilted kernel from a single simulated trajectory.
"""

from acvar.density import KdeModel, fit_kde
from acvar.errors import (
    AcvarError,
    ConvergenceError,
    InvalidKernelError,
    InvalidParameterError,
    InvalidStateError,
    LikelihoodRatioError,
    NoAcceptanceError,
    NumericalError,
    SpectralError,
    TiltOverflowError,
    UnattainableThresholdError,
)
from acvar.markov import (
    MarkovChain,
    generate_random_chain,
    linear_reward_profile,
    make_streams,
    stationary_distribution,
    uniform_reward_profile,
)
from acvar.oracle import (
    OracleSolution,
    PerronPair,
    acvar_oracle,
    log_mgf,
    mc_conditioning_oracle,
    perron_pair,
    solve_zeta_star,
    tilted_kernel,
)
from acvar.sa import RunTrace, SaState, StepSchedule, make_schedule, run

__version__ = "0.1.0"

__all__ = [
    "AcvarError",
    "ConvergenceError",
    "InvalidKernelError",
    "InvalidParameterError",
    "InvalidStateError",
    "KdeModel",
    "LikelihoodRatioError",
    "MarkovChain",
    "NoAcceptanceError",
    "NumericalError",
    "OracleSolution",
    "PerronPair",
    "RunTrace",
    "SaState",
    "SpectralError",
    "StepSchedule",
    "TiltOverflowError",
    "UnattainableThresholdError",
    "acvar_oracle",
    "fit_kde",
    "generate_random_chain",
    "linear_reward_profile",
    "log_mgf",
    "make_schedule",
    "make_streams",
    "mc_conditioning_oracle",
    "perron_pair",
    "run",
    "solve_zeta_star",
    "stationary_distribution",
    "tilted_kernel",
    "uniform_reward_profile",
]
