"""Linear multiuser MIMO downlink precoding by product-of-MSE minimization.

Modules
-------
model
    System types, covariances, SINRs, MSEs and rates.
pmse
    The alternating PMSE design and its building blocks.
baselines
    SMSE, ZF and BD precoders and the DPC sum-capacity bound.
modulation
    Adaptive PSK bit loading and symbol-level BER simulation.
harness
    Channel generation, Monte Carlo sweeps and figure recipes.
"""

from .errors import (ConvergenceError, DomainError, InfeasibleConfigurationError,
                     InfeasibleTargetError, NumericError, PrecodingError, StructuralError,
                     SweepError)
from .model import (ChannelSet, FilterSet, PowerAllocation, StreamMetrics, SystemConfig,
                    stream_metrics)
from .pmse import Solution, SolverOptions, SolverTrace, solve
from .baselines import bd_precoder, dpc_sum_capacity, smse_solve, zf_precoder
from .modulation import BerModel, ModulationPlan, plan_bits, simulate_ber
from .harness import ExperimentSpec, figure_recipes, generate_channel, run_sweep

__version__ = "0.1.0"
