"""Non-linearity-aware zero-forcing precoding for two-user MU-MIMO downlinks
with third-order memoryless power amplifiers."""

__version__ = "0.1.0"

from .metrics import MetricsReport, effective_channel, empirical_sindr, sindr_per_user
from .pa_model import (
    DEFAULT_PA,
    BussgangModel,
    PAArray,
    PACoefficients,
    apply_pa,
    bussgang,
    bussgang_gain,
    distortion_covariance,
    empirical_distortion_covariance,
    pa_response,
)
from .precoder import (
    ConvergenceError,
    DegenerateChannelError,
    PowerAllocation,
    SolverReport,
    effective_gains,
    naive_zf,
    nla_zf_alg1,
    nla_zf_alg2,
    nla_zf_block,
    rotate_columns,
    solve_phases,
)
from .simulation import SimConfig, SweepResult, run_sweep
