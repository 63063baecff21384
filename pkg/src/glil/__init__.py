"""Sublinear-expectation LIL toolkit: G-heat solver, volatility-policy simulation,
Strassen-ball geometry and long-path experiments."""

from .config import ExperimentConfig, load_config
from .core import SamplePath, TestFunction, TimeGrid, VolatilityInterval, loglog_scale, validate_volatility_interval
from .errors import *  # noqa: F401,F403
from .gheat import PdeSolverParams, conjugate_expectation, g_expectation, solve_g_heat, upper_distribution_bounds
from .lil import (
    ExperimentReport,
    abs_power_statistic,
    example_bounds,
    functional_image_experiment,
    run_invariance_experiment,
    subsequence_schedule,
    weighted_sum_statistic,
)
from .paths import (
    ConstantPolicy,
    PolicyFamily,
    RegimeSwitchingPolicy,
    SignFeedbackPolicy,
    estimate_capacity_bounds,
    mc_lower_expectation,
    mc_upper_expectation,
    simulate_path,
)
from .strassen import RescaledPath, ball_net, cluster_report, dist_to_strassen_ball, path_energy, rescale

__version__ = "0.1.0"
