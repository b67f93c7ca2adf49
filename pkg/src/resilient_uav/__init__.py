"""Risk-aware association, bandwidth and trajectory planning for multi-UAV downlinks."""
from .baselines import nearest_equal_plan, placement_plan
from .channel import ChannelRealization, draw_fading, sum_rates, user_rates
from .convex import ConcaveProgram, SolverSettings, SolveReport, maximize
from .harness import EpisodeMetrics, EpisodeOptions, run_episode, sweep_mu
from .plan import Plan, plan_violations
from .planner import ConvergenceTrace, PlannerSettings, ao_optimize, sr_max
from .risk import RiskConfig, exp_utility, jain_index, sum_rate_variance
from .scenario import Scenario, load_scenario, paper_setup, validate_scenario

__all__ = [
    "ChannelRealization", "ConcaveProgram", "ConvergenceTrace", "EpisodeMetrics", "EpisodeOptions", "Plan",
    "PlannerSettings", "RiskConfig", "Scenario", "SolveReport", "SolverSettings", "ao_optimize", "draw_fading",
    "exp_utility", "jain_index", "load_scenario", "maximize", "nearest_equal_plan", "paper_setup",
    "placement_plan", "plan_violations", "run_episode", "sr_max", "sum_rate_variance", "sum_rates",
    "sweep_mu", "user_rates", "validate_scenario",
]
