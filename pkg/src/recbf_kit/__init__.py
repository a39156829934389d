"""Robust exponential control barrier functions with learned parameter bounds."""
from .cbf_core import (
    EtaSystem,
    GainRow,
    HChain,
    UncertaintyBox,
    check_initial_membership,
    clamp_to_robust_bound,
    companion_system,
    comparison_lower_bound,
    grid_minimize,
    place_poles,
)
from .sim_engine import AccConfig, LaneConfig, run_acc_scenario, run_lane_scenario

__version__ = "0.1.0"
