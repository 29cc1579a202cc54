"""Periodic regulation of time-delay systems with an FIR-delay Youla-Kucera parameter."""

from .quasipoly import DelayRational, Polynomial, PoleProximity, Quasipolynomial, frequency_response
from .factorization import (
    CoprimeFactorization,
    FirDelayParameter,
    assemble_controller,
    assemble_sensitivity,
    compute_up,
    factorize_by_shift,
    factorize_delayed_first_order,
    factorize_pi,
    factorize_static,
)
from .synthesis import DesignResult, HarmonicTarget, RankDeficient, design_qm, verify_regulation
from .spectrum import RegionSpec, RootSet, count_roots_argument_principle, find_roots, sensitivity_spectrum
from .simulator import FourierSignal, SimScenario, TimeSeries, simulate_closed_loop, steady_state_residual
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"
