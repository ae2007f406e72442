"""Functional Itô calculus on grid paths: simulation, derivatives, backward equations and comparison checks."""

from .pathspace import GridPath, StoppedPath, TimeGrid, concat, d_infty, stop, stop_pre, vertical_bump
from .models import (
    BrownianMotion,
    CompoundPoisson,
    ItoSemimartingale,
    LevyJumpDiffusion,
    characteristics_at,
    simulate,
    simulate_batch,
)
from .functionals import (
    AsianPayoff,
    DiscreteMonitor,
    EstimatedValuation,
    IntegralOfFunction,
    IntegralPayoff,
    TerminalPayoff,
    valuation_mc,
)
from .calculus import DerivativeConfig, horizontal_derivative, probe_vertical_property, vertical_gradient, vertical_hessian
from .backwards import U_op, Ubar_op, ito_convergence, ito_residual, kbe_residual_profile
from .comparison import ComparisonScenario, run_scenario

__version__ = "0.1.0"
