"""exceptions raised by gridstrike"""

from __future__ import annotations
from typing import Any, Optional


class GridStrikeError(Exception):
    """base class of all gridstrike errors"""

    exit_code: int = 1


class InputError(GridStrikeError):
    """bad dataset, scenario or argument supplied by the user"""

    exit_code = 2


class CaseParseError(InputError):
    """grid case file cannot be parsed against the schema"""


class CaseValidationError(InputError):
    """grid case violates an invariant; names the offending records"""

    def __init__(self, message: str, records: Optional[list] = None):
        super().__init__(message)
        self.records = records or []


class FleetValidationError(InputError):
    """fleet file is malformed or inconsistent"""


class ScenarioError(InputError):
    """attack scenario invalid or refers to unknown operators/buses"""


class NumericalError(GridStrikeError):
    """a solver or integrator failed"""

    exit_code = 1


class PowerFlowDivergedError(NumericalError):
    """Newton-Raphson did not reach the tolerance"""

    def __init__(self, mismatch: float, iterations: int):
        super().__init__(
            f"power flow did not converge after {iterations} iterations "
            f"(max mismatch {mismatch:.3e} p.u.)"
        )
        self.mismatch = mismatch
        self.iterations = iterations


class SingularJacobianError(NumericalError):
    """Jacobian could not be factorised"""

    def __init__(self, iteration: int, pivot: Any = None):
        super().__init__(
            f"singular Jacobian at iteration {iteration} (pivot: {pivot})"
        )
        self.iteration = iteration
        self.pivot = pivot


class InitialConditionError(NumericalError):
    """transient started from a power flow that is not converged"""


class LossOfSynchronismError(NumericalError):
    """
    a machine's speed deviation left the admissible band

    partial_result holds the trace up to the abort instant
    """

    def __init__(self, time_s: float, generator_bus: int, partial_result: Any = None):
        super().__init__(
            f"loss of synchronism at t={time_s:.3f} s (generator at bus {generator_bus})"
        )
        self.time_s = time_s
        self.generator_bus = generator_bus
        self.partial_result = partial_result


class InfeasibleAttackError(GridStrikeError):
    """the whole matching fleet cannot push frequency to the target"""

    exit_code = 0

    def __init__(self, target_hz: float, full_fleet_peak_hz: float, full_fleet_mw: float):
        super().__init__(
            f"target {target_hz} Hz infeasible: full fleet ({full_fleet_mw:.3f} MW) "
            f"peaks at {full_fleet_peak_hz:.4f} Hz"
        )
        self.target_hz = target_hz
        self.full_fleet_peak_hz = full_fleet_peak_hz
        self.full_fleet_mw = full_fleet_mw
