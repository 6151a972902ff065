"""gridstrike backend"""
# pylint: skip-file

from .errors import *
from .grid_model import (
    Branch,
    BranchKind,
    Bus,
    BusKind,
    Generator,
    GridCase,
    AdmittanceMatrix,
    build_ybus,
    dump_grid_case,
    load_grid_case,
    validate_case,
    to_per_unit,
    from_per_unit,
)
from .powerflow import (
    InjectionSet,
    PowerFlowSolution,
    apply_ev_load,
    redispatch,
    solve_power_flow,
    line_loadings,
    loading_table,
    power_balance,
)
from .dynamics import (
    LoadStep,
    MachineState,
    SimulationConfig,
    TransientResult,
    TransientSummary,
    simulate_transient,
    steady_state_frequency_analytic,
    extract_summary,
)
from .protection import (
    RelayEvaluator,
    RelayEvent,
    RelayKind,
    RelaySettings,
    Verdict,
    scan_relays,
    scan_static_overloads,
    blackout_verdict,
)
from .attack import (
    AttackScenario,
    Direction,
    EvcsFleet,
    FleetRecord,
    fleet_slice,
    interpolate_year,
    load_fleet,
    load_scenario,
    min_attack_power,
    operating_point,
    per_operator_sweep,
    run_scenario,
    to_events,
    year_sweep,
)
