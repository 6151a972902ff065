"""EV charging fleet, attack scenarios and feasibility searches"""

from __future__ import annotations
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from gridstrike.backend import config
from gridstrike.backend.dynamics import (
    LoadStep,
    SimulationConfig,
    TransientResult,
    TransientSummary,
    extract_summary,
    simulate_transient,
)
from gridstrike.backend.errors import (
    FleetValidationError,
    InfeasibleAttackError,
    ScenarioError,
)
from gridstrike.backend.grid_model import GridCase
from gridstrike.backend.powerflow import (
    InjectionSet,
    PowerFlowSolution,
    apply_ev_load,
    redispatch,
    solve_power_flow,
)
from gridstrike.backend.protection import (
    RelayEvent,
    RelaySettings,
    Verdict,
    blackout_verdict,
    scan_relays,
)

ALL = "All"
SELECT_ALL = "all"
SELECT_NON_TESLA = "non-tesla"
TESLA = "Tesla"

T = TypeVar("T")
R = TypeVar("R")


class Direction(str, Enum):
    """attack direction"""

    SHUTDOWN = "shutdown"
    SURGE = "surge"


@dataclass
class FleetRecord:
    """charging power of one operator at one bus, MW per anchor year"""

    bus: int
    operator: str
    power_by_year: Dict[int, float]

    def as_dict(self) -> Dict[str, Any]:
        """fleet file record"""
        data: Dict[str, Any] = {"bus": self.bus, "operator": self.operator}
        for year in config.ANCHOR_YEARS:
            data[f"p{year}_mw"] = self.power_by_year[year]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FleetRecord:
        """from a [[record]] table"""
        try:
            return cls(
                bus=int(data["bus"]),
                operator=str(data["operator"]),
                power_by_year={year: float(data[f"p{year}_mw"]) for year in config.ANCHOR_YEARS},
            )
        except KeyError as err:
            raise FleetValidationError(f"fleet record {dict(data)} misses field {err}") from err


@dataclass
class EvcsFleet:
    """per-bus, per-operator charging power, including the 'All' aggregate rows"""

    records: List[FleetRecord]

    def __post_init__(self):
        self.validate()

    @property
    def operators(self) -> List[str]:
        """operator names in file order, aggregate excluded"""
        names: List[str] = []
        for rec in self.records:
            if rec.operator != ALL and rec.operator not in names:
                names.append(rec.operator)
        return names

    @property
    def buses(self) -> List[int]:
        """buses with charging load"""
        return sorted({rec.bus for rec in self.records})

    def aggregate(self) -> List[FleetRecord]:
        """the 'All' rows"""
        return [rec for rec in self.records if rec.operator == ALL]

    def resolve_operators(self, selector: Union[str, Sequence[str]]) -> List[str]:
        """operator names matched by a selector, case-insensitive"""
        if isinstance(selector, str):
            if selector.lower() == SELECT_ALL:
                return [ALL]
            if selector.lower() == SELECT_NON_TESLA:
                return [op for op in self.operators if op.lower() != TESLA.lower()]
            selector = [selector]
        lookup = {op.lower(): op for op in self.operators}
        resolved = []
        for name in selector:
            if name.lower() == SELECT_ALL:
                return [ALL]
            if name.lower() not in lookup:
                raise ScenarioError(f"unknown operator '{name}', fleet has {self.operators}")
            resolved.append(lookup[name.lower()])
        return resolved

    def validate(self) -> None:
        """operators named, powers non-negative, aggregate equals operator sum"""
        seen = set()
        for rec in self.records:
            if not rec.operator.strip():
                raise FleetValidationError(f"empty operator name at bus {rec.bus}")
            if any(value < 0 for value in rec.power_by_year.values()):
                raise FleetValidationError(f"negative power for {rec.operator} at bus {rec.bus}")
            key = (rec.bus, rec.operator)
            if key in seen:
                raise FleetValidationError(f"duplicate record {key}")
            seen.add(key)

        aggregate = {rec.bus: rec for rec in self.aggregate()}
        for bus in self.buses:
            if bus not in aggregate:
                raise FleetValidationError(f"bus {bus} has no '{ALL}' record")
            for year in config.ANCHOR_YEARS:
                total = sum(
                    rec.power_by_year[year] for rec in self.records
                    if rec.bus == bus and rec.operator != ALL
                )
                expected = aggregate[bus].power_by_year[year]
                if abs(total - expected) > 1e-6:
                    raise FleetValidationError(
                        f"bus {bus}, {year}: operators sum to {total:.6f} MW "
                        f"but '{ALL}' is {expected:.6f} MW"
                    )

    def as_dict(self) -> Dict[str, Any]:
        """fleet file content"""
        return {"record": [rec.as_dict() for rec in self.records]}


def load_fleet(path: Union[str, Path]) -> EvcsFleet:
    """read and validate a fleet toml file"""
    data = config.read_toml(path, error=FleetValidationError)
    if "record" not in data:
        raise FleetValidationError(f"{path}: missing [[record]] tables")
    fleet = EvcsFleet([FleetRecord.from_dict(rec) for rec in data["record"]])
    logging.info("loaded fleet with %s records, operators %s", len(fleet.records), fleet.operators)
    return fleet


def interpolate_year(fleet: EvcsFleet, year: float) -> Dict[Tuple[int, str], float]:
    """per-record MW at a (fractional) year, piecewise linear between anchors"""
    anchors = config.ANCHOR_YEARS
    if not anchors[0] <= year <= anchors[-1]:
        raise ScenarioError(f"year {year} outside {anchors[0]}-{anchors[-1]}")
    return {
        (rec.bus, rec.operator): float(
            np.interp(year, anchors, [rec.power_by_year[y] for y in anchors])
        )
        for rec in fleet.records
    }


@dataclass
class AttackScenario:
    """which chargers are manipulated, when and by how much"""

    year: float = 2030
    operators: Union[str, Tuple[str, ...]] = SELECT_ALL
    buses: Union[str, Tuple[int, ...]] = SELECT_ALL
    fraction: float = 1.0
    t_attack: float = 1.0
    direction: Direction = Direction.SHUTDOWN
    power_factor: float = 1.0
    relays: RelaySettings = field(default_factory=RelaySettings)
    name: str = ""

    def __post_init__(self):
        if not 0 <= self.fraction <= 1:
            raise ScenarioError(f"fraction must be in [0, 1], got {self.fraction}")
        if self.t_attack < 0:
            raise ScenarioError(f"t_attack must be >= 0, got {self.t_attack}")
        if not 0 < self.power_factor <= 1:
            raise ScenarioError(f"power factor must be in (0, 1], got {self.power_factor}")
        self.direction = Direction(self.direction)

    def with_fraction(self, fraction: float) -> AttackScenario:
        """copy with another fraction"""
        return dataclasses.replace(self, fraction=fraction)

    def validate(self, fleet: EvcsFleet) -> None:
        """referenced operators and buses exist in the fleet"""
        fleet.resolve_operators(self.operators)
        if not isinstance(self.buses, str):
            unknown = sorted(set(self.buses) - set(fleet.buses))
            if unknown:
                raise ScenarioError(f"unknown buses {unknown}, fleet has {fleet.buses}")
        elif self.buses.lower() != SELECT_ALL:
            raise ScenarioError(f"bad bus selector '{self.buses}'")
        interpolate_year(fleet, self.year)

    def as_dict(self) -> Dict[str, Any]:
        """scenario file content"""
        return {
            "name": self.name,
            "year": self.year,
            "operators": self.operators if isinstance(self.operators, str) else list(self.operators),
            "buses": self.buses if isinstance(self.buses, str) else list(self.buses),
            "fraction": self.fraction,
            "t_attack_s": self.t_attack,
            "direction": self.direction.value,
            "power_factor": self.power_factor,
            "relays": self.relays.as_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AttackScenario:
        """from parsed scenario toml"""
        operators = data.get("operators", SELECT_ALL)
        buses = data.get("buses", SELECT_ALL)
        try:
            return cls(
                year=float(data.get("year", 2030)),
                operators=operators if isinstance(operators, str) else tuple(operators),
                buses=buses if isinstance(buses, str) else tuple(int(b) for b in buses),
                fraction=float(data.get("fraction", 1.0)),
                t_attack=float(data.get("t_attack_s", 1.0)),
                direction=Direction(data.get("direction", Direction.SHUTDOWN.value)),
                power_factor=float(data.get("power_factor", 1.0)),
                relays=RelaySettings.from_dict(data.get("relays")),
                name=str(data.get("name", "")),
            )
        except ValueError as err:
            raise ScenarioError(f"bad scenario: {err}") from err


def load_scenario(path: Union[str, Path]) -> AttackScenario:
    """read a scenario toml file"""
    return AttackScenario.from_dict(config.read_toml(path, error=ScenarioError))


def fleet_slice(fleet: EvcsFleet, scenario: AttackScenario) -> Dict[int, float]:
    """per-bus MW manipulated by the scenario"""
    scenario.validate(fleet)
    operators = fleet.resolve_operators(scenario.operators)
    buses = fleet.buses if isinstance(scenario.buses, str) else sorted(scenario.buses)
    powers = interpolate_year(fleet, scenario.year)
    sliced = OrderedDict()
    for bus in buses:
        total = sum(powers.get((bus, op), 0.0) for op in operators)
        sliced[bus] = scenario.fraction * total
    return dict(sliced)


def to_events(
    fleet_mw: Mapping[int, float],
    t_attack: float,
    direction: Direction = Direction.SHUTDOWN,
    power_factor: float = 1.0,
) -> List[LoadStep]:
    """simultaneous load steps; shutdown removes load, surge adds it"""
    if t_attack < 0:
        raise ScenarioError(f"t_attack must be >= 0, got {t_attack}")
    sign = -1.0 if Direction(direction) == Direction.SHUTDOWN else 1.0
    tan_phi = float(np.tan(np.arccos(power_factor)))
    return [
        LoadStep(bus=bus, dp_mw=sign * mw, dq_mvar=sign * mw * tan_phi, time_s=t_attack)
        for bus, mw in sorted(fleet_mw.items())
        if mw != 0
    ]


def operating_point(
    case: GridCase,
    fleet: Optional[EvcsFleet],
    year: Optional[float],
    power_factor: float = 1.0,
    operators: Union[str, Sequence[str]] = SELECT_ALL,
) -> InjectionSet:
    """
    injections with the selected fleet charging at `year`, generation
    redispatched by droop participation; year None is the no-EV base case
    """
    injections = InjectionSet.from_case(case)
    if year is None or fleet is None:
        return injections
    charging = fleet_slice(fleet, AttackScenario(year=year, operators=operators))
    injections = apply_ev_load(injections, charging, power_factor)
    return redispatch(case, injections, sum(charging.values()))


@dataclass
class ScenarioOutcome:
    """everything one attack run produces"""

    scenario: AttackScenario
    attacked_mw: Dict[int, float]
    initial: PowerFlowSolution
    result: TransientResult
    summary: TransientSummary
    relay_events: List[RelayEvent]
    verdict: Verdict

    @property
    def total_mw(self) -> float:
        """attacked MW over all buses"""
        return float(sum(self.attacked_mw.values()))


def run_scenario(
    case: GridCase,
    fleet: EvcsFleet,
    scenario: AttackScenario,
    sim_config: Optional[SimulationConfig] = None,
) -> ScenarioOutcome:
    """operating point, power flow, transient, relays and verdict for one attack"""
    sim_config = sim_config or SimulationConfig()
    attacked = fleet_slice(fleet, scenario)
    injections = operating_point(case, fleet, scenario.year, scenario.power_factor)
    initial = solve_power_flow(case, injections)
    events = to_events(attacked, scenario.t_attack, scenario.direction, scenario.power_factor)
    run_config = dataclasses.replace(sim_config, events=events)
    result = simulate_transient(case, initial, run_config)
    summary = extract_summary(result)
    relay_events = scan_relays(result, scenario.relays)
    verdict = blackout_verdict(relay_events, case)
    logging.info(
        "scenario %s: %.3f MW, peak %.4f Hz, steady %.4f Hz, verdict %s",
        scenario.name or scenario.operators, sum(attacked.values()),
        summary.peak_hz, summary.steady_hz, verdict.value,
    )
    return ScenarioOutcome(scenario, attacked, initial, result, summary, relay_events, verdict)


def run_many(
    func: Callable[[T], R],
    items: Sequence[T],
    jobs: int = 1,
    desc: str = "",
    progress: bool = True,
) -> List[R]:
    """map over independent simulations, results in input order"""
    if jobs <= 1:
        return [func(item) for item in tqdm(items, desc=desc, disable=not progress)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(tqdm(pool.map(func, items), total=len(items), desc=desc, disable=not progress))


def attack_peak(
    case: GridCase,
    fleet: EvcsFleet,
    scenario: AttackScenario,
    sim_config: Optional[SimulationConfig] = None,
) -> float:
    """peak COI frequency of one scenario"""
    return run_scenario(case, fleet, scenario, sim_config).summary.peak_hz


@dataclass
class AttackPower:
    """result of the minimum attack power search"""

    target_hz: float
    mw: float
    fraction: float
    peak_hz: float
    full_fleet_mw: float
    probes: int

    def as_dict(self) -> Dict[str, Any]:
        """serializable dict"""
        return dataclasses.asdict(self)


def min_attack_power(
    case: GridCase,
    fleet: EvcsFleet,
    template: AttackScenario,
    target_hz: float,
    tol_mw: float = 0.5,
    sim_config: Optional[SimulationConfig] = None,
) -> AttackPower:
    """
    smallest manipulated MW whose peak COI frequency reaches target_hz

    bisection on the fraction of the matching fleet; raises
    InfeasibleAttackError if the full fleet falls short
    """
    full = template.with_fraction(1.0)
    full_mw = sum(fleet_slice(fleet, full).values())
    if target_hz <= config.NOMINAL_HZ:
        return AttackPower(target_hz, 0.0, 0.0, config.NOMINAL_HZ, full_mw, 0)

    peak_full = attack_peak(case, fleet, full, sim_config)
    probes = 1
    if peak_full < target_hz:
        raise InfeasibleAttackError(target_hz, peak_full, full_mw)

    low, high, peak_high = 0.0, 1.0, peak_full
    while (high - low) * full_mw > tol_mw:
        mid = 0.5 * (low + high)
        peak = attack_peak(case, fleet, template.with_fraction(mid), sim_config)
        probes += 1
        logging.info("  bisection probe %s: fraction %.5f -> %.4f Hz", probes, mid, peak)
        if peak >= target_hz:
            high, peak_high = mid, peak
        else:
            low = mid
    return AttackPower(target_hz, high * full_mw, high, peak_high, full_mw, probes)


def per_operator_sweep(
    case: GridCase,
    fleet: EvcsFleet,
    year: float = 2030,
    sim_config: Optional[SimulationConfig] = None,
    jobs: int = 1,
    progress: bool = True,
) -> Dict[str, TransientSummary]:
    """full-fraction attack on each operator's network separately"""

    def probe(operator: str) -> TransientSummary:
        scenario = AttackScenario(year=year, operators=(operator,), name=operator)
        return run_scenario(case, fleet, scenario, sim_config).summary

    operators = fleet.operators
    summaries = run_many(probe, operators, jobs=jobs, desc="operators", progress=progress)
    return dict(zip(operators, summaries))


def year_sweep(
    case: GridCase,
    fleet: EvcsFleet,
    years: Sequence[float] = tuple(range(2022, 2031)),
    scopes: Sequence[str] = (SELECT_ALL, TESLA),
    sim_config: Optional[SimulationConfig] = None,
    jobs: int = 1,
    progress: bool = True,
) -> pd.DataFrame:
    """peak and steady frequency per year and scope (year,scope,peak_hz,steady_hz)"""
    grid = [(year, scope) for year in years for scope in scopes]

    def probe(item: Tuple[float, str]) -> TransientSummary:
        year, scope = item
        scenario = AttackScenario(year=year, operators=scope, name=f"{scope}-{year}")
        return run_scenario(case, fleet, scenario, sim_config).summary

    summaries = run_many(probe, grid, jobs=jobs, desc="years", progress=progress)
    return pd.DataFrame(
        [
            {"year": year, "scope": scope.lower(), "peak_hz": s.peak_hz, "steady_hz": s.steady_hz}
            for (year, scope), s in zip(grid, summaries)
        ],
        columns=config.YEAR_SWEEP_COLUMNS,
    )
