"""tests the attack module"""

import dataclasses

import pytest

from gridstrike.backend import config
from gridstrike.backend.attack import (
    AttackScenario,
    Direction,
    EvcsFleet,
    FleetRecord,
    attack_peak,
    fleet_slice,
    interpolate_year,
    load_fleet,
    load_scenario,
    min_attack_power,
    operating_point,
    per_operator_sweep,
    run_many,
    run_scenario,
    to_events,
    year_sweep,
)
from gridstrike.backend.dynamics import steady_state_frequency_analytic
from gridstrike.backend.errors import FleetValidationError, InfeasibleAttackError, ScenarioError
from gridstrike.backend.grid_model import load_grid_case
from gridstrike.backend.powerflow import InjectionSet
from gridstrike.backend.protection import RelayKind, Verdict

TESLA_2030 = {4: 96.8, 5: 73.1, 8: 41.4, 12: 24.01}


@pytest.fixture(name="manhattan")
def fixture_manhattan():
    """bundled dataset"""
    return load_grid_case(config.DEFAULT_CASE)


@pytest.fixture(name="fleet")
def fixture_fleet():
    """bundled fleet"""
    return load_fleet(config.DEFAULT_FLEET)


def _relay_kinds(outcome):
    return {event.kind for event in outcome.relay_events}


def test_fleet_contents(fleet):
    """test operators and buses of the bundled fleet"""
    assert fleet.operators == ["Tesla", "EV Connect", "Greenlots", "Blink", "ChargePoint", "Other"]
    assert fleet.buses == [4, 5, 8, 12]


def test_fleet_aggregate_checked(fleet):
    """test operator rows must add up to the 'All' rows"""
    records = [dataclasses.replace(rec) for rec in fleet.records]
    records[0] = dataclasses.replace(records[0], power_by_year={**records[0].power_by_year, 2030: 102.0})
    with pytest.raises(FleetValidationError, match="bus 4"):
        EvcsFleet(records)
    with pytest.raises(FleetValidationError):
        EvcsFleet([FleetRecord(4, "Tesla", {2022: 1.0, 2030: 2.0, 2050: 3.0})])
    with pytest.raises(FleetValidationError):
        EvcsFleet([FleetRecord(4, "All", {2022: -1.0, 2030: 2.0, 2050: 3.0})])


def test_fleet_file_errors(tmp_path):
    """test missing fields and missing files"""
    path = tmp_path / "fleet.toml"
    path.write_text('[[record]]\nbus = 4\noperator = "All"\np2022_mw = 1.0\n')
    with pytest.raises(FleetValidationError, match="p2030_mw"):
        load_fleet(path)
    with pytest.raises(FleetValidationError):
        load_fleet(tmp_path / "nothing.toml")


def test_interpolation(fleet):
    """test anchor identity, midpoints and range"""
    for year in config.ANCHOR_YEARS:
        powers = interpolate_year(fleet, year)
        for rec in fleet.records:
            assert powers[(rec.bus, rec.operator)] == rec.power_by_year[year]
    assert interpolate_year(fleet, 2026)[(4, "Tesla")] == pytest.approx((1.85 + 96.8) / 2)
    assert interpolate_year(fleet, 2040)[(12, "All")] == pytest.approx((24.01 + 145.8) / 2)
    with pytest.raises(ScenarioError):
        interpolate_year(fleet, 2021)
    with pytest.raises(ScenarioError):
        interpolate_year(fleet, 2051)


def test_fleet_slices(fleet):
    """test per-bus slices for the published scopes"""
    tesla = fleet_slice(fleet, AttackScenario(year=2030, operators=("tesla",)))
    assert tesla == pytest.approx(TESLA_2030)
    assert sum(tesla.values()) == pytest.approx(235.31)
    assert sum(fleet_slice(fleet, AttackScenario(year=2030)).values()) == pytest.approx(249.91)
    assert sum(fleet_slice(fleet, AttackScenario(year=2030, operators="non-tesla")).values()) == pytest.approx(14.6)
    only_4 = fleet_slice(fleet, AttackScenario(year=2030, operators=("Tesla",), buses=(4,)))
    assert only_4 == pytest.approx({4: 96.8})


def test_all_slice_is_operator_sum(fleet):
    """test the aggregate slice equals the sum of every operator's slice"""
    for year in (2022, 2024.25, 2030, 2041, 2050):
        aggregate = fleet_slice(fleet, AttackScenario(year=year))
        parts = [fleet_slice(fleet, AttackScenario(year=year, operators=(op,))) for op in fleet.operators]
        for bus in fleet.buses:
            total = sum(part.get(bus, 0.0) for part in parts)
            assert total == pytest.approx(aggregate.get(bus, 0.0), abs=1e-9)


def test_fleet_slice_linear(fleet):
    """test slices scale exactly with the fraction"""
    full = fleet_slice(fleet, AttackScenario(year=2027.5, operators=("Tesla", "Blink")))
    for fraction in (0.0, 0.1, 0.6306, 1.0):
        part = fleet_slice(fleet, AttackScenario(year=2027.5, operators=("Tesla", "Blink"), fraction=fraction))
        assert part == {bus: fraction * mw for bus, mw in full.items()}


def test_scenario_errors(fleet):
    """test invalid scenarios"""
    with pytest.raises(ScenarioError):
        AttackScenario(fraction=1.5)
    with pytest.raises(ScenarioError):
        AttackScenario(power_factor=0.0)
    with pytest.raises(ScenarioError):
        AttackScenario(t_attack=-1.0)
    with pytest.raises(ScenarioError, match="unknown operator"):
        fleet_slice(fleet, AttackScenario(operators=("Nobody",)))
    with pytest.raises(ScenarioError, match="unknown buses"):
        fleet_slice(fleet, AttackScenario(buses=(4, 7)))
    with pytest.raises(ScenarioError):
        fleet_slice(fleet, AttackScenario(year=2060))


def test_events():
    """test load steps from a slice"""
    events = to_events(TESLA_2030, 1.0)
    assert len(events) == 4
    assert sum(ev.dp_mw for ev in events) == pytest.approx(-235.31)
    assert all(ev.time_s == 1.0 and ev.dq_mvar == 0.0 for ev in events)
    assert to_events({4: 0.0, 5: 0.0}, 1.0) == []
    surge = to_events({4: 10.0}, 2.0, Direction.SURGE, power_factor=0.8)
    assert surge[0].dp_mw == pytest.approx(10.0)
    assert surge[0].dq_mvar == pytest.approx(7.5)
    with pytest.raises(ScenarioError):
        to_events({4: 1.0}, -0.5)


def test_bundled_scenarios(fleet):
    """test scenario files load and validate"""
    for path in sorted(config.SCENARIO_DIR.glob("*.toml")):
        scenario = load_scenario(path)
        scenario.validate(fleet)
    tesla = load_scenario(config.SCENARIO_DIR / "tesla_2030.toml")
    assert tesla.operators == ("Tesla",)
    assert tesla.direction == Direction.SHUTDOWN
    assert load_scenario(config.SCENARIO_DIR / "all_2030.toml").relays.of_na == 61.2


def test_scenario_roundtrip():
    """test scenario dict form"""
    scenario = AttackScenario(year=2030, operators=("Tesla",), buses=(4, 5), fraction=0.5, name="x")
    assert AttackScenario.from_dict(scenario.as_dict()) == scenario
    with pytest.raises(ScenarioError):
        AttackScenario.from_dict({"direction": "sideways"})


def test_operating_point(manhattan, fleet):
    """test base case and redispatched EV years"""
    base = operating_point(manhattan, fleet, None)
    assert base.load_p_mw.tolist() == InjectionSet.from_case(manhattan).load_p_mw.tolist()
    loaded = operating_point(manhattan, fleet, 2030)
    assert loaded.load_p_mw.sum() - base.load_p_mw.sum() == pytest.approx(249.91)
    assert loaded.gen_p_mw.sum() - base.gen_p_mw.sum() == pytest.approx(249.91)


def test_all_evcs_2030(manhattan, fleet):
    """test the all-EVCS attack trips both over-frequency relays"""
    outcome = run_scenario(manhattan, fleet, load_scenario(config.SCENARIO_DIR / "all_2030.toml"))
    assert outcome.total_mw == pytest.approx(249.91)
    assert outcome.summary.peak_hz == pytest.approx(62.095, abs=0.3)
    assert outcome.summary.steady_hz == pytest.approx(60.54, abs=0.01)
    oracle = steady_state_frequency_analytic(manhattan, outcome.total_mw)
    assert outcome.summary.steady_hz == pytest.approx(oracle, abs=0.01)
    assert outcome.summary.peak_v_pu < 1.1
    assert outcome.summary.settling_time_s < 20.0
    kinds = _relay_kinds(outcome)
    assert {RelayKind.OVER_FREQ_NA, RelayKind.OVER_FREQ_IEEE} <= kinds
    assert RelayKind.OVER_VOLT not in kinds
    assert outcome.verdict == Verdict.SYSTEM_WIDE


def test_tesla_2030(manhattan, fleet):
    """test the Tesla-only attack trips the North American relay only"""
    outcome = run_scenario(manhattan, fleet, load_scenario(config.SCENARIO_DIR / "tesla_2030.toml"))
    assert outcome.summary.peak_hz == pytest.approx(61.952, abs=0.3)
    assert outcome.summary.steady_hz == pytest.approx(60.5, abs=0.05)
    oracle = steady_state_frequency_analytic(manhattan, outcome.total_mw)
    assert outcome.summary.steady_hz == pytest.approx(oracle, abs=0.01)
    assert _relay_kinds(outcome) == {RelayKind.OVER_FREQ_NA}
    assert outcome.verdict == Verdict.SYSTEM_WIDE


def test_non_tesla_2030(manhattan, fleet):
    """test the non-Tesla attack trips nothing"""
    outcome = run_scenario(manhattan, fleet, load_scenario(config.SCENARIO_DIR / "non_tesla_2030.toml"))
    assert outcome.summary.peak_hz == pytest.approx(60.115, abs=0.05)
    assert outcome.summary.steady_hz == pytest.approx(60.032, abs=0.01)
    assert outcome.relay_events == []
    assert outcome.verdict == Verdict.NONE


@pytest.mark.parametrize("name, peak, tol", [("all_2022", 60.04, 0.02), ("tesla_2022", 60.036, 0.01)])
def test_2022_attacks_are_harmless(manhattan, fleet, name, peak, tol):
    """test today's fleet cannot trip anything"""
    outcome = run_scenario(manhattan, fleet, load_scenario(config.SCENARIO_DIR / f"{name}.toml"))
    assert outcome.summary.peak_hz == pytest.approx(peak, abs=tol)
    assert outcome.summary.peak_hz <= 60.05
    assert outcome.relay_events == []
    assert outcome.verdict == Verdict.NONE


def test_zero_fraction_is_quiescent(manhattan, fleet):
    """test no manipulated chargers means no excursion"""
    outcome = run_scenario(manhattan, fleet, load_scenario(config.SCENARIO_DIR / "zero_fraction.toml"))
    assert outcome.total_mw == 0.0
    assert outcome.summary.peak_hz == pytest.approx(60.0, abs=1e-6)
    assert outcome.verdict == Verdict.NONE


def test_peak_monotone_in_dropped_load(manhattan, fleet):
    """test larger attacks never give lower peaks, 0 to 250 MW in 10 MW steps"""
    template = AttackScenario(year=2030)
    full_mw = sum(fleet_slice(fleet, template).values())
    fractions = [min(mw / full_mw, 1.0) for mw in range(0, 260, 10)]
    peaks = run_many(
        lambda fraction: attack_peak(manhattan, fleet, template.with_fraction(fraction)),
        fractions, jobs=4, desc="monotone", progress=False,
    )
    assert peaks == sorted(peaks)
    assert peaks[0] == pytest.approx(60.0, abs=1e-6)


def test_peak_per_mw_is_nearly_linear(manhattan, fleet):
    """test the frequency rise per dropped MW barely changes from 50 to 235 MW"""
    template = AttackScenario(year=2030)
    full_mw = sum(fleet_slice(fleet, template).values())
    rise = {
        mw: (attack_peak(manhattan, fleet, template.with_fraction(mw / full_mw)) - config.NOMINAL_HZ) / mw
        for mw in (50.0, 235.0)
    }
    assert rise[50.0] > 0.0
    assert rise[235.0] == pytest.approx(rise[50.0], rel=0.15)


def test_min_attack_power(manhattan, fleet):
    """test the smallest Tesla attack reaching 61.2 Hz"""
    template = AttackScenario(year=2030, operators=("Tesla",))
    found = min_attack_power(manhattan, fleet, template, 61.2, tol_mw=0.5)
    assert found.mw == pytest.approx(148.4, rel=0.05)
    assert found.fraction == pytest.approx(0.63, abs=0.02)
    assert found.peak_hz >= 61.2
    assert found.full_fleet_mw == pytest.approx(235.31)
    below = template.with_fraction(found.fraction - 0.5 / found.full_fleet_mw)
    assert attack_peak(manhattan, fleet, below) < 61.2


def test_min_attack_power_edges(manhattan, fleet):
    """test the nominal target and an unreachable target"""
    template = AttackScenario(year=2030, operators="non-tesla")
    assert min_attack_power(manhattan, fleet, template, 60.0).mw == 0.0
    with pytest.raises(InfeasibleAttackError) as info:
        min_attack_power(manhattan, fleet, template, 61.2)
    assert info.value.full_fleet_peak_hz < 61.2
    assert info.value.exit_code == 0


def test_per_operator_sweep(manhattan, fleet):
    """test per-operator peaks follow the published ranking"""
    summaries = per_operator_sweep(manhattan, fleet, 2030, jobs=2, progress=False)
    assert list(summaries) == fleet.operators
    assert summaries["Tesla"].peak_hz == pytest.approx(61.952, abs=0.3)
    assert summaries["EV Connect"].peak_hz == pytest.approx(60.041, abs=0.005)
    assert summaries["Greenlots"].peak_hz == pytest.approx(60.028, abs=0.005)
    assert summaries["Blink"].peak_hz == pytest.approx(60.027, abs=0.005)
    assert summaries["ChargePoint"].peak_hz == pytest.approx(60.012, abs=0.005)


def test_year_sweep(manhattan, fleet):
    """test year series shape and concurrent runs matching sequential ones"""
    sequential = year_sweep(manhattan, fleet, years=(2022, 2030), progress=False)
    concurrent = year_sweep(manhattan, fleet, years=(2022, 2030), jobs=4, progress=False)
    assert list(sequential.columns) == config.YEAR_SWEEP_COLUMNS
    assert sequential.equals(concurrent)
    assert sequential["scope"].tolist() == ["all", "tesla", "all", "tesla"]
    rows = sequential.set_index(["year", "scope"])
    assert rows.loc[(2030, "all"), "peak_hz"] == pytest.approx(62.095, abs=0.3)
    assert rows.loc[(2030, "tesla"), "peak_hz"] == pytest.approx(61.952, abs=0.3)
    assert rows.loc[(2022, "all"), "peak_hz"] <= 60.05
