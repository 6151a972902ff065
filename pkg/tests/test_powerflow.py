"""tests the powerflow module"""


import numpy as np
import pytest

from gridstrike.backend import config
from gridstrike.backend.attack import load_fleet, operating_point
from gridstrike.backend.errors import InputError, NumericalError
from gridstrike.backend.grid_model import (
    Branch,
    Bus,
    BusKind,
    Generator,
    GridCase,
    build_ybus,
    load_grid_case,
)
from gridstrike.backend.powerflow import (
    InjectionSet,
    apply_ev_load,
    line_loadings,
    loading_table,
    participation_factors,
    power_balance,
    redispatch,
    solve_power_flow,
)
from gridstrike.backend.protection import scan_static_overloads

LINES = [(2, 3), (3, 4), (5, 7), (5, 8), (5, 12), (11, 12)]
PUBLISHED_LOADINGS = {
    None: [52, 79, 62, 34, 62, 67],
    2022: [52, 79, 62, 34, 62, 68],
    2030: [55, 88, 64, 30, 92, 94],
    2050: [82, 136, 79, 21, 249, 232],
}


@pytest.fixture(name="manhattan")
def fixture_manhattan():
    """bundled dataset"""
    return load_grid_case(config.DEFAULT_CASE)


@pytest.fixture(name="fleet")
def fixture_fleet():
    """bundled fleet"""
    return load_fleet(config.DEFAULT_FLEET)


def _line_loadings(case, fleet, year):
    solution = solve_power_flow(case, operating_point(case, fleet, year))
    loadings = dict(zip([(br.from_bus, br.to_bus) for br in case.branches], line_loadings(case, solution)))
    return loadings


def random_case(rng: np.random.Generator, with_pv: bool) -> GridCase:
    """connected <= 6-bus case, slack at bus 1, optionally a pv bus at 2"""
    n_bus = int(rng.integers(2, 7))
    buses, gens = [], [Generator(1, 0.0, 1000.0, 5.0, 0.05, 0.5)]
    for i in range(1, n_bus + 1):
        if i == 1:
            buses.append(Bus(1, "slack", 138.0, BusKind.SLACK))
        elif i == 2 and with_pv:
            buses.append(Bus(2, "pv", 138.0, BusKind.PV))
            gens.append(Generator(2, float(rng.uniform(0, 30)), 100.0, 5.0, 0.05, 0.5,
                                  v_set=float(rng.uniform(0.98, 1.03))))
        else:
            buses.append(Bus(i, f"b{i}", 138.0, BusKind.PQ,
                             base_load_p=float(rng.uniform(0, 15)),
                             base_load_q=float(rng.uniform(0, 5))))
    branches = []
    for i in range(2, n_bus + 1):
        parent = int(rng.integers(1, i))
        branches.append(Branch(parent, i, float(rng.uniform(0.01, 0.05)), float(rng.uniform(0.1, 0.4)), 100.0))
    if n_bus >= 4:
        branches.append(Branch(1, n_bus, float(rng.uniform(0.01, 0.05)), float(rng.uniform(0.1, 0.4)), 100.0))
    return GridCase(tuple(buses), tuple(branches), tuple(gens))


def gauss_seidel(case: GridCase, injections: InjectionSet, tol: float = 1e-12, max_sweeps: int = 50000) -> np.ndarray:
    """reference solution by plain Gauss-Seidel"""
    ybus = build_ybus(case).to_dense()
    s_bus = (injections.p_mw + 1j * injections.q_mvar) / case.base_mva
    kinds = [bus.kind for bus in case.buses]
    v = np.ones(case.n_bus, dtype=complex)
    for i, kind in enumerate(kinds):
        if kind != BusKind.PQ:
            v[i] = injections.v_set[i]
    for _ in range(max_sweeps):
        change = 0.0
        for i, kind in enumerate(kinds):
            if kind == BusKind.SLACK:
                continue
            s_i = s_bus[i]
            if kind == BusKind.PV:
                q_i = -np.imag(np.conj(v[i]) * (ybus[i] @ v))
                s_i = s_i.real + 1j * q_i
            others = ybus[i] @ v - ybus[i, i] * v[i]
            new = (np.conj(s_i) / np.conj(v[i]) - others) / ybus[i, i]
            if kind == BusKind.PV:
                new = injections.v_set[i] * new / abs(new)
            change = max(change, abs(new - v[i]))
            v[i] = new
        if change < tol:
            return v
    raise AssertionError("gauss-seidel did not converge")


def test_base_case_converges(manhattan):
    """test no-EV case converges tightly in few iterations"""
    solution = solve_power_flow(manhattan, InjectionSet.from_case(manhattan))
    assert solution.converged
    assert solution.max_mismatch < 1e-8
    assert solution.iterations <= 20
    assert solution.va[manhattan.index(6)] == 0.0
    assert solution.vm[manhattan.index(1)] == pytest.approx(1.04)


def test_flat_start_reports_one_iteration(manhattan):
    """test a solved flat start counts one mismatch evaluation"""
    solution = solve_power_flow(manhattan, InjectionSet.zeros(manhattan))
    assert solution.iterations == 1
    assert np.allclose(solution.vm, 1.0)


def test_power_balance(manhattan, fleet):
    """test generation equals load plus losses"""
    solution = solve_power_flow(manhattan, operating_point(manhattan, fleet, 2030))
    balance = power_balance(manhattan, solution)
    assert balance["generation"] - balance["load"] == pytest.approx(balance["losses"], abs=1e-4)
    assert balance["losses"] >= 0
    assert balance["load"] == pytest.approx(2227.0 + 249.91, abs=1e-6)


def test_power_balance_rejects_foreign_solution(manhattan, fleet):
    """test a solution of another case is refused"""
    solution = solve_power_flow(manhattan, operating_point(manhattan, fleet, 2030))
    with pytest.raises(InputError, match="does not belong"):
        power_balance(manhattan.without_branch(5, 12), solution)


@pytest.mark.parametrize("year", [None, 2022, 2030, 2050])
def test_loading_table_rows(manhattan, fleet, year):
    """test line loadings against the published table"""
    loadings = _line_loadings(manhattan, fleet, year)
    tolerance = 1.0 if year is None else 3.0
    for line, published in zip(LINES, PUBLISHED_LOADINGS[year]):
        assert loadings[line] == pytest.approx(published, abs=tolerance), line


def test_loading_trends(manhattan, fleet):
    """test 5-8 unloads with EV growth and exactly three lines overload in 2050"""
    assert _line_loadings(manhattan, fleet, 2050)[(5, 8)] < _line_loadings(manhattan, fleet, 2022)[(5, 8)]
    events = scan_static_overloads(_line_loadings(manhattan, fleet, 2050))
    assert sorted(event.element for event in events) == ["branch:11-12", "branch:3-4", "branch:5-12"]
    loadings_2050 = _line_loadings(manhattan, fleet, 2050)
    transformers = [(br.from_bus, br.to_bus) for br in manhattan.branches if br.kind == "transformer"]
    assert all(loadings_2050[tr] < 100 for tr in transformers)


def test_loading_table_frame(manhattan):
    """test csv schema of the loading frame"""
    solution = solve_power_flow(manhattan, InjectionSet.from_case(manhattan))
    frame = loading_table(manhattan, solution)
    assert list(frame.columns) == config.POWERFLOW_COLUMNS
    assert len(frame) == 11


@pytest.mark.parametrize("seed", range(200))
def test_newton_matches_gauss_seidel(seed):
    """test Newton-Raphson agrees with a Gauss-Seidel reference"""
    rng = np.random.default_rng(seed)
    case = random_case(rng, with_pv=bool(seed % 2))
    injections = InjectionSet.from_case(case)
    solution = solve_power_flow(case, injections, tol=1e-10)
    reference = gauss_seidel(case, injections)
    assert np.max(np.abs(solution.v - reference)) < 1e-6


def test_apply_ev_load(manhattan):
    """test MW and Mvar at the given power factor"""
    base = InjectionSet.from_case(manhattan)
    updated = apply_ev_load(base, {4: 100.0}, power_factor=0.8)
    idx = manhattan.index(4)
    assert updated.load_p_mw[idx] == pytest.approx(base.load_p_mw[idx] + 100.0)
    assert updated.load_q_mvar[idx] == pytest.approx(base.load_q_mvar[idx] + 75.0)
    assert base.load_p_mw[idx] == 854.0
    with pytest.raises(InputError):
        apply_ev_load(base, {4: 1.0}, power_factor=0.0)
    with pytest.raises(InputError):
        apply_ev_load(base, {13: 1.0})


def test_redispatch_shares(manhattan):
    """test participation factors sum to one and spread added load"""
    factors = participation_factors(manhattan)
    assert sum(factors.values()) == pytest.approx(1.0)
    assert all(f == pytest.approx(0.25, abs=1e-3) for f in factors.values())
    base = InjectionSet.from_case(manhattan)
    moved = redispatch(manhattan, base, 100.0)
    assert np.sum(moved.gen_p_mw - base.gen_p_mw) == pytest.approx(100.0)


def test_q_limits_turn_pv_into_pq(manhattan):
    """test a pv bus at its reactive limit no longer holds its voltage"""
    free = solve_power_flow(manhattan, InjectionSet.from_case(manhattan))
    q_gen = free.gen_mva[manhattan.index(1)].imag
    limited = solve_power_flow(
        manhattan, InjectionSet.from_case(manhattan), q_limits={1: (q_gen - 50.0, q_gen - 20.0)}
    )
    assert limited.converged
    assert limited.gen_mva[manhattan.index(1)].imag == pytest.approx(q_gen - 20.0, abs=1e-4)
    assert limited.vm[manhattan.index(1)] != pytest.approx(1.04, abs=1e-6)


def test_divergence_reported(manhattan):
    """test an infeasible load raises a numerical error"""
    injections = apply_ev_load(InjectionSet.from_case(manhattan), {12: 50000.0})
    with pytest.raises(NumericalError):
        solve_power_flow(manhattan, injections, max_iter=15)


def test_tolerance_checked(manhattan):
    """test non-positive tolerance is an input error"""
    with pytest.raises(InputError):
        solve_power_flow(manhattan, InjectionSet.from_case(manhattan), tol=0.0)


def test_disconnected_case_does_not_solve(manhattan):
    """test an islanded pq bus makes the solver fail"""
    island = manhattan.without_branch(5, 12).without_branch(11, 12)
    with pytest.raises(NumericalError):
        solve_power_flow(island, InjectionSet.from_case(island))
