"""Newton-Raphson AC power flow, branch flows and line loading"""

from __future__ import annotations
from dataclasses import dataclass
import logging
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import splu

from gridstrike.backend import config
from gridstrike.backend.errors import (
    InputError,
    PowerFlowDivergedError,
    SingularJacobianError,
)
from gridstrike.backend.grid_model import BusKind, GridCase, build_ybus


@dataclass
class InjectionSet:
    """
    per-bus power schedule in MW / Mvar

    net injection p = gen_p - load_p, q = -load_q (generator reactive
    output at pv and slack buses is free). Slack active power is free too.
    """

    bus_ids: Tuple[int, ...]
    gen_p_mw: np.ndarray
    load_p_mw: np.ndarray
    load_q_mvar: np.ndarray
    v_set: np.ndarray

    @property
    def p_mw(self) -> np.ndarray:
        """net active injection"""
        return self.gen_p_mw - self.load_p_mw

    @property
    def q_mvar(self) -> np.ndarray:
        """net reactive injection"""
        return -self.load_q_mvar

    def copy(self) -> InjectionSet:
        """deep copy"""
        return InjectionSet(
            bus_ids=self.bus_ids,
            gen_p_mw=self.gen_p_mw.copy(),
            load_p_mw=self.load_p_mw.copy(),
            load_q_mvar=self.load_q_mvar.copy(),
            v_set=self.v_set.copy(),
        )

    @classmethod
    def from_case(cls, case: GridCase) -> InjectionSet:
        """base loads and generator dispatch of a case"""
        gen_p = np.zeros(case.n_bus)
        v_set = np.ones(case.n_bus)
        for gen in case.generators:
            idx = case.index(gen.bus)
            gen_p[idx] += gen.p_set
            v_set[idx] = gen.v_set
        return cls(
            bus_ids=case.bus_ids,
            gen_p_mw=gen_p,
            load_p_mw=np.array([bus.base_load_p for bus in case.buses], dtype=float),
            load_q_mvar=np.array([bus.base_load_q for bus in case.buses], dtype=float),
            v_set=v_set,
        )

    @classmethod
    def zeros(cls, case: GridCase) -> InjectionSet:
        """no load, no dispatch, all setpoints 1.0"""
        n_bus = case.n_bus
        return cls(case.bus_ids, np.zeros(n_bus), np.zeros(n_bus), np.zeros(n_bus), np.ones(n_bus))


@dataclass
class PowerFlowSolution:
    """converged operating point"""

    bus_ids: Tuple[int, ...]
    vm: np.ndarray
    va: np.ndarray
    # complex bus injections, MVA
    s_bus: np.ndarray
    # complex branch flows entering the branch at each end, MVA
    s_from: np.ndarray
    s_to: np.ndarray
    load_mva: np.ndarray
    max_mismatch: float
    iterations: int
    tol: float
    base_mva: float = config.BASE_MVA

    @property
    def v(self) -> np.ndarray:
        """complex bus voltages, p.u."""
        return self.vm * np.exp(1j * self.va)

    @property
    def gen_mva(self) -> np.ndarray:
        """complex generator output per bus (zero at pure load buses)"""
        return self.s_bus + self.load_mva

    @property
    def converged(self) -> bool:
        """mismatch within tolerance"""
        return self.max_mismatch <= self.tol


def apply_ev_load(
    injections: InjectionSet,
    fleet_slice: Mapping[int, float],
    power_factor: float = 1.0,
) -> InjectionSet:
    """add EV charging MW (and Q at the given lagging power factor) as load"""
    if not 0 < power_factor <= 1:
        raise InputError(f"power factor must be in (0, 1], got {power_factor}")
    updated = injections.copy()
    tan_phi = np.tan(np.arccos(power_factor))
    for bus_id, p_mw in fleet_slice.items():
        if bus_id not in injections.bus_ids:
            raise InputError(f"EV load at unknown bus {bus_id}")
        idx = injections.bus_ids.index(bus_id)
        updated.load_p_mw[idx] += p_mw
        updated.load_q_mvar[idx] += p_mw * tan_phi
    return updated


def participation_factors(case: GridCase) -> Dict[int, float]:
    """share of a sustained load change picked up by each generator bus"""
    gains = {gen.bus: gen.droop_gain(case.base_mva) for gen in case.generators}
    total = sum(gains.values())
    return {bus: gain / total for bus, gain in gains.items()}


def redispatch(case: GridCase, injections: InjectionSet, extra_load_mw: float) -> InjectionSet:
    """spread an added load over the generators in proportion to their droop gains"""
    updated = injections.copy()
    for bus_id, share in participation_factors(case).items():
        updated.gen_p_mw[case.index(bus_id)] += share * extra_load_mw
    logging.debug("redispatched %.3f MW over %s generators", extra_load_mw, len(case.generators))
    return updated


def _dsbus_dv(ybus: sparse.csr_matrix, v: np.ndarray) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """partial derivatives of bus injections w.r.t. voltage magnitude and angle"""
    ibus = ybus @ v
    diag_v = sparse.diags(v)
    diag_ibus = sparse.diags(ibus)
    diag_vnorm = sparse.diags(v / np.abs(v))
    ds_dvm = diag_v @ (ybus @ diag_vnorm).conj() + diag_ibus.conj() @ diag_vnorm
    ds_dva = 1j * diag_v @ (diag_ibus - ybus @ diag_v).conj()
    return sparse.csr_matrix(ds_dvm), sparse.csr_matrix(ds_dva)


def _jacobian(ybus, v, pvpq, pq) -> sparse.csc_matrix:
    ds_dvm, ds_dva = _dsbus_dv(ybus, v)
    j11 = ds_dva[pvpq, :][:, pvpq].real
    j12 = ds_dvm[pvpq, :][:, pq].real
    if len(pq) == 0:
        return sparse.csc_matrix(j11)
    j21 = ds_dva[pq, :][:, pvpq].imag
    j22 = ds_dvm[pq, :][:, pq].imag
    return sparse.vstack(
        [sparse.hstack([j11, j12]), sparse.hstack([j21, j22])], format="csc"
    )


def _newton(ybus, s_bus, v0, pv, pq, tol, max_iter) -> Tuple[np.ndarray, float, int]:
    """polar Newton-Raphson; returns voltages, final mismatch, iteration count"""
    v = v0.copy()
    vm, va = np.abs(v), np.angle(v)
    pvpq = np.r_[pv, pq].astype(int)
    n_pvpq = len(pvpq)
    iterations = 0
    while True:
        mis = v * np.conj(ybus @ v) - s_bus
        f_vec = np.r_[mis[pvpq].real, mis[pq].imag]
        mismatch = float(np.max(np.abs(f_vec))) if f_vec.size else 0.0
        iterations += 1
        logging.debug("  newton iteration %s: mismatch %.3e", iterations, mismatch)
        if mismatch <= tol:
            return v, mismatch, iterations
        if iterations >= max_iter:
            raise PowerFlowDivergedError(mismatch, iterations)

        jac = _jacobian(ybus, v, pvpq, pq)
        try:
            dx = -splu(jac).solve(f_vec)
        except RuntimeError as err:
            row_norms = np.asarray(abs(jac).sum(axis=1)).ravel()
            zero_rows = np.flatnonzero(row_norms == 0).tolist()
            raise SingularJacobianError(iterations, zero_rows or str(err)) from err
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError(iterations, "non-finite update")

        va[pvpq] += dx[:n_pvpq]
        vm[pq] += dx[n_pvpq:]
        v = vm * np.exp(1j * va)


def branch_flows(case: GridCase, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """complex MVA entering each branch at its from and to end"""
    s_from = np.zeros(len(case.branches), dtype=complex)
    s_to = np.zeros(len(case.branches), dtype=complex)
    for k, branch in enumerate(case.branches):
        i, j = case.index(branch.from_bus), case.index(branch.to_bus)
        current = (v[i] - v[j]) * branch.admittance
        s_from[k] = v[i] * np.conj(current) * case.base_mva
        s_to[k] = v[j] * np.conj(-current) * case.base_mva
    return s_from, s_to


def solve_power_flow(
    case: GridCase,
    injections: InjectionSet,
    tol: float = config.PF_TOL,
    max_iter: int = config.PF_MAX_ITER,
    q_limits: Optional[Mapping[int, Tuple[float, float]]] = None,
) -> PowerFlowSolution:
    """
    full Newton-Raphson AC power flow from a flat start

    PV and slack buses hold injections.v_set. With q_limits
    ({bus: (q_min, q_max)} in Mvar of generator output) a PV bus whose
    reactive output leaves its band is turned into a PQ bus at the limit.
    """
    if tol <= 0:
        raise InputError(f"power flow tolerance must be positive, got {tol}")
    base = case.base_mva
    ybus = build_ybus(case).matrix
    kinds = [bus.kind for bus in case.buses]
    ref = np.array([i for i, kind in enumerate(kinds) if kind == BusKind.SLACK])
    pv: List[int] = [i for i, kind in enumerate(kinds) if kind == BusKind.PV]
    pq: List[int] = [i for i, kind in enumerate(kinds) if kind == BusKind.PQ]

    load_q = injections.load_q_mvar.copy()
    iterations = 0
    while True:
        s_bus = (injections.p_mw - 1j * load_q) / base
        vm0 = np.ones(case.n_bus)
        vm0[ref] = injections.v_set[ref]
        vm0[pv] = injections.v_set[pv]
        v, mismatch, its = _newton(
            ybus, s_bus, vm0.astype(complex), np.array(pv, dtype=int),
            np.array(pq, dtype=int), tol, max_iter,
        )
        iterations += its
        if not q_limits:
            break
        s_calc = v * np.conj(ybus @ v) * base
        limited = False
        for i in list(pv):
            bus_id = case.buses[i].id
            if bus_id not in q_limits:
                continue
            q_min, q_max = q_limits[bus_id]
            q_gen = s_calc[i].imag + load_q[i]
            if q_gen < q_min or q_gen > q_max:
                bound = q_min if q_gen < q_min else q_max
                logging.info("bus %s reactive output %.2f Mvar hits limit %.2f", bus_id, q_gen, bound)
                pv.remove(i)
                pq.append(i)
                # fixed generator output enters as negative load
                load_q[i] -= bound
                limited = True
        if not limited:
            break
        pq.sort()

    s_bus_mva = v * np.conj(ybus @ v) * base
    s_from, s_to = branch_flows(case, v)
    logging.info("power flow converged: %s iterations, mismatch %.2e p.u.", iterations, mismatch)
    return PowerFlowSolution(
        bus_ids=case.bus_ids,
        vm=np.abs(v),
        va=np.angle(v) - np.angle(v[ref[0]]),
        s_bus=s_bus_mva,
        s_from=s_from,
        s_to=s_to,
        load_mva=injections.load_p_mw + 1j * injections.load_q_mvar,
        max_mismatch=mismatch,
        iterations=iterations,
        tol=tol,
        base_mva=base,
    )


def line_loadings(case: GridCase, solution: PowerFlowSolution) -> np.ndarray:
    """percent of rating, larger end apparent power, in branch order"""
    ratings = np.array([branch.rating for branch in case.branches])
    worst = np.maximum(np.abs(solution.s_from), np.abs(solution.s_to))
    return 100.0 * worst / ratings


def loading_table(case: GridCase, solution: PowerFlowSolution) -> pd.DataFrame:
    """per-branch loading frame in the powerflow csv schema"""
    return pd.DataFrame(
        {
            "branch_from": [branch.from_bus for branch in case.branches],
            "branch_to": [branch.to_bus for branch in case.branches],
            "loading_pct": line_loadings(case, solution),
            "p_mw_from": solution.s_from.real,
            "q_mvar_from": solution.s_from.imag,
        },
        columns=config.POWERFLOW_COLUMNS,
    )


def power_balance(case: GridCase, solution: PowerFlowSolution) -> Dict[str, float]:
    """total generation, load and series losses in MW"""
    if len(solution.s_from) != len(case.branches) or len(solution.vm) != case.n_bus:
        raise InputError(f"power flow solution does not belong to case {case.name}")
    generation = float(np.sum(solution.gen_mva.real))
    load = float(np.sum(solution.load_mva.real))
    losses = float(np.sum((solution.s_from + solution.s_to).real))
    return {"generation": generation, "load": load, "losses": losses}

