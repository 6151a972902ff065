"""
time-domain frequency and voltage response to load steps

classical machines (constant EMF behind transient reactance) with a
first-order droop governor, swing equation per machine, algebraic
network with constant-impedance loads, fixed-step RK4
"""

from __future__ import annotations
import dataclasses
from dataclasses import dataclass, field
import logging
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import splu

from gridstrike.backend import config
from gridstrike.backend.errors import (
    InitialConditionError,
    InputError,
    LossOfSynchronismError,
)
from gridstrike.backend.grid_model import GridCase, build_ybus
from gridstrike.backend.powerflow import PowerFlowSolution


@dataclass(frozen=True)
class LoadStep:
    """step change of a bus load; negative dp_mw removes load"""

    bus: int
    dp_mw: float
    dq_mvar: float = 0.0
    time_s: float = 0.0

    def as_dict(self):
        """serializable dict"""
        return {"bus": self.bus, "dp_mw": self.dp_mw, "dq_mvar": self.dq_mvar, "time_s": self.time_s}


@dataclass
class MachineState:
    """state of one classical machine"""

    delta: float
    d_omega: float
    p_mech: float
    emf: float

    def __post_init__(self):
        if not np.isfinite(self.d_omega):
            raise ValueError("speed deviation must be finite")
        if self.emf <= 0:
            raise ValueError("internal EMF must be positive")


@dataclass
class SimulationConfig:
    """integration settings and the timed event list"""

    dt: float = config.DT_S
    horizon: float = config.HORIZON_S
    events: List[LoadStep] = field(default_factory=list)
    sync_limit: float = config.SYNC_LIMIT_PU

    def __post_init__(self):
        if self.dt <= 0:
            raise InputError(f"time step must be positive, got {self.dt}")
        if self.horizon <= 0:
            raise InputError(f"horizon must be positive, got {self.horizon}")
        self.events = sorted(self.events, key=lambda ev: ev.time_s)
        if self.events and self.events[-1].time_s > self.horizon:
            raise InputError(
                f"event at t={self.events[-1].time_s} s lies beyond the horizon {self.horizon} s"
            )
        if any(ev.time_s < 0 for ev in self.events):
            raise InputError("event times must be >= 0")


@dataclass
class TransientResult:
    """sampled trajectories of one transient run"""

    time: np.ndarray
    bus_ids: Tuple[int, ...]
    generator_buses: Tuple[int, ...]
    branches: Tuple[Tuple[int, int], ...]
    # Hz, rotor frequency at generator buses and COI elsewhere
    frequency: np.ndarray
    coi_frequency: np.ndarray
    rotor_frequency: np.ndarray
    voltage: np.ndarray
    loading: np.ndarray
    first_event_time: Optional[float]
    horizon: float
    final_states: List[MachineState] = field(default_factory=list)
    aborted: Optional[str] = None

    def _after_event(self) -> np.ndarray:
        if self.first_event_time is None:
            return np.ones(len(self.time), dtype=bool)
        return self.time >= self.first_event_time - 1e-9

    def _steady_window(self) -> np.ndarray:
        return self.time >= self.horizon * (1.0 - config.STEADY_WINDOW) - 1e-9

    @property
    def peak_frequency(self) -> float:
        """largest COI frequency after the first event"""
        return float(np.max(self.coi_frequency[self._after_event()]))

    @property
    def min_frequency(self) -> float:
        """smallest COI frequency after the first event"""
        return float(np.min(self.coi_frequency[self._after_event()]))

    @property
    def steady_state_frequency(self) -> float:
        """mean COI frequency over the final 10% of the horizon"""
        return float(np.mean(self.coi_frequency[self._steady_window()]))

    @property
    def steady_state_variance(self) -> float:
        """Hz^2 over the steady window"""
        return float(np.var(self.coi_frequency[self._steady_window()]))

    @property
    def peak_voltage(self) -> float:
        """largest bus voltage after the first event"""
        return float(np.max(self.voltage[self._after_event()]))

    @property
    def min_voltage_after_event(self) -> float:
        """smallest bus voltage after the first event"""
        return float(np.min(self.voltage[self._after_event()]))

    def frequency_frame(self) -> pd.DataFrame:
        """long form time_s,bus_id,freq_hz"""
        return _long_frame(self.time, self.bus_ids, self.frequency, config.FREQUENCY_COLUMNS)

    def voltage_frame(self) -> pd.DataFrame:
        """long form time_s,bus_id,v_pu"""
        return _long_frame(self.time, self.bus_ids, self.voltage, config.VOLTAGE_COLUMNS)

    def loading_frame(self) -> pd.DataFrame:
        """long form time_s,branch_from,branch_to,loading_pct"""
        n_t, n_br = self.loading.shape
        return pd.DataFrame(
            {
                "time_s": np.repeat(self.time, n_br),
                "branch_from": np.tile([br[0] for br in self.branches], n_t),
                "branch_to": np.tile([br[1] for br in self.branches], n_t),
                "loading_pct": self.loading.ravel(),
            },
            columns=config.LOADING_COLUMNS,
        )


def _long_frame(time, ids, values, columns) -> pd.DataFrame:
    n_t, n_col = values.shape
    return pd.DataFrame(
        {
            columns[0]: np.repeat(time, n_col),
            columns[1]: np.tile(ids, n_t),
            columns[2]: values.ravel(),
        },
        columns=columns,
    )


@dataclass
class TransientSummary:
    """peak/steady figures of a run"""

    peak_hz: float
    steady_hz: float
    peak_v_pu: float
    settled: bool
    steady_variance: float
    settling_time_s: float
    min_hz: float
    min_v_pu: float

    def as_dict(self):
        """serializable dict"""
        return dataclasses.asdict(self)


class _Machines:
    """vectorised machine parameters and network on the system base"""

    def __init__(self, case: GridCase, initial: PowerFlowSolution):
        base = case.base_mva
        self.case = case
        gens = case.generators
        self.bus_idx = np.array([case.index(gen.bus) for gen in gens], dtype=int)
        if len(set(self.bus_idx.tolist())) != len(gens):
            raise InputError("one generator per bus is required for transient runs")
        self.cap = np.array([gen.capacity for gen in gens], dtype=float)
        self.inertia = np.array([gen.inertia_h for gen in gens], dtype=float)
        self.droop = np.array([gen.droop_r for gen in gens], dtype=float)
        self.gov_tc = np.array([gen.governor_tc for gen in gens], dtype=float)
        self.damping = np.array([gen.damping_d for gen in gens], dtype=float)
        self.y_gen = 1.0 / (1j * np.array([gen.xd_system_base(base) for gen in gens]))
        self.mach_base = self.cap / base
        self.omega_s = 2 * np.pi * config.NOMINAL_HZ

        v0 = initial.v
        self.vm0 = initial.vm.copy()
        s_gen = initial.gen_mva[self.bus_idx] / base
        i_gen = np.conj(s_gen / v0[self.bus_idx])
        e_int = v0[self.bus_idx] + i_gen / self.y_gen
        self.emf = np.abs(e_int)
        self.delta0 = np.angle(e_int)
        # machine base
        self.p_set = s_gen.real / self.mach_base

        y_load = np.conj(initial.load_mva / base) / initial.vm**2
        diag = y_load.astype(complex)
        np.add.at(diag, self.bus_idx, self.y_gen)
        self.y_aug = (build_ybus(case).matrix + sparse.diags(diag)).tocsc()
        self.weights = self.inertia * self.cap

        self.br_from = np.array([case.index(br.from_bus) for br in case.branches], dtype=int)
        self.br_to = np.array([case.index(br.to_bus) for br in case.branches], dtype=int)
        self.br_y = np.array([br.admittance for br in case.branches])
        self.br_rating = np.array([br.rating for br in case.branches])

    def apply_step(self, step: LoadStep) -> None:
        """change load admittance at the pre-event voltage"""
        idx = self.case.index(step.bus)
        d_y = complex(step.dp_mw, -step.dq_mvar) / self.case.base_mva / self.vm0[idx] ** 2
        self.y_aug = (self.y_aug + sparse.csc_matrix(
            ([d_y], ([idx], [idx])), shape=self.y_aug.shape
        )).tocsc()

    def network(self, lu, delta: np.ndarray) -> np.ndarray:
        """bus voltages for given rotor angles"""
        inj = np.zeros(self.case.n_bus, dtype=complex)
        np.add.at(inj, self.bus_idx, self.y_gen * self.emf * np.exp(1j * delta))
        return lu.solve(inj)

    def derivatives(self, lu, state: np.ndarray) -> np.ndarray:
        """swing equation and governor right-hand side"""
        n_gen = len(self.cap)
        delta, d_omega, p_mech = state[:n_gen], state[n_gen:2 * n_gen], state[2 * n_gen:]
        v_bus = self.network(lu, delta)
        e_int = self.emf * np.exp(1j * delta)
        i_gen = self.y_gen * (e_int - v_bus[self.bus_idx])
        p_elec = (e_int * np.conj(i_gen)).real / self.mach_base
        return np.concatenate([
            self.omega_s * d_omega,
            (p_mech - p_elec - self.damping * d_omega) / (2.0 * self.inertia),
            (self.p_set - d_omega / self.droop - p_mech) / self.gov_tc,
        ])

    def loading(self, v_bus: np.ndarray) -> np.ndarray:
        """percent of rating per branch"""
        current = (v_bus[self.br_from] - v_bus[self.br_to]) * self.br_y
        s_from = np.abs(v_bus[self.br_from] * np.conj(current))
        s_to = np.abs(v_bus[self.br_to] * np.conj(current))
        return 100.0 * np.maximum(s_from, s_to) * self.case.base_mva / self.br_rating


def simulate_transient(
    case: GridCase,
    initial: PowerFlowSolution,
    sim_config: SimulationConfig,
) -> TransientResult:
    """integrate the machine states over the horizon, applying timed load steps"""
    if not initial.converged:
        raise InitialConditionError(
            f"initial power flow not converged (mismatch {initial.max_mismatch:.2e})"
        )
    if not case.generators:
        raise InputError("transient run needs at least one generator")
    for step in sim_config.events:
        if step.bus not in case.bus_ids:
            raise InputError(f"load step at unknown bus {step.bus}")

    machines = _Machines(case, initial)
    n_gen = len(machines.cap)
    dt = sim_config.dt
    n_steps = int(round(sim_config.horizon / dt))
    time = np.arange(n_steps + 1) * dt

    gen_pos = {int(idx): k for k, idx in enumerate(machines.bus_idx)}
    freq = np.empty((n_steps + 1, case.n_bus))
    coi = np.empty(n_steps + 1)
    rotor = np.empty((n_steps + 1, n_gen))
    volt = np.empty((n_steps + 1, case.n_bus))
    load = np.empty((n_steps + 1, len(case.branches)))

    state = np.concatenate([machines.delta0, np.zeros(n_gen), machines.p_set])
    lu = splu(machines.y_aug)
    events = list(sim_config.events)
    first_event = events[0].time_s if events else None
    pointer = 0
    logging.info(
        "simulating %s s with dt=%s s, %s events, %s machines",
        sim_config.horizon, dt, len(events), n_gen,
    )

    def record(k: int) -> None:
        d_omega = state[n_gen:2 * n_gen]
        v_bus = machines.network(lu, state[:n_gen])
        rotor[k] = config.NOMINAL_HZ * (1.0 + d_omega)
        coi[k] = config.NOMINAL_HZ * (1.0 + np.dot(machines.weights, d_omega) / machines.weights.sum())
        freq[k] = coi[k]
        for idx, pos in gen_pos.items():
            freq[k, idx] = rotor[k, pos]
        volt[k] = np.abs(v_bus)
        load[k] = machines.loading(v_bus)

    def result(upto: int, aborted: Optional[str] = None) -> TransientResult:
        return TransientResult(
            time=time[:upto],
            bus_ids=case.bus_ids,
            generator_buses=tuple(gen.bus for gen in case.generators),
            branches=tuple((br.from_bus, br.to_bus) for br in case.branches),
            frequency=freq[:upto],
            coi_frequency=coi[:upto],
            rotor_frequency=rotor[:upto],
            voltage=volt[:upto],
            loading=load[:upto],
            first_event_time=first_event,
            horizon=sim_config.horizon,
            final_states=[
                MachineState(
                    delta=float(state[k]),
                    d_omega=float(state[n_gen + k]),
                    p_mech=float(state[2 * n_gen + k]),
                    emf=float(machines.emf[k]),
                )
                for k in range(n_gen)
            ],
            aborted=aborted,
        )

    for k in range(n_steps + 1):
        # events take effect at the first sample at or after their time
        applied = False
        while pointer < len(events) and events[pointer].time_s <= time[k] + 1e-9:
            machines.apply_step(events[pointer])
            pointer += 1
            applied = True
        if applied:
            lu = splu(machines.y_aug)
        record(k)
        if k == n_steps:
            break

        k1 = machines.derivatives(lu, state)
        k2 = machines.derivatives(lu, state + 0.5 * dt * k1)
        k3 = machines.derivatives(lu, state + 0.5 * dt * k2)
        k4 = machines.derivatives(lu, state + dt * k3)
        state = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

        d_omega = state[n_gen:2 * n_gen]
        lost = np.flatnonzero(~(np.abs(d_omega) <= sim_config.sync_limit))
        if lost.size:
            bus = case.generators[int(lost[0])].bus
            t_abort = float(time[k + 1])
            logging.warning("loss of synchronism at t=%.3f s, generator at bus %s", t_abort, bus)
            partial = result(k + 1, aborted=f"loss of synchronism at t={t_abort:.3f} s (bus {bus})")
            raise LossOfSynchronismError(t_abort, bus, partial)

    return result(n_steps + 1)


def steady_state_frequency_analytic(
    case: GridCase,
    delta_p_mw: float,
    nominal_hz: float = config.NOMINAL_HZ,
) -> float:
    """
    droop equilibrium frequency after removing delta_p_mw of load

    positive delta_p_mw is a load drop and raises frequency
    """
    gain = sum(gen.droop_gain(case.base_mva) for gen in case.generators)
    if gain <= 0:
        raise InputError("zero total droop gain")
    return nominal_hz + nominal_hz * (delta_p_mw / case.base_mva) / gain


def extract_summary(
    result: TransientResult,
    settle_variance: float = config.SETTLE_VARIANCE_HZ2,
    band_hz: float = config.SETTLE_BAND_HZ,
) -> TransientSummary:
    """peak/steady/voltage triple plus settling diagnostics"""
    steady = result.steady_state_frequency
    variance = result.steady_state_variance
    settled = variance < settle_variance
    if not settled:
        logging.warning("trace not settled: steady-window variance %.2e Hz^2", variance)

    start = result.first_event_time or 0.0
    outside = np.flatnonzero(np.abs(result.coi_frequency - steady) > band_hz)
    settling = max(0.0, float(result.time[outside[-1]]) - start) if outside.size else 0.0

    return TransientSummary(
        peak_hz=result.peak_frequency,
        steady_hz=steady,
        peak_v_pu=result.peak_voltage,
        settled=settled,
        steady_variance=variance,
        settling_time_s=settling,
        min_hz=result.min_frequency,
        min_v_pu=result.min_voltage_after_event,
    )
