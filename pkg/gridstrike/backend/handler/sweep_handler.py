"""Sweep Handlers"""

from __future__ import annotations
import logging

import pandas as pd

from gridstrike.backend import config
from gridstrike.backend.attack import min_attack_power, per_operator_sweep, year_sweep
from gridstrike.backend.errors import InfeasibleAttackError
from gridstrike.backend.handler.handler import (
    AbstractSweepHandler,
    SweepRequest,
    SweepResponse,
)


class OperatorSweepHandler(AbstractSweepHandler):
    """full attack on each operator separately"""

    def is_responsible(self, request: SweepRequest) -> bool:
        return request.mode == "operator"

    def run(self, request: SweepRequest) -> SweepResponse:
        summaries = per_operator_sweep(
            request.case, request.fleet, request.year, request.sim_config,
            jobs=request.jobs, progress=request.progress,
        )
        frame = pd.DataFrame(
            [
                {"operator": name, "peak_hz": s.peak_hz, "steady_hz": s.steady_hz}
                for name, s in summaries.items()
            ],
            columns=config.OPERATOR_SWEEP_COLUMNS,
        )
        lines = [
            f"{row.operator:<12} peak {row.peak_hz:.4f} Hz  steady {row.steady_hz:.4f} Hz"
            for row in frame.itertuples()
        ]
        return SweepResponse(frame, lines)


class YearSweepHandler(AbstractSweepHandler):
    """peak and steady frequency across years"""

    def is_responsible(self, request: SweepRequest) -> bool:
        return request.mode == "year"

    def run(self, request: SweepRequest) -> SweepResponse:
        frame = year_sweep(
            request.case, request.fleet, request.years, request.scopes, request.sim_config,
            jobs=request.jobs, progress=request.progress,
        )
        lines = [
            f"{row.year:g} {row.scope:<6} peak {row.peak_hz:.4f} Hz  steady {row.steady_hz:.4f} Hz"
            for row in frame.itertuples()
        ]
        return SweepResponse(frame, lines)


class MinPowerSweepHandler(AbstractSweepHandler):
    """smallest attack reaching each target frequency; infeasible targets are data"""

    def is_responsible(self, request: SweepRequest) -> bool:
        return request.mode == "min-power"

    def run(self, request: SweepRequest) -> SweepResponse:
        rows, lines = [], []
        for target in request.target_hz:
            try:
                found = min_attack_power(
                    request.case, request.fleet, request.template, target,
                    request.tol_mw, request.sim_config,
                )
            except InfeasibleAttackError as err:
                logging.warning("%s", err)
                rows.append({"target_hz": target, "mw": float("nan"), "fraction": float("nan"), "feasible": False})
                lines.append(f"{target:.3f} Hz: infeasible ({err})")
                continue
            rows.append({"target_hz": target, "mw": found.mw, "fraction": found.fraction, "feasible": True})
            lines.append(
                f"{target:.3f} Hz: {found.mw:.3f} MW ({100 * found.fraction:.1f}% of "
                f"{found.full_fleet_mw:.3f} MW), {found.probes} simulations"
            )
        return SweepResponse(pd.DataFrame(rows, columns=config.MIN_POWER_COLUMNS), lines)


def build_sweep_chain() -> AbstractSweepHandler:
    """operator -> year -> min-power"""
    head = OperatorSweepHandler()
    head.set_next(YearSweepHandler()).set_next(MinPowerSweepHandler())
    return head
