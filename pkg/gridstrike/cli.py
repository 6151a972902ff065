"""gridstrike command line"""

from __future__ import annotations
from dataclasses import dataclass
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd
import typer

from gridstrike.backend import config
from gridstrike.backend.artifacts import (
    RunManifest,
    markdown_table,
    render_report,
    summary_dict,
    write_csv,
    write_gnuplot,
    write_json,
    write_transient,
)
from gridstrike.backend.attack import (
    SELECT_ALL,
    SELECT_NON_TESLA,
    TESLA,
    AttackScenario,
    EvcsFleet,
    fleet_slice,
    load_fleet,
    load_scenario,
    operating_point,
    run_scenario,
)
from gridstrike.backend.dynamics import SimulationConfig, extract_summary
from gridstrike.backend.errors import GridStrikeError, LossOfSynchronismError
from gridstrike.backend.grid_model import BranchKind, GridCase, load_grid_case
from gridstrike.backend.handler import SweepRequest, build_sweep_chain
from gridstrike.backend.powerflow import loading_table, solve_power_flow
from gridstrike.backend.protection import RelaySettings, blackout_verdict, scan_relays

app = typer.Typer(add_completion=False, help="EV charging demand-side attacks on a transmission grid")

BASE_YEAR_LABEL = "2022*"


@dataclass
class CliContext:
    """global options shared by all commands"""

    case_path: Path
    fleet_path: Path
    out_dir: Path
    power_factor: float
    progress: bool

    def load_case(self) -> GridCase:
        """grid case from --case / environment / bundled dataset"""
        return load_grid_case(self.case_path)

    def load_fleet(self) -> EvcsFleet:
        """fleet from --fleet / environment / bundled dataset"""
        return load_fleet(self.fleet_path)

    def output_dir(self) -> Path:
        """created on demand"""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir


def _fail(stage: str, err: GridStrikeError) -> typer.Exit:
    logging.error("%s failed: %s", stage, err)
    typer.echo(f"error [{stage}]: {err}", err=True)
    return typer.Exit(code=err.exit_code)


@app.callback()
def main(
    ctx: typer.Context,
    case: Optional[Path] = typer.Option(None, "--case", help="grid case toml"),
    fleet: Optional[Path] = typer.Option(None, "--fleet", help="EV fleet toml"),
    out_dir: Path = typer.Option(Path("gridstrike-out"), "--out-dir", help="output directory"),
    power_factor: float = typer.Option(1.0, "--pf", help="EV charging power factor"),
    quiet: bool = typer.Option(False, "--quiet", help="warnings only, no progress bars"),
    verbose: bool = typer.Option(False, "--verbose", help="debug logging"),
):
    """run power flows, transients, sweeps and reports"""
    level = logging.WARNING if quiet else logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format='%(asctime)s %(message)s',
        datefmt='%m/%d/%Y %I:%M:%S %p',
        force=True,
    )
    ctx.obj = CliContext(
        case_path=config.resolve_path(case, config.ENV_CASE, config.DEFAULT_CASE),
        fleet_path=config.resolve_path(fleet, config.ENV_FLEET, config.DEFAULT_FLEET),
        out_dir=out_dir,
        power_factor=power_factor,
        progress=not quiet,
    )


def _parse_years(year: str) -> List[Tuple[str, Optional[float]]]:
    if year.lower() == "all":
        return [(BASE_YEAR_LABEL, None)] + [(str(y), float(y)) for y in config.ANCHOR_YEARS]
    if year.lower() == "none":
        return [(BASE_YEAR_LABEL, None)]
    try:
        return [(year, float(year))]
    except ValueError as err:
        raise typer.BadParameter(f"year must be a number, 'none' or 'all', got '{year}'") from err


def _parse_operators(operators: str) -> Union[str, Tuple[str, ...]]:
    names = tuple(name.strip() for name in operators.split(",") if name.strip())
    if not names:
        raise typer.BadParameter("operators must name at least one selector")
    return names[0] if len(names) == 1 else names


def loading_rows(
    case: GridCase,
    fleet: EvcsFleet,
    years: List[Tuple[str, Optional[float]]],
    power_factor: float,
    operators: Union[str, Sequence[str]] = SELECT_ALL,
) -> pd.DataFrame:
    """loading rows for each requested year, with a leading year column"""
    frames = []
    for label, value in years:
        injections = operating_point(case, fleet, value, power_factor, operators)
        solution = solve_power_flow(case, injections)
        frame = loading_table(case, solution)
        frame.insert(0, "year", label)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def loading_files(rows: pd.DataFrame, path: Path) -> List[Path]:
    """
    one csv per year with the powerflow columns only; several years go to
    <stem>_<year><suffix>, the no-EV year under the name 'none'
    """
    labels = list(dict.fromkeys(rows["year"]))
    written = []
    for label in labels:
        target = path
        if len(labels) > 1:
            tag = "none" if label == BASE_YEAR_LABEL else label
            target = path.with_name(f"{path.stem}_{tag}{path.suffix}")
        frame = rows[rows["year"] == label][config.POWERFLOW_COLUMNS]
        written.append(write_csv(frame, target))
    return written


def loading_text(case: GridCase, rows: pd.DataFrame, threshold: float, lines_only: bool = False) -> pd.DataFrame:
    """branch x year table of loading percentages, OVERLOAD marked"""
    kinds = {(br.from_bus, br.to_bus): br.kind for br in case.branches}
    table = {}
    for label, group in rows.groupby("year", sort=False):
        cells = []
        for rec in group.itertuples():
            cell = f"{rec.loading_pct:.1f}"
            if rec.loading_pct > threshold:
                cell += " OVERLOAD"
            cells.append(cell)
        table[label] = cells
    first = rows[rows["year"] == rows["year"].iloc[0]]
    index = [f"{f}-{t}" for f, t in zip(first["branch_from"], first["branch_to"])]
    frame = pd.DataFrame(table, index=index)
    frame.index.name = "branch"
    if lines_only:
        keep = [kinds[(f, t)] == BranchKind.LINE for f, t in zip(first["branch_from"], first["branch_to"])]
        frame = frame[keep]
    return frame


@app.command()
def powerflow(
    ctx: typer.Context,
    year: str = typer.Option("2030", "--year", help="year, 'none' (no EVs) or 'all'"),
    operators: str = typer.Option(SELECT_ALL, "--operators", help="charging operators: all, non-tesla or names, comma separated"),
    out: Optional[Path] = typer.Option(None, "--out", help="loading csv (default <out-dir>/loadings.csv; one file per year for --year all)"),
):
    """line loadings of the EV-year operating point"""
    cli: CliContext = ctx.obj
    years = _parse_years(year)
    selector = _parse_operators(operators)
    try:
        case = cli.load_case()
        fleet = cli.load_fleet()
        fleet.resolve_operators(selector)
        manifest = RunManifest.start(
            "powerflow", [cli.case_path, cli.fleet_path], {"year": year, "operators": operators, "pf": cli.power_factor},
        )
    except GridStrikeError as err:
        raise _fail("input", err)
    try:
        rows = loading_rows(case, fleet, years, cli.power_factor, selector)
    except GridStrikeError as err:
        raise _fail("power flow", err)

    out_dir = cli.output_dir()
    loading_files(rows, out or out_dir / "loadings.csv")
    manifest.write(out_dir)
    typer.echo(loading_text(case, rows, RelaySettings().line_overload_pct).to_string())


@app.command()
def transient(
    ctx: typer.Context,
    scenario: Path = typer.Option(..., "--scenario", help="scenario toml"),
    dt: float = typer.Option(config.DT_S, "--dt", help="integration step, s"),
    horizon: float = typer.Option(config.HORIZON_S, "--horizon", help="simulated time, s"),
    gnuplot: bool = typer.Option(False, "--gnuplot", help="also write gnuplot scripts"),
):
    """time-domain response to one attack scenario"""
    cli: CliContext = ctx.obj
    try:
        case = cli.load_case()
        fleet = cli.load_fleet()
        attack = load_scenario(scenario)
        attacked = fleet_slice(fleet, attack)
        sim_config = SimulationConfig(dt=dt, horizon=horizon)
        manifest = RunManifest.start(
            "transient", [cli.case_path, cli.fleet_path, scenario], attack.as_dict()
        )
    except GridStrikeError as err:
        raise _fail("input", err)

    out_dir = cli.output_dir()
    try:
        outcome = run_scenario(case, fleet, attack, sim_config)
    except LossOfSynchronismError as err:
        partial = err.partial_result
        if partial is not None:
            write_transient(partial, out_dir)
            events = scan_relays(partial, attack.relays)
            data = summary_dict(extract_summary(partial), events, blackout_verdict(events, case), attacked, str(err))
        else:
            data = summary_dict(None, [], None, attacked, str(err))
        write_json(data, out_dir / "summary.json")
        manifest.write(out_dir)
        raise _fail("transient", err)
    except GridStrikeError as err:
        write_json(summary_dict(None, [], None, attacked, str(err)), out_dir / "summary.json")
        manifest.write(out_dir)
        raise _fail("transient", err)

    write_transient(outcome.result, out_dir)
    if gnuplot:
        write_gnuplot(outcome.result, out_dir)
    write_json(
        summary_dict(outcome.summary, outcome.relay_events, outcome.verdict, attacked),
        out_dir / "summary.json",
    )
    manifest.write(out_dir)

    summary = outcome.summary
    typer.echo(f"attacked {outcome.total_mw:.3f} MW at t={attack.t_attack:g} s")
    typer.echo(f"peak {summary.peak_hz:.4f} Hz, steady {summary.steady_hz:.4f} Hz, peak voltage {summary.peak_v_pu:.4f} p.u.")
    for event in outcome.relay_events:
        typer.echo(f"  {event.time_s:7.2f} s  {event.kind.value:<15} {event.element:<10} {event.value:.4f}")
    typer.echo(f"verdict: {outcome.verdict.value}")


@app.command()
def sweep(
    ctx: typer.Context,
    mode: str = typer.Option(..., "--mode", help="operator | year | min-power"),
    year: float = typer.Option(2030, "--year", help="fleet year for operator and min-power modes"),
    target_hz: List[float] = typer.Option([61.2], "--target-hz", help="min-power target, repeatable"),
    operators: List[str] = typer.Option([TESLA], "--operator", help="min-power operators, repeatable"),
    tol_mw: float = typer.Option(0.5, "--tol-mw", help="min-power bisection tolerance"),
    jobs: int = typer.Option(1, "--jobs", help="concurrent simulations"),
    out: Optional[Path] = typer.Option(None, "--out", help="sweep csv (default <out-dir>/sweep_<mode>.csv)"),
):
    """attack feasibility sweeps"""
    cli: CliContext = ctx.obj
    try:
        case = cli.load_case()
        fleet = cli.load_fleet()
        template = AttackScenario(
            year=year,
            operators=operators[0] if len(operators) == 1 else tuple(operators),
            power_factor=cli.power_factor,
        )
        template.validate(fleet)
        request = SweepRequest(
            mode=mode, case=case, fleet=fleet, year=year, template=template,
            target_hz=list(target_hz), tol_mw=tol_mw, jobs=jobs, progress=cli.progress,
        )
        manifest = RunManifest.start("sweep", [cli.case_path, cli.fleet_path], {"mode": mode, **template.as_dict()})
    except GridStrikeError as err:
        raise _fail("input", err)
    try:
        response = build_sweep_chain().handle(request)
    except GridStrikeError as err:
        raise _fail(f"sweep {mode}", err)

    out_dir = cli.output_dir()
    write_csv(response.frame, out or out_dir / f"sweep_{mode}.csv")
    manifest.write(out_dir)
    for line in response.lines:
        typer.echo(line)


@app.command()
def report(
    ctx: typer.Context,
    jobs: int = typer.Option(1, "--jobs", help="concurrent simulations"),
):
    """loading, per-operator and year tables plus attack summaries in report.md"""
    cli: CliContext = ctx.obj
    try:
        case = cli.load_case()
        fleet = cli.load_fleet()
        manifest = RunManifest.start("report", [cli.case_path, cli.fleet_path])
    except GridStrikeError as err:
        raise _fail("input", err)

    chain = build_sweep_chain()
    sections = []
    try:
        rows = loading_rows(case, fleet, _parse_years("all"), cli.power_factor)
        table = loading_text(case, rows, RelaySettings().line_overload_pct, lines_only=True)
        sections.append(("Line loadings (% of rating)", markdown_table(table.reset_index())))

        operator = chain.handle(SweepRequest("operator", case, fleet, jobs=jobs, progress=cli.progress))
        sections.append(("Per-operator attacks, 2030", markdown_table(operator.frame)))

        years = chain.handle(SweepRequest("year", case, fleet, jobs=jobs, progress=cli.progress))
        sections.append(("Peak and steady frequency by year", markdown_table(years.frame)))

        summaries = []
        for label, selector in (("all EVCS", "all"), ("Tesla", TESLA), ("non-Tesla", SELECT_NON_TESLA)):
            for year in (2022, 2030):
                outcome = run_scenario(case, fleet, AttackScenario(year=year, operators=selector, power_factor=cli.power_factor))
                kinds = sorted({event.kind.value for event in outcome.relay_events})
                summaries.append({
                    "scenario": f"{label} {year}",
                    "attacked_mw": outcome.total_mw,
                    "peak_hz": outcome.summary.peak_hz,
                    "steady_hz": outcome.summary.steady_hz,
                    "peak_v_pu": outcome.summary.peak_v_pu,
                    "relays": ", ".join(kinds) or "-",
                    "verdict": outcome.verdict.value,
                })
        sections.append(("Attack scenarios", markdown_table(pd.DataFrame(summaries))))

        power = chain.handle(SweepRequest("min-power", case, fleet, progress=cli.progress))
        sections.append(("Minimum Tesla attack power", markdown_table(power.frame)))
    except GridStrikeError as err:
        raise _fail("report", err)

    out_dir = cli.output_dir()
    path = out_dir / "report.md"
    path.write_text(render_report(sections), encoding="utf-8")
    manifest.write(out_dir)
    typer.echo(f"report written to {path}")


if __name__ == "__main__":
    app()
