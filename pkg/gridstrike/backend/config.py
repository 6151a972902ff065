"""settings and default locations"""

import os
from pathlib import Path
from typing import Any, Dict, Type, Union

import toml

from gridstrike.backend.errors import InputError

PACKAGE_ROOT: Path = Path(__file__).resolve().parent.parent
DATASET_DIR: Path = PACKAGE_ROOT.parent / "datasets" / "manhattan12"
DEFAULT_CASE: Path = DATASET_DIR / "grid.toml"
DEFAULT_FLEET: Path = DATASET_DIR / "fleet.toml"
SCENARIO_DIR: Path = DATASET_DIR / "scenarios"

ENV_CASE: str = "GRIDSTRIKE_CASE"
ENV_FLEET: str = "GRIDSTRIKE_FLEET"

NOMINAL_HZ: float = 60.0
BASE_MVA: float = 100.0

# power flow
PF_TOL: float = 1e-8
PF_MAX_ITER: int = 50

# transients
DT_S: float = 0.01
HORIZON_S: float = 25.0
SYNC_LIMIT_PU: float = 0.1
STEADY_WINDOW: float = 0.1
SETTLE_VARIANCE_HZ2: float = 1e-4
SETTLE_BAND_HZ: float = 0.05

# fleet anchor years
ANCHOR_YEARS = (2022, 2030, 2050)

FREQUENCY_COLUMNS = ["time_s", "bus_id", "freq_hz"]
VOLTAGE_COLUMNS = ["time_s", "bus_id", "v_pu"]
LOADING_COLUMNS = ["time_s", "branch_from", "branch_to", "loading_pct"]
POWERFLOW_COLUMNS = ["branch_from", "branch_to", "loading_pct", "p_mw_from", "q_mvar_from"]
YEAR_SWEEP_COLUMNS = ["year", "scope", "peak_hz", "steady_hz"]
OPERATOR_SWEEP_COLUMNS = ["operator", "peak_hz", "steady_hz"]
MIN_POWER_COLUMNS = ["target_hz", "mw", "fraction", "feasible"]


def resolve_path(flag: Union[str, Path, None], env_key: str, default: Path) -> Path:
    """cli flag wins over environment, environment over bundled default"""
    if flag:
        return Path(flag)
    if os.environ.get(env_key):
        return Path(os.environ[env_key])
    return default


def read_toml(path: Union[str, Path], error: Type[InputError] = InputError) -> Dict[str, Any]:
    """load a toml file, turning io and syntax problems into InputError"""
    path = Path(path)
    if not path.is_file():
        raise error(f"file not found: {path}")
    try:
        return toml.load(path)
    except toml.TomlDecodeError as err:
        raise error(f"cannot parse {path}: {err}") from err
