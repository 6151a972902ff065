"""files written into a run directory"""

from __future__ import annotations
from dataclasses import dataclass, field
import datetime
import hashlib
import json
import logging
from pathlib import Path
import time
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from gridstrike import __version__
from gridstrike.backend.dynamics import TransientResult, TransientSummary
from gridstrike.backend.protection import RelayEvent, Verdict

MANIFEST_NAME = "manifest.json"
DETERMINISM_NOTE = (
    "all data files are deterministic functions of the inputs hashed above; "
    "wall-clock values appear only in this manifest"
)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(val) for key, val in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(val) for val in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def write_json(data: Mapping[str, Any], path: Union[str, Path]) -> Path:
    """sorted keys, two-space indent, trailing newline"""
    path = Path(path)
    path.write_text(json.dumps(_jsonable(dict(data)), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """header row, no index, repr-exact floats"""
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.10g")
    logging.info("wrote %s (%s rows)", path, len(frame))
    return path


def sha256_file(path: Union[str, Path]) -> str:
    """hex digest of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """provenance of one output directory"""

    command: str
    datasets: Dict[str, str] = field(default_factory=dict)
    scenario: Optional[Dict[str, Any]] = None
    tool_version: str = __version__
    started_at: str = ""
    wall_clock_s: float = 0.0
    note: str = DETERMINISM_NOTE
    _t0: float = field(default=0.0, repr=False)

    @classmethod
    def start(cls, command: str, dataset_paths: Sequence[Union[str, Path]], scenario=None) -> RunManifest:
        """hash inputs and start the clock"""
        manifest = cls(
            command=command,
            datasets={str(Path(p)): sha256_file(p) for p in dataset_paths},
            scenario=scenario,
        )
        manifest.started_at = datetime.datetime.now().isoformat()
        manifest._t0 = time.perf_counter()
        return manifest

    def as_dict(self) -> Dict[str, Any]:
        """manifest.json content"""
        return {
            "command": self.command,
            "tool_version": self.tool_version,
            "datasets": self.datasets,
            "scenario": self.scenario,
            "started_at": self.started_at,
            "wall_clock_s": self.wall_clock_s,
            "note": self.note,
        }

    def write(self, out_dir: Union[str, Path]) -> Path:
        """stop the clock and write manifest.json"""
        self.wall_clock_s = round(time.perf_counter() - self._t0, 3)
        return write_json(self.as_dict(), Path(out_dir) / MANIFEST_NAME)


def summary_dict(
    summary: Optional[TransientSummary],
    relay_events: Sequence[RelayEvent],
    verdict: Optional[Verdict],
    attacked_mw: Optional[Mapping[int, float]] = None,
    aborted: Optional[str] = None,
) -> Dict[str, Any]:
    """summary.json content"""
    data: Dict[str, Any] = summary.as_dict() if summary else {}
    data["relay_events"] = [event.as_dict() for event in relay_events]
    data["verdict"] = verdict.value if verdict else None
    data["aborted"] = aborted
    if attacked_mw is not None:
        data["attacked_mw"] = {str(bus): mw for bus, mw in attacked_mw.items()}
        data["attacked_total_mw"] = float(sum(attacked_mw.values()))
    return data


def write_transient(result: TransientResult, out_dir: Union[str, Path]) -> List[Path]:
    """frequency.csv, voltage.csv and loading.csv"""
    out_dir = Path(out_dir)
    return [
        write_csv(result.frequency_frame(), out_dir / "frequency.csv"),
        write_csv(result.voltage_frame(), out_dir / "voltage.csv"),
        write_csv(result.loading_frame(), out_dir / "loading.csv"),
    ]


GNUPLOT_TEMPLATE = """set datafile separator ','
set key outside right
set xlabel 'time (s)'
set ylabel '{ylabel}'
set title '{title}'
buses = "{buses}"
plot for [b in buses] '{csv}' every ::1 using 1:($2 == b+0 ? $3 : 1/0) with lines title 'bus '.b
"""


def write_gnuplot(result: TransientResult, out_dir: Union[str, Path]) -> List[Path]:
    """plot_frequency.gp and plot_voltage.gp over the long-form csv files"""
    out_dir = Path(out_dir)
    buses = " ".join(str(bus) for bus in result.bus_ids)
    paths = []
    for name, ylabel, csv in (
        ("frequency", "frequency (Hz)", "frequency.csv"),
        ("voltage", "voltage (p.u.)", "voltage.csv"),
    ):
        path = out_dir / f"plot_{name}.gp"
        path.write_text(
            GNUPLOT_TEMPLATE.format(ylabel=ylabel, title=f"bus {name}", buses=buses, csv=csv),
            encoding="utf-8",
        )
        paths.append(path)
    return paths


def markdown_table(frame: pd.DataFrame, float_format: str = "{:.4f}") -> str:
    """pipe table of a frame"""
    header = "| " + " | ".join(str(col) for col in frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    rows = []
    for record in frame.itertuples(index=False):
        cells = [
            float_format.format(cell) if isinstance(cell, (float, np.floating)) else str(cell)
            for cell in record
        ]
        rows.append("| " + " | ".join(cells) + " |")
    return "\n".join([header, rule, *rows])


def render_report(sections: Sequence[tuple]) -> str:
    """markdown document from (heading, body) pairs"""
    parts = ["# gridstrike report", ""]
    for heading, body in sections:
        parts += [f"## {heading}", "", body.rstrip(), ""]
    return "\n".join(parts)
