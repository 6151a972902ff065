"""static network data model, per-unit helpers and admittance matrix"""

from __future__ import annotations
from collections import Counter
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy import sparse
import toml

from gridstrike.backend import config
from gridstrike.backend.errors import CaseParseError, CaseValidationError


class BusKind(str, Enum):
    """power flow bus classification"""

    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


class BranchKind(str, Enum):
    """series element type"""

    LINE = "line"
    TRANSFORMER = "transformer"


def _numeric(data: Dict[str, Any], ints: Sequence[str], floats: Sequence[str]) -> Dict[str, Any]:
    """copy of a record with numeric fields coerced; missing fields are left for the constructor"""
    data = dict(data)
    for key in ints:
        if key in data:
            data[key] = int(data[key])
    for key in floats:
        if key in data:
            data[key] = float(data[key])
    return data


def to_per_unit(value: float, base: float = config.BASE_MVA) -> float:
    """MW, Mvar or MVA to per unit on `base`"""
    if base <= 0:
        raise ValueError(f"per-unit base must be positive, got {base}")
    return value / base


def from_per_unit(value: float, base: float = config.BASE_MVA) -> float:
    """per unit on `base` back to MW, Mvar or MVA"""
    if base <= 0:
        raise ValueError(f"per-unit base must be positive, got {base}")
    return value * base


@dataclass(frozen=True)
class Bus:
    """network node"""

    id: int
    name: str
    nominal_kv: float
    kind: BusKind = BusKind.PQ
    base_load_p: float = 0.0
    base_load_q: float = 0.0

    def as_dict(self) -> Dict[str, Any]:
        """serializable dict"""
        data = dataclasses.asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> Bus:
        """build from a [[bus]] table"""
        data = _numeric(data, ("id",), ("nominal_kv", "base_load_p", "base_load_q"))
        data["kind"] = BusKind(data.get("kind", "pq"))
        return cls(**data)


@dataclass(frozen=True)
class Branch:
    """series impedance between two buses, per unit on the system base"""

    from_bus: int
    to_bus: int
    r: float
    x: float
    rating: float
    kind: BranchKind = BranchKind.LINE
    side_voltages: Tuple[float, float] = (0.0, 0.0)

    @property
    def label(self) -> str:
        """short 'f-t' label"""
        return f"{self.from_bus}-{self.to_bus}"

    @property
    def admittance(self) -> complex:
        """series admittance 1/(r+jx)"""
        return 1.0 / complex(self.r, self.x)

    def as_dict(self) -> Dict[str, Any]:
        """serializable dict"""
        data = dataclasses.asdict(self)
        data["kind"] = self.kind.value
        data["side_voltages"] = list(self.side_voltages)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> Branch:
        """build from a [[branch]] table"""
        data = _numeric(data, ("from_bus", "to_bus"), ("r", "x", "rating"))
        data["kind"] = BranchKind(data.get("kind", "line"))
        data["side_voltages"] = tuple(float(v) for v in data.get("side_voltages", (0.0, 0.0)))
        return cls(**data)


@dataclass(frozen=True)
class Generator:
    """synchronous machine with classical model and droop governor"""

    bus: int
    p_set: float
    capacity: float
    inertia_h: float
    droop_r: float
    governor_tc: float
    damping_d: float = 0.0
    # on machine base
    xd_transient: float = 0.2
    v_set: float = 1.0
    name: str = ""

    def droop_gain(self, base_mva: float = config.BASE_MVA) -> float:
        """regulation gain capacity/(base*R) on the system base"""
        return self.capacity / base_mva / self.droop_r

    def xd_system_base(self, base_mva: float = config.BASE_MVA) -> float:
        """transient reactance converted to the system base"""
        return self.xd_transient * base_mva / self.capacity

    def as_dict(self) -> Dict[str, Any]:
        """serializable dict"""
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> Generator:
        """build from a [[generator]] table"""
        data = _numeric(
            data,
            ("bus",),
            ("p_set", "capacity", "inertia_h", "droop_r", "governor_tc", "damping_d", "xd_transient", "v_set"),
        )
        return cls(**data)


@dataclass(frozen=True)
class GridCase:
    """buses, branches and generators of one network"""

    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    generators: Tuple[Generator, ...]
    base_mva: float = config.BASE_MVA
    name: str = ""

    @property
    def n_bus(self) -> int:
        """number of buses"""
        return len(self.buses)

    @property
    def bus_ids(self) -> Tuple[int, ...]:
        """bus ids in matrix order"""
        return tuple(bus.id for bus in self.buses)

    def index(self, bus_id: int) -> int:
        """matrix index of a bus id"""
        return bus_id - 1

    def bus(self, bus_id: int) -> Bus:
        """bus by id"""
        return self.buses[self.index(bus_id)]

    @property
    def slack_bus(self) -> Bus:
        """the unique slack bus"""
        return next(bus for bus in self.buses if bus.kind == BusKind.SLACK)

    def generator_at(self, bus_id: int) -> Optional[Generator]:
        """generator connected to bus_id, if any"""
        for gen in self.generators:
            if gen.bus == bus_id:
                return gen
        return None

    def total_base_load(self) -> float:
        """MW"""
        return sum(bus.base_load_p for bus in self.buses)

    def graph(self, exclude: Sequence[Tuple[int, int]] = ()) -> nx.Graph:
        """undirected bus graph, optionally without some branches"""
        excluded = {frozenset(pair) for pair in exclude}
        graph = nx.Graph()
        graph.add_nodes_from(self.bus_ids)
        for branch in self.branches:
            if frozenset((branch.from_bus, branch.to_bus)) in excluded:
                continue
            graph.add_edge(branch.from_bus, branch.to_bus)
        return graph

    def bridges(self) -> List[Tuple[int, int]]:
        """branches whose removal disconnects the network"""
        return sorted(tuple(sorted(edge)) for edge in nx.bridges(self.graph()))

    def without_branch(self, from_bus: int, to_bus: int) -> GridCase:
        """copy with one branch removed (not validated)"""
        pair = frozenset((from_bus, to_bus))
        branches = tuple(
            br for br in self.branches if frozenset((br.from_bus, br.to_bus)) != pair
        )
        return dataclasses.replace(self, branches=branches)

    def as_dict(self) -> Dict[str, Any]:
        """toml-ready dict following the grid file schema"""
        return {
            "case": {"name": self.name, "base_mva": self.base_mva},
            "bus": [bus.as_dict() for bus in self.buses],
            "branch": [branch.as_dict() for branch in self.branches],
            "generator": [gen.as_dict() for gen in self.generators],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> GridCase:
        """build from a parsed grid file (not validated)"""
        header = data.get("case", {})
        return cls(
            buses=tuple(Bus.from_dict(rec) for rec in data.get("bus", [])),
            branches=tuple(Branch.from_dict(rec) for rec in data.get("branch", [])),
            generators=tuple(Generator.from_dict(rec) for rec in data.get("generator", [])),
            base_mva=float(header.get("base_mva", config.BASE_MVA)),
            name=str(header.get("name", "")),
        )


@dataclass(frozen=True)
class AdmittanceMatrix:
    """sparse nodal admittance matrix in per-unit siemens"""

    matrix: sparse.csr_matrix
    bus_ids: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        """dimension"""
        return self.matrix.shape[0]

    def at(self, from_bus: int, to_bus: int) -> complex:
        """entry addressed by bus ids"""
        return complex(
            self.matrix[self.bus_ids.index(from_bus), self.bus_ids.index(to_bus)]
        )

    def to_dense(self) -> np.ndarray:
        """dense copy"""
        return self.matrix.toarray()


def build_ybus(case: GridCase) -> AdmittanceMatrix:
    """assemble Y-bus from series branch admittances; no shunts"""
    n_bus = case.n_bus
    rows: List[int] = []
    cols: List[int] = []
    vals: List[complex] = []
    for branch in case.branches:
        i, j = case.index(branch.from_bus), case.index(branch.to_bus)
        y = branch.admittance
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-y, -y, y, y]
    # duplicates (parallel branches) are summed by the coo->csr conversion
    ybus = sparse.coo_matrix(
        (np.array(vals, dtype=complex), (rows, cols)), shape=(n_bus, n_bus)
    ).tocsr()
    return AdmittanceMatrix(matrix=ybus, bus_ids=case.bus_ids)


def validate_case(case: GridCase) -> None:
    """check every GridCase invariant, raising CaseValidationError"""
    problems: List[str] = []
    records: List[Any] = []

    ids = [bus.id for bus in case.buses]
    duplicates = sorted(k for k, v in Counter(ids).items() if v > 1)
    if duplicates:
        problems.append(f"duplicate bus ids {duplicates}")
        records += [f"bus {i}" for i in duplicates]
    elif ids != list(range(1, len(ids) + 1)):
        problems.append(f"bus ids must be contiguous from 1 in file order, got {ids}")
        records += [f"bus {i}" for i in ids]

    slacks = [bus.id for bus in case.buses if bus.kind == BusKind.SLACK]
    if len(slacks) != 1:
        problems.append(f"exactly one slack bus required, found {len(slacks)}: {slacks}")
        records += [f"bus {i}" for i in slacks]

    for bus in case.buses:
        if bus.nominal_kv <= 0:
            problems.append(f"bus {bus.id}: nominal_kv must be > 0")
            records.append(f"bus {bus.id}")
        if bus.base_load_p < 0:
            problems.append(f"bus {bus.id}: base_load_p must be >= 0")
            records.append(f"bus {bus.id}")

    kinds = {bus.id: bus.kind for bus in case.buses}
    known = set(kinds)
    for branch in case.branches:
        tag = f"branch {branch.label}"
        if branch.x == 0:
            problems.append(f"{tag}: zero reactance")
            records.append(tag)
        if branch.r < 0:
            problems.append(f"{tag}: negative resistance")
            records.append(tag)
        if branch.rating <= 0:
            problems.append(f"{tag}: rating must be > 0")
            records.append(tag)
        if branch.from_bus == branch.to_bus:
            problems.append(f"{tag}: from_bus equals to_bus")
            records.append(tag)
        if branch.from_bus not in known or branch.to_bus not in known:
            problems.append(f"{tag}: unknown bus")
            records.append(tag)

    for gen in case.generators:
        tag = f"generator at bus {gen.bus}"
        if gen.bus not in known:
            problems.append(f"{tag}: unknown bus")
            records.append(tag)
            continue
        for attr in ("inertia_h", "droop_r", "governor_tc", "capacity", "xd_transient", "v_set"):
            if getattr(gen, attr) <= 0:
                problems.append(f"{tag}: {attr} must be > 0")
                records.append(tag)
        if gen.damping_d < 0:
            problems.append(f"{tag}: damping_d must be >= 0")
            records.append(tag)
        if not 0 <= gen.p_set <= gen.capacity:
            problems.append(f"{tag}: p_set {gen.p_set} outside [0, {gen.capacity}]")
            records.append(tag)
        if kinds[gen.bus] == BusKind.PQ:
            problems.append(f"{tag}: generator on a pq bus")
            records.append(tag)

    for bus in case.buses:
        if bus.kind == BusKind.PV and case.generator_at(bus.id) is None:
            problems.append(f"bus {bus.id}: pv bus without generator")
            records.append(f"bus {bus.id}")

    if problems:
        raise CaseValidationError("; ".join(problems), records)

    # topology checks need a sane bus set
    graph = case.graph()
    if not nx.is_connected(graph):
        islands = [sorted(c) for c in nx.connected_components(graph)]
        raise CaseValidationError(f"network is not connected: islands {islands}", islands)

    slack = case.slack_bus
    fixed = sum(gen.p_set for gen in case.generators if gen.bus != slack.id)
    slack_gen = case.generator_at(slack.id)
    # a slack bus without machine data is an unlimited source
    headroom = slack_gen.capacity if slack_gen else float("inf")
    if fixed + headroom < case.total_base_load():
        raise CaseValidationError(
            f"generation {fixed + headroom:.1f} MW cannot cover base load "
            f"{case.total_base_load():.1f} MW",
            [f"bus {slack.id}"],
        )


def load_grid_case(path: Union[str, Path]) -> GridCase:
    """read and validate a grid case toml file"""
    data = config.read_toml(path, error=CaseParseError)
    for section in ("bus", "branch"):
        if section not in data:
            raise CaseParseError(f"{path}: missing [[{section}]] section")
    for section, record_type in (("bus", Bus), ("branch", Branch), ("generator", Generator)):
        for number, record in enumerate(data.get(section, []), start=1):
            try:
                record_type.from_dict(record)
            except (TypeError, ValueError) as err:
                raise CaseParseError(f"{path}: bad [[{section}]] record {number}: {err}") from err
    try:
        case = GridCase.from_dict(data)
    except (TypeError, ValueError) as err:
        raise CaseParseError(f"{path}: bad [case] header: {err}") from err
    validate_case(case)
    logging.info(
        "loaded grid case %s: %s buses, %s branches, %s generators",
        case.name, case.n_bus, len(case.branches), len(case.generators),
    )
    return case


def dump_grid_case(case: GridCase, path: Union[str, Path]) -> None:
    """write case in the grid file schema"""
    with open(path, "w", encoding="utf-8") as fp:
        toml.dump(case.as_dict(), fp)
