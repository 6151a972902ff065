"""protection relays evaluated against simulation outputs"""

from __future__ import annotations
from abc import ABC, abstractmethod
import dataclasses
from dataclasses import dataclass
from enum import Enum
import logging
import math
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Type

import networkx as nx
import numpy as np

from gridstrike.backend import config
from gridstrike.backend.dynamics import TransientResult
from gridstrike.backend.errors import InputError
from gridstrike.backend.grid_model import GridCase


class RelayKind(str, Enum):
    """relay event kinds"""

    OVER_FREQ_NA = "over_freq_na"
    OVER_FREQ_IEEE = "over_freq_ieee"
    UNDER_FREQ = "under_freq"
    OVER_VOLT = "over_volt"
    UNDER_VOLT = "under_volt"
    LINE_OVERLOAD = "line_overload"


class Verdict(str, Enum):
    """blackout classification"""

    NONE = "none"
    PARTIAL = "partial"
    SYSTEM_WIDE = "system_wide"


FREQUENCY_KINDS = (RelayKind.OVER_FREQ_NA, RelayKind.OVER_FREQ_IEEE, RelayKind.UNDER_FREQ)
VOLTAGE_KINDS = (RelayKind.OVER_VOLT, RelayKind.UNDER_VOLT)


@dataclass
class RelaySettings:
    """pickup thresholds"""

    of_na: float = 61.2
    of_ieee1547: float = 62.0
    uf: float = 58.8
    ov: float = 1.1
    uv: float = 0.9
    line_overload_pct: float = 100.0
    overload_dwell: float = 0.0

    def __post_init__(self):
        nominal = config.NOMINAL_HZ
        if not (self.of_na > nominal and self.of_ieee1547 > nominal and self.uf < nominal):
            raise InputError(
                f"frequency thresholds must satisfy of > {nominal} > uf, got "
                f"of_na={self.of_na}, of_ieee1547={self.of_ieee1547}, uf={self.uf}"
            )
        if not self.ov > 1.0 > self.uv:
            raise InputError(f"voltage thresholds must satisfy ov > 1 > uv, got ov={self.ov}, uv={self.uv}")
        if self.line_overload_pct <= 0 or self.overload_dwell < 0:
            raise InputError("line_overload_pct must be > 0 and overload_dwell >= 0")

    def as_dict(self) -> Dict[str, float]:
        """serializable dict"""
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> RelaySettings:
        """defaults overridden by a scenario [relays] section"""
        data = dict(data or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InputError(f"unknown relay settings: {unknown}")
        return cls(**{key: float(value) for key, value in data.items()})


@dataclass(frozen=True)
class RelayEvent:
    """first violation of one relay at one element"""

    time_s: float
    kind: RelayKind
    element: str
    value: float

    def as_dict(self) -> Dict[str, Any]:
        """summary.json record"""
        return {"time_s": self.time_s, "kind": self.kind.value, "element": self.element, "value": self.value}

    @property
    def element_id(self) -> Tuple[str, str]:
        """('gen'|'bus'|'branch', id)"""
        prefix, _, ident = self.element.partition(":")
        return prefix, ident


def _pickup_index(violation: np.ndarray, dwell_samples: int) -> Optional[int]:
    """first sample at which the violation has lasted dwell_samples more samples"""
    if not violation.any():
        return None
    if dwell_samples <= 0:
        return int(np.argmax(violation))
    run = 0
    for k, flag in enumerate(violation):
        run = run + 1 if flag else 0
        if run > dwell_samples:
            return k
    return None


class Relay(ABC):
    """abstract relay watching a set of signals against one threshold"""

    kind: RelayKind
    # True: trips on values >= threshold, False: on values <= threshold
    trips_above: bool = True

    def __init__(self, settings: RelaySettings):
        self.settings = settings

    @abstractmethod
    def threshold(self) -> float:
        """pickup value"""

    @abstractmethod
    def signals(self, result: TransientResult) -> Iterable[Tuple[str, np.ndarray]]:
        """(element, trace) pairs observed by the relay"""

    def violates(self, values: np.ndarray) -> np.ndarray:
        """elementwise violation mask"""
        if self.trips_above:
            return values >= self.threshold()
        return values <= self.threshold()

    def scan(self, result: TransientResult) -> List[RelayEvent]:
        """one event per element at its first (dwell-qualified) violation"""
        if len(result.time) > 1:
            step = float(result.time[1] - result.time[0])
            dwell_samples = math.ceil(self.settings.overload_dwell / step - 1e-9)
        else:
            dwell_samples = 0
        events = []
        for element, trace in self.signals(result):
            k = _pickup_index(self.violates(trace), dwell_samples)
            if k is not None:
                events.append(RelayEvent(float(result.time[k]), self.kind, element, float(trace[k])))
        return events


class _FrequencyRelay(Relay):
    """generator frequency relay fed by the COI frequency"""

    def signals(self, result):
        return [(f"gen:{bus}", result.coi_frequency) for bus in result.generator_buses]


class OverFrequencyNA(_FrequencyRelay):
    """North American practice over-frequency trip"""

    kind = RelayKind.OVER_FREQ_NA

    def threshold(self):
        return self.settings.of_na


class OverFrequencyIEEE(_FrequencyRelay):
    """IEEE 1547 over-frequency trip"""

    kind = RelayKind.OVER_FREQ_IEEE

    def threshold(self):
        return self.settings.of_ieee1547


class UnderFrequency(_FrequencyRelay):
    """under-frequency trip"""

    kind = RelayKind.UNDER_FREQ
    trips_above = False

    def threshold(self):
        return self.settings.uf


class _VoltageRelay(Relay):
    def signals(self, result):
        return [(f"bus:{bus}", result.voltage[:, k]) for k, bus in enumerate(result.bus_ids)]


class OverVoltage(_VoltageRelay):
    """bus over-voltage"""

    kind = RelayKind.OVER_VOLT

    def threshold(self):
        return self.settings.ov


class UnderVoltage(_VoltageRelay):
    """bus under-voltage"""

    kind = RelayKind.UNDER_VOLT
    trips_above = False

    def threshold(self):
        return self.settings.uv


class LineOverload(Relay):
    """thermal overload during the transient"""

    kind = RelayKind.LINE_OVERLOAD

    def threshold(self):
        return self.settings.line_overload_pct

    def violates(self, values):
        return values > self.threshold()

    def signals(self, result):
        return [
            (f"branch:{f}-{t}", result.loading[:, k]) for k, (f, t) in enumerate(result.branches)
        ]


class RelayEvaluator:
    """class to evaluate a transient result with respect to a set of relays"""

    settings: RelaySettings
    # registry of relays
    _relay_registry: Dict[str, Relay]

    def __init__(self, settings: Optional[RelaySettings] = None):
        self.settings = settings or RelaySettings()
        self._relay_registry = {}

        self.register_relay(OverFrequencyNA)
        self.register_relay(OverFrequencyIEEE)
        self.register_relay(UnderFrequency)
        self.register_relay(OverVoltage)
        self.register_relay(UnderVoltage)
        self.register_relay(LineOverload)

    def register_relay(self, relay_class: Type[Relay]) -> None:
        """register a relay"""
        relay = relay_class(self.settings)
        self._relay_registry[relay.__class__.__name__] = relay

    @property
    def relay_names(self) -> List[str]:
        """names of registered relays"""
        return list(self._relay_registry)

    def scan(self, result: TransientResult) -> List[RelayEvent]:
        """all events sorted by time"""
        events: List[RelayEvent] = []
        for name, relay in self._relay_registry.items():
            found = relay.scan(result)
            if found:
                logging.info("relay %s: %s events", name, len(found))
            events.extend(found)
        return sorted(events, key=lambda ev: (ev.time_s, ev.kind.value, ev.element))


def scan_relays(result: TransientResult, settings: Optional[RelaySettings] = None) -> List[RelayEvent]:
    """relay events of a transient trace, frequency relays on COI frequency"""
    return RelayEvaluator(settings).scan(result)


def scan_static_overloads(
    loadings: Mapping[Tuple[int, int], float],
    settings: Optional[RelaySettings] = None,
) -> List[RelayEvent]:
    """line_overload events for a power flow ({(from, to): percent})"""
    settings = settings or RelaySettings()
    return [
        RelayEvent(0.0, RelayKind.LINE_OVERLOAD, f"branch:{f}-{t}", float(pct))
        for (f, t), pct in loadings.items()
        if pct > settings.line_overload_pct
    ]


def blackout_verdict(events: Iterable[RelayEvent], case: GridCase) -> Verdict:
    """
    system_wide if every generator trips or no load remains reachable
    from a running generator, partial if some generator trips or some
    load is cut off, none otherwise

    voltage relay events at generator buses count as generator trips
    """
    gen_buses = {gen.bus for gen in case.generators}
    tripped = set()
    severed = []
    for event in events:
        prefix, ident = event.element_id
        if event.kind in FREQUENCY_KINDS and prefix == "gen":
            tripped.add(int(ident))
        elif event.kind in VOLTAGE_KINDS and prefix == "bus" and int(ident) in gen_buses:
            tripped.add(int(ident))
        elif event.kind == RelayKind.LINE_OVERLOAD and prefix == "branch":
            f, t = ident.split("-")
            severed.append((int(f), int(t)))

    running = gen_buses - tripped
    loads = [bus.id for bus in case.buses if bus.base_load_p > 0]
    graph = case.graph(exclude=severed)
    fed = set()
    for bus in running:
        fed |= nx.node_connected_component(graph, bus)
    unserved = [bus for bus in loads if bus not in fed]

    logging.info("verdict inputs: tripped generators %s, unserved loads %s", sorted(tripped), unserved)
    if not running or (loads and len(unserved) == len(loads)):
        return Verdict.SYSTEM_WIDE
    if tripped or unserved:
        return Verdict.PARTIAL
    return Verdict.NONE
