"""Handlers"""

from __future__ import annotations
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
import logging
from typing import Any, List, Optional, Sequence

import pandas as pd

from gridstrike.backend.attack import AttackScenario, EvcsFleet
from gridstrike.backend.dynamics import SimulationConfig
from gridstrike.backend.errors import InputError
from gridstrike.backend.grid_model import GridCase


@dataclass
class SweepRequest:
    """dataclass representing data passed on to sweep handlers"""

    mode: str
    case: GridCase
    fleet: EvcsFleet
    year: float = 2030
    years: Sequence[float] = tuple(range(2022, 2031))
    scopes: Sequence[str] = ("all", "Tesla")
    template: AttackScenario = field(default_factory=lambda: AttackScenario(operators=("Tesla",)))
    target_hz: List[float] = field(default_factory=lambda: [61.2])
    tol_mw: float = 0.5
    sim_config: Optional[SimulationConfig] = None
    jobs: int = 1
    progress: bool = True


@dataclass
class SweepResponse:
    """sweep table plus human-readable lines"""

    frame: pd.DataFrame
    lines: List[str] = field(default_factory=list)


class Handler(ABC):
    """
    The Handler interface declares a method for building the chain of handlers.
    It also declares a method for executing a request.
    """

    @abstractmethod
    def set_next(self, handler: Handler) -> Handler:
        """set next handler in chain"""

    @abstractmethod
    def handle(self, request: SweepRequest) -> Any:
        """handle request"""


class AbstractSweepHandler(Handler):
    """
    default chaining behaviour: a handler runs the sweep it is
    responsible for, or passes the request on
    """

    _next_handler: Optional[Handler] = None

    def set_next(self, handler: Handler) -> Handler:
        self._next_handler = handler
        # allows sweep_a.set_next(sweep_b).set_next(sweep_c)
        return handler

    @abstractmethod
    def is_responsible(self, request: SweepRequest) -> bool:
        """checks if this handler is responsible for the given request"""

    @abstractmethod
    def run(self, request: SweepRequest) -> SweepResponse:
        """runs the sweep"""

    def handle(self, request: SweepRequest) -> SweepResponse:
        logging.info("currently handling request: %s", type(self).__name__)
        if self.is_responsible(request):
            return self.run(request)
        if self._next_handler:
            logging.info("  passing on to next handler: %s", type(self._next_handler).__name__)
            return self._next_handler.handle(request)
        raise InputError(f"unknown sweep mode '{request.mode}'")
