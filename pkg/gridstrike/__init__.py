"""gridstrike: EV charging demand-side attacks on transmission grids"""

__version__ = "0.1.0"
