"""Data-driven value iteration for optimal output regulation of
drag-controlled relative orbital motion."""

from . import adp, cli, config, cw_plant, linops, regulator, riccati, sim

__version__ = "0.1.0"

__all__ = ["adp", "cli", "config", "cw_plant", "linops", "regulator",
           "riccati", "sim", "__version__"]
