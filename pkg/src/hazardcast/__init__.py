"""Multi-hazard agricultural early-warning toolkit.

Forecasts 14-day-ahead counts of six severe weather hazards from daily
meteorological sequences and explains every forecast with timestep- and
feature-level Shapley attributions.
"""

__version__ = "0.1.0"

from .hazards import DEFAULT_TYPE_MAP, HAZARDS, N_HAZARDS, hazard_index

__all__ = ["DEFAULT_TYPE_MAP", "HAZARDS", "N_HAZARDS", "hazard_index", "__version__"]
