"""The six severe-event categories and the raw NOAA event-type mapping."""

from __future__ import annotations

HAZARDS = ("ExtremeCold", "Flood", "Frost", "Hail", "Heat", "ExtremeRain")
N_HAZARDS = len(HAZARDS)
HAZARD_INDEX = {name: i for i, name in enumerate(HAZARDS)}

# Raw storm-database event types folded into the six forecast categories.
# Anything not listed here is dropped (and counted) during event parsing.
DEFAULT_TYPE_MAP = {
    "Extreme Cold/Wind Chill": "ExtremeCold",
    "Cold/Wind Chill": "ExtremeCold",
    "Flood": "Flood",
    "Flash Flood": "Flood",
    "Frost/Freeze": "Frost",
    "Hail": "Hail",
    "Heat": "Heat",
    "Excessive Heat": "Heat",
    "Heavy Rain": "ExtremeRain",
}


def hazard_index(name: str) -> int:
    """Index of a hazard category, with a helpful error for typos."""
    try:
        return HAZARD_INDEX[name]
    except KeyError:
        raise ValueError(f"unknown hazard {name!r}; expected one of {', '.join(HAZARDS)}") from None
