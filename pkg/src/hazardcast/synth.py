"""Synthetic weather and event CSVs with a known generative law.

Each feature j carries a latent seasonal signal
    z_j(d) = sin(2*pi*d/365.25 + phase_j) + e_j(d)
with AR(1) noise e (so recent observations stay informative about the near
future), written to the weather CSV as offset_j + scale_j * z_j(d). Hazard h
is tied to one causal feature c(h) = h mod F: the number of hazard-h events
on day d is Poisson with rate
    exp(beta0 + beta1 * z_{c(h)}(d - lag)).
Every generated event clears the default severity filter. The full law is
written to a sidecar truth JSON so recovery experiments can check themselves.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hazards import HAZARDS

# raw storm-database type emitted per hazard; all map back through the
# default type map
RAW_TYPE = {
    "ExtremeCold": "Extreme Cold/Wind Chill",
    "Flood": "Flood",
    "Frost": "Frost/Freeze",
    "Hail": "Hail",
    "Heat": "Heat",
    "ExtremeRain": "Heavy Rain",
}

_BASE_NAMES = ("TMAX", "TMIN", "PRCP", "SNOW", "SNWD", "AWND")
_BASE_OFFSETS = (60.0, 42.0, 0.5, 1.0, 2.0, 8.0)
_BASE_SCALES = (20.0, 18.0, 0.8, 1.5, 2.5, 4.0)


@dataclass
class SynthConfig:
    seed: int = 0
    days: int = 3000
    features: int = 6
    county: str = "SYNTH"
    station: str = "SYN0"
    start: dt.date = dt.date(2010, 1, 1)
    beta0: float = -3.5
    beta1: float = 1.2
    lag: int = 3
    noise_sd: float = 0.6
    noise_rho: float = 0.85

    def __post_init__(self):
        if self.days < 400:
            raise ValueError(f"need at least 400 days, got {self.days}")
        if self.features < 1:
            raise ValueError("need at least one feature")
        if self.lag < 0:
            raise ValueError("lag must be nonnegative")


@dataclass
class SynthOutput:
    weather_csv: Path
    events_csv: Path
    truth_json: Path


def feature_names(count: int) -> list[str]:
    names = list(_BASE_NAMES[:count])
    names += [f"VAR{i + 1:02d}" for i in range(len(names), count)]
    return names


def _latent_signals(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """(days, features) latent z values driving both weather and events."""
    d = np.arange(config.days, dtype=np.float64)
    z = np.empty((config.days, config.features))
    innov_sd = config.noise_sd * np.sqrt(1.0 - config.noise_rho ** 2)
    for j in range(config.features):
        phase = 2.0 * np.pi * j / config.features
        noise = np.empty(config.days)
        noise[0] = rng.normal(0.0, config.noise_sd)
        innovations = rng.normal(0.0, innov_sd, size=config.days)
        for i in range(1, config.days):
            noise[i] = config.noise_rho * noise[i - 1] + innovations[i]
        z[:, j] = np.sin(2.0 * np.pi * d / 365.25 + phase) + noise
    return z


def causal_feature(hazard_idx: int, n_features: int) -> int:
    return hazard_idx % n_features


def generate(config: SynthConfig, out_dir) -> SynthOutput:
    """Write weather.csv, events.csv and truth.json; byte-identical per seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    names = feature_names(config.features)
    z = _latent_signals(config, rng)

    offsets = [(_BASE_OFFSETS[j] if j < len(_BASE_OFFSETS) else 10.0 * (j + 1))
               for j in range(config.features)]
    scales = [(_BASE_SCALES[j] if j < len(_BASE_SCALES) else 5.0)
              for j in range(config.features)]

    weather_path = out_dir / "weather.csv"
    lines = ["STATION,DATE," + ",".join(names)]
    for i in range(config.days):
        day = config.start + dt.timedelta(days=i)
        cells = [f"{offsets[j] + scales[j] * z[i, j]:.3f}" for j in range(config.features)]
        lines.append(f"{config.station},{day.isoformat()}," + ",".join(cells))
    weather_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    events_path = out_dir / "events.csv"
    lines = ["BEGIN_DATE,END_DATE,EVENT_TYPE,CZ_NAME,DAMAGE_PROPERTY,DAMAGE_CROPS,"
             "INJURIES_DIRECT,DEATHS_DIRECT"]
    for h, hazard in enumerate(HAZARDS):
        c = causal_feature(h, config.features)
        for i in range(config.days):
            driver = z[max(i - config.lag, 0), c]
            rate = np.exp(config.beta0 + config.beta1 * driver)
            for _ in range(rng.poisson(rate)):
                day = (config.start + dt.timedelta(days=i)).strftime("%m/%d/%Y")
                lines.append(f"{day},{day},{RAW_TYPE[hazard]},{config.county},"
                             f"25.00K,0.00K,0,0")
    events_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    truth_path = out_dir / "truth.json"
    truth = {
        "seed": config.seed,
        "days": config.days,
        "county": config.county,
        "start": config.start.isoformat(),
        "noise_sd": config.noise_sd,
        "noise_rho": config.noise_rho,
        "hazards": {
            hazard: {
                "feature": names[causal_feature(h, config.features)],
                "beta0": config.beta0,
                "beta1": config.beta1,
                "lag": config.lag,
            }
            for h, hazard in enumerate(HAZARDS)
        },
    }
    truth_path.write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    return SynthOutput(weather_path, events_path, truth_path)
