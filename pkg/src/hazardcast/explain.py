"""Timestep- and feature-level Shapley attributions, plus their global
seasonal aggregation.

Every local explanation perturbs one window of one instance: coalition
players are groups of window cells (whole timesteps, whole feature columns,
or top-ranked cells plus residual groups), and a player that is out of the
coalition has its cells replaced by the baseline (training-mean) window.
The explained scalar is the predicted rate of one hazard, so attribution
sums read as expected events attributable.

Old timesteps whose grouped contribution is below tolerance are coalesced
into a single player before the per-timestep game (pruning). The global
view sums absolute attributions of selected critical timesteps into a
feature-by-calendar-month matrix across many instances.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .hazards import HAZARDS, hazard_index
from .ingest import CountyDayTable, NotFittedError

EXACT_PLAYER_LIMIT = 12
DEFAULT_KERNEL_SAMPLES = 2000
PRUNE_TOLERANCE_REL = 0.05
PRUNE_TOLERANCE_FLOOR = 1e-6
MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
          "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")

_GAME_CHUNK = 512


# ---------------------------------------------------------------------------
# Shapley values for an arbitrary coalition game


def shapley(value_fn, n_players: int, mode: str = "exact",
            nsamples: int | None = None, seed: int = 0) -> np.ndarray:
    """Shapley values of a coalition game given as a batched value function.

    ``value_fn`` maps a boolean (K, n_players) coalition matrix to K game
    values. Exact mode enumerates all coalitions (n_players <= 12). Kernel
    mode solves the weighted least-squares formulation with the efficiency
    constraint eliminated exactly, so attributions always sum to
    v(all) - v(none); when ``nsamples`` covers the full coalition set the
    regression is solved over the complete enumeration with the analytic
    kernel weights and reproduces the exact values.
    """
    M = n_players
    if M < 1:
        raise ValueError("game needs at least one player")
    if mode == "exact":
        return _shapley_exact(value_fn, M)
    if mode == "kernel":
        nsamples = DEFAULT_KERNEL_SAMPLES if nsamples is None else nsamples
        if nsamples < M + 2:
            raise ValueError(f"kernel mode needs nsamples >= {M + 2}, got {nsamples}")
        return _shapley_kernel(value_fn, M, nsamples, seed)
    raise ValueError(f"mode must be 'exact' or 'kernel', got {mode!r}")


def _all_masks(M: int) -> np.ndarray:
    return ((np.arange(2 ** M)[:, None] >> np.arange(M)) & 1).astype(bool)


def _shapley_exact(value_fn, M: int) -> np.ndarray:
    if M > EXACT_PLAYER_LIMIT:
        raise ValueError(f"exact mode enumerates 2^M coalitions; M={M} exceeds the "
                         f"limit of {EXACT_PLAYER_LIMIT}")
    masks = _all_masks(M)
    values = np.asarray(value_fn(masks), dtype=np.float64)
    sizes = masks.sum(axis=1)
    fact = np.array([math.factorial(k) for k in range(M + 1)], dtype=np.float64)
    weight = fact[np.arange(M)] * fact[M - 1 - np.arange(M)] / fact[M]  # by |S|

    ints = np.arange(2 ** M)
    phi = np.zeros(M)
    for i in range(M):
        bit = 1 << i
        without = ints[(ints & bit) == 0]
        phi[i] = np.sum(weight[sizes[without]] * (values[without | bit] - values[without]))
    return phi


def _kernel_weights(M: int, sizes: np.ndarray) -> np.ndarray:
    comb = np.array([math.comb(M, int(s)) for s in sizes], dtype=np.float64)
    return (M - 1) / (comb * sizes * (M - sizes))


def _shapley_kernel(value_fn, M: int, nsamples: int, seed: int) -> np.ndarray:
    v_none = float(np.asarray(value_fn(np.zeros((1, M), dtype=bool)))[0])
    v_all = float(np.asarray(value_fn(np.ones((1, M), dtype=bool)))[0])
    delta = v_all - v_none
    if M == 1:
        return np.array([delta])

    n_nontrivial = 2 ** M - 2
    if n_nontrivial <= nsamples:
        masks = _all_masks(M)[1:-1]
        weights = _kernel_weights(M, masks.sum(axis=1))
    else:
        rng = np.random.default_rng(seed)
        sizes = np.arange(1, M)
        p = (M - 1) / (sizes * (M - sizes))
        p /= p.sum()
        counts: dict[bytes, int] = {}
        drawn_sizes = rng.choice(sizes, size=nsamples, p=p)
        for s in drawn_sizes:
            members = rng.choice(M, size=int(s), replace=False)
            mask = np.zeros(M, dtype=bool)
            mask[members] = True
            key = mask.tobytes()
            counts[key] = counts.get(key, 0) + 1
        keys = sorted(counts)  # deterministic row order
        masks = np.stack([np.frombuffer(k, dtype=bool) for k in keys])
        weights = np.array([counts[k] for k in keys], dtype=np.float64)

    values = np.asarray(value_fn(masks), dtype=np.float64)

    # eliminate the last player through the efficiency constraint
    z = masks[:, :-1].astype(np.float64) - masks[:, -1:].astype(np.float64)
    y = values - v_none - masks[:, -1].astype(np.float64) * delta
    sw = np.sqrt(weights)
    phi_head, *_ = np.linalg.lstsq(z * sw[:, None], y * sw, rcond=None)
    return np.append(phi_head, delta - phi_head.sum())


# ---------------------------------------------------------------------------
# perturbation games over a window


def _resolve_hazard(hazard) -> tuple[int, str]:
    if isinstance(hazard, str):
        return hazard_index(hazard), hazard
    idx = int(hazard)
    name = HAZARDS[idx] if 0 <= idx < len(HAZARDS) else f"type_{idx}"
    return idx, name


def perturbation_game(model, window: np.ndarray, baseline: np.ndarray,
                      coverage: np.ndarray, hazard_idx: int):
    """Value function of the coalition game defined by a cell coverage.

    ``coverage`` is (M, L, F) boolean: which window cells each player owns.
    Off-coalition cells are replaced by the baseline window; the value is the
    model's predicted rate for the chosen hazard.
    """
    window = np.asarray(window, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    L, F = window.shape
    cov = coverage.reshape(coverage.shape[0], L * F).astype(np.float64)

    def value_fn(masks: np.ndarray) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.float64)
        out = np.empty(len(masks))
        for lo in range(0, len(masks), _GAME_CHUNK):
            chunk = masks[lo:lo + _GAME_CHUNK]
            on = (chunk @ cov) > 0
            windows = np.where(on.reshape(-1, L, F), window[None], baseline[None])
            out[lo:lo + len(chunk)] = model.predict_rates(windows)[:, hazard_idx]
        return out

    return value_fn


def _row_coverage(L: int, F: int, groups: list[np.ndarray]) -> np.ndarray:
    cov = np.zeros((len(groups), L, F), dtype=bool)
    for j, rows in enumerate(groups):
        cov[j, rows, :] = True
    return cov


def baseline_window(table: CountyDayTable, length: int,
                    date_range: tuple[dt.date, dt.date] | None = None) -> np.ndarray:
    """The average-event baseline: per-feature mean of standardized training
    rows, replicated to a full window.

    Defaults to the standardizer's fit range, over which the mean is zero up
    to float error; it is computed rather than assumed so sub-range baselines
    stay correct.
    """
    if table.standardizer is None:
        raise NotFittedError("baseline_window needs a standardized table")
    rows = table.features
    date_range = date_range or table.standardizer.train_range
    if date_range is not None:
        lo, hi = date_range
        mask = np.array([lo <= d <= hi for d in table.dates])
        if not mask.any():
            raise ValueError(f"no table rows inside the baseline range {lo}..{hi}")
        rows = rows[mask]
    return np.tile(rows.mean(axis=0), (length, 1))


def prune_events(model, window: np.ndarray, baseline: np.ndarray, hazard,
                 tolerance: float | None = None) -> int:
    """Largest prefix length whose grouped Shapley contribution is within
    tolerance of irrelevant; 0 when no prefix qualifies.

    For each candidate split t the two-player game (rows < t) vs (rows >= t)
    is solved exactly. Default tolerance is 5% of |f(x) - f(baseline)| with
    an absolute floor of 1e-6.
    """
    hazard_idx, _ = _resolve_hazard(hazard)
    window = np.asarray(window, dtype=np.float64)
    L, F = window.shape
    if L < 2:
        return 0

    # batch all candidate evaluations: prefix-only and suffix-only per t
    candidates = list(range(1, L))
    windows = np.empty((2 * len(candidates) + 2, L, F))
    for j, t in enumerate(candidates):
        pre = baseline.copy()
        pre[:t] = window[:t]
        suf = baseline.copy()
        suf[t:] = window[t:]
        windows[2 * j] = pre
        windows[2 * j + 1] = suf
    windows[-2] = window
    windows[-1] = baseline
    rates = []
    for lo in range(0, len(windows), _GAME_CHUNK):
        rates.append(model.predict_rates(windows[lo:lo + _GAME_CHUNK])[:, hazard_idx])
    rates = np.concatenate(rates)
    fx, base = rates[-2], rates[-1]

    if tolerance is None:
        tolerance = max(PRUNE_TOLERANCE_REL * abs(fx - base), PRUNE_TOLERANCE_FLOOR)
    for j in reversed(range(len(candidates))):
        v_pre, v_suf = rates[2 * j], rates[2 * j + 1]
        phi_prefix = 0.5 * ((v_pre - base) + (fx - v_suf))
        if abs(phi_prefix) <= tolerance:
            return candidates[j]
    return 0


def _auto_mode(n_players: int, mode: str | None) -> str:
    if mode is not None:
        return mode
    return "exact" if n_players <= EXACT_PLAYER_LIMIT else "kernel"


@dataclass
class EventAttribution:
    """Per-timestep Shapley values; rows before ``prune_index`` act as one
    player whose value is stored once in ``phi_prefix``."""

    hazard: str
    prune_index: int
    phi: np.ndarray               # (L - prune_index,), aligned to rows prune_index..L-1
    phi_prefix: float | None
    base_value: float
    fx: float
    mode: str

    @property
    def total(self) -> float:
        return float(self.phi.sum() + (self.phi_prefix or 0.0))


@dataclass
class FeatureAttribution:
    hazard: str
    phi: np.ndarray               # (F,)
    base_value: float
    fx: float
    mode: str


def explain_events(model, window: np.ndarray, baseline: np.ndarray, hazard,
                   prune_index: int = 0, nsamples: int = DEFAULT_KERNEL_SAMPLES,
                   seed: int = 0, mode: str | None = None) -> EventAttribution:
    """Shapley values over timesteps: the pruned prefix is one player, every
    remaining row its own player; off-coalition rows become baseline rows."""
    hazard_idx, hazard_name = _resolve_hazard(hazard)
    window = np.asarray(window, dtype=np.float64)
    L, F = window.shape
    if not 0 <= prune_index < L:
        raise ValueError(f"prune_index must be in [0, {L}), got {prune_index}")

    groups: list[np.ndarray] = []
    if prune_index > 0:
        groups.append(np.arange(prune_index))
    groups.extend(np.array([t]) for t in range(prune_index, L))
    coverage = _row_coverage(L, F, groups)
    value_fn = perturbation_game(model, window, baseline, coverage, hazard_idx)

    resolved = _auto_mode(len(groups), mode)
    phi = shapley(value_fn, len(groups), mode=resolved, nsamples=nsamples, seed=seed)
    base_value = float(value_fn(np.zeros((1, len(groups)), dtype=bool))[0])
    fx = float(value_fn(np.ones((1, len(groups)), dtype=bool))[0])

    if prune_index > 0:
        return EventAttribution(hazard_name, prune_index, phi[1:], float(phi[0]),
                                base_value, fx, resolved)
    return EventAttribution(hazard_name, 0, phi, None, base_value, fx, resolved)


def explain_features(model, window: np.ndarray, baseline: np.ndarray, hazard,
                     nsamples: int = DEFAULT_KERNEL_SAMPLES, seed: int = 0,
                     mode: str | None = None) -> FeatureAttribution:
    """Shapley values over feature columns; off-coalition columns become the
    baseline column over the whole window."""
    hazard_idx, hazard_name = _resolve_hazard(hazard)
    window = np.asarray(window, dtype=np.float64)
    L, F = window.shape
    coverage = np.zeros((F, L, F), dtype=bool)
    for f in range(F):
        coverage[f, :, f] = True
    value_fn = perturbation_game(model, window, baseline, coverage, hazard_idx)

    resolved = _auto_mode(F, mode)
    phi = shapley(value_fn, F, mode=resolved, nsamples=nsamples, seed=seed)
    base_value = float(value_fn(np.zeros((1, F), dtype=bool))[0])
    fx = float(value_fn(np.ones((1, F), dtype=bool))[0])
    return FeatureAttribution(hazard_name, phi, base_value, fx, resolved)


@dataclass
class AttributionMatrix:
    """Signed cell attributions for one prediction and one hazard.

    Residual groups are spread uniformly over their member cells in
    ``values`` for display but stored distinctly in ``player_values``;
    rows before ``prune_index`` all carry the same spread pseudo-row.
    """

    values: np.ndarray                 # (L, F)
    prune_index: int
    hazard: str
    base_value: float
    fx: float
    feature_names: list[str]
    dates: list[dt.date] | None
    player_values: dict[str, float]
    efficiency_gap: float
    mode: str
    extra: dict | None = field(default=None, repr=False)

    def save(self, path, extra: dict | None = None) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["date", *self.feature_names])
            for t in range(len(self.values)):
                label = self.dates[t].isoformat() if self.dates else f"t{t}"
                writer.writerow([label, *[repr(float(v)) for v in self.values[t]]])
        sidecar = {
            "hazard": self.hazard,
            "prune_index": self.prune_index,
            "base_value": self.base_value,
            "fx": self.fx,
            "efficiency_gap": self.efficiency_gap,
            "mode": self.mode,
            "player_values": self.player_values,
            "extra": extra if extra is not None else self.extra,
        }
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AttributionMatrix":
        path = Path(path)
        meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        dates: list[dt.date] | None = []
        names: list[str] = []
        rows = []
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            names = header[1:]
            for row in reader:
                try:
                    dates.append(dt.date.fromisoformat(row[0]))
                except ValueError:
                    dates = None
                rows.append([float(v) for v in row[1:]])
        return cls(np.asarray(rows), meta["prune_index"], meta["hazard"],
                   meta["base_value"], meta["fx"], names,
                   dates if dates else None, meta["player_values"],
                   meta["efficiency_gap"], meta["mode"], meta.get("extra"))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".json")


def explain_cells(model, window: np.ndarray, baseline: np.ndarray, hazard,
                  top_events: int = 3, top_features: int = 3, prune_index: int = 0,
                  event_attr: EventAttribution | None = None,
                  feature_attr: FeatureAttribution | None = None,
                  nsamples: int = DEFAULT_KERNEL_SAMPLES, seed: int = 0,
                  mode: str | None = None, dates: list[dt.date] | None = None,
                  feature_names: list[str] | None = None) -> AttributionMatrix:
    """Cell-level Shapley values on the top timesteps and features.

    Players: one per (top timestep, top feature) cell, plus residual groups
    for the other cells of the top timesteps, the other cells of the top
    features, and the remainder. When pruning is active the coalesced prefix
    joins the game as one more player. Efficiency holds over the full set.
    """
    hazard_idx, hazard_name = _resolve_hazard(hazard)
    window = np.asarray(window, dtype=np.float64)
    L, F = window.shape
    available_rows = L - prune_index
    if not 1 <= top_events <= available_rows:
        raise ValueError(f"top_events must be in [1, {available_rows}] "
                         f"(rows after pruning), got {top_events}")
    if not 1 <= top_features <= F:
        raise ValueError(f"top_features must be in [1, {F}], got {top_features}")

    if event_attr is None:
        event_attr = explain_events(model, window, baseline, hazard,
                                    prune_index=prune_index, nsamples=nsamples, seed=seed)
    if feature_attr is None:
        feature_attr = explain_features(model, window, baseline, hazard,
                                        nsamples=nsamples, seed=seed)

    rows_by_weight = sorted(range(prune_index, L),
                            key=lambda t: (-abs(event_attr.phi[t - prune_index]), t))
    top_rows = sorted(rows_by_weight[:top_events])
    cols_by_weight = sorted(range(F), key=lambda f: (-abs(feature_attr.phi[f]), f))
    top_cols = sorted(cols_by_weight[:top_features])

    top_row_set, top_col_set = set(top_rows), set(top_cols)
    other_rows = [t for t in range(prune_index, L) if t not in top_row_set]
    other_cols = [f for f in range(F) if f not in top_col_set]

    names: list[str] = []
    coverage_list: list[np.ndarray] = []

    def add_player(name: str, cells: np.ndarray) -> None:
        if cells.any():
            names.append(name)
            coverage_list.append(cells)

    for r in top_rows:
        for c in top_cols:
            cells = np.zeros((L, F), dtype=bool)
            cells[r, c] = True
            add_player(f"cell:{r}:{c}", cells)
    grid = np.zeros((L, F), dtype=bool)
    if other_cols:
        rest = grid.copy()
        rest[np.ix_(top_rows, other_cols)] = True
        add_player("top_rows_rest", rest)
    if other_rows:
        rest = grid.copy()
        rest[np.ix_(other_rows, top_cols)] = True
        add_player("top_cols_rest", rest)
    if other_rows and other_cols:
        rest = grid.copy()
        rest[np.ix_(other_rows, other_cols)] = True
        add_player("remainder", rest)
    if prune_index > 0:
        pruned = grid.copy()
        pruned[:prune_index, :] = True
        add_player("pruned", pruned)

    coverage = np.stack(coverage_list)
    value_fn = perturbation_game(model, window, baseline, coverage, hazard_idx)
    resolved = _auto_mode(len(names), mode)
    phi = shapley(value_fn, len(names), mode=resolved, nsamples=nsamples, seed=seed)
    base_value = float(value_fn(np.zeros((1, len(names)), dtype=bool))[0])
    fx = float(value_fn(np.ones((1, len(names)), dtype=bool))[0])

    values = np.zeros((L, F))
    player_values = {}
    for name, cells, p in zip(names, coverage_list, phi):
        player_values[name] = float(p)
        values[cells] = p / cells.sum()   # cells hold phi; groups spread for display

    gap = abs(phi.sum() - (fx - base_value))
    return AttributionMatrix(values, prune_index, hazard_name, base_value, fx,
                             list(feature_names) if feature_names else
                             [f"F{j}" for j in range(F)],
                             list(dates) if dates else None, player_values, gap, resolved)


def select_segments(attr: AttributionMatrix | None = None,
                    attention: np.ndarray | None = None,
                    method: str = "shap_magnitude", k: int = 5,
                    threshold: float = 1.5,
                    prune_index: int | None = None) -> list[int]:
    """Critical timestep indices, by attribution magnitude or attention weight.

    ``shap_magnitude``: the k unpruned rows with the largest summed absolute
    attribution. ``attention``: rows whose weight reaches threshold/L. Ties
    break toward earlier timesteps; an empty attention selection falls back
    to the single highest-weight row.
    """
    if method == "shap_magnitude":
        if attr is None:
            raise ValueError("shap_magnitude selection needs an attribution matrix")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        start = attr.prune_index if prune_index is None else prune_index
        L = len(attr.values)
        scores = np.abs(attr.values).sum(axis=1)
        order = sorted(range(start, L), key=lambda t: (-scores[t], t))
        return sorted(order[:min(k, len(order))])
    if method == "attention":
        if attention is None:
            raise ValueError("attention selection needs attention weights")
        alpha = np.asarray(attention, dtype=np.float64).reshape(-1)
        L = len(alpha)
        start = prune_index or 0
        selected = [t for t in range(start, L) if alpha[t] >= threshold / L]
        if not selected:
            best = max(range(start, L), key=lambda t: (alpha[t], -t))
            selected = [best]
        return selected
    raise ValueError(f"method must be 'shap_magnitude' or 'attention', got {method!r}")


@dataclass
class GlobalImportanceMatrix:
    """Feature-by-calendar-month sums of absolute attributions over the
    selected critical timesteps of many instances."""

    values: np.ndarray            # (F, 12), nonnegative
    counts: np.ndarray            # (12,) instances contributing per month
    feature_names: list[str]
    selection_method: str
    params: dict

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["feature", *MONTHS])
            for name, row in zip(self.feature_names, self.values):
                writer.writerow([name, *[repr(float(v)) for v in row]])
        sidecar = {
            "selection_method": self.selection_method,
            "params": self.params,
            "counts": [int(c) for c in self.counts],
        }
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GlobalImportanceMatrix":
        path = Path(path)
        meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        names, rows = [], []
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                names.append(row[0])
                rows.append([float(v) for v in row[1:]])
        return cls(np.asarray(rows), np.asarray(meta["counts"], dtype=np.int64),
                   names, meta["selection_method"], meta["params"])


def global_aggregate(instances: list[tuple[AttributionMatrix, list[int]]],
                     selection_method: str = "shap_magnitude",
                     params: dict | None = None) -> GlobalImportanceMatrix:
    """Sum |attribution| of each instance's selected timesteps into feature
    by calendar-month buckets; counts track contributing instances per month.

    Stored values are raw sums; any per-count normalization is a rendering
    choice, never applied here.
    """
    if not instances:
        raise ValueError("global_aggregate needs at least one instance")
    feature_names = list(instances[0][0].feature_names)
    F = len(feature_names)
    # exactly-rounded bucket sums (math.fsum) so the result is independent
    # of instance order
    contributions: dict[int, list[np.ndarray]] = {m: [] for m in range(12)}
    counts = np.zeros(12, dtype=np.int64)
    for attr, selection in instances:
        if list(attr.feature_names) != feature_names:
            raise ValueError(f"feature names differ across instances: "
                             f"{attr.feature_names} vs {feature_names}")
        if attr.dates is None:
            raise ValueError("instances need per-row dates for month bucketing")
        months_hit = set()
        for t in selection:
            m = attr.dates[t].month - 1
            contributions[m].append(np.abs(attr.values[t, :]))
            months_hit.add(m)
        for m in months_hit:
            counts[m] += 1
    values = np.zeros((F, 12))
    for m, rows in contributions.items():
        for f in range(F):
            values[f, m] = math.fsum(row[f] for row in rows)
    return GlobalImportanceMatrix(values, counts, feature_names, selection_method,
                                  params or {})


def explain_instance(model, window: np.ndarray, baseline: np.ndarray, hazard,
                     *, top_events: int = 3, top_features: int = 3,
                     tolerance: float | None = None,
                     nsamples: int = DEFAULT_KERNEL_SAMPLES, seed: int = 0,
                     dates: list[dt.date] | None = None,
                     feature_names: list[str] | None = None) -> AttributionMatrix:
    """The full local pipeline: prune, then cell-level attribution built on
    the event- and feature-level rankings."""
    prune_index = prune_events(model, window, baseline, hazard, tolerance=tolerance)
    top_events = min(top_events, np.asarray(window).shape[0] - prune_index)
    return explain_cells(model, window, baseline, hazard, top_events=top_events,
                         top_features=top_features, prune_index=prune_index,
                         nsamples=nsamples, seed=seed, dates=dates,
                         feature_names=feature_names)


def instance_seed(base_seed: int, instance_index: int, hazard_idx: int) -> int:
    """Deterministic per-(instance, hazard) seed for coalition sampling."""
    return int(np.random.SeedSequence([base_seed, instance_index, hazard_idx])
               .generate_state(1)[0])
