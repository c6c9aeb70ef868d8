"""Nearest-history retrieval: match today's conditions to an archived day.

Each archived day is summarized at its start by normalized tank levels, the
normalized stored network volume, and the normalized total demand ahead; the
recommendation is the recorded schedule of the closest archive day under plain
Euclidean distance. Ties go to the most recent day.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError, ValidationError
from .history import HistoryArchive
from .network import DT_HOURS, DemandSet, NetworkTopology


@dataclass(frozen=True)
class QueryResult:
    day: int
    distance: float
    schedule: np.ndarray  # (96, n_stations) recorded actions of the matched day


@dataclass
class QueryIndex:
    """Archived day features with their normalization bounds and schedules."""

    feature_names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray
    normalized: np.ndarray  # (n_days, n_features)
    days: tuple[int, ...]
    schedules: np.ndarray  # (n_days, 96, n_stations)
    surface_areas: np.ndarray
    per_zone_demand: bool

    @property
    def n_days(self) -> int:
        return len(self.days)


def _raw_features(
    levels: np.ndarray,
    demand_total: np.ndarray,
    surface_areas: np.ndarray,
) -> np.ndarray:
    volume = float(np.dot(levels, surface_areas))
    return np.concatenate([levels, [volume], demand_total])


def _demand_feature(
    day_demands: np.ndarray, per_zone: bool, dt_hours: float
) -> np.ndarray:
    """Forecast volume ahead: one total by default, per-zone when configured."""
    per_zone_volume = day_demands.sum(axis=0) * dt_hours  # (n_zones,)
    if per_zone:
        return per_zone_volume
    return np.array([per_zone_volume.sum()])


def build_index(
    topology: NetworkTopology,
    archive: HistoryArchive,
    per_zone_demand: bool = False,
) -> QueryIndex:
    """Summarize every archived day at t=0 and min-max normalize the columns.

    Demand forecasts come from the archive's own recorded realizations.
    """
    archive.validate()
    if archive.n_days < 2:
        raise ValidationError("query index needs at least two archived days")
    areas = topology.areas_array()
    n_tanks = topology.n_tanks

    rows = []
    schedules = []
    for pos in range(archive.n_days):
        levels = archive.day_levels(pos)[0]
        if levels.shape[0] != n_tanks:
            raise ValidationError("archive tank count does not match topology")
        demand = _demand_feature(
            archive.day_demands(pos), per_zone_demand, topology.dt_hours
        )
        rows.append(_raw_features(levels, demand, areas))
        schedules.append(archive.day_actions(pos))
    raw = np.array(rows)

    names = (
        tuple(f"level_{i + 1}" for i in range(n_tanks))
        + ("network_volume",)
        + (
            tuple(f"demand_zone_{k + 1}" for k in range(raw.shape[1] - n_tanks - 1))
            if per_zone_demand
            else ("demand_total",)
        )
    )
    mins = raw.min(axis=0)
    maxs = raw.max(axis=0)
    flat = maxs <= mins
    if np.any(flat):
        bad = names[int(np.argmax(flat))]
        raise ValidationError(
            f"feature {bad!r} is constant across the archive; "
            "distances would be undefined"
        )
    normalized = (raw - mins) / (maxs - mins)
    return QueryIndex(
        feature_names=names,
        mins=mins,
        maxs=maxs,
        normalized=normalized,
        days=archive.days,
        schedules=np.array(schedules),
        surface_areas=areas,
        per_zone_demand=per_zone_demand,
    )


def recommend(
    index: QueryIndex,
    levels: np.ndarray,
    demand_forecast: DemandSet | np.ndarray,
    dt_hours: float = DT_HOURS,
) -> QueryResult:
    """Nearest archived day for the given start levels and demand forecast.

    Query features are normalized with the index bounds and clipped into
    [0, 1] before the linear scan; exact distance ties resolve to the most
    recent (latest) day.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.shape != (len(index.surface_areas),):
        raise ValidationError("query levels shape does not match the index")
    if isinstance(demand_forecast, DemandSet):
        day_demands = demand_forecast.as_array().T  # (96, n_zones)
    else:
        day_demands = np.asarray(demand_forecast, dtype=float)
    demand = _demand_feature(day_demands, index.per_zone_demand, dt_hours)
    raw = _raw_features(levels, demand, index.surface_areas)
    if raw.shape != index.mins.shape:
        raise ValidationError("query feature width does not match the index")

    query = np.clip((raw - index.mins) / (index.maxs - index.mins), 0.0, 1.0)
    dists = np.sqrt(((index.normalized - query) ** 2).sum(axis=1))

    best = 0
    for pos in range(1, index.n_days):
        # <= lets later days displace equal-distance earlier ones.
        if dists[pos] <= dists[best]:
            best = pos
    return QueryResult(
        day=index.days[best],
        distance=float(dists[best]),
        schedule=index.schedules[best].copy(),
    )


class QueryRecommender:
    """Retrieval-style wrapper: fit on an archive, recommend for a query."""

    def __init__(self, per_zone_demand: bool = False):
        self.per_zone_demand = per_zone_demand
        self.index_: QueryIndex | None = None

    def fit(
        self, topology: NetworkTopology, archive: HistoryArchive
    ) -> "QueryRecommender":
        self.index_ = build_index(topology, archive, self.per_zone_demand)
        return self

    def recommend(
        self, levels: np.ndarray, demand_forecast: DemandSet | np.ndarray
    ) -> QueryResult:
        if self.index_ is None:
            raise ValidationError("fit the recommender before querying")
        return recommend(self.index_, levels, demand_forecast)


# ----------------------------------------------------------------------------
# JSON round-trip


def index_to_dict(index: QueryIndex) -> dict:
    return {
        "feature_names": list(index.feature_names),
        "mins": index.mins.tolist(),
        "maxs": index.maxs.tolist(),
        "normalized": index.normalized.tolist(),
        "days": list(index.days),
        "schedules": index.schedules.tolist(),
        "surface_areas": index.surface_areas.tolist(),
        "per_zone_demand": index.per_zone_demand,
    }


def index_from_dict(obj: dict) -> QueryIndex:
    try:
        return QueryIndex(
            feature_names=tuple(obj["feature_names"]),
            mins=np.asarray(obj["mins"], dtype=float),
            maxs=np.asarray(obj["maxs"], dtype=float),
            normalized=np.asarray(obj["normalized"], dtype=float),
            days=tuple(int(d) for d in obj["days"]),
            schedules=np.asarray(obj["schedules"], dtype=float),
            surface_areas=np.asarray(obj["surface_areas"], dtype=float),
            per_zone_demand=bool(obj["per_zone_demand"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"query index document: {exc}") from None


def save_index(index: QueryIndex, path: str | Path) -> None:
    Path(path).write_text(json.dumps(index_to_dict(index)) + "\n")


def load_index(path: str | Path) -> QueryIndex:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return index_from_dict(obj)
