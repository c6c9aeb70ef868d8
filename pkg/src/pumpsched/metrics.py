"""Violation, cost, and comparison metrics.

All boundary metrics evaluate states t=1..96: the initial state is given, not
controlled, so it never counts against a schedule.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .network import DT_HOURS, STEPS_PER_DAY
from .simulate import Trajectory

Bounds = tuple[np.ndarray, np.ndarray]

_MAPE_FLOOR = 1e-6


def _exceedance(levels: np.ndarray, bounds: Bounds) -> np.ndarray:
    """Distance to the nearest permissible boundary, zero inside the band."""
    lb, ub = bounds
    return np.maximum(0.0, np.maximum(lb - levels, levels - ub))


def _state_slice(first_state: int, last_state: int | None) -> tuple[int, int]:
    last = STEPS_PER_DAY if last_state is None else last_state
    if not (1 <= first_state <= last <= STEPS_PER_DAY):
        raise ValidationError(
            f"state range [{first_state}, {last}] must lie within [1, {STEPS_PER_DAY}]"
        )
    return first_state, last


def area_outside_boundary(
    traj: Trajectory,
    bounds: Bounds,
    first_state: int = 1,
    last_state: int | None = None,
    dt_hours: float = DT_HOURS,
) -> float:
    """Integrated out-of-band level distance, in metre-hours.

    Optional state range restricts the integral to a sub-day window; the
    default covers every controlled state.
    """
    first, last = _state_slice(first_state, last_state)
    exceed = _exceedance(traj.states[first : last + 1], bounds)
    return float(exceed.sum() * dt_hours)


def violation_count(
    traj: Trajectory,
    bounds: Bounds,
    first_state: int = 1,
    last_state: int | None = None,
) -> int:
    """Number of (tank, step) pairs out of bounds."""
    first, last = _state_slice(first_state, last_state)
    exceed = _exceedance(traj.states[first : last + 1], bounds)
    return int(np.count_nonzero(exceed > 0.0))


def episode_cost(traj: Trajectory) -> float:
    """Total tariff-weighted energy cost of the day."""
    return float(traj.costs.sum())


def mape(sim: Trajectory, ref: Trajectory) -> tuple[np.ndarray, float]:
    """Mean absolute percentage error of levels, per tank and overall.

    Evaluated on states t=1..96; denominators are floored at 1e-6 to keep
    near-empty reference tanks from exploding the ratio.
    """
    if sim.states.shape != ref.states.shape:
        raise ValidationError(
            f"trajectory shapes differ: {sim.states.shape} vs {ref.states.shape}"
        )
    s = sim.states[1:]
    r = ref.states[1:]
    denom = np.maximum(np.abs(r), _MAPE_FLOOR)
    per_tank = np.mean(np.abs(s - r) / denom, axis=0) * 100.0
    return per_tank, float(per_tank.mean())


@dataclass(frozen=True)
class PoolResult:
    """Per-episode metrics for one policy evaluated over an episode pool."""

    label: str
    episode_seeds: tuple[int, ...]
    areas: np.ndarray
    counts: np.ndarray
    costs: np.ndarray

    def __post_init__(self):
        n = len(self.episode_seeds)
        for name in ("areas", "counts", "costs"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValidationError(
                    f"pool result {self.label}: {name} must have one entry per episode"
                )
            object.__setattr__(self, name, arr)

    @property
    def mean_area(self) -> float:
        return float(self.areas.mean())

    @property
    def mean_count(self) -> float:
        return float(self.counts.mean())

    @property
    def mean_cost(self) -> float:
        return float(self.costs.mean())


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    mean_area: float
    mean_count: float
    mean_cost: float
    area_improvement_pct: float | None
    count_improvement_pct: float | None
    cost_delta_pct: float | None


def compare(reference: PoolResult, others: list[PoolResult]) -> list[ComparisonRow]:
    """Comparison table against a reference row (reference listed first).

    Improvements are (reference - value) / reference; the cost column is a
    signed delta where negative means cheaper than the reference.
    """
    rows = [
        ComparisonRow(
            label=reference.label,
            mean_area=reference.mean_area,
            mean_count=reference.mean_count,
            mean_cost=reference.mean_cost,
            area_improvement_pct=0.0,
            count_improvement_pct=0.0,
            cost_delta_pct=0.0,
        )
    ]
    for result in others:
        if result.episode_seeds != reference.episode_seeds:
            raise ValidationError(
                f"pool mismatch: {result.label} was evaluated on different episodes "
                f"than {reference.label}"
            )
        rows.append(
            ComparisonRow(
                label=result.label,
                mean_area=result.mean_area,
                mean_count=result.mean_count,
                mean_cost=result.mean_cost,
                area_improvement_pct=_improvement(reference.mean_area, result.mean_area),
                count_improvement_pct=_improvement(
                    reference.mean_count, result.mean_count
                ),
                cost_delta_pct=_delta(reference.mean_cost, result.mean_cost),
            )
        )
    return rows


def _improvement(ref: float, value: float) -> float | None:
    if ref == 0.0:
        return None
    return (ref - value) / ref * 100.0


def _delta(ref: float, value: float) -> float | None:
    if ref == 0.0:
        return None
    return (value - ref) / ref * 100.0


_COMPARISON_FIELDS = [
    "label",
    "mean_area",
    "mean_count",
    "mean_cost",
    "area_improvement_pct",
    "count_improvement_pct",
    "cost_delta_pct",
]


def comparison_to_dicts(rows: list[ComparisonRow]) -> list[dict]:
    return [{f: getattr(row, f) for f in _COMPARISON_FIELDS} for row in rows]


def save_comparison_csv(rows: list[ComparisonRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COMPARISON_FIELDS)
        for row in rows:
            writer.writerow(
                [
                    row.label,
                    repr(row.mean_area),
                    repr(row.mean_count),
                    repr(row.mean_cost),
                    "" if row.area_improvement_pct is None else repr(row.area_improvement_pct),
                    "" if row.count_improvement_pct is None else repr(row.count_improvement_pct),
                    "" if row.cost_delta_pct is None else repr(row.cost_delta_pct),
                ]
            )


def save_comparison_json(rows: list[ComparisonRow], path: str | Path) -> None:
    Path(path).write_text(json.dumps(comparison_to_dicts(rows), indent=2) + "\n")
