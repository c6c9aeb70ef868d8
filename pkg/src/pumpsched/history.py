"""Operating history: a hysteresis controller and the archive it produces.

Each station watches its primary destination tank and runs at a fixed duty
speed below a trigger level, coasting off above a release level. Margins sit
well inside the operational band when perfect; a seeded imperfection knob
shifts them day by day so a realistic share of archive days contains boundary
violations.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError, ValidationError
from .network import (
    STEPS_PER_DAY,
    DemandSet,
    NetworkTopology,
    demands_from_rng,
)
from .simulate import SystemState, Trajectory, step

DUTY_SPEED = 0.85
_PERFECT_MARGIN = 0.30  # fraction of the band kept clear of each boundary
_MARGIN_SWING = 0.55
_MARGIN_FLOOR = -0.08
_MARGIN_CEIL = 0.45

# Calibrated so roughly 30% of archive days on default worlds contain at
# least one violation; see generate_history.
DEFAULT_IMPERFECTION = 0.57


@dataclass(frozen=True)
class HysteresisMargins:
    """Per-station trigger (pump on below) and release (pump off above)."""

    triggers: np.ndarray
    releases: np.ndarray


def margins_for(
    topology: NetworkTopology,
    imperfection: float,
    rng: np.random.Generator | None = None,
) -> HysteresisMargins:
    """Draw per-station margins; imperfection 0 means perfectly placed."""
    if not (0.0 <= imperfection <= 1.0):
        raise ValidationError("imperfection must lie in [0, 1]")
    n_s = topology.n_stations
    if imperfection == 0.0 or rng is None:
        trig_off = np.full(n_s, _PERFECT_MARGIN)
        rel_off = np.full(n_s, _PERFECT_MARGIN)
    else:
        trig_off = np.clip(
            _PERFECT_MARGIN + imperfection * _MARGIN_SWING * rng.uniform(-1, 1, n_s),
            _MARGIN_FLOOR,
            _MARGIN_CEIL,
        )
        rel_off = np.clip(
            _PERFECT_MARGIN + imperfection * _MARGIN_SWING * rng.uniform(-1, 1, n_s),
            _MARGIN_FLOOR,
            _MARGIN_CEIL,
        )
    triggers = np.empty(n_s)
    releases = np.empty(n_s)
    for j, station in enumerate(topology.stations):
        tank = topology.tanks[topology.tank_index(station.primary_tank())]
        band = tank.upper_bound - tank.lower_bound
        triggers[j] = tank.lower_bound + band * trig_off[j]
        releases[j] = tank.upper_bound - band * rel_off[j]
        if releases[j] < triggers[j] + 0.05 * band:
            releases[j] = triggers[j] + 0.05 * band
    return HysteresisMargins(triggers=triggers, releases=releases)


class RuleBasedController:
    """Stateful hysteresis control: duty speed below trigger, off above release."""

    def __init__(
        self,
        topology: NetworkTopology,
        margins: HysteresisMargins,
        duty: float = DUTY_SPEED,
    ):
        if not (0.0 < duty <= 1.0):
            raise ValidationError("duty speed must lie in (0, 1]")
        self.topology = topology
        self.margins = margins
        self.duty = duty
        self._primary = np.array(
            [topology.tank_index(s.primary_tank()) for s in topology.stations]
        )
        self._on = np.zeros(topology.n_stations, dtype=bool)

    def reset(self, levels: np.ndarray) -> None:
        watched = np.asarray(levels, dtype=float)[self._primary]
        self._on = watched < (self.margins.triggers + self.margins.releases) / 2.0

    def act(self, levels: np.ndarray) -> np.ndarray:
        watched = np.asarray(levels, dtype=float)[self._primary]
        self._on = np.where(
            watched < self.margins.triggers,
            True,
            np.where(watched > self.margins.releases, False, self._on),
        )
        return np.where(self._on, self.duty, 0.0)


def run_controlled_day(
    topology: NetworkTopology,
    initial_levels: np.ndarray,
    controller,
    demands: DemandSet,
) -> Trajectory:
    """Closed-loop day under any object exposing reset(levels)/act(levels)."""
    controller.reset(np.asarray(initial_levels, dtype=float))
    zone_values = demands.as_array()
    tariff = topology.tariff.as_array()
    state = SystemState(t=0, levels=np.asarray(initial_levels, dtype=float))
    states = [state.levels]
    actions, flows, powers, energies, costs, clamps = [], [], [], [], [], []
    for t in range(STEPS_PER_DAY):
        action = controller.act(state.levels)
        state, out = step(topology, state, action, zone_values[:, t], tariff[t])
        states.append(state.levels)
        actions.append(action)
        flows.append(out.flows)
        powers.append(out.powers)
        energies.append(out.energies)
        costs.append(out.cost)
        clamps.append(out.clamp_flags)
    return Trajectory(
        states=np.array(states),
        actions=np.array(actions, dtype=float),
        flows=np.array(flows),
        powers=np.array(powers),
        energies=np.array(energies),
        costs=np.array(costs),
        clamp_flags=np.array(clamps),
        zone_demands=zone_values.T.copy(),
        tariff=tariff,
        level_caps=topology.caps_array(),
    )


@dataclass(frozen=True)
class HistorySnapshot:
    """One recorded step: pre-step levels plus what happened during the step."""

    day: int
    t: int
    levels: tuple[float, ...]
    actions: tuple[float, ...]
    powers: tuple[float, ...]
    demands: tuple[float, ...]
    tariff: float


@dataclass(frozen=True)
class HistoryArchive:
    """Recorded operating days, 96 snapshots each, in (day, t) order."""

    snapshots: tuple[HistorySnapshot, ...]

    def validate(self) -> None:
        if len(self.snapshots) % STEPS_PER_DAY != 0:
            raise ValidationError(
                f"archive holds {len(self.snapshots)} snapshots, "
                f"not a whole number of {STEPS_PER_DAY}-step days"
            )
        prev: tuple[int, int] | None = None
        for snap in self.snapshots:
            key = (snap.day, snap.t)
            if prev is not None and key <= prev:
                raise ValidationError(
                    f"archive ordering broken at day {snap.day} t {snap.t}"
                )
            prev = key
        for d in range(self.n_days):
            day_snaps = self.day_snapshots(d)
            if [s.t for s in day_snaps] != list(range(STEPS_PER_DAY)):
                raise ValidationError(
                    f"day {day_snaps[0].day} is incomplete or out of order"
                )

    @property
    def n_days(self) -> int:
        return len(self.snapshots) // STEPS_PER_DAY

    @property
    def days(self) -> tuple[int, ...]:
        return tuple(
            self.snapshots[d * STEPS_PER_DAY].day for d in range(self.n_days)
        )

    def day_snapshots(self, day_pos: int) -> tuple[HistorySnapshot, ...]:
        """Snapshots of the day at archive position ``day_pos`` (not day id)."""
        return self.snapshots[day_pos * STEPS_PER_DAY : (day_pos + 1) * STEPS_PER_DAY]

    def day_levels(self, day_pos: int) -> np.ndarray:
        return np.array([s.levels for s in self.day_snapshots(day_pos)])

    def day_actions(self, day_pos: int) -> np.ndarray:
        return np.array([s.actions for s in self.day_snapshots(day_pos)])

    def day_demands(self, day_pos: int) -> np.ndarray:
        """(96, n_zones) demand realization recorded for the day."""
        return np.array([s.demands for s in self.day_snapshots(day_pos)])


def generate_history(
    topology: NetworkTopology,
    days: int,
    seed: int,
    imperfection: float = DEFAULT_IMPERFECTION,
) -> HistoryArchive:
    """Simulate consecutive operating days under the hysteresis controller.

    Margins and demand noise are redrawn each day from a stream derived from
    the seed; levels carry over between days. Replaying a recorded day's
    actions through the simulator reproduces its recorded levels exactly.
    """
    if days <= 0:
        raise ValidationError("history must cover at least one day")
    snapshots: list[HistorySnapshot] = []
    levels = topology.initial_levels_array()
    for day in range(days):
        demand_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(0, day))
        )
        margin_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(1, day))
        )
        demands = demands_from_rng(topology, demand_rng)
        margins = margins_for(topology, imperfection, margin_rng)
        controller = RuleBasedController(topology, margins)
        traj = run_controlled_day(topology, levels, controller, demands)
        for t in range(STEPS_PER_DAY):
            snapshots.append(
                HistorySnapshot(
                    day=day,
                    t=t,
                    levels=tuple(float(v) for v in traj.states[t]),
                    actions=tuple(float(v) for v in traj.actions[t]),
                    powers=tuple(float(v) for v in traj.powers[t]),
                    demands=tuple(float(v) for v in traj.zone_demands[t]),
                    tariff=float(traj.tariff[t]),
                )
            )
        levels = traj.states[-1]
    archive = HistoryArchive(snapshots=tuple(snapshots))
    archive.validate()
    return archive


# ----------------------------------------------------------------------------
# CSV round-trip

_GROUP_RE = re.compile(r"^(level|action|power|demand)_(\d+)$")


def _header(n_tanks: int, n_stations: int, n_zones: int) -> list[str]:
    return (
        ["day", "t"]
        + [f"level_{i + 1}" for i in range(n_tanks)]
        + [f"action_{j + 1}" for j in range(n_stations)]
        + [f"power_{j + 1}" for j in range(n_stations)]
        + [f"demand_{k + 1}" for k in range(n_zones)]
        + ["tariff"]
    )


def save_history(archive: HistoryArchive, path: str | Path) -> None:
    archive.validate()
    if not archive.snapshots:
        raise ValidationError("cannot save an empty archive")
    first = archive.snapshots[0]
    header = _header(len(first.levels), len(first.actions), len(first.demands))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for snap in archive.snapshots:
            writer.writerow(
                [snap.day, snap.t]
                + [repr(v) for v in snap.levels]
                + [repr(v) for v in snap.actions]
                + [repr(v) for v in snap.powers]
                + [repr(v) for v in snap.demands]
                + [repr(snap.tariff)]
            )


def _group_counts(header: list[str]) -> tuple[int, int, int]:
    counts = {"level": 0, "action": 0, "power": 0, "demand": 0}
    for name in header:
        match = _GROUP_RE.match(name)
        if match:
            counts[match.group(1)] += 1
    if counts["action"] != counts["power"]:
        raise SchemaError("history header: action and power column counts differ")
    if min(counts["level"], counts["action"], counts["demand"]) == 0:
        raise SchemaError("history header: level/action/demand columns are required")
    return counts["level"], counts["action"], counts["demand"]


def load_history(path: str | Path) -> HistoryArchive:
    """Load and validate an operating archive from CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        n_tanks, n_stations, n_zones = _group_counts(header)
        expected = _header(n_tanks, n_stations, n_zones)
        if header != expected:
            raise SchemaError(
                f"{path}: header does not match the documented column order"
            )
        snapshots: list[HistorySnapshot] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise SchemaError(f"{path} row {lineno}: wrong column count")
            try:
                day = int(row[0])
                t = int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise SchemaError(f"{path} row {lineno}: {exc}") from None
            ofs = 0
            levels = tuple(values[ofs : ofs + n_tanks])
            ofs += n_tanks
            actions = tuple(values[ofs : ofs + n_stations])
            ofs += n_stations
            powers = tuple(values[ofs : ofs + n_stations])
            ofs += n_stations
            demands = tuple(values[ofs : ofs + n_zones])
            ofs += n_zones
            tariff = values[ofs]
            if any(not np.isfinite(v) for v in values):
                raise ValidationError(f"{path} row {lineno}: non-finite value")
            if any(a < 0 or a > 1 for a in actions):
                raise ValidationError(f"{path} row {lineno}: action outside [0, 1]")
            if any(d < 0 for d in demands):
                raise ValidationError(f"{path} row {lineno}: negative demand")
            if tariff < 0:
                raise ValidationError(f"{path} row {lineno}: negative tariff")
            snapshots.append(
                HistorySnapshot(
                    day=day,
                    t=t,
                    levels=levels,
                    actions=actions,
                    powers=powers,
                    demands=demands,
                    tariff=tariff,
                )
            )
    archive = HistoryArchive(snapshots=tuple(snapshots))
    archive.validate()
    return archive
