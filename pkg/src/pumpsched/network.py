"""Network model: tanks, pump stations, demand zones, tariff, demand generation.

Units follow waterworks convention throughout: levels in metres, surface areas
in square metres, flows and demands in cubic metres per hour, power in
kilowatts, energy in kilowatt-hours, tariff in currency per kilowatt-hour.
A day is resolved into 96 quarter-hour steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError, ValidationError

STEPS_PER_DAY = 96
DT_HOURS = 0.25

# Default synthetic-world sizing.
TANK_COUNT = 6
STATION_COUNT = 6
ZONE_COUNT = 18


@dataclass(frozen=True)
class TankSpec:
    """A storage tank with a physical capacity and an operational band."""

    id: str
    surface_area: float
    level_max_physical: float
    lower_bound: float
    upper_bound: float
    initial_level: float

    def validate(self) -> None:
        if not self.surface_area > 0:
            raise ValidationError(f"tank {self.id}: surface_area must be > 0")
        if not self.level_max_physical > 0:
            raise ValidationError(f"tank {self.id}: level_max_physical must be > 0")
        if not (0 <= self.lower_bound < self.upper_bound <= self.level_max_physical):
            raise ValidationError(
                f"tank {self.id}: bounds must satisfy "
                "0 <= lower_bound < upper_bound <= level_max_physical"
            )
        if not (0 <= self.initial_level <= self.level_max_physical):
            raise ValidationError(
                f"tank {self.id}: initial_level must lie in [0, level_max_physical]"
            )


@dataclass(frozen=True)
class PumpStationSpec:
    """A pump station with affinity-law power and a fixed fill split.

    ``fills`` maps destination tank ids to fractions that sum to 1.
    ``draws_from`` names the source tank, or None for an external source.
    """

    id: str
    max_flow: float
    rated_power: float
    fills: tuple[tuple[str, float], ...]
    draws_from: str | None = None

    def validate(self) -> None:
        if not self.max_flow > 0:
            raise ValidationError(f"station {self.id}: max_flow must be > 0")
        if self.rated_power < 0:
            raise ValidationError(f"station {self.id}: rated_power must be >= 0")
        if not self.fills:
            raise ValidationError(f"station {self.id}: fills must not be empty")
        total = sum(frac for _, frac in self.fills)
        if not np.isclose(total, 1.0, rtol=0, atol=1e-9):
            raise ValidationError(
                f"station {self.id}: fill fractions must sum to 1 (got {total!r})"
            )
        for tank_id, frac in self.fills:
            if frac < 0:
                raise ValidationError(
                    f"station {self.id}: fill fraction for {tank_id} must be >= 0"
                )
            if self.draws_from is not None and tank_id == self.draws_from:
                raise ValidationError(
                    f"station {self.id}: must not fill and draw the same tank {tank_id}"
                )

    def primary_tank(self) -> str:
        """Destination tank with the largest fill fraction (first wins ties)."""
        best_id, best_frac = self.fills[0]
        for tank_id, frac in self.fills[1:]:
            if frac > best_frac:
                best_id, best_frac = tank_id, frac
        return best_id


@dataclass(frozen=True)
class DemandZoneSpec:
    """A demand zone served by one tank, with a double-peak diurnal profile."""

    id: str
    served_by: str
    base_demand: float
    morning_peak: float
    evening_peak: float
    noise_scale: float

    def validate(self) -> None:
        if self.base_demand < 0:
            raise ValidationError(f"zone {self.id}: base_demand must be >= 0")
        if self.morning_peak < 0 or self.evening_peak < 0:
            raise ValidationError(f"zone {self.id}: peak factors must be >= 0")
        if not (0 <= self.noise_scale <= 0.5):
            raise ValidationError(f"zone {self.id}: noise_scale must lie in [0, 0.5]")


@dataclass(frozen=True)
class TariffSchedule:
    """Energy price per step for one day."""

    values: tuple[float, ...]

    def validate(self) -> None:
        if len(self.values) != STEPS_PER_DAY:
            raise ValidationError(
                f"tariff: expected {STEPS_PER_DAY} values, got {len(self.values)}"
            )
        arr = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("tariff: values must be finite")
        if np.any(arr < 0):
            raise ValidationError("tariff: values must be >= 0")
        if not arr.min() < arr.max():
            raise ValidationError("tariff: min must be strictly below max")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class NetworkTopology:
    """The lumped network: tanks, stations, zones, tariff, step size."""

    tanks: tuple[TankSpec, ...]
    stations: tuple[PumpStationSpec, ...]
    zones: tuple[DemandZoneSpec, ...]
    tariff: TariffSchedule
    dt_hours: float = DT_HOURS

    def validate(self) -> None:
        if not self.tanks:
            raise ValidationError("topology: at least one tank is required")
        if not self.stations:
            raise ValidationError("topology: at least one station is required")
        if not self.zones:
            raise ValidationError("topology: at least one zone is required")
        if not self.dt_hours > 0:
            raise ValidationError("topology: dt_hours must be > 0")
        seen: set[str] = set()
        for tank in self.tanks:
            tank.validate()
            if tank.id in seen:
                raise ValidationError(f"topology: duplicate tank id {tank.id}")
            seen.add(tank.id)
        tank_ids = {tank.id for tank in self.tanks}
        seen = set()
        for station in self.stations:
            station.validate()
            if station.id in seen:
                raise ValidationError(f"topology: duplicate station id {station.id}")
            seen.add(station.id)
            for tank_id, _ in station.fills:
                if tank_id not in tank_ids:
                    raise ValidationError(
                        f"station {station.id}: fills unknown tank {tank_id}"
                    )
            if station.draws_from is not None and station.draws_from not in tank_ids:
                raise ValidationError(
                    f"station {station.id}: draws from unknown tank {station.draws_from}"
                )
        seen = set()
        for zone in self.zones:
            zone.validate()
            if zone.id in seen:
                raise ValidationError(f"topology: duplicate zone id {zone.id}")
            seen.add(zone.id)
            if zone.served_by not in tank_ids:
                raise ValidationError(
                    f"zone {zone.id}: served by unknown tank {zone.served_by}"
                )
        self.tariff.validate()

    @property
    def n_tanks(self) -> int:
        return len(self.tanks)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    def tank_index(self, tank_id: str) -> int:
        for i, tank in enumerate(self.tanks):
            if tank.id == tank_id:
                return i
        raise ValidationError(f"unknown tank id {tank_id}")

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) operational bounds per tank."""
        lb = np.array([t.lower_bound for t in self.tanks], dtype=float)
        ub = np.array([t.upper_bound for t in self.tanks], dtype=float)
        return lb, ub

    def caps_array(self) -> np.ndarray:
        return np.array([t.level_max_physical for t in self.tanks], dtype=float)

    def areas_array(self) -> np.ndarray:
        return np.array([t.surface_area for t in self.tanks], dtype=float)

    def initial_levels_array(self) -> np.ndarray:
        return np.array([t.initial_level for t in self.tanks], dtype=float)


class DemandSet:
    """Per-zone demand series for one day, aligned to a topology's zone order."""

    def __init__(self, zone_ids: tuple[str, ...], values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (len(zone_ids), STEPS_PER_DAY):
            raise ValidationError(
                f"demand set: expected shape ({len(zone_ids)}, {STEPS_PER_DAY}), "
                f"got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("demand set: values must be finite")
        if np.any(values < 0):
            raise ValidationError("demand set: values must be >= 0")
        self.zone_ids = tuple(zone_ids)
        self.values = values.copy()
        self.values.setflags(write=False)

    def as_array(self) -> np.ndarray:
        """(n_zones, 96) demand array."""
        return self.values

    def total_volume(self, dt_hours: float = DT_HOURS) -> float:
        """Total delivered volume over the day in cubic metres."""
        return float(self.values.sum() * dt_hours)


# ----------------------------------------------------------------------------
# JSON serialization


def _tank_from_dict(obj: dict, pos: int) -> TankSpec:
    try:
        return TankSpec(
            id=str(obj["id"]),
            surface_area=float(obj["surface_area"]),
            level_max_physical=float(obj["level_max_physical"]),
            lower_bound=float(obj["lower_bound"]),
            upper_bound=float(obj["upper_bound"]),
            initial_level=float(obj["initial_level"]),
        )
    except KeyError as exc:
        raise SchemaError(f"tanks[{pos}]: missing field {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"tanks[{pos}]: {exc}") from None


def _station_from_dict(obj: dict, pos: int) -> PumpStationSpec:
    try:
        fills = tuple((str(t), float(f)) for t, f in obj["fills"])
        draws = obj.get("draws_from")
        return PumpStationSpec(
            id=str(obj["id"]),
            max_flow=float(obj["max_flow"]),
            rated_power=float(obj["rated_power"]),
            fills=fills,
            draws_from=None if draws is None else str(draws),
        )
    except KeyError as exc:
        raise SchemaError(f"stations[{pos}]: missing field {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"stations[{pos}]: {exc}") from None


def _zone_from_dict(obj: dict, pos: int) -> DemandZoneSpec:
    try:
        return DemandZoneSpec(
            id=str(obj["id"]),
            served_by=str(obj["served_by"]),
            base_demand=float(obj["base_demand"]),
            morning_peak=float(obj["morning_peak"]),
            evening_peak=float(obj["evening_peak"]),
            noise_scale=float(obj["noise_scale"]),
        )
    except KeyError as exc:
        raise SchemaError(f"zones[{pos}]: missing field {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"zones[{pos}]: {exc}") from None


def topology_to_dict(topology: NetworkTopology) -> dict:
    return {
        "dt_hours": topology.dt_hours,
        "tanks": [
            {
                "id": t.id,
                "surface_area": t.surface_area,
                "level_max_physical": t.level_max_physical,
                "lower_bound": t.lower_bound,
                "upper_bound": t.upper_bound,
                "initial_level": t.initial_level,
            }
            for t in topology.tanks
        ],
        "stations": [
            {
                "id": s.id,
                "max_flow": s.max_flow,
                "rated_power": s.rated_power,
                "fills": [[tank_id, frac] for tank_id, frac in s.fills],
                "draws_from": s.draws_from,
            }
            for s in topology.stations
        ],
        "zones": [
            {
                "id": z.id,
                "served_by": z.served_by,
                "base_demand": z.base_demand,
                "morning_peak": z.morning_peak,
                "evening_peak": z.evening_peak,
                "noise_scale": z.noise_scale,
            }
            for z in topology.zones
        ],
        "tariff": list(topology.tariff.values),
    }


def topology_from_dict(obj: dict) -> NetworkTopology:
    for key in ("tanks", "stations", "zones", "tariff"):
        if key not in obj:
            raise SchemaError(f"network document: missing top-level key {key!r}")
    topology = NetworkTopology(
        tanks=tuple(_tank_from_dict(t, i) for i, t in enumerate(obj["tanks"])),
        stations=tuple(_station_from_dict(s, i) for i, s in enumerate(obj["stations"])),
        zones=tuple(_zone_from_dict(z, i) for i, z in enumerate(obj["zones"])),
        tariff=TariffSchedule(values=tuple(float(v) for v in obj["tariff"])),
        dt_hours=float(obj.get("dt_hours", DT_HOURS)),
    )
    topology.validate()
    return topology


def load_network(path: str | Path) -> NetworkTopology:
    """Load and validate a network topology from a JSON document."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: top level must be a JSON object")
    return topology_from_dict(obj)


def save_network(topology: NetworkTopology, path: str | Path) -> None:
    topology.validate()
    Path(path).write_text(json.dumps(topology_to_dict(topology), indent=2) + "\n")


# ----------------------------------------------------------------------------
# Synthetic world generation

# Sized so duty-cycle inflow comfortably exceeds worst-case coincident outflow
# on source-fed tanks; see the hysteresis controller in history.py.
_SOURCE_BIG_FLOW = (1150.0, 1300.0)  # stations feeding tanks that also feed transfers
_SOURCE_FLOW = (560.0, 640.0)
_TRANSFER_FLOW = (400.0, 460.0)
_SPECIFIC_POWER = (0.30, 0.40)  # kW per (m^3/h) of max flow


def generate_synthetic_network(seed: int) -> NetworkTopology:
    """Deterministically generate a six-tank default world from a seed.

    The layout is fixed (four source stations, two transfer stations, one
    split fill, three zones per tank); the numbers are jittered by the seed.
    """
    rng = np.random.default_rng(seed)

    tanks = []
    for i in range(TANK_COUNT):
        lb = float(rng.uniform(1.8, 2.4))
        ub = float(rng.uniform(6.0, 6.6))
        tanks.append(
            TankSpec(
                id=f"tank_{i + 1}",
                surface_area=float(rng.uniform(800.0, 1600.0)),
                level_max_physical=8.0,
                lower_bound=lb,
                upper_bound=ub,
                initial_level=float(rng.uniform(3.8, 4.6)),
            )
        )

    def flow(bounds: tuple[float, float]) -> float:
        return float(rng.uniform(*bounds))

    flows = [
        flow(_SOURCE_BIG_FLOW),
        flow(_SOURCE_BIG_FLOW),
        flow(_SOURCE_FLOW),
        flow(_SOURCE_FLOW),
        flow(_TRANSFER_FLOW),
        flow(_TRANSFER_FLOW),
    ]
    fills: list[tuple[tuple[str, float], ...]] = [
        (("tank_1", 1.0),),
        (("tank_2", 1.0),),
        (("tank_3", 0.85), ("tank_4", 0.15)),
        (("tank_4", 1.0),),
        (("tank_5", 1.0),),
        (("tank_6", 1.0),),
    ]
    draws: list[str | None] = [None, None, None, None, "tank_1", "tank_2"]
    stations = tuple(
        PumpStationSpec(
            id=f"station_{j + 1}",
            max_flow=flows[j],
            rated_power=float(flows[j] * rng.uniform(*_SPECIFIC_POWER)),
            fills=fills[j],
            draws_from=draws[j],
        )
        for j in range(STATION_COUNT)
    )

    zones = []
    for i in range(TANK_COUNT):
        for k in range(ZONE_COUNT // TANK_COUNT):
            zones.append(
                DemandZoneSpec(
                    id=f"zone_{i * (ZONE_COUNT // TANK_COUNT) + k + 1}",
                    served_by=f"tank_{i + 1}",
                    base_demand=float(rng.uniform(35.0, 70.0)),
                    morning_peak=float(rng.uniform(0.45, 0.70)),
                    evening_peak=float(rng.uniform(0.35, 0.60)),
                    noise_scale=float(rng.uniform(0.10, 0.20)),
                )
            )

    night = rng.uniform(0.06, 0.09)
    day = rng.uniform(0.16, 0.22)
    tariff_values = []
    for t in range(STEPS_PER_DAY):
        base = day if 28 <= t < 88 else night  # 07:00-22:00 is the expensive tier
        tariff_values.append(float(base * (1.0 + 0.04 * rng.uniform(-1.0, 1.0))))

    topology = NetworkTopology(
        tanks=tuple(tanks),
        stations=stations,
        zones=tuple(zones),
        tariff=TariffSchedule(values=tuple(tariff_values)),
    )
    topology.validate()
    return topology


def _demand_profile(zone: DemandZoneSpec, rng: np.random.Generator) -> np.ndarray:
    hours = (np.arange(STEPS_PER_DAY) + 0.5) * DT_HOURS
    shape = (
        1.0
        + zone.morning_peak * np.exp(-((hours - 7.5) ** 2) / (2 * 1.5**2))
        + zone.evening_peak * np.exp(-((hours - 19.0) ** 2) / (2 * 2.0**2))
    )
    noise = 1.0 + zone.noise_scale * rng.standard_normal(STEPS_PER_DAY)
    return np.maximum(zone.base_demand * shape * noise, 0.0)


def demands_from_rng(topology: NetworkTopology, rng: np.random.Generator) -> DemandSet:
    """One day of per-zone demands drawn from an existing generator."""
    values = np.stack([_demand_profile(zone, rng) for zone in topology.zones])
    return DemandSet(tuple(z.id for z in topology.zones), values)


def generate_demands(topology: NetworkTopology, seed: int) -> DemandSet:
    """One day of per-zone demands: diurnal double peak plus seeded noise."""
    return demands_from_rng(topology, np.random.default_rng(seed))
