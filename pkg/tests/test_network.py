import dataclasses
import json

import numpy as np
import pytest

from pumpsched import (
    DemandZoneSpec,
    TankSpec,
    TariffSchedule,
    ValidationError,
    generate_demands,
    generate_synthetic_network,
    load_network,
    save_network,
    topology_from_dict,
    topology_to_dict,
)
from pumpsched.network import STEPS_PER_DAY


def test_synthetic_network_sizing(world):
    assert world.n_tanks == 6
    assert world.n_stations == 6
    assert world.n_zones == 18
    world.validate()


def test_synthetic_network_deterministic():
    a = generate_synthetic_network(seed=42)
    b = generate_synthetic_network(seed=42)
    assert topology_to_dict(a) == topology_to_dict(b)


def test_synthetic_network_seed_sensitivity():
    a = generate_synthetic_network(seed=42)
    b = generate_synthetic_network(seed=43)
    assert a.tariff.values != b.tariff.values


def test_tariff_shape_and_spread(world):
    values = world.tariff.as_array()
    assert values.shape == (STEPS_PER_DAY,)
    assert values.min() < values.max()
    assert np.all(values >= 0)


def test_tariff_two_tier_pattern(world):
    values = world.tariff.as_array()
    night = np.concatenate([values[:28], values[88:]])
    day = values[28:88]
    assert night.max() < day.min()


def test_tank_bounds_validation():
    tank = TankSpec(
        id="t3",
        surface_area=100.0,
        level_max_physical=8.0,
        lower_bound=5.0,
        upper_bound=4.0,
        initial_level=3.0,
    )
    with pytest.raises(ValidationError, match="t3"):
        tank.validate()


def test_zone_unknown_tank_rejected(world):
    bad_zone = DemandZoneSpec(
        id="z_bad",
        served_by="no_such_tank",
        base_demand=10.0,
        morning_peak=0.5,
        evening_peak=0.5,
        noise_scale=0.1,
    )
    broken = dataclasses.replace(world, zones=world.zones[:-1] + (bad_zone,))
    with pytest.raises(ValidationError, match="no_such_tank"):
        broken.validate()


def test_tariff_rejects_constant():
    with pytest.raises(ValidationError):
        TariffSchedule(values=tuple([0.1] * STEPS_PER_DAY)).validate()


def test_network_json_round_trip(tmp_path, world):
    path = tmp_path / "network.json"
    save_network(world, path)
    again = load_network(path)
    assert topology_to_dict(again) == topology_to_dict(world)


def test_load_network_reports_bad_bounds(tmp_path, world):
    obj = topology_to_dict(world)
    obj["tanks"][2]["lower_bound"] = obj["tanks"][2]["upper_bound"] + 1.0
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(ValidationError, match=world.tanks[2].id):
        load_network(path)


def test_topology_dict_round_trip(world):
    assert topology_to_dict(topology_from_dict(topology_to_dict(world))) == (
        topology_to_dict(world)
    )


def test_generate_demands_deterministic(world):
    a = generate_demands(world, seed=9)
    b = generate_demands(world, seed=9)
    np.testing.assert_array_equal(a.as_array(), b.as_array())


def test_demands_nonnegative_and_shaped(world):
    demands = generate_demands(world, seed=3)
    values = demands.as_array()
    assert values.shape == (world.n_zones, STEPS_PER_DAY)
    assert np.all(values >= 0)


def test_zero_noise_demand_has_two_peaks(world):
    calm = dataclasses.replace(world.zones[0], noise_scale=0.0)
    topo = dataclasses.replace(world, zones=(calm,) + world.zones[1:])
    values = generate_demands(topo, seed=1).as_array()[0]
    # Smooth double-peak: one local max in the morning half, one in the evening.
    morning = values[: STEPS_PER_DAY // 2]
    evening = values[STEPS_PER_DAY // 2 :]
    assert morning.max() > values[0]
    assert evening.max() > values[STEPS_PER_DAY // 2]
    assert morning.argmax() not in (0, len(morning) - 1)
    assert evening.argmax() not in (0, len(evening) - 1)


def test_zero_base_demand_zone_is_silent(world):
    silent = dataclasses.replace(world.zones[0], base_demand=0.0)
    topo = dataclasses.replace(world, zones=(silent,) + world.zones[1:])
    values = generate_demands(topo, seed=1).as_array()
    assert np.all(values[0] == 0.0)
