import json
import math

import pytest

from riswpt.scenario import (ScenarioConfig, ScenarioError, default_scenario, dbm_to_watts, load_scenario,
                             reduced_profile, save_scenario, scenario_from_dict, scenario_to_dict,
                             semicircle_layout, visit_order)


def test_default_geometry(default_cfg):
    cfg = default_cfg
    assert cfg.num_sensors == 5
    assert cfg.start == -35 + 0j and cfg.finish == 35 + 0j
    assert cfg.radiated_power == pytest.approx(10.0)  # 40 dBm
    assert cfg.ris_elements == 8
    assert cfg.max_segment_length == 0.5
    # four sensors on the 30 m arc, one halfway along the 45-degree radius
    r = sorted(abs(s) for s in cfg.sensors)
    assert r[0] == pytest.approx(15.0)
    assert r[1:] == pytest.approx([30.0] * 4)


def test_semicircle_layout_values():
    pts = semicircle_layout()
    assert pts[0] == -30 + 0j
    assert pts[2] == 30j
    assert pts[3] == 30 + 0j
    assert pts[4].real == pytest.approx(15 / math.sqrt(2))
    with pytest.raises(ScenarioError):
        semicircle_layout(K=4)


def test_visit_order_sweeps_from_start(default_cfg):
    # sensor 5 (45-degree radius) is visited before sensor 4 (0 degrees)
    assert visit_order(default_cfg) == [0, 1, 2, 4, 3]


def test_dbm():
    assert dbm_to_watts(40.0) == pytest.approx(10.0)
    assert dbm_to_watts(30.0) == pytest.approx(1.0)


def test_round_trip(tmp_path, default_cfg):
    path = save_scenario(default_cfg, tmp_path / "s.json")
    back = load_scenario(path)
    assert back == default_cfg


def test_unit_strings():
    d = scenario_to_dict(default_scenario())
    d["radiated_power"] = "40 dBm"
    d["sensor_energy_req"] = "0.2 mJ"
    cfg = scenario_from_dict(d)
    assert cfg.radiated_power == pytest.approx(10.0)
    assert cfg.sensor_energy_req == pytest.approx((2e-4,) * 5)


@pytest.mark.parametrize("mutate, fragment", [
    (lambda d: d.pop("sensors"), "missing required key"),
    (lambda d: d.update(bogus=1), "unknown scenario keys"),
    (lambda d: d.update(uav_height=5.0), "uav_height"),
    (lambda d: d.update(sensor_energy_req=[1e-4] * 4), "one entry per sensor"),
    (lambda d: d.update(radiated_power="3 parsecs"), "unknown unit"),
    (lambda d: d["rotor"].update(tip_speed=-1.0), "tip_speed"),
])
def test_invalid_scenarios(mutate, fragment):
    d = scenario_to_dict(default_scenario())
    mutate(d)
    with pytest.raises(ScenarioError, match=fragment):
        scenario_from_dict(d)


def test_missing_file_names_path(tmp_path):
    p = tmp_path / "absent.json"
    with pytest.raises(FileNotFoundError, match="absent.json"):
        load_scenario(p)


def test_parse_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError, match="parse error"):
        load_scenario(p)


def test_reduced_profile(default_cfg):
    r = reduced_profile(default_cfg)
    assert r.max_segment_length == 2.0
    assert r.sensors == default_cfg.sensors


def test_with_updates_revalidates():
    cfg = default_scenario().with_updates(ris_elements=-1)
    with pytest.raises(ScenarioError):
        cfg.validate()


def test_json_is_plain(tmp_path, default_cfg):
    path = save_scenario(default_cfg, tmp_path / "s.json")
    data = json.loads(path.read_text())
    assert data["sensors"][2] == [0.0, 30.0]
    assert isinstance(ScenarioConfig(**{**default_cfg.__dict__}).sensors[0], complex)
