import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtvec.config import ConfigError, SimConfig, dbm_to_watts, format_kv, load_config, parse_kv_text
from dtvec.scenario import (Task, advance_vehicles, bias_vector, generate_tasks, init_scenario,
                            sync_all, sync_twin, twin_bias_matrix)


def test_default_instance_shape(cfg):
    st_ = init_scenario(cfg)
    assert len(st_.vehicles) == 10
    assert st_.queue_backlog.shape == (3,)
    assert np.all(st_.queue_backlog == 0)


def test_minimal_instance():
    st_ = init_scenario(SimConfig(n_vehicles=1, n_task_types=1))
    assert len(st_.vehicles) == 1 and st_.queue_backlog.shape == (1,)


def test_same_seed_bit_identical():
    a = init_scenario(SimConfig(seed=7))
    b = init_scenario(SimConfig(seed=7))
    assert [dataclasses.astuple(v) for v in a.vehicles] == [dataclasses.astuple(v) for v in b.vehicles]
    assert np.array_equal(generate_tasks(a, 0).sizes, generate_tasks(b, 0).sizes)


def test_initial_state_ranges(cfg):
    s = init_scenario(cfg)
    assert np.all((s.positions >= 0) & (s.positions < cfg.road_length))
    assert np.all((s.speeds >= 10) & (s.speeds <= 15))


@pytest.mark.parametrize("field,value", [
    ("n_vehicles", 0), ("n_task_types", 0), ("gamma", 1.0), ("gamma", 0.0), ("slot_dt", 0.0),
    ("server_cpu_fE", -1.0), ("bandwidth_w", 0.0), ("task_size_range", [1500, 1000]),
])
def test_invalid_config_names_field(field, value):
    with pytest.raises(ConfigError) as exc:
        init_scenario(SimConfig(**{field: value}))
    assert exc.value.field == field


def test_task_sizes_in_range(cfg):
    s = init_scenario(cfg)
    for t in range(50):
        tm = generate_tasks(s, t)
        assert tm.sizes.shape == (10, 3)
        assert np.all((tm.sizes >= 1000) & (tm.sizes <= 1500))
        assert np.all(tm.max_delay == 0.15)


def test_degenerate_size_range():
    s = init_scenario(SimConfig(task_size_range=[1000, 1000]))
    assert np.all(generate_tasks(s, 0).sizes == 1000)


def test_task_size_mean_monte_carlo():
    s = init_scenario(SimConfig(n_vehicles=100, n_task_types=1, seed=3))
    draws = np.concatenate([generate_tasks(s, t).sizes.ravel() for t in range(1000)])
    assert draws.size == 100_000
    assert abs(draws.mean() - 1250.0) < 5.0


def test_negative_slot_rejected(cfg):
    with pytest.raises(ValueError):
        generate_tasks(init_scenario(cfg), -1)


def _one_vehicle(position, speed, road=1000.0):
    s = init_scenario(SimConfig(n_vehicles=1, road_length=road))
    s.vehicles[0].position_l = position
    s.vehicles[0].speed_v = speed
    return s


def test_advance_kinematics():
    s = advance_vehicles(_one_vehicle(0.0, 10.0), 0.1)
    assert s.vehicles[0].position_l == pytest.approx(1.0, rel=1e-12)


def test_advance_wraps():
    s = advance_vehicles(_one_vehicle(999.5, 10.0), 0.1)
    assert s.vehicles[0].position_l == pytest.approx(0.5, rel=1e-9)


def test_advance_zero_speed_fixed():
    s = advance_vehicles(_one_vehicle(321.0, 0.0), 0.1)
    assert s.vehicles[0].position_l == 321.0


@settings(max_examples=200, deadline=None)
@given(pos=st.floats(0, 999.999), speed=st.floats(0, 40), dt=st.floats(1e-3, 10))
def test_positions_stay_on_road(pos, speed, dt):
    s = advance_vehicles(_one_vehicle(pos, speed), dt)
    assert 0.0 <= s.vehicles[0].position_l < 1000.0


def test_twin_mirrors_tasks(cfg):
    s = init_scenario(cfg)
    tasks = [Task(1000.0, 0.15, k) for k in range(3)]
    tw = sync_twin(s.vehicles[0], tasks, 5e8)
    assert len(tw.task_vector) == 3
    assert tw.vehicle_info == s.vehicles[0] and tw.vehicle_info is not s.vehicles[0]


@pytest.mark.parametrize("ghz", [0.5, -0.5])
def test_bias_setting(cfg, ghz):
    c = cfg.replace(est_bias_df=ghz * 1e9)
    s = init_scenario(c)
    twins = sync_all(s, generate_tasks(s, 0), bias_vector(c))
    B = twin_bias_matrix(twins)
    assert B.shape == (10, 3)
    assert np.all(B == ghz * 1e9)


def test_bias_jitter_zero_mean(cfg):
    c = cfg.replace(bias_jitter=1e8)
    rng = np.random.default_rng(0)
    draws = np.stack([bias_vector(c, rng) for _ in range(20000)])
    assert np.all(np.abs(draws) <= 1e8)
    assert abs(draws.mean()) < 2e6


def test_noise_dbm_conversion():
    assert dbm_to_watts(30.0) == pytest.approx(1.0, rel=1e-12)
    assert SimConfig().noise_watts == pytest.approx(1e-14, rel=1e-12)
    assert SimConfig(noise_dbm=None, noise_rho2=2e-14).noise_watts == 2e-14


def test_config_file_roundtrip(tmp_path):
    c = SimConfig(n_vehicles=4, est_bias_df=-5e8, max_delay_Tmax=[0.1, 0.2, 0.3])
    p = tmp_path / "c.txt"
    p.write_text(format_kv(c))
    assert load_config(p) == c


def test_config_text_parsing():
    kw = parse_kv_text("# comment\nn-vehicles = 4\ncycles_per_byte_ck = 1e5, 2e5\nbs_position = None\n"
                       "tx_scaled_by_omega = true\n")
    assert kw == {"n_vehicles": 4, "cycles_per_byte_ck": [1e5, 2e5], "bs_position": None,
                  "tx_scaled_by_omega": True}
    with pytest.raises(ConfigError):
        parse_kv_text("no_such_key = 1")
    with pytest.raises(ConfigError):
        parse_kv_text("n_vehicles = ten")
