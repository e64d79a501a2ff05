"""Smoke tests for the python bindings: exercise each exposed operation once."""

import math

import pytest

import _powertune as pt


def test_env_reset_and_step():
    params = pt.EnvParams()
    params.validate()
    state = pt.reset(params, 0.8, 7)
    assert state.cart_velocity == 0.0
    assert state.command == 0.8
    assert state.step_index == 0

    obs = pt.observe(state)
    assert len(obs) == 11
    assert obs[1] == pytest.approx(0.8)

    nxt, reward = pt.step(params, state, [1.0, 1.0, 1.0, 1.0])
    # hand Euler: v' = dt * (sum(tau * gear) - coulomb) / mass
    assert nxt.cart_velocity == pytest.approx(0.02 * (46.5 - 1.0) / 5.0)
    assert nxt.step_index == 1
    assert 0.0 < reward.tracking <= 1.0


def test_real_world_draws_current():
    real = pt.make_real_params(pt.EnvParams())
    real.validate()
    assert pt.measure_idle(real) == pytest.approx(real.idle_current)

    state = pt.real_reset(real, 0.8, 3)
    assert state.soc == pytest.approx(1.0)
    total = 0.0
    for _ in range(50):
        state, sample, _ = pt.real_step(real, state, [0.5, 0.5, 0.5, 0.5])
        assert sample.current >= 0.0
        total += sample.current
    assert total > 50 * real.idle_current  # driving costs more than idling
    assert state.soc < 1.0


def test_power_metrics():
    current = [2.0] * 100
    velocity = [0.8] * 100
    report = pt.make_power_report(current, velocity, 0.8, 0.02, 0.5, 24.0)
    assert len(report.segments) == 2
    assert report.gross_power == pytest.approx(2.0 * 24.0)
    assert report.net_power == pytest.approx((2.0 - 0.5) * 24.0)
    assert report.band_occupancy == pytest.approx(1.0)

    assert pt.delta_p(10.0, 8.0) == pytest.approx(20.0)
    with pytest.raises(pt.RejectedInput):
        pt.delta_p(0.0, 8.0)

    r = pt.analytical_proxy_reward([1, 0, 0, 0], [2, 0, 0, 0], pt.nominal_r_over_k2())
    assert r == pytest.approx(-(2.0 + 0.25))

    corr = pt.proxy_correlation([1.0, 2.0, 3.0], [2.0, 4.0, 6.0])
    assert corr == pytest.approx(1.0)


def test_config_round_trip(tmp_path):
    cfg = pt.RunConfig()
    cfg.validate()
    path = tmp_path / "config.json"
    pt.save_run_config(cfg, path)
    back = pt.load_run_config(path)
    assert back.seed == cfg.seed
    assert back.iterations == cfg.iterations
    assert pt.run_config_to_json(back) == pt.run_config_to_json(cfg)

    (tmp_path / "bad.json").write_text('{"schema": "nope"}')
    with pytest.raises(pt.RejectedInput):
        pt.load_run_config(tmp_path / "bad.json")


def test_seed_derivation_decorrelates():
    seeds = {pt.derive_seed(7, i, 0xDA7A, j) for i in range(4) for j in range(4)}
    assert len(seeds) == 16
    assert not math.isnan(float(pt.derive_seed(0, 0, 0, 0)))
