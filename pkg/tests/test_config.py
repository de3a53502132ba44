import json

import pytest

from ldpquantile.config import ClientSpec, ConfigError, FederationConfig, config_from_dict, load_config
from ldpquantile.distributions import Normal
from ldpquantile.schedule import build_schedule

from helpers import small_config


def test_weights_must_sum_to_one():
    sched = build_schedule("C1", rounds=3)
    with pytest.raises(ConfigError):
        FederationConfig((ClientSpec(0, 0.5, 0.5, 0.9, Normal()),), sched)
    with pytest.raises(ConfigError):
        FederationConfig((ClientSpec(0, 0.5, 0.5, 0.9, Normal()), ClientSpec(0, 0.5, 0.5, 0.9, Normal())), sched)


@pytest.mark.parametrize("kw", [dict(weight=0.0), dict(tau=1.0), dict(rate=0.0), dict(rate=1.2)])
def test_client_validation(kw):
    base = dict(weight=1.0, tau=0.5, rate=0.9)
    base.update(kw)
    with pytest.raises(ConfigError):
        ClientSpec(0, base["weight"], base["tau"], base["rate"], Normal())


def test_json_roundtrip(tmp_path):
    cfg = small_config("Log", total_samples=123, warmup_frac=0.05, K=4)
    p = tmp_path / "c.json"
    cfg.to_json(p)
    back = load_config(p)
    assert back.to_dict() == cfg.to_dict()
    assert back.schedule == cfg.schedule


def test_scenario_key():
    cfg = config_from_dict({"scenario": {"preset": "HeteD", "K": 10}, "schedule": {"strategy": "C5", "rounds": 10}})
    assert cfg.K == 10 and cfg.schedule.rounds == 10


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"scenario": {"preset": "homogeneous"}, "schedule": {"strategy": "C1", "rounds": 5},
                          "bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict(json.loads('{"scenario": {"preset": "homogeneous"}, '
                                    '"schedule": {"strategy": "C1", "rounds": 5, "steps": 3}}'))
