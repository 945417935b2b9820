import pytest

from smartfarm.config import ConfigError, ExperimentConfig, config_from_dict, load_config


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    cfg = load_config(p)
    assert cfg == ExperimentConfig()
    assert cfg.farm.num_animals == 20 and cfg.farm.num_gateways == 3 and cfg.farm.side_m == 400
    assert cfg.farm.decision_interval_s == 60 and cfg.farm.upload_interval_s == 30
    assert cfg.energy.l_bl == 0.3 and cfg.agents.tau == 0.05 and cfg.agents.ppo.gamma == 0.9
    assert cfg.agents.ppo.batch_size == 500 and cfg.agents.ppo.lr == 0.0008
    assert cfg.agents.mix_decay == 0.0003 and cfg.threat.compromised_fraction == 0.3
    assert cfg.fusion.phi == 0.5 and cfg.experiment.episodes == 50


def test_missing_path_gives_defaults():
    assert load_config(None) == ExperimentConfig()


def test_l_bl_out_of_range(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("energy:\n  l_bl: 1.5\n")
    with pytest.raises(ConfigError, match="energy"):
        load_config(p)


def test_same_file_same_hash(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("threat:\n  p_a: 0.2\nexperiment:\n  seed: 4\n")
    a, b = load_config(p), load_config(p)
    assert a.hash() == b.hash()
    assert a.hash() != ExperimentConfig().hash()


@pytest.mark.parametrize("data, where", [
    ({"farm": {"bogus": 1}}, "farm.bogus"),
    ({"nonsense": {}}, "nonsense"),
    ({"farm": {"num_animals": "many"}}, "farm.num_animals"),
    ({"farm": {"num_animals": 2.5}}, "farm.num_animals"),
    ({"experiment": {"record_wall_time": 1}}, "experiment.record_wall_time"),
    ({"experiment": {"scheme": "DQN"}}, "experiment"),
    ({"agents": {"ppo": {"gamma": 0.0}}}, "agents.ppo"),
    ({"farm": 3}, "farm"),
])
def test_errors_name_the_field(data, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        config_from_dict(data)


def test_nested_and_tuple_fields():
    cfg = config_from_dict({
        "farm": {"gateway_positions": [[10, 20]], "num_gateways": 1, "vitals": {"temp_std": 0.2}},
        "experiment": {"sweep_p_a": [0, 0.5]},
    })
    assert cfg.farm.gateway_positions == ((10.0, 20.0),)
    assert cfg.farm.vitals.temp_std == 0.2
    assert cfg.experiment.sweep_p_a == (0.0, 0.5)


def test_top_level_must_be_mapping(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("farm: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_replace_sections():
    cfg = ExperimentConfig().replace(threat={"p_a": 0.2}, farm={"duration_s": 3600})
    assert cfg.threat.p_a == 0.2 and cfg.farm.steps_per_episode == 60
    assert cfg.to_dict()["threat"]["p_a"] == 0.2
