import pytest

from lcaunet.config import PRESETS, TrainConfig, field_names, load_file, merge, parse_config
from lcaunet.windows import ConfigurationError


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    assert parse_config(p) == TrainConfig()
    assert load_file(p) == {}


def test_documented_defaults():
    c = TrainConfig()
    assert (c.lambda1, c.lambda2, c.gamma) == (0.6, 0.4, 0.2)
    assert (c.lr, c.weight_decay) == (0.01, 0.01)
    assert (c.batch_size, c.epochs, c.body_channels) == (8, 20, 24)
    assert (c.plateau_factor, c.plateau_patience) == (0.5, 5)
    full = parse_config(preset="full")
    assert (full.batch_size, full.epochs, full.body_channels) == (24, 80, 96)


def test_flags_override_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("lr: 0.002\nepochs: 3\ndepths: [2, 2, 2, 2]\n")
    c = parse_config(p, {"epochs": "5", "use_lcaf": "false", "heads": "1,2,4,8"})
    assert c.lr == 0.002 and c.epochs == 5 and c.use_lcaf is False
    assert c.heads == [1, 2, 4, 8]


def test_unknown_key_lists_valid_keys(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("learning_rate: 0.1\n")
    with pytest.raises(ConfigurationError) as exc:
        parse_config(p)
    assert "learning_rate" in str(exc.value) and "weight_decay" in str(exc.value)


@pytest.mark.parametrize("bad", [{"lr": 0}, {"batch_size": "-1"}, {"plateau_factor": 1.5},
                                 {"epochs": "2.5"}, {"use_lcaf": "maybe"}, {"window": 5},
                                 {"dataset": "directory"}, {"gamma": -0.1}])
def test_invalid_values(bad):
    with pytest.raises(ConfigurationError):
        parse_config(overrides=bad)


def test_non_mapping_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError):
        parse_config(p)


def test_round_trip_through_dict():
    c = parse_config(overrides={"seed": 7, "gamma": 0})
    assert merge(TrainConfig(), c.to_dict()) == c
    assert set(c.to_dict()) == set(field_names())
    assert set(PRESETS) == {"desk", "full"}
