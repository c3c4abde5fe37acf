"""config_loader モジュールのテスト (読み込み・上書き・プリセット解決・PSL 表)"""

import json

import pytest

import config_loader
from channel import ChannelModel
from errors import ConfigurationError, UsageError
from harness import SweepAxis

BASE = {
    "name": "small",
    "scenario": {
        "layout": {"kind": "IndoorFactory", "hall_length": 60.0, "hall_width": 30.0, "clutter_density": 0.1},
        "n_anchors": 4,
    },
    "method": "Tdoa",
    "radio": {"bandwidth_hz": 100e6},
    "channel": "highway-like",
    "n_trials": 5,
    "master_seed": 7,
}


@pytest.fixture
def config_file(tmp_path):
    def _write(doc=None, name="exp.json"):
        path = tmp_path / name
        path.write_text(json.dumps(BASE if doc is None else doc), encoding="utf-8")
        return path
    return _write


class TestLoadExperiment:
    def test_channel_preset_is_resolved(self, config_file):
        exp = config_loader.load_experiment(config_file())
        assert isinstance(exp.channel, ChannelModel)
        assert exp.channel.pathloss_exponent == 2.0
        assert exp.channel.los_decay_m == 200.0

    def test_override_bandwidth(self, config_file):
        exp = config_loader.load_experiment(config_file(), ["radio.bandwidth_hz=40e6"])
        assert exp.radio.bandwidth_hz == 4e7

    def test_override_channel_preset_name(self, config_file):
        exp = config_loader.load_experiment(config_file(), ["channel=urban-grid-like"])
        assert exp.channel.pathloss_exponent_nlos == 3.5

    def test_override_string_value(self, config_file):
        exp = config_loader.load_experiment(config_file(), ["method=RttMultilat"])
        assert exp.method.value == "RttMultilat"

    def test_unknown_key_is_named(self, config_file):
        with pytest.raises(ConfigurationError) as info:
            config_loader.load_experiment(config_file(), ["radio.bandwith_hz=40e6"])
        assert "radio.bandwith_hz" in str(info.value)

    def test_seed_override(self, config_file):
        assert config_loader.load_experiment(config_file(), seed=99).master_seed == 99

    def test_unknown_channel_preset(self, config_file):
        with pytest.raises(ConfigurationError):
            config_loader.load_experiment(config_file({**BASE, "channel": "moon-base"}))

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError):
            config_loader.load_experiment(tmp_path / "nope.json")

    def test_broken_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            config_loader.load_experiment(path)

    def test_yaml_document(self, tmp_path):
        import yaml

        path = tmp_path / "exp.yaml"
        path.write_text(yaml.safe_dump(BASE), encoding="utf-8")
        assert config_loader.load_experiment(path).name == "small"

    def test_sweep_section(self, config_file):
        doc = {**BASE, "sweep": {"axis": "bandwidth_hz", "values": [20e6, 100e6]}}
        exp = config_loader.load_experiment(config_file(doc))
        assert exp.sweep.axis is SweepAxis.BANDWIDTH_HZ
        assert "sweep" not in exp.experiment().model_dump()


class TestOverrides:
    def test_requires_equals(self):
        with pytest.raises(UsageError):
            config_loader.parse_override("radio.bandwidth_hz")

    def test_creates_missing_objects(self):
        doc = config_loader.apply_overrides({}, ["a.b.c=1"])
        assert doc == {"a": {"b": {"c": 1}}}

    def test_scalar_cannot_be_descended(self):
        with pytest.raises(ConfigurationError):
            config_loader.apply_overrides({"a": 1}, ["a.b=2"])

    def test_original_untouched(self):
        doc = {"a": {"b": 1}}
        config_loader.apply_overrides(doc, ["a.b=2"])
        assert doc == {"a": {"b": 1}}


class TestPslTable:
    def test_default_table(self):
        table = config_loader.load_psl_table()
        names = [p.name for p in table]
        assert names[0] == "PSL1" and "V2X-R18" in names
        psl1 = table[0]
        assert (psl1.horizontal_m, psl1.vertical_m, psl1.availability_frac) == (10.0, 3.0, 0.95)
        assert not psl1.placeholder

    def test_select_levels(self):
        table = config_loader.load_psl_table()
        picked = config_loader.select_levels(table, ["V2X-R18"])
        assert [p.horizontal_m for p in picked] == [0.5]

    def test_unknown_level(self):
        with pytest.raises(ConfigurationError):
            config_loader.select_levels(config_loader.load_psl_table(), ["PSL99"])


class TestEnv:
    def test_workers_from_env(self, monkeypatch):
        monkeypatch.setenv("SLPOS_WORKERS", "3")
        assert config_loader.load_env()["workers"] == 3

    def test_bad_workers(self, monkeypatch):
        monkeypatch.setenv("SLPOS_WORKERS", "many")
        with pytest.raises(ConfigurationError):
            config_loader.load_env()
