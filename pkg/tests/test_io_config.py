import json

import numpy as np
import pytest

from tclagg.config import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    GridSpec,
    config_from_json,
    load_config,
    load_preset,
)
from tclagg.io import (
    WeatherError,
    load_weather,
    read_histogram_csv,
    read_trace_csv,
    write_histogram_csv,
    write_json,
    write_trace_csv,
    write_weather,
)
from tclagg.physics import TclParams


def _weather(tmp_path, text):
    f = tmp_path / "w.csv"
    f.write_text(text)
    return f


class TestWeather:
    def test_two_point_interpolation(self, tmp_path):
        f = _weather(tmp_path, "t_hours,theta_a_c\n0,30\n24,34\n")
        assert load_weather(f, 12.0).tolist() == [30.0, 32.0, 34.0]

    def test_constant_column(self, tmp_path):
        f = _weather(tmp_path, "t_hours,theta_a_c\n0,31.5\n1,31.5\n2,31.5\n")
        assert np.all(load_weather(f, 0.1) == 31.5)

    def test_sub_step_samples(self, tmp_path):
        f = _weather(tmp_path, "t_hours,theta_a_c\n0,30\n0.25,31\n1.0,28\n")
        w = load_weather(f, 0.5)
        # t = 0.5 lies a third of the way from 0.25 to 1.0
        assert w[1] == pytest.approx(31 + (28 - 31) / 3)
        assert w.tolist()[0] == 30.0 and w.tolist()[-1] == 28.0

    def test_fixed_step_count(self, tmp_path):
        f = _weather(tmp_path, "t_hours,theta_a_c\n0,30\n24,34\n")
        assert load_weather(f, 0.1, steps=240).size == 241
        with pytest.raises(WeatherError, match="needed"):
            load_weather(f, 0.1, steps=300)

    @pytest.mark.parametrize(
        "text, match",
        [
            ("t_hours,theta_a_c\n0,30\n1,nan\n", "NaN"),
            ("t_hours,theta_a_c\n0,30\n2,31\n1,32\n", "strictly increasing"),
            ("time,temp\n0,30\n", "header"),
            ("t_hours,theta_a_c\n0,30\n1,abc\n", ":3: cannot parse"),
            ("t_hours,theta_a_c\n", "no data"),
        ],
    )
    def test_errors(self, tmp_path, text, match):
        with pytest.raises(WeatherError, match=match):
            load_weather(_weather(tmp_path, text), 0.5)

    def test_missing_file(self, tmp_path):
        with pytest.raises(WeatherError, match="not found"):
            load_weather(tmp_path / "nope.csv", 0.5)

    def test_write_read(self, tmp_path):
        write_weather(tmp_path / "w.csv", [0.0, 1.0], [30.1, 30.7])
        assert load_weather(tmp_path / "w.csv", 1.0).tolist() == [30.1, 30.7]


class TestTraces:
    def test_trace_round_trip(self, tmp_path):
        Y = np.array([1.5, 2.25, 3.0])
        gamma = np.array([1.0 / 3, 0.1, 2.0])
        write_trace_csv(tmp_path / "t.csv", 0.1, Y, gamma, np.array([30.0, 31.0]))
        back = read_trace_csv(tmp_path / "t.csv")
        assert np.array_equal(back["Y"], Y) and np.array_equal(back["gamma_model"], gamma)
        assert back["theta_a"].tolist() == [30.0, 31.0, 31.0]

    def test_histogram_round_trip(self, tmp_path):
        H = np.arange(24).reshape(3, 8)
        write_histogram_csv(tmp_path / "h.csv", H)
        assert np.array_equal(read_histogram_csv(tmp_path / "h.csv"), H)
        assert (tmp_path / "h.csv").read_text().splitlines()[1] == "0,off,1,0"

    def test_json_is_sorted_and_plain(self, tmp_path):
        write_json(tmp_path / "r.json", {"b": np.float64(1.5), "a": [np.int64(2), np.bool_(True)], "c": np.inf})
        text = (tmp_path / "r.json").read_text()
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": [2, True], "b": 1.5, "c": "inf"}


class TestConfig:
    def test_defaults_validate(self):
        cfg = ExperimentConfig()
        assert cfg.grid.build(cfg.params).N == 51

    def test_presets_load(self):
        for name in PRESETS:
            assert load_preset(name).name == name
        with pytest.raises(ConfigError, match="unknown preset"):
            load_preset("fig9")

    def test_json_round_trip(self):
        cfg = load_preset("fig6")
        back = config_from_json(cfg.to_json(), base_dir=cfg.base_dir)
        assert back == cfg

    def test_error_names_line(self):
        text = '{\n  "name": "x",\n  "n_tcl": 0\n}\n'
        with pytest.raises(ConfigError, match=r"<config>:3: n_tcl"):
            config_from_json(text)

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match=r":2: unknown field 'nct'"):
            config_from_json('{\n  "nct": 5\n}')

    def test_bad_json(self):
        with pytest.raises(ConfigError, match=r"<config>:3: Expecting value"):
            config_from_json('{\n  "name": \n}')

    def test_bad_params(self):
        with pytest.raises(ConfigError, match="params"):
            config_from_json('{"params": {"R": -1}}')

    @pytest.mark.parametrize(
        "field, value",
        [("weather", {"kind": "csv"}), ("policy", {"kind": "magic"}), ("init", {"kind": "interval"}),
         ("reference", {"amplitudes_kw": [1.0], "periods_h": []}), ("dt_cfl_fraction", 1.5)],
    )
    def test_cross_field_checks(self, field, value):
        with pytest.raises(ConfigError, match=field):
            ExperimentConfig(**{field: value})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "none.json")

    def test_relative_paths(self, tmp_path):
        (tmp_path / "c.json").write_text('{"weather": {"kind": "csv", "path": "w.csv"}}')
        cfg = load_config(tmp_path / "c.json")
        assert cfg.resolve_path("w.csv") == tmp_path / "w.csv"

    def test_grid_spec_variants(self):
        p = TclParams()
        assert GridSpec(N=30, n_deadband=15).build(p).n_deadband == 15
        assert GridSpec(N=41, lambda_low=17.0, lambda_high=23.0).build(p).delta_lambda == pytest.approx(0.1)
        with pytest.raises(ValueError):
            GridSpec(N=41, lambda_low=17.0).build(p)
