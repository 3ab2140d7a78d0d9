import math

import numpy as np
import pytest

from widthlab import csvio
from widthlab.config import SEED_ENV, DatasetSpec, ExperimentConfig, load_config
from widthlab.priorcore import Activation


class TestCsv:
    def test_float_round_trip(self, tmp_path):
        vals = [0.1, 1 / 3, -2.5e-300, 1e308, math.pi, 0.0]
        path = csvio.write_rows(tmp_path / "sub" / "a.csv", ["v"], [[v] for v in vals])
        header, rows = csvio.read_rows(path)
        assert header == ["v"]
        assert [float(r[0]) for r in rows] == vals

    def test_special_values(self):
        assert csvio.format_value(True) == "true"
        assert csvio.format_value(False) == "false"
        assert csvio.format_value(float("nan")) == "nan"
        assert csvio.format_value(float("-inf")) == "-inf"
        assert csvio.format_value(np.float64(0.5)) == "0.5"
        assert csvio.format_value(7) == "7"
        assert csvio.parse_value("true", bool) is True
        assert math.isnan(csvio.parse_value("nan", float))

    def test_unix_newlines(self, tmp_path):
        path = csvio.write_rows(tmp_path / "a.csv", ["a", "b"], [[1, "x"]])
        assert path.read_bytes() == b"a,b\n1,x\n"

    def test_read_table(self, tmp_path):
        path = csvio.write_rows(tmp_path / "a.csv", ["a", "b"], [[1, 2], [3, 4]])
        assert csvio.read_table(path) == {"a": ["1", "3"], "b": ["2", "4"]}


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.prior.sigma2_noise == 0.01 and cfg.prior.sigma2_w1 == 2.0
        assert cfg.grid_points == 50 and cfg.train.epochs == 20000

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(widths=(10, 10))
        with pytest.raises(ValueError):
            ExperimentConfig(widths=())
        with pytest.raises(ValueError):
            ExperimentConfig(seeds=())
        with pytest.raises(ValueError):
            ExperimentConfig(activation="sigmoid")
        with pytest.raises(ValueError):
            DatasetSpec("mnist")
        with pytest.raises(ValueError):
            DatasetSpec("csv:")

    def test_label(self):
        assert DatasetSpec("csv:/data/marathon.csv").label == "marathon"
        assert DatasetSpec("sine").label == "sine"

    def test_ini(self, tmp_path, monkeypatch):
        monkeypatch.delenv(SEED_ENV, raising=False)
        ini = tmp_path / "exp.ini"
        ini.write_text(
            "# sweep over small widths\n"
            "[dataset]\nname = sine\nn_points = 7 ; inline comment\n"
            "[sweep]\nwidths = 4, 8,16\nseeds = 3 4\nactivation = tanh\n"
            "[prior]\nsigma2_noise = 0.05\n"
            "[train]\nepochs = 12\nclip_norm = 5\n"
            "[grid]\nn_points = 9\n"
            "[sampling]\nfunction_samples = 30\n"
            "[output]\ndir = somewhere\n"
        )
        cfg = load_config(ini)
        assert cfg.dataset == DatasetSpec("sine", n_points=7)
        assert cfg.widths == (4, 8, 16) and cfg.seeds == (3, 4)
        assert cfg.activation is Activation.TANH
        assert cfg.prior.sigma2_noise == 0.05 and cfg.prior.sigma2_w1 == 2.0
        assert cfg.train.epochs == 12 and cfg.train.clip_norm == 5.0
        assert cfg.grid_points == 9 and cfg.function_samples == 30 and cfg.out_dir == "somewhere"

    @pytest.mark.parametrize("text", ["[bogus]\na = 1\n", "[train]\nepochz = 3\n", "[train]\nepochs = many\n"])
    def test_ini_rejects(self, tmp_path, text):
        ini = tmp_path / "bad.ini"
        ini.write_text(text)
        with pytest.raises(ValueError):
            load_config(ini)

    def test_env_seed(self, tmp_path, monkeypatch):
        ini = tmp_path / "exp.ini"
        ini.write_text("[sweep]\nseeds = 1, 2\n")
        monkeypatch.setenv(SEED_ENV, "9")
        assert load_config(ini).seeds == (9,)
        monkeypatch.setenv(SEED_ENV, "x")
        with pytest.raises(ValueError):
            load_config(ini)
        monkeypatch.delenv(SEED_ENV)
        assert load_config(ini).seeds == (1, 2)
