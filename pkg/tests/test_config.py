import pytest

from heston_ddn.config import RunConfig, load_config, write_config
from heston_ddn.errors import ConfigError


class TestLoadConfig:
    def test_none_gives_defaults(self):
        cfg = load_config(None)
        assert cfg.seed == 0
        assert cfg.network.layer_sizes == (9,) + (150,) * 6 + (1,)
        assert cfg.n_starts == 5

    def test_partial_overrides(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text(
            "[global]\nseed = 42\n"
            "[ranges]\nlambda = 0.0, 0.5\ns0 = 95, 105\n"
            "[network]\nhidden_layers = 3\nhidden_width = 32\nepochs = 7\n"
            "[quadrature]\nn_nodes = 64\n"
            "[calibration]\nn_starts = 3\nlr0 = 0.1\n")
        cfg = load_config(path)
        assert cfg.seed == 42
        assert cfg.network.seed == 42
        assert cfg.ranges.lam == (0.0, 0.5)
        assert cfg.ranges.s0 == (95.0, 105.0)
        assert cfg.ranges.kappa == (0.005, 5.0)   # untouched default
        assert cfg.network.layer_sizes == (9, 32, 32, 32, 1)
        assert cfg.network.epochs == 7
        assert cfg.quad.n_nodes == 64
        assert cfg.n_starts == 3
        assert cfg.calib.lr0 == 0.1

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[optimizer]\nlr = 0.1\n")
        with pytest.raises(ConfigError, match="section"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[network]\nwidth = 10\n")
        with pytest.raises(ConfigError, match="key"):
            load_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[global]\nseed = twelve\n")
        with pytest.raises(ConfigError, match="invalid"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.ini")

    def test_malformed_ini(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("seed = 3\n")   # key before any section header
        with pytest.raises(ConfigError, match="malformed"):
            load_config(path)


class TestWriteConfig:
    def test_roundtrip_is_identity(self, tmp_path):
        src = tmp_path / "in.ini"
        src.write_text(
            "[global]\nseed = 9\n"
            "[ranges]\nrho = -0.9, -0.1\n"
            "[network]\nhidden_layers = 2\nhidden_width = 16\n"
            "lr0 = 0.005\npenalty = l2\n"
            "[finite_diff]\nh_rel = 0.001\n"
            "[calibration]\nmax_iter = 500\n")
        cfg = load_config(src)
        echo = tmp_path / "out.ini"
        write_config(echo, cfg)
        cfg2 = load_config(echo)
        assert cfg2 == cfg

    def test_default_roundtrip(self, tmp_path):
        echo = tmp_path / "out.ini"
        write_config(echo, RunConfig())
        assert load_config(echo) == RunConfig()
