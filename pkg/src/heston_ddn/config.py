"""INI-style run configuration shared by all CLI commands.

A config file may set any subset of the known keys; unknown sections or keys
are rejected.  Defaults reproduce the standard sampling ranges and network
hyperparameters, so an empty config is a valid, fully reproducible run.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .calibration import AdamCalibConfig
from .dataset import DIMENSION_NAMES, ParameterRanges
from .errors import ConfigError
from .heston import FiniteDiffConfig, QuadratureConfig
from .network import NetworkConfig


@dataclass
class RunConfig:
    seed: int = 0
    ranges: ParameterRanges = field(default_factory=ParameterRanges)
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    fd: FiniteDiffConfig = field(default_factory=FiniteDiffConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    calib: AdamCalibConfig = field(default_factory=AdamCalibConfig)
    n_starts: int = 5


_RANGE_KEYS = {"lambda" if n == "lam" else n: n for n in
               ("kappa", "lam", "sigma", "rho", "v0", "r", "tau", "s0",
                "log_moneyness")}

_NETWORK_KEYS = {
    "hidden_layers": int, "hidden_width": int, "beta": float,
    "dropout_rate": float, "deriv_loss_weight": float,
    "reg_coefficient": float, "penalty": str, "lr0": float,
    "lr_decay": float, "decay_every": int, "batch_size": int, "epochs": int,
}

_QUAD_KEYS = {"n_nodes": int, "u_max": float, "tail_tol": float}
_FD_KEYS = {"h_rel": float, "h_abs": float}
_CALIB_KEYS = {"n_starts": int, "lr0": float, "lr_decay": float,
               "max_iter": int, "grad_tol": float, "step_tol": float}


def load_config(path=None) -> RunConfig:
    """Parse an INI file into a RunConfig; None returns the defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc

    known = {"global", "ranges", "quadrature", "finite_diff", "network",
             "calibration"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")

    def section(name, keys):
        if name not in parser:
            return {}
        bad = set(parser[name]) - set(keys)
        if bad:
            raise ConfigError(f"unknown key(s) in [{name}]: {sorted(bad)}")
        return dict(parser[name])

    try:
        glob = section("global", {"seed"})
        if "seed" in glob:
            cfg.seed = int(glob["seed"])

        raw = section("ranges", _RANGE_KEYS)
        if raw:
            fields = {}
            for key, val in raw.items():
                lo, hi = (float(v) for v in val.split(","))
                fields[_RANGE_KEYS[key]] = (lo, hi)
            cfg.ranges = replace(cfg.ranges, **fields)

        raw = section("quadrature", _QUAD_KEYS)
        if raw:
            cfg.quad = replace(cfg.quad, **{k: _QUAD_KEYS[k](v)
                                            for k, v in raw.items()})
        raw = section("finite_diff", _FD_KEYS)
        if raw:
            cfg.fd = replace(cfg.fd, **{k: _FD_KEYS[k](v)
                                        for k, v in raw.items()})

        raw = section("network", _NETWORK_KEYS)
        if raw:
            vals = {k: _NETWORK_KEYS[k](v) for k, v in raw.items()}
            depth = vals.pop("hidden_layers",
                             len(cfg.network.layer_sizes) - 2)
            width = vals.pop("hidden_width", cfg.network.layer_sizes[1])
            vals["layer_sizes"] = (9,) + (width,) * depth + (1,)
            cfg.network = replace(cfg.network, seed=cfg.seed, **vals)
        else:
            cfg.network = replace(cfg.network, seed=cfg.seed)

        raw = section("calibration", _CALIB_KEYS)
        if raw:
            vals = {k: _CALIB_KEYS[k](v) for k, v in raw.items()}
            cfg.n_starts = vals.pop("n_starts", cfg.n_starts)
            cfg.calib = replace(cfg.calib, **vals)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return cfg


def write_config(path, cfg: RunConfig) -> None:
    """Echo the effective configuration; re-reading reproduces the run."""
    parser = configparser.ConfigParser()
    parser["global"] = {"seed": str(cfg.seed)}
    bounds = cfg.ranges.bounds()
    parser["ranges"] = {
        name: f"{float(bounds[i][0])!r}, {float(bounds[i][1])!r}"
        for i, name in enumerate(DIMENSION_NAMES)}
    parser["quadrature"] = {"n_nodes": str(cfg.quad.n_nodes),
                            "u_max": repr(cfg.quad.u_max),
                            "tail_tol": repr(cfg.quad.tail_tol)}
    parser["finite_diff"] = {"h_rel": repr(cfg.fd.h_rel),
                             "h_abs": repr(cfg.fd.h_abs)}
    net = cfg.network
    parser["network"] = {
        "hidden_layers": str(len(net.layer_sizes) - 2),
        "hidden_width": str(net.layer_sizes[1] if len(net.layer_sizes) > 2
                            else 1),
        "beta": repr(net.beta), "dropout_rate": repr(net.dropout_rate),
        "deriv_loss_weight": repr(net.deriv_loss_weight),
        "reg_coefficient": repr(net.reg_coefficient), "penalty": net.penalty,
        "lr0": repr(net.lr0), "lr_decay": repr(net.lr_decay),
        "decay_every": str(net.decay_every),
        "batch_size": str(net.batch_size), "epochs": str(net.epochs)}
    parser["calibration"] = {
        "n_starts": str(cfg.n_starts), "lr0": repr(cfg.calib.lr0),
        "lr_decay": repr(cfg.calib.lr_decay),
        "max_iter": str(cfg.calib.max_iter),
        "grad_tol": repr(cfg.calib.grad_tol),
        "step_tol": repr(cfg.calib.step_tol)}
    with open(path, "w") as fh:
        parser.write(fh)
