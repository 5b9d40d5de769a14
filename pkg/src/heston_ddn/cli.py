"""Command-line front end: data generation, training, evaluation, pricing,
calibration, and three-way benchmarks.  Every tabular output is CSV."""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import dataset as ds
from . import heston, network
from .config import RunConfig, load_config, write_config
from .errors import (CalibrationError, ConfigError, DataFormatError,
                     HestonDdnError, NumericalError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_DATA = 4


def _echo_config(out_path, cfg: RunConfig) -> None:
    out_path = Path(out_path)
    out_dir = out_path if out_path.is_dir() else out_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(out_dir / "effective-config.ini", cfg)


def cmd_generate_data(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    stats: dict = {}
    samples = ds.build_dataset(args.n, cfg.ranges, cfg.seed, cfg.quad, cfg.fd,
                               stats=stats)
    split = ds.split_dataset(args.n, cfg.seed)
    scalers = ds.fit_scalers(samples, split)
    data = ds.Dataset(samples=samples, ranges=cfg.ranges, seed=cfg.seed,
                      scalers=scalers, split=split)
    _echo_config(args.out, cfg)
    ds.save_dataset(args.out, data)
    if args.csv:
        ds.export_csv(args.csv, samples)
    print(f"wrote {args.n} labeled samples to {args.out}")
    print(f"split: {len(split.train)} train / {len(split.validation)} "
          f"validation / {len(split.test)} test")
    print(f"label replacements: {stats['replacements']} "
          "(generation aborts above a 0.1% rate)")
    return EXIT_OK


def _test_losses(state, data: ds.Dataset):
    x, p, g = ds.samples_to_arrays(data.samples)
    sc = state.scalers
    out = {}
    for name, idx in (("train", data.split.train),
                      ("validation", data.split.validation),
                      ("test", data.split.test)):
        bd = network.loss(state, sc.normalize_features(x[idx]),
                          sc.normalize_price(p[idx]),
                          sc.scale_grad(g[idx]))
        out[name] = bd
    return out


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.network = replace(cfg.network, seed=args.seed)
    if args.fnn:
        cfg.network = replace(cfg.network, deriv_loss_weight=0.0)
    data = ds.load_dataset(args.data)
    if data.split is None or data.scalers is None:
        raise DataFormatError(f"{args.data}: dataset lacks split/scalers")
    x, p, g = ds.samples_to_arrays(data.samples)
    t0 = time.time()
    state, history = network.train(x, p, g, data.split, data.scalers,
                                   cfg.network, verbose=args.verbose)
    wall = time.time() - t0
    _echo_config(args.out_model, cfg)
    network.save_model(args.out_model, state)
    network.history_to_csv(history, str(args.out_model) + ".history.csv")
    losses = _test_losses(state, data)
    kind = "fnn" if args.fnn else "ddn"
    print(f"trained {kind} model in {wall:.1f}s -> {args.out_model}")
    print("partition,loss_total,loss_price,loss_deriv")
    for name, bd in losses.items():
        print(f"{name},{bd.total:.6e},{bd.price_term:.6e},"
              f"{bd.derivative_term:.6e}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = ds.load_dataset(args.data)
    if args.grid:
        return _evaluate_grid(args, data)
    if not args.model:
        raise ConfigError("--model is required unless --grid is given")
    state = network.load_model(args.model)
    losses = _test_losses(state, data)
    bd = losses["test"]
    print(f"test_mse_price,{bd.price_term:.6e}")
    print(f"test_mse_deriv,{bd.derivative_term:.6e}")
    print(f"test_mse_total,{bd.price_term + bd.derivative_term:.6e}")
    return EXIT_OK


def _evaluate_grid(args, data: ds.Dataset) -> int:
    cfg = load_config(args.config)
    x, p, g = ds.samples_to_arrays(data.samples)
    rows = []
    for depth in args.grid_depths:
        for width in args.grid_widths:
            net_cfg = replace(cfg.network,
                              layer_sizes=(9,) + (width,) * depth + (1,),
                              seed=cfg.seed)
            state, _ = network.train(x, p, g, data.split, data.scalers,
                                     net_cfg)
            bd = _test_losses(state, data)["test"]
            rows.append((depth, width,
                         bd.price_term + bd.derivative_term))
            print(f"depth {depth} width {width}: "
                  f"test error {rows[-1][2]:.3e}")
    out = args.out or "arch-grid.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hidden_layers", "hidden_width", "test_error"])
        writer.writerows(rows)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_price(args) -> int:
    cfg = load_config(args.config)
    kappa, lam, sigma, rho, v0 = args.params
    inp = heston.PricingInput(
        heston.HestonParams(kappa, lam, sigma, rho, v0),
        s0=args.spot, r=args.rate, tau=args.tau, k=args.strike)
    price = heston.call_price(inp, cfg.quad)
    grad = heston.price_gradient(inp, cfg.quad, cfg.fd)
    print(f"semi_analytical_price,{price!r}")
    print("semi_analytical_gradient," + ",".join(repr(float(v))
                                                 for v in grad))
    if args.model:
        state = network.load_model(args.model)
        net_price, net_grad = network.predict_with_gradient(state, inp)
        print(f"network_price,{net_price!r}")
        print("network_gradient," + ",".join(repr(float(v))
                                             for v in net_grad))
        print(f"absolute_gap,{abs(net_price - price)!r}")
        rel = abs(net_price - price) / price if price > 0 else float("inf")
        print(f"relative_gap,{rel!r}")
    return EXIT_OK


def _write_calibration_outputs(out_dir, result, quotes) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"residuals-{result.method}.csv", "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strike", "maturity_days", "price_mkt",
                         "price_model", "residual"])
        for q, res in zip(quotes, result.residuals):
            writer.writerow([repr(float(q.k)), repr(float(q.tau * 365.0)),
                             repr(float(q.price_mkt)),
                             repr(float(q.price_mkt + res)),
                             repr(float(res))])
    # fitted-vs-market curve per maturity
    by_tau = {}
    for q, res in zip(quotes, result.residuals):
        by_tau.setdefault(round(q.tau * 365.0), []).append(
            (q.k, q.price_mkt, q.price_mkt + res))
    with open(out_dir / f"fit-curves-{result.method}.csv", "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["maturity_days", "strike", "price_mkt",
                         "price_model"])
        for tau_d in sorted(by_tau):
            for k, mkt, model in sorted(by_tau[tau_d]):
                writer.writerow([tau_d, repr(float(k)), repr(float(mkt)),
                                 repr(float(model))])


def _print_result(result) -> None:
    t = result.theta_star
    print("method,kappa,lambda,sigma,rho,v0,objective,mre,wall_time_s")
    print(f"{result.method},{t.kappa:.4f},{t.lam:.4f},{t.sigma:.4f},"
          f"{t.rho:.4f},{t.v0:.4f},{result.objective:.6e},"
          f"{result.mre:.4f},{result.wall_time:.2f}")


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    rates = cal.RateCurve.from_csv(args.rates)
    quotes = cal.load_quotes(args.quotes, rates)
    if not quotes:
        raise DataFormatError(f"{args.quotes}: no usable quotes")
    if args.method in ("ddn", "fnn"):
        if not args.model:
            raise ConfigError(f"--model is required for method {args.method}")
        state = network.load_model(args.model)
        fn = cal.calibrate_ddn if args.method == "ddn" else cal.calibrate_fnn
        result = fn(quotes, state, args.starts, seed, cfg.calib)
    else:
        result = cal.calibrate_nm(quotes, args.starts, seed, cfg.quad)
    _print_result(result)
    if args.out_dir:
        _echo_config(args.out_dir, cfg)
        _write_calibration_outputs(args.out_dir, result, quotes)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    rates = cal.RateCurve.from_csv(args.rates)
    quotes = cal.load_quotes(args.quotes, rates)
    if not quotes:
        raise DataFormatError(f"{args.quotes}: no usable quotes")
    model = network.load_model(args.model)
    model_fnn = network.load_model(args.model_fnn)
    results = cal.benchmark(quotes, model, model_fnn, args.starts, seed,
                            cfg.calib, cfg.quad)
    out = args.out or "benchmark.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "kappa", "lambda", "sigma", "rho", "v0",
                         "objective", "mre", "wall_time_s"])
        for name in ("nelder-mead", "fnn", "ddn"):
            res = results[name]
            t = res.theta_star
            writer.writerow([name] + [repr(float(v)) for v in
                                      (t.kappa, t.lam, t.sigma, t.rho, t.v0,
                                       res.objective, res.mre,
                                       res.wall_time)])
    for name in ("nelder-mead", "fnn", "ddn"):
        res = results[name]
        print(f"{name}: mre={res.mre:.4f} objective={res.objective:.4e} "
              f"time={res.wall_time:.2f}s")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_synth_market(args) -> int:
    cfg = load_config(args.config)
    kappa, lam, sigma, rho, v0 = args.theta
    params = heston.HestonParams(kappa, lam, sigma, rho, v0)
    if args.rates:
        rates = cal.RateCurve.from_csv(args.rates)
    else:
        rates = cal.RateCurve(np.array([4.0, 52.0]),
                              np.array([args.rate, args.rate]))
    n_tau = max(1, round(np.sqrt(args.n_quotes / 2)))
    n_k = int(np.ceil(args.n_quotes / n_tau))
    taus = np.linspace(args.tau_min, args.tau_max, n_tau)
    moneyness = np.linspace(args.m_min, args.m_max, n_k)
    quotes = cal.synthetic_quotes(params, args.spot, rates, taus, moneyness,
                                  noise=args.noise, seed=args.seed,
                                  quad=cfg.quad)[:args.n_quotes]
    cal.save_quotes(args.out, quotes)
    print(f"wrote {len(quotes)} synthetic quotes to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heston-ddn",
        description="Heston pricing and differential-network calibration")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None,
                       help="INI config file (defaults are built in)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the global seed")

    p = sub.add_parser("generate-data", help="LHS-sample and label a dataset")
    add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="also export a CSV copy")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a model on a dataset file")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--fnn", action="store_true",
                   help="train the price-only baseline "
                        "(derivative loss weight 0)")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="test-set error of a trained model")
    add_common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", action="store_true",
                   help="sweep architectures instead of evaluating --model")
    p.add_argument("--grid-depths", type=int, nargs="+",
                   default=[3, 4, 5, 6, 7, 8])
    p.add_argument("--grid-widths", type=int, nargs="+",
                   default=[50, 100, 150, 200])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("price", help="price one call option")
    add_common(p)
    p.add_argument("--params", type=float, nargs=5, required=True,
                   metavar=("KAPPA", "LAMBDA", "SIGMA", "RHO", "V0"))
    p.add_argument("--spot", type=float, required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("calibrate", help="fit parameters to a quote file")
    add_common(p)
    p.add_argument("--quotes", required=True)
    p.add_argument("--rates", required=True)
    p.add_argument("--method", choices=["ddn", "fnn", "nm"], required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("benchmark", help="three-method comparison")
    add_common(p)
    p.add_argument("--quotes", required=True)
    p.add_argument("--rates", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--model-fnn", required=True)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("synth-market", help="generate a synthetic quote CSV")
    add_common(p)
    p.add_argument("--theta", type=float, nargs=5, required=True,
                   metavar=("KAPPA", "LAMBDA", "SIGMA", "RHO", "V0"))
    p.add_argument("--spot", type=float, default=100.0)
    p.add_argument("--rate", type=float, default=0.03,
                   help="flat rate when no --rates curve is given")
    p.add_argument("--rates", default=None)
    p.add_argument("--n-quotes", type=int, default=100)
    p.add_argument("--tau-min", type=float, default=0.1)
    p.add_argument("--tau-max", type=float, default=1.0)
    p.add_argument("--m-min", type=float, default=-0.4)
    p.add_argument("--m-max", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_market)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, CalibrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HestonDdnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
