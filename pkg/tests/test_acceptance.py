"""Acceptance gate: ten criteria, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  The model-training fixtures are module-scoped, so the desk-scale
network is trained once and shared by every criterion that needs it.
"""

import copy
import time

import numpy as np
import pytest

from heston_ddn import network
from heston_ddn.calibration import (AdamCalibConfig, MarketQuote, RateCurve,
                                    _quote_features, calibrate_ddn,
                                    calibrate_fnn, calibrate_nm,
                                    synthetic_quotes)
from heston_ddn.dataset import (ParameterRanges, build_dataset, fit_scalers,
                                lhs_matrix, lhs_sample, load_dataset,
                                samples_to_arrays, save_dataset, split_dataset,
                                Dataset, to_pricing_input)
from heston_ddn.heston import (HestonParams, PricingInput, QuadratureConfig,
                               call_price, put_price)
from heston_ddn.network import (NetworkConfig, forward, init_xavier,
                                input_gradient, load_model, loss,
                                param_gradients, save_model, train)

from conftest import random_pricing_inputs
from mc_oracle import mc_call_price

QUAD = QuadratureConfig()


def report(num, name, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"\ncriterion {num:2d} ({name}): {status} [{detail}]")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


# ---------------------------------------------------------------------------
# shared trained models


@pytest.fixture(scope="module")
def desk_run():
    """10k-sample dataset over the full sampling box, default network."""
    samples = build_dataset(10_000, seed=123)
    split = split_dataset(10_000, seed=123)
    scalers = fit_scalers(samples, split)
    x, p, g = samples_to_arrays(samples)
    cfg = NetworkConfig(seed=123)
    t0 = time.perf_counter()
    state, _ = train(x, p, g, split, scalers, cfg)
    wall = time.perf_counter() - t0
    xt = scalers.normalize_features(x[split.test])
    pt = scalers.normalize_price(p[split.test])
    gt = scalers.scale_grad(g[split.test])
    bd = loss(state, xt, pt, gt)
    return {"state": state, "test_loss": bd, "wall": wall}


MARKET_THETA = HestonParams(2.0, 0.09, 0.3, -0.5, 0.09)
MARKET_RATES = RateCurve(np.array([1.0, 52.0]), np.array([0.03, 0.03]))
MARKET_TAUS = np.linspace(0.15, 0.9, 10)
MARKET_MONEYNESS = np.linspace(-0.3, 0.0, 10)

# Feasible parameter region shared by every calibration method in the
# benchmark scenarios.  MARKET_THETA is interior to it; the networks are
# trained on the same region so their accuracy budget is spent where the
# optimizers actually search.
CALIB_BOX = np.array([[0.5, 4.0], [0.02, 0.5], [0.15, 0.8],
                      [-0.9, -0.1], [0.02, 0.4]])


def market_quotes(noise, seed):
    return synthetic_quotes(MARKET_THETA, 100.0, MARKET_RATES, MARKET_TAUS,
                            MARKET_MONEYNESS, noise=noise, seed=seed)


@pytest.fixture(scope="module")
def market_models():
    """DDN and price-only (FNN) networks trained on a market-tailored box."""
    ranges = ParameterRanges(
        kappa=tuple(CALIB_BOX[0]), lam=tuple(CALIB_BOX[1]),
        sigma=tuple(CALIB_BOX[2]), rho=tuple(CALIB_BOX[3]),
        v0=tuple(CALIB_BOX[4]),
        r=(0.0, 0.05), tau=(0.05, 1.0),
        s0=(95.0, 105.0), log_moneyness=(-0.5, 0.1))
    samples = build_dataset(30_000, ranges, seed=7)
    split = split_dataset(30_000, seed=7)
    scalers = fit_scalers(samples, split)
    x, p, g = samples_to_arrays(samples)
    cfg = NetworkConfig(seed=7, dropout_rate=0.0, epochs=400)
    ddn, _ = train(x, p, g, split, scalers, cfg)
    from dataclasses import replace
    fnn, _ = train(x, p, g, split, scalers,
                   replace(cfg, deriv_loss_weight=0.0, epochs=200))
    return {"ddn": ddn, "fnn": fnn}


# ---------------------------------------------------------------------------


def test_criterion_01_parity_property():
    t0 = time.perf_counter()
    max_resid = 0.0
    for inp in random_pricing_inputs(1000, seed=1001):
        c = call_price(inp, QUAD)
        p = put_price(inp, QUAD)
        resid = abs(c - p - inp.s0 + inp.k * np.exp(-inp.r * inp.tau))
        max_resid = max(max_resid, resid / inp.s0)
    wall = time.perf_counter() - t0
    ok = max_resid < 1e-8 and wall < 10.0
    report(1, "put-call parity", ok,
           f"max residual {max_resid:.2e} S0, {wall:.1f}s")


def test_criterion_02_mc_oracle():
    cases = [
        PricingInput(HestonParams(2.0, 0.09, 0.3, -0.5, 0.09),
                     s0=100.0, r=0.03, tau=0.5, k=100.0),
        # Feller-violating: 2*0.5*0.04 = 0.04 < 0.7^2
        PricingInput(HestonParams(0.5, 0.04, 0.7, -0.7, 0.04),
                     s0=100.0, r=0.02, tau=0.75, k=110.0),
        PricingInput(HestonParams(1.0, 0.16, 0.4, -0.3, 0.09),
                     s0=100.0, r=0.05, tau=0.25, k=90.0),
        PricingInput(HestonParams(4.0, 0.25, 0.9, -0.9, 0.36),
                     s0=100.0, r=0.0, tau=1.0, k=120.0),
        PricingInput(HestonParams(0.1, 0.5, 0.2, 0.0, 0.25),
                     s0=100.0, r=0.10, tau=0.5, k=100.0),
    ]
    assert any(c.heston.feller() < 0 for c in cases)
    t0 = time.perf_counter()
    worst = 0.0
    for i, inp in enumerate(cases):
        exact = call_price(inp, QUAD)
        est, se = mc_call_price(inp, seed=2000 + i)
        worst = max(worst, abs(exact - est) / se)
    wall = time.perf_counter() - t0
    ok = worst < 3.0 and wall < 300.0
    report(2, "pricer vs MC oracle", ok,
           f"worst gap {worst:.2f} SE, {wall:.0f}s")


def test_criterion_03_input_gradient():
    rng = np.random.default_rng(77)
    h = 1e-6
    worst = 0.0
    for trial in range(10):
        cfg = NetworkConfig(layer_sizes=(9, 12, 12, 1), dropout_rate=0.0)
        state = init_xavier(cfg, seed=trial)
        xs = rng.random((10, 9))
        _, trace = forward(state, xs)
        g = input_gradient(state, trace)
        for i in range(10):
            j = int(rng.integers(9))
            xp, xm = xs[i].copy(), xs[i].copy()
            xp[j] += h
            xm[j] -= h
            fd = (forward(state, xp[None, :])[0][0]
                  - forward(state, xm[None, :])[0][0]) / (2 * h)
            worst = max(worst, abs(g[i, j] - fd) / max(abs(fd), 1e-8))
    ok = worst < 1e-6
    report(3, "differentiation layer vs FD", ok,
           f"worst relative error {worst:.2e} over 100 pairs")


def test_criterion_04_double_backprop():
    cfg = NetworkConfig(layer_sizes=(9, 8, 8, 1), dropout_rate=0.0,
                        deriv_loss_weight=0.8, reg_coefficient=1e-3)
    rng = np.random.default_rng(5)
    x = rng.random((6, 9))
    p = rng.random(6)
    g = rng.random((6, 5))
    state = init_xavier(cfg, seed=55)
    _, gw, gb = param_gradients(state, x, p, g)
    flat = np.concatenate([a.ravel() for a in gw + gb])
    arrays = state.weights + state.biases
    offsets = np.cumsum([0] + [a.size for a in arrays])
    h = 1e-6
    worst = 0.0
    for idx in range(flat.size):
        ai = np.searchsorted(offsets, idx, side="right") - 1
        local = idx - offsets[ai]
        s2 = copy.deepcopy(state)
        arr = (s2.weights + s2.biases)[ai]
        arr.ravel()[local] += h
        fp = loss(s2, x, p, g).total
        arr.ravel()[local] -= 2 * h
        fm = loss(s2, x, p, g).total
        fd = (fp - fm) / (2 * h)
        worst = max(worst, abs(flat[idx] - fd) / max(abs(fd), 1e-6))
    ok = worst < 1e-4
    report(4, "double backprop vs FD", ok,
           f"worst relative error {worst:.2e} over all "
           f"{flat.size} parameters")


def test_criterion_05_desk_scale_training(desk_run):
    mse = desk_run["test_loss"].price_term
    wall = desk_run["wall"]
    ok = mse <= 5e-3 and wall < 1800.0
    report(5, "desk-scale training", ok,
           f"normalized test price MSE {mse:.2e}, train {wall:.0f}s")


def test_criterion_06_ddn_vs_fnn_ordering(market_models):
    mres_ddn, mres_fnn = [], []
    for seed in range(5):
        quotes = market_quotes(noise=0.005, seed=seed)
        mres_ddn.append(calibrate_ddn(quotes, market_models["ddn"],
                                      n_starts=5, seed=seed,
                                      box=CALIB_BOX).mre)
        mres_fnn.append(calibrate_fnn(quotes, market_models["fnn"],
                                      n_starts=5, seed=seed,
                                      box=CALIB_BOX).mre)
    med_ddn = float(np.median(mres_ddn))
    med_fnn = float(np.median(mres_fnn))
    ok = med_ddn < med_fnn and med_ddn < 0.05
    report(6, "DDN-vs-FNN ordering", ok,
           f"median MRE ddn {med_ddn:.4f} vs fnn {med_fnn:.4f}")


@pytest.fixture(scope="module")
def benchmark_run(market_models):
    quotes = market_quotes(noise=0.005, seed=0)
    res_nm = calibrate_nm(quotes, n_starts=5, seed=0, quad=QUAD,
                          box=CALIB_BOX)
    res_ddn = calibrate_ddn(quotes, market_models["ddn"], n_starts=5, seed=0,
                            box=CALIB_BOX)
    return {"nm": res_nm, "ddn": res_ddn}


def test_criterion_07_accuracy_parity(benchmark_run):
    gap = abs(benchmark_run["ddn"].mre - benchmark_run["nm"].mre)
    ok = gap < 0.01
    report(7, "accuracy parity with Nelder-Mead", ok,
           f"|MRE_DDN - MRE_NM| = {gap:.4f} "
           f"(ddn {benchmark_run['ddn'].mre:.4f}, "
           f"nm {benchmark_run['nm'].mre:.4f})")


def test_criterion_08_speed_ordering(benchmark_run):
    t_nm = benchmark_run["nm"].wall_time
    t_ddn = benchmark_run["ddn"].wall_time
    ratio = t_nm / t_ddn
    ok = t_ddn < t_nm and ratio >= 5.0
    report(8, "speed ordering", ok,
           f"nm {t_nm:.1f}s vs ddn {t_ddn:.1f}s, ratio {ratio:.1f}x")


def test_criterion_09_self_consistency(market_models):
    ddn = market_models["ddn"]
    base = synthetic_quotes(MARKET_THETA, 100.0, MARKET_RATES,
                            np.linspace(0.1, 0.9, 10),
                            np.linspace(-0.35, 0.0, 5))
    x = _quote_features(base)
    x[:, :5] = MARKET_THETA.as_array()
    p = network.predict_price_batch(ddn, x)
    quotes = [MarketQuote(k=q.k, tau=q.tau, price_mkt=pi, s0=q.s0, r=q.r)
              for q, pi in zip(base, p)]
    res = calibrate_ddn(quotes, ddn, n_starts=5, seed=0, box=CALIB_BOX)
    ok = res.objective < 1e-10
    report(9, "self-consistency", ok, f"objective {res.objective:.2e}")


def test_criterion_10_property_suites(tmp_path):
    t0 = time.perf_counter()
    # LHS stratification across sizes
    for n in (1, 7, 100, 1000):
        x = lhs_matrix(n, np.array([0.0]), np.array([1.0]), seed=n)
        assert sorted(np.floor(x[:, 0] * n)) == list(range(n))
    # determinism of sampling, splitting, and labeling
    r = ParameterRanges()
    assert np.array_equal(lhs_sample(64, r, seed=5), lhs_sample(64, r, seed=5))
    a = build_dataset(10, seed=31)
    b = build_dataset(10, seed=31)
    assert all(sa.price == sb.price and np.array_equal(sa.grad, sb.grad)
               for sa, sb in zip(a, b))
    s1, s2 = split_dataset(500, seed=3), split_dataset(500, seed=3)
    assert np.array_equal(s1.train, s2.train)
    # dataset and model round-trips
    split = split_dataset(10, seed=31)
    sc = fit_scalers(a, split)
    ds_path = tmp_path / "d.bin"
    save_dataset(ds_path, Dataset(samples=a, ranges=r, seed=31,
                                  scalers=sc, split=split))
    back = load_dataset(ds_path)
    x0, p0, g0 = samples_to_arrays(a)
    x1, p1, g1 = samples_to_arrays(back.samples)
    assert np.array_equal(x0, x1) and np.array_equal(p0, p1)
    assert np.array_equal(g0, g1)
    cfg = NetworkConfig(layer_sizes=(9, 8, 1), dropout_rate=0.0)
    state = init_xavier(cfg, seed=1)
    state.scalers = sc
    m_path = tmp_path / "m.bin"
    save_model(m_path, state)
    back_m = load_model(m_path)
    assert all(np.array_equal(w1, w2) for w1, w2 in
               zip(state.weights, back_m.weights))
    wall = time.perf_counter() - t0
    ok = wall < 60.0
    report(10, "stratification and round-trip invariants", ok,
           f"all properties hold, {wall:.1f}s")
