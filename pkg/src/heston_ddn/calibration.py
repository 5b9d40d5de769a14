"""Fitting the five model parameters to option quote sets.

Three interchangeable routes minimize the same mean-squared price error over
a feasible box: multistart Adam on the trained differential network (using
its exact input gradient), the same scheme on a price-only network, and
multistart Nelder-Mead on the semi-analytical pricer.  The box constraint is
enforced with a smooth sigmoid reparameterization, so every optimizer works
in unconstrained coordinates.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import heston, network
from .dataset import ParameterRanges, lhs_matrix
from .errors import CalibrationError, DataFormatError, NumericalError
from .heston import HestonParams, PricingInput, QuadratureConfig

# feasible box for (kappa, lambda, sigma, rho, v0): the sampling ranges
DEFAULT_BOX = ParameterRanges().bounds()[:5]


@dataclass(frozen=True)
class MarketQuote:
    k: float          # strike
    tau: float        # years
    price_mkt: float  # observed mid price
    s0: float         # spot
    r: float          # risk-free rate for this maturity

    def pricing_input(self, params: HestonParams) -> PricingInput:
        return PricingInput(params, s0=self.s0, r=self.r, tau=self.tau,
                            k=self.k)


@dataclass(frozen=True)
class RateCurve:
    """Piecewise-linear zero curve in maturity, flat beyond the last tenor."""

    weeks: np.ndarray   # strictly increasing tenors
    rates: np.ndarray   # annualized decimal rates

    def __post_init__(self):
        if np.any(np.diff(self.weeks) <= 0):
            raise ValueError("tenors must be strictly increasing")
        if len(self.weeks) != len(self.rates) or len(self.weeks) == 0:
            raise ValueError("weeks and rates must have equal nonzero length")

    def rate(self, tau_years: float) -> float:
        w = tau_years * 365.0 / 7.0
        return float(np.interp(w, self.weeks, self.rates))

    @staticmethod
    def from_csv(path) -> "RateCurve":
        weeks, rates = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["weeks", "rate_pct"]:
                raise DataFormatError(
                    f"{path}: expected header 'weeks,rate_pct', "
                    f"got {reader.fieldnames}")
            for row in reader:
                weeks.append(float(row["weeks"]))
                rates.append(float(row["rate_pct"]) / 100.0)
        return RateCurve(np.array(weeks), np.array(rates))


@dataclass
class CalibrationResult:
    theta_star: HestonParams
    objective: float
    mre: float
    residuals: np.ndarray   # per-quote model - market
    n_starts_used: int
    wall_time: float
    method: str


@dataclass(frozen=True)
class AdamCalibConfig:
    lr0: float = 0.25
    lr_decay: float = 0.97       # applied every iteration
    max_iter: int = 2000
    grad_tol: float = 1e-7
    step_tol: float = 1e-10
    # simplex refinement from the best Adam iterate; costs a few hundred
    # network evaluations and pushes the objective to its local floor
    polish: bool = True


def load_quotes(path, rates: RateCurve) -> list:
    """Quote CSV (strike, maturity_days, price, spot); rates come from the
    curve; quotes violating the no-arbitrage band are dropped with a warning."""
    quotes = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["strike", "maturity_days", "price", "spot"]
        if reader.fieldnames != expected:
            raise DataFormatError(f"{path}: expected header "
                                  f"{','.join(expected)}, got {reader.fieldnames}")
        for i, row in enumerate(reader):
            tau = float(row["maturity_days"]) / 365.0
            q = MarketQuote(k=float(row["strike"]), tau=tau,
                            price_mkt=float(row["price"]),
                            s0=float(row["spot"]), r=rates.rate(tau))
            lo = max(q.s0 - q.k * np.exp(-q.r * q.tau), 0.0)
            if not (q.price_mkt > 0 and lo <= q.price_mkt <= q.s0):
                warnings.warn(f"{path}: quote {i} (K={q.k}, tau={q.tau:.4f}) "
                              f"violates no-arbitrage bounds; excluded")
                continue
            quotes.append(q)
    return quotes


def save_quotes(path, quotes) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strike", "maturity_days", "price", "spot"])
        for q in quotes:
            writer.writerow([repr(float(q.k)), repr(float(q.tau * 365.0)),
                             repr(float(q.price_mkt)), repr(float(q.s0))])


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def box_transform(z: np.ndarray, box: np.ndarray = DEFAULT_BOX) -> np.ndarray:
    """Unconstrained 5-vector -> strictly interior parameter vector."""
    z = np.asarray(z, dtype=float)
    return box[:, 0] + (box[:, 1] - box[:, 0]) * _sigmoid(z)


def box_inverse(theta: np.ndarray, box: np.ndarray = DEFAULT_BOX) -> np.ndarray:
    t = (np.asarray(theta, dtype=float) - box[:, 0]) / (box[:, 1] - box[:, 0])
    t = np.clip(t, 1e-12, 1.0 - 1e-12)
    return np.log(t / (1.0 - t))


def box_jacobian(z: np.ndarray, box: np.ndarray = DEFAULT_BOX) -> np.ndarray:
    """Diagonal of d theta / d z."""
    s = _sigmoid(np.asarray(z, dtype=float))
    return (box[:, 1] - box[:, 0]) * s * (1.0 - s)


def objective(theta_h: HestonParams, quotes, pricer) -> float:
    """Mean squared raw-price error of `pricer` over the quote set."""
    res = np.array([pricer(q.pricing_input(theta_h)) - q.price_mkt
                    for q in quotes])
    return float(np.mean(res ** 2))


def mre(model_prices: np.ndarray, quotes, eps_mkt: float = 1e-4) -> float:
    """Mean relative error; quotes below eps_mkt are excluded with a warning."""
    mkt = np.array([q.price_mkt for q in quotes])
    keep = mkt > eps_mkt
    if not np.all(keep):
        warnings.warn(f"{np.sum(~keep)} quote(s) below {eps_mkt} excluded "
                      "from MRE")
    if not np.any(keep):
        raise ValueError("no quotes left for MRE")
    return float(np.mean(np.abs(np.asarray(model_prices)[keep] - mkt[keep])
                         / mkt[keep]))


def _quote_features(quotes) -> np.ndarray:
    """(M, 9) feature matrix with the parameter columns left unset."""
    x = np.empty((len(quotes), 9))
    for i, q in enumerate(quotes):
        x[i, 5:] = (q.r, q.tau, q.s0, q.k)
    return x


def start_points(n_starts: int, seed: int,
                 box: np.ndarray = DEFAULT_BOX) -> np.ndarray:
    """Shared multistart initial parameter sets (LHS over the feasible box)."""
    return lhs_matrix(n_starts, box[:, 0], box[:, 1], seed)


def _adam_in_z(value_grad_fn, z0: np.ndarray, cfg: AdamCalibConfig):
    """Adam with per-iteration learning-rate decay on a bank of unconstrained
    5-vectors; all starts step in lockstep, each freezing on its own
    gradient-norm or step-norm tolerance.  Returns (best z per start,
    best value per start, iterations)."""
    z = np.atleast_2d(np.array(z0, dtype=float, copy=True))
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    val0, _ = value_grad_fn(z)
    best_z, best_val = z.copy(), val0
    active = np.isfinite(val0)
    t = 0
    while t < cfg.max_iter and np.any(active):
        t += 1
        val, g = value_grad_fn(z)
        improved = active & np.isfinite(val) & (val < best_val)
        best_val[improved] = val[improved]
        best_z[improved] = z[improved]
        gnorm = np.linalg.norm(g, axis=1)
        active &= np.isfinite(gnorm) & (gnorm >= cfg.grad_tol)
        m = network.ADAM_BETA1 * m + (1.0 - network.ADAM_BETA1) * g
        v = network.ADAM_BETA2 * v + (1.0 - network.ADAM_BETA2) * g * g
        lr = cfg.lr0 * cfg.lr_decay ** (t - 1)
        step = lr * (m / (1.0 - network.ADAM_BETA1 ** t)) / (
            np.sqrt(v / (1.0 - network.ADAM_BETA2 ** t)) + network.ADAM_EPS)
        z = np.where(active[:, None], z - step, z)
        active &= np.linalg.norm(step, axis=1) >= cfg.step_tol
    return best_z, best_val, t


def _calibrate_network(quotes, model: network.NetworkState, n_starts: int,
                       seed: int, adam_cfg: AdamCalibConfig, method: str,
                       box: np.ndarray = DEFAULT_BOX) -> CalibrationResult:
    t0 = time.perf_counter()
    x1 = _quote_features(quotes)
    mkt = np.array([q.price_mkt for q in quotes])
    m_quotes = len(quotes)

    def value_grad_fn(z):
        """Per-start objective values and z-gradients, one network pass."""
        s = z.shape[0]
        x = np.repeat(x1[None, :, :], s, axis=0)
        x[:, :, :5] = box_transform(z, box)[:, None, :]
        p, g = network.predict_with_gradient_batch(
            model, x.reshape(s * m_quotes, 9))
        res = p.reshape(s, m_quotes) - mkt
        vals = np.mean(res ** 2, axis=1)
        d_theta = 2.0 / m_quotes * np.einsum(
            "sm,smi->si", res, g.reshape(s, m_quotes, 5))
        return vals, d_theta * box_jacobian(z, box)

    def value_fn(z):
        x = x1.copy()
        x[:, :5] = box_transform(z, box)
        p = network.predict_price_batch(model, x)
        return float(np.mean((p - mkt) ** 2))

    starts = start_points(n_starts, seed, box)
    z0 = np.array([box_inverse(theta0, box) for theta0 in starts])
    z_bank, vals, _ = _adam_in_z(value_grad_fn, z0, adam_cfg)
    if not np.any(np.isfinite(vals)):
        raise CalibrationError(
            f"all {n_starts} {method} starts diverged (non-finite objective)")
    i_best = int(np.argmin(np.where(np.isfinite(vals), vals, np.inf)))
    z_star, obj = z_bank[i_best], float(vals[i_best])
    if adam_cfg.polish:
        z_star, obj, _ = _nm_with_restarts(value_fn, z_star, max_iter=1500,
                                           diameter_tol=1e-10,
                                           initial_step_rel=0.01)
    theta_star = HestonParams(*box_transform(z_star, box))
    x1[:, :5] = box_transform(z_star, box)
    prices = network.predict_price_batch(model, x1)
    return CalibrationResult(
        theta_star=theta_star, objective=obj, mre=mre(prices, quotes),
        residuals=prices - mkt, n_starts_used=n_starts,
        wall_time=time.perf_counter() - t0, method=method)


def calibrate_ddn(quotes, model: network.NetworkState, n_starts: int = 5,
                  seed: int = 0,
                  adam_cfg: AdamCalibConfig = AdamCalibConfig(),
                  box: np.ndarray = DEFAULT_BOX) -> CalibrationResult:
    """Multistart Adam on the differential-network pricer."""
    return _calibrate_network(quotes, model, n_starts, seed, adam_cfg,
                              "ddn", box)


def calibrate_fnn(quotes, model_fnn: network.NetworkState, n_starts: int = 5,
                  seed: int = 0,
                  adam_cfg: AdamCalibConfig = AdamCalibConfig(),
                  box: np.ndarray = DEFAULT_BOX) -> CalibrationResult:
    """Same procedure on a price-only network (derivative loss weight zero)."""
    return _calibrate_network(quotes, model_fnn, n_starts, seed, adam_cfg,
                              "fnn", box)


def nelder_mead(f, x0: np.ndarray, max_iter: int = 5000,
                diameter_tol: float = 1e-8, fspread_tol: float = 1e-10,
                initial_step_rel: float = 0.05,
                initial_step_abs: float = 0.00025):
    """Simplex minimizer (reflection 1, expansion 2, contraction 0.5,
    shrink 0.5); returns (x_best, f_best, iterations)."""
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    simplex = [x0.copy()]
    for i in range(n):
        step = initial_step_rel * x0[i] if x0[i] != 0.0 else initial_step_abs
        xi = x0.copy()
        xi[i] += step
        simplex.append(xi)
    simplex = np.array(simplex)
    fvals = np.array([f(x) for x in simplex])
    n_iter = 0
    while n_iter < max_iter:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        diameter = np.max(np.linalg.norm(simplex[1:] - simplex[0], axis=1))
        # f-spread is tested relative to the function scale so that flat
        # objectives stop immediately without freezing near a zero minimum
        f_scale = abs(fvals[0]) + abs(fvals[-1])
        if diameter < diameter_tol or fvals[-1] - fvals[0] <= fspread_tol * f_scale:
            break
        n_iter += 1
        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = f(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = f(xc)
            if fc < min(fr, fvals[-1]):
                simplex[-1], fvals[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fvals[i] = f(simplex[i])
    best = int(np.argmin(fvals))
    return simplex[best], float(fvals[best]), n_iter


def _nm_with_restarts(f, z0: np.ndarray, max_restarts: int = 3, **nm_kwargs):
    """Re-seed the simplex at the incumbent until improvement stops.

    A collapsed simplex can trigger the f-spread test deep inside a curved
    valley; a fresh simplex around the same point escapes that reliably."""
    z, val, total = nelder_mead(f, z0, **nm_kwargs)
    for _ in range(max_restarts):
        z2, val2, iters = nelder_mead(f, z, **nm_kwargs)
        total += iters
        if val2 >= val * (1.0 - 1e-3):
            if val2 < val:
                z, val = z2, val2
            break
        z, val = z2, val2
    return z, val, total


def calibrate_nm(quotes, n_starts: int = 5, seed: int = 0,
                 quad: QuadratureConfig = QuadratureConfig(),
                 box: np.ndarray = DEFAULT_BOX) -> CalibrationResult:
    """Multistart Nelder-Mead on the semi-analytical pricer; consumes the
    same start points as the network calibrations for matching seeds."""
    t0 = time.perf_counter()

    def pricer(inp):
        return heston.call_price(inp, quad)

    def f(z):
        # corners of the box can defeat the quadrature; treat those points
        # as infeasible so the simplex backs away instead of aborting
        try:
            return objective(HestonParams(*box_transform(z, box)), quotes,
                             pricer)
        except NumericalError:
            return np.inf

    starts = start_points(n_starts, seed, box)
    best = None
    for theta0 in starts:
        z0 = box_inverse(theta0, box)
        z, val, _ = _nm_with_restarts(f, z0)
        if np.isfinite(val) and (best is None or val < best[1]):
            best = (z, val)
    if best is None:
        raise CalibrationError(
            f"all {n_starts} Nelder-Mead starts failed (non-finite objective)")
    z_star, obj = best
    theta_star = HestonParams(*box_transform(z_star, box))
    prices = np.array([pricer(q.pricing_input(theta_star)) for q in quotes])
    mkt = np.array([q.price_mkt for q in quotes])
    return CalibrationResult(
        theta_star=theta_star, objective=obj, mre=mre(prices, quotes),
        residuals=prices - mkt, n_starts_used=n_starts,
        wall_time=time.perf_counter() - t0, method="nelder-mead")


def benchmark(quotes, model: network.NetworkState,
              model_fnn: network.NetworkState, n_starts: int = 5,
              seed: int = 0,
              adam_cfg: AdamCalibConfig = AdamCalibConfig(),
              quad: QuadratureConfig = QuadratureConfig()) -> dict:
    """All three methods on the same quotes and start points."""
    return {
        "nelder-mead": calibrate_nm(quotes, n_starts, seed, quad),
        "fnn": calibrate_fnn(quotes, model_fnn, n_starts, seed, adam_cfg),
        "ddn": calibrate_ddn(quotes, model, n_starts, seed, adam_cfg),
    }


def synthetic_quotes(params: HestonParams, s0: float, rates: RateCurve,
                     taus, moneyness, noise: float = 0.0, seed: int = 0,
                     quad: QuadratureConfig = QuadratureConfig()) -> list:
    """Quote grid priced with the semi-analytical formula, with optional
    multiplicative lognormal-free noise (1 + noise * N(0,1))."""
    rng = np.random.default_rng(seed)
    quotes = []
    for tau in taus:
        r = rates.rate(tau)
        for m in moneyness:
            k = s0 * np.exp(m)
            inp = PricingInput(params, s0=s0, r=r, tau=tau, k=k)
            price = heston.call_price(inp, quad)
            if noise > 0.0:
                price *= 1.0 + noise * rng.standard_normal()
            lo = max(s0 - k * np.exp(-r * tau), 0.0)
            price = min(max(price, lo + 1e-12), s0)
            quotes.append(MarketQuote(k=k, tau=tau, price_mkt=price,
                                      s0=s0, r=r))
    return quotes
