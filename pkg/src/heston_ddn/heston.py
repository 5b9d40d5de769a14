"""Semi-analytical Heston call/put pricing via Fourier quadrature.

The characteristic function uses the branch-cut-safe (little trap)
parameterization, so the complex logarithm never has to be tracked across
Riemann sheets.  Prices are obtained from the two probability-like integrals
P1/P2 with fixed Gauss-Legendre quadrature on [0, u_max]; sensitivities with
respect to the five model parameters are central finite differences.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np

from .errors import GradientError, NumericalError, TruncationError

MIN_TAU = 1e-6  # maturities below this are outside the validated domain

# how often u_max/n_nodes may be doubled when the tail bound fails
_MAX_ESCALATIONS = 5


@dataclass(frozen=True)
class HestonParams:
    """The five unobservable model parameters (kappa, lambda, sigma, rho, v0)."""

    kappa: float  # mean-reversion speed of the variance, 1/years
    lam: float    # long-run variance level
    sigma: float  # volatility of variance
    rho: float    # spot/variance correlation
    v0: float     # initial variance

    def __post_init__(self):
        if not (self.kappa > 0):
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not (self.lam >= 0):
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not (self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (-1.0 <= self.rho <= 1.0):
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if not (self.v0 >= 0):
            raise ValueError(f"v0 must be nonnegative, got {self.v0}")

    def feller(self) -> float:
        """Feller indicator 2*kappa*lambda - sigma^2 (may be negative)."""
        return 2.0 * self.kappa * self.lam - self.sigma ** 2

    def as_array(self) -> np.ndarray:
        return np.array([self.kappa, self.lam, self.sigma, self.rho, self.v0])


@dataclass(frozen=True)
class PricingInput:
    """Full 9-entry pricing parameter vector: model parameters plus market data."""

    heston: HestonParams
    s0: float   # spot
    r: float    # continuously compounded risk-free rate
    tau: float  # time to maturity, years
    k: float    # strike

    def __post_init__(self):
        if not (self.s0 > 0):
            raise ValueError(f"s0 must be positive, got {self.s0}")
        if not (self.k > 0):
            raise ValueError(f"k must be positive, got {self.k}")
        if not (self.tau >= MIN_TAU):
            raise ValueError(f"tau must be >= {MIN_TAU} years, got {self.tau}")

    def as_array(self) -> np.ndarray:
        """Row vector (kappa, lambda, sigma, rho, v0, r, tau, s0, k)."""
        h = self.heston
        return np.array([h.kappa, h.lam, h.sigma, h.rho, h.v0,
                         self.r, self.tau, self.s0, self.k])


@dataclass(frozen=True)
class QuadratureConfig:
    n_nodes: int = 128
    u_max: float = 200.0
    tail_tol: float = 1e-9

    def __post_init__(self):
        if self.n_nodes < 32:
            raise ValueError(f"n_nodes must be >= 32, got {self.n_nodes}")
        if not (self.u_max > 0):
            raise ValueError(f"u_max must be positive, got {self.u_max}")
        if not (self.tail_tol > 0):
            raise ValueError(f"tail_tol must be positive, got {self.tail_tol}")


@dataclass(frozen=True)
class FiniteDiffConfig:
    h_rel: float = 1e-4
    h_abs: float = 1e-6


@functools.lru_cache(maxsize=32)
def _gauss_legendre(n_nodes: int, u_max: float):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    u = 0.5 * u_max * (x + 1.0)
    return u, 0.5 * u_max * w


def _phi(u, inp: PricingInput):
    """Characteristic function of log(S_tau), little-trap form, vectorized in u."""
    h = inp.heston
    u = np.asarray(u, dtype=complex)
    iu = 1j * u
    b = h.kappa - 1j * h.rho * h.sigma * u
    d = np.sqrt(b * b + h.sigma ** 2 * (iu + u * u))
    g = (b - d) / (b + d)
    edt = np.exp(-d * inp.tau)
    log_term = np.log((1.0 - g * edt) / (1.0 - g))
    c = 1j * inp.r * u * inp.tau + h.kappa * h.lam / h.sigma ** 2 * (
        (b - d) * inp.tau - 2.0 * log_term)
    dd = (b - d) / h.sigma ** 2 * (1.0 - edt) / (1.0 - g * edt)
    return np.exp(c + dd * h.v0 + iu * np.log(inp.s0))


def characteristic_function(u: complex, inp: PricingInput) -> complex:
    """phi_tau(u) = E[exp(i u log S_tau)] under the risk-neutral dynamics."""
    if not np.isfinite(u):
        raise ValueError(f"u must be finite, got {u}")
    val = complex(_phi(u, inp))
    if not np.isfinite(val.real) or not np.isfinite(val.imag):
        raise NumericalError(f"characteristic function overflowed at u={u}")
    return val


def _integrals(inp: PricingInput, quad: QuadratureConfig):
    """P1, P2 with the quadrature tail bound; raises TruncationError on failure.

    The u_max/n_nodes pair is doubled (up to a cap) when the tail bound
    |phi|/u at u_max does not meet tail_tol; this keeps slowly-decaying
    near-degenerate parameter sets (tiny v0 and kappa*lambda) priceable while
    staying deterministic.
    """
    fwd = inp.s0 * np.exp(inp.r * inp.tau)  # phi(-i), martingale normalizer
    log_k = np.log(inp.k)
    last_tail = np.inf
    for level in range(_MAX_ESCALATIONS + 1):
        n = quad.n_nodes * 2 ** level
        u_max = quad.u_max * 2 ** level
        u, w = _gauss_legendre(n, u_max)
        phi2 = _phi(u, inp)
        phi1 = _phi(u - 1j, inp) / fwd
        tail1 = abs(complex(_phi(u_max - 1j, inp))) / fwd / u_max
        tail2 = abs(complex(_phi(u_max, inp))) / u_max
        last_tail = max(tail1, tail2)
        if not np.isfinite(last_tail):
            raise NumericalError(
                f"characteristic function overflowed at u={u_max}")
        if last_tail < quad.tail_tol:
            kern = np.exp(-1j * u * log_k) / (1j * u)
            p1 = 0.5 + np.sum(w * (phi1 * kern).real) / np.pi
            p2 = 0.5 + np.sum(w * (phi2 * kern).real) / np.pi
            if not (np.isfinite(p1) and np.isfinite(p2)):
                raise NumericalError(
                    f"quadrature produced non-finite P1/P2 for u_max={u_max}")
            return p1, p2
    raise TruncationError(
        f"quadrature tail estimate {last_tail:.3e} exceeds tail_tol "
        f"{quad.tail_tol:.1e} even at u_max={quad.u_max * 2 ** _MAX_ESCALATIONS}")


def call_price(inp: PricingInput, quad: QuadratureConfig = QuadratureConfig()) -> float:
    """European call value S0*P1 - K*exp(-r tau)*P2, clamped to no-arbitrage bounds."""
    p1, p2 = _integrals(inp, quad)
    disc_k = inp.k * np.exp(-inp.r * inp.tau)
    raw = inp.s0 * p1 - disc_k * p2
    return float(min(max(raw, max(inp.s0 - disc_k, 0.0)), inp.s0))


def put_price(inp: PricingInput, quad: QuadratureConfig = QuadratureConfig()) -> float:
    """European put via put-call parity, clamped to its no-arbitrage interval."""
    disc_k = inp.k * np.exp(-inp.r * inp.tau)
    raw = call_price(inp, quad) - inp.s0 + disc_k
    return float(min(max(raw, max(disc_k - inp.s0, 0.0)), disc_k))


# admissible (lo, hi) per Heston parameter; None means unbounded on that side.
_PARAM_NAMES = ("kappa", "lambda", "sigma", "rho", "v0")
_PARAM_DOMAINS = ((0.0, None), (0.0, None), (0.0, None), (-1.0, 1.0), (0.0, None))
_OPEN_LOWER = ("kappa", "sigma")  # strictly positive parameters


def _with_param(inp: PricingInput, i: int, value: float) -> PricingInput:
    h = inp.heston
    fields = {"kappa": h.kappa, "lam": h.lam, "sigma": h.sigma,
              "rho": h.rho, "v0": h.v0}
    key = ("kappa", "lam", "sigma", "rho", "v0")[i]
    fields[key] = value
    return replace(inp, heston=HestonParams(**fields))


def price_gradient(inp: PricingInput,
                   quad: QuadratureConfig = QuadratureConfig(),
                   fd: FiniteDiffConfig = FiniteDiffConfig()) -> np.ndarray:
    """Finite-difference sensitivities of the call price w.r.t. the 5 parameters.

    Central differences with relative steps; near a domain boundary the
    scheme switches to a one-sided second-order stencil on the feasible side.
    """
    theta = inp.heston.as_array()
    grad = np.empty(5)
    base = None
    for i, name in enumerate(_PARAM_NAMES):
        h = max(fd.h_rel * abs(theta[i]), fd.h_abs)
        lo, hi = _PARAM_DOMAINS[i]
        eps = h * 1e-3 if name in _OPEN_LOWER else 0.0
        lo_ok = lo is None or theta[i] - h >= lo + eps
        hi_ok = hi is None or theta[i] + h <= hi

        def price_at(value: float) -> float:
            try:
                return call_price(_with_param(inp, i, value), quad)
            except Exception as exc:  # noqa: BLE001 - reported with context
                raise GradientError(
                    f"pricing failed while differentiating '{name}' "
                    f"at value {value}: {exc}") from exc

        if lo_ok and hi_ok:
            grad[i] = (price_at(theta[i] + h) - price_at(theta[i] - h)) / (2 * h)
        else:
            if base is None:
                base = price_at(theta[i])
            sign = -1.0 if not hi_ok else 1.0
            p1 = price_at(theta[i] + sign * h)
            p2 = price_at(theta[i] + sign * 2 * h)
            grad[i] = sign * (-3.0 * base + 4.0 * p1 - p2) / (2 * h)
        if not np.isfinite(grad[i]):
            raise GradientError(f"non-finite sensitivity for '{name}'")
    return grad
