"""Independent Monte-Carlo pricing oracle (full-truncation Euler scheme).

Kept deliberately separate from the quadrature pricer: this discretizes the
risk-neutral SDEs directly and knows nothing about characteristic functions.
"""

import numpy as np

from heston_ddn.heston import PricingInput


def mc_call_price(inp: PricingInput, n_paths: int = 1 << 20,
                  n_steps: int = 500, seed: int = 0):
    """(price estimate, standard error) for a European call."""
    rng = np.random.default_rng(seed)
    h = inp.heston
    dt = inp.tau / n_steps
    v = np.full(n_paths, h.v0)
    log_s = np.full(n_paths, np.log(inp.s0))
    rho_c = np.sqrt(1.0 - h.rho ** 2)
    for _ in range(n_steps):
        z1 = rng.standard_normal(n_paths)
        z2 = h.rho * z1 + rho_c * rng.standard_normal(n_paths)
        v_plus = np.maximum(v, 0.0)
        vol = np.sqrt(v_plus * dt)
        log_s += (inp.r - 0.5 * v_plus) * dt + vol * z1
        v += h.kappa * (h.lam - v_plus) * dt + h.sigma * vol * z2
    payoff = np.exp(-inp.r * inp.tau) * np.maximum(np.exp(log_s) - inp.k, 0.0)
    return float(payoff.mean()), float(payoff.std(ddof=1) / np.sqrt(n_paths))
