"""Training-set generation: Latin hypercube inputs, pricing labels, scaling.

The 9 sampled coordinates are (kappa, lambda, sigma, rho, v0, r, tau, S0, m)
with m = log(K/S0); the strike is reconstructed as K = S0*exp(m).  Labels are
the semi-analytical call price and its 5-vector of parameter sensitivities.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from . import heston
from .errors import DataFormatError, NumericalError
from .heston import FiniteDiffConfig, HestonParams, PricingInput, QuadratureConfig

FORMAT_VERSION = 1
_MAGIC = b"DDN1"

CSV_HEADER = ["kappa", "lambda", "sigma", "rho", "v0", "r", "tau", "s0", "k",
              "price", "dk", "dl", "ds", "drho", "dv0"]

DIMENSION_NAMES = ("kappa", "lambda", "sigma", "rho", "v0",
                   "r", "tau", "s0", "log_moneyness")


@dataclass(frozen=True)
class ParameterRanges:
    """Per-dimension (lo, hi) sampling bounds; defaults cover a wide grid of
    admissible market and model states."""

    kappa: tuple = (0.005, 5.0)
    lam: tuple = (0.0, 1.0)
    sigma: tuple = (0.1, 1.0)
    rho: tuple = (-0.95, 0.0)
    v0: tuple = (0.0, 1.0)
    r: tuple = (0.0, 0.10)
    tau: tuple = (0.05, 1.0)
    s0: tuple = (10.0, 6000.0)
    log_moneyness: tuple = (-1.0, 1.0)

    def __post_init__(self):
        for name, (lo, hi) in zip(DIMENSION_NAMES, self.bounds()):
            if not lo < hi:
                raise ValueError(f"range for {name} must have lo < hi, "
                                 f"got ({lo}, {hi})")

    def bounds(self) -> np.ndarray:
        return np.array([self.kappa, self.lam, self.sigma, self.rho, self.v0,
                         self.r, self.tau, self.s0, self.log_moneyness])

    def lo(self) -> np.ndarray:
        return self.bounds()[:, 0]

    def hi(self) -> np.ndarray:
        return self.bounds()[:, 1]

    @staticmethod
    def from_bounds(bounds: np.ndarray) -> "ParameterRanges":
        b = np.asarray(bounds, dtype=float)
        return ParameterRanges(*(tuple(row) for row in b))


@dataclass
class LabeledSample:
    theta: PricingInput
    price: float
    grad: np.ndarray  # d price / d (kappa, lambda, sigma, rho, v0)


@dataclass(frozen=True)
class Scalers:
    """Min-max statistics fitted on the training partition."""

    feat_min: np.ndarray  # (9,)
    feat_max: np.ndarray  # (9,)
    price_min: float
    price_max: float

    def __post_init__(self):
        if np.any(self.feat_max <= self.feat_min):
            bad = [CSV_HEADER[i] for i in
                   np.nonzero(self.feat_max <= self.feat_min)[0]]
            raise ValueError(f"constant feature column(s): {bad}")
        if self.price_max <= self.price_min:
            raise ValueError("constant price label")

    @property
    def delta_theta(self) -> np.ndarray:
        return self.feat_max - self.feat_min

    @property
    def delta_p(self) -> float:
        return self.price_max - self.price_min

    def normalize_features(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feat_min) / self.delta_theta

    def denormalize_features(self, x: np.ndarray) -> np.ndarray:
        return x * self.delta_theta + self.feat_min

    def normalize_price(self, p):
        return (p - self.price_min) / self.delta_p

    def denormalize_price(self, p):
        return p * self.delta_p + self.price_min

    def scale_grad(self, g: np.ndarray) -> np.ndarray:
        """Raw sensitivity -> normalized-coordinate sensitivity."""
        return g * (self.delta_theta[:5] / self.delta_p)

    def unscale_grad(self, g: np.ndarray) -> np.ndarray:
        return g * (self.delta_p / self.delta_theta[:5])


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        parts = [self.train, self.validation, self.test]
        n = sum(len(p) for p in parts)
        union = np.concatenate(parts)
        if len(np.unique(union)) != n:
            raise ValueError("split partitions must be disjoint")


@dataclass
class NormalizedSample:
    features: np.ndarray  # (9,)
    price: float
    grad: np.ndarray      # (5,), in normalized coordinates


@dataclass
class Dataset:
    """A labeled sample set plus everything needed to reproduce it."""

    samples: list
    ranges: ParameterRanges
    seed: int
    scalers: Scalers | None = None
    split: DatasetSplit | None = None
    version: int = FORMAT_VERSION


def lhs_matrix(n: int, lo: np.ndarray, hi: np.ndarray, seed: int) -> np.ndarray:
    """Latin hypercube over a box: one jittered point per stratum per dimension."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    dim = len(lo)
    out = np.empty((n, dim))
    for j in range(dim):
        strata = rng.permutation(n)
        jitter = rng.random(n)
        out[:, j] = lo[j] + (hi[j] - lo[j]) * (strata + jitter) / n
    return out


def lhs_sample(n: int, ranges: ParameterRanges, seed: int) -> np.ndarray:
    """Latin hypercube draw of n rows over the 9 sampling ranges."""
    return lhs_matrix(n, ranges.lo(), ranges.hi(), seed)


def to_pricing_input(row: np.ndarray) -> PricingInput:
    """(kappa, lambda, sigma, rho, v0, r, tau, s0, log_moneyness) -> PricingInput."""
    kappa, lam, sigma, rho, v0, r, tau, s0, m = row
    return PricingInput(HestonParams(kappa, lam, sigma, rho, v0),
                        s0=s0, r=r, tau=tau, k=s0 * np.exp(m))


def _label(row: np.ndarray, quad: QuadratureConfig,
           fd: FiniteDiffConfig) -> LabeledSample:
    inp = to_pricing_input(row)
    price = heston.call_price(inp, quad)
    grad = heston.price_gradient(inp, quad, fd)
    return LabeledSample(inp, price, grad)


def build_dataset(n: int, ranges: ParameterRanges = ParameterRanges(),
                  seed: int = 0,
                  quad: QuadratureConfig = QuadratureConfig(),
                  fd: FiniteDiffConfig = FiniteDiffConfig(),
                  max_replacement_rate: float = 1e-3,
                  stats: dict | None = None) -> list:
    """Label n LHS rows; failed pricings are replaced by fresh per-index draws.

    Replacement draws come from an RNG keyed by (seed, row index, attempt), so
    the result is independent of evaluation order.  When a dict is passed as
    `stats`, the replacement count and failure messages are stored in it.
    """
    rows = lhs_sample(n, ranges, seed)
    lo, hi = ranges.lo(), ranges.hi()
    samples: list = []
    replacements = 0
    failures: list = []
    for i in range(n):
        row = rows[i]
        for attempt in range(100):
            try:
                samples.append(_label(row, quad, fd))
                break
            except Exception as exc:  # noqa: BLE001 - counted and re-raised below
                replacements += 1
                failures.append((i, attempt, str(exc)))
                sub = np.random.default_rng([seed, i, attempt])
                row = lo + (hi - lo) * sub.random(9)
        else:
            raise NumericalError(f"row {i} failed labeling after 100 attempts")
    if stats is not None:
        stats["replacements"] = replacements
        stats["failures"] = failures
    if replacements > max_replacement_rate * n:
        detail = "; ".join(f"row {i} attempt {a}: {m}"
                           for i, a, m in failures[:5])
        raise NumericalError(
            f"{replacements} label replacements out of {n} samples exceeds "
            f"the {max_replacement_rate:.1%} budget ({detail})")
    return samples


def samples_to_arrays(samples) -> tuple:
    """(features (n,9), prices (n,), gradients (n,5)) in raw units."""
    x = np.stack([s.theta.as_array() for s in samples])
    p = np.array([s.price for s in samples])
    g = np.stack([s.grad for s in samples])
    return x, p, g


def split_dataset(n: int, seed: int) -> DatasetSplit:
    """70:15:15 random split of range(n)."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(0.70 * n)
    n_val = int(0.15 * n)
    return DatasetSplit(train=perm[:n_train],
                        validation=perm[n_train:n_train + n_val],
                        test=perm[n_train + n_val:])


def fit_scalers(samples, split: DatasetSplit) -> Scalers:
    """Min-max statistics over the training partition only."""
    x, p, _ = samples_to_arrays(samples)
    xt, pt = x[split.train], p[split.train]
    return Scalers(feat_min=xt.min(axis=0), feat_max=xt.max(axis=0),
                   price_min=float(pt.min()), price_max=float(pt.max()))


def normalize(sample: LabeledSample, scalers: Scalers) -> NormalizedSample:
    return NormalizedSample(
        features=scalers.normalize_features(sample.theta.as_array()),
        price=float(scalers.normalize_price(sample.price)),
        grad=scalers.scale_grad(sample.grad))


def save_dataset(path, dataset: Dataset) -> None:
    """Self-describing little-endian binary container (bit-exact payload)."""
    x, p, g = samples_to_arrays(dataset.samples)
    payload = np.hstack([x, p[:, None], g]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IqQ", dataset.version, dataset.seed,
                             len(dataset.samples)))
        fh.write(dataset.ranges.bounds().astype("<f8").tobytes())
        if dataset.scalers is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            sc = np.concatenate([dataset.scalers.feat_min,
                                 dataset.scalers.feat_max,
                                 [dataset.scalers.price_min,
                                  dataset.scalers.price_max]])
            fh.write(sc.astype("<f8").tobytes())
        if dataset.split is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            for part in (dataset.split.train, dataset.split.validation,
                         dataset.split.test):
                fh.write(struct.pack("<Q", len(part)))
                fh.write(np.asarray(part).astype("<i8").tobytes())
        fh.write(payload.tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataFormatError(f"{path}: not a dataset file (bad magic)")
        version, seed, n = struct.unpack("<IqQ", fh.read(20))
        if version != FORMAT_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        bounds = np.frombuffer(fh.read(18 * 8), dtype="<f8").reshape(9, 2)
        ranges = ParameterRanges.from_bounds(bounds)
        scalers = None
        if struct.unpack("<B", fh.read(1))[0]:
            sc = np.frombuffer(fh.read(20 * 8), dtype="<f8")
            scalers = Scalers(feat_min=sc[:9].copy(), feat_max=sc[9:18].copy(),
                              price_min=float(sc[18]), price_max=float(sc[19]))
        split = None
        if struct.unpack("<B", fh.read(1))[0]:
            parts = []
            for _ in range(3):
                m = struct.unpack("<Q", fh.read(8))[0]
                parts.append(np.frombuffer(fh.read(8 * m), dtype="<i8").copy())
            split = DatasetSplit(*parts)
        payload = np.frombuffer(fh.read(n * 15 * 8), dtype="<f8")
        if payload.size != n * 15:
            raise DataFormatError(f"{path}: truncated sample payload")
        payload = payload.reshape(n, 15)
    samples = [LabeledSample(to_row_input(row[:9]), float(row[9]),
                             row[10:15].copy())
               for row in payload]
    return Dataset(samples=samples, ranges=ranges, seed=seed,
                   scalers=scalers, split=split, version=version)


def to_row_input(feat: np.ndarray) -> PricingInput:
    """Inverse of PricingInput.as_array (strike stored raw, not as moneyness)."""
    kappa, lam, sigma, rho, v0, r, tau, s0, k = feat
    return PricingInput(HestonParams(kappa, lam, sigma, rho, v0),
                        s0=s0, r=r, tau=tau, k=k)


def export_csv(path, samples) -> None:
    x, p, g = samples_to_arrays(samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in np.hstack([x, p[:, None], g]):
            writer.writerow([repr(float(v)) for v in row])
