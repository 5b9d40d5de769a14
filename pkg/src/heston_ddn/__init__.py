"""Heston option pricing and differential-network calibration toolkit."""

from .heston import (FiniteDiffConfig, HestonParams, PricingInput,
                     QuadratureConfig, call_price, characteristic_function,
                     price_gradient, put_price)
from .dataset import (Dataset, DatasetSplit, LabeledSample, ParameterRanges,
                      Scalers, build_dataset, fit_scalers, lhs_sample,
                      load_dataset, normalize, save_dataset, split_dataset,
                      to_pricing_input)
from .network import (LossBreakdown, NetworkConfig, NetworkState, adam_step,
                      forward, init_xavier, input_gradient, load_model, loss,
                      param_gradients, predict_price, predict_with_gradient,
                      save_model, train)
from .calibration import (AdamCalibConfig, CalibrationResult, MarketQuote,
                          RateCurve, benchmark, calibrate_ddn, calibrate_fnn,
                          calibrate_nm, mre, nelder_mead, objective,
                          synthetic_quotes)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
