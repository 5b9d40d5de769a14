"""Differential feedforward network trained on prices and price sensitivities.

The forward map is a plain multilayer perceptron with softplus hidden
activations and a linear head.  In addition to the price output, the model
exposes the exact gradient of the output with respect to its inputs; the
first five components (the model-parameter sensitivities) enter the loss, so
the parameter gradient of the loss requires a second reverse sweep through
the input-gradient product (double backpropagation, using the second
derivative of softplus).  Setting deriv_loss_weight to zero recovers an
ordinary price-only network.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import Scalers
from .errors import DataFormatError, NumericalError
from .heston import PricingInput

_MAGIC = b"DDNM"
MODEL_FORMAT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class NetworkConfig:
    layer_sizes: tuple = (9, 150, 150, 150, 150, 150, 150, 1)
    beta: float = 1.0                # softplus slope
    dropout_rate: float = 0.2
    deriv_loss_weight: float = 1.0   # 0 -> price-only baseline
    reg_coefficient: float = 1e-5
    penalty: str = "l2sq"            # "l2sq" (weight decay) or "l2"
    lr0: float = 1e-3
    lr_decay: float = 0.9
    decay_every: int = 10            # epochs between learning-rate decays
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or self.layer_sizes[-1] != 1:
            raise ValueError("layer_sizes must end with a single output node")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must be in [0, 1), "
                             f"got {self.dropout_rate}")
        if self.deriv_loss_weight < 0 or self.reg_coefficient < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.penalty not in ("l2sq", "l2"):
            raise ValueError(f"unknown penalty '{self.penalty}'")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("decay_every, batch_size, epochs must be positive")


@dataclass
class NetworkState:
    config: NetworkConfig
    weights: list                      # W[l]: (N_l, N_{l-1})
    biases: list                       # b[l]: (N_l,)
    scalers: Scalers | None = None
    epoch: int = 0
    adam_t: int = 0
    adam_m_w: list = field(default_factory=list)
    adam_v_w: list = field(default_factory=list)
    adam_m_b: list = field(default_factory=list)
    adam_v_b: list = field(default_factory=list)


@dataclass
class ForwardTrace:
    pre_activations: list   # x[l], (B, N_l), l = 1..L
    activations: list       # y[l], (B, N_l), l = 0..L (y[0] = input batch)
    masks: list             # inverted-dropout masks per hidden layer (or None)


@dataclass
class LossBreakdown:
    price_term: float
    derivative_term: float
    penalty_term: float
    total: float


def _softplus(x, beta):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-beta * np.abs(x))) / beta


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus_d1(x, beta):
    return _sigmoid(beta * x)


def _softplus_d2(x, beta):
    s = _sigmoid(beta * x)
    return beta * s * (1.0 - s)


def init_xavier(config: NetworkConfig, seed: int) -> NetworkState:
    """Uniform Glorot weights on +-sqrt(6/(fan_in+fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    sizes = config.layer_sizes
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    state = NetworkState(config=config, weights=weights, biases=biases)
    _ensure_moments(state)
    return state


def _ensure_moments(state: NetworkState) -> None:
    if not state.adam_m_w:
        state.adam_m_w = [np.zeros_like(w) for w in state.weights]
        state.adam_v_w = [np.zeros_like(w) for w in state.weights]
        state.adam_m_b = [np.zeros_like(b) for b in state.biases]
        state.adam_v_b = [np.zeros_like(b) for b in state.biases]


def forward(state: NetworkState, batch: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None):
    """Run the network on a (B, 9) batch of normalized features.

    Returns (predictions (B,), ForwardTrace).  Train mode applies inverted
    dropout to hidden activations; the masks are recorded so the
    differentiation layer stays the exact gradient of the realized forward map.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got '{mode}'")
    cfg = state.config
    n_layers = len(state.weights)
    x_list, masks = [], []
    y = np.asarray(batch, dtype=float)
    y_list = [y]
    for l, (w, b) in enumerate(zip(state.weights, state.biases), start=1):
        x = y @ w.T + b
        x_list.append(x)
        if l < n_layers:
            y = _softplus(x, cfg.beta)
            if mode == "train" and cfg.dropout_rate > 0.0:
                if rng is None:
                    raise ValueError("train-mode forward requires an rng")
                keep = 1.0 - cfg.dropout_rate
                mask = (rng.random(x.shape) < keep) / keep
                y = y * mask
                masks.append(mask)
            else:
                masks.append(None)
        else:
            y = x
            masks.append(None)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite activation in layer {l}")
        y_list.append(y)
    return y.ravel(), ForwardTrace(x_list, y_list, masks)


def _gradient_chain(state: NetworkState, trace: ForwardTrace):
    """Backward products p[l] = d f / d x^(l) for each layer, (B, N_l)."""
    cfg = state.config
    n_layers = len(state.weights)
    batch = trace.activations[0].shape[0]
    p = [None] * (n_layers + 1)       # 1-based: p[l]
    p[n_layers] = np.ones((batch, 1))
    for l in range(n_layers - 1, 0, -1):
        r = p[l + 1] @ state.weights[l]     # d f / d y^(l)
        d = _softplus_d1(trace.pre_activations[l - 1], cfg.beta)
        if trace.masks[l - 1] is not None:
            d = d * trace.masks[l - 1]
        p[l] = r * d
    return p


def input_gradient(state: NetworkState, trace: ForwardTrace) -> np.ndarray:
    """Exact (B, 9) gradient of the output w.r.t. the normalized inputs."""
    p = _gradient_chain(state, trace)
    return p[1] @ state.weights[0]


def _penalty(state: NetworkState):
    """(value, gradient factor pairs) of the regularization term."""
    cfg = state.config
    if cfg.reg_coefficient == 0.0:
        return 0.0
    sq = sum(float(np.sum(w * w)) for w in state.weights) + \
        sum(float(np.sum(b * b)) for b in state.biases)
    if cfg.penalty == "l2sq":
        return cfg.reg_coefficient * sq
    return cfg.reg_coefficient * np.sqrt(sq)


def loss(state: NetworkState, batch: np.ndarray, price_targets: np.ndarray,
         grad_targets: np.ndarray | None = None, mode: str = "eval",
         rng: np.random.Generator | None = None) -> LossBreakdown:
    """Mean-squared price loss + weighted mean-squared sensitivity loss +
    regularization penalty, all in normalized units."""
    preds, trace = forward(state, batch, mode=mode, rng=rng)
    l1 = float(np.mean((preds - price_targets) ** 2))
    lam_d = state.config.deriv_loss_weight
    if lam_d > 0.0 and grad_targets is not None:
        diff_layer = input_gradient(state, trace)[:, :5]
        l2 = float(np.mean((diff_layer - grad_targets) ** 2))
    else:
        l2 = 0.0
    pen = _penalty(state)
    return LossBreakdown(l1, l2, pen, l1 + lam_d * l2 + pen)


def param_gradients(state: NetworkState, batch: np.ndarray,
                    price_targets: np.ndarray,
                    grad_targets: np.ndarray | None = None,
                    trace: ForwardTrace | None = None,
                    preds: np.ndarray | None = None):
    """Gradient of the regularized loss w.r.t. every weight and bias.

    Returns (LossBreakdown, grads_w, grads_b).  The derivative-loss part
    differentiates the input-gradient product w.r.t. the parameters, which
    needs the softplus second derivative (a second reverse sweep).
    """
    cfg = state.config
    n_layers = len(state.weights)
    if trace is None:
        preds, trace = forward(state, batch, mode="eval")
    b_size = batch.shape[0]
    grads_w = [np.zeros_like(w) for w in state.weights]
    grads_b = [np.zeros_like(b) for b in state.biases]
    x_bar = [np.zeros_like(x) for x in trace.pre_activations]

    l1 = float(np.mean((preds - price_targets) ** 2))
    lam_d = cfg.deriv_loss_weight
    l2 = 0.0

    if lam_d > 0.0 and grad_targets is not None:
        p = _gradient_chain(state, trace)
        g_full = p[1] @ state.weights[0]
        diff_layer = g_full[:, :5]
        l2 = float(np.mean((diff_layer - grad_targets) ** 2))
        # adjoint of the derivative loss w.r.t. the full input gradient
        g_bar = np.zeros_like(g_full)
        g_bar[:, :5] = lam_d * 2.0 * (diff_layer - grad_targets) / (5.0 * b_size)
        # reverse through G = p[1] W[0]
        grads_w[0] += p[1].T @ g_bar
        p_bar = g_bar @ state.weights[0].T
        # ascend through p[l] = (p[l+1] W[l]) * d[l]
        for l in range(1, n_layers):
            x = trace.pre_activations[l - 1]
            d1 = _softplus_d1(x, cfg.beta)
            mask = trace.masks[l - 1]
            if mask is not None:
                d = d1 * mask
            else:
                d = d1
            r = p[l + 1] @ state.weights[l]
            r_bar = p_bar * d
            d_bar = p_bar * r
            if mask is not None:
                d_bar = d_bar * mask
            x_bar[l - 1] += d_bar * _softplus_d2(x, cfg.beta)
            grads_w[l] += p[l + 1].T @ r_bar
            p_bar = r_bar @ state.weights[l].T
        # p[L] is constant (linear head); its adjoint propagates no further

    # standard backward pass through the forward chain
    y_bar = (2.0 * (preds - price_targets) / b_size)[:, None]
    x_cur = y_bar  # linear output layer: x_bar[L] contribution
    for l in range(n_layers, 0, -1):
        total = x_cur + x_bar[l - 1] if l < n_layers else x_cur
        grads_w[l - 1] += total.T @ trace.activations[l - 1]
        grads_b[l - 1] += total.sum(axis=0)
        if l > 1:
            y_prev_bar = total @ state.weights[l - 1]
            d = _softplus_d1(trace.pre_activations[l - 2], cfg.beta)
            if trace.masks[l - 2] is not None:
                d = d * trace.masks[l - 2]
            x_cur = y_prev_bar * d

    pen = _penalty(state)
    if cfg.reg_coefficient > 0.0:
        if cfg.penalty == "l2sq":
            for l in range(n_layers):
                grads_w[l] += 2.0 * cfg.reg_coefficient * state.weights[l]
                grads_b[l] += 2.0 * cfg.reg_coefficient * state.biases[l]
        else:
            norm = pen / cfg.reg_coefficient
            if norm > 0.0:
                scale = cfg.reg_coefficient / norm
                for l in range(n_layers):
                    grads_w[l] += scale * state.weights[l]
                    grads_b[l] += scale * state.biases[l]

    for l, (gw, gb) in enumerate(zip(grads_w, grads_b), start=1):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericalError(f"non-finite parameter gradient in layer {l}")
    breakdown = LossBreakdown(l1, l2, pen, l1 + lam_d * l2 + pen)
    return breakdown, grads_w, grads_b


def learning_rate(config: NetworkConfig, epoch: int) -> float:
    return config.lr0 * config.lr_decay ** (epoch // config.decay_every)


def adam_step(state: NetworkState, grads_w, grads_b, lr: float) -> None:
    """One in-place Adam update with bias-corrected moments."""
    _ensure_moments(state)
    state.adam_t += 1
    t = state.adam_t
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for l in range(len(state.weights)):
        for params, g, m, v in (
                (state.weights[l], grads_w[l], state.adam_m_w[l],
                 state.adam_v_w[l]),
                (state.biases[l], grads_b[l], state.adam_m_b[l],
                 state.adam_v_b[l])):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            params -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def train(features: np.ndarray, prices: np.ndarray, grads: np.ndarray,
          split, scalers: Scalers, config: NetworkConfig,
          verbose: bool = False):
    """Train on raw-unit arrays; returns (best NetworkState, history).

    history is a list of dicts with per-epoch train/validation loss breakdowns
    and the learning rate.  The state with the best validation total loss is
    returned (evaluated in eval mode each epoch).
    """
    x = scalers.normalize_features(features)
    p = scalers.normalize_price(prices)
    g = grads * (scalers.delta_theta[:5] / scalers.delta_p)

    xt, pt, gt = x[split.train], p[split.train], g[split.train]
    xv, pv, gv = (x[split.validation], p[split.validation],
                  g[split.validation])

    state = init_xavier(config, config.seed)
    state.scalers = scalers
    rng = np.random.default_rng([config.seed, 1])
    use_deriv = config.deriv_loss_weight > 0.0

    history = []
    best_val = np.inf
    best_state = None
    n_train = len(xt)
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        perm = rng.permutation(n_train)
        tr_sums = np.zeros(3)
        n_batches = 0
        for start in range(0, n_train, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb, pb = xt[idx], pt[idx]
            gb = gt[idx] if use_deriv else None
            preds, tr = forward(state, xb, mode="train", rng=rng)
            bd, gw, gbi = param_gradients(state, xb, pb, gb,
                                          trace=tr, preds=preds)
            if not np.isfinite(bd.total):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}")
            adam_step(state, gw, gbi, lr)
            tr_sums += (bd.price_term, bd.derivative_term, bd.penalty_term)
            n_batches += 1
        tr_mean = tr_sums / n_batches
        train_bd = LossBreakdown(
            tr_mean[0], tr_mean[1], tr_mean[2],
            tr_mean[0] + config.deriv_loss_weight * tr_mean[1] + tr_mean[2])
        val_bd = loss(state, xv, pv, gv if use_deriv else None, mode="eval")
        history.append({"epoch": epoch, "lr": lr,
                        "train": train_bd, "validation": val_bd})
        if val_bd.total < best_val:
            best_val = val_bd.total
            best_state = copy.deepcopy(state)
        state.epoch = epoch + 1
        if verbose:
            print(f"epoch {epoch:4d}  lr {lr:.2e}  "
                  f"train {train_bd.total:.3e}  val {val_bd.total:.3e}")
    best_state.epoch = state.epoch
    return best_state, history


def predict_price_batch(state: NetworkState, features: np.ndarray) -> np.ndarray:
    """Raw-unit prices for a (B, 9) matrix of raw-unit inputs."""
    x = state.scalers.normalize_features(features)
    preds, _ = forward(state, x, mode="eval")
    return state.scalers.denormalize_price(preds)


def predict_with_gradient_batch(state: NetworkState, features: np.ndarray):
    """(prices (B,), sensitivities (B, 5)) in raw units."""
    sc = state.scalers
    x = sc.normalize_features(features)
    preds, trace = forward(state, x, mode="eval")
    g = input_gradient(state, trace)[:, :5]
    return sc.denormalize_price(preds), g * (sc.delta_p / sc.delta_theta[:5])


def predict_price(state: NetworkState, theta: PricingInput) -> float:
    return float(predict_price_batch(state, theta.as_array()[None, :])[0])


def predict_with_gradient(state: NetworkState, theta: PricingInput):
    p, g = predict_with_gradient_batch(state, theta.as_array()[None, :])
    return float(p[0]), g[0]


def history_to_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_total,train_price,train_deriv,"
                 "val_total,val_price,val_deriv,lr\n")
        for rec in history:
            tr, va = rec["train"], rec["validation"]
            fh.write(f"{rec['epoch']},{tr.total!r},{tr.price_term!r},"
                     f"{tr.derivative_term!r},{va.total!r},{va.price_term!r},"
                     f"{va.derivative_term!r},{rec['lr']!r}\n")


def save_model(path, state: NetworkState) -> None:
    """Versioned binary container: config, scalers, weights, Adam moments."""
    cfg = state.config
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", MODEL_FORMAT_VERSION))
        fh.write(struct.pack("<I", len(cfg.layer_sizes)))
        fh.write(struct.pack(f"<{len(cfg.layer_sizes)}I", *cfg.layer_sizes))
        pen_code = 0 if cfg.penalty == "l2sq" else 1
        fh.write(struct.pack(
            "<dddddddIIIqIqq", cfg.beta, cfg.dropout_rate,
            cfg.deriv_loss_weight, cfg.reg_coefficient, cfg.lr0,
            cfg.lr_decay, 0.0, pen_code, cfg.decay_every, cfg.batch_size,
            cfg.seed, cfg.epochs, state.epoch, state.adam_t))
        has_scalers = state.scalers is not None
        fh.write(struct.pack("<B", int(has_scalers)))
        if has_scalers:
            sc = np.concatenate([state.scalers.feat_min, state.scalers.feat_max,
                                 [state.scalers.price_min,
                                  state.scalers.price_max]])
            fh.write(sc.astype("<f8").tobytes())
        for arrays in (state.weights, state.biases, state.adam_m_w,
                       state.adam_v_w, state.adam_m_b, state.adam_v_b):
            for a in arrays:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path) -> NetworkState:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataFormatError(f"{path}: not a model file (bad magic)")
        version, = struct.unpack("<I", fh.read(4))
        if version != MODEL_FORMAT_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        n_sizes, = struct.unpack("<I", fh.read(4))
        sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
        (beta, dropout, lam_d, eta, lr0, decay, _pad, pen_code, decay_every,
         batch_size, seed, epochs, epoch, adam_t) = struct.unpack(
            "<dddddddIIIqIqq", fh.read(struct.calcsize("<dddddddIIIqIqq")))
        config = NetworkConfig(
            layer_sizes=tuple(sizes), beta=beta, dropout_rate=dropout,
            deriv_loss_weight=lam_d, reg_coefficient=eta,
            penalty="l2sq" if pen_code == 0 else "l2", lr0=lr0,
            lr_decay=decay, decay_every=decay_every, batch_size=batch_size,
            epochs=epochs, seed=seed)
        scalers = None
        if struct.unpack("<B", fh.read(1))[0]:
            sc = np.frombuffer(fh.read(20 * 8), dtype="<f8")
            scalers = Scalers(feat_min=sc[:9].copy(), feat_max=sc[9:18].copy(),
                              price_min=float(sc[18]), price_max=float(sc[19]))
        shapes_w = [(sizes[i + 1], sizes[i]) for i in range(n_sizes - 1)]
        shapes_b = [(sizes[i + 1],) for i in range(n_sizes - 1)]

        def read_arrays(shapes):
            out = []
            for shape in shapes:
                count = int(np.prod(shape))
                out.append(np.frombuffer(fh.read(8 * count),
                                         dtype="<f8").reshape(shape).copy())
            return out

        weights = read_arrays(shapes_w)
        biases = read_arrays(shapes_b)
        m_w = read_arrays(shapes_w)
        v_w = read_arrays(shapes_w)
        m_b = read_arrays(shapes_b)
        v_b = read_arrays(shapes_b)
    return NetworkState(config=config, weights=weights, biases=biases,
                        scalers=scalers, epoch=epoch, adam_t=adam_t,
                        adam_m_w=m_w, adam_v_w=v_w, adam_m_b=m_b,
                        adam_v_b=v_b)
