"""Stacked LSTM and bidirectional LSTM regressors in numpy, with
backpropagation through time and Adam training.

Gate blocks are stacked in the order (input, forget, candidate, output) along
the first axis of ``wx`` (4H x I), ``wh`` (4H x H) and ``b`` (4H).
Inverted dropout sits between consecutive recurrent layers and is active only
in training mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GATES = ("i", "f", "c", "o")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LayerParams:
    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.wh.shape[1]

    @property
    def input_size(self) -> int:
        return self.wx.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views (W_{g,x}, W_{g,h}, b_g) of one gate block."""
        k = GATES.index(name)
        H = self.hidden
        rows = slice(k * H, (k + 1) * H)
        return self.wx[rows], self.wh[rows], self.b[rows]

    def check(self):
        H = self.hidden
        if self.wx.shape[0] != 4 * H or self.wh.shape != (4 * H, H) or self.b.shape != (4 * H,):
            raise ValueError("inconsistent LSTM layer shapes")


@dataclass
class LstmParams:
    layers: list[LayerParams]
    w_out: np.ndarray
    b_out: np.ndarray
    dropout: float = 0.0

    arch = "lstm"

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = _layer_arrays("layer", self.layers)
        out["w_out"] = self.w_out
        out["b_out"] = self.b_out
        return out


@dataclass
class BilstmParams:
    forward: list[LayerParams]
    backward: list[LayerParams]
    w_fwd: np.ndarray
    w_bwd: np.ndarray
    b_out: np.ndarray
    dropout: float = 0.0

    arch = "bilstm"

    def __post_init__(self):
        if self.forward[-1].hidden != self.backward[-1].hidden:
            raise ValueError("forward and backward hidden sizes differ")

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = _layer_arrays("fwd", self.forward)
        out.update(_layer_arrays("bwd", self.backward))
        out["w_fwd"] = self.w_fwd
        out["w_bwd"] = self.w_bwd
        out["b_out"] = self.b_out
        return out


def _layer_arrays(prefix, layers):
    out = {}
    for k, layer in enumerate(layers):
        out[f"{prefix}.{k}.wx"] = layer.wx
        out[f"{prefix}.{k}.wh"] = layer.wh
        out[f"{prefix}.{k}.b"] = layer.b
    return out


def params_from_arrays(arch: str, arrays: dict[str, np.ndarray], dropout: float = 0.0):
    def layers(prefix):
        out, k = [], 0
        while f"{prefix}.{k}.wx" in arrays:
            out.append(LayerParams(arrays[f"{prefix}.{k}.wx"], arrays[f"{prefix}.{k}.wh"],
                                   arrays[f"{prefix}.{k}.b"]))
            k += 1
        return out

    if arch == "lstm":
        return LstmParams(layers("layer"), arrays["w_out"], arrays["b_out"], dropout)
    if arch == "bilstm":
        return BilstmParams(layers("fwd"), layers("bwd"), arrays["w_fwd"], arrays["w_bwd"],
                            arrays["b_out"], dropout)
    raise ValueError(f"unknown architecture {arch!r}")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_stack(rng, input_size, hidden):
    layers = []
    for H in hidden:
        layers.append(LayerParams(_uniform(rng, (4 * H, input_size), input_size),
                                  _uniform(rng, (4 * H, H), H),
                                  _uniform(rng, (4 * H,), H)))
        input_size = H
    return layers


def init_params(arch: str, hidden=(32, 32), input_size: int = 1, dropout: float = 0.3,
                seed: int = 0):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    rng = np.random.default_rng(seed)
    hidden = tuple(hidden)
    H = hidden[-1]
    if arch == "lstm":
        layers = _init_stack(rng, input_size, hidden)
        return LstmParams(layers, _uniform(rng, (H,), H), _uniform(rng, (1,), H), dropout)
    if arch == "bilstm":
        fwd = _init_stack(rng, input_size, hidden)
        bwd = _init_stack(rng, input_size, hidden)
        return BilstmParams(fwd, bwd, _uniform(rng, (H,), 2 * H), _uniform(rng, (H,), 2 * H),
                            _uniform(rng, (1,), 2 * H), dropout)
    raise ValueError(f"unknown architecture {arch!r}")


@dataclass
class CellCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def lstm_cell_step(layer: LayerParams, x_t, h_prev, c_prev):
    """One LSTM update; works on a single vector or a batch of row vectors."""
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape[-1] != layer.input_size or np.shape(h_prev)[-1] != layer.hidden:
        raise ValueError("shape mismatch in lstm_cell_step")
    H = layer.hidden
    z = x_t @ layer.wx.T + h_prev @ layer.wh.T + layer.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, CellCache(x_t, h_prev, c_prev, i, f, g, o, c, tanh_c)


@dataclass
class _LayerCache:
    # time-major arrays: (T, B, .)
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    ifgo: np.ndarray  # gate activations (T, B, 4H)
    tanh_c: np.ndarray


def _layer_forward(layer: LayerParams, X):
    """Run one layer over a time-major input (T, B, I); returns (T, B, H)."""
    T, B, _ = X.shape
    H = layer.hidden
    zx = X @ layer.wx.T + layer.b
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    ifgo = np.empty((T, B, 4 * H))
    tanh_c = np.empty((T, B, H))
    wh_t = layer.wh.T
    for t in range(T):
        z = zx[t] + hs[t] @ wh_t
        a = ifgo[t]
        a[:, :2 * H] = sigmoid(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = sigmoid(z[:, 3 * H:])
        c = cs[t + 1]
        np.multiply(a[:, H:2 * H], cs[t], out=c)
        c += a[:, :H] * a[:, 2 * H:3 * H]
        np.tanh(c, out=tanh_c[t])
        np.multiply(a[:, 3 * H:], tanh_c[t], out=hs[t + 1])
    return hs[1:], _LayerCache(X, hs[:-1], cs[:-1], ifgo, tanh_c)


def _layer_backward(layer: LayerParams, cache: _LayerCache, dH):
    T, B, H = dH.shape
    a = cache.ifgo
    i, f, g, o = a[..., :H], a[..., H:2 * H], a[..., 2 * H:3 * H], a[..., 3 * H:]
    dz = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    wh = layer.wh
    for t in reversed(range(T)):
        dh = dH[t] + dh_next
        tc = cache.tanh_c[t]
        dc = dh * o[t] * (1.0 - tc * tc) + dc_next
        d = dz[t]
        d[:, :H] = dc * g[t] * i[t] * (1.0 - i[t])
        d[:, H:2 * H] = dc * cache.c_prev[t] * f[t] * (1.0 - f[t])
        d[:, 2 * H:3 * H] = dc * i[t] * (1.0 - g[t] * g[t])
        d[:, 3 * H:] = dh * tc * o[t] * (1.0 - o[t])
        dc_next = dc * f[t]
        dh_next = d @ wh
    dwx = np.tensordot(dz, cache.x, axes=([0, 1], [0, 1]))
    dwh = np.tensordot(dz, cache.h_prev, axes=([0, 1], [0, 1]))
    db = dz.sum(axis=(0, 1))
    dX = dz @ layer.wx
    return dX, dwx, dwh, db


@dataclass
class _StackCache:
    layers: list
    masks: list  # masks[k] multiplies the input of layer k + 1, or None


def _stack_forward(layers, X, masks):
    caches = []
    inp = X
    for k, layer in enumerate(layers):
        if k > 0 and masks[k - 1] is not None:
            inp = inp * masks[k - 1]
        inp, cache = _layer_forward(layer, inp)
        caches.append(cache)
    return inp[-1], _StackCache(caches, masks)


def _stack_backward(layers, cache: _StackCache, dh_last, prefix, grads):
    B, H = dh_last.shape
    T = cache.layers[-1].x.shape[0]
    dH = np.zeros((T, B, H))
    dH[-1] = dh_last
    for k in reversed(range(len(layers))):
        dX, dwx, dwh, db = _layer_backward(layers[k], cache.layers[k], dH)
        grads[f"{prefix}.{k}.wx"] = dwx
        grads[f"{prefix}.{k}.wh"] = dwh
        grads[f"{prefix}.{k}.b"] = db
        if k > 0:
            mask = cache.masks[k - 1]
            dH = dX * mask if mask is not None else dX


def _draw_masks(layers, batch, T, rate, rng):
    masks = []
    for layer in layers[:-1]:
        if rate > 0:
            keep = rng.random((T, batch, layer.hidden)) >= rate
            masks.append(keep / (1.0 - rate))
        else:
            masks.append(None)
    return masks


def _as_batch(windows):
    """(T,), (B, T) or (B, T, I) windows -> time-major (T, B, I) array."""
    X = np.asarray(windows, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim == 2:
        X = X[..., None]
    return np.ascontiguousarray(X.transpose(1, 0, 2)), single


@dataclass
class ForwardCache:
    arch: str
    prediction: np.ndarray
    stacks: dict = field(default_factory=dict)  # direction -> (h_last, _StackCache)


def lstm_forward(params: LstmParams, windows, *, training: bool = False, rng=None,
                 masks=None, return_cache: bool = False):
    """Predict from scaled lookback windows, shape (T,) or (B, T).

    ``masks`` overrides the dropout masks drawn in training mode."""
    X, single = _as_batch(windows)
    for layer in params.layers:
        layer.check()
    if X.shape[2] != params.layers[0].input_size:
        raise ValueError("input size mismatch")
    if masks is None:
        masks = (_draw_masks(params.layers, X.shape[1], X.shape[0], params.dropout, rng)
                 if training else [None] * (len(params.layers) - 1))
    h_last, cache = _stack_forward(params.layers, X, masks)
    y = h_last @ params.w_out + params.b_out[0]
    out = y[0] if single else y
    if return_cache:
        return out, ForwardCache("lstm", y, {"layer": (h_last, cache)})
    return out


def bilstm_forward(params: BilstmParams, windows, *, training: bool = False, rng=None,
                   masks=None, return_cache: bool = False):
    """Forward stack reads t = 1..T, backward stack reads t = T..1; the output
    combines both stacks' terminal hidden states.

    ``masks`` is a pair (forward masks, backward masks)."""
    X, single = _as_batch(windows)
    for layer in params.forward + params.backward:
        layer.check()
    if X.shape[2] != params.forward[0].input_size:
        raise ValueError("input size mismatch")
    if masks is None:
        if training:
            masks = (_draw_masks(params.forward, X.shape[1], X.shape[0], params.dropout, rng),
                     _draw_masks(params.backward, X.shape[1], X.shape[0], params.dropout, rng))
        else:
            masks = ([None] * (len(params.forward) - 1), [None] * (len(params.backward) - 1))
    h_f, cache_f = _stack_forward(params.forward, X, masks[0])
    h_b, cache_b = _stack_forward(params.backward, X[::-1], masks[1])
    y = h_f @ params.w_fwd + h_b @ params.w_bwd + params.b_out[0]
    out = y[0] if single else y
    if return_cache:
        return out, ForwardCache("bilstm", y, {"fwd": (h_f, cache_f), "bwd": (h_b, cache_b)})
    return out


def forward(params, windows, **kwargs):
    if isinstance(params, BilstmParams):
        return bilstm_forward(params, windows, **kwargs)
    return lstm_forward(params, windows, **kwargs)


def mse(pred, target) -> float:
    d = np.atleast_1d(pred) - np.atleast_1d(target)
    return float(np.mean(d * d))


def backward(params, cache: ForwardCache | None, targets) -> dict[str, np.ndarray]:
    """Gradients of the mean squared error over the cached batch with respect
    to every array in ``params.named_arrays()``."""
    if cache is None:
        raise ValueError("backward needs the cache of a forward pass (return_cache=True)")
    y = cache.prediction
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    dy = 2.0 * (y - targets) / len(y)
    grads: dict[str, np.ndarray] = {"b_out": np.array([dy.sum()])}
    if cache.arch == "lstm":
        h_last, sc = cache.stacks["layer"]
        grads["w_out"] = h_last.T @ dy
        _stack_backward(params.layers, sc, np.outer(dy, params.w_out), "layer", grads)
    else:
        h_f, sc_f = cache.stacks["fwd"]
        h_b, sc_b = cache.stacks["bwd"]
        grads["w_fwd"] = h_f.T @ dy
        grads["w_bwd"] = h_b.T @ dy
        _stack_backward(params.forward, sc_f, np.outer(dy, params.w_fwd), "fwd", grads)
        _stack_backward(params.backward, sc_b, np.outer(dy, params.w_bwd), "bwd", grads)
    return grads


@dataclass
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.3
    hidden: tuple = (128, 128)
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        self.hidden = tuple(int(h) for h in self.hidden)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class Adam:
    def __init__(self, arrays: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.arrays = arrays
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.arrays.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: object
    loss_curve: list[float]
    initial_loss: float


def train_recurrent(dataset, config: TrainConfig, arch: str = "bilstm",
                    log=None) -> TrainResult:
    """Mini-batch Adam on scaled windows. Initialization, per-epoch shuffles
    and dropout masks all derive from ``config.seed``."""
    X = np.asarray(dataset.scaled_inputs, dtype=float)
    y = np.asarray(dataset.scaled_targets, dtype=float)
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    params = init_params(arch, config.hidden, 1, config.dropout, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    arrays = params.named_arrays()
    opt = Adam(arrays, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    initial = mse(forward(params, X), y)
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            batch = order[s:s + config.batch_size]
            pred, cache = forward(params, X[batch], training=True, rng=rng, return_cache=True)
            total += mse(pred, y[batch]) * len(batch)
            opt.step(backward(params, cache, y[batch]))
        loss = total / n
        if not np.isfinite(loss):
            raise TrainingDiverged(epoch)
        curve.append(loss)
        if log is not None:
            log(epoch, loss)
    return TrainResult(params, curve, initial)


def predict(params, windows, batch_size: int = 4096) -> np.ndarray:
    """Inference-mode predictions for a (B, T) array of scaled windows."""
    X = np.asarray(windows, dtype=float)
    return np.concatenate([forward(params, X[s:s + batch_size])
                           for s in range(0, len(X), batch_size)])
