"""Acoustic encoder: strided convolutions, multiplicative units, LSTM stack.

The pipeline maps a (T, F) feature matrix to the high-level representation
h of shape (U, d), where U follows the composed ceil rule of the configured
down-sampling plan:

    [frame stacking] -> conv(+stride) x n -> MU x m -> flatten freq axis
    -> [LSTM -> projection(+ReLU, layer norm) -> optional pooling] x layers
    -> [row convolution]                        (forward-only encoders)

Each convolution that strides time by more than one also strides frequency
by two; the remaining frequency axis is folded into the channel dimension
before the recurrent stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .downsample import DownsampleSpec
from .errors import ConfigError, ShapeError
from .features import stack_frames
from . import tensor as tz
from .tensor import Tensor, parameter

INIT_SCALE = 0.05
FORGET_BIAS = 1.0


def uniform_param(rng, shape, scale=None):
    """Seeded uniform init; matrices and kernels default to a fan-scaled
    range (a flat +-0.05 vanishes through a four-layer stack), vectors to
    +-0.05."""
    if scale is None:
        if len(shape) == 4:
            kt, kf, ci, co = shape
            scale = np.sqrt(6.0 / (kt * kf * ci + kt * kf * co))
        elif len(shape) >= 2:
            scale = np.sqrt(6.0 / (shape[-2] + shape[-1]))
        else:
            scale = INIT_SCALE
    return parameter(rng.uniform(-scale, scale, size=shape))


@dataclass
class EncoderConfig:
    downsample: DownsampleSpec
    feature_dim: int
    lstm_layers: int = 4
    cells: int = 32
    bidirectional: bool = True
    mu_count: int = 1
    conv_channels: list | None = None
    row_conv_context: int = 4
    mu_layer_norm: bool = True

    def __post_init__(self):
        n_conv = len(self.downsample.conv_strides)
        if self.conv_channels is None:
            # first conv layer wide, doubling per layer
            self.conv_channels = [64 * 2 ** i for i in range(n_conv)]
        if len(self.conv_channels) != n_conv:
            raise ConfigError(
                f"{len(self.conv_channels)} conv channels for {n_conv} conv layers")
        for layer, width in self.downsample.pooling:
            if layer > self.lstm_layers:
                raise ConfigError(
                    f"pooling after LSTM layer {layer} but only {self.lstm_layers} layers")
        if self.lstm_layers < 1 or self.cells < 1 or self.feature_dim < 1:
            raise ConfigError("lstm_layers, cells and feature_dim must be positive")
        if self.mu_count < 0 or self.row_conv_context < 0:
            raise ConfigError("mu_count and row_conv_context must be >= 0")

    def freq_strides(self):
        # frequency halves alongside any time-striding conv layer
        return [2 if s > 1 else 1 for s in self.downsample.conv_strides]

    def lstm_input_dim(self):
        f = self.feature_dim
        if self.downsample.stack:
            f *= self.downsample.stack[0]
        channels = 1
        for sf, c in zip(self.freq_strides(), self.conv_channels):
            f = -(-f // sf)
            channels = c
        return f * channels

    @property
    def output_dim(self):
        return self.cells * (2 if self.bidirectional else 1)


class MuParams:
    """Gated convolutional block: three sigmoid gates and one tanh update.

    All four 3x3 kernels map c channels to c channels so the elementwise
    combination is shape-valid; layer normalization (when enabled) is
    applied to each pre-activation, over channels.
    """

    def __init__(self, channels, rng, layer_norm=True):
        self.channels = channels
        self.layer_norm = layer_norm
        self.kernels = [uniform_param(rng, (3, 3, channels, channels)) for _ in range(4)]
        self.biases = [uniform_param(rng, (channels,)) for _ in range(5)]
        self.ln_gains = [parameter(np.ones(channels)) for _ in range(4)]
        self.ln_biases = [parameter(np.zeros(channels)) for _ in range(4)]

    def named(self, prefix):
        for i, k in enumerate(self.kernels):
            yield f"{prefix}.w{i + 1}", k
        for i, b in enumerate(self.biases):
            yield f"{prefix}.b{i + 1}", b
        for i in range(4):
            yield f"{prefix}.ln_gain{i + 1}", self.ln_gains[i]
            yield f"{prefix}.ln_bias{i + 1}", self.ln_biases[i]


def mu_forward(x, params):
    """Apply one multiplicative unit; shape (T, F, c) is preserved."""
    if x.shape[-1] != params.channels:
        raise ShapeError(
            f"multiplicative unit built for {params.channels} channels, input has {x.shape[-1]}")

    def pre(i):
        a = tz.conv2d(x, params.kernels[i]) + params.biases[i]
        if params.layer_norm:
            a = tz.layer_norm(a, params.ln_gains[i], params.ln_biases[i])
        return a

    g1 = tz.sigmoid(pre(0))
    g2 = tz.sigmoid(pre(1))
    g3 = tz.sigmoid(pre(2))
    u = tz.tanh(pre(3))
    return g1 * tz.tanh(g2 * x + g3 * u + params.biases[4])


class LstmParams:
    """One direction of one LSTM layer; gate order is i, f, g, o."""

    def __init__(self, input_dim, cells, rng):
        self.cells = cells
        self.wx = uniform_param(rng, (input_dim, 4 * cells))
        self.wh = uniform_param(rng, (cells, 4 * cells))
        b = rng.uniform(-INIT_SCALE, INIT_SCALE, size=4 * cells)
        b[cells:2 * cells] = FORGET_BIAS      # open forget gates at the start
        self.b = parameter(b)

    def named(self, prefix):
        yield f"{prefix}.wx", self.wx
        yield f"{prefix}.wh", self.wh
        yield f"{prefix}.b", self.b


def lstm_step(p, x, h, c):
    """One cell update; x, h, c are (1, dim) rows."""
    n = p.cells
    z = x @ p.wx + h @ p.wh + p.b
    i = tz.sigmoid(z[:, 0:n])
    f = tz.sigmoid(z[:, n:2 * n])
    g = tz.tanh(z[:, 2 * n:3 * n])
    o = tz.sigmoid(z[:, 3 * n:4 * n])
    c2 = f * c + i * g
    h2 = o * tz.tanh(c2)
    return h2, c2


def lstm_run(p, xs, reverse=False):
    """Run a direction over a (T, D) tensor; returns a (T, cells) tensor."""
    T = xs.shape[0]
    h = Tensor(np.zeros((1, p.cells)))
    c = Tensor(np.zeros((1, p.cells)))
    order = range(T - 1, -1, -1) if reverse else range(T)
    rows = [None] * T
    for t in order:
        h, c = lstm_step(p, xs[t:t + 1, :], h, c)
        rows[t] = h
    return tz.concat(rows, axis=0)


class EncoderParams:
    """All encoder weights, constructed deterministically from an rng."""

    def __init__(self, cfg: EncoderConfig, rng):
        self.cfg = cfg
        spec = cfg.downsample
        self.conv_kernels = []
        self.conv_biases = []
        self.conv_ln = []
        f = cfg.feature_dim * (spec.stack[0] if spec.stack else 1)
        c_in = 1
        for c_out in cfg.conv_channels:
            self.conv_kernels.append(uniform_param(rng, (3, 3, c_in, c_out)))
            self.conv_biases.append(uniform_param(rng, (c_out,)))
            self.conv_ln.append((parameter(np.ones(c_out)), parameter(np.zeros(c_out))))
            c_in = c_out
        self.mu = [MuParams(c_in, rng, layer_norm=cfg.mu_layer_norm)
                   for _ in range(cfg.mu_count)]

        self.lstm_fwd = []
        self.lstm_bwd = []
        self.proj = []
        d_in = cfg.lstm_input_dim()
        width = cfg.output_dim
        for _ in range(cfg.lstm_layers):
            self.lstm_fwd.append(LstmParams(d_in, cfg.cells, rng))
            if cfg.bidirectional:
                self.lstm_bwd.append(LstmParams(d_in, cfg.cells, rng))
            self.proj.append({
                "w": uniform_param(rng, (width, width)),
                "b": uniform_param(rng, (width,)),
                "gain": parameter(np.ones(width)),
                "bias": parameter(np.zeros(width)),
            })
            d_in = width
        if not cfg.bidirectional:
            self.row_conv = uniform_param(rng, (cfg.row_conv_context + 1, width))
        else:
            self.row_conv = None

    def named(self, prefix="encoder"):
        for i, (k, b) in enumerate(zip(self.conv_kernels, self.conv_biases)):
            yield f"{prefix}.conv{i}.kernel", k
            yield f"{prefix}.conv{i}.bias", b
            yield f"{prefix}.conv{i}.ln_gain", self.conv_ln[i][0]
            yield f"{prefix}.conv{i}.ln_bias", self.conv_ln[i][1]
        for i, mu in enumerate(self.mu):
            yield from mu.named(f"{prefix}.mu{i}")
        for i in range(len(self.lstm_fwd)):
            yield from self.lstm_fwd[i].named(f"{prefix}.lstm{i}.fwd")
            if self.lstm_bwd:
                yield from self.lstm_bwd[i].named(f"{prefix}.lstm{i}.bwd")
            for key, t in self.proj[i].items():
                yield f"{prefix}.proj{i}.{key}", t
        if self.row_conv is not None:
            yield f"{prefix}.row_conv", self.row_conv


def row_conv(r, weights):
    """Bounded-lookahead projection: out_t = sum_tau w_tau * r_{t+tau}.

    ``weights`` is (C+1, d) with per-dimension weights; future rows past the
    end count as zero. C = 0 with unit weights is the identity.
    """
    T, d = r.shape
    ctx = weights.shape[0] - 1
    zero_row = Tensor(np.zeros((1, d)))
    out = r * weights[0:1, :]
    for tau in range(1, ctx + 1):
        if tau < T:
            shifted = tz.concat([r[tau:, :]] + [zero_row] * tau, axis=0)
        else:
            shifted = tz.concat([zero_row] * T, axis=0)
        out = out + shifted * weights[tau:tau + 1, :]
    return out


def encode(feats, cfg: EncoderConfig, params: EncoderParams):
    """Encode a (T, F) feature matrix into the (U, d) representation."""
    feats = np.asarray(feats, dtype=tz.get_default_dtype())
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ShapeError(f"encoder input must be a nonempty (T, F) matrix, got {feats.shape}")
    if feats.shape[1] != cfg.feature_dim:
        raise ShapeError(
            f"encoder configured for {cfg.feature_dim} feature dims, got {feats.shape[1]}")
    spec = cfg.downsample
    if spec.output_length(feats.shape[0]) < 1:
        raise ShapeError("input too short: encoder output would be empty")
    if spec.stack:
        feats = stack_frames(feats, *spec.stack)

    x = Tensor(feats.reshape(feats.shape[0], feats.shape[1], 1))
    for i, stride in enumerate(spec.conv_strides):
        sf = 2 if stride > 1 else 1
        x = tz.conv2d(x, params.conv_kernels[i], stride_t=stride, stride_f=sf)
        x = x + params.conv_biases[i]
        gain, bias = params.conv_ln[i]
        x = tz.layer_norm(x, gain, bias)
        x = tz.relu(x)
    for mu in params.mu:
        x = mu_forward(x, mu)

    T = x.shape[0]
    x = tz.reshape(x, (T, int(np.prod(x.shape[1:]))))

    pool_after = dict(spec.pooling)
    for i in range(cfg.lstm_layers):
        fwd = lstm_run(params.lstm_fwd[i], x)
        if cfg.bidirectional:
            bwd = lstm_run(params.lstm_bwd[i], x, reverse=True)
            x = tz.concat([fwd, bwd], axis=1)
        else:
            x = fwd
        p = params.proj[i]
        x = tz.layer_norm(tz.relu(x @ p["w"] + p["b"]), p["gain"], p["bias"])
        width = pool_after.get(i + 1)
        if width:
            x = tz.max_pool_time(x, width)
    if params.row_conv is not None:
        x = row_conv(x, params.row_conv)
    return x
