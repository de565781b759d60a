"""S5-RF layer, spike nonlinearity, encoder, leaky readout and the full model."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn

from . import discretize
from .config import ModelConfig, SurrogateConfig
from .errors import InvalidInputError
from .hippo import Discretization, SsmLayerParams, init_layer, init_layer_random
from .scan import linear_recurrence

_SQRT_2PI = math.sqrt(2 * math.pi)


def _gauss(v, mu, width):
    return torch.exp(-((v - mu) ** 2) / (2 * width**2))


def surrogate_grad(v, h=0.15, s=6.0, sigma=0.5):
    """Multi-Gaussian pseudo-derivative of the Heaviside step.

    A central bump of height 1 + h flanked by two wide negative lobes of
    height h centred at +-sigma.
    """
    if not torch.is_tensor(v):
        v = torch.as_tensor(v, dtype=torch.float64)
    return (1 + h) * _gauss(v, 0.0, sigma) - h * _gauss(v, sigma, s * sigma) - h * _gauss(v, -sigma, s * sigma)


def smooth_step(v, h=0.15, s=6.0, sigma=0.5):
    """Antiderivative of :func:`surrogate_grad` (zero at -inf).

    Used as a differentiable stand-in for the spike when checking gradients:
    its exact derivative is the surrogate.
    """
    def cdf(x):
        return 0.5 * (1 + torch.erf(x / math.sqrt(2)))

    wide = s * sigma
    return _SQRT_2PI * (
        (1 + h) * sigma * cdf(v / sigma) - h * wide * (cdf((v - sigma) / wide) + cdf((v + sigma) / wide))
    )


class SpikeFunction(torch.autograd.Function):
    """Heaviside forward (H(0) = 1), multi-Gaussian surrogate backward."""

    @staticmethod
    def forward(ctx, v, h, s, sigma):
        ctx.save_for_backward(v)
        ctx.shape = (h, s, sigma)
        return (v >= 0).to(v.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (v,) = ctx.saved_tensors
        return grad_out * surrogate_grad(v, *ctx.shape), None, None, None


def spike_forward(x, xi=1.0):
    """Binary spikes where ``Re(x) >= xi``. No reset follows a spike."""
    x = torch.as_tensor(x)
    v = x.real if x.is_complex() else x
    return (v - xi >= 0).to(v.dtype)


def activation(v, kind="spike", surrogate: SurrogateConfig = SurrogateConfig()):
    """Apply the layer nonlinearity to the threshold-relative potential ``v``."""
    if kind == "spike":
        return SpikeFunction.apply(v, surrogate.h, surrogate.s, surrogate.sigma)
    if kind == "smooth":
        return smooth_step(v, surrogate.h, surrogate.s, surrogate.sigma)
    if kind == "linear":
        return v
    raise ValueError(f"unknown activation {kind!r}")


def apply_connection(u, b_bar):
    """Dense drive ``b_bar @ u_k`` for real ``u`` (..., L, H_in) and complex ``b_bar``."""
    return torch.complex(u @ b_bar.real.transpose(0, 1), u @ b_bar.imag.transpose(0, 1))


def apply_connection_sparse(spikes, b_bar):
    """Same as :func:`apply_connection` for a binary (L, H_in) raster, summing
    only the columns of ``b_bar`` that belong to active inputs."""
    spikes = torch.as_tensor(spikes)
    out = torch.zeros(spikes.shape[0], b_bar.shape[0], dtype=b_bar.dtype)
    steps, cols = torch.nonzero(spikes, as_tuple=True)
    out.index_add_(0, steps, b_bar[:, cols].transpose(0, 1))
    return out


class RFLayer(nn.Module):
    """One S5-RF layer: eta-scaled discretisation, diagonal scan, threshold.

    Complex quantities are stored as separate real/imaginary parameters.
    ``fixed_basis`` (continuous-input layers only) is a buffer, so it is
    never updated, although gradients flow through it.
    """

    def __init__(self, params: SsmLayerParams, *, dt=1.0, eta_shared=False, scan_mode="parallel",
                 activation="spike", surrogate: SurrogateConfig = None, dtype=torch.float32):
        super().__init__()
        t = lambda x: torch.as_tensor(np.ascontiguousarray(x), dtype=dtype)
        self.mode = Discretization.parse(params.mode)
        self.dt = float(dt)
        self.scan_mode = scan_mode
        self.activation = activation
        self.surrogate = surrogate or SurrogateConfig()
        self.log_neg_real = nn.Parameter(t(params.log_neg_real))
        self.freq = nn.Parameter(t(params.freq))
        log_eta = params.log_eta[:1] if eta_shared else params.log_eta
        self.log_eta = nn.Parameter(t(log_eta))
        self.conn_re = nn.Parameter(t(params.connection.real))
        self.conn_im = nn.Parameter(t(params.connection.imag))
        self.register_buffer("threshold", t(params.threshold))
        if params.fixed_basis is not None:
            self.register_buffer("basis_re", t(params.fixed_basis.real))
            self.register_buffer("basis_im", t(params.fixed_basis.imag))
        else:
            self.basis_re = self.basis_im = None

    @property
    def size(self):
        return self.freq.shape[0]

    @property
    def input_size(self):
        return self.conn_re.shape[1]

    def lambdas(self):
        return torch.complex(-torch.exp(self.log_neg_real), self.freq)

    def eta(self):
        return torch.exp(self.log_eta).expand(self.size)

    def connection(self):
        return torch.complex(self.conn_re, self.conn_im)

    def discrete(self):
        fn = discretize.zoh if self.mode is Discretization.ZOH else discretize.dirac
        return fn(self.lambdas(), self.eta(), self.connection(), self.dt)

    def potential(self, u, return_states=False):
        if u.shape[-1] != self.input_size:
            raise InvalidInputError(f"layer expects {self.input_size} input channels, got {u.shape[-1]}")
        a_bar, b_bar = self.discrete()
        states = linear_recurrence(a_bar, apply_connection(u.to(self.conn_re.dtype), b_bar), self.scan_mode)
        if self.basis_re is not None:
            v = states.real @ self.basis_re.T - states.imag @ self.basis_im.T
        else:
            v = states.real
        return (v, states) if return_states else v

    def forward(self, u):
        v = self.potential(u)
        if self.activation == "linear":
            return v
        return activation(v - self.threshold, self.activation, self.surrogate)


class Encoder(nn.Module):
    def __init__(self, in_dim, out_dim, bias=False, seed=0, dtype=torch.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((out_dim, in_dim)) / math.sqrt(in_dim)
        self.weight = nn.Parameter(torch.as_tensor(w, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=dtype)) if bias else None

    def forward(self, u):
        return encoder_forward(self.weight, u, self.bias)


def encoder_forward(weight, u, bias=None):
    if u.shape[-1] != weight.shape[1]:
        raise InvalidInputError(f"encoder expects {weight.shape[1]} channels, got {u.shape[-1]}")
    y = u.to(weight.dtype) @ weight.T
    return y if bias is None else y + bias


@dataclass
class ReadoutParams:
    weights: torch.Tensor  # (K, H)
    log_tau: torch.Tensor  # (K,)
    bias: torch.Tensor = None


def readout_forward(params: ReadoutParams, s, mode="parallel"):
    """Leaky integrator ``y_k = exp(-1/tau) y_{k-1} + W s_k`` from ``y = 0``."""
    if s.shape[-1] != params.weights.shape[1]:
        raise InvalidInputError(f"readout expects {params.weights.shape[1]} inputs, got {s.shape[-1]}")
    drive = s.to(params.weights.dtype) @ params.weights.T
    if params.bias is not None:
        drive = drive + params.bias
    decay = torch.exp(-torch.exp(-params.log_tau))
    return linear_recurrence(decay, drive, mode)


class Readout(nn.Module):
    def __init__(self, in_dim, num_classes, tau=10.0, bias=False, seed=0, dtype=torch.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((num_classes, in_dim)) / math.sqrt(in_dim)
        self.weight = nn.Parameter(torch.as_tensor(w, dtype=dtype))
        self.log_tau = nn.Parameter(torch.full((num_classes,), math.log(tau), dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(num_classes, dtype=dtype)) if bias else None
        self.scan_mode = "parallel"

    def forward(self, s):
        return readout_forward(ReadoutParams(self.weight, self.log_tau, self.bias), s, self.scan_mode)


def _eta_init(cfg: ModelConfig, size, rng):
    if cfg.eta_init == "ones":
        return np.zeros(size)
    return rng.uniform(math.log(cfg.eta_min), math.log(cfg.eta_max), size=size)


def build_layer_params(cfg: ModelConfig, index: int, in_dim: int, size: int, seed: int) -> SsmLayerParams:
    continuous = index == 0 and cfg.first_layer_mode == "zoh"
    mode = Discretization.ZOH if continuous else Discretization.DIRAC
    if cfg.init == "hippo":
        params = init_layer(in_dim, size, cfg.block_size, seed, mode, fixed_basis=continuous,
                            threshold=cfg.threshold)
    else:
        params = init_layer_random(in_dim, size, seed, mode, threshold=cfg.threshold)
    params.log_eta = _eta_init(cfg, size, np.random.default_rng([seed, 1]))
    return params


class S5RFModel(nn.Module):
    """Encoder -> S5-RF stack (identity skips between equal widths) ->
    leaky readout -> mean over time."""

    def __init__(self, cfg: ModelConfig, dtype=torch.float32):
        super().__init__()
        self.cfg = cfg.validate()
        seeds = np.random.SeedSequence(cfg.seed).generate_state(len(cfg.layer_sizes) + 2)
        width = cfg.layer_sizes[0]
        self.encoder = Encoder(cfg.input_dim, width, cfg.encoder_bias, int(seeds[0]), dtype)
        layers = []
        for i, size in enumerate(cfg.layer_sizes):
            p = build_layer_params(cfg, i, width, size, int(seeds[i + 1]))
            layers.append(RFLayer(p, dt=cfg.dt, eta_shared=cfg.eta_shared, scan_mode=cfg.scan_mode,
                                  activation=cfg.activation, surrogate=cfg.surrogate, dtype=dtype))
            width = size
        self.layers = nn.ModuleList(layers)
        self.readout = Readout(width, cfg.num_classes, cfg.readout_tau, cfg.readout_bias, int(seeds[-1]), dtype)
        self.readout.scan_mode = cfg.scan_mode

    def set_activation(self, kind):
        self.cfg = replace(self.cfg, activation=kind)
        for layer in self.layers:
            layer.activation = kind
        return self

    def forward(self, u, return_spikes=False):
        unbatched = u.dim() == 2
        if unbatched:
            u = u.unsqueeze(0)
        if u.dim() != 3 or u.shape[-1] != self.cfg.input_dim:
            raise InvalidInputError(f"expected input (B, L, {self.cfg.input_dim}), got {tuple(u.shape)}")
        x = self.encoder(u)
        spikes = []
        for layer in self.layers:
            s = layer(x)
            spikes.append(s)
            x = s + x if self.cfg.skip_connections and s.shape[-1] == x.shape[-1] else s
        logits = self.readout(x).mean(dim=-2)
        if unbatched:
            logits = logits[0]
            spikes = [s[0] for s in spikes]
        return (logits, spikes) if return_spikes else logits


def rf_layer_forward(params: SsmLayerParams, u, dt=1.0, scan_mode="parallel"):
    """Run a single layer in double precision straight from initial params."""
    layer = RFLayer(params, dt=dt, scan_mode=scan_mode, dtype=torch.float64)
    with torch.no_grad():
        return layer(torch.as_tensor(u, dtype=torch.float64))


def model_forward(model: S5RFModel, u):
    return model(u)
