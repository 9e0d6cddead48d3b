"""Network blocks and the PhyCRNet / PhyCRNet-s rollout.

One step maps a physical field ``u_i`` of shape (n, H, W) to ``u_{i+1}``:

    encoder (3 strided convs + ReLU) -> ConvLSTM -> pixel shuffle -> 5x5 conv
    u_{i+1} = u_i + dt * output

All convolutions use circular padding.  With ``cycle_index > 0`` the encoder
only runs every ``cycle_index`` steps and the previous hidden state is fed
back as the latent input in between.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, NumericError
from .tensor import Tensor

pixel_shuffle = T.pixel_shuffle


@dataclass(frozen=True)
class ArchSpec:
    channels: int = 2
    encoder_widths: tuple = (8, 32, 128)
    encoder_kernel: int = 4
    encoder_stride: int = 2
    hidden: int = 128
    lstm_kernel: int = 3
    upscale: int = 8
    out_kernel: int = 5
    cycle_index: int = 0
    no_ar: bool = False
    no_residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        self.validate()

    def validate(self):
        if self.cycle_index < 0:
            raise ConfigurationError(f"cycle_index must be >= 0, got {self.cycle_index}")
        if self.encoder_stride ** len(self.encoder_widths) != self.upscale:
            raise ConfigurationError(
                f"encoder downsampling {self.encoder_stride}^{len(self.encoder_widths)} "
                f"!= pixel-shuffle factor {self.upscale}")
        if self.hidden != self.channels * self.upscale**2:
            raise ConfigurationError(
                f"hidden width {self.hidden} must equal channels*upscale^2 = "
                f"{self.channels * self.upscale**2} (pixel-shuffle input)")
        if self.cycle_index > 0 and self.hidden != self.encoder_widths[-1]:
            raise ConfigurationError("cycle_index > 0 feeds h back as latent input: hidden must equal last encoder width")
        if self.encoder_kernel < self.encoder_stride:
            raise ConfigurationError("encoder kernel smaller than its stride")

    def check_grid(self, H: int, W: int):
        if H % self.upscale or W % self.upscale:
            raise ConfigurationError(f"grid {H}x{W} not divisible by total stride {self.upscale}")

    @property
    def latent_channels(self) -> int:
        return self.encoder_widths[-1]

    def to_json(self) -> str:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> ArchSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown ArchSpec keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> ArchSpec:
        return cls.from_dict(json.loads(text))


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> LstmState:
        z = np.zeros((channels, height, width))
        return cls(Tensor(z), Tensor(z))


@dataclass
class ConvLstmParams:
    Wi: Tensor
    Wf: Tensor
    Wc: Tensor
    Wo: Tensor
    bi: Tensor
    bf: Tensor
    bc: Tensor
    bo: Tensor

    def __post_init__(self):
        shapes = {self.Wi.shape, self.Wf.shape, self.Wc.shape, self.Wo.shape}
        if len(shapes) != 1:
            raise DimensionError(f"gate kernels differ in shape: {sorted(shapes)}")
        hidden = self.Wi.shape[0]
        for b in (self.bi, self.bf, self.bc, self.bo):
            if b.shape != (hidden,):
                raise DimensionError(f"gate bias shape {b.shape} != ({hidden},)")

    @property
    def hidden(self) -> int:
        return self.Wi.shape[0]

    @classmethod
    def from_params(cls, params: dict) -> ConvLstmParams:
        return cls(*(params[f"lstm.{k}"] for k in ("Wi", "Wf", "Wc", "Wo", "bi", "bf", "bc", "bo")))

    def stacked(self):
        """Gate kernels fused into one (4*hidden, C, k, k) convolution, order i, f, c, o."""
        return (T.concat((self.Wi, self.Wf, self.Wc, self.Wo), axis=0),
                T.concat((self.bi, self.bf, self.bc, self.bo), axis=0))


def _same_pad(k: int, stride: int = 1):
    total = k - stride
    return (total // 2, total - total // 2) * 2


def convlstm_step(X: Tensor, state: LstmState, p: ConvLstmParams, stacked=None):
    """One ConvLSTM update; returns ``(h_new, LstmState(h_new, C_new))``."""
    if X.shape[1:] != state.h.shape[1:] or state.h.shape != state.c.shape:
        raise DimensionError(f"ConvLSTM input {X.shape} vs state h {state.h.shape}, C {state.c.shape}")
    W, b = stacked if stacked is not None else p.stacked()
    k = W.shape[-1]
    pre = T.conv2d(T.concat((X, state.h), axis=0), W, b, stride=1, padding=_same_pad(k))
    n = p.hidden
    i = T.sigmoid(pre[0:n])
    f = T.sigmoid(pre[n:2 * n])
    c_tilde = T.tanh(pre[2 * n:3 * n])
    o = T.sigmoid(pre[3 * n:4 * n])
    c_new = f * state.c + i * c_tilde
    h_new = o * T.tanh(c_new)
    return h_new, LstmState(h_new, c_new)


def init_params(spec: ArchSpec, seed: int = 0) -> dict:
    """Fan-in scaled uniform kernels; zero biases except the forget gate (1.0).

    Weight-normalized layers start with ``gain = ||direction||`` so the
    effective kernel equals the sampled one.
    """
    rng = np.random.default_rng(seed)
    params = {}

    def uniform(shape):
        bound = 1.0 / math.sqrt(np.prod(shape[1:]))
        return rng.uniform(-bound, bound, size=shape)

    cin = spec.channels
    k = spec.encoder_kernel
    for idx, width in enumerate(spec.encoder_widths):
        w = uniform((width, cin, k, k))
        params[f"encoder.{idx}.weight"] = w
        params[f"encoder.{idx}.gain"] = np.sqrt((w.reshape(width, -1) ** 2).sum(axis=1))
        params[f"encoder.{idx}.bias"] = np.zeros(width)
        cin = width
    gate_shape = (spec.hidden, spec.latent_channels + spec.hidden, spec.lstm_kernel, spec.lstm_kernel)
    for gate in ("Wi", "Wf", "Wc", "Wo"):
        params[f"lstm.{gate}"] = uniform(gate_shape)
    for gate in ("bi", "bf", "bc", "bo"):
        params[f"lstm.{gate}"] = np.full(spec.hidden, 1.0 if gate == "bf" else 0.0)
    w = uniform((spec.channels, spec.channels, spec.out_kernel, spec.out_kernel))
    params["out.weight"] = w
    params["out.gain"] = np.sqrt((w.reshape(spec.channels, -1) ** 2).sum(axis=1))
    params["out.bias"] = np.zeros(spec.channels)
    return {name: Tensor(v, requires_grad=True) for name, v in params.items()}


def count_params(params: dict) -> int:
    return sum(p.size for p in params.values())


def zero_output_layer(params: dict) -> dict:
    """Copy of ``params`` whose output convolution is identically zero (gain 0, bias 0)."""
    out = dict(params)
    out["out.gain"] = Tensor(np.zeros(params["out.gain"].shape), requires_grad=True)
    out["out.bias"] = Tensor(np.zeros(params["out.bias"].shape), requires_grad=True)
    return out


class Network:
    """Effective (weight-normalized, gate-fused) kernels for one forward pass.

    Building this once per rollout keeps the reparameterization out of the
    per-step loop while gradients still reach the raw parameters.
    """

    def __init__(self, params: dict, spec: ArchSpec):
        self.spec = spec
        self.encoder = []
        for idx in range(len(spec.encoder_widths)):
            w = T.weight_norm(params[f"encoder.{idx}.weight"], params[f"encoder.{idx}.gain"])
            self.encoder.append((w, params[f"encoder.{idx}.bias"]))
        self.lstm = ConvLstmParams.from_params(params)
        self.lstm_stacked = self.lstm.stacked()
        self.out_w = T.weight_norm(params["out.weight"], params["out.gain"])
        self.out_b = params["out.bias"]

    def encode(self, u: Tensor) -> Tensor:
        x = u
        pad = _same_pad(self.spec.encoder_kernel, self.spec.encoder_stride)
        for w, b in self.encoder:
            x = T.relu(T.conv2d(x, w, b, stride=self.spec.encoder_stride, padding=pad))
        return x

    def decode(self, h: Tensor) -> Tensor:
        y = pixel_shuffle(h, self.spec.upscale)
        return T.conv2d(y, self.out_w, self.out_b, stride=1, padding=_same_pad(self.spec.out_kernel))

    def initial_state(self, u: Tensor) -> LstmState:
        r = self.spec.upscale
        return LstmState.zeros(self.spec.hidden, u.shape[1] // r, u.shape[2] // r)


def phycrnet_step(u: Tensor, state: LstmState, params: dict, dt: float, spec: ArchSpec, net: Network | None = None):
    """Full-encoder step: returns ``(u_next, state_new)``."""
    u = T.as_tensor(u)
    spec.check_grid(*u.shape[1:])
    net = net or Network(params, spec)
    h, state = convlstm_step(net.encode(u), state, net.lstm, net.lstm_stacked)
    out = net.decode(h)
    u_next = out if spec.no_residual else u + dt * out
    return u_next, state


@dataclass
class Carry:
    """Everything needed to continue a rollout: recurrent state, step index, pinned input."""
    lstm: LstmState
    step: int = 0
    anchor: Tensor | None = None


def rollout(u0, steps: int, params: dict, dt: float, spec: ArchSpec, carry: Carry | None = None):
    """Autoregressive rollout; returns ``([u_0, ..., u_steps], carry)``.

    ``u0`` is the known initial state (or the last state of a previous call
    together with its ``carry``).
    """
    if steps < 1:
        raise ConfigurationError(f"rollout needs steps >= 1, got {steps}")
    u0 = T.as_tensor(u0)
    if u0.ndim != 3 or u0.shape[0] != spec.channels:
        raise DimensionError(f"initial field shape {u0.shape} does not have {spec.channels} channels")
    spec.check_grid(*u0.shape[1:])
    net = Network(params, spec)
    if carry is None:
        carry = Carry(net.initial_state(u0), 0, u0 if spec.no_ar else None)
    state, anchor = carry.lstm, carry.anchor
    frames = [u0]
    cycle = spec.cycle_index
    for i in range(carry.step, carry.step + steps):
        u_in = anchor if spec.no_ar else frames[-1]
        if cycle == 0 or i % cycle == 0:
            X = net.encode(u_in)
        else:
            X = state.h
        h, state = convlstm_step(X, state, net.lstm, net.lstm_stacked)
        out = net.decode(h)
        u_next = out if spec.no_residual else u_in + dt * out
        if not np.all(np.isfinite(u_next.data)):
            raise NumericError(f"non-finite field produced at step {i + 1}", step=i + 1)
        frames.append(u_next)
    return frames, Carry(state, carry.step + steps, anchor)
