"""Conditional style-based generator and projection discriminator.

Generator: latent z is L2-normalized, a class embedding is added (or the
embedding table's mean for unconditional sampling), and a small MLP produces
the intermediate latent w. Synthesis starts from a learned 8x8 constant and
applies two style blocks per resolution (modulated 3x3 conv with
demodulation, per-block scalar-gained noise broadcast, bias, leaky-ReLU),
with bilinear x2 upsampling between resolutions and a final 1x1 conv + tanh
into [-1, 1].

Discriminator: conv stack mirroring the generator's channel schedule down to
4x4, a 64-dim feature layer, and a projection head: logit = linear(f) +
<embed(label), f>. The whole trunk is piecewise-linear, so the gradient of
the logit with respect to the input image is assembled exactly (almost
everywhere) from transpose convolutions and recorded leaky-ReLU masks; that
chain is itself tape-recorded, which makes the R1 penalty differentiable in
the discriminator parameters without higher-order autodiff.

All layers use equalized learning-rate scaling: parameters are stored
unit-normal and multiplied by 1/sqrt(fan_in) at call time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ContractError, DimensionError
from .image import ImageBuffer
from .nn import Module
from .optim import Adam

LEAK = 0.2
DEMOD_EPS = 1e-8


@dataclass(frozen=True)
class StyleGanConfig:
    resolution: int = 32
    num_classes: int = 9
    channels: int = 1
    dz: int = 64
    dw: int = 64
    mapping_depth: int = 4
    base_channels: int = 64   # at 8x8, halved per resolution doubling

    def __post_init__(self):
        r = self.resolution
        if r < 8 or r & (r - 1):
            raise ConfigError(f"resolution must be a power of two >= 8, got {r}")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.num_classes < 1:
            raise ConfigError("need at least one class")
        if min(self.schedule().values()) < 1:
            raise ConfigError(
                f"channel schedule vanishes before {r}; raise base_channels")

    def resolutions(self) -> list[int]:
        out = [8]
        while out[-1] < self.resolution:
            out.append(out[-1] * 2)
        return out

    def schedule(self) -> dict[int, int]:
        return {r: self.base_channels // (r // 8) for r in self.resolutions()}


class EqLinear(Module):
    """Linear layer with runtime 1/sqrt(fan_in) weight scaling."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 bias_init: float = 0.0, zero_init: bool = False):
        init = np.zeros((n_in, n_out)) if zero_init else rng.standard_normal((n_in, n_out))
        self.weight = ag.parameter(init)
        self.bias = ag.parameter(np.full(n_out, float(bias_init)))
        self.scale = 1.0 / math.sqrt(n_in)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.weight) * self.scale + self.bias


class EqConv(Module):
    """Convolution with runtime 1/sqrt(fan_in) weight scaling."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0):
        self.weight = ag.parameter(rng.standard_normal((c_out, c_in, kernel, kernel)))
        self.bias = ag.parameter(np.zeros(c_out))
        self.scale = 1.0 / math.sqrt(c_in * kernel * kernel)
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        y = ag.conv2d(x, self.weight, stride=self.stride, pad=self.pad) * self.scale
        return y + ag.reshape(self.bias, (1, -1, 1, 1))

    def input_grad(self, g: Tensor) -> Tensor:
        """Transpose pass used by the discriminator's input-gradient chain."""
        return ag.conv2d_transpose(g, self.weight, stride=self.stride,
                                   pad=self.pad) * self.scale


class MappingNetwork(Module):
    def __init__(self, cfg: StyleGanConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = ag.parameter(
            rng.standard_normal((cfg.num_classes, cfg.dz)) / math.sqrt(cfg.dz))
        self.layers = [EqLinear(cfg.dz if i == 0 else cfg.dw, cfg.dw, rng)
                       for i in range(cfg.mapping_depth)]

    def __call__(self, z: Tensor, labels: np.ndarray | None) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.cfg.dz:
            raise DimensionError(f"expected (n, {self.cfg.dz}) latents, got {z.shape}")
        norm = ag.sqrt(ag.sum_(z * z, axis=1, keepdims=True) + 1e-8)
        h = z / norm
        if labels is None:
            h = h + ag.mean(self.embed, axis=0, keepdims=True)
        else:
            labels = _check_labels(labels, z.shape[0], self.cfg.num_classes)
            h = h + ag.embedding(self.embed, labels)
        for layer in self.layers:
            h = ag.leaky_relu(layer(h), LEAK)
        return h


def _check_labels(labels, n: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]")
    return labels


def modulated_conv(x: Tensor, weight: Tensor, style: Tensor,
                   demodulate: bool = True) -> Tensor:
    """Per-sample input-channel modulation, conv, optional demodulation.

    Scaling the input per channel and demodulating by the modulated kernel's
    norm is algebraically identical to scaling the kernel per sample, without
    materializing per-sample kernels.
    """
    n, ci = x.shape[0], x.shape[1]
    if style.shape != (n, ci):
        raise DimensionError(f"style shape {style.shape} != ({n}, {ci})")
    k = weight.shape[2]
    xs = x * ag.reshape(style, (n, ci, 1, 1))
    y = ag.conv2d(xs, weight, stride=1, pad=k // 2)
    if demodulate:
        k2 = ag.sum_(weight * weight, axis=(2, 3))                 # (co, ci)
        d2 = ag.matmul(style * style, ag.transpose(k2, (1, 0)))    # (n, co)
        y = y / ag.reshape(ag.sqrt(d2 + DEMOD_EPS), (n, -1, 1, 1))
    return y


class StyleBlock(Module):
    """Modulated conv + noise broadcast + bias + leaky-ReLU."""

    def __init__(self, c_in: int, c_out: int, dw: int, rng: np.random.Generator):
        self.affine = EqLinear(dw, c_in, rng, bias_init=1.0)
        self.weight = ag.parameter(rng.standard_normal((c_out, c_in, 3, 3)))
        self.wscale = 1.0 / math.sqrt(c_in * 9)
        self.noise_gain = ag.parameter(np.zeros(()))
        self.bias = ag.parameter(np.zeros(c_out))

    def __call__(self, x: Tensor, w_lat: Tensor, noise: np.ndarray | None) -> Tensor:
        style = self.affine(w_lat)
        y = modulated_conv(x, self.weight * self.wscale, style, demodulate=True)
        if noise is not None:
            y = y + Tensor(noise) * self.noise_gain
        return ag.leaky_relu(y + ag.reshape(self.bias, (1, -1, 1, 1)), LEAK)


class Synthesis(Module):
    def __init__(self, cfg: StyleGanConfig, rng: np.random.Generator):
        self.cfg = cfg
        sched = cfg.schedule()
        self.const = ag.parameter(rng.standard_normal((1, sched[8], 8, 8)))
        self.blocks: list[StyleBlock] = []
        self.block_res: list[int] = []
        prev = sched[8]
        for r in cfg.resolutions():
            c = sched[r]
            self.blocks.append(StyleBlock(prev, c, cfg.dw, rng))
            self.blocks.append(StyleBlock(c, c, cfg.dw, rng))
            self.block_res.extend([r, r])
            prev = c
        self.to_img = EqConv(prev, cfg.channels, 1, rng)
        self.passes = 0   # forward-pass counter; used for cache consistency

    def noise_shapes(self, n: int) -> list[tuple[int, ...]]:
        return [(n, 1, r, r) for r in self.block_res]

    def __call__(self, w: Tensor, noises: list[np.ndarray] | None,
                 capture: bool = False):
        self.passes += 1
        n = w.shape[0]
        if noises is not None and len(noises) != len(self.blocks):
            raise DimensionError(
                f"expected {len(self.blocks)} noise maps, got {len(noises)}")
        x = self.const + np.zeros((n, 1, 1, 1))
        acts: list[Tensor] = []
        for i, block in enumerate(self.blocks):
            if i >= 2 and self.block_res[i] != self.block_res[i - 1]:
                x = ag.upsample_bilinear2d(x, 2)
            x = block(x, w, None if noises is None else noises[i])
            acts.append(x)
        img = ag.tanh(self.to_img(x))
        return (img, acts) if capture else img


class Generator(Module):
    def __init__(self, cfg: StyleGanConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.mapping = MappingNetwork(cfg, rng)
        self.synthesis = Synthesis(cfg, rng)
        self.mean_w = np.zeros(cfg.dw)   # EMA buffer, not a trained parameter

    def map_latents(self, z: Tensor, labels: np.ndarray | None,
                    psi: float = 1.0) -> Tensor:
        if not 0.0 <= psi <= 1.0:
            raise ContractError(f"truncation psi must lie in [0, 1], got {psi}")
        w = self.mapping(z, labels)
        if psi == 1.0:
            return w
        anchor = Tensor(np.broadcast_to(self.mean_w, w.shape).copy())
        if psi == 0.0:
            return anchor
        return anchor + (w - anchor) * psi

    def update_mean_w(self, w_batch: np.ndarray, beta: float = 0.995) -> None:
        self.mean_w = beta * self.mean_w + (1.0 - beta) * w_batch.mean(axis=0)


UNCONDITIONAL = None   # alias documenting the sentinel accepted as a label


def generate_conditional(gen: Generator, seed: int, label: int | None,
                         count: int, psi: float = 1.0) -> list[ImageBuffer]:
    """Deterministic sampling: image i depends only on (seed, label, i).

    label None requests unconditional sampling (mean class embedding).
    """
    cfg = gen.cfg
    if label is not None and not 0 <= label < cfg.num_classes:
        raise ContractError(
            f"label {label} out of range for {cfg.num_classes} classes")
    label_code = cfg.num_classes if label is None else label
    out = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, label_code, i]))
        z = Tensor(rng.standard_normal((1, cfg.dz)))
        noises = [rng.standard_normal(s) for s in gen.synthesis.noise_shapes(1)]
        labels = None if label is None else np.array([label])
        w = gen.map_latents(z, labels, psi=psi)
        img = gen.synthesis(w, noises)
        out.append(ImageBuffer.from_planes((img.data[0] + 1.0) * 127.5))
    return out


class Discriminator(Module):
    def __init__(self, cfg: StyleGanConfig, rng: np.random.Generator):
        self.cfg = cfg
        sched = cfg.schedule()
        res_desc = cfg.resolutions()[::-1]
        self.from_rgb = EqConv(cfg.channels, sched[res_desc[0]], 1, rng)
        # flat list (named_params does not walk nested containers): pairs of
        # same-resolution 3x3 conv and 4x4 stride-2 downsampling conv
        self.stage_convs: list[EqConv] = []
        for r in res_desc:
            c = sched[r]
            c_next = sched[r // 2] if r > 8 else sched[8]
            self.stage_convs.append(EqConv(c, c, 3, rng, pad=1))
            self.stage_convs.append(EqConv(c, c_next, 4, rng, stride=2, pad=1))
        self.fc = EqLinear(sched[8] * 4 * 4, 64, rng)
        self.head = EqLinear(64, 1, rng, zero_init=True)
        self.embed = ag.parameter(np.zeros((cfg.num_classes, 64)))

    def _trunk(self, img: Tensor):
        if img.ndim != 4 or img.shape[1:] != (self.cfg.channels,
                                              self.cfg.resolution,
                                              self.cfg.resolution):
            raise DimensionError(
                f"expected (n, {self.cfg.channels}, {self.cfg.resolution}, "
                f"{self.cfg.resolution}) images, got {img.shape}")
        records: list[tuple[str, object]] = []

        def act(h: Tensor) -> Tensor:
            records.append(("leaky", np.where(h.data > 0, 1.0, LEAK)))
            return ag.leaky_relu(h, LEAK)

        h = self.from_rgb(img)
        records.append(("conv", self.from_rgb))
        h = act(h)
        for conv in self.stage_convs:
            h = conv(h)
            records.append(("conv", conv))
            h = act(h)
        records.append(("flatten", h.shape))
        h = ag.reshape(h, (h.shape[0], -1))
        h = self.fc(h)
        records.append(("linear", self.fc))
        feats = act(h)
        return feats, records

    def features(self, img: Tensor) -> Tensor:
        return self._trunk(img)[0]

    def logits(self, img: Tensor, labels) -> Tensor:
        feats, _ = self._trunk(img)
        return self._project(feats, labels)

    def _project(self, feats: Tensor, labels) -> Tensor:
        labels = _check_labels(labels, feats.shape[0], self.cfg.num_classes)
        e = ag.embedding(self.embed, labels)
        return ag.reshape(self.head(feats), (feats.shape[0],)) + \
            ag.sum_(feats * e, axis=1)

    def forward_with_input_grad(self, img: Tensor, labels) -> tuple[Tensor, Tensor]:
        """Logits plus d(logit)/d(img), both recorded on the active tape.

        The trunk is piecewise-linear, so replaying it backwards through
        transpose convolutions with the captured activation masks yields the
        exact input gradient (almost everywhere). Because each step is an
        ordinary primitive, the result stays differentiable in the
        discriminator's parameters.
        """
        feats, records = self._trunk(img)
        labels = _check_labels(labels, feats.shape[0], self.cfg.num_classes)
        e = ag.embedding(self.embed, labels)
        logit = ag.reshape(self.head(feats), (feats.shape[0],)) + \
            ag.sum_(feats * e, axis=1)
        g = ag.transpose(self.head.weight, (1, 0)) * self.head.scale + e
        for kind, payload in reversed(records):
            if kind == "leaky":
                g = g * Tensor(payload)
            elif kind == "linear":
                g = ag.matmul(g, ag.transpose(payload.weight, (1, 0))) * payload.scale
            elif kind == "flatten":
                g = ag.reshape(g, payload)
            else:
                g = payload.input_grad(g)
        return logit, g


class GanTrainer:
    """Alternating non-saturating logistic updates with an every-step R1 term."""

    def __init__(self, gen: Generator, disc: Discriminator, seed: int = 0,
                 lr: float = 2e-3, r1_gamma: float = 1.0, ema_beta: float = 0.995):
        self.gen = gen
        self.disc = disc
        self.r1_gamma = r1_gamma
        self.ema_beta = ema_beta
        self.opt_g = Adam(gen.params(), lr=lr, beta1=0.0, beta2=0.99)
        self.opt_d = Adam(disc.params(), lr=lr, beta1=0.0, beta2=0.99)
        self.rng = np.random.default_rng(seed)
        self.step_count = 0

    def _sample_fakes(self, n: int, labels: np.ndarray) -> np.ndarray:
        z = Tensor(self.rng.standard_normal((n, self.gen.cfg.dz)))
        noises = [self.rng.standard_normal(s)
                  for s in self.gen.synthesis.noise_shapes(n)]
        w = self.gen.map_latents(z, labels)
        return self.gen.synthesis(w, noises).data

    def step(self, real: np.ndarray, labels) -> tuple[float, float]:
        n = len(real)
        if n < 2:
            raise ContractError(f"training batch must hold at least 2 images, got {n}")
        labels = _check_labels(labels, n, self.gen.cfg.num_classes)

        fake = self._sample_fakes(n, labels)   # built tape-free: detached for D
        self.opt_d.zero_grad()
        with Tape() as tape:
            l_fake = self.disc.logits(Tensor(fake), labels)
            l_real, grad_real = self.disc.forward_with_input_grad(Tensor(real), labels)
            r1 = ag.mean(ag.sum_(grad_real * grad_real, axis=(1, 2, 3)))
            loss_d = ag.mean(ag.softplus(l_fake)) + ag.mean(ag.softplus(-l_real)) \
                + r1 * (self.r1_gamma / 2.0)
            tape.backward(loss_d)
        self.opt_d.step()

        z = Tensor(self.rng.standard_normal((n, self.gen.cfg.dz)))
        noises = [self.rng.standard_normal(s)
                  for s in self.gen.synthesis.noise_shapes(n)]
        self.opt_g.zero_grad()
        with Tape() as tape:
            w = self.gen.map_latents(z, labels)
            img = self.gen.synthesis(w, noises)
            loss_g = ag.mean(ag.softplus(-self.disc.logits(img, labels)))
            tape.backward(loss_g)
        self.opt_g.step()
        self.gen.update_mean_w(w.data, self.ema_beta)
        self.step_count += 1
        return loss_g.item(), loss_d.item()


_GAN_CONFIG_KEYS = ("resolution", "num_classes", "channels", "dz", "dw",
                    "mapping_depth", "base_channels")


def save_gan(path: str | Path, gen: Generator, disc: Discriminator) -> None:
    state = {f"g.{k}": v.data for k, v in gen.named_params()}
    state.update({f"d.{k}": v.data for k, v in disc.named_params()})
    state["mean_w"] = gen.mean_w
    for key in _GAN_CONFIG_KEYS:
        state[f"config.{key}"] = np.array(float(getattr(gen.cfg, key)))
    save_checkpoint(path, state)


def load_gan(path: str | Path) -> tuple[Generator, Discriminator]:
    state = load_checkpoint(path)
    cfg = StyleGanConfig(**{k: int(state[f"config.{k}"].item())
                            for k in _GAN_CONFIG_KEYS})
    gen = Generator(cfg, np.random.default_rng(0))
    disc = Discriminator(cfg, np.random.default_rng(1))
    gen.load_state_dict({k[2:]: v for k, v in state.items() if k.startswith("g.")})
    disc.load_state_dict({k[2:]: v for k, v in state.items() if k.startswith("d.")})
    gen.mean_w = np.asarray(state["mean_w"], dtype=np.float64)
    return gen, disc