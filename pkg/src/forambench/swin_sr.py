"""Windowed-attention super-resolution network and its trainer.

Pipeline: shallow conv embedding, a stack of residual transformer blocks
(window attention alternating with a shifted variant, plus a trailing conv,
wrapped in a block residual), conv fusion with a global residual, and a
pixel-shuffle upsampler. Images travel as floats in [0, 1]; the scale factor
is 2, 4, or 8 (8 realized as three x2 shuffle stages).

The shift mask is strict about provenance: after the cyclic shift, any token
pair whose members came from different pre-shift windows is masked, so
attention never mixes across original window boundaries; the convolutions
are what propagate information between windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ContractError, DimensionError
from .nn import Conv2d, LayerNorm, Linear, Module, trunc_normal
from .optim import Adam

MASK_VALUE = -1e9


@dataclass(frozen=True)
class SwinSRConfig:
    scale: int
    channels: int = 1
    embed_dim: int = 32
    window_size: int = 4
    rstb_count: int = 2
    layers_per_rstb: int = 2
    heads: int = 2
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.scale not in (2, 4, 8):
            raise ConfigError(f"scale must be 2, 4 or 8, got {self.scale}")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.window_size < 2 or self.window_size % 2 != 0:
            raise ConfigError(f"window_size must be even, got {self.window_size}")


def window_partition(x: Tensor, w: int) -> Tensor:
    """(N, H, W, C) -> (N*H/w*W/w, w*w, C), raster order inside each tile."""
    n, h, width, c = x.shape
    if h % w != 0 or width % w != 0:
        raise DimensionError(f"{h}x{width} map not divisible by window {w}")
    t = ag.reshape(x, (n, h // w, w, width // w, w, c))
    t = ag.transpose(t, (0, 1, 3, 2, 4, 5))
    return ag.reshape(t, (n * (h // w) * (width // w), w * w, c))


def window_reverse(tokens: Tensor, w: int, h: int, width: int) -> Tensor:
    """Exact inverse of window_partition for the given target extents."""
    b, t, c = tokens.shape
    per_image = (h // w) * (width // w)
    if h % w or width % w or t != w * w or b % per_image:
        raise DimensionError(
            f"{b} windows of {t} tokens inconsistent with {h}x{width}/{w}")
    n = b // per_image
    x = ag.reshape(tokens, (n, h // w, width // w, w, w, c))
    x = ag.transpose(x, (0, 1, 3, 2, 4, 5))
    return ag.reshape(x, (n, h, width, c))


@lru_cache(maxsize=64)
def build_shift_mask(h: int, w_extent: int, w: int, shift: int) -> np.ndarray:
    """Additive (num_windows, w*w, w*w) mask, 0 or -1e9.

    Entry (i, j) is -1e9 iff, after the cyclic roll by (-shift, -shift),
    tokens i and j of the window originate from different pre-shift windows.
    """
    if not 0 <= shift < w:
        raise ContractError(f"shift must satisfy 0 <= shift < window, got {shift}")
    rows = np.arange(h)
    cols = np.arange(w_extent)
    wid = ((rows + shift) % h)[:, None] // w * (w_extent // w) + \
        ((cols + shift) % w_extent)[None, :] // w
    tiles = wid.reshape(h // w, w, w_extent // w, w).transpose(0, 2, 1, 3)
    ids = tiles.reshape(-1, w * w)
    mask = np.where(ids[:, :, None] == ids[:, None, :], 0.0, MASK_VALUE)
    mask.flags.writeable = False
    return mask


class RelativePositionBias(Module):
    """Learned additive attention bias indexed by in-window token offset."""

    def __init__(self, w: int, heads: int, rng: np.random.Generator):
        self.table = ag.parameter(trunc_normal(rng, ((2 * w - 1) ** 2, heads)))
        coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij"))
        flat = coords.reshape(2, -1)
        rel = flat[:, :, None] - flat[:, None, :] + (w - 1)
        self.index = rel[0] * (2 * w - 1) + rel[1]   # (w*w, w*w), constant

    def __call__(self) -> Tensor:
        bias = ag.embedding(self.table, self.index.reshape(-1))
        t = self.index.shape[0]
        return ag.transpose(ag.reshape(bias, (t, t, -1)), (2, 0, 1))


class WindowAttention(Module):
    def __init__(self, cfg: SwinSRConfig, rng: np.random.Generator):
        dim = cfg.embed_dim
        self.heads = cfg.heads
        self.head_dim = dim // cfg.heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.bias = RelativePositionBias(cfg.window_size, cfg.heads, rng)

    def __call__(self, tokens: Tensor, mask: np.ndarray | None) -> Tensor:
        return self._forward(tokens, mask)[0]

    def forward_with_weights(self, tokens: Tensor,
                             mask: np.ndarray | None) -> tuple[Tensor, np.ndarray]:
        """Output plus post-softmax weights (b, heads, t, t) for inspection."""
        out, attn = self._forward(tokens, mask)
        return out, attn.data

    def _forward(self, tokens: Tensor, mask: np.ndarray | None) -> tuple[Tensor, Tensor]:
        b, t, c = tokens.shape
        qkv = self.qkv(tokens)
        qkv = ag.reshape(qkv, (b, t, 3, self.heads, self.head_dim))
        qkv = ag.transpose(qkv, (2, 0, 3, 1, 4))   # (3, b, heads, t, head_dim)
        q = ag.select_index(qkv, 0)
        k = ag.select_index(qkv, 1)
        v = ag.select_index(qkv, 2)
        attn = ag.matmul(q * self.scale, ag.transpose(k, (0, 1, 3, 2)))
        attn = attn + ag.reshape(self.bias(), (1, self.heads, t, t))
        if mask is not None:
            n_win = mask.shape[0]
            attn = ag.reshape(attn, (b // n_win, n_win, self.heads, t, t))
            attn = attn + Tensor(mask[None, :, None])
            attn = ag.reshape(attn, (b, self.heads, t, t))
        attn = ag.softmax(attn)
        out = ag.matmul(attn, v)
        out = ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (b, t, c))
        return self.proj(out), attn


class Mlp(Module):
    def __init__(self, cfg: SwinSRConfig, rng: np.random.Generator):
        hidden = cfg.embed_dim * cfg.mlp_ratio
        self.fc1 = Linear(cfg.embed_dim, hidden, rng)
        self.fc2 = Linear(hidden, cfg.embed_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class SwinLayer(Module):
    """Pre-norm residual pair: windowed attention, then a token MLP."""

    def __init__(self, cfg: SwinSRConfig, shift: int, rng: np.random.Generator):
        self.cfg = cfg
        self.shift = shift
        self.norm1 = LayerNorm(cfg.embed_dim)
        self.attn = WindowAttention(cfg, rng)
        self.norm2 = LayerNorm(cfg.embed_dim)
        self.mlp = Mlp(cfg, rng)

    def __call__(self, x: Tensor) -> Tensor:
        n, h, w_extent, c = x.shape
        win = self.cfg.window_size
        t = self.norm1(x)
        if self.shift:
            t = ag.roll(t, (-self.shift, -self.shift), (1, 2))
            mask = build_shift_mask(h, w_extent, win, self.shift)
        else:
            mask = None
        tokens = window_partition(t, win)
        tokens = self.attn(tokens, mask)
        t = window_reverse(tokens, win, h, w_extent)
        if self.shift:
            t = ag.roll(t, (self.shift, self.shift), (1, 2))
        x = x + t
        return x + self.mlp(self.norm2(x))


class Rstb(Module):
    """Swin layers (alternating shift 0 and w/2) + conv, in a block residual."""

    def __init__(self, cfg: SwinSRConfig, rng: np.random.Generator):
        w = cfg.window_size
        self.layers = [SwinLayer(cfg, 0 if i % 2 == 0 else w // 2, rng)
                       for i in range(cfg.layers_per_rstb)]
        self.conv = Conv2d(cfg.embed_dim, cfg.embed_dim, 3, rng, pad=1)

    def __call__(self, x: Tensor) -> Tensor:
        t = x
        for layer in self.layers:
            t = layer(t)
        t = ag.transpose(t, (0, 3, 1, 2))
        t = self.conv(t)
        return x + ag.transpose(t, (0, 2, 3, 1))


class SwinSR(Module):
    def __init__(self, cfg: SwinSRConfig, rng: np.random.Generator):
        self.cfg = cfg
        dim = cfg.embed_dim
        self.conv_embed = Conv2d(cfg.channels, dim, 3, rng, pad=1)
        self.rstbs = [Rstb(cfg, rng) for _ in range(cfg.rstb_count)]
        self.conv_fuse = Conv2d(dim, dim, 3, rng, pad=1)
        self.up_convs = [Conv2d(dim, 4 * dim, 3, rng, pad=1)
                         for _ in range(int(math.log2(cfg.scale)))]
        self.conv_out = Conv2d(dim, cfg.channels, 3, rng, pad=1)

    def __call__(self, x: Tensor, clamp: bool = True) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.channels:
            raise DimensionError(
                f"expected (n, {self.cfg.channels}, h, w) input, got {x.shape}")
        win = self.cfg.window_size
        n, c, h, w = x.shape
        pad_h = (win - h % win) % win
        pad_w = (win - w % win) % win
        if pad_h or pad_w:
            x = ag.reflect_pad2d(x, (0, pad_h, 0, pad_w))
        feat = self.conv_embed(x)
        t = ag.transpose(feat, (0, 2, 3, 1))
        for rstb in self.rstbs:
            t = rstb(t)
        deep = self.conv_fuse(ag.transpose(t, (0, 3, 1, 2)))
        y = feat + deep
        for conv in self.up_convs:
            y = ag.pixel_shuffle(conv(y), 2)
        y = self.conv_out(y)
        if pad_h or pad_w:
            y = ag.crop2d(y, self.cfg.scale * h, self.cfg.scale * w)
        return ag.clamp(y, 0.0, 1.0) if clamp else y

    def save(self, path: str | Path) -> None:
        state = {name: t.data for name, t in self.named_params()}
        for key in ("scale", "channels", "embed_dim", "window_size",
                    "rstb_count", "layers_per_rstb", "heads", "mlp_ratio"):
            state[f"config.{key}"] = np.array(float(getattr(self.cfg, key)))
        save_checkpoint(path, state)

    @classmethod
    def load(cls, path: str | Path) -> "SwinSR":
        state = load_checkpoint(path)
        kwargs = {key[len("config."):]: int(val.item())
                  for key, val in state.items() if key.startswith("config.")}
        model = cls(SwinSRConfig(**kwargs), np.random.default_rng(0))
        model.load_state_dict({k: v for k, v in state.items()
                               if not k.startswith("config.")})
        return model


def sr_forward(model: SwinSR, img_lr: Tensor, clamp: bool = True) -> Tensor:
    return model(img_lr, clamp=clamp)


def sr_train_step(model: SwinSR, opt: Adam, lr_batch: Tensor, hr_batch: Tensor) -> float:
    s = model.cfg.scale
    if (hr_batch.shape[0] != lr_batch.shape[0]
            or hr_batch.shape[2] != s * lr_batch.shape[2]
            or hr_batch.shape[3] != s * lr_batch.shape[3]):
        raise DimensionError(
            f"target {hr_batch.shape} is not {s}x the input {lr_batch.shape}")
    opt.zero_grad()
    with Tape() as tape:
        pred = model(lr_batch, clamp=False)
        loss = ag.mean(ag.abs_(pred - hr_batch))
        tape.backward(loss)
    opt.step()
    return loss.item()


BASE_LR = 2e-4


def lr_at_step(step: int, total_steps: int, base: float = BASE_LR) -> float:
    """Halve the rate after each 40% slice of the budget."""
    slice_len = max(1, int(0.4 * total_steps))
    return base * 0.5 ** (step // slice_len)


class SRTrainer:
    """Minibatch L1 trainer over (lr, hr) float pairs in [0, 1]."""

    def __init__(self, model: SwinSR, total_steps: int, seed: int = 0,
                 batch_size: int = 8):
        self.model = model
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.opt = Adam(model.params(), lr=BASE_LR, beta1=0.9, beta2=0.99)
        self.rng = np.random.default_rng(seed)
        self.step = 0

    def run(self, lr_images: np.ndarray, hr_images: np.ndarray,
            eval_pair: tuple[np.ndarray, np.ndarray] | None = None,
            log_every: int = 100) -> list[tuple[int, float, float]]:
        if len(lr_images) != len(hr_images):
            raise DimensionError("input/target counts differ")
        log: list[tuple[int, float, float]] = []
        batch = min(self.batch_size, len(lr_images))
        while self.step < self.total_steps:
            idx = self.rng.choice(len(lr_images), size=batch, replace=False)
            self.opt.lr = lr_at_step(self.step, self.total_steps)
            loss = sr_train_step(self.model, self.opt,
                                 Tensor(lr_images[idx]), Tensor(hr_images[idx]))
            self.step += 1
            if self.step % log_every == 0 or self.step == self.total_steps:
                log.append((self.step, loss, self._eval_psnr(eval_pair)))
        return log

    def _eval_psnr(self, eval_pair) -> float:
        if eval_pair is None:
            return math.nan
        pred = self.model(Tensor(eval_pair[0]), clamp=True).data
        mse = float(np.mean((pred * 255.0 - eval_pair[1] * 255.0) ** 2))
        return math.inf if mse == 0.0 else 10.0 * math.log10(255.0 ** 2 / mse)
