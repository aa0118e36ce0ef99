"""Restoration and re-degradation generators.

Restoration splits the degraded image into Y and CbCr, runs a luminance
backbone and a small chrominance encoder-decoder, and recombines. The
re-degradation generator perturbs chroma with Gaussian noise, pushes the
luminance through degradation guidance, recombines, and refines the result
with a 3->3 reconstruction network.

All learnable state lives in a single :class:`WeatherCycleModel`; its
``state_dict`` is the parameter set that checkpoints serialize.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .colorspace import clamp_st, rgb_to_ycbcr, ycbcr_to_rgb
from .ldgm import CtaConfig, DegradationPool, LumaDegradationGuidance, PoolError, sample_pool

ACTIVATIONS = {
    "gelu": nn.GELU,
    "relu": nn.ReLU,
    "leaky_relu": lambda: nn.LeakyReLU(0.2),
    "silu": nn.SiLU,
    "tanh": nn.Tanh,
}
VARIANTS = ("luma_backbone", "chroma_codec", "recon_net", "plain")


@dataclass
class NetConfig:
    base_width: int = 8
    depth: int = 2
    kernel: int = 3
    nonlinearity: str = "gelu"
    variant: str = "luma_backbone"
    # initial value of the learnable per-channel scales on every residual branch
    layer_scale: float = 0.1

    def __post_init__(self):
        if self.base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {self.base_width}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be a positive odd size, got {self.kernel}")
        if self.nonlinearity not in ACTIVATIONS:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class ModelConfig:
    luma: NetConfig = field(default_factory=lambda: NetConfig(variant="luma_backbone"))
    chroma: NetConfig = field(default_factory=lambda: NetConfig(base_width=4, variant="chroma_codec"))
    recon: NetConfig = field(default_factory=lambda: NetConfig(variant="recon_net"))
    cta: CtaConfig = field(default_factory=CtaConfig)
    size: tuple[int, int] = (64, 64)
    ldgm_hidden: int = 8
    no_gd2c: bool = False
    no_gc2d: bool = False
    no_jc2d: bool = False
    no_ldgm: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("luma", "chroma", "recon"):
            d[key] = NetConfig(**d[key])
        d["cta"] = CtaConfig(**d["cta"])
        d["size"] = tuple(d["size"])
        return cls(**d)

    @property
    def multiple(self) -> int:
        """Spatial sizes must be divisible by this."""
        return 2 ** max(n.depth for n in (self.luma, self.chroma, self.recon))


class ResBlock(nn.Module):
    def __init__(self, width: int, kernel: int, act: str, layer_scale: float):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, kernel, padding=kernel // 2)
        self.act = ACTIVATIONS[act]()
        self.conv2 = nn.Conv2d(width, width, kernel, padding=kernel // 2)
        self.scale = nn.Parameter(torch.full((1, width, 1, 1), layer_scale))

    def forward(self, x):
        return x + self.scale * self.conv2(self.act(self.conv1(x)))


class ResidualUNet(nn.Module):
    """U-shaped residual conv net; the output is ``x + tail(...)``."""

    def __init__(self, channels: int, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w, k, act, ls = cfg.base_width, cfg.kernel, cfg.nonlinearity, cfg.layer_scale
        widths = [w * 2**i for i in range(cfg.depth + 1)]
        self.head = nn.Conv2d(channels, w, k, padding=k // 2)
        self.enc = nn.ModuleList(ResBlock(widths[i], k, act, ls) for i in range(cfg.depth))
        self.down = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 2, stride=2) for i in range(cfg.depth))
        self.mid = ResBlock(widths[-1], k, act, ls)
        self.up = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2) for i in range(cfg.depth))
        self.dec = nn.ModuleList(ResBlock(widths[i], k, act, ls) for i in range(cfg.depth))
        self.tail = nn.Conv2d(w, channels, k, padding=k // 2)
        self.out_scale = nn.Parameter(torch.full((1, channels, 1, 1), ls))

    def forward(self, x):
        m = 2**self.cfg.depth
        if x.shape[-2] % m or x.shape[-1] % m:
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} is not divisible by {m}")
        h = self.head(x)
        skips = []
        for enc, down in zip(self.enc, self.down):
            h = enc(h)
            skips.append(h)
            h = down(h)
        h = self.mid(h)
        for i in reversed(range(self.cfg.depth)):
            h = self.dec[i](self.up[i](h) + skips[i])
        return x + self.out_scale * self.tail(h)

    def zero_tail(self) -> None:
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)


def reset_parameters(module: nn.Module, gen: torch.Generator) -> None:
    """Fan-in scaled uniform weights (variance 1/fan_in), zero biases.

    Layer scales and the guidance filter mask are left at their constructor values.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            w = m.weight
            if isinstance(m, nn.ConvTranspose2d):
                fan_in = w.shape[0] * math.prod(w.shape[2:])
            else:
                fan_in = math.prod(w.shape[1:])
            bound = math.sqrt(3.0 / fan_in)
            with torch.no_grad():
                w.copy_(torch.rand(w.shape, generator=gen, dtype=w.dtype) * 2 * bound - bound)
                if m.bias is not None:
                    m.bias.zero_()


class WeatherCycleModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.h_d2c = ResidualUNet(1, cfg.luma)
        self.e_d2c = ResidualUNet(2, cfg.chroma)
        self.ldgm = LumaDegradationGuidance(cfg.cta, cfg.size, cfg.ldgm_hidden)
        self.j_c2d = ResidualUNet(3, cfg.recon)
        if cfg.no_gd2c:
            # single-branch RGB restorer stands in for the decoupled one
            self.plain_d2c = ResidualUNet(3, NetConfig(**{**asdict(cfg.luma), "variant": "plain"}))

    def enabled_modules(self) -> list[str]:
        cfg = self.cfg
        names = ["plain_d2c"] if cfg.no_gd2c else ["h_d2c", "e_d2c"]
        if not cfg.no_gc2d:
            if not cfg.no_ldgm:
                names.append("ldgm")
            if not cfg.no_jc2d:
                names.append("j_c2d")
        return names

    def trainable_parameters(self) -> list[tuple[str, nn.Parameter]]:
        return [
            (f"{name}.{pname}", p)
            for name in self.enabled_modules()
            for pname, p in getattr(self, name).named_parameters()
        ]

    def restore(self, degraded: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        if self.cfg.no_gd2c:
            out = self.plain_d2c(degraded)
        else:
            # linear split, no clamp: a straight-through clamp here would bias gradients
            # whenever an unclamped generator output is fed back in
            lum, chroma = rgb_to_ycbcr(degraded, clamp=False)
            out = ycbcr_to_rgb(self.h_d2c(lum), self.e_d2c(chroma), clamp=False)
        return clamp_st(out) if clamp else out

    def redegrade(self, clean: torch.Tensor, patches: torch.Tensor | None, noise: torch.Tensor,
                  clamp: bool = True, return_stages: bool = False):
        if self.cfg.no_gc2d:
            return (clean, {}) if return_stages else clean
        lum, chroma = rgb_to_ycbcr(clean, clamp=False)
        chroma_d = chroma + noise
        lum_d = lum if self.cfg.no_ldgm else self.ldgm(lum, patches)
        # unclamped: the recombination is internal to the generator
        mixed = ycbcr_to_rgb(lum_d, chroma_d, clamp=False)
        out = mixed if self.cfg.no_jc2d else self.j_c2d(mixed)
        if clamp:
            out = clamp_st(out)
        if return_stages:
            return out, {"chroma": chroma_d, "lum": lum_d, "mixed": mixed}
        return out

    def make_identity(self) -> "WeatherCycleModel":
        """Zero every residual branch and neutralize guidance (for testing/inference checks)."""
        for net in (self.h_d2c, self.e_d2c, self.j_c2d, getattr(self, "plain_d2c", None)):
            if net is not None:
                net.zero_tail()
        self.ldgm.init_identity_encoders()
        with torch.no_grad():
            self.ldgm.gamma.zero_()
        return self


def init_params(cfg: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> WeatherCycleModel:
    gen = torch.Generator().manual_seed(int(seed))
    model = WeatherCycleModel(cfg)
    reset_parameters(model, gen)
    model.ldgm.init_identity_encoders()
    with torch.no_grad():
        model.ldgm.gamma.fill_(1.0)
    return model.to(dtype)


def parameter_set(model: WeatherCycleModel) -> dict[str, torch.Tensor]:
    return dict(model.state_dict())


def restore(params: WeatherCycleModel, degraded: torch.Tensor, clamp: bool = True) -> torch.Tensor:
    return params.restore(degraded, clamp=clamp)


def pool_patches(pool: DegradationPool, n: int, seed: int | Sequence[int]) -> torch.Tensor:
    seed = list(np.atleast_1d(seed))
    return torch.stack([sample_pool(pool, seed + [i]) for i in range(n)])


def chroma_noise(shape, sigma: float, seed: int | Sequence[int], dtype=torch.float32) -> torch.Tensor:
    if sigma < 0:
        raise ValueError(f"sigma_chroma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.standard_normal(tuple(shape)) * sigma).to(dtype)


def redegrade(params: WeatherCycleModel, clean: torch.Tensor, pool: DegradationPool | None,
              noise_seed: int | Sequence[int], sigma_chroma: float = 0.02, clamp: bool = True,
              return_stages: bool = False):
    """Clean ``(B, 3, H, W)`` batch to a synthetic degraded batch.

    Chroma noise and pool draws are both derived from ``noise_seed``; batch
    item ``i`` gets its own pool draw.
    """
    if clean.dim() == 3:
        clean = clean.unsqueeze(0)
    cfg = params.cfg
    shape = (clean.shape[0], 2, *clean.shape[-2:])
    noise = chroma_noise(shape, sigma_chroma, [*np.atleast_1d(noise_seed), 0], clean.dtype)
    patches = None
    if not cfg.no_gc2d and not cfg.no_ldgm:
        if pool is None or len(pool) == 0:
            raise PoolError("degradation pool is empty")
        patches = pool_patches(pool, clean.shape[0], [*np.atleast_1d(noise_seed), 1])
    return params.redegrade(clean, patches, noise, clamp=clamp, return_stages=return_stages)
