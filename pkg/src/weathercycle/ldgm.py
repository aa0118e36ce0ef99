"""Luminance degradation guidance.

A degraded luminance patch, drawn from a pool built from the degraded
domain, is passed through channel top-k attention, moved to the frequency
domain, and its amplitude is turned into a bounded per-bin gain
``filt = sigmoid(C1(LR(C1(amp)))) * gamma``. The clean plane's amplitude is
then modulated as ``amp_clean * filt + amp_clean`` and recombined with the
(encoded) clean phase.

Every per-bin map applied here is either symmetric under k -> -k
(amplitude side) or odd and 2*pi periodic (phase side). That keeps the fused
spectrum Hermitian, so the inverse transform of a real plane stays real.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .spectral import fft2


class PoolError(ValueError):
    pass


@dataclass
class CtaConfig:
    lift_channels: int = 16
    topk: int = 8

    def __post_init__(self):
        if self.lift_channels < 2:
            raise ValueError("lift_channels must be >= 2")
        if not 1 <= self.topk <= self.lift_channels:
            raise ValueError(f"topk must be in [1, {self.lift_channels}], got {self.topk}")


@dataclass
class DegradationPool:
    """Luminance patches ``(N, 1, P, P)`` cut from degraded-domain images."""

    patches: torch.Tensor
    sources: list[str]

    def __post_init__(self):
        if self.patches.dim() != 4 or self.patches.shape[1] != 1:
            raise PoolError(f"pool patches must be (N, 1, P, P), got {tuple(self.patches.shape)}")
        if len(self.sources) != self.patches.shape[0]:
            raise PoolError("one source path per patch is required")

    def __len__(self) -> int:
        return self.patches.shape[0]


def sample_pool(pool: DegradationPool, seed: int | Sequence[int]) -> torch.Tensor:
    """Uniformly pick one ``(1, P, P)`` patch, deterministic in ``seed``."""
    if pool is None or len(pool) == 0:
        raise PoolError("degradation pool is empty")
    idx = int(np.random.default_rng(seed).integers(len(pool)))
    return pool.patches[idx]


def resize_plane(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def conjugate_flip(x: torch.Tensor) -> torch.Tensor:
    """Map the value at frequency bin k to bin -k (mod size) over the last two axes."""
    return torch.roll(torch.flip(x, dims=(-2, -1)), shifts=(1, 1), dims=(-2, -1))


def _pointwise_stack(hidden: int, tail_bias: bool = True) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(1, hidden, 1),
        nn.LeakyReLU(0.2),
        nn.Conv2d(hidden, 1, 1, bias=tail_bias),
    )


class ChannelTopKAttention(nn.Module):
    """Lift to C channels, score them by pooled response, keep only the top k."""

    def __init__(self, cfg: CtaConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.lift_channels
        self.lift = nn.Conv2d(1, c, 3, padding=1)
        self.score = nn.Linear(c, c)
        self.proj = nn.Conv2d(c, 1, 1)

    def forward(self, patch: torch.Tensor, return_mask: bool = False):
        feats = self.lift(patch)
        scores = torch.sigmoid(self.score(feats.mean(dim=(-2, -1))))
        keep = torch.zeros_like(scores)
        keep.scatter_(1, scores.topk(self.cfg.topk, dim=1).indices, 1.0)
        out = self.proj(feats * (scores * keep)[..., None, None])
        if return_mask:
            return out, keep
        return out


class LumaDegradationGuidance(nn.Module):
    def __init__(self, cta: CtaConfig, size: tuple[int, int], hidden: int = 8):
        super().__init__()
        self.size = tuple(size)
        self.cta = ChannelTopKAttention(cta)
        self.filt = _pointwise_stack(hidden)
        self.amp_enc = _pointwise_stack(hidden)
        # a tail bias would cancel in the odd symmetrization below
        self.pha_enc = _pointwise_stack(hidden, tail_bias=False)
        self.gamma = nn.Parameter(torch.ones(self.size))

    def init_identity_encoders(self) -> None:
        # zero tails make both clean-side encoders exact identities
        for enc in (self.amp_enc, self.pha_enc):
            nn.init.zeros_(enc[2].weight)
            if enc[2].bias is not None:
                nn.init.zeros_(enc[2].bias)

    def spectral_gamma(self, size: tuple[int, int]) -> torch.Tensor:
        g = self.gamma
        if tuple(size) != self.size:
            g = resize_plane(g[None, None], size)[0, 0]
        return 0.5 * (g + conjugate_flip(g))

    def encode_amplitude(self, amp: torch.Tensor) -> torch.Tensor:
        # multiplicative gain keeps amplitudes non-negative; exp(0) = 1 at init
        return amp * torch.exp(self.amp_enc(torch.log1p(amp)))

    def encode_phase(self, phase: torch.Tensor) -> torch.Tensor:
        s = torch.sin(phase)
        return phase + 0.5 * (self.pha_enc(s) - self.pha_enc(-s))

    def degradation_filter(self, patch: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        att = self.cta(resize_plane(patch, size))
        amp = fft2(att).amplitude
        return torch.sigmoid(self.filt(torch.log1p(amp))) * self.spectral_gamma(size)

    def forward(self, clean_lum: torch.Tensor, patch: torch.Tensor, return_parts: bool = False):
        if clean_lum.dim() != 4 or clean_lum.shape[1] != 1:
            raise ValueError(f"clean luminance must be (B, 1, H, W), got {tuple(clean_lum.shape)}")
        if patch.dim() == 3:
            patch = patch.unsqueeze(0)
        if patch.shape[0] not in (1, clean_lum.shape[0]):
            raise ValueError(
                f"{patch.shape[0]} patches for a batch of {clean_lum.shape[0]} planes")
        size = tuple(clean_lum.shape[-2:])
        filt = self.degradation_filter(patch.to(clean_lum.dtype), size)
        spec = fft2(clean_lum)
        amp = self.encode_amplitude(spec.amplitude)
        phase = self.encode_phase(spec.phase)
        fused = amp * filt + amp
        z = torch.fft.ifft2(torch.complex(fused * torch.cos(phase), fused * torch.sin(phase)))
        out = z.real
        if return_parts:
            return out, {
                "clean_amplitude": spec.amplitude,
                "encoded_amplitude": amp,
                "encoded_phase": phase,
                "filter": filt,
                "fused_amplitude": fused,
                "imag_residue": z.imag.abs().max().detach(),
            }
        return out
