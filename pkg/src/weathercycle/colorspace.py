"""Full-range BT.601 RGB <-> YCbCr conversion on channel-first tensors.

Images are float tensors shaped ``(..., 3, H, W)`` with values in [0, 1].
Luminance comes back as ``(..., 1, H, W)`` and chrominance as
``(..., 2, H, W)`` with 0.5 as the neutral chroma value.
"""
from __future__ import annotations

import torch

KR, KG, KB = 0.299, 0.587, 0.114
CB_SCALE = 2.0 * (1.0 - KB)  # 1.772
CR_SCALE = 2.0 * (1.0 - KR)  # 1.402


class ColorspaceError(ValueError):
    pass


def clamp_st(x: torch.Tensor, lo: float = 0.0, hi: float = 1.0) -> torch.Tensor:
    """Clamp in the forward pass, identity in the backward pass."""
    return x + (x.clamp(lo, hi) - x).detach()


def _check_finite(x: torch.Tensor, what: str) -> None:
    if not torch.isfinite(x).all():
        raise ColorspaceError(f"{what} contains non-finite values")


def _check_channels(x: torch.Tensor, n: int, what: str) -> None:
    if x.dim() < 3 or x.shape[-3] != n:
        raise ColorspaceError(f"{what} must have shape (..., {n}, H, W), got {tuple(x.shape)}")


def rgb_to_ycbcr(img: torch.Tensor, clamp: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    _check_channels(img, 3, "rgb image")
    _check_finite(img, "rgb image")
    r, g, b = img.unbind(-3)
    y = KR * r + KG * g + KB * b
    cb = 0.5 + (b - y) / CB_SCALE
    cr = 0.5 + (r - y) / CR_SCALE
    lum = y.unsqueeze(-3)
    chroma = torch.stack([cb, cr], dim=-3)
    if clamp:
        lum, chroma = clamp_st(lum), clamp_st(chroma)
    return lum, chroma


def ycbcr_to_rgb(lum: torch.Tensor, chroma: torch.Tensor, clamp: bool = True) -> torch.Tensor:
    _check_channels(lum, 1, "luma plane")
    _check_channels(chroma, 2, "chroma planes")
    if lum.shape[-2:] != chroma.shape[-2:] or lum.shape[:-3] != chroma.shape[:-3]:
        raise ColorspaceError(
            f"luma {tuple(lum.shape)} and chroma {tuple(chroma.shape)} dims differ")
    y = lum.squeeze(-3)
    cb, cr = (chroma - 0.5).unbind(-3)
    r = y + CR_SCALE * cr
    b = y + CB_SCALE * cb
    g = (y - KR * r - KB * b) / KG
    rgb = torch.stack([r, g, b], dim=-3)
    return clamp_st(rgb) if clamp else rgb


def swap_luma(degraded: torch.Tensor, clean: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Exchange Y and CbCr between two aligned images.

    Returns ``(clean_Y + degraded_CbCr, degraded_Y + clean_CbCr)``.
    """
    if degraded.shape != clean.shape:
        raise ColorspaceError(
            f"swap_luma needs equal shapes, got {tuple(degraded.shape)} vs {tuple(clean.shape)}")
    d_lum, d_chr = rgb_to_ycbcr(degraded)
    c_lum, c_chr = rgb_to_ycbcr(clean)
    return ycbcr_to_rgb(c_lum, d_chr), ycbcr_to_rgb(d_lum, c_chr)
