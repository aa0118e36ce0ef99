"""Full-reference image quality metrics."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .colorspace import rgb_to_ycbcr

PSNR_CAP = 100.0


class MetricError(ValueError):
    pass


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def psnr(a: torch.Tensor, b: torch.Tensor, on: str = "rgb") -> float:
    """10*log10(1/MSE) for unit-range images; identical inputs give ``PSNR_CAP``.

    ``on="y"`` measures the BT.601 luminance plane only.
    """
    _check_pair(a, b)
    if on == "y":
        a, b = rgb_to_ycbcr(a)[0], rgb_to_ycbcr(b)[0]
    elif on != "rgb":
        raise MetricError(f"unknown PSNR domain {on!r}")
    mse = float(((a.double() - b.double()) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM on BT.601 luminance, Gaussian window, valid region only, data range 1."""
    _check_pair(a, b)
    if min(a.shape[-2:]) < window:
        raise MetricError(f"SSIM needs images of at least {window}x{window}, got {tuple(a.shape[-2:])}")
    ya = rgb_to_ycbcr(a.double())[0].reshape(-1, 1, *a.shape[-2:])
    yb = rgb_to_ycbcr(b.double())[0].reshape(-1, 1, *b.shape[-2:])
    w = gaussian_window(window, sigma)[None, None]
    mu_a, mu_b = F.conv2d(ya, w), F.conv2d(yb, w)
    var_a = F.conv2d(ya * ya, w) - mu_a**2
    var_b = F.conv2d(yb * yb, w) - mu_b**2
    cov = F.conv2d(ya * yb, w) - mu_a * mu_b
    c1, c2 = k1**2, k2**2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(s.mean())
