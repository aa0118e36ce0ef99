"""Cycle-consistency and total objectives."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .spectral import fourier_distance


class LossError(ArithmeticError):
    pass


@dataclass
class LossWeights:
    lambda_cyc: float = 1.0
    lambda_dacr: float = 0.8
    # balance factor on the Fourier term inside the cycle loss
    fourier_weight: float = 0.1

    def __post_init__(self):
        for name in ("lambda_cyc", "lambda_dacr", "fourier_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise LossError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def cycle_loss(d_cyc, d_orig, c_cyc, c_orig, fourier_weight: float = 0.1,
               fourier_mode: str = "amp_phase", parts: bool = False):
    """L1 on both cycles plus ``fourier_weight`` times their Fourier distances."""
    l1_d, l1_c = _l1(d_cyc, d_orig), _l1(c_cyc, c_orig)
    loss = l1_d + l1_c
    fft_d = fft_c = torch.zeros((), dtype=loss.dtype)
    if fourier_weight:
        fft_d = fourier_distance(d_cyc, d_orig, fourier_mode)
        fft_c = fourier_distance(c_cyc, c_orig, fourier_mode)
        loss = loss + fourier_weight * (fft_d + fft_c)
    if parts:
        return loss, {"l1_d": l1_d, "l1_c": l1_c, "fft_d": fft_d, "fft_c": fft_c}
    return loss


def total_loss(l_cyc, l_dacr, w: LossWeights):
    for name, value in (("cycle", l_cyc), ("dacr", l_dacr)):
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise LossError(f"{name} loss term is not finite ({v})")
    return w.lambda_cyc * l_cyc + w.lambda_dacr * l_dacr
