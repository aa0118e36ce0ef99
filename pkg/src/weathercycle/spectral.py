"""Amplitude/phase Fourier utilities for luminance planes and RGB images.

Convention: the forward transform is unnormalized and the inverse carries
the 1/(H*W) factor, so the DC bin of a constant plane ``c`` equals
``c * H * W``. The DC term sits at index (0, 0); nothing is fft-shifted.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

MIN_SIZE = 8


class SpectralError(ValueError):
    pass


@dataclass
class Spectrum:
    amplitude: torch.Tensor
    phase: torch.Tensor

    def complex(self) -> torch.Tensor:
        return torch.complex(self.amplitude * torch.cos(self.phase), self.amplitude * torch.sin(self.phase))


def _check_plane(x: torch.Tensor) -> None:
    if x.dim() < 2 or min(x.shape[-2:]) < MIN_SIZE:
        raise SpectralError(f"planes must be at least {MIN_SIZE}x{MIN_SIZE}, got {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise SpectralError("plane contains non-finite values")


def _check_same(a: torch.Tensor, b: torch.Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise SpectralError(f"{op}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def fft2(plane: torch.Tensor) -> Spectrum:
    """Forward 2-D DFT over the last two axes."""
    _check_plane(plane)
    f = torch.fft.fft2(plane)
    return Spectrum(f.abs(), safe_angle(f))


def ifft2(spec: Spectrum, return_residue: bool = False):
    """Real part of the inverse DFT; optionally also the max-abs imaginary residue."""
    if spec.amplitude.shape != spec.phase.shape:
        raise SpectralError(
            f"amplitude {tuple(spec.amplitude.shape)} and phase {tuple(spec.phase.shape)} differ")
    z = torch.fft.ifft2(spec.complex())
    if return_residue:
        return z.real, float(z.imag.abs().max()) if z.numel() else 0.0
    return z.real


def swap_amplitude(content: torch.Tensor, donor: torch.Tensor) -> torch.Tensor:
    """Donor amplitude combined with content phase, back in the spatial domain (unclamped)."""
    _check_same(content, donor, "swap_amplitude")
    return ifft2(Spectrum(fft2(donor).amplitude, fft2(content).phase))


def _empty_bins(f: torch.Tensor) -> torch.Tensor:
    # bins at rounding-noise level relative to the strongest bin of each plane
    amp = f.abs().detach()
    return amp <= 8 * torch.finfo(amp.dtype).eps * amp.amax(dim=(-2, -1), keepdim=True)


def _atan2_masked(z: torch.Tensor, empty: torch.Tensor) -> torch.Tensor:
    re = torch.where(empty, torch.ones_like(z.real), z.real)
    im = torch.where(empty, torch.zeros_like(z.imag), z.imag)
    return torch.atan2(im, re)


def safe_angle(f: torch.Tensor) -> torch.Tensor:
    """Argument in (-pi, pi]; zero (with zero gradient) on numerically empty bins."""
    return _atan2_masked(f, _empty_bins(f))


def wrapped_phase_difference(fa: torch.Tensor, fb: torch.Tensor) -> torch.Tensor:
    """arg(fa) - arg(fb) wrapped to (-pi, pi], zero where either bin is numerically empty.

    Computed as arg(fa * conj(fb)) so there is no 2*pi jump to differentiate through.
    """
    return _atan2_masked(fa * fb.conj(), _empty_bins(fa) | _empty_bins(fb))


def fourier_distance(a: torch.Tensor, b: torch.Tensor, mode: str = "amp_phase") -> torch.Tensor:
    """Per-channel Fourier discrepancy between two images.

    ``amp_phase`` (default): mean |amp_a - amp_b| + mean |wrapped phase difference|,
    both averaged over bins, channels and batch. ``real_imag``: mean L1 over the
    real and imaginary parts instead.
    """
    _check_same(a, b, "fourier_distance")
    fa = torch.fft.fft2(a)
    fb = torch.fft.fft2(b)
    if mode == "amp_phase":
        amp = (fa.abs() - fb.abs()).abs().mean()
        pha = wrapped_phase_difference(fa, fb).abs().mean()
        return amp + pha
    if mode == "real_imag":
        return (fa.real - fb.real).abs().mean() + (fa.imag - fb.imag).abs().mean()
    raise SpectralError(f"unknown fourier distance mode {mode!r}")
