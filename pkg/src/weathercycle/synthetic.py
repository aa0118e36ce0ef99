"""Procedural scenes and luminance-only weather degradations for toy runs."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .colorspace import rgb_to_ycbcr, ycbcr_to_rgb
from .imaging import write_image


def _smooth_field(rng: np.random.Generator, h: int, w: int, cutoff: int = 4) -> np.ndarray:
    spec = np.zeros((h, w), dtype=complex)
    for u in range(-cutoff, cutoff + 1):
        for v in range(-cutoff, cutoff + 1):
            spec[u % h, v % w] = (rng.standard_normal() + 1j * rng.standard_normal()) / (1 + u * u + v * v)
    field = np.fft.ifft2(spec).real
    field -= field.min()
    return field / max(field.max(), 1e-12)


def random_scene(rng: np.random.Generator, size: int = 64) -> torch.Tensor:
    """Colorful piecewise-smooth image with hard-edged rectangles, ``(3, H, W)``."""
    h = w = size
    img = np.stack([_smooth_field(rng, h, w) for _ in range(3)]) * 0.6 + 0.2
    for _ in range(int(rng.integers(3, 7))):
        y0, x0 = rng.integers(0, h - 8), rng.integers(0, w - 8)
        y1, x1 = y0 + rng.integers(6, h // 2), x0 + rng.integers(6, w // 2)
        img[:, y0:y1, x0:x1] = rng.uniform(0.05, 0.95, size=(3, 1, 1))
    return torch.from_numpy(np.clip(img, 0.0, 1.0))


def _recolor(img: torch.Tensor, new_lum: torch.Tensor) -> torch.Tensor:
    _, chroma = rgb_to_ycbcr(img)
    return ycbcr_to_rgb(new_lum.clamp(0.0, 1.0), chroma)


def haze_veil(img: torch.Tensor, rng: np.random.Generator, strength: tuple[float, float] = (0.4, 0.7),
              airlight: tuple[float, float] = (0.75, 0.95)) -> torch.Tensor:
    """Blend luminance toward a bright airlight through a low-frequency transmission map."""
    lum, _ = rgb_to_ycbcr(img)
    h, w = lum.shape[-2:]
    t = 1.0 - rng.uniform(*strength) * (0.6 + 0.4 * _smooth_field(rng, h, w, cutoff=2))
    t = torch.from_numpy(t).to(lum.dtype)
    a = rng.uniform(*airlight)
    return _recolor(img, lum * t + a * (1.0 - t))


def rain_streaks(img: torch.Tensor, rng: np.random.Generator, count: tuple[int, int] = (25, 50),
                 intensity: tuple[float, float] = (0.25, 0.5)) -> torch.Tensor:
    """Draw slanted bright streaks into the luminance plane only."""
    lum, _ = rgb_to_ycbcr(img)
    h, w = lum.shape[-2:]
    layer = np.zeros((h, w))
    slope = rng.uniform(-0.4, 0.4)
    for _ in range(int(rng.integers(*count))):
        y, x = rng.uniform(0, h), rng.uniform(0, w)
        length = rng.integers(6, 16)
        for k in range(length):
            yy, xx = int(y + k) % h, int(x + slope * k) % w
            layer[yy, xx] = 1.0
    streak = torch.from_numpy(layer * rng.uniform(*intensity)).to(lum.dtype)
    return _recolor(img, lum + streak)


def low_light(img: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    lum, _ = rgb_to_ycbcr(img)
    return _recolor(img, lum * rng.uniform(0.25, 0.45))


DEGRADATIONS = {"haze": haze_veil, "rain": rain_streaks, "lowlight": low_light}


def make_toy_set(root: str | Path, n_clean: int = 8, n_degraded: int = 8, size: int = 64,
                 seed: int = 0, kinds=("haze", "rain")) -> Path:
    """Write an unpaired ``<root>/clean`` + ``<root>/degraded`` tree of distinct scenes."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for i in range(n_clean):
        write_image(root / "clean" / f"c{i:03d}.png", random_scene(rng, size))
    for i in range(n_degraded):
        scene = random_scene(rng, size)
        kind = kinds[i % len(kinds)]
        write_image(root / "degraded" / f"d{i:03d}_{kind}.png", DEGRADATIONS[kind](scene, rng))
    return root
