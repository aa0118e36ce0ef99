"""Unpaired dataset listing, seeded batch sampling and degradation pools.

Every random choice is drawn from a generator keyed on
``(epoch_seed, step_seed, domain, item)``, so a batch depends only on those
numbers and never on worker count or call order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .colorspace import rgb_to_ycbcr
from .imaging import IMAGE_SUFFIXES, read_image
from .ldgm import DegradationPool

log = logging.getLogger(__name__)

CLEAN, DEGRADED = 0, 1
MANIFEST = "manifest.txt"


class DataError(RuntimeError):
    pass


@dataclass
class AugmentConfig:
    hflip_prob: float = 0.5
    rot90_choices: tuple[int, ...] = (0, 90, 180, 270)
    brightness: float = 0.1
    contrast: float = 0.1
    saturation: float = 0.1
    jitter_degraded: bool = True

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        if not self.rot90_choices or any(r not in (0, 90, 180, 270) for r in self.rot90_choices):
            raise ValueError(f"rot90_choices must be a non-empty subset of 0/90/180/270")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} jitter must be >= 0")

    @classmethod
    def none(cls) -> "AugmentConfig":
        return cls(hflip_prob=0.0, rot90_choices=(0,), brightness=0.0, contrast=0.0, saturation=0.0)


@dataclass
class UnpairedDataset:
    clean_paths: list[Path]
    degraded_paths: list[Path]
    crop: int
    epoch_seed: int = 0

    def __post_init__(self):
        if not self.clean_paths or not self.degraded_paths:
            raise DataError("both the clean and the degraded domain need at least one image")
        overlap = set(map(str, self.clean_paths)) & set(map(str, self.degraded_paths))
        if overlap:
            raise DataError(f"paths present in both domains: {sorted(overlap)[:3]}")

    @property
    def sizes(self) -> tuple[int, int]:
        return len(self.clean_paths), len(self.degraded_paths)

    def with_epoch(self, epoch_seed: int) -> "UnpairedDataset":
        return UnpairedDataset(self.clean_paths, self.degraded_paths, self.crop, epoch_seed)


@dataclass
class Batch:
    clean: torch.Tensor
    degraded: torch.Tensor
    clean_indices: list[int]
    degraded_indices: list[int]
    step_seed: int
    meta: dict = field(default_factory=dict)


def list_images(directory: str | Path) -> list[Path]:
    """Sorted image files of a domain directory, or the entries of its manifest."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    manifest = directory / MANIFEST
    if manifest.is_file():
        paths = []
        for line in manifest.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                p = Path(line)
                paths.append(p if p.is_absolute() else directory / p)
        return paths
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _probe(paths: list[Path]) -> list[tuple[Path, tuple[int, int]]]:
    ok = []
    for p in paths:
        try:
            with Image.open(p) as im:
                im.load()
                ok.append((p, (im.height, im.width)))
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
    return ok


def load_unpaired(clean_dir: str | Path, degraded_dir: str | Path, crop: int = 256,
                  epoch_seed: int = 0) -> UnpairedDataset:
    domains = {}
    for name, d in (("clean", clean_dir), ("degraded", degraded_dir)):
        found = _probe(list_images(d))
        if not found:
            raise DataError(f"no decodable images in the {name} domain ({d})")
        smallest = min(min(hw) for _, hw in found)
        if crop > smallest:
            raise DataError(f"crop {crop} exceeds the smallest {name} image side ({smallest})")
        domains[name] = [p for p, _ in found]
    return UnpairedDataset(domains["clean"], domains["degraded"], crop, epoch_seed)


def load_root(root: str | Path, crop: int = 256, epoch_seed: int = 0) -> UnpairedDataset:
    root = Path(root)
    return load_unpaired(root / "clean", root / "degraded", crop, epoch_seed)


@lru_cache(maxsize=512)
def _decode(path: str) -> torch.Tensor:
    return read_image(path)


def random_crop(img: torch.Tensor, size: int, rng: np.random.Generator) -> torch.Tensor:
    h, w = img.shape[-2:]
    if size > min(h, w):
        raise DataError(f"crop {size} larger than image {h}x{w}")
    top = int(rng.integers(h - size + 1))
    left = int(rng.integers(w - size + 1))
    return img[..., top:top + size, left:left + size]


def _gray(img: torch.Tensor) -> torch.Tensor:
    return rgb_to_ycbcr(img, clamp=False)[0]


def augment(img: torch.Tensor, aug: AugmentConfig, rng: np.random.Generator,
            jitter: bool = True) -> torch.Tensor:
    # all draws happen unconditionally so the stream layout never depends on the config
    flip = rng.random() < aug.hflip_prob
    rot = aug.rot90_choices[int(rng.integers(len(aug.rot90_choices)))]
    b, c, s = rng.uniform(-1.0, 1.0, size=3) * (aug.brightness, aug.contrast, aug.saturation)
    if flip:
        img = img.flip(-1)
    if rot:
        img = torch.rot90(img, rot // 90, dims=(-2, -1))
    if jitter:
        if b:
            img = (img * (1.0 + b)).clamp(0.0, 1.0)
        if c:
            mean = _gray(img).mean()
            img = ((img - mean) * (1.0 + c) + mean).clamp(0.0, 1.0)
        if s:
            gray = _gray(img)
            img = ((img - gray) * (1.0 + s) + gray).clamp(0.0, 1.0)
    return img.contiguous()


def _indices(n: int, batch: int, rng: np.random.Generator) -> list[int]:
    return [int(i) for i in rng.choice(n, size=batch, replace=n < batch)]


def sample_batch(ds: UnpairedDataset, aug: AugmentConfig, batch: int, step_seed: int) -> Batch:
    if batch < 1:
        raise DataError(f"batch must be >= 1, got {batch}")
    out, idx = {}, {}
    for domain, paths in ((CLEAN, ds.clean_paths), (DEGRADED, ds.degraded_paths)):
        idx[domain] = _indices(len(paths), batch, np.random.default_rng([ds.epoch_seed, step_seed, domain]))
        crops = []
        for item, i in enumerate(idx[domain]):
            rng = np.random.default_rng([ds.epoch_seed, step_seed, domain, item, 1])
            img = random_crop(_decode(str(paths[i])), ds.crop, rng)
            jitter = domain == CLEAN or aug.jitter_degraded
            crops.append(augment(img, aug, rng, jitter=jitter))
        out[domain] = torch.stack(crops)
    return Batch(out[CLEAN], out[DEGRADED], idx[CLEAN], idx[DEGRADED], step_seed)


def build_pool(ds: UnpairedDataset, n: int, patch: int, seed: int) -> DegradationPool:
    """``n`` random luminance patches cut from degraded-domain images."""
    if n < 1:
        raise DataError(f"pool size must be >= 1, got {n}")
    rng = np.random.default_rng([seed, 7])
    patches, sources = [], []
    for _ in range(n):
        path = ds.degraded_paths[int(rng.integers(len(ds.degraded_paths)))]
        img = _decode(str(path))
        if patch > min(img.shape[-2:]):
            raise DataError(f"pool patch {patch} larger than degraded image {path}")
        lum, _ = rgb_to_ycbcr(random_crop(img, patch, rng))
        patches.append(lum)
        sources.append(str(path))
    return DegradationPool(torch.stack(patches), sources)
