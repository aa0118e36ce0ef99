"""8-bit image file I/O."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def read_image(path: str | Path, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Decode an image file into a ``(3, H, W)`` tensor in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous().to(dtype)


def to_uint8(img: torch.Tensor) -> np.ndarray:
    # round half up, not numpy's round-half-even
    arr = img.detach().to(torch.float64).clamp(0.0, 1.0).permute(1, 2, 0).cpu().numpy()
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def write_image(path: str | Path, img: torch.Tensor) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path)


def is_image_file(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES
