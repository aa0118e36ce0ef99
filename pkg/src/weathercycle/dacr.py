"""Difficulty-aware contrastive regularization.

Two pieces: a prompt-similarity difficulty classifier that labels each
degraded sample as easy, hard or very hard, and a weighted contrastive loss
that pulls restored images toward clean-domain features and away from the
degraded inputs, with harder negatives weighted more heavily.
"""
from __future__ import annotations

import hashlib
import importlib.util
from dataclasses import dataclass
from enum import IntEnum
from typing import Protocol, Sequence

import torch
import torch.nn.functional as F

from .colorspace import rgb_to_ycbcr

DEFAULT_PROMPTS = (
    "a clean sharp photo",
    "a mildly degraded photo",
    "a severely degraded photo",
)


class Difficulty(IntEnum):
    EASY_NEG = 0
    HARD_NEG = 1
    VERY_HARD = 2

    @property
    def label(self) -> str:
        return ("easy-neg", "hard-neg", "very-hard")[self]


class BackendError(RuntimeError):
    pass


class DacrError(ValueError):
    pass


class EmbeddingBackend(Protocol):
    """Adapter for an image (and optionally text) encoder.

    ``embed_image`` maps a ``(B, 3, H, W)`` batch in [0, 1] to ``(B, d)``
    unit vectors and must stay differentiable in the pixels when used for the
    contrastive loss. ``embed_text`` maps prompts to ``(n, d)`` unit vectors
    and is only needed for classification.
    """

    name: str

    def embed_image(self, images: torch.Tensor) -> torch.Tensor: ...

    def embed_text(self, prompts: Sequence[str]) -> torch.Tensor: ...


@dataclass
class DifficultyLabel:
    level: Difficulty
    scores: tuple[float, ...]


@dataclass
class DacrWeights:
    alpha: float = 3.0
    beta: float = 5.0
    tau: float = 0.1

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not self.beta > self.alpha:
            raise ValueError(f"beta must exceed alpha, got beta={self.beta} alpha={self.alpha}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def weight_of(label: DifficultyLabel | Difficulty, w: DacrWeights) -> float:
    level = label.level if isinstance(label, DifficultyLabel) else Difficulty(label)
    return (1.0, w.alpha, w.beta)[level]


class StubFeatureBackend:
    """Handcrafted deterministic features standing in for a pretrained encoder.

    67 dims, L2-normalized: the 8x8 average-pooled luminance (divided by 8 so
    the block has RMS norm), then ``style_weight`` times the offsets of global
    luminance contrast from ``contrast_ref`` and of mean Cb/Cr from neutral.

    The pooled block is not centered, so every image shares a common
    direction and degradation shows up as an angle away from it. Clean-looking
    statistics maximize similarity to clean images; pushing contrast or
    color further does not. Differentiable in the input pixels.
    """

    name = "stub-features"
    dim = 67

    def __init__(self, style_weight: float = 10.0, contrast_ref: float = 0.1):
        self.style_weight = style_weight
        self.contrast_ref = contrast_ref

    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(0)
        lum, chroma = rgb_to_ycbcr(images)
        pooled = F.adaptive_avg_pool2d(lum, 8).flatten(1) / 8.0
        contrast = lum.flatten(1).std(dim=1, keepdim=True) - self.contrast_ref
        style = torch.cat([contrast, chroma.mean(dim=(-2, -1)) - 0.5], dim=1)
        return F.normalize(torch.cat([pooled, self.style_weight * style], dim=1), dim=1)

    def embed_text(self, prompts: Sequence[str]) -> torch.Tensor:
        raise BackendError(f"{self.name} has no text encoder")


def _hashed_unit(text: str, dim: int, skip: int) -> torch.Tensor:
    digest = hashlib.sha256(text.encode()).digest()
    gen = torch.Generator().manual_seed(int.from_bytes(digest[:8], "little"))
    v = torch.randn(dim, generator=gen, dtype=torch.float64)
    v[:skip] = 0.0
    return v / v.norm()


class StubClassifierBackend:
    """Deterministic stand-in for a CLIP-style image/text pair.

    Prompts at positions 0, 1, 2 of :data:`DEFAULT_PROMPTS` map to the first
    three basis vectors. An image embeds as a mix of those three directions
    driven by a degradation score ``s = clip(1 - std(Y) / 0.25, 0, 1)``:
    weights ``((1-s)^2, 2s(1-s), s^2)``. Low-contrast inputs therefore land on
    the harder prompts.
    """

    name = "stub-classifier"

    def __init__(self, dim: int = 16, contrast_ref: float = 0.25, prompts=DEFAULT_PROMPTS):
        self.dim = dim
        self.contrast_ref = contrast_ref
        self.prompts = tuple(prompts)

    def degradation_score(self, images: torch.Tensor) -> torch.Tensor:
        lum, _ = rgb_to_ycbcr(images)
        return (1.0 - lum.flatten(1).std(dim=1) / self.contrast_ref).clamp(0.0, 1.0)

    def embed_image(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(0)
        s = self.degradation_score(images).to(torch.float64)
        mix = torch.stack([(1 - s) ** 2, 2 * s * (1 - s), s**2], dim=1)
        out = torch.zeros(images.shape[0], self.dim, dtype=torch.float64)
        out[:, :3] = mix
        return F.normalize(out, dim=1)

    def embed_text(self, prompts: Sequence[str]) -> torch.Tensor:
        rows = []
        for p in prompts:
            if p in self.prompts:
                v = torch.zeros(self.dim, dtype=torch.float64)
                v[self.prompts.index(p)] = 1.0
            else:
                v = _hashed_unit(p, self.dim, skip=3)
            rows.append(v)
        return torch.stack(rows)


def load_backend(spec: str, role: str = "features") -> EmbeddingBackend:
    """Resolve ``stub`` or ``external:<path.py>``.

    An external file must define ``make_backend(role)`` returning an object
    with ``name``, ``embed_image`` and, for ``role == "classifier"``,
    ``embed_text``.
    """
    if spec == "stub":
        return StubFeatureBackend() if role == "features" else StubClassifierBackend()
    if spec.startswith("external:"):
        path = spec.split(":", 1)[1]
        mod_spec = importlib.util.spec_from_file_location("weathercycle_external_backend", path)
        if mod_spec is None or mod_spec.loader is None:
            raise BackendError(f"cannot load embedding backend from {path!r}")
        module = importlib.util.module_from_spec(mod_spec)
        mod_spec.loader.exec_module(module)
        return module.make_backend(role)
    raise BackendError(f"unknown embedding backend {spec!r}")


def _call_backend(backend: EmbeddingBackend, fn: str, arg):
    try:
        return getattr(backend, fn)(arg)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"backend {getattr(backend, 'name', backend)!r} failed in {fn}: {exc}") from exc


def label_from_scores(scores: Sequence[float]) -> Difficulty:
    best = max(scores)
    # ties go to the harder level
    return Difficulty(max(i for i, s in enumerate(scores) if s == best))


def classify_difficulty(backend: EmbeddingBackend, image: torch.Tensor,
                        prompts: Sequence[str] = DEFAULT_PROMPTS) -> DifficultyLabel:
    return classify_batch(backend, image.unsqueeze(0) if image.dim() == 3 else image[:1], prompts)[0]


@torch.no_grad()
def classify_batch(backend: EmbeddingBackend, images: torch.Tensor,
                   prompts: Sequence[str] = DEFAULT_PROMPTS) -> list[DifficultyLabel]:
    if len(prompts) != 3:
        raise DacrError(f"exactly three prompts (easy to very hard) are required, got {len(prompts)}")
    img = _call_backend(backend, "embed_image", images)
    txt = _call_backend(backend, "embed_text", list(prompts)).to(img.dtype)
    sims = F.normalize(img, dim=1) @ F.normalize(txt, dim=1).T
    out = []
    for row in sims.tolist():
        out.append(DifficultyLabel(label_from_scores(row), tuple(row)))
    return out


def contrastive_terms(z_anchor: torch.Tensor, z_pos: torch.Tensor, z_neg: torch.Tensor,
                      neg_weights: torch.Tensor, tau: float,
                      positive_in_denominator: bool = False) -> torch.Tensor:
    """Per-anchor ``-log(exp(s_ap/tau) / sum_j w_j exp(s_aj/tau))`` on unit embeddings."""
    s_ap = (z_anchor * z_pos).sum(dim=1) / tau
    s_an = z_anchor @ z_neg.T / tau + torch.log(neg_weights.to(z_anchor.dtype))[None, :]
    if positive_in_denominator:
        s_an = torch.cat([s_ap[:, None], s_an], dim=1)
    return torch.logsumexp(s_an, dim=1) - s_ap


def dacr_loss(backend: EmbeddingBackend, anchors: torch.Tensor, positives: torch.Tensor,
              negatives: torch.Tensor, labels: Sequence[DifficultyLabel | Difficulty],
              w: DacrWeights, hard_set: Sequence[int],
              positive_in_denominator: bool = False) -> tuple[torch.Tensor, bool]:
    """Weighted contrastive loss averaged over ``hard_set``.

    ``anchors`` are restored images, ``positives`` clean-domain images (one per
    anchor), ``negatives`` degraded inputs with one difficulty label each; every
    anchor is contrasted against all negatives. Gradients reach the anchor
    pixels only. Returns ``(loss, active)``; ``active`` is False when
    ``hard_set`` is empty and the loss is a zero placeholder.
    """
    if negatives.shape[0] == 0:
        raise DacrError("dacr_loss needs at least one negative")
    if len(labels) != negatives.shape[0]:
        raise DacrError(f"{len(labels)} labels for {negatives.shape[0]} negatives")
    hard = sorted(set(int(i) for i in hard_set))
    if not hard:
        return anchors.new_zeros(()), False
    if hard[0] < 0 or hard[-1] >= anchors.shape[0]:
        raise DacrError(f"hard_set indices {hard} out of range for {anchors.shape[0]} anchors")
    idx = torch.tensor(hard)
    z_a = _call_backend(backend, "embed_image", anchors[idx])
    with torch.no_grad():
        z_p = _call_backend(backend, "embed_image", positives[idx])
        z_n = _call_backend(backend, "embed_image", negatives)
    weights = torch.tensor([weight_of(lab, w) for lab in labels], dtype=torch.float64)
    terms = contrastive_terms(z_a, z_p.to(z_a.dtype), z_n.to(z_a.dtype), weights, w.tau,
                              positive_in_denominator)
    return terms.mean(), True

