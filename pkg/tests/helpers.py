"""Independent oracles shared by the unit and acceptance tests."""
from __future__ import annotations

import math

import numpy as np
import torch


def sample_entries(params, n, rng):
    """Pick ``n`` (name, tensor, flat index) triples, spreading over tensors first."""
    params = [(name, p) for name, p in params if p.numel() > 0]
    order = rng.permutation(len(params))
    picks = []
    while len(picks) < n:
        for i in order:
            name, p = params[i]
            picks.append((name, p, int(rng.integers(p.numel()))))
            if len(picks) == n:
                break
    return picks


def finite_difference_check(loss_fn, params, n=20, eps=1e-5, seed=0, floor=1e-8):
    """Compare autodiff with central differences on ``n`` sampled scalar entries.

    ``params`` is a list of (name, leaf tensor with requires_grad). Returns a list
    of dicts with the analytic and numeric derivative and their relative error
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(seed)
    for _, p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    grad_of = {id(p): (g if g is not None else torch.zeros_like(p)) for (_, p), g in zip(params, grads)}
    out = []
    for name, p, idx in sample_entries(params, n, rng):
        flat = p.data.view(-1)
        orig = float(flat[idx])
        with torch.no_grad():
            flat[idx] = orig + eps
            up = float(loss_fn())
            flat[idx] = orig - eps
            down = float(loss_fn())
            flat[idx] = orig
        num = (up - down) / (2 * eps)
        ana = float(grad_of[id(p)].reshape(-1)[idx])
        rel = abs(ana - num) / max(abs(ana), abs(num), floor)
        out.append({"name": name, "index": idx, "analytic": ana, "numeric": num, "rel": rel})
    return out


def scalar_dacr(anchors, positives, negatives, weights, tau, hard, positive_in_denominator=False):
    """Loop-and-math.* re-implementation of the weighted contrastive term.

    Vectors are plain Python lists; cosine similarity is computed from scratch.
    """
    def cos(u, v):
        dot = sum(a * b for a, b in zip(u, v))
        nu = math.sqrt(sum(a * a for a in u))
        nv = math.sqrt(sum(b * b for b in v))
        return dot / (nu * nv)

    terms = []
    for i in hard:
        num = math.exp(cos(anchors[i], positives[i]) / tau)
        den = sum(w * math.exp(cos(anchors[i], n) / tau) for w, n in zip(weights, negatives))
        if positive_in_denominator:
            den += num
        terms.append(-math.log(num / den))
    return sum(terms) / len(terms)
