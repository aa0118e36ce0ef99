import numpy as np
import pytest
import torch
import torch.nn as nn

from weathercycle.ldgm import (ChannelTopKAttention, CtaConfig, DegradationPool, LumaDegradationGuidance,
                               PoolError, conjugate_flip, resize_plane, sample_pool)
from weathercycle.spectral import fft2
from weathercycle.generators import reset_parameters

from conftest import rand_img
from helpers import finite_difference_check


def make_ldgm(size=(16, 16), seed=0, cta=CtaConfig(8, 4), dtype=torch.float64):
    m = LumaDegradationGuidance(cta, size, hidden=4)
    reset_parameters(m, torch.Generator().manual_seed(seed))
    return m.to(dtype)


def make_pool(n, p=8, seed=0):
    rng = np.random.default_rng(seed)
    return DegradationPool(torch.from_numpy(rng.uniform(size=(n, 1, p, p))), [f"s{i}" for i in range(n)])


def test_cta_config_validation():
    with pytest.raises(ValueError):
        CtaConfig(1, 1)
    with pytest.raises(ValueError):
        CtaConfig(4, 5)
    with pytest.raises(ValueError):
        CtaConfig(4, 0)


def test_pool_validation():
    with pytest.raises(PoolError):
        DegradationPool(torch.zeros(2, 3, 8, 8), ["a", "b"])
    with pytest.raises(PoolError):
        DegradationPool(torch.zeros(2, 1, 8, 8), ["a"])


def test_sample_pool_single_and_deterministic():
    pool = make_pool(1)
    for s in range(5):
        assert torch.equal(sample_pool(pool, s), pool.patches[0])
    pool = make_pool(7)
    assert torch.equal(sample_pool(pool, [3, 9]), sample_pool(pool, [3, 9]))


def test_sample_pool_empty():
    with pytest.raises(PoolError):
        sample_pool(DegradationPool(torch.zeros(0, 1, 8, 8), []), 0)
    with pytest.raises(PoolError):
        sample_pool(None, 0)


def test_sample_pool_uniform():
    pool = DegradationPool(torch.arange(4, dtype=torch.float64).view(4, 1, 1, 1).expand(4, 1, 8, 8).clone(),
                           list("abcd"))
    n = 10_000
    counts = np.zeros(4)
    for s in range(n):
        counts[int(sample_pool(pool, [s])[0, 0, 0])] += 1
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) < 3 * sigma)
    chi2 = float(((counts - n / 4) ** 2 / (n / 4)).sum())
    assert chi2 < 16.27  # 99.9th percentile, 3 dof


def test_resize_plane():
    x = torch.ones(1, 1, 8, 8)
    assert resize_plane(x, (8, 8)) is x
    assert resize_plane(x, (16, 12)).shape == (1, 1, 16, 12)


def test_conjugate_flip_maps_k_to_minus_k(rng):
    x = rand_img(rng, 6, 5)
    y = conjugate_flip(x)
    for u in range(6):
        for v in range(5):
            assert y[u, v] == x[(-u) % 6, (-v) % 5]


def test_cta_shape_and_topk_mask(rng):
    cta = ChannelTopKAttention(CtaConfig(8, 3)).double()
    out, keep = cta(rand_img(rng, 2, 1, 12, 12), return_mask=True)
    assert out.shape == (2, 1, 12, 12)
    assert torch.equal(keep.sum(1), torch.full((2,), 3.0, dtype=torch.float64))


def test_cta_full_k_equals_unmasked_path(rng):
    cfg = CtaConfig(6, 6)
    cta = ChannelTopKAttention(cfg).double()
    x = rand_img(rng, 1, 1, 10, 10)
    feats = cta.lift(x)
    scores = torch.sigmoid(cta.score(feats.mean(dim=(-2, -1))))
    want = cta.proj(feats * scores[..., None, None])
    assert torch.allclose(cta(x), want, atol=1e-14)


def test_cta_k1_single_channel_surgery(rng):
    cta = ChannelTopKAttention(CtaConfig(6, 1)).double()
    with torch.no_grad():
        cta.proj.bias.zero_()
    x = rand_img(rng, 1, 1, 10, 10)
    out, keep = cta(x, return_mask=True)
    assert float(out.detach().abs().max()) > 0
    ch = int(keep[0].argmax())
    with torch.no_grad():
        cta.proj.weight[:, ch] = 0.0
    assert float(cta(x).detach().abs().max()) == 0.0


def test_zero_gamma_reproduces_clean(rng):
    m = make_ldgm()
    m.init_identity_encoders()
    with torch.no_grad():
        m.gamma.zero_()
    x = rand_img(rng, 2, 1, 16, 16)
    out = m(x, rand_img(rng, 2, 1, 16, 16)).detach()
    assert float((out - x).abs().max()) < 1e-5


def test_unit_filter_doubles_clean(rng):
    m = make_ldgm()
    m.init_identity_encoders()
    with torch.no_grad():
        m.filt[2].weight.zero_()
        m.filt[2].bias.fill_(60.0)  # sigmoid saturates to 1 in float64
    x = rand_img(rng, 1, 1, 16, 16)
    out, parts = m(x, rand_img(rng, 1, 1, 16, 16), return_parts=True)
    assert torch.equal(parts["filter"], torch.ones_like(parts["filter"]))
    assert float((out - 2 * x).detach().abs().max()) < 1e-5


def test_structural_identity_and_ranges(rng):
    m = make_ldgm(seed=3)
    with torch.no_grad():
        m.gamma.uniform_(0.0, 2.0)
        for enc in (m.amp_enc, m.pha_enc):
            enc[2].weight.normal_(0, 0.1)
        m.amp_enc[2].bias.normal_(0, 0.1)
    x = rand_img(rng, 3, 1, 16, 16)
    with torch.no_grad():
        out, parts = m(x, rand_img(rng, 3, 1, 16, 16), return_parts=True)
        gmax = float(m.spectral_gamma((16, 16)).max())
    amp, filt = parts["encoded_amplitude"], parts["filter"]
    assert float((parts["fused_amplitude"] - amp * (1 + filt)).abs().max()) < 1e-6
    assert float(filt.min()) >= 0 and float(filt.max()) <= gmax
    assert float(parts["imag_residue"]) < 1e-5
    spec = fft2(out)
    mask = spec.amplitude > 1e-6
    dphi = torch.remainder(spec.phase - parts["encoded_phase"] + np.pi, 2 * np.pi) - np.pi
    assert float(dphi[mask].abs().max()) < 1e-6


def test_patch_resized_and_broadcast(rng):
    m = make_ldgm(size=(16, 16))
    out = m(rand_img(rng, 3, 1, 16, 16), rand_img(rng, 1, 8, 8))
    assert out.shape == (3, 1, 16, 16)
    with pytest.raises(ValueError):
        m(rand_img(rng, 3, 1, 16, 16), rand_img(rng, 2, 1, 16, 16))
    with pytest.raises(ValueError):
        m(rand_img(rng, 3, 16, 16), rand_img(rng, 1, 16, 16))


def test_gamma_resized_for_other_sizes(rng):
    m = make_ldgm(size=(16, 16))
    out = m(rand_img(rng, 1, 1, 24, 24), rand_img(rng, 1, 1, 8, 8))
    assert out.shape == (1, 1, 24, 24)


def test_gradient_wrt_gamma_and_all_params(rng):
    m = make_ldgm(seed=5)
    with torch.no_grad():
        m.gamma.uniform_(0.5, 1.5)
        for enc in (m.amp_enc, m.pha_enc):
            enc[2].weight.normal_(0, 0.05)
    x, patch = rand_img(rng, 2, 1, 16, 16), rand_img(rng, 2, 1, 16, 16)
    # random weighting: the output energy alone ignores the (Hermitian) phase path
    probe = torch.from_numpy(rng.standard_normal((2, 1, 16, 16)))
    fn = lambda: (m(x, patch) * probe).sum()
    res = finite_difference_check(fn, [("gamma", m.gamma)], n=20, seed=1)
    assert max(r["rel"] for r in res) < 1e-3, res
    res = finite_difference_check(fn, list(m.named_parameters()), n=30, seed=2)
    assert max(r["rel"] for r in res) < 1e-3, res


def test_every_parameter_gets_gradient(rng):
    m = make_ldgm(seed=2)
    with torch.no_grad():
        for enc in (m.amp_enc, m.pha_enc):
            enc[2].weight.normal_(0, 0.05)
    probe = torch.from_numpy(rng.standard_normal((2, 1, 16, 16)))
    (m(rand_img(rng, 2, 1, 16, 16), rand_img(rng, 2, 1, 16, 16)) * probe).sum().backward()
    for name, p in m.named_parameters():
        assert p.grad is not None and torch.isfinite(p.grad).all(), name
        assert float(p.grad.abs().sum()) > 1e-6, name


def test_output_energy_is_phase_blind(rng):
    # the encoded phase stays odd, so by Parseval the output energy only sees amplitudes
    m = make_ldgm(seed=3)
    with torch.no_grad():
        for enc in (m.amp_enc, m.pha_enc):
            enc[2].weight.normal_(0, 0.05)
    m(rand_img(rng, 2, 1, 16, 16), rand_img(rng, 2, 1, 16, 16)).pow(2).sum().backward()
    assert all(float(p.grad.abs().max()) < 1e-12 for p in m.pha_enc.parameters())
    assert float(m.amp_enc[2].weight.grad.abs().max()) > 1e-3
