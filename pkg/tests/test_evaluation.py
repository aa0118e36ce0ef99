import csv
import json
import math

import numpy as np
import pytest
import torch
from skimage.metrics import structural_similarity

from weathercycle.colorspace import rgb_to_ycbcr
from weathercycle.evaluation import amplitude_restore, motivation_experiment, run_inference
from weathercycle.generators import ModelConfig, NetConfig, init_params
from weathercycle.imaging import read_image, write_image
from weathercycle.metrics import PSNR_CAP, MetricError, psnr, ssim
from weathercycle.synthetic import haze_veil, random_scene

from conftest import rand_img


def test_psnr_examples(rng):
    a = rand_img(rng, 3, 16, 16)
    assert psnr(a, a) == PSNR_CAP == 100.0
    b = torch.zeros(3, 8, 8, dtype=torch.float64)
    assert psnr(b + 0.1, b) == pytest.approx(20.0)
    assert psnr(b + 0.5, b) == pytest.approx(10 * math.log10(4), abs=1e-9)
    with pytest.raises(MetricError):
        psnr(a, a[:, :8])
    with pytest.raises(MetricError):
        psnr(a, a, on="lab")


def test_psnr_symmetric_and_decreasing(rng):
    a, b = rand_img(rng, 3, 16, 16), rand_img(rng, 3, 16, 16)
    assert psnr(a, b) == psnr(b, a)
    prev = PSNR_CAP
    for d in (0.01, 0.02, 0.05, 0.1):
        cur = psnr(a, (a + d))
        assert cur < prev
        prev = cur


def test_psnr_on_y(rng):
    a, b = rand_img(rng, 3, 16, 16), rand_img(rng, 3, 16, 16)
    ya, yb = rgb_to_ycbcr(a)[0], rgb_to_ycbcr(b)[0]
    assert psnr(a, b, on="y") == pytest.approx(10 * math.log10(1 / float(((ya - yb) ** 2).mean())))


def test_ssim_matches_skimage(rng):
    for _ in range(5):
        a, b = rand_img(rng, 3, 32, 24), rand_img(rng, 3, 32, 24)
        b = 0.5 * a + 0.5 * b
        ya, yb = (rgb_to_ycbcr(x)[0][0].numpy() for x in (a, b))
        want = structural_similarity(ya, yb, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                     use_sample_covariance=False, K1=0.01, K2=0.03)
        assert ssim(a, b) == pytest.approx(want, abs=1e-9)


def test_ssim_properties(rng):
    a, b = rand_img(rng, 3, 16, 16), rand_img(rng, 3, 16, 16)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert abs(ssim(a, b)) <= 1
    board = torch.zeros(3, 32, 32, dtype=torch.float64)
    board[:, ::2, ::2] = 1
    board[:, 1::2, 1::2] = 1
    assert ssim(board, 1 - board) < 0
    with pytest.raises(MetricError):
        ssim(a[:, :10, :10], b[:, :10, :10])


def test_motivation_identical_pair_at_cap(rng):
    x = random_scene(rng, 32)
    res = motivation_experiment(x, x)
    assert res["psnr_raw"] == PSNR_CAP
    assert res["psnr_swap_luma"] > 90 and res["psnr_swap_amplitude"] > 90


def test_motivation_inequalities_on_haze(rng):
    clean = random_scene(rng, 64)
    res = motivation_experiment(haze_veil(clean, rng), clean)
    assert res["psnr_swap_luma"] >= res["psnr_raw"]
    assert res["psnr_swap_amplitude"] >= res["psnr_raw"]
    assert set(res["images"]) == {"swap_luma", "swap_amplitude"}


def test_motivation_shape_mismatch(rng):
    with pytest.raises(ValueError):
        motivation_experiment(rand_img(rng, 3, 16, 16), rand_img(rng, 3, 16, 8))


def test_amplitude_restore_keeps_chroma(rng):
    clean = random_scene(rng, 32)
    deg = haze_veil(clean, rng)
    out = amplitude_restore(deg, clean)
    assert out.shape == clean.shape and float(out.min()) >= 0 and float(out.max()) <= 1


def small_model():
    cfg = ModelConfig(luma=NetConfig(4, 1), chroma=NetConfig(4, 1, variant="chroma_codec"),
                      recon=NetConfig(4, 1, variant="recon_net"), size=(16, 16))
    return init_params(cfg, 0)


def test_run_inference_identity_and_report(tmp_path, rng):
    model = small_model().make_identity()
    inp, ref, out = tmp_path / "in", tmp_path / "ref", tmp_path / "out"
    for i in range(3):
        img = random_scene(rng, 16)
        write_image(inp / f"{i}.png", img)
        write_image(ref / f"{i}.png", haze_veil(img, rng) if i else img)
    (inp / "broken.png").write_bytes(b"junk")
    report = run_inference(model, inp, out, ref)
    assert len(report.written) == 3 and len(report.failures) == 1
    for i in range(3):
        assert float((read_image(out / f"{i}.png") - read_image(inp / f"{i}.png")).abs().max()) <= 1 / 255 + 1e-6
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert [r["path"] for r in rows] == ["0.png", "1.png", "2.png"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mean_psnr"] == pytest.approx(np.mean([float(r["psnr"]) for r in rows]), abs=1e-12)
    assert summary["mean_ssim"] == pytest.approx(np.mean([float(r["ssim"]) for r in rows]), abs=1e-12)
    assert summary["count"] == 3 and len(summary["config_fingerprint"]) == 16


def test_run_inference_pads_odd_sizes(tmp_path, rng):
    model = small_model()
    write_image(tmp_path / "in" / "odd.png", rand_img(rng, 3, 13, 19))
    report = run_inference(model, tmp_path / "in", tmp_path / "out")
    assert not report.failures
    assert read_image(tmp_path / "out" / "odd.png").shape == (3, 13, 19)


def test_run_inference_empty_dir(tmp_path, caplog):
    (tmp_path / "in").mkdir()
    report = run_inference(small_model(), tmp_path / "in", tmp_path / "out")
    assert report.count == 0 and report.written == [] and report.mean_psnr is None
    assert any("no input images" in r.message for r in caplog.records)
