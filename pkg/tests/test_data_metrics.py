import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srlite.data import (
    DatasetSpec, PairedSample, build_dataset, center_crop, degrade_pair, from_uint8, list_images, read_image,
    read_manifest, read_ppm, stack_batch, synth_dataset, write_image, write_ppm,
)
from srlite.metrics import gaussian_window, psnr, ssim
from srlite.resize import resize_array


# ------------------------------------------------------------------- PSNR
def test_psnr_uniform_difference():
    a = np.full((8, 8, 3), 0.5)
    assert abs(psnr(a, a + 1 / 255) - 48.131) <= 1e-3
    assert abs(psnr(a, a + 1 / 255) - 20 * math.log10(255)) < 1e-9


def test_psnr_identical_is_inf_and_extremes():
    a = np.random.default_rng(0).random((4, 4, 3))
    assert psnr(a, a) == math.inf
    assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == 0.0


def test_psnr_symmetric_and_monotone():
    rng = np.random.default_rng(1)
    a = rng.random((16, 16, 3))
    noise = rng.uniform(-1, 1, a.shape)
    vals = [psnr(a, a + amp * noise) for amp in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]
    b = a + 0.03 * noise
    assert abs(psnr(a, b) - psnr(b, a)) < 1e-9


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


# ------------------------------------------------------------------- SSIM
def scalar_ssim(a, b, size=11, sigma=1.5):
    """Loop-by-loop reference: grayscale by channel mean, Gaussian window, valid positions."""
    x = [[sum(px) / len(px) for px in row] for row in a.tolist()]
    y = [[sum(px) / len(px) for px in row] for row in b.tolist()]
    half = (size - 1) / 2
    taps = [math.exp(-((i - half) ** 2) / (2 * sigma * sigma)) for i in range(size)]
    tot = sum(taps)
    taps = [t / tot for t in taps]
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = len(x), len(x[0])
    scores = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            mx = my = sxx = syy = sxy = 0.0
            for u in range(size):
                for v in range(size):
                    g = taps[u] * taps[v]
                    p, q = x[i + u][j + v], y[i + u][j + v]
                    mx += g * p
                    my += g * q
                    sxx += g * p * p
                    syy += g * q * q
                    sxy += g * p * q
            sxx -= mx * mx
            syy -= my * my
            sxy -= mx * my
            scores.append((2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return sum(scores) / len(scores)


def _gradient_noise_pair():
    rng = np.random.default_rng(7)
    yy, xx = np.mgrid[0:16, 0:16] / 15.0
    a = np.stack([xx, yy, 0.5 * (xx + yy)], -1)
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    return a, b


def test_ssim_matches_scalar_reference():
    a, b = _gradient_noise_pair()
    assert abs(ssim(a, b) - scalar_ssim(a, b)) <= 1e-6


def test_ssim_identical_is_exactly_one():
    a, _ = _gradient_noise_pair()
    assert ssim(a, a) == 1.0
    rnd = np.random.default_rng(3).random((20, 24, 3))
    assert ssim(rnd, rnd) == 1.0


def test_ssim_anticorrelated_binary_is_negative():
    a = (np.random.default_rng(4).random((16, 16)) > 0.5).astype(float)
    assert ssim(a, 1 - a) < 0


def test_ssim_symmetric_and_batched():
    a, b = _gradient_noise_pair()
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9
    batch = ssim(np.stack([a, a]), np.stack([b, a]))
    assert abs(batch - (ssim(a, b) + 1.0) / 2) < 1e-12


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError, match="window"):
        ssim(np.zeros((8, 16)), np.zeros((8, 16)))


def test_gaussian_window_normalised():
    g = gaussian_window()
    assert g.size == 11 and abs(g.sum() - 1) < 1e-15
    np.testing.assert_allclose(g, g[::-1])


# ------------------------------------------------------------ degradation
def test_degrade_celeba_shape():
    img = np.random.default_rng(0).random((218, 178, 3))
    pair = degrade_pair(img, 256, 4)
    assert pair.hr.shape == (256, 256, 3) and pair.lr.shape == (64, 64, 3)
    assert pair.scale == 4


def test_degrade_crop_takes_center():
    img = np.zeros((218, 178, 3))
    img[20:198] = 1.0
    assert center_crop(img).shape == (178, 178, 3)
    assert center_crop(img).min() == 1.0


def test_degrade_constant_image():
    pair = degrade_pair(np.full((50, 70, 3), 0.37), 32, 4)
    assert np.abs(pair.hr - 0.37).max() <= 1e-6
    assert np.abs(pair.lr - 0.37).max() <= 1e-6


def test_degrade_square_input_matches_direct_resize():
    img = np.random.default_rng(2).random((256, 256, 3))
    pair = degrade_pair(img, 256, 4)
    hr = resize_array(img, 256, 256)
    np.testing.assert_array_equal(pair.hr, np.clip(hr, 0, 1).astype(np.float32))
    np.testing.assert_array_equal(pair.lr, np.clip(resize_array(hr, 64, 64), 0, 1).astype(np.float32))


def test_degrade_is_pure():
    img = np.random.default_rng(5).random((40, 30, 3))
    a, b = degrade_pair(img, 16, 2), degrade_pair(img, 16, 2)
    assert a.hr.tobytes() == b.hr.tobytes() and a.lr.tobytes() == b.lr.tobytes()


def test_degrade_errors():
    with pytest.raises(ValueError, match="2x2"):
        degrade_pair(np.zeros((1, 5, 3)))
    with pytest.raises(ValueError, match="divisible"):
        degrade_pair(np.zeros((8, 8, 3)), 30, 4)


def test_paired_sample_invariant():
    with pytest.raises(ValueError):
        PairedSample(lr=np.zeros((4, 4, 3)), hr=np.zeros((8, 12, 3)))


# -------------------------------------------------------------- synthetic
def test_synth_deterministic_and_in_range():
    a, b = synth_dataset(0, 3, 32, 2), synth_dataset(0, 3, 32, 2)
    for x, y in zip(a, b):
        assert x.hr.tobytes() == y.hr.tobytes() and x.lr.tobytes() == y.lr.tobytes()
    assert synth_dataset(1, 1, 32, 2)[0].hr.tobytes() != a[0].hr.tobytes()
    for s in a:
        assert s.hr.min() >= 0 and s.hr.max() <= 1 and s.lr.shape == (16, 16, 3)


def test_synth_fifty_distinct_samples():
    data = synth_dataset(0, 50, 16, 2)
    assert len(data) == 50
    assert len({s.hr.tobytes() for s in data}) == 50


def test_synth_prefix_stable():
    # sample i depends only on (seed, i)
    assert synth_dataset(3, 2, 16, 2)[1].hr.tobytes() == synth_dataset(3, 5, 16, 2)[1].hr.tobytes()


def test_synth_rejects_empty():
    with pytest.raises(ValueError):
        synth_dataset(0, 0)


# ---------------------------------------------------------------------- I/O
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2 ** 32 - 1))
def test_ppm_round_trip_bit_exact(tmp_path_factory, h, w, seed):
    arr = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    path = tmp_path_factory.mktemp("ppm") / "x.ppm"
    write_ppm(path, arr)
    np.testing.assert_array_equal(read_ppm(path), arr)
    data = path.read_bytes()
    write_ppm(path, read_ppm(path))
    assert path.read_bytes() == data


def test_ppm_header_with_comment(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([1, 2, 3, 4, 5, 6]))
    np.testing.assert_array_equal(read_ppm(p), [[[1, 2, 3], [4, 5, 6]]])


@pytest.mark.parametrize("payload, msg", [
    (b"P3\n1 1\n255\n0 0 0", "unsupported"),
    (b"P6\n1 1\n65535\n" + bytes(6), "8-bit"),
    (b"P6\n2 2\n255\n" + bytes(5), "truncated"),
    (b"P6\n2", "header"),
])
def test_ppm_errors(tmp_path, payload, msg):
    p = tmp_path / "bad.ppm"
    p.write_bytes(payload)
    with pytest.raises(ValueError, match=msg):
        read_ppm(p)


def test_read_image_float_and_gray(tmp_path):
    p = tmp_path / "g.ppm"
    p.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 255]))
    img = read_image(p)
    assert img.shape == (1, 2, 3)
    np.testing.assert_array_equal(img[0, :, 0], [0.0, 1.0])
    with pytest.raises(FileNotFoundError):
        read_image(tmp_path / "missing.ppm")


def test_write_image_quantises(tmp_path):
    img = np.array([[[0.0, 0.5, 1.0]]])
    write_image(tmp_path / "q.ppm", img)
    np.testing.assert_array_equal(read_ppm(tmp_path / "q.ppm"), [[[0, 128, 255]]])
    np.testing.assert_allclose(from_uint8(np.array([255])), [1.0])


# ------------------------------------------------------------ directories
def _write_dir(root, n):
    root.mkdir()
    rng = np.random.default_rng(0)
    for i in range(n):
        write_ppm(root / f"img{i:02d}.ppm", rng.integers(0, 256, (12, 10, 3), dtype=np.uint8))


def test_list_images_sorted_and_manifest(tmp_path):
    d = tmp_path / "imgs"
    _write_dir(d, 3)
    (d / "notes.txt").write_text("ignore me")
    assert [p.name for p in list_images(d)] == ["img00.ppm", "img01.ppm", "img02.ppm"]
    (d / "manifest.txt").write_text("# subset\nimg02.ppm\n\nimg00.ppm\n", encoding="utf-8")
    assert read_manifest(d / "manifest.txt") == ["img02.ppm", "img00.ppm"]
    assert [p.name for p in list_images(d)] == ["img02.ppm", "img00.ppm"]
    with pytest.raises(FileNotFoundError):
        list_images(tmp_path / "nope")


def test_build_dataset_synthetic_disjoint():
    train, val = build_dataset(DatasetSpec(hr_size=16, scale=2, n_train=5, n_val=3, seed=2))
    assert len(train) == 5 and len(val) == 3
    assert not {s.name for s in train} & {s.name for s in val}
    lr, hr = stack_batch(train)
    assert lr.shape == (5, 8, 8, 3) and hr.shape == (5, 16, 16, 3) and lr.dtype == np.float32


def test_build_dataset_directory(tmp_path):
    d = tmp_path / "imgs"
    _write_dir(d, 6)
    spec = DatasetSpec(source=str(d), hr_size=8, scale=2, n_train=3, n_val=2, seed=1)
    train, val = build_dataset(spec)
    names = [s.name for s in train + val]
    assert len(set(names)) == 5
    assert names == [s.name for s in sum(build_dataset(spec), [])]
    with pytest.raises(ValueError, match="need"):
        build_dataset(DatasetSpec(source=str(d), hr_size=8, scale=2, n_train=6, n_val=2))


@pytest.mark.parametrize("kw", [dict(crop="random"), dict(hr_size=30, scale=4), dict(n_train=0)])
def test_dataset_spec_validation(kw):
    with pytest.raises(ValueError):
        DatasetSpec(**kw).validate()
