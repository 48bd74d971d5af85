import numpy as np
import pytest

from fundus_sve.colorspace import rgb_to_hsi
from fundus_sve.dataset import SampleRecord
from fundus_sve.enhancement import (SveStrategy, SveTransformer, batch_enhance,
                                    build_heatmap_lut, enhance_intensity,
                                    sve_apply, sve_weighted_background)
from fundus_sve.raster_io import save_mask, save_raster


def straight_line_enhance(i, mask, weight):
    """Independent elementwise transcription of the five enhancement steps."""
    h, w = i.shape
    i_bg = np.zeros((h, w))
    i_en = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            i_bg[r, c] = i[r, c] * (1 - mask[r, c])
            i_en[r, c] = i[r, c] + mask[r, c] * 255 * weight
    lo, hi = i_en.min(), i_en.max()
    i_norm = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            i_norm[r, c] = 128.0 if hi == lo else (i_en[r, c] - lo) / (hi - lo) * 255
    i_new = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            i_new[r, c] = i_bg[r, c] + i_norm[r, c] * mask[r, c]
    return i_new


def test_hand_case_1x3():
    inter = enhance_intensity(np.array([[50.0, 100.0, 200.0]]),
                              np.array([[0, 1, 0]], dtype=np.uint8), 0.2)
    assert np.allclose(inter.i_enhanced, [[50, 151, 200]])
    assert np.allclose(inter.i_enhanced_normalized, [[0.0, 171.7, 255.0]])
    assert np.allclose(inter.i_new, [[50.0, 171.7, 200.0]])


def test_matches_straight_line_oracle(rng):
    for _ in range(50):
        h, w = rng.integers(2, 17, 2)
        i = rng.uniform(0, 255, (h, w))
        mask = rng.integers(0, 2, (h, w)).astype(np.uint8)
        inter = enhance_intensity(i, mask, 0.2)
        assert np.abs(inter.i_new - straight_line_enhance(i, mask, 0.2)).max() < 1e-9


def test_empty_mask_identity(rng):
    img = rng.integers(0, 256, (12, 12, 3), dtype=np.uint8)
    mask = np.zeros((12, 12), dtype=np.uint8)
    out, inter = sve_weighted_background(img, mask, 0.7)
    assert np.array_equal(inter.i_new, rgb_to_hsi(img).i)
    assert np.abs(out.astype(int) - img.astype(int)).max() <= 1


def test_full_range_weight_zero_is_identity():
    i = np.linspace(0, 255, 16).reshape(4, 4)
    i[0, 0], i[-1, -1] = 0.0, 255.0
    mask = np.ones((4, 4), dtype=np.uint8)
    inter = enhance_intensity(i, mask, 0.0)
    assert np.allclose(inter.i_new, i)


def test_degenerate_normalization():
    inter = enhance_intensity(np.full((3, 3), 77.0), np.ones((3, 3), dtype=np.uint8), 0.0)
    assert np.allclose(inter.i_enhanced_normalized, 128.0)


def test_background_pixels_exact(rng):
    i = rng.uniform(0, 255, (10, 10))
    mask = rng.integers(0, 2, (10, 10)).astype(np.uint8)
    inter = enhance_intensity(i, mask, 0.2)
    assert np.array_equal(inter.i_new[mask == 0], i[mask == 0])


def test_normalized_range_and_extremes(rng):
    i = rng.uniform(0, 255, (10, 10))
    mask = rng.integers(0, 2, (10, 10)).astype(np.uint8)
    inter = enhance_intensity(i, mask, 0.2)
    norm = inter.i_enhanced_normalized
    assert norm.min() == 0.0 and norm.max() == 255.0
    assert np.allclose(inter.i_new, inter.i_background + inter.i_enhanced_normalized_vessel)


def test_weight_monotonicity(rng):
    i = rng.uniform(0, 255, (8, 8))
    mask = rng.integers(0, 2, (8, 8)).astype(np.uint8)
    a = enhance_intensity(i, mask, 0.1)
    b = enhance_intensity(i, mask, 0.3)
    assert (a.i_enhanced <= b.i_enhanced + 1e-12).all()


def test_h_and_s_preserved(rng):
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    mask = rng.integers(0, 2, (16, 16)).astype(np.uint8)
    hsi = rgb_to_hsi(img)
    inter = enhance_intensity(hsi.i, mask, 0.2)
    # the recombination reuses hsi.h and hsi.s untouched; assert the
    # intermediates never leak into them
    assert np.array_equal(hsi.h, rgb_to_hsi(img).h)
    assert np.array_equal(hsi.s, rgb_to_hsi(img).s)
    assert inter.i_new.shape == hsi.i.shape


def test_dimension_mismatch(rng):
    img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
    with pytest.raises(ValueError):
        sve_weighted_background(img, np.zeros((5, 5), dtype=np.uint8), 0.2)


def test_vessel_only_full_mask(rng):
    img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    out = sve_apply(img, np.ones((8, 8), dtype=np.uint8), SveStrategy("vessel-only"))
    assert np.abs(out.astype(int) - img.astype(int)).max() <= 1


def test_weighted_plus_origin_value():
    img = np.full((2, 2, 3), 200, dtype=np.uint8)
    mask = np.array([[1, 0], [0, 0]], dtype=np.uint8)
    hsi = rgb_to_hsi(img)
    strategy = SveStrategy("weighted-plus-origin", weight=0.2)
    out = sve_apply(img, mask, strategy)
    # vessel pixel: I 200 -> 251, achromatic so all channels equal
    assert tuple(out[0, 0]) == (251, 251, 251)
    assert tuple(out[0, 1]) == (200, 200, 200)
    assert hsi.i[0, 0] == 200


def test_gamma_vessel_value():
    img = np.full((1, 2, 3), 64, dtype=np.uint8)  # I = 64 -> 63.75 not representable
    mask = np.array([[1, 0]], dtype=np.uint8)
    out = sve_apply(img, mask, SveStrategy("gamma-vessel-plus-origin", gamma=0.5))
    # 255 * (64/255) ** 0.5 = 127.75 -> rounds to 128
    assert tuple(out[0, 0]) == (128, 128, 128)
    assert tuple(out[0, 1]) == (64, 64, 64)
    # exact quarter intensity on the real-valued path
    assert 255.0 * (63.75 / 255.0) ** 0.5 == pytest.approx(127.5)


def test_heatmap_lut_endpoints():
    lut = build_heatmap_lut()
    assert lut.shape == (256, 3)
    assert tuple(lut[0]) == (0, 0, 255)
    assert tuple(lut[255]) == (255, 0, 0)


def test_heatmap_background_unchanged(rng):
    img = rng.integers(0, 256, (6, 6, 3), dtype=np.uint8)
    mask = np.zeros((6, 6), dtype=np.uint8)
    mask[2, 3] = 1
    out = sve_apply(img, mask, SveStrategy("heatmap-vessel-plus-origin"))
    same = np.ones((6, 6), dtype=bool)
    same[2, 3] = False
    assert np.array_equal(out[same], img[same])


def test_unknown_variant():
    with pytest.raises(ValueError):
        SveStrategy("sharpen")


def test_batch_enhance(tmp_path, rng):
    records = []
    for i in range(3):
        img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        mask = rng.integers(0, 2, (8, 8)).astype(np.uint8)
        save_raster(img, tmp_path / f"i{i}.png")
        save_mask(mask, tmp_path / f"m{i}.png")
        records.append(SampleRecord(id=f"s{i}", image=str(tmp_path / f"i{i}.png"),
                                    mask=str(tmp_path / f"m{i}.png"), label=0))
    result = batch_enhance(records, SveStrategy(), tmp_path / "out")
    assert len(result.outputs) == 3 and not result.errors
    assert sorted(result.outputs) == ["s0", "s1", "s2"]


def test_batch_enhance_empty(tmp_path):
    result = batch_enhance([], SveStrategy(), tmp_path / "out")
    assert not result.outputs and not result.errors


def test_batch_enhance_missing_mask(tmp_path, rng):
    img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
    save_raster(img, tmp_path / "i.png")
    records = [
        SampleRecord(id="ok", image=str(tmp_path / "i.png"), mask="", label=0),
    ]
    result = batch_enhance(records, SveStrategy(), tmp_path / "out")
    assert "ok" in result.errors and not result.outputs


def test_transformer_params(rng):
    t = SveTransformer(weight=0.3)
    assert t.get_params()["weight"] == 0.3
    t.set_params(weight=0.1)
    img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
    mask = np.zeros((4, 4), dtype=np.uint8)
    out = t.fit_transform([(img, mask)])
    assert np.abs(out[0].astype(int) - img.astype(int)).max() <= 1
