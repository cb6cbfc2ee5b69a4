import numpy as np
import pytest

from oracles import (DIRECTIONS, feature_vector_oracle, glcm_counts_oracle, haralick_oracle,
                     normalize, quantize_oracle)
from texfuse.dataset import GrayImage
from texfuse.glcm import (
    DISTANCES,
    FEATURE_DIM,
    HARALICK_NAMES,
    OFFSETS,
    NoValidPairsError,
    cooccurrence,
    decode_feature_cache,
    encode_feature_cache,
    extract_features,
    feature_blocks,
    haralick13,
    quantize,
    read_feature_cache,
    write_feature_cache,
)


def _random_image(seed, size=8):
    return np.random.default_rng(seed).integers(0, 256, (size, size), dtype=np.uint8)


def test_layout_constants():
    assert OFFSETS == DIRECTIONS
    assert DISTANCES == (1, 3, 5)
    assert len(HARALICK_NAMES) == 13
    assert FEATURE_DIM == 195


@pytest.mark.parametrize("pixel,level", [(0, 0), (255, 7), (128, 4), (31, 0), (32, 1)])
def test_quantize_examples(pixel, level):
    assert quantize(np.full((2, 2), pixel, dtype=np.uint8))[0, 0] == level


def test_quantize_rejects_one_level():
    with pytest.raises(ValueError):
        quantize(np.zeros((2, 2), dtype=np.uint8), 1)


def test_constant_image_delta_glcm():
    g = cooccurrence(np.full((2, 2), 3), (0, 1), 1)
    expect = np.zeros((8, 8))
    expect[3, 3] = 1.0
    assert np.array_equal(g.matrix, expect)


def test_checkerboard_glcm_and_features():
    g = cooccurrence(np.array([[0, 7], [7, 0]]), (0, 1), 1)
    assert g.matrix[0, 7] == 0.5 and g.matrix[7, 0] == 0.5
    f = dict(zip(HARALICK_NAMES, haralick13(g)))
    assert f["contrast"] == pytest.approx(49.0, abs=1e-12)
    assert f["angular_second_moment"] == pytest.approx(0.5, abs=1e-12)
    assert f["entropy"] == pytest.approx(1.0, abs=1e-12)


def test_delta_glcm_features():
    p = np.zeros((8, 8))
    p[2, 2] = 1.0
    f = dict(zip(HARALICK_NAMES, haralick13(p)))
    assert f["angular_second_moment"] == 1.0
    assert f["contrast"] == 0.0
    assert f["entropy"] == 0.0
    assert f["inverse_difference_moment"] == 1.0
    assert f["correlation"] == 0.0
    assert f["info_measure_correlation_1"] == 0.0


@pytest.mark.parametrize("distance", [1, 3, 5])
@pytest.mark.parametrize("offset", OFFSETS)
def test_counts_match_oracle(offset, distance):
    for seed in range(10):
        px = _random_image(seed)
        q = quantize(px)
        g = cooccurrence(q, offset, distance)
        assert g.counts.tolist() == glcm_counts_oracle(quantize_oracle(px.tolist()), offset, distance)
        assert np.array_equal(g.counts, g.counts.T)
        assert abs(g.matrix.sum() - 1.0) <= 1e-12


def test_haralick_matches_oracle_100_images():
    worst = 0.0
    for seed in range(100):
        q = quantize_oracle(_random_image(1000 + seed).tolist())
        for d in DISTANCES:
            for off in OFFSETS:
                p = normalize(glcm_counts_oracle(q, off, d))
                got = haralick13(np.array(p))
                worst = max(worst, float(np.max(np.abs(got - np.array(haralick_oracle(p))))))
    assert worst <= 1e-10


def test_feature_vector_matches_oracle_16x16():
    px = _random_image(77, 16)
    got = extract_features(GrayImage(px))
    assert got.shape == (195,)
    assert np.max(np.abs(got - np.array(feature_vector_oracle(px.tolist())))) <= 1e-10


def test_low_contrast_images_are_finite():
    # two gray levels only: marginals nearly degenerate
    px = np.full((16, 16), 40, dtype=np.uint8)
    px[5, 7] = 41 + 32
    v = extract_features(GrayImage(px))
    assert np.all(np.isfinite(v))


def test_constant_image_blocks_equal_mean():
    blocks = feature_blocks(GrayImage(np.full((64, 64), 200, dtype=np.uint8)))
    for d in range(3):
        for b in range(4):
            assert np.array_equal(blocks[d, b], blocks[d, 4])


def test_mean_block_is_directional_mean():
    blocks = feature_blocks(GrayImage(_random_image(5, 24)))
    assert np.allclose(blocks[:, 4], blocks[:, :4].mean(axis=1), rtol=0, atol=1e-15)


def test_rotation_pairs_horizontal_with_vertical():
    # rotating 90 degrees counter-clockwise turns right-neighbours into up-neighbours
    for seed in range(5):
        q = quantize(_random_image(seed, 12))
        for d in (1, 3):
            a = cooccurrence(q, (0, 1), d).counts
            b = cooccurrence(np.rot90(q), (-1, 0), d).counts
            assert np.array_equal(a, b)


def test_mean_only_layout():
    img = GrayImage(_random_image(3, 20))
    full = extract_features(img)
    short = extract_features(img, mean_only=True)
    assert short.shape == (39,)
    assert np.array_equal(short, full.reshape(3, 5, 13)[:, 4].ravel())


def test_no_valid_pairs():
    with pytest.raises(NoValidPairsError):
        cooccurrence(np.zeros((4, 4), dtype=int), (0, 1), 5)
    with pytest.raises(NoValidPairsError):
        extract_features(GrayImage(np.zeros((5, 5), dtype=np.uint8)))


def test_rejects_unknown_offset_and_distance():
    with pytest.raises(ValueError):
        cooccurrence(np.zeros((4, 4), dtype=int), (1, 1), 1)
    with pytest.raises(ValueError):
        cooccurrence(np.zeros((4, 4), dtype=int), (0, 1), 0)


def test_feature_cache_layout(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 195))
    y = [0, 2, 1]
    data = encode_feature_cache(x, y)
    assert data[:4] == b"TXF1"
    assert int.from_bytes(data[4:8], "little") == 3
    assert int.from_bytes(data[8:12], "little") == 195
    assert int.from_bytes(data[12:16], "little") == 0
    assert np.frombuffer(data[16:24], "<f8")[0] == x[0, 0]
    assert len(data) == 12 + 3 * (4 + 8 * 195)
    x2, y2 = decode_feature_cache(data)
    assert np.array_equal(x2, x) and y2.tolist() == y
    write_feature_cache(tmp_path / "f.txf", x, y)
    x3, _ = read_feature_cache(tmp_path / "f.txf")
    assert np.array_equal(x3, x)


def test_feature_cache_rejects_garbage():
    from texfuse.artifacts import TexfuseError

    with pytest.raises(TexfuseError):
        decode_feature_cache(b"NOPE" + bytes(8))
    with pytest.raises(TexfuseError):
        decode_feature_cache(encode_feature_cache(np.zeros((2, 3)), [0, 1])[:-1])
