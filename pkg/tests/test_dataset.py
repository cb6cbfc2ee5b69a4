import io
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from texfuse.dataset import (
    SPLIT_LABELS,
    DatasetManifest,
    GrayImage,
    ImageFormatError,
    ManifestError,
    SplitError,
    SplitSpec,
    box_resize,
    encode_pgm,
    generate_synthetic,
    load_image,
    load_images,
    load_manifest,
    resize_to,
    save_manifest,
    save_pgm,
    scan_directory,
    split,
    split_boundaries,
)


def _manifest(per_class, n_classes=2):
    samples = [(f"c{k}/{i}.pgm", k) for k in range(n_classes) for i in range(per_class)]
    return DatasetManifest([f"c{k}" for k in range(n_classes)], samples)


# -- image IO -----------------------------------------------------------------


def test_pgm_bytes_preserved(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 7]))
    img = load_image(p)
    assert (img.width, img.height) == (2, 2)
    assert img.pixels.ravel().tolist() == [0, 255, 128, 7]


def test_pgm_header_comment(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 2\n255\n" + bytes([3, 4, 5, 6]))
    assert load_image(p).pixels.tolist() == [[3, 4], [5, 6]]


def test_pgm_roundtrip_with_comment(tmp_path):
    img = GrayImage(np.arange(64 * 64, dtype=np.uint16).reshape(64, 64).astype(np.uint8))
    path = save_pgm(tmp_path / "x.pgm", img, comment="texfuse config_hash abc")
    back = load_image(path)
    assert back.pixels.size == 4096
    assert np.array_equal(back.pixels, img.pixels)


def test_pgm_rejects_other_maxval(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n1 1\n65535\n\x00\x01")
    with pytest.raises(ImageFormatError, match="maxval"):
        load_image(p)


def test_truncated_pgm(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ImageFormatError, match="truncated"):
        load_image(p)


def _png(mode, size=(3, 2)):
    buf = io.BytesIO()
    Image.new(mode, size).save(buf, format="PNG")
    return buf.getvalue()


def test_png_gray_accepted(tmp_path):
    p = tmp_path / "g.png"
    arr = np.array([[1, 2, 3], [250, 251, 252]], dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(p)
    assert np.array_equal(load_image(p).pixels, arr)


@pytest.mark.parametrize("mode", ["RGB", "RGBA", "LA", "P"])
def test_png_color_rejected(tmp_path, mode):
    p = tmp_path / "c.png"
    p.write_bytes(_png(mode))
    with pytest.raises(ImageFormatError, match="unsupported: non-grayscale"):
        load_image(p)


def test_png_16bit_rejected(tmp_path):
    p = tmp_path / "w.png"
    p.write_bytes(_png("I;16"))
    with pytest.raises(ImageFormatError, match="unsupported"):
        load_image(p)


def test_unknown_format_and_missing(tmp_path):
    p = tmp_path / "x.bmp"
    p.write_bytes(b"BM....")
    with pytest.raises(ImageFormatError, match="unsupported format"):
        load_image(p)
    with pytest.raises(ImageFormatError, match="unreadable"):
        load_image(tmp_path / "nope.pgm")


def test_gray_image_validation():
    with pytest.raises(ValueError):
        GrayImage(np.zeros((1, 5), dtype=np.uint8))
    with pytest.raises(ValueError):
        GrayImage.from_values(2, 2, [1, 2, 3])
    assert GrayImage.from_values(3, 2, range(6)).pixels.shape == (2, 3)


# -- resize --------------------------------------------------------------------


def test_resize_constant():
    img = GrayImage(np.full((4, 4), 100, dtype=np.uint8))
    out = resize_to(img, 2)
    assert out.pixels.tolist() == [[100, 100], [100, 100]]


def test_resize_rounds_half_up():
    assert box_resize(np.array([[0, 0], [255, 255]], dtype=np.uint8), 1).tolist() == [[128]]


def test_resize_kylberg_size():
    rng = np.random.default_rng(0)
    img = GrayImage(rng.integers(0, 256, (567, 567), dtype=np.uint8))
    out = resize_to(img, 64)
    assert out.pixels.shape == (64, 64)
    # area averaging preserves the mean up to rounding
    assert abs(out.pixels.mean() - img.pixels.mean()) < 0.6


def test_resize_identity():
    rng = np.random.default_rng(1)
    img = GrayImage(rng.integers(0, 256, (16, 16), dtype=np.uint8))
    assert np.array_equal(resize_to(img, 16).pixels, img.pixels)


def test_resize_integer_factor_is_block_mean():
    rng = np.random.default_rng(2)
    px = rng.integers(0, 256, (8, 8)).astype(np.uint8)
    expect = np.floor(px.reshape(4, 2, 4, 2).astype(float).mean(axis=(1, 3)) + 0.5)
    assert np.array_equal(box_resize(px, 4), expect)


# -- split -----------------------------------------------------------------------


def test_boundaries_spec_example():
    assert split_boundaries(64, (0.6, 0.1, 0.2, 0.1)) == [38, 45, 58, 64]


def test_split_sizes_64():
    a = split(_manifest(64), SplitSpec((0.6, 0.1, 0.2, 0.1), 1))
    assert a.sizes() == {"train": 76, "validation": 14, "fusion-map": 26, "test": 12}


def test_split_sizes_160():
    a = split(_manifest(160, 1), SplitSpec((0.6, 0.1, 0.2, 0.1), 3))
    assert a.sizes() == {"train": 96, "validation": 16, "fusion-map": 32, "test": 16}


def test_split_all_train():
    a = split(_manifest(5), SplitSpec((1.0, 0.0, 0.0, 0.0), 0))
    assert set(a.labels) == {"train"}


def test_split_deterministic_and_seeded():
    m = _manifest(40, 3)
    spec = SplitSpec((0.6, 0.1, 0.2, 0.1), 9)
    assert split(m, spec).labels == split(m, spec).labels
    assert split(m, spec).labels != split(m, SplitSpec(spec.fractions, 10)).labels


def test_split_infeasible():
    with pytest.raises(SplitError):
        split(_manifest(4), SplitSpec((0.7, 0.1, 0.1, 0.1), 0))


@pytest.mark.parametrize("fractions", [(0.5, 0.1, 0.1, 0.1), (0.6, 0.1, 0.2), (1.1, -0.1, 0.0, 0.0)])
def test_splitspec_rejects(fractions):
    with pytest.raises(ValueError):
        SplitSpec(fractions, 0)


@settings(max_examples=60, deadline=None)
@given(
    per_class=st.lists(st.integers(10, 60), min_size=1, max_size=4),
    raw=st.lists(st.integers(1, 10), min_size=4, max_size=4),
    seed=st.integers(0, 2**32),
)
def test_split_partition_and_stratification(per_class, raw, seed):
    fractions = tuple(r / sum(raw) for r in raw)
    samples = [(f"{k}/{i}", k) for k, n in enumerate(per_class) for i in range(n)]
    m = DatasetManifest([str(k) for k in range(len(per_class))], samples)
    try:
        a = split(m, SplitSpec(fractions, seed))
    except SplitError:
        return
    labels = np.array(m.labels)
    seen = np.concatenate([a.indices(s) for s in SPLIT_LABELS])
    assert sorted(seen.tolist()) == list(range(len(samples)))
    for k, n in enumerate(per_class):
        # independent boundary rule: floor(n * cumulative + 1/2) in exact rationals
        cum = [sum(Fraction(repr(f)) for f in fractions[: s + 1]) for s in range(4)]
        b = [0] + [math.floor(n * c + Fraction(1, 2)) for c in cum]
        for s, name in enumerate(SPLIT_LABELS):
            assert int((labels[a.indices(name)] == k).sum()) == b[s + 1] - b[s]


# -- manifest ---------------------------------------------------------------------


def test_manifest_validation():
    with pytest.raises(ManifestError):
        DatasetManifest(["a", "b"], [("x", 0)] * 4 + [("y", 2)] * 4)
    with pytest.raises(ManifestError):
        DatasetManifest(["a"], [("x", 0)] * 3)


def test_scan_and_manifest_roundtrip(tmp_path):
    root = tmp_path / "data"
    rng = np.random.default_rng(0)
    for cls in ("bark", "sand"):
        for i in range(4):
            save_pgm(root / cls / f"{i}.pgm", GrayImage(rng.integers(0, 256, (8, 8), dtype=np.uint8)))
    (root / "empty").mkdir()
    m = scan_directory(root)
    assert m.classes == ["bark", "sand"]
    assert m.source_size == (8, 8)
    spec = SplitSpec((0.5, 0.25, 0.0, 0.25), 4)
    a = split(m, spec)
    path = save_manifest(tmp_path / "m.json", m, spec, a)
    doc = json.loads(path.read_text())
    assert doc["prng"] == "numpy.PCG64" and doc["seed"] == 4
    assert len(doc["assignment"]) == 8
    m2, spec2, a2 = load_manifest(path)
    assert m2.samples == m.samples and spec2 == spec and a2.labels == a.labels
    assert len(load_images(m2)) == 8


def test_scan_empty(tmp_path):
    with pytest.raises(ManifestError):
        scan_directory(tmp_path)


# -- synthetic ----------------------------------------------------------------------


def test_synthetic_counts():
    m, imgs = generate_synthetic(2, 4, 64, seed=0)
    assert len(imgs) == 8 and m.n_classes == 2
    assert all(im.pixels.shape == (64, 64) for im in imgs)


def test_synthetic_512():
    m, _ = generate_synthetic(8, 64, 16, seed=7)
    assert len(m.samples) == 512 and m.n_classes == 8


def test_synthetic_deterministic():
    _, a = generate_synthetic(3, 4, 32, seed=5)
    _, b = generate_synthetic(3, 4, 32, seed=5)
    _, c = generate_synthetic(3, 4, 32, seed=6)
    assert all(encode_pgm(x) == encode_pgm(y) for x, y in zip(a, b))
    assert any(encode_pgm(x) != encode_pgm(y) for x, y in zip(a, c))
