"""Gray-level co-occurrence matrices and the 13 Haralick texture statistics.

Feature layout of :func:`extract_features` (195 values by default)::

    for d in (1, 3, 5):
        for block in (offset [0 1], [-1 1], [-1 0], [-1 -1], mean of the four):
            13 statistics in HARALICK_NAMES order

Offsets are (row delta, column delta) and are scaled by the distance.
GLCMs are symmetric and normalised. Gray levels are indexed from 0, which
matters only for the sum average. Entropies use log base 2 with
``0 log 0 = 0``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .artifacts import TexfuseError, atomic_write_bytes
from .dataset import GrayImage

LEVELS = 8
DISTANCES = (1, 3, 5)
OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))
HARALICK_NAMES = (
    "angular_second_moment",
    "contrast",
    "correlation",
    "sum_of_squares_variance",
    "inverse_difference_moment",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "info_measure_correlation_1",
    "info_measure_correlation_2",
)
N_HARALICK = len(HARALICK_NAMES)
FEATURE_DIM = N_HARALICK * (len(OFFSETS) + 1) * len(DISTANCES)

CACHE_MAGIC = b"TXF1"


class NoValidPairsError(TexfuseError):
    code = "no-valid-pairs"


@dataclass(eq=False)
class Glcm:
    levels: int
    distance: int
    offset: tuple[int, int]
    counts: np.ndarray  # symmetric integer counts
    matrix: np.ndarray  # counts / counts.sum()


def quantize(img: GrayImage | np.ndarray, levels: int = LEVELS) -> np.ndarray:
    """``floor(pixel * levels / 256)`` as an int array."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    px = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    return (px.astype(np.int64) * levels) // 256


def cooccurrence(q: np.ndarray, offset: Sequence[int], distance: int, levels: int = LEVELS) -> Glcm:
    offset = (int(offset[0]), int(offset[1]))
    if distance < 1:
        raise ValueError("distance must be >= 1")
    if offset not in OFFSETS:
        raise ValueError(f"offset {offset} is not one of {OFFSETS}")
    q = np.asarray(q, dtype=np.int64)
    h, w = q.shape
    dr, dc = offset[0] * distance, offset[1] * distance
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    if r1 <= r0 or c1 <= c0:
        raise NoValidPairsError(
            f"no valid pairs for offset {offset} at distance {distance} in a {w}x{h} image"
        )
    a = q[r0:r1, c0:c1]
    b = q[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    counts = np.bincount((a * levels + b).ravel(), minlength=levels * levels)
    counts = counts.reshape(levels, levels)
    counts = counts + counts.T
    return Glcm(levels, distance, offset, counts, counts / counts.sum())


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def haralick13(g: Glcm | np.ndarray) -> np.ndarray:
    """The 13 Haralick statistics of a normalised GLCM, in HARALICK_NAMES order.

    Zero-variance marginals make correlation undefined; it is reported as 0,
    and so are the information measures when their denominators vanish.
    """
    p = np.asarray(g.matrix if isinstance(g, Glcm) else g, dtype=np.float64)
    n = p.shape[0]
    i, j = np.indices((n, n))
    lv = np.arange(n)

    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mu_x = float(lv @ px)
    mu_y = float(lv @ py)
    var_x = float(((lv - mu_x) ** 2) @ px)
    var_y = float(((lv - mu_y) ** 2) @ py)

    p_sum = np.bincount((i + j).ravel(), weights=p.ravel(), minlength=2 * n - 1)
    p_diff = np.bincount(np.abs(i - j).ravel(), weights=p.ravel(), minlength=n)
    k_sum = np.arange(2 * n - 1)
    k_diff = np.arange(n)

    asm = float((p**2).sum())
    contrast = float((((i - j) ** 2) * p).sum())
    denom = np.sqrt(var_x * var_y)
    correlation = float(((i * j * p).sum() - mu_x * mu_y) / denom) if denom > 0 else 0.0
    ss_variance = float((((i - mu_x) ** 2) * p).sum())
    idm = float((p / (1.0 + (i - j) ** 2)).sum())
    sum_avg = float(k_sum @ p_sum)
    sum_var = float(((k_sum - sum_avg) ** 2) @ p_sum)
    sum_ent = _entropy(p_sum)
    hxy = _entropy(p)
    diff_mean = float(k_diff @ p_diff)
    diff_var = float(((k_diff - diff_mean) ** 2) @ p_diff)
    diff_ent = _entropy(p_diff)

    hx, hy = _entropy(px), _entropy(py)
    outer = np.outer(px, py)
    mask = p > 0
    hxy1 = float(-(p[mask] * np.log2(outer[mask])).sum())
    hxy2 = _entropy(outer)
    hmax = max(hx, hy)
    imc1 = (hxy - hxy1) / hmax if hmax > 0 else 0.0
    imc2 = float(np.sqrt(max(0.0, 1.0 - np.exp(-2.0 * (hxy2 - hxy)))))

    return np.array(
        [asm, contrast, correlation, ss_variance, idm, sum_avg, sum_var, sum_ent,
         hxy, diff_var, diff_ent, imc1, imc2],
        dtype=np.float64,
    )


def feature_blocks(
    img: GrayImage | np.ndarray,
    levels: int = LEVELS,
    distances: Sequence[int] = DISTANCES,
) -> np.ndarray:
    """Array of shape ``(len(distances), 5, 13)``: four directions then their mean."""
    q = quantize(img, levels)
    out = np.empty((len(distances), len(OFFSETS) + 1, N_HARALICK))
    for a, d in enumerate(distances):
        for b, off in enumerate(OFFSETS):
            out[a, b] = haralick13(cooccurrence(q, off, d, levels))
        out[a, -1] = out[a, :-1].mean(axis=0)
    return out


def extract_features(
    img: GrayImage | np.ndarray,
    levels: int = LEVELS,
    distances: Sequence[int] = DISTANCES,
    mean_only: bool = False,
) -> np.ndarray:
    """Concatenated Haralick vector (195 values), or the 39 directional means if ``mean_only``."""
    blocks = feature_blocks(img, levels, distances)
    if mean_only:
        blocks = blocks[:, -1:, :]
    vec = blocks.ravel()
    if not np.all(np.isfinite(vec)):
        raise FloatingPointError("non-finite Haralick feature")
    return vec


def extract_matrix(images, **kwargs) -> np.ndarray:
    return np.stack([extract_features(im, **kwargs) for im in images])


# ---------------------------------------------------------------------------
# feature cache: "TXF1", u32 count, u32 dim, then per sample u32 class + dim f64


def encode_feature_cache(features: np.ndarray, labels: Sequence[int]) -> bytes:
    features = np.ascontiguousarray(features, dtype="<f8")
    labels = np.asarray(labels, dtype=np.int64)
    n, dim = features.shape
    if labels.shape != (n,):
        raise ValueError("labels must align with feature rows")
    rec = np.dtype([("cls", "<u4"), ("x", "<f8", (dim,))])
    body = np.empty(n, dtype=rec)
    body["cls"] = labels
    body["x"] = features
    return CACHE_MAGIC + struct.pack("<II", n, dim) + body.tobytes()


def decode_feature_cache(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if data[:4] != CACHE_MAGIC:
        raise TexfuseError("not a TXF1 feature cache", code="bad-feature-cache")
    n, dim = struct.unpack_from("<II", data, 4)
    rec = np.dtype([("cls", "<u4"), ("x", "<f8", (dim,))])
    if len(data) != 12 + n * rec.itemsize:
        raise TexfuseError("feature cache length mismatch", code="bad-feature-cache")
    body = np.frombuffer(data, dtype=rec, count=n, offset=12)
    return body["x"].astype(np.float64), body["cls"].astype(np.int64)


def write_feature_cache(path, features, labels):
    return atomic_write_bytes(path, encode_feature_cache(features, labels))


def read_feature_cache(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_feature_cache(fh.read())
