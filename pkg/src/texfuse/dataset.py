"""Texture patch ingestion, resizing, synthetic fixtures and stratified splits.

Images are plain 8-bit grayscale rasters. Splits are four-way
(train / validation / fusion-map / test) and stratified per class with
cumulative round-half-up boundaries, so a given ``(manifest, seed)`` always
produces the same assignment.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .artifacts import TexfuseError, atomic_write_bytes, read_json, write_json

SPLIT_LABELS = ("train", "validation", "fusion-map", "test")
PRNG_NAME = "numpy.PCG64"
IMAGE_SUFFIXES = (".pgm", ".png")


class ImageFormatError(TexfuseError):
    code = "image-format"


class SplitError(TexfuseError):
    code = "infeasible-split"


class ManifestError(TexfuseError):
    code = "bad-manifest"


@dataclass(eq=False)
class GrayImage:
    """8-bit grayscale raster; ``pixels`` has shape ``(height, width)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {px.shape}")
        if px.shape[0] < 2 or px.shape[1] < 2:
            raise ValueError(f"image must be at least 2x2, got {px.shape[1]}x{px.shape[0]}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def from_values(cls, width: int, height: int, values: Sequence[int]) -> "GrayImage":
        values = np.asarray(values, dtype=np.int64)
        if values.size != width * height:
            raise ValueError("pixel count does not match width x height")
        return cls(values.reshape(height, width))


# ---------------------------------------------------------------------------
# file IO


def _read_pgm(data: bytes, path) -> np.ndarray:
    # header: magic, width, height, maxval, separated by whitespace and comments
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before the raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported: maxval {maxval} (only 255 is accepted)")
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ImageFormatError(f"{path}: truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def load_image(path: str | os.PathLike) -> GrayImage:
    """Read a binary PGM (P5, maxval 255) or an 8-bit grayscale PNG."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"{path}: unreadable: {exc.strerror or exc}") from None
    if data[:2] == b"P5":
        return GrayImage(_read_pgm(data, path))
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        with Image.open(io.BytesIO(data)) as im:
            if im.mode == "L":
                return GrayImage(np.asarray(im, dtype=np.uint8).copy())
            if im.mode in ("1", "I", "I;16", "I;16B", "I;16L"):
                raise ImageFormatError(f"{path}: unsupported: not 8-bit grayscale (mode {im.mode})")
            raise ImageFormatError(f"{path}: unsupported: non-grayscale (mode {im.mode})")
    raise ImageFormatError(f"{path}: unsupported format")


def encode_pgm(img: GrayImage, comment: str | None = None) -> bytes:
    note = f"# {comment}\n" if comment else ""
    header = f"P5\n{note}{img.width} {img.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img.pixels).tobytes()


def save_pgm(path: str | os.PathLike, img: GrayImage, comment: str | None = None) -> Path:
    return atomic_write_bytes(path, encode_pgm(img, comment))


# ---------------------------------------------------------------------------
# resizing


def _box_weights(src: int, dst: int) -> np.ndarray:
    """Integer overlap lengths (in units of 1/dst) of output cells with source pixels."""
    weights = np.zeros((dst, src), dtype=np.int64)
    for i in range(dst):
        lo, hi = i * src, (i + 1) * src
        k0, k1 = lo // dst, -(-hi // dst)
        for k in range(k0, k1):
            weights[i, k] = min(hi, (k + 1) * dst) - max(lo, k * dst)
    return weights


def box_resize(pixels: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Area-average ``pixels`` onto a ``height x width`` grid, rounding half up.

    Works in exact integer arithmetic, so fractional box overlaps (e.g.
    567 -> 64) are weighted by area without floating-point drift.
    """
    width = height if width is None else width
    if height < 1 or width < 1:
        raise ValueError("target size must be positive")
    src = np.asarray(pixels, dtype=np.int64)
    h, w = src.shape
    if (h, w) == (height, width):
        return src.astype(np.uint8)
    rows = _box_weights(h, height)
    cols = _box_weights(w, width)
    num = rows @ src @ cols.T
    den = h * w
    return ((2 * num + den) // (2 * den)).astype(np.uint8)


def resize_to(img: GrayImage, target: int) -> GrayImage:
    if target < 2:
        raise ValueError("target must be >= 2")
    return GrayImage(box_resize(img.pixels, target))


# ---------------------------------------------------------------------------
# manifests and splits


@dataclass
class DatasetManifest:
    classes: list[str]
    samples: list[tuple[str, int]]
    source_size: tuple[int, int] | None = None
    root: str | None = None

    def __post_init__(self):
        self.samples = [(str(p), int(c)) for p, c in self.samples]
        k = len(self.classes)
        labels = {c for _, c in self.samples}
        if labels != set(range(k)):
            raise ManifestError("class indices must be contiguous from 0 and cover every class")
        counts = np.bincount(self.labels, minlength=k)
        for name, n in zip(self.classes, counts):
            if n < 4:
                raise ManifestError(f"class {name!r} has {n} samples; at least 4 are required")

    @property
    def labels(self) -> np.ndarray:
        return np.array([c for _, c in self.samples], dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        if p.is_absolute() or self.root is None:
            return p
        return Path(self.root) / p


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float, float]
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 4:
            raise ValueError("exactly four split fractions are required")
        if any(f < 0 for f in fr):
            raise ValueError("split fractions must be non-negative")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "fractions", fr)
        object.__setattr__(self, "seed", int(self.seed))


@dataclass
class SplitAssignment:
    labels: list[str] = field(default_factory=list)

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLIT_LABELS:
            raise KeyError(split)
        return np.array([i for i, s in enumerate(self.labels) if s == split], dtype=np.int64)

    def sizes(self) -> dict[str, int]:
        return {s: self.labels.count(s) for s in SPLIT_LABELS}


def split_boundaries(n: int, fractions: Iterable[float]) -> list[int]:
    """Cumulative cut points ``round_half_up(n * cumsum(fractions))``.

    Fractions are taken at their shortest decimal repr so that e.g. 0.6 is
    exactly 3/5 and boundary ties round the documented way.
    """
    out = []
    cum = Fraction(0)
    for f in fractions:
        cum += Fraction(repr(float(f)))
        out.append(int(n * cum + Fraction(1, 2)))  # floor(x + 1/2)
    out[-1] = n
    return out


def split(manifest: DatasetManifest, spec: SplitSpec) -> SplitAssignment:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    labels = manifest.labels
    assignment = [""] * len(labels)
    for k, name in enumerate(manifest.classes):
        members = np.flatnonzero(labels == k)
        members = members[rng.permutation(members.size)]
        bounds = split_boundaries(members.size, spec.fractions)
        start = 0
        for label, frac, stop in zip(SPLIT_LABELS, spec.fractions, bounds):
            if frac > 0 and stop <= start:
                raise SplitError(
                    f"split {label!r} (fraction {frac}) receives no samples of class {name!r}"
                )
            for i in members[start:stop]:
                assignment[i] = label
            start = stop
    return SplitAssignment(assignment)


# ---------------------------------------------------------------------------
# directory ingestion


def scan_directory(root: str | os.PathLike) -> DatasetManifest:
    """Build a manifest from ``root/<class_name>/*.pgm|*.png`` (sorted, relative paths)."""
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"dataset root {root} is not a directory")
    classes, samples = [], []
    for d in sorted(d for d in root.iterdir() if d.is_dir() and not d.name.startswith(".")):
        files = sorted(f for f in d.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            continue
        samples.extend((f.relative_to(root).as_posix(), len(classes)) for f in files)
        classes.append(d.name)
    if not samples:
        raise ManifestError(f"no .pgm/.png images under {root}")
    sizes = {load_image(root / p).pixels.shape for p, _ in samples}
    source = tuple(sizes.pop()) if len(sizes) == 1 else None
    return DatasetManifest(classes, samples, source_size=source, root=str(root))


def load_images(manifest: DatasetManifest, size: int | None = None) -> list[GrayImage]:
    images = []
    for rel, _ in manifest.samples:
        img = load_image(manifest.resolve(rel))
        if size is not None and img.pixels.shape != (size, size):
            img = resize_to(img, size)
        images.append(img)
    return images


def manifest_to_dict(
    manifest: DatasetManifest,
    spec: SplitSpec | None = None,
    assignment: SplitAssignment | None = None,
    **extra,
) -> dict:
    doc = {
        "classes": list(manifest.classes),
        "samples": [{"path": p, "class": c} for p, c in manifest.samples],
        "source_size": list(manifest.source_size) if manifest.source_size else None,
        "root": manifest.root,
        "prng": PRNG_NAME,
        "seed": spec.seed if spec else None,
        "fractions": list(spec.fractions) if spec else None,
        "assignment": list(assignment.labels) if assignment else None,
    }
    doc.update(extra)
    return doc


def save_manifest(path, manifest, spec=None, assignment=None, **extra) -> Path:
    return write_json(path, manifest_to_dict(manifest, spec, assignment, **extra))


def load_manifest(path) -> tuple[DatasetManifest, SplitSpec | None, SplitAssignment | None]:
    doc = read_json(path)
    try:
        root = doc.get("root")
        if root is not None and not Path(root).is_absolute():
            root = str((Path(path).parent / root).resolve())
        manifest = DatasetManifest(
            list(doc["classes"]),
            [(s["path"], s["class"]) for s in doc["samples"]],
            source_size=tuple(doc["source_size"]) if doc.get("source_size") else None,
            root=root,
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: missing field {exc}") from None
    spec = None
    if doc.get("fractions") is not None:
        spec = SplitSpec(tuple(doc["fractions"]), doc.get("seed") or 0)
    assignment = SplitAssignment(list(doc["assignment"])) if doc.get("assignment") else None
    if assignment is not None and len(assignment.labels) != len(manifest.samples):
        raise ManifestError(f"{path}: assignment length does not match samples")
    return manifest, spec, assignment


# ---------------------------------------------------------------------------
# synthetic textures

FAMILIES = ("grating", "checker", "blobs")
JITTER_DEG = 15.0


def _class_params(k: int) -> tuple[str, dict]:
    # neighbouring variants of a family are deliberately close so that the
    # per-sample jitter makes them partly confusable
    family = FAMILIES[k % 3]
    v = k // 3
    if family == "grating":
        return family, {"freq": 0.08 + 0.015 * v, "theta": 15.0 * v}
    if family == "checker":
        return family, {"period": 4.0 + 1.0 * v, "theta": 10.0 * v}
    return family, {"sigma": 1.2 + 0.5 * v, "aniso": 1.0 + 0.3 * v}


def _gaussian_field(rng, size, sigma, aniso, theta):
    white = rng.standard_normal((size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    c, s = np.cos(theta), np.sin(theta)
    u = c * fx + s * fy
    w = -s * fx + c * fy
    gain = np.exp(-2.0 * np.pi**2 * sigma**2 * (u**2 * aniso**2 + w**2))
    return np.real(np.fft.ifft2(np.fft.fft2(white) * gain))


def render_texture(k: int, size: int, rng: np.random.Generator, noise: float = 40.0) -> np.ndarray:
    """One jittered sample of synthetic class ``k`` as a uint8 array."""
    family, p = _class_params(k)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    rot = np.deg2rad(rng.uniform(-JITTER_DEG, JITTER_DEG))
    if family == "grating":
        th = np.deg2rad(p["theta"]) + rot
        freq = p["freq"] * rng.uniform(0.9, 1.1)
        phase = rng.uniform(0, 2 * np.pi)
        base = np.sin(2 * np.pi * freq * (xx * np.cos(th) + yy * np.sin(th)) + phase)
    elif family == "checker":
        th = np.deg2rad(p["theta"]) + rot
        period = p["period"] * rng.uniform(0.9, 1.1)
        u = xx * np.cos(th) + yy * np.sin(th) + rng.uniform(0, 2 * period)
        v = -xx * np.sin(th) + yy * np.cos(th) + rng.uniform(0, 2 * period)
        base = np.sign(np.sin(np.pi * u / period) * np.sin(np.pi * v / period))
    else:
        base = _gaussian_field(rng, size, p["sigma"], p["aniso"], rot + 0.3 * k)
    base = base - base.mean()
    std = base.std()
    if std > 0:
        base = base / std
    contrast = 45.0 * rng.uniform(0.8, 1.2)
    brightness = 128.0 + rng.uniform(-12.0, 12.0)
    img = brightness + contrast * base + noise * rng.standard_normal((size, size))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_synthetic(
    classes: int,
    samples_per_class: int,
    size: int = 64,
    seed: int = 0,
    noise: float = 40.0,
) -> tuple[DatasetManifest, list[GrayImage]]:
    """Procedural texture classes with distinct second-order statistics.

    Class ``k`` cycles through oriented sinusoidal gratings, rotated
    checkerboards and anisotropic correlated noise; parameters change with
    ``k // 3``. Every sample gets its own phase, a rotation of up to 15
    degrees, contrast/brightness jitter and additive Gaussian noise with
    standard deviation ``noise``. Each sample draws from its own
    ``PCG64([seed, k, i])`` stream, so output is reproducible byte for byte.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    names = []
    for k in range(classes):
        family, _ = _class_params(k)
        names.append(f"{family}{k // 3:02d}")
    samples, images = [], []
    for k in range(classes):
        for i in range(samples_per_class):
            rng = np.random.Generator(np.random.PCG64([seed, k, i]))
            images.append(GrayImage(render_texture(k, size, rng, noise)))
            samples.append((f"{names[k]}/{i:04d}.pgm", k))
    manifest = DatasetManifest(names, samples, source_size=(size, size))
    return manifest, images
