"""Netpbm (PGM/PPM) images, masks and attribution heatmaps."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .diffmodel import FeatureVector
from .errors import (
    InputError,
    MalformedHeaderError,
    TruncatedPayloadError,
    UnsupportedMaxvalError,
)

_MAGIC = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}


@dataclass(frozen=True)
class ImageBuffer:
    width: int
    height: int
    channels: int
    samples: np.ndarray  # uint8, shape (height, width, channels)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.uint8)
        if self.channels not in (1, 3):
            raise InputError("channels must be 1 or 3")
        if s.size != self.width * self.height * self.channels:
            raise InputError("sample count does not match width * height * channels")
        object.__setattr__(self, "samples", s.reshape(self.height, self.width, self.channels))

    @property
    def shape(self):
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class MaskBuffer:
    width: int
    height: int
    labels: np.ndarray  # uint8 in {0, 1}, shape (height, width)


def _tokens(data: bytes, count: int, pos: int = 0):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise MalformedHeaderError("unexpected end of header")
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        out.append(data[start:pos])
    return out, pos


def decode(data: bytes) -> ImageBuffer:
    magic = data[:2]
    if magic not in _MAGIC:
        raise MalformedHeaderError(f"unsupported magic number {magic!r}")
    channels, binary = _MAGIC[magic]
    fields, pos = _tokens(data, 3, 2)
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise MalformedHeaderError(f"non-integer header field in {fields}") from exc
    if width < 1 or height < 1:
        raise MalformedHeaderError("width and height must be positive")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} (only 255 is supported)")
    count = width * height * channels
    if binary:
        if pos >= len(data) or not data[pos:pos + 1].isspace():
            raise MalformedHeaderError("missing whitespace after maxval")
        payload = data[pos + 1:pos + 1 + count]
        if len(payload) < count:
            raise TruncatedPayloadError(f"expected {count} samples, got {len(payload)}")
        samples = np.frombuffer(payload, dtype=np.uint8)
    else:
        words = data[pos:].split()
        if len(words) < count:
            raise TruncatedPayloadError(f"expected {count} samples, got {len(words)}")
        try:
            values = np.array([int(w) for w in words[:count]])
        except ValueError as exc:
            raise MalformedHeaderError("non-integer sample in ASCII payload") from exc
        if values.min() < 0 or values.max() > maxval:
            raise MalformedHeaderError("sample outside [0, maxval]")
        samples = values.astype(np.uint8)
    return ImageBuffer(width, height, channels, samples)


def encode(image: ImageBuffer, binary: bool = True) -> bytes:
    magic = {(1, True): b"P5", (3, True): b"P6", (1, False): b"P2", (3, False): b"P3"}
    header = b"%s\n%d %d\n255\n" % (magic[image.channels, binary], image.width, image.height)
    if binary:
        return header + image.samples.tobytes()
    rows = image.samples.reshape(image.height, -1)
    body = "\n".join(" ".join(str(int(v)) for v in row) for row in rows)
    return header + body.encode("ascii") + b"\n"


def read_image(path) -> ImageBuffer:
    return decode(Path(path).read_bytes())


def write_image(image: ImageBuffer, path, binary: bool = True) -> None:
    atomic_write_bytes(path, encode(image, binary))


def to_features(image: ImageBuffer) -> FeatureVector:
    """Samples scaled to [0, 1], row-major with channels fastest."""
    return FeatureVector(image.samples.reshape(-1) / 255.0, image.shape)


def from_features(values, shape) -> ImageBuffer:
    """Inverse of :func:`to_features`, rounding to the nearest sample value."""
    shape = tuple(shape)
    if len(shape) == 2:
        shape = shape + (1,)
    v = np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255)
    return ImageBuffer(shape[1], shape[0], shape[2], v.astype(np.uint8))


def read_mask(path) -> MaskBuffer:
    """Grayscale mask; samples >= 128 are foreground."""
    img = read_image(path)
    if img.channels != 1:
        raise InputError("mask must be a grayscale (PGM) image")
    return MaskBuffer(img.width, img.height, (img.samples[:, :, 0] >= 128).astype(np.uint8))


def write_mask(mask: MaskBuffer, path) -> None:
    write_image(ImageBuffer(mask.width, mask.height, 1, mask.labels * 255), path)


def render_heatmap(attribution, shape, normalization: str = "abs-max",
                   percentile: float = 99.0) -> ImageBuffer:
    """Grayscale heatmap of ``|a|``; channel attributions are summed per pixel.

    ``abs-max`` maps ``|a|`` linearly so the largest value becomes 255;
    ``percentile`` first clips ``|a|`` at its ``percentile``-th percentile.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise InputError(f"heatmap needs a (height, width[, channels]) shape, got {shape}")
    h, w = shape[:2]
    a = np.asarray(attribution, dtype=np.float64).reshape(-1)
    if a.size % (h * w):
        raise InputError(f"{a.size} attributions do not fit a {h}x{w} image")
    mag = np.abs(a.reshape(h * w, -1).sum(axis=1))
    if normalization == "abs-max":
        top = mag.max()
    elif normalization == "percentile":
        top = np.percentile(mag, percentile)
        mag = np.minimum(mag, top)
    else:
        raise InputError(f"unknown normalization {normalization!r}")
    if top > 0:
        # rounding to 9 decimals first absorbs the last-bit drift of mag / top
        # under rescaling, so exact half-way samples cannot flip
        pixels = np.rint(np.round(mag / top * 255.0, 9))
    else:
        pixels = np.zeros_like(mag)
    return ImageBuffer(w, h, 1, pixels.astype(np.uint8))
