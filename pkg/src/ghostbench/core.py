"""Image and ROI types, PSNR/MSE metrics, and grayscale image I/O."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PSNR_CAP_DB = 100.0


class ImageError(ValueError):
    """Invalid image data, incompatible shapes, or unreadable image files."""


@dataclass(frozen=True, eq=False)
class Image:
    """Grayscale raster with intensities in [0, 1].

    ``data`` is stored as a read-only ``(height, width)`` float64 array.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ImageError(f"image data must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite intensities")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ImageError("image intensities must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> Image:
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height:
            raise ImageError(f"expected {width * height} values, got {values.size}")
        return cls(values.reshape(height, width))

    @classmethod
    def clipped(cls, data) -> Image:
        return cls(np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def flat(self) -> np.ndarray:
        return self.data.ravel()

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))


@dataclass(frozen=True)
class RoiSpec:
    """Disk region of interest in continuous pixel coordinates.

    Pixel ``(col, row)`` covers ``[col, col+1) x [row, row+1)``; its center is
    at ``(col + 0.5, row + 0.5)``. A pixel is inside when the distance from
    its center to ``(center_x, center_y)`` is strictly less than ``radius``.
    """

    center_x: float
    center_y: float
    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ImageError(f"ROI radius must be positive, got {self.radius}")
        if not (math.isfinite(self.center_x) and math.isfinite(self.center_y)):
            raise ImageError("ROI center must be finite")

    @classmethod
    def centered(cls, width: int, height: int, radius: float) -> RoiSpec:
        return cls(width / 2.0, height / 2.0, radius)

    @classmethod
    def parse(cls, text: str) -> RoiSpec:
        """Parse ``"cx,cy,r"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ImageError(f"ROI must be 'cx,cy,r', got {text!r}")
        return cls(*(float(p) for p in parts))

    def distance_map(self, width: int, height: int) -> np.ndarray:
        ys, xs = np.mgrid[0:height, 0:width]
        return np.hypot(xs + 0.5 - self.center_x, ys + 0.5 - self.center_y)

    def mask(self, width: int, height: int) -> np.ndarray:
        """Boolean ``(height, width)`` membership mask; raises if empty."""
        m = self.distance_map(width, height) < self.radius
        if not m.any():
            raise ImageError(f"ROI {self} does not intersect a {width}x{height} image")
        return m

    def __str__(self):
        return f"{self.center_x:g},{self.center_y:g},{self.radius:g}"


@dataclass(frozen=True)
class QualityReport:
    mse: float
    psnr_db: float
    pixel_count: int
    bit_depth: int = 8


def _scope(reference: Image, candidate: Image, roi: RoiSpec | None):
    if reference.shape != candidate.shape:
        raise ImageError(f"dimension mismatch: {reference.shape} vs {candidate.shape}")
    if roi is None:
        return reference.flat(), candidate.flat()
    m = roi.mask(reference.width, reference.height)
    return reference.data[m], candidate.data[m]


def mse(reference: Image, candidate: Image, roi: RoiSpec | None = None, bit_depth: int = 8) -> float:
    """Mean squared error on the ``[0, 2**bit_depth - 1]`` scale."""
    a, b = _scope(reference, candidate, roi)
    peak = float(2**bit_depth - 1)
    d = (a - b) * peak
    return float(np.mean(d * d))


def psnr(reference: Image, candidate: Image, roi: RoiSpec | None = None, bit_depth: int = 8) -> QualityReport:
    """PSNR in dB; identical inputs report the finite cap ``PSNR_CAP_DB``."""
    a, _ = _scope(reference, candidate, roi)
    err = mse(reference, candidate, roi, bit_depth)
    peak = float(2**bit_depth - 1)
    if err == 0.0:
        value = PSNR_CAP_DB
    else:
        value = min(10.0 * math.log10(peak * peak / err), PSNR_CAP_DB)
    return QualityReport(mse=err, psnr_db=value, pixel_count=int(a.size), bit_depth=bit_depth)


# -- I/O -----------------------------------------------------------------------

def _read_pgm(raw: bytes) -> np.ndarray:
    # P5 header: magic, width, height, maxval separated by whitespace; '#' comments
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ImageError("truncated PGM header")
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise ImageError(f"unsupported PGM variant {tokens[0]!r} (only binary P5)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageError("malformed PGM header") from exc
    if not 0 < maxval < 65536:
        raise ImageError(f"invalid PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    body = raw[pos:pos + need]
    if len(body) != need:
        raise ImageError("truncated PGM raster")
    arr = np.frombuffer(body, dtype=dtype).reshape(height, width).astype(np.float64)
    return np.clip(arr / maxval, 0.0, 1.0)


def load_image(path) -> Image:
    """Load an 8- or 16-bit grayscale PGM (P5) or PNG as an :class:`Image`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"P5":
        return Image(_read_pgm(raw))
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image as PILImage

        with PILImage.open(path) as im:
            if im.mode in ("L",):
                arr, maxval = np.asarray(im, dtype=np.float64), 255.0
            elif im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr, maxval = np.asarray(im, dtype=np.float64), 65535.0
            else:
                raise ImageError(f"{path}: PNG mode {im.mode!r} is not grayscale")
        return Image(np.clip(arr / maxval, 0.0, 1.0))
    if raw[:2] in (b"P2", b"P3", b"P6"):
        raise ImageError(f"{path}: only binary grayscale PGM (P5) is supported")
    raise ImageError(f"{path}: unsupported image format")


def quantize(image: Image, bit_depth: int = 8) -> np.ndarray:
    maxval = 2**bit_depth - 1
    return np.rint(image.data * maxval).astype(np.uint16 if bit_depth > 8 else np.uint8)


def save_image(image: Image, path, bit_depth: int = 8) -> None:
    """Write as P5 PGM (``.pgm``) or grayscale PNG (``.png``)."""
    if bit_depth not in (8, 16):
        raise ImageError("bit_depth must be 8 or 16")
    path = Path(path)
    q = quantize(image, bit_depth)
    if path.suffix.lower() == ".png":
        from PIL import Image as PILImage

        PILImage.fromarray(q).save(path)  # uint8 -> "L", uint16 -> "I;16"
        return
    header = f"P5\n{image.width} {image.height}\n{2**bit_depth - 1}\n".encode("ascii")
    body = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
    try:
        path.write_bytes(header + body)
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def resize_box(image: Image, size: int) -> Image:
    """Downsample to ``size x size`` by box averaging (integer factors exact)."""
    h, w = image.shape
    if (h, w) == (size, size):
        return image
    if h % size == 0 and w % size == 0:
        fy, fx = h // size, w // size
        return Image(image.data.reshape(size, fy, size, fx).mean(axis=(1, 3)))
    from PIL import Image as PILImage

    pil = PILImage.fromarray(image.data.astype(np.float32))
    out = np.asarray(pil.resize((size, size), PILImage.BOX), dtype=np.float64)
    return Image.clipped(out)
