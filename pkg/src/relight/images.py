"""Image I/O, normalization, patch sampling, and synthetic low-light inputs.

Images are (H, W, 3) float32 arrays with every value in [0, 1]. 8-bit samples
map to [0,1] by v/255 on load and round-half-up of v*255 on save, so 0 and 1
are exactly reachable and load . save . load is idempotent on the
{0, 1/255, ..., 1} lattice.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ChannelCountError, ContractError, UnsupportedFormatError

RASTER_SUFFIXES = {".png", ".ppm"}


def validate_image(img: np.ndarray, what: str = "image") -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"{what} must be (H,W,3), got {img.shape}")
    if not np.isfinite(img).all():
        raise ContractError(f"{what} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ContractError(f"{what} has values outside [0,1]")


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize with round-half-up (0.5 -> 128), the inverse of v/255."""
    validate_image(img)
    return np.floor(img.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def _read_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P6"):
        raise UnsupportedFormatError(f"{path}: not a P6 PPM file")
    # header: magic, width, height, maxval, separated by whitespace/comments
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise UnsupportedFormatError(f"{path}: truncated PPM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    body = data[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise UnsupportedFormatError(f"{path}: truncated PPM payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def _write_ppm(path: Path, raw: np.ndarray) -> None:
    h, w, _ = raw.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(raw.tobytes())


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG (RGB8) or PPM (P6) file into a [0,1] float32 image."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(p)
    suffix = p.suffix.lower()
    if suffix not in RASTER_SUFFIXES:
        raise UnsupportedFormatError(f"{p}: unsupported suffix {suffix!r}")
    if suffix == ".ppm":
        return from_uint8(_read_ppm(p))
    try:
        with Image.open(p) as im:
            if im.mode != "RGB":
                raise ChannelCountError(f"{p}: expected RGB, got mode {im.mode}")
            raw = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"{p}: not a decodable PNG") from exc
    return from_uint8(raw)


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write an 8-bit PNG or PPM; rejects out-of-range input before touching disk."""
    p = Path(path)
    raw = to_uint8(img)
    suffix = p.suffix.lower()
    if suffix == ".ppm":
        _write_ppm(p, raw)
    elif suffix == ".png":
        Image.fromarray(raw, mode="RGB").save(p, format="PNG")
    else:
        raise UnsupportedFormatError(f"{p}: unsupported suffix {suffix!r}")


def encode_png(img: np.ndarray) -> bytes:
    """PNG-encode in memory (deterministic for identical pixels)."""
    import io

    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    import io

    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.mode != "RGB":
                raise ChannelCountError(f"expected RGB, got mode {im.mode}")
            raw = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError("not a decodable PNG") from exc
    return from_uint8(raw)


def gamma_darken(img: np.ndarray, gamma: float) -> np.ndarray:
    """Raise every value to gamma >= 1; a synthetic under-exposure stand-in."""
    if gamma < 1.0:
        raise ContractError(f"gamma must be >= 1, got {gamma}")
    validate_image(img)
    return np.power(img, np.float32(gamma))


def crop_offsets(rng: np.random.Generator, h: int, w: int, size: int) -> tuple[int, int]:
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return top, left


def random_crop(
    img: np.ndarray, size: int, seed: int | np.random.Generator
) -> np.ndarray:
    """Contiguous square crop, deterministic under a fixed seed or generator."""
    h, w = img.shape[:2]
    if size > min(h, w):
        raise ContractError(f"crop size {size} exceeds image {h}x{w}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    top, left = crop_offsets(rng, h, w, size)
    return img[top : top + size, left : left + size].copy()


def _smooth(field: np.ndarray, passes: int = 3) -> np.ndarray:
    # repeated 5-tap box blur along both axes, reflect edges
    for _ in range(passes):
        acc = field.copy()
        for shift in (1, 2):
            acc += np.roll(field, shift, axis=0) + np.roll(field, -shift, axis=0)
        field = acc / 5.0
        acc = field.copy()
        for shift in (1, 2):
            acc += np.roll(field, shift, axis=1) + np.roll(field, -shift, axis=1)
        field = acc / 5.0
    return field


def synthetic_scene(height: int, width: int, seed: int = 0) -> np.ndarray:
    """A well-exposed procedural test scene: smooth color fields plus flat patches.

    Mean intensity lands near 0.55 with moderate contrast, which gives the
    degradation pipeline (gamma_darken) something realistic to destroy.
    """
    rng = np.random.default_rng(seed)
    base = _smooth(rng.normal(size=(height, width, 3)), passes=4)
    base -= base.min(axis=(0, 1), keepdims=True)
    peak = base.max(axis=(0, 1), keepdims=True)
    base /= np.where(peak > 0, peak, 1.0)
    img = 0.30 + 0.45 * base
    # scatter a few flat rectangles so region losses see real structure
    for _ in range(6):
        hh = int(rng.integers(height // 8, max(height // 3, height // 8 + 1)))
        ww = int(rng.integers(width // 8, max(width // 3, width // 8 + 1)))
        top = int(rng.integers(0, height - hh + 1))
        left = int(rng.integers(0, width - ww + 1))
        color = rng.uniform(0.25, 0.9, size=3)
        img[top : top + hh, left : left + ww] = (
            0.5 * img[top : top + hh, left : left + ww] + 0.5 * color
        )
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def list_images(directory: str | os.PathLike) -> list[Path]:
    """Sorted raster files directly inside a directory."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(d)
    return sorted(p for p in d.iterdir() if p.suffix.lower() in RASTER_SUFFIXES)
