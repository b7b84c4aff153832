"""Optional training-free denoising guided by how much each pixel was brightened.

The guidance map is the per-pixel enlightening ratio between the enhanced and
the original image; pixels that were not brightened keep a ratio of 1 and pass
through every denoiser untouched. Two backends: a built-in guided bilateral
filter, and a process hook that hands the image plus the map to any external
denoiser via temp files.
"""

from __future__ import annotations

import shlex
import shutil
import struct
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ContractError,
    DenoiserExitError,
    DenoiserOutputError,
    DenoiserSpawnError,
    ImageError,
)
from .images import load_image, save_image, validate_image

NOISE_EPS = 1e-3
MAP_MAX = 20.0
MAP_MAGIC = b"RLNMAP01"
WINDOW = 5  # builtin bilateral footprint
SPATIAL_SIGMA = 1.5


@dataclass
class DenoiserSpec:
    """Which denoiser to run and how strongly the guidance map drives it."""

    kind: str = "builtin"
    strength: float = 0.1  # range-sigma at full enlightening (builtin)
    command: str = ""  # external template with {in} {map} {out} placeholders
    workdir: str | None = None

    def __post_init__(self):
        if self.kind not in ("builtin", "external"):
            raise ContractError(f"denoiser kind must be builtin or external, got {self.kind!r}")
        if self.strength < 0:
            raise ContractError(f"strength must be >= 0, got {self.strength}")
        if self.kind == "external":
            missing = [p for p in ("{in}", "{map}", "{out}") if p not in self.command]
            if missing:
                raise ContractError(f"external command template lacks {', '.join(missing)}")


def noise_level_map(
    enhanced: np.ndarray, original: np.ndarray, eps: float = NOISE_EPS
) -> np.ndarray:
    """Per-pixel enlightening ratio, channel-averaged and clamped to [1, 20]."""
    if enhanced.shape != original.shape:
        raise ContractError(f"shapes differ: {enhanced.shape} vs {original.shape}")
    y = np.asarray(enhanced, dtype=np.float64)
    x = np.asarray(original, dtype=np.float64)
    ratio = ((y + eps) / (x + eps)).mean(axis=2)
    return np.clip(ratio, 1.0, MAP_MAX)


def builtin_guided_denoise(
    img: np.ndarray, noise_map: np.ndarray, strength: float = 0.1
) -> np.ndarray:
    """Bilateral filter whose range sigma scales with the enlightening ratio.

    sigma_r(p) = strength * (m(p)-1)/(m_max-1), so ratio-1 pixels (and any
    pixels at strength 0) are returned bit-identical.
    """
    validate_image(img)
    if noise_map.shape != img.shape[:2]:
        raise ContractError(f"map shape {noise_map.shape} does not match image {img.shape[:2]}")
    sigma_r = strength * (np.asarray(noise_map, dtype=np.float64) - 1.0) / (MAP_MAX - 1.0)
    active = sigma_r > 0
    if not active.any():
        return img.copy()

    pad = WINDOW // 2
    x = np.asarray(img, dtype=np.float64)
    padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    inv_range = np.where(active, 0.5 / np.maximum(sigma_r, 1e-12) ** 2, 0.0)
    num = np.zeros_like(x)
    den = np.zeros(x.shape[:2], dtype=np.float64)
    h, w = x.shape[:2]
    for dy in range(-pad, pad + 1):
        for dx in range(-pad, pad + 1):
            shifted = padded[pad + dy : pad + dy + h, pad + dx : pad + dx + w]
            spatial = np.exp(-(dy * dy + dx * dx) / (2.0 * SPATIAL_SIGMA**2))
            dist2 = ((shifted - x) ** 2).mean(axis=2)
            weight = spatial * np.exp(-dist2 * inv_range)
            num += weight[:, :, None] * shifted
            den += weight
    filtered = num / den[:, :, None]
    out = np.where(active[:, :, None], filtered, x)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def write_noise_map(path: str | Path, noise_map: np.ndarray) -> None:
    """Raw map file: magic, H and W as little-endian uint32, float32 rows."""
    h, w = noise_map.shape
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(np.ascontiguousarray(noise_map, dtype="<f4").tobytes())


def read_noise_map(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    header = len(MAP_MAGIC) + 8
    if len(data) < header or not data.startswith(MAP_MAGIC):
        raise ContractError(f"{path}: not a noise map file")
    h, w = struct.unpack_from("<II", data, len(MAP_MAGIC))
    if len(data) != header + h * w * 4:
        raise ContractError(f"{path}: noise map payload size mismatch")
    return np.frombuffer(data[header:], dtype="<f4").reshape(h, w).astype(np.float64)


def external_denoise(img: np.ndarray, noise_map: np.ndarray, spec: DenoiserSpec) -> np.ndarray:
    """Hand the image and guidance map to an external command via temp files.

    Any failure (spawn, nonzero exit, unreadable or wrong-size output) raises
    without touching the caller's image.
    """
    if spec.kind != "external":
        raise ContractError("external_denoise needs an external DenoiserSpec")
    validate_image(img)
    tmp = Path(tempfile.mkdtemp(prefix="denoise-", dir=spec.workdir))
    try:
        in_path = tmp / "in.png"
        map_path = tmp / "map.rlnmap"
        out_path = tmp / "out.png"
        save_image(img, in_path)
        write_noise_map(map_path, noise_map)
        argv = [
            a.format(**{"in": str(in_path), "map": str(map_path), "out": str(out_path)})
            for a in shlex.split(spec.command)
        ]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=300)
        except (FileNotFoundError, PermissionError, OSError) as e:
            raise DenoiserSpawnError(f"failed to start {argv[0]!r}: {e}") from e
        if proc.returncode != 0:
            tail = proc.stderr.decode("utf-8", "replace")[-500:]
            raise DenoiserExitError(f"{argv[0]!r} exited with {proc.returncode}: {tail}")
        if not out_path.exists():
            raise DenoiserOutputError(f"{argv[0]!r} produced no output file")
        try:
            result = load_image(out_path)
        except (ImageError, ContractError, OSError) as e:
            raise DenoiserOutputError(f"unreadable denoiser output: {e}") from e
        if result.shape != img.shape:
            raise DenoiserOutputError(
                f"denoiser changed image shape: {img.shape} -> {result.shape}"
            )
        return result
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def refine(img: np.ndarray, noise_map: np.ndarray, spec: DenoiserSpec) -> np.ndarray:
    if spec.kind == "builtin":
        return builtin_guided_denoise(img, noise_map, spec.strength)
    return external_denoise(img, noise_map, spec)
