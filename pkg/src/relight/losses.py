"""Four non-reference image losses, their analytic gradients, and the reward map.

Every loss returns a scalar, a per-pixel (H,W) map whose pixel mean equals the
scalar, and an analytic gradient with respect to its differentiable argument
(the enhanced image, or the coefficient map for the smoothness term). The
training reward at a state is the negative weighted sum of the maps, so its
mean recovers the negative total loss exactly.

Conventions used throughout:
- intensity of a pixel is the channel mean (R+G+B)/3;
- region losses keep partial border regions, averaging over their true pixel
  count, and the broadcast maps carry a count correction so the pixel mean
  still equals the region mean (the correction is 1 wherever regions are full);
- the subgradient of |.| at 0 is 0;
- computation is float64 for crisp map/scalar identities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

SPA_REGION = 4
EXP_REGION = 16
EXPOSURE_LEVEL = 0.6
RATIO_EPS = 1e-4


@dataclass
class LossWeights:
    """Mixing weights for the total loss; user-tunable, all non-negative."""

    spa: float = 1.0
    exp: float = 100.0
    tva: float = 200.0
    crl: float = 20.0

    def __post_init__(self):
        for name in ("spa", "exp", "tva", "crl"):
            if getattr(self, name) < 0:
                raise ContractError(f"weight {name} must be >= 0")

    def as_dict(self) -> dict[str, float]:
        return {
            "spa": float(self.spa),
            "exp": float(self.exp),
            "tva": float(self.tva),
            "crl": float(self.crl),
        }


@dataclass
class LossBreakdown:
    spa: float
    exp: float
    tva: float
    crl: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "spa": self.spa,
            "exp": self.exp,
            "tva": self.tva,
            "crl": self.crl,
            "total": self.total,
        }


@dataclass
class LossTerm:
    value: float
    pixel_map: np.ndarray  # (H,W), pixel mean == value
    grad: np.ndarray | None  # d value / d argument; None when skipped


@dataclass
class ReferenceCache:
    """Reference-side intermediates, reusable across repeated scoring calls.

    Everything here depends only on the reference image (and the ratio
    guard), so scoring many enhanced states against one raw input can skip
    recomputing it. Values are bitwise identical to the uncached path.
    """

    shape: tuple
    spa_absdiff: tuple[np.ndarray, np.ndarray]  # |region-mean contrast| per grid axis
    crl_ratios: tuple[np.ndarray, np.ndarray, np.ndarray]  # guarded R/G, R/B, G/B


def reference_cache(reference: np.ndarray, eps: float = RATIO_EPS) -> ReferenceCache:
    """Precompute the reference-side terms used by the non-reference losses."""
    isum, counts = _region_stats(_intensity(reference), SPA_REGION)
    mi = isum / counts
    spa_absdiff = (np.abs(np.diff(mi, axis=0)), np.abs(np.diff(mi, axis=1)))
    x = np.asarray(reference, dtype=np.float64) + eps
    xr, xg, xb = x[..., 0], x[..., 1], x[..., 2]
    return ReferenceCache(
        shape=tuple(reference.shape),
        spa_absdiff=spa_absdiff,
        crl_ratios=(xr / xg, xr / xb, xg / xb),
    )


def _intensity(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64).mean(axis=2)


def _region_stats(field: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-region sums and pixel counts on a non-overlapping size x size grid."""
    h, w = field.shape
    rows = np.arange(0, h, size)
    cols = np.arange(0, w, size)
    sums = np.add.reduceat(np.add.reduceat(field, rows, axis=0), cols, axis=1)
    counts = np.outer(
        np.minimum(rows + size, h) - rows, np.minimum(cols + size, w) - cols
    ).astype(np.float64)
    return sums, counts


def _broadcast_regions(values: np.ndarray, h: int, w: int, size: int) -> np.ndarray:
    ridx = np.arange(h) // size
    cidx = np.arange(w) // size
    return values[ridx[:, None], cidx[None, :]]


def _region_map(region_values: np.ndarray, counts: np.ndarray, h: int, w: int, size: int) -> np.ndarray:
    """Broadcast region values to pixels, weighted so the pixel mean equals the
    mean over regions even when border regions are partial."""
    total = float(h * w)
    k = region_values.size
    weighted = region_values * (total / (k * counts))
    return _broadcast_regions(weighted, h, w, size)


def spatial_consistency_loss(
    enhanced: np.ndarray,
    reference: np.ndarray,
    *,
    need_grad: bool = True,
    ref_cache: ReferenceCache | None = None,
    enhanced_intensity: np.ndarray | None = None,
) -> LossTerm:
    """Squared change of 4x4-region contrast between enhanced and reference.

    Regions are compared against their four grid neighbors (both directions of
    each adjacent pair, matching a per-region neighborhood sum); neighbors
    beyond the border are simply absent. ref_cache/enhanced_intensity skip
    recomputing terms the caller already holds; need_grad=False skips the
    gradient (grad is None) without touching the value or map.
    """
    if enhanced.shape != reference.shape:
        raise ContractError(f"shapes differ: {enhanced.shape} vs {reference.shape}")
    h, w = enhanced.shape[:2]
    if h < SPA_REGION or w < SPA_REGION:
        raise ContractError(f"image {h}x{w} smaller than one {SPA_REGION}x{SPA_REGION} region")
    if enhanced_intensity is None:
        enhanced_intensity = _intensity(enhanced)
    ysum, counts = _region_stats(enhanced_intensity, SPA_REGION)
    my = ysum / counts
    if ref_cache is None:
        isum, _ = _region_stats(_intensity(reference), SPA_REGION)
        mi = isum / counts
        absdi = (np.abs(np.diff(mi, axis=0)), np.abs(np.diff(mi, axis=1)))
    else:
        absdi = ref_cache.spa_absdiff
    k = my.size

    region_vals = np.zeros_like(my)
    region_grad = np.zeros_like(my) if need_grad else None  # d(pair terms)/d my, pre 1/K
    for axis in (0, 1):
        dy = np.diff(my, axis=axis)
        gap = np.abs(dy) - absdi[axis]
        t = gap**2
        lead = [slice(None)] * 2
        trail = [slice(None)] * 2
        lead[axis] = slice(1, None)
        trail[axis] = slice(None, -1)
        region_vals[tuple(lead)] += t
        region_vals[tuple(trail)] += t
        if need_grad:
            # each unordered pair is counted twice in the loss, hence the factor 2
            g = 2.0 * gap * np.sign(dy)
            region_grad[tuple(lead)] += 2.0 * g
            region_grad[tuple(trail)] -= 2.0 * g

    value = float(region_vals.sum() / k)
    pixel_map = _region_map(region_vals, counts, h, w, SPA_REGION)
    if not need_grad:
        return LossTerm(value=value, pixel_map=pixel_map, grad=None)
    per_region_pixel = _broadcast_regions(region_grad / (k * 3.0 * counts), h, w, SPA_REGION)
    grad = np.repeat(per_region_pixel[:, :, None], 3, axis=2)
    return LossTerm(value=value, pixel_map=pixel_map, grad=grad)


def exposure_loss(
    enhanced: np.ndarray,
    level: float = EXPOSURE_LEVEL,
    *,
    need_grad: bool = True,
    enhanced_intensity: np.ndarray | None = None,
) -> LossTerm:
    """Mean absolute gap between 16x16-region mean intensity and the target level."""
    h, w = enhanced.shape[:2]
    if h < EXP_REGION or w < EXP_REGION:
        raise ContractError(f"image {h}x{w} smaller than one {EXP_REGION}x{EXP_REGION} region")
    if enhanced_intensity is None:
        enhanced_intensity = _intensity(enhanced)
    # shift before reducing so a field pinned at the target scores exactly zero
    sums, counts = _region_stats(enhanced_intensity - level, EXP_REGION)
    gaps = sums / counts
    m = gaps.size
    region_vals = np.abs(gaps)
    value = float(region_vals.mean())
    pixel_map = _region_map(region_vals, counts, h, w, EXP_REGION)
    if not need_grad:
        return LossTerm(value=value, pixel_map=pixel_map, grad=None)
    per_region_pixel = _broadcast_regions(np.sign(gaps) / (m * 3.0 * counts), h, w, EXP_REGION)
    grad = np.repeat(per_region_pixel[:, :, None], 3, axis=2)
    return LossTerm(value=value, pixel_map=pixel_map, grad=grad)


def smoothness_loss(coeff_map: np.ndarray, *, need_grad: bool = True) -> LossTerm:
    """Squared total variation of the applied coefficient map.

    Forward differences with a zero-padded last row/column; per pixel and
    channel the term is (|dx| + |dy|)^2, averaged over pixels and channels.
    """
    a = np.asarray(coeff_map, dtype=np.float64)
    h, w, c = a.shape
    dx = np.zeros_like(a)
    dy = np.zeros_like(a)
    dx[:, :-1] = a[:, 1:] - a[:, :-1]
    dy[:-1, :] = a[1:] - a[:-1]
    s = np.abs(dx) + np.abs(dy)
    t = s**2
    value = float(t.mean())
    pixel_map = t.mean(axis=2)
    if not need_grad:
        return LossTerm(value=value, pixel_map=pixel_map, grad=None)
    scale = 1.0 / (h * w * c)
    gdx = 2.0 * s * np.sign(dx) * scale
    gdy = 2.0 * s * np.sign(dy) * scale
    grad = np.zeros_like(a)
    grad -= gdx
    grad[:, 1:] += gdx[:, :-1]
    grad -= gdy
    grad[1:, :] += gdy[:-1, :]
    return LossTerm(value=value, pixel_map=pixel_map, grad=grad)


def channel_ratio_loss(
    enhanced: np.ndarray,
    reference: np.ndarray,
    eps: float = RATIO_EPS,
    *,
    need_grad: bool = True,
    ref_cache: ReferenceCache | None = None,
) -> LossTerm:
    """Squared drift of the pixel-wise R/G, R/B, G/B ratios from the reference.

    Ratios are guarded as (a+eps)/(b+eps) so black pixels stay finite; the per
    pixel term is the squared sum of the three absolute ratio gaps, averaged
    over pixels.
    """
    if enhanced.shape != reference.shape:
        raise ContractError(f"shapes differ: {enhanced.shape} vs {reference.shape}")
    y = np.asarray(enhanced, dtype=np.float64) + eps
    yr, yg, yb = y[..., 0], y[..., 1], y[..., 2]
    if ref_cache is None:
        x = np.asarray(reference, dtype=np.float64) + eps
        xr, xg, xb = x[..., 0], x[..., 1], x[..., 2]
        r_rg, r_rb, r_gb = xr / xg, xr / xb, xg / xb
    else:
        r_rg, r_rb, r_gb = ref_cache.crl_ratios

    d_rg = r_rg - yr / yg
    d_rb = r_rb - yr / yb
    d_gb = r_gb - yg / yb
    s = np.abs(d_rg) + np.abs(d_rb) + np.abs(d_gb)
    t = s**2
    value = float(t.mean())
    if not need_grad:
        return LossTerm(value=value, pixel_map=t, grad=None)

    n = t.size
    coef = 2.0 * s / n
    s_rg, s_rb, s_gb = np.sign(d_rg), np.sign(d_rb), np.sign(d_gb)
    grad = np.empty_like(y)
    grad[..., 0] = coef * (-s_rg / yg - s_rb / yb)
    grad[..., 1] = coef * (s_rg * yr / yg**2 - s_gb / yb)
    grad[..., 2] = coef * (s_rb * yr / yb**2 + s_gb * yg / yb**2)
    return LossTerm(value=value, pixel_map=t, grad=grad)


def total_loss(spa: float, exp: float, tva: float, crl: float, weights: LossWeights) -> LossBreakdown:
    total = weights.spa * spa + weights.exp * exp + weights.tva * tva + weights.crl * crl
    return LossBreakdown(spa=float(spa), exp=float(exp), tva=float(tva), crl=float(crl), total=float(total))


def reward_map(
    spa_map: np.ndarray,
    exp_map: np.ndarray,
    tva_map: np.ndarray,
    crl_map: np.ndarray,
    weights: LossWeights,
) -> np.ndarray:
    """Per-pixel reward: negative weighted sum of the loss maps (mean == -total)."""
    shape = spa_map.shape
    for m in (exp_map, tva_map, crl_map):
        if m.shape != shape:
            raise ContractError(f"loss map shapes differ: {shape} vs {m.shape}")
    return -(
        weights.spa * spa_map
        + weights.exp * exp_map
        + weights.tva * tva_map
        + weights.crl * crl_map
    )


def evaluate_state(
    enhanced: np.ndarray,
    reference: np.ndarray,
    coeff_map: np.ndarray | None,
    weights: LossWeights,
    exposure_level: float = EXPOSURE_LEVEL,
    ref_cache: ReferenceCache | None = None,
) -> tuple[LossBreakdown, np.ndarray]:
    """Breakdown plus reward map for a state, measured against the raw input.

    coeff_map is the map applied on the step into this state; None (for the
    raw input itself) scores the smoothness term as zero. An optional
    reference_cache(reference) skips the reference-side recomputation; cached
    and uncached calls return bitwise-identical results. Loss gradients are
    never needed here, so they are skipped.
    """
    if ref_cache is not None and ref_cache.shape != tuple(reference.shape):
        raise ContractError(
            f"reference cache built for shape {ref_cache.shape}, got {tuple(reference.shape)}"
        )
    yint = _intensity(enhanced)
    spa = spatial_consistency_loss(
        enhanced, reference, need_grad=False, ref_cache=ref_cache, enhanced_intensity=yint
    )
    exp = exposure_loss(enhanced, exposure_level, need_grad=False, enhanced_intensity=yint)
    crl = channel_ratio_loss(enhanced, reference, need_grad=False, ref_cache=ref_cache)
    if coeff_map is None:
        tva_value = 0.0
        tva_map = np.zeros(enhanced.shape[:2], dtype=np.float64)
    else:
        tva = smoothness_loss(coeff_map, need_grad=False)
        tva_value, tva_map = tva.value, tva.pixel_map
    breakdown = total_loss(spa.value, exp.value, tva_value, crl.value, weights)
    reward = reward_map(spa.pixel_map, exp.pixel_map, tva_map, crl.pixel_map, weights)
    return breakdown, reward
