"""Deterministic enhancement core: the quadratic brightness curve and friends.

One enhancement step decodes the discrete per-pixel actions into coefficients,
couples the G/B coefficient maps toward a reference channel, applies the
curve x -> x + a*x*(1-x), and blends the result with the raw input. The
coefficient range [-0.3, 1] keeps the curve monotone and closed over [0,1],
so repeated steps approximate a higher-order adjustment without clipping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

ALPHA_MIN = -0.3
ALPHA_MAX = 1.0
ALPHA_STEP = 0.05
N_ACTIONS = 27


@dataclass
class CurveConfig:
    """Blending knobs for one enhancement step.

    skip_weight: share of the curved image in the output blend (1 = no blend).
    channel_momentum: share each non-reference channel keeps of its own
    coefficients; the rest comes from the reference channel.
    """

    skip_weight: float = 0.8
    channel_momentum: float = 0.2
    reference_channel: int = 0

    def __post_init__(self):
        if not 0.0 <= self.skip_weight <= 1.0:
            raise ContractError(f"skip_weight must be in [0,1], got {self.skip_weight}")
        if not 0.0 <= self.channel_momentum <= 1.0:
            raise ContractError(
                f"channel_momentum must be in [0,1], got {self.channel_momentum}"
            )
        if self.reference_channel not in (0, 1, 2):
            raise ContractError(
                f"reference_channel must be 0, 1, or 2, got {self.reference_channel}"
            )


def action_to_alpha(index):
    """Map action index 0..26 to the coefficient -0.3 + 0.05*index."""
    idx = np.asarray(index)
    if (idx < 0).any() or (idx >= N_ACTIONS).any():
        raise ContractError(f"action index out of range 0..{N_ACTIONS - 1}")
    alpha = (idx.astype(np.float32) - 6.0) / 20.0
    return float(alpha) if np.isscalar(index) else alpha


def decode_actions(actions: np.ndarray) -> np.ndarray:
    """ActionMap (H,W,3) of indices -> coefficient map in [-0.3, 1]."""
    return action_to_alpha(actions)


def apply_curve(img: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    """x + a*x*(1-x) per pixel per channel; closed over [0,1] for a in [-0.3,1]."""
    if img.shape != coeff.shape:
        raise ContractError(f"image {img.shape} vs coefficient map {coeff.shape}")
    out = img + coeff * img * (1.0 - img)
    return np.clip(out, 0.0, 1.0)


def couple_channels(coeff: np.ndarray, cfg: CurveConfig) -> np.ndarray:
    """Blend non-reference channels toward the reference channel's coefficients.

    The reference channel passes through; channel c becomes
    momentum*A_c + (1-momentum)*A_ref. Convex, so the range survives.
    """
    ref = coeff[..., cfg.reference_channel : cfg.reference_channel + 1]
    out = cfg.channel_momentum * coeff + (1.0 - cfg.channel_momentum) * ref
    out[..., cfg.reference_channel] = coeff[..., cfg.reference_channel]
    return out


def blend_with_input(enhanced: np.ndarray, raw_input: np.ndarray, weight: float) -> np.ndarray:
    """weight*enhanced + (1-weight)*raw, the skip connection around the curve."""
    if enhanced.shape != raw_input.shape:
        raise ContractError(f"shapes differ: {enhanced.shape} vs {raw_input.shape}")
    return weight * enhanced + (1.0 - weight) * raw_input


def enhance_step(
    state_img: np.ndarray,
    raw_input: np.ndarray,
    actions: np.ndarray,
    cfg: CurveConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """One full step: decode, couple channels, curve, skip blend.

    Returns the next image and the coefficient map that was actually applied
    (post-coupling), which is what the smoothness loss penalizes.
    """
    if actions.shape != state_img.shape:
        raise ContractError(
            f"actions {actions.shape} do not match image {state_img.shape}"
        )
    applied = couple_channels(decode_actions(actions), cfg)
    curved = apply_curve(state_img, applied)
    next_img = blend_with_input(curved, raw_input, cfg.skip_weight).astype(
        state_img.dtype
    )
    return next_img, applied


@dataclass
class EnvelopeTable:
    """Reachable output range per input level after a fixed number of steps."""

    inputs: np.ndarray  # (levels,)
    lo: np.ndarray  # min attainable output
    hi: np.ndarray  # max attainable output


def reachable_envelope(steps: int, skip_weight: float = 1.0, levels: int = 101) -> EnvelopeTable:
    """Min/max output per input level, iterating the step at the coefficient bounds.

    The curve is monotone in the coefficient for x in (0,1), so the pointwise
    extremes after any number of steps are reached by holding the coefficient
    at -0.3 (min) or 1.0 (max) throughout.
    """
    if steps < 0:
        raise ContractError(f"steps must be >= 0, got {steps}")
    v = np.linspace(0.0, 1.0, levels, dtype=np.float64)
    lo = v.copy()
    hi = v.copy()
    for _ in range(steps):
        lo = skip_weight * np.clip(lo + ALPHA_MIN * lo * (1.0 - lo), 0.0, 1.0) + (
            1.0 - skip_weight
        ) * v
        hi = skip_weight * np.clip(hi + ALPHA_MAX * hi * (1.0 - hi), 0.0, 1.0) + (
            1.0 - skip_weight
        ) * v
    return EnvelopeTable(inputs=v, lo=lo, hi=hi)
