"""Fully-convolutional policy and value networks with a shared encoder.

The agent maps an H x W x 3 image to per-pixel, per-channel action logits
(H x W x 3 x 27) and a per-pixel value map (H x W). All layers are 3x3
same-padded convolutions; the encoder ends in ReLU, the two heads are linear.
Both heads read the same encoder output, so they share one im2col buffer on
the forward pass and one joint (policy | value) GEMM pair on the backward
pass — the value head alone would otherwise degenerate into a slow rank-1
product. Policy output channels are ordered channel-major (27 actions for R,
then G, then B), which makes the (H, W, 3, 27) logits view a free reshape.

Every entry point takes an optional nn.Workspace; the training loop passes
one so per-step scratch (patch matrices, softmax tables) is recycled across
iterations instead of reallocated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .curves import N_ACTIONS
from .errors import ContractError

KERNEL = 3
# sampling shift floor: odds below e^SHIFT_FLOOR are unreachable through a
# float32 CDF, and exp(SHIFT_FLOOR) is large enough that the gradient pass
# (and Adam's squared moments) never touch the float32 denormal range
SHIFT_FLOOR = -45.0


def _take(ws: nn.Workspace | None, shape: tuple, dtype) -> np.ndarray:
    return ws.take(shape, dtype) if ws is not None else np.empty(shape, dtype)


_PREFIX_MATS: dict[tuple, np.ndarray] = {}


def _prefix_matrix(n: int, dtype) -> np.ndarray:
    """Upper-triangular ones; E @ mat gives running sums along the action axis.

    A (rows, n) x (n, n) GEMM beats np.cumsum's sequential accumulate for the
    27-action rows; entries may differ from exact prefix sums by rounding,
    which only moves sampling boundaries by an ulp.
    """
    key = (n, np.dtype(dtype).str)
    mat = _PREFIX_MATS.get(key)
    if mat is None:
        mat = np.triu(np.ones((n, n), dtype))
        _PREFIX_MATS[key] = mat
    return mat


def _release(ws: nn.Workspace | None, *arrays: np.ndarray | None) -> None:
    if ws is not None:
        for arr in arrays:
            if arr is not None:
                ws.release(arr)


@dataclass
class AgentConfig:
    """Network shape: `layers` counts encoder convs plus the two head convs."""

    layers: int = 7
    hidden: int = 32
    actions: int = N_ACTIONS
    seed: int = 0

    def __post_init__(self):
        if self.layers < 3:
            raise ContractError(f"layers must be >= 3 (one shared conv plus two heads), got {self.layers}")
        if self.hidden < 1:
            raise ContractError(f"hidden width must be >= 1, got {self.hidden}")
        if self.actions != N_ACTIONS:
            raise ContractError(f"action count is fixed at {N_ACTIONS}, got {self.actions}")

    def as_dict(self) -> dict:
        return {
            "layers": self.layers,
            "hidden": self.hidden,
            "actions": self.actions,
            "seed": self.seed,
        }


@dataclass
class AgentParams:
    config: AgentConfig
    shared: list[nn.ConvLayerParams]
    policy: nn.ConvLayerParams
    value: nn.ConvLayerParams

    def flat(self) -> list[np.ndarray]:
        """Kernel/bias arrays in a fixed order (encoder first, then heads)."""
        out: list[np.ndarray] = []
        for layer in self.shared:
            out.extend([layer.kernel, layer.bias])
        out.extend([self.policy.kernel, self.policy.bias, self.value.kernel, self.value.bias])
        return out

    def tensor_names(self) -> list[str]:
        names: list[str] = []
        for i in range(len(self.shared)):
            names.extend([f"shared{i}.kernel", f"shared{i}.bias"])
        names.extend(["policy.kernel", "policy.bias", "value.kernel", "value.bias"])
        return names

    def replace_flat(self, arrays: list[np.ndarray]) -> "AgentParams":
        expected = len(self.shared) * 2 + 4
        if len(arrays) != expected:
            raise ContractError(f"expected {expected} tensors, got {len(arrays)}")
        it = iter(arrays)
        shared = [nn.ConvLayerParams(kernel=next(it), bias=next(it)) for _ in self.shared]
        policy = nn.ConvLayerParams(kernel=next(it), bias=next(it))
        value = nn.ConvLayerParams(kernel=next(it), bias=next(it))
        return AgentParams(config=self.config, shared=shared, policy=policy, value=value)


@dataclass
class ForwardCache:
    """Everything the backward pass reuses from a forward pass.

    ReLU masks come from the post-activation maps (z > 0 iff the
    pre-activation was > 0), so pre-activations are not kept. Patch
    matrices are deliberately absent: the backward pass re-unfolds them
    from the kept activations, so the multi-step trajectory cache holds
    ~5 MB per step instead of ~45 MB and the big scratch buffers cycle
    through one hot workspace slot instead of N cold ones.
    """

    x: np.ndarray  # (H,W,3) network input
    acts: list[np.ndarray]  # encoder post-ReLU outputs


@dataclass
class PolicyStats:
    """Softmax table from a sampling pass, reused by the gradient pass.

    shifted = logits - shift (any per-distribution constant), expw =
    exp(shifted), sums = expw summed over the action axis; so probs =
    expw / sums and log-probs = shifted - log(sums) without another
    max-reduction over the action axis.
    """

    shifted: np.ndarray  # (H,W,3,A)
    expw: np.ndarray  # (H,W,3,A)
    sums: np.ndarray  # (H,W,3)


def _init_layer(rng: np.random.Generator, c_in: int, c_out: int, gain: float) -> nn.ConvLayerParams:
    fan_in = c_in * KERNEL * KERNEL
    std = np.sqrt(gain / fan_in)
    kernel = (rng.standard_normal((c_out, c_in, KERNEL, KERNEL)) * std).astype(np.float32)
    bias = np.zeros(c_out, dtype=np.float32)
    return nn.ConvLayerParams(kernel=kernel, bias=bias)


def init_params(config: AgentConfig) -> AgentParams:
    """Fan-in-scaled random weights, zero biases, reproducible from the seed."""
    rng = np.random.default_rng(config.seed)
    shared = []
    c_in = 3
    for _ in range(config.layers - 2):
        shared.append(_init_layer(rng, c_in, config.hidden, gain=2.0))
        c_in = config.hidden
    policy = _init_layer(rng, c_in, 3 * config.actions, gain=1.0)
    value = _init_layer(rng, c_in, 1, gain=1.0)
    return AgentParams(config=config, shared=shared, policy=policy, value=value)


def _check_input(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"expected an (H,W,3) image, got shape {img.shape}")
    dtype = img.dtype if img.dtype in (np.float32, np.float64) else np.float32
    return np.ascontiguousarray(img, dtype=dtype)


def _head_matrix(layer: nn.ConvLayerParams, dtype) -> np.ndarray:
    mat = layer.matrix()
    return mat if mat.dtype == dtype else mat.astype(dtype)


def _conv_from_col(
    col: np.ndarray, layer: nn.ConvLayerParams, h: int, w: int, ws: nn.Workspace | None
) -> np.ndarray:
    flat = _take(ws, (h * w, layer.out_channels), col.dtype)
    np.matmul(col, _head_matrix(layer, col.dtype), out=flat)
    flat += layer.bias
    return flat.reshape(h, w, layer.out_channels)


def _encode(x: np.ndarray, params: AgentParams, want_cache: bool, ws: nn.Workspace | None):
    acts: list[np.ndarray] = []
    h, w = x.shape[:2]
    z = x
    for layer in params.shared:
        col = nn.im2col(z, KERNEL, ws=ws)
        p = _conv_from_col(col, layer, h, w, ws)
        _release(ws, col)
        if not want_cache and z is not x:
            _release(ws, z)
        z = nn.relu(p, out=p)
        if want_cache:
            acts.append(z)
    trunk_col = nn.im2col(z, KERNEL, ws=ws)
    if not want_cache and z is not x:
        _release(ws, z)
    return z, trunk_col, acts


def forward(
    img: np.ndarray,
    params: AgentParams,
    want_cache: bool = False,
    ws: nn.Workspace | None = None,
) -> tuple[np.ndarray, np.ndarray] | tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Run the network; returns (logits (H,W,3,A), values (H,W)).

    Both heads run as a single (policy | value) GEMM so the trunk patch
    matrix is streamed once; the logits are then copied out of the joint
    output into their own contiguous buffer (downstream softmax/sampling
    passes would otherwise pay for strided reads on every traversal).
    """
    x = _check_input(img)
    h, w = x.shape[:2]
    z, trunk_col, acts = _encode(x, params, want_cache, ws)
    n_pol = 3 * params.config.actions
    dtype = x.dtype
    jmat = np.concatenate(
        (_head_matrix(params.policy, dtype), _head_matrix(params.value, dtype)), axis=1
    )
    joint = _take(ws, (h * w, n_pol + 1), dtype)
    np.matmul(trunk_col, jmat, out=joint)
    _release(ws, trunk_col)
    # bias adds fused into the copies out of the joint buffer (one pass each)
    pbias = params.policy.bias.astype(dtype, copy=False)
    vbias = params.value.bias.astype(dtype, copy=False)
    values = np.add(joint[:, n_pol], vbias[0]).reshape(h, w)
    logits = _take(ws, (h, w, 3, params.config.actions), dtype)
    np.add(joint[:, :n_pol], pbias, out=logits.reshape(h * w, n_pol))
    _release(ws, joint)
    if want_cache:
        return logits, values, ForwardCache(x=x, acts=acts)
    return logits, values


def value_forward(
    img: np.ndarray, params: AgentParams, ws: nn.Workspace | None = None
) -> np.ndarray:
    """Value map only (skips the policy head; used for bootstrap estimates)."""
    x = _check_input(img)
    h, w = x.shape[:2]
    z, trunk_col, _ = _encode(x, params, want_cache=False, ws=ws)
    values = _conv_from_col(trunk_col, params.value, h, w, ws).reshape(h, w)
    _release(ws, trunk_col)
    return values


def backward(
    params: AgentParams,
    cache: ForwardCache,
    d_logits: np.ndarray,
    d_values: np.ndarray,
    ws: nn.Workspace | None = None,
) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, in flat() order.

    Patch matrices are re-unfolded from the cached activations layer by
    layer, so one hot scratch buffer serves every step of a trajectory.
    When a workspace is given, the cache's activations are released back to
    it as they are consumed; the cache must not be reused.
    """
    h, w = d_values.shape
    dtype = cache.x.dtype
    n_pol = 3 * params.config.actions

    trunk_act = cache.acts[-1] if cache.acts else cache.x
    h_, w_, c_ = trunk_act.shape
    pixels = h_ * w_

    # joint (policy | value) head gradient: one dW GEMM and one dcol GEMM
    gj = _take(ws, (pixels, n_pol + 1), dtype)
    gj[:, :n_pol] = d_logits.reshape(pixels, n_pol)
    gj[:, n_pol] = d_values.reshape(pixels)
    trunk_col = nn.im2col(trunk_act, KERNEL, ws=ws)
    gmat = trunk_col.T @ gj  # (k*k*C, n_pol+1)
    _release(ws, trunk_col)
    ones = np.ones(pixels, dtype)  # bias sums as GEMV, faster than ufunc reduce
    gbias = ones @ gj
    gp = nn.ConvLayerGrads(
        kernel=np.ascontiguousarray(
            gmat[:, :n_pol].reshape(KERNEL, KERNEL, c_, n_pol).transpose(3, 2, 0, 1)
        ),
        bias=np.ascontiguousarray(gbias[:n_pol]),
    )
    gv = nn.ConvLayerGrads(
        kernel=np.ascontiguousarray(
            gmat[:, n_pol:].reshape(KERNEL, KERNEL, c_, 1).transpose(3, 2, 0, 1)
        ),
        bias=np.ascontiguousarray(gbias[n_pol:]),
    )
    kkc = KERNEL * KERNEL * c_
    jmat = _take(ws, (n_pol + 1, kkc), dtype)
    jmat[:n_pol] = _head_matrix(params.policy, dtype).T
    jmat[n_pol:] = _head_matrix(params.value, dtype).T
    dcol = _take(ws, (pixels, kkc), dtype)
    np.matmul(gj, jmat, out=dcol)
    dz = nn.col2im(dcol, h_, w_, c_, KERNEL, out=_take(ws, (h_, w_, c_), dtype))
    _release(ws, gj, jmat, dcol)

    shared_grads: list[nn.ConvLayerGrads] = [None] * len(params.shared)  # type: ignore[list-item]
    for i in range(len(params.shared) - 1, -1, -1):
        act = cache.acts[i]
        if ws is None:
            dz = dz * (act > 0)
        else:
            mask = ws.take(act.shape, np.bool_)
            np.greater(act, 0, out=mask)
            dz *= mask
            ws.release(mask)
        _release(ws, act)
        layer = params.shared[i]
        c_in = layer.in_channels
        gflat = dz.reshape(-1, layer.out_channels)
        col = nn.im2col(cache.acts[i - 1] if i > 0 else cache.x, KERNEL, ws=ws)
        lmat = col.T @ gflat  # (k*k*C_in, C_out)
        _release(ws, col)
        shared_grads[i] = nn.ConvLayerGrads(
            kernel=np.ascontiguousarray(
                lmat.reshape(KERNEL, KERNEL, c_in, layer.out_channels).transpose(3, 2, 0, 1)
            ),
            bias=ones @ gflat,
        )
        if i > 0:
            dcol_l = _take(ws, (pixels, KERNEL * KERNEL * c_in), dtype)
            np.matmul(gflat, _head_matrix(layer, dtype).T, out=dcol_l)
            new_dz = nn.col2im(
                dcol_l, h_, w_, c_in, KERNEL, out=_take(ws, (h_, w_, c_in), dtype)
            )
            _release(ws, dcol_l, dz)
            dz = new_dz
        else:
            _release(ws, dz)

    flat: list[np.ndarray] = []
    for g in shared_grads:
        flat.extend([g.kernel, g.bias])
    flat.extend([gp.kernel, gp.bias, gv.kernel, gv.bias])
    return flat


def sample_with_stats(
    logits: np.ndarray, rng: np.random.Generator, ws: nn.Workspace | None = None
) -> tuple[np.ndarray, np.ndarray, PolicyStats]:
    """Categorical draw per (pixel, channel) via inverse CDF on exp weights.

    The exponentials are shifted by each row's own logit max and floored at
    SHIFT_FLOOR, and the CDF is compared against uniforms scaled by the
    unnormalised row sums, which samples the same distribution without
    forming probabilities. The floor only touches actions whose within-row
    odds are below e^-45 — a float32 CDF cannot resolve odds under ~1e-8,
    so those are unreachable either way — and it keeps exp(shifted) >=
    2.9e-20, so the gradient pass's products with these weights (and even
    the squares of the resulting per-weight gradients inside Adam) stay
    above the float32 denormal range, where each arithmetic op costs a
    ~100x microcode assist; with a sharp late-training policy that penalty
    used to triple the cost of every gradient pass.

    Returns (actions (H,W,3) int, per-pixel logprob map (H,W) float64 with
    channels summed, PolicyStats for the gradient pass).
    """
    n_actions = logits.shape[-1]
    shape = logits.shape
    dtype = logits.dtype
    shifted = _take(ws, shape, dtype)
    np.subtract(logits, logits.max(axis=-1, keepdims=True), out=shifted)
    np.maximum(shifted, SHIFT_FLOOR, out=shifted)
    expw = _take(ws, shape, dtype)
    np.exp(shifted, out=expw)
    cdf = _take(ws, shape, dtype)
    prefix = _prefix_matrix(n_actions, dtype)
    np.matmul(expw.reshape(-1, n_actions), prefix, out=cdf.reshape(-1, n_actions))
    sums = np.ascontiguousarray(cdf[..., -1])
    u = rng.random(shape[:-1], dtype=np.float32).astype(dtype, copy=False)
    u *= sums
    below = _take(ws, shape, np.bool_)
    np.less(cdf, u[..., None], out=below)
    actions = below.sum(axis=-1)
    np.minimum(actions, n_actions - 1, out=actions)
    _release(ws, cdf, below)
    picked = np.take_along_axis(expw, actions[..., None], axis=-1)[..., 0]
    logprob = np.log(np.maximum(picked.astype(np.float64), np.finfo(np.float64).tiny))
    logprob -= np.log(sums.astype(np.float64))
    return actions, logprob.sum(axis=-1), PolicyStats(shifted=shifted, expw=expw, sums=sums)


def sample_actions(
    logits: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Independent categorical sample per (pixel, channel); see sample_with_stats."""
    actions, logprob, _ = sample_with_stats(logits, rng)
    return actions, logprob


def greedy_actions(logits: np.ndarray) -> np.ndarray:
    """Argmax per (pixel, channel); ties go to the lowest action index."""
    return np.argmax(logits, axis=-1).astype(np.int64)


def action_logprob_map(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-pixel log P of a given action map under the logits (channels summed)."""
    logp = nn.log_softmax_lastdim(logits.astype(np.float64))
    picked = np.take_along_axis(logp, actions[..., None], axis=-1)[..., 0]
    return picked.sum(axis=-1)


def entropy_map(logits: np.ndarray) -> np.ndarray:
    """Per-pixel categorical entropy in nats, summed over the three channels."""
    logp = nn.log_softmax_lastdim(logits.astype(np.float64))
    probs = np.exp(logp)
    return -(probs * logp).sum(axis=(-1, -2))
