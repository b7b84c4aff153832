"""Minimal dense-tensor operator core with hand-derived reverse-mode gradients.

Tensors are plain numpy arrays (float32 in the production pipeline, row-major).
The operator set is exactly what the 4..7 layer fully convolutional agents
need: stride-1 same-padding convolution, ReLU, a stable last-axis softmax, and
Adam. Gradients are propagated through cached forward activations per layer,
not a taped graph; the network is a short fixed chain plus two heads.

Feature maps are channels-last (H, W, C): patch matrices then have the long
pixel axis first, which is the fast orientation for single-threaded GEMM here,
and the raw (H, W, 3) image is a valid layer input without relayout.

All operations are pure with respect to their inputs. Functions preserve the
input dtype so tests may run the identical code paths in float64.

The training loop allocates ~100 MB of scratch per iteration; Workspace is an
explicit buffer arena that recycles those allocations across iterations, and
configure_allocator() stops glibc from returning the large blocks to the
kernel between mallocs (both worth >100 ms/iteration on one core).
"""

from __future__ import annotations

import ctypes
import ctypes.util
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_allocator_configured = False


def configure_allocator() -> bool:
    """Keep large heap blocks mapped between iterations (glibc only, idempotent).

    The hot loop mallocs/frees several ~19 MB patch matrices per step; with
    default thresholds glibc serves them via mmap/munmap and every touch after
    a fresh mmap page-faults. Raising the mmap and trim thresholds keeps the
    arena resident. Returns True when the tuning call succeeded.
    """
    global _allocator_configured
    if _allocator_configured:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = bool(libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)) and bool(
            libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
        )
    except (OSError, AttributeError):
        return False
    _allocator_configured = ok
    return ok


class Workspace:
    """Reusable scratch-buffer arena for the training hot loop.

    take() hands out an uninitialised array and records it as lent;
    release(arr) returns one buffer early; recycle() reclaims everything
    still lent. Callers must not hold references into the arena across a
    recycle — the training loop recycles once per iteration, after the
    previous trajectory is fully consumed.
    """

    def __init__(self):
        self._free: dict[tuple, list[np.ndarray]] = {}
        self._lent: dict[int, np.ndarray] = {}

    def take(self, shape: tuple, dtype=np.float32) -> np.ndarray:
        key = (tuple(shape), np.dtype(dtype).str)
        stack = self._free.get(key)
        arr = stack.pop() if stack else np.empty(shape, dtype)
        self._lent[id(arr)] = arr
        return arr

    def release(self, arr: np.ndarray) -> None:
        base = arr if arr.base is None else arr.base
        owned = self._lent.pop(id(base), None)
        if owned is not None:
            self._free.setdefault((owned.shape, owned.dtype.str), []).append(owned)

    def recycle(self) -> None:
        for arr in self._lent.values():
            self._free.setdefault((arr.shape, arr.dtype.str), []).append(arr)
        self._lent.clear()


@dataclass
class ConvLayerParams:
    """Stride-1, zero same-padding convolution parameters.

    kernel: (out_ch, in_ch, k, k) with k odd, bias: (out_ch,).
    Same padding of (k-1)/2 keeps every spatial size, so the agent stays
    fully convolutional for arbitrary H x W. The kernel array is treated as
    frozen once the layer is built (updates build new layers), so its GEMM
    layout is computed once.
    """

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ContractError(f"kernel must be 4-d, got shape {self.kernel.shape}")
        k1, k2 = self.kernel.shape[2], self.kernel.shape[3]
        if k1 != k2 or k1 % 2 == 0:
            raise ContractError(f"kernel window must be square and odd, got {k1}x{k2}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ContractError(
                f"bias shape {self.bias.shape} does not match out_ch {self.kernel.shape[0]}"
            )
        self._matrix: np.ndarray | None = None

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def ksize(self) -> int:
        return self.kernel.shape[2]

    def matrix(self) -> np.ndarray:
        """Kernel as a (k*k*in_ch, out_ch) matrix matching im2col slot order."""
        if self._matrix is None:
            self._matrix = np.ascontiguousarray(self.kernel.transpose(2, 3, 1, 0)).reshape(
                -1, self.out_channels
            )
        return self._matrix


@dataclass
class ConvLayerGrads:
    kernel: np.ndarray
    bias: np.ndarray


def im2col(x: np.ndarray, k: int, ws: Workspace | None = None) -> np.ndarray:
    """Unfold (H,W,C) into an (H*W, k*k*C) patch matrix under same padding.

    The gather is one strided copy from a sliding-window view — a single
    sequential pass over the destination, which beats per-offset slicing.
    """
    h, w, c = x.shape
    pad = (k - 1) // 2
    if ws is None:
        xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
        cols = np.empty((h * w, k * k * c), dtype=x.dtype)
    else:
        xp = ws.take((h + 2 * pad, w + 2 * pad, c), x.dtype)
        xp[:pad] = 0
        xp[h + pad :] = 0
        xp[pad : pad + h, :pad] = 0
        xp[pad : pad + h, w + pad :] = 0
        xp[pad : pad + h, pad : pad + w] = x
        cols = ws.take((h * w, k * k * c), x.dtype)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    np.copyto(cols.reshape(h, w, k, k, c), windows.transpose(0, 1, 3, 4, 2))
    if ws is not None:
        ws.release(xp)
    return cols


def col2im(
    dcol: np.ndarray, h: int, w: int, c: int, k: int, out: np.ndarray | None = None
) -> np.ndarray:
    """Scatter-add the adjoint of im2col back to an (H,W,C) gradient.

    The k*k accumulation passes run over row bands so each band's slice of
    dcol stays cache-resident; per output element the add order over (ky, kx)
    is unchanged, so results are bitwise identical to the unbanded loop.
    """
    pad = (k - 1) // 2
    if out is None:
        out = np.zeros((h, w, c), dtype=dcol.dtype)
    else:
        out.fill(0)
    dc = dcol.reshape(h, w, k, k, c)
    band = 32
    for b0 in range(0, h, band):
        b1 = min(b0 + band, h)
        for ky in range(k):
            dy = ky - pad
            ay0, ay1 = max(0, dy, b0), min(h, h + dy, b1)
            if ay0 >= ay1:
                continue
            for kx in range(k):
                dx = kx - pad
                ax0, ax1 = max(0, dx), min(w, w + dx)
                out[ay0:ay1, ax0:ax1] += dc[
                    ay0 - dy : ay1 - dy, ax0 - dx : ax1 - dx, ky, kx
                ]
    return out


def conv2d_forward(
    x: np.ndarray, params: ConvLayerParams, col: np.ndarray | None = None
) -> np.ndarray:
    """(H,W,C_in) -> (H,W,C_out). Pass a precomputed im2col matrix to skip unfolding."""
    if x.ndim != 3 or x.shape[2] != params.in_channels:
        raise ContractError(
            f"input shape {x.shape} incompatible with kernel {params.kernel.shape}"
        )
    h, w, _ = x.shape
    if col is None:
        col = im2col(x, params.ksize)
    out = col @ params.matrix()
    out += params.bias
    return out.reshape(h, w, params.out_channels)


def conv2d_backward(
    grad_out: np.ndarray,
    cached_input: np.ndarray,
    params: ConvLayerParams,
    col: np.ndarray | None = None,
    need_input_grad: bool = True,
) -> tuple[np.ndarray | None, ConvLayerGrads]:
    """Gradients of a scalar loss through conv2d_forward.

    grad_out must match the forward output shape; cached_input is the exact
    forward input (used to rebuild the patch matrix unless col is supplied).
    """
    if cached_input is None:
        raise ContractError("conv2d_backward needs the cached forward input")
    h, w, c_in = cached_input.shape
    if grad_out.shape != (h, w, params.out_channels):
        raise ContractError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"({h},{w},{params.out_channels})"
        )
    k = params.ksize
    if col is None:
        col = im2col(cached_input, k)
    gflat = grad_out.reshape(h * w, params.out_channels)
    gmat = col.T @ gflat  # (k*k*C_in, C_out)
    gkernel = np.ascontiguousarray(
        gmat.reshape(k, k, c_in, params.out_channels).transpose(3, 2, 0, 1)
    )
    gbias = gflat.sum(axis=0)
    grad_input = None
    if need_input_grad:
        dcol = gflat @ params.matrix().T
        grad_input = col2im(dcol, h, w, c_in, k)
    return grad_input, ConvLayerGrads(kernel=gkernel, bias=gbias)


def relu(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    return np.maximum(x, 0, out=out)


def relu_backward(grad_out: np.ndarray, cached_input: np.ndarray) -> np.ndarray:
    """Pass gradient where the forward input was strictly positive (0 at the kink)."""
    return grad_out * (cached_input > 0)


def softmax_lastdim(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis; each slice sums to 1."""
    flat = logits.reshape(-1, logits.shape[-1])
    z = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(z, out=z)
    e /= e.sum(axis=1, keepdims=True)
    return e.reshape(logits.shape)


def log_softmax_lastdim(logits: np.ndarray) -> np.ndarray:
    flat = logits.reshape(-1, logits.shape[-1])
    z = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    z -= lse
    return z.reshape(logits.shape)


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators, one pair per parameter tensor."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_adam(params: list[np.ndarray], lr: float = 0.001) -> AdamState:
    state = AdamState(lr=lr)
    state.m = [np.zeros_like(p) for p in params]
    state.v = [np.zeros_like(p) for p in params]
    return state


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> list[np.ndarray]:
    """One Adam update; returns new parameter arrays and advances state in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ContractError(f"grad shape {g.shape} != param shape {p.shape}")
        m = state.m[i]
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        mhat = m / bc1
        vhat = v / bc2
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out


def assert_finite(x: np.ndarray, what: str = "tensor") -> None:
    if not np.isfinite(x).all():
        raise ContractError(f"{what} contains non-finite values")
