"""Differentiable array kernels: convolution, pooling, resampling, FFT.

Convolutions run as im2col + batched matmul; their backward rules scatter
through the same window geometry, so forward and backward share one index
convention.  Resampling is expressed with dense per-axis interpolation
matrices (half-pixel centers; Keys a=-0.5 cubic), which makes the operator
exactly linear and gives the transpose backward for free.

A module-level multiply counter can be enabled around a forward pass to
tally the exact number of multiply-accumulates the convolutions perform;
the cost analyzer is validated against it.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from .autodiff import KINK_MARGINS, Tensor, accumulate, make_op
from .errors import InvalidSpecError, ShapeError


class OpCounter:
    """Tally of convolution multiply-accumulates executed while enabled."""

    __slots__ = ("enabled", "macs")

    def __init__(self):
        self.enabled = False
        self.macs = 0

    def reset(self):
        self.macs = 0


MAC_COUNTER = OpCounter()


@contextmanager
def count_macs():
    MAC_COUNTER.reset()
    MAC_COUNTER.enabled = True
    try:
        yield MAC_COUNTER
    finally:
        MAC_COUNTER.enabled = False


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2D convolution; padding defaults to "same" for stride 1."""

    kernel_h: int
    kernel_w: int
    stride: int = 1
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise InvalidSpecError("kernel extents must be >= 1")
        if self.stride < 1 or self.dilation < 1 or self.groups < 1:
            raise InvalidSpecError("stride, dilation and groups must be >= 1")

    @property
    def pad_h(self) -> int:
        return self.dilation * (self.kernel_h - 1) // 2

    @property
    def pad_w(self) -> int:
        return self.dilation * (self.kernel_w - 1) // 2

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        ho = (h + 2 * self.pad_h - self.dilation * (self.kernel_h - 1) - 1) // self.stride + 1
        wo = (w + 2 * self.pad_w - self.dilation * (self.kernel_w - 1) - 1) // self.stride + 1
        return ho, wo


def _conv_windows(xp: np.ndarray, kh, kw, stride, dilation, ho, wo) -> np.ndarray:
    n, c = xp.shape[:2]
    s0, s1, s2, s3 = xp.strides
    return as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(s0, s1, s2 * stride, s3 * stride, s2 * dilation, s3 * dilation),
    )


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """Grouped/dilated 2D convolution over [N, Cin, H, W]."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be 4D, got shape {x.data.shape}")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d weights must be 4D, got shape {w.data.shape}")
    n, cin, h, wdt = x.data.shape
    cout, cin_g, kh, kw = w.data.shape
    g = spec.groups
    if kh != spec.kernel_h or kw != spec.kernel_w:
        raise ShapeError(f"weight kernel {kh}x{kw} does not match spec "
                         f"{spec.kernel_h}x{spec.kernel_w}")
    if cin % g or cout % g:
        raise ShapeError(f"groups={g} must divide Cin={cin} and Cout={cout}")
    if cin_g != cin // g:
        raise ShapeError(f"weights expect Cin/groups={cin_g}, input has {cin // g}")
    if b is not None and b.data.shape != (cout,):
        raise ShapeError(f"bias shape {b.data.shape} != ({cout},)")

    ph, pw = spec.pad_h, spec.pad_w
    ho, wo = spec.out_size(h, wdt)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {h}x{wdt}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    windows = _conv_windows(xp, kh, kw, spec.stride, spec.dilation, ho, wo)
    # [g, Cin/g*kh*kw, N*Ho*Wo]
    cols = (
        windows.reshape(n, g, cin_g, ho, wo, kh, kw)
        .transpose(1, 2, 5, 6, 0, 3, 4)
        .reshape(g, cin_g * kh * kw, n * ho * wo)
    )
    wmat = w.data.reshape(g, cout // g, cin_g * kh * kw)
    out = np.matmul(wmat, cols)  # [g, Cout/g, N*Ho*Wo]
    out = out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    if b is not None:
        out = out + b.data[None, :, None, None]

    if MAC_COUNTER.enabled:
        MAC_COUNTER.macs += n * cout * ho * wo * cin_g * kh * kw

    parents = (x, w) if b is None else (x, w, b)

    def bw(gout):
        go = np.ascontiguousarray(gout.transpose(1, 0, 2, 3)).reshape(
            g, cout // g, n * ho * wo
        )
        if b is not None and b.requires_grad:
            accumulate(b, gout.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            gw = np.matmul(go, cols.transpose(0, 2, 1))
            accumulate(w, gw.reshape(w.data.shape))
        if x.requires_grad:
            gcols = np.matmul(wmat.transpose(0, 2, 1), go)
            gwin = (
                gcols.reshape(g, cin_g, kh, kw, n, ho, wo)
                .transpose(4, 0, 1, 2, 3, 5, 6)
                .reshape(n, cin, kh, kw, ho, wo)
            )
            gxp = np.zeros_like(xp)
            st, dl = spec.stride, spec.dilation
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :,
                        :,
                        i * dl : i * dl + st * ho : st,
                        j * dl : j * dl + st * wo : st,
                    ] += gwin[:, :, i, j]
            gx = gxp[:, :, ph : ph + h, pw : pw + wdt] if (ph or pw) else gxp
            accumulate(x, gx)

    return make_op(out, parents, bw)


def conv3d_1xkxk(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """Depth-preserving 3D convolution with a 1 x k x k kernel.

    Equivalent to running conv2d with shared weights on each depth slice of
    [N, C, D, H, W]; implemented exactly by that reduction.
    """
    if x.data.ndim != 5:
        raise ShapeError(f"conv3d_1xkxk input must be 5D, got shape {x.data.shape}")
    from .autodiff import reshape, transpose

    n, c, d, h, wdt = x.data.shape
    merged = reshape(transpose(x, (0, 2, 1, 3, 4)), (n * d, c, h, wdt))
    out = conv2d(merged, w, b, spec)
    cout = out.data.shape[1]
    ho, wo = out.data.shape[2], out.data.shape[3]
    return transpose(reshape(out, (n, d, cout, ho, wo)), (0, 2, 1, 3, 4))


def pool2d(x: Tensor, kind: str, kernel: int, stride: int) -> Tensor:
    """Max/average pooling with floor output sizing (no implicit padding)."""
    if kind not in ("max", "avg"):
        raise InvalidSpecError(f"unknown pooling kind {kind!r}")
    if kernel < 1 or stride < 1:
        raise InvalidSpecError("pooling kernel and stride must be >= 1")
    if x.data.ndim != 4:
        raise ShapeError(f"pool2d input must be 4D, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    if kernel > h or kernel > w:
        raise InvalidSpecError(f"pooling kernel {kernel} exceeds input {h}x{w}")
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    windows = _conv_windows(x.data, kernel, kernel, stride, 1, ho, wo)
    flat = windows.reshape(n, c, ho, wo, kernel * kernel)

    if kind == "max":
        idx = np.argmax(flat, axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        if KINK_MARGINS.enabled and flat.shape[-1] > 1:
            top2 = np.partition(flat, flat.shape[-1] - 2, axis=-1)[..., -2:]
            KINK_MARGINS.note_tie(np.min(top2[..., 1] - top2[..., 0]))
    else:
        out = flat.mean(axis=-1)

    def bw(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        if kind == "max":
            for t in range(kernel * kernel):
                mask = idx == t
                if not mask.any():
                    continue
                i, j = divmod(t, kernel)
                gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                    g * mask
                )
        else:
            share = g / (kernel * kernel)
            for t in range(kernel * kernel):
                i, j = divmod(t, kernel)
                gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += share
        accumulate(x, gx)

    return make_op(np.ascontiguousarray(out), (x,), bw)


def _adaptive_bins(in_len: int, out_len: int) -> list[tuple[int, int]]:
    return [
        ((i * in_len) // out_len, -(-((i + 1) * in_len) // out_len))
        for i in range(out_len)
    ]


def adaptive_pool2d(x: Tensor, kind: str, out_h: int, out_w: int) -> Tensor:
    """Adaptive max/average pooling to a fixed output grid."""
    if kind not in ("max", "avg"):
        raise InvalidSpecError(f"unknown pooling kind {kind!r}")
    if out_h < 1 or out_w < 1:
        raise InvalidSpecError("adaptive pooling output dims must be >= 1")
    if x.data.ndim != 4:
        raise ShapeError(f"adaptive_pool2d input must be 4D, got {x.data.shape}")
    n, c, h, w = x.data.shape
    if out_h > h or out_w > w:
        raise InvalidSpecError(
            f"adaptive output {out_h}x{out_w} exceeds input {h}x{w}"
        )
    rows = _adaptive_bins(h, out_h)
    cols = _adaptive_bins(w, out_w)
    out = np.empty((n, c, out_h, out_w), dtype=x.data.dtype)
    argmax = {} if kind == "max" else None
    for oi, (r0, r1) in enumerate(rows):
        for oj, (c0, c1) in enumerate(cols):
            slab = x.data[:, :, r0:r1, c0:c1].reshape(n, c, -1)
            if kind == "max":
                idx = np.argmax(slab, axis=-1)
                argmax[(oi, oj)] = idx
                out[:, :, oi, oj] = np.take_along_axis(slab, idx[..., None], -1)[..., 0]
                if KINK_MARGINS.enabled and slab.shape[-1] > 1:
                    top2 = np.partition(slab, slab.shape[-1] - 2, axis=-1)[..., -2:]
                    KINK_MARGINS.note_tie(np.min(top2[..., 1] - top2[..., 0]))
            else:
                out[:, :, oi, oj] = slab.mean(axis=-1)

    def bw(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        for oi, (r0, r1) in enumerate(rows):
            for oj, (c0, c1) in enumerate(cols):
                if kind == "max":
                    idx = argmax[(oi, oj)]
                    slab = np.zeros((n, c, (r1 - r0) * (c1 - c0)), dtype=x.data.dtype)
                    np.put_along_axis(slab, idx[..., None], g[:, :, oi, oj][..., None], -1)
                    gx[:, :, r0:r1, c0:c1] += slab.reshape(n, c, r1 - r0, c1 - c0)
                else:
                    area = (r1 - r0) * (c1 - c0)
                    gx[:, :, r0:r1, c0:c1] += (g[:, :, oi, oj] / area)[..., None, None]
        accumulate(x, gx)

    return make_op(out, (x,), bw)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: [N, C*r^2, H, W] -> [N, C, r*H, r*W]."""
    if r < 1:
        raise InvalidSpecError("shuffle factor must be >= 1")
    if x.data.ndim != 4:
        raise ShapeError(f"pixel_shuffle input must be 4D, got {x.data.shape}")
    n, crr, h, w = x.data.shape
    if crr % (r * r):
        raise InvalidSpecError(f"channels {crr} not divisible by r^2={r * r}")
    from .autodiff import reshape, transpose

    c = crr // (r * r)
    t = reshape(x, (n, c, r, r, h, w))
    t = transpose(t, (0, 1, 4, 2, 5, 3))  # [N, C, H, r, W, r]
    return reshape(t, (n, c, h * r, w * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth inverse of :func:`pixel_shuffle`."""
    if r < 1:
        raise InvalidSpecError("shuffle factor must be >= 1")
    if x.data.ndim != 4:
        raise ShapeError(f"pixel_unshuffle input must be 4D, got {x.data.shape}")
    n, c, hr, wr = x.data.shape
    if hr % r or wr % r:
        raise InvalidSpecError(f"spatial extents {hr}x{wr} not divisible by r={r}")
    from .autodiff import reshape, transpose

    h, w = hr // r, wr // r
    t = reshape(x, (n, c, h, r, w, r))
    t = transpose(t, (0, 1, 3, 5, 2, 4))  # [N, C, r, r, H, W]
    return reshape(t, (n, c * r * r, h, w))


# ---------------------------------------------------------------------------
# resampling


def _cubic_keys(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    near = (a + 2) * at3 - (a + 3) * at2 + 1
    far = a * at3 - 5 * a * at2 + 8 * a * at - 4 * a
    return np.where(at <= 1, near, np.where(at < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, mode: str, dtype=np.float64) -> np.ndarray:
    """Dense 1D interpolation operator [out_len, in_len], half-pixel centers.

    Edge taps clamp-replicate; rows are normalized so constants are preserved.
    """
    m = np.zeros((out_len, in_len), dtype=np.float64)
    src = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    base = np.floor(src).astype(int)
    t = src - base
    if mode == "bilinear":
        offsets = [0, 1]
        weights = [1.0 - t, t]
    elif mode == "bicubic":
        offsets = [-1, 0, 1, 2]
        weights = [_cubic_keys(t + 1), _cubic_keys(t), _cubic_keys(1 - t), _cubic_keys(2 - t)]
    else:
        raise InvalidSpecError(f"unknown resize mode {mode!r}")
    for off, wv in zip(offsets, weights):
        idx = np.clip(base + off, 0, in_len - 1)
        np.add.at(m, (np.arange(out_len), idx), wv)
    m /= m.sum(axis=1, keepdims=True)
    return m.astype(dtype)


def resize(x: Tensor, scale: float, mode: str = "bilinear") -> Tensor:
    """Separable resampling of the trailing two axes by a positive factor."""
    if scale <= 0:
        raise InvalidSpecError(f"resize scale must be positive, got {scale}")
    if x.data.ndim < 2:
        raise ShapeError("resize input needs at least two axes")
    h, w = x.data.shape[-2], x.data.shape[-1]
    ho = int(round(h * scale))
    wo = int(round(w * scale))
    if ho < 1 or wo < 1:
        raise InvalidSpecError(f"resize output {ho}x{wo} would be empty")
    mh = resize_matrix(h, ho, mode, x.data.dtype)
    mw = resize_matrix(w, wo, mode, x.data.dtype)
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def bw(g):
        if x.requires_grad:
            accumulate(x, np.matmul(np.matmul(mh.T, g), mw))

    return make_op(out, (x,), bw)


# ---------------------------------------------------------------------------
# Fourier transform


@dataclass
class ComplexTensor:
    """Real/imaginary pair with identical shapes."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.data.shape != self.imag.data.shape:
            raise ShapeError("real and imaginary parts must share a shape")


def fft2d(x: Tensor) -> ComplexTensor:
    """Unnormalized forward 2D DFT over the trailing two axes."""
    if x.data.ndim < 2:
        raise ShapeError("fft2d input needs at least two axes")
    h, w = x.data.shape[-2], x.data.shape[-1]
    spec = np.fft.fft2(x.data, axes=(-2, -1))
    scale = float(h * w)

    def bw_real(g):
        if x.requires_grad:
            accumulate(x, (np.fft.ifft2(g, axes=(-2, -1)).real * scale).astype(x.data.dtype))

    def bw_imag(g):
        if x.requires_grad:
            accumulate(x, (np.fft.ifft2(1j * g, axes=(-2, -1)).real * scale).astype(x.data.dtype))

    re = make_op(np.ascontiguousarray(spec.real).astype(x.data.dtype), (x,), bw_real)
    im = make_op(np.ascontiguousarray(spec.imag).astype(x.data.dtype), (x,), bw_imag)
    return ComplexTensor(re, im)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 2D Gaussian window (used by the structural-similarity metric)."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def window_filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Valid-mode correlation of a 2D image with a small window."""
    k = win.shape[0]
    sw = sliding_window_view(img, (k, k))
    return np.tensordot(sw, win, axes=([2, 3], [0, 1]))
