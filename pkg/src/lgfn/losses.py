"""Training losses: mean-absolute error and the spectral Charbonnier term."""

from __future__ import annotations

from . import autodiff as ad
from . import kernels as K
from .autodiff import Tensor
from .errors import ShapeError

CHARBONNIER_EPS = 1e-3
W_L1 = 0.01
W_FFT = 1.0


def _check_shapes(sr: Tensor, hr: Tensor):
    if sr.data.shape != hr.data.shape:
        raise ShapeError(f"loss operands differ: {sr.data.shape} vs {hr.data.shape}")


def l1_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    _check_shapes(sr, hr)
    return ad.mean(ad.abs_(ad.sub(sr, hr)))


def fft_charbonnier_loss(sr: Tensor, hr: Tensor, eps: float = CHARBONNIER_EPS) -> Tensor:
    """Charbonnier penalty on the spectral difference.

    The unnormalized forward DFT runs over the trailing two axes per
    view/channel; the loss is the mean over all bins of
    sqrt(Re^2 + Im^2 + eps^2), so identical inputs score exactly eps.
    """
    _check_shapes(sr, hr)
    diff = K.fft2d(ad.sub(sr, hr))  # DFT is linear: FFT(sr) - FFT(hr)
    mag2 = ad.add(ad.mul(diff.real, diff.real), ad.mul(diff.imag, diff.imag))
    return ad.mean(ad.sqrt(ad.add(mag2, eps * eps)))


def combined_loss(sr: Tensor, hr: Tensor, w_l1: float = W_L1, w_fft: float = W_FFT,
                  eps: float = CHARBONNIER_EPS) -> Tensor:
    return ad.add(
        ad.mul(l1_loss(sr, hr), w_l1),
        ad.mul(fft_charbonnier_loss(sr, hr, eps), w_fft),
    )
