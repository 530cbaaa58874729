"""Loss values against closed forms and a naive-DFT oracle."""

import numpy as np
import pytest

from lgfn import autodiff as ad
from lgfn.autodiff import Tensor
from lgfn.errors import ShapeError
from lgfn.losses import combined_loss, fft_charbonnier_loss, l1_loss

import oracles

EPS = 1e-3


def test_l1_examples():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(2, 3, 4)))
    assert l1_loss(a, a).item() == 0.0
    b = Tensor(a.data + 1.0)
    assert l1_loss(b, a).item() == pytest.approx(1.0)
    c = Tensor(rng.normal(size=(2, 3, 4)))
    assert l1_loss(a, c).item() == pytest.approx(np.mean(np.abs(a.data - c.data)))
    with pytest.raises(ShapeError):
        l1_loss(a, Tensor(np.zeros((2, 3))))


def test_charbonnier_floor_on_identical_inputs():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(4, 4)))
    assert fft_charbonnier_loss(a, a, EPS).item() == pytest.approx(EPS, rel=1e-12)


def test_charbonnier_constant_offset_closed_form():
    rng = np.random.default_rng(2)
    h, w = 6, 5
    hr = Tensor(rng.normal(size=(h, w)))
    c = 0.3
    sr = Tensor(hr.data + c)
    # only the DC bin differs: sqrt((c*H*W)^2 + eps^2); all others contribute eps
    want = (np.sqrt((c * h * w) ** 2 + EPS**2) + (h * w - 1) * EPS) / (h * w)
    assert fft_charbonnier_loss(sr, hr, EPS).item() == pytest.approx(want, rel=1e-12)


def test_charbonnier_invariant_under_joint_circular_shift():
    rng = np.random.default_rng(3)
    sr = rng.normal(size=(8, 8))
    hr = rng.normal(size=(8, 8))
    base = fft_charbonnier_loss(Tensor(sr), Tensor(hr), EPS).item()
    for shift in ((1, 3), (4, 0)):
        s2 = np.roll(sr, shift, axis=(0, 1))
        h2 = np.roll(hr, shift, axis=(0, 1))
        shifted = fft_charbonnier_loss(Tensor(s2), Tensor(h2), EPS).item()
        assert shifted == pytest.approx(base, rel=1e-10)


def test_charbonnier_matches_naive_dft_oracle():
    rng = np.random.default_rng(4)
    sr = rng.normal(size=(5, 4))
    hr = rng.normal(size=(5, 4))
    d = oracles.dft2_naive(sr) - oracles.dft2_naive(hr)
    want = np.mean(np.sqrt(d.real**2 + d.imag**2 + EPS**2))
    got = fft_charbonnier_loss(Tensor(sr), Tensor(hr), EPS).item()
    assert got == pytest.approx(want, rel=1e-9)


def test_charbonnier_batched_views():
    rng = np.random.default_rng(5)
    sr = rng.normal(size=(2, 3, 4, 4))
    hr = rng.normal(size=(2, 3, 4, 4))
    per_view = [
        fft_charbonnier_loss(Tensor(sr[i, j]), Tensor(hr[i, j]), EPS).item()
        for i in range(2)
        for j in range(3)
    ]
    got = fft_charbonnier_loss(Tensor(sr), Tensor(hr), EPS).item()
    assert got == pytest.approx(np.mean(per_view), rel=1e-12)


def test_combined_examples_and_floor():
    rng = np.random.default_rng(6)
    a = Tensor(rng.normal(size=(4, 4)))
    assert combined_loss(a, a).item() == pytest.approx(EPS, rel=1e-12)
    b = Tensor(rng.normal(size=(4, 4)))
    # weights (0, 1) reduce to the spectral term
    assert combined_loss(a, b, w_l1=0.0, w_fft=1.0).item() == pytest.approx(
        fft_charbonnier_loss(a, b).item()
    )
    got = combined_loss(a, b).item()
    want = 0.01 * l1_loss(a, b).item() + 1.0 * fft_charbonnier_loss(a, b).item()
    assert got == pytest.approx(want, rel=1e-12)
    assert got >= 1.0 * EPS


def test_loss_gradients():
    rng = np.random.default_rng(7)
    hr = Tensor(rng.normal(size=(4, 4)))
    sr = Tensor(hr.data + rng.uniform(0.2, 0.8, size=(4, 4)), requires_grad=True)
    assert ad.gradcheck(lambda t: l1_loss(t, hr), [sr]) < 1e-6
    assert ad.gradcheck(lambda t: fft_charbonnier_loss(t, hr), [sr]) < 1e-6
    assert ad.gradcheck(lambda t: combined_loss(t, hr), [sr]) < 1e-6
