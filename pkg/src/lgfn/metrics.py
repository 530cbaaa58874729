"""Luma-channel PSNR/SSIM with two-level (per-scene, then per-dataset) averaging,
plus the classical interpolation baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .autodiff import Tensor, no_grad
from .errors import InvalidInputError, ShapeError
from .lightfield import LightField

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# widely published five-dataset benchmark averages for the x4 interpolation
# baselines ("PSNR / SSIM"), kept for manual comparison in reports
REFERENCE_BASELINES_X4 = {
    "bilinear": (26.95, 0.8566),
    "bicubic": (27.58, 0.8701),
}


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 100 dB so aggregation stays finite."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr operands differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / mse))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), dynamic range 1.

    The mean is taken over valid window positions only (no padding).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim operands differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise InvalidInputError(f"ssim expects 2D images, got {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise InvalidInputError(
            f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    win = K.gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = K.window_filter_valid(a, win)
    mu_b = K.window_filter_valid(b, win)
    var_a = K.window_filter_valid(a * a, win) - mu_a * mu_a
    var_b = K.window_filter_valid(b * b, win) - mu_b * mu_b
    cov = K.window_filter_valid(a * b, win) - mu_a * mu_b
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class SceneScore:
    scene_id: str
    psnr: float  # dB, averaged over all sub-aperture images
    ssim: float


@dataclass
class DatasetReport:
    scenes: list[SceneScore]
    psnr: float
    ssim: float
    notes: str = (
        "per-scene mean over all sub-aperture images, then unweighted mean over "
        "scenes; PSNR capped at 100 dB; no border cropping; SSIM valid-window mean"
    )

    def to_dict(self) -> dict:
        return {
            "scenes": [
                {"scene": s.scene_id, "psnr": s.psnr, "ssim": s.ssim}
                for s in self.scenes
            ],
            "psnr": self.psnr,
            "ssim": self.ssim,
            "notes": self.notes,
        }

    def table(self) -> str:
        lines = [f"{'scene':<24} PSNR / SSIM"]
        for s in self.scenes:
            lines.append(f"{s.scene_id:<24} {s.psnr:.2f} / {s.ssim:.4f}")
        lines.append(f"{'average':<24} {self.psnr:.2f} / {self.ssim:.4f}")
        return "\n".join(lines)


def scene_score(sr: LightField, hr: LightField, scene_id: str = "") -> SceneScore:
    if sr.C != 1 or hr.C != 1:
        raise InvalidInputError("metrics run on luma fields; convert color first")
    if sr.data.shape != hr.data.shape:
        raise InvalidInputError(
            f"scene shapes differ: {sr.data.shape} vs {hr.data.shape}"
        )
    ps, ss = [], []
    for u in range(sr.U):
        for v in range(sr.V):
            ps.append(psnr(sr.data[u, v, 0], hr.data[u, v, 0]))
            ss.append(ssim(sr.data[u, v, 0], hr.data[u, v, 0]))
    return SceneScore(scene_id, float(np.mean(ps)), float(np.mean(ss)))


def evaluate(sr_scenes: list[LightField], hr_scenes: list[LightField],
             scene_ids: list[str] | None = None) -> DatasetReport:
    """Two-level averaging: over a scene's views, then over scenes."""
    if len(sr_scenes) != len(hr_scenes) or not sr_scenes:
        raise InvalidInputError(
            f"scene lists must match and be non-empty: {len(sr_scenes)} vs {len(hr_scenes)}"
        )
    if scene_ids is None:
        scene_ids = [f"scene{i}" for i in range(len(sr_scenes))]
    scores = [
        scene_score(sr, hr, sid)
        for sr, hr, sid in zip(sr_scenes, hr_scenes, scene_ids)
    ]
    return DatasetReport(
        scenes=scores,
        psnr=float(np.mean([s.psnr for s in scores])),
        ssim=float(np.mean([s.ssim for s in scores])),
    )


def baseline_sr(lr: LightField, s: int, mode: str) -> LightField:
    """Per-view interpolation upscaling (the classical baselines)."""
    u, v, c, h, w = lr.data.shape
    with no_grad():
        flat = Tensor(lr.data.reshape(u * v * c, h, w).astype(np.float64))
        out = K.resize(flat, float(s), mode).data
    return LightField(out.reshape(u, v, c, s * h, s * w), clamp=True)
