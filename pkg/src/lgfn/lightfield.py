"""Light-field containers, file formats, EPI slicing and joint augmentation.

A light field is stored as a dense [U, V, C, H, W] array with values in
[0, 1].  The ``.lf4`` container and the PGM/PPM view importer are the two
on-disk forms; both clamp to [0, 1] on ingest.

Augmentation flips/rotates the spatial and angular axes *jointly*, which is
what keeps epipolar geometry (disparity line slopes) intact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels as K
from .autodiff import Tensor, no_grad
from .errors import (
    CorruptionError,
    FormatError,
    IngestError,
    InvalidInputError,
    ShapeError,
)

LF4_MAGIC = b"LF4D"
LF4_VERSION = 1

# BT.601 limited-range luma coefficients (inputs and outputs in [0, 1])
_Y_COEF = (65.481, 128.553, 24.966)
_Y_OFFSET = 16.0


class LightField:
    """Dense sub-aperture image array [U, V, C, H, W], values in [0, 1]."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray, clamp: bool = False):
        arr = np.asarray(data)
        if arr.ndim != 5:
            raise InvalidInputError(f"light field must be 5D [U,V,C,H,W], got {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if min(arr.shape) < 1:
            raise InvalidInputError("all light-field extents must be >= 1")
        if clamp:
            arr = np.clip(arr, 0.0, 1.0)
        self.data = arr

    @property
    def U(self) -> int:
        return self.data.shape[0]

    @property
    def V(self) -> int:
        return self.data.shape[1]

    @property
    def C(self) -> int:
        return self.data.shape[2]

    @property
    def H(self) -> int:
        return self.data.shape[3]

    @property
    def W(self) -> int:
        return self.data.shape[4]

    def view(self, u: int, v: int) -> np.ndarray:
        """One sub-aperture image [C, H, W]."""
        return self.data[u, v]

    def __eq__(self, other):
        return isinstance(other, LightField) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"LightField(U={self.U}, V={self.V}, C={self.C}, H={self.H}, W={self.W})"


@dataclass
class SamplePair:
    """Aligned low/high-resolution fields related by an integer scale."""

    lr: LightField
    hr: LightField
    scale: int

    def __post_init__(self):
        if (
            self.hr.H != self.scale * self.lr.H
            or self.hr.W != self.scale * self.lr.W
            or (self.hr.U, self.hr.V, self.hr.C) != (self.lr.U, self.lr.V, self.lr.C)
        ):
            raise InvalidInputError(
                f"hr {self.hr.data.shape} is not the x{self.scale} partner of lr "
                f"{self.lr.data.shape}"
            )


@dataclass
class EpiImage:
    """2D epipolar-plane slice: [V, W] (horizontal) or [U, H] (vertical)."""

    orientation: str  # "horizontal" | "vertical"
    fixed: tuple[int, int]  # (u, h) for horizontal, (v, w) for vertical
    pixels: np.ndarray


# ---------------------------------------------------------------------------
# .lf4 container


def lf_store(lf: LightField, path):
    """Write the little-endian ``.lf4`` container (float32 payload)."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(LF4_MAGIC)
        fh.write(struct.pack("<6I", LF4_VERSION, lf.U, lf.V, lf.C, lf.H, lf.W))
        fh.write(np.ascontiguousarray(lf.data, dtype="<f4").tobytes())


def lf_load(path) -> LightField:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 28:
        raise CorruptionError(f"{path}: too short to hold an .lf4 header")
    if raw[:4] != LF4_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {LF4_MAGIC!r}")
    version, u, v, c, h, w = struct.unpack("<6I", raw[4:28])
    if version != LF4_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    count = u * v * c * h * w
    if len(raw) != 28 + 4 * count:
        raise CorruptionError(
            f"{path}: payload holds {len(raw) - 28} bytes, header promises {4 * count}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=28).reshape(u, v, c, h, w)
    return LightField(data.copy(), clamp=True)


# ---------------------------------------------------------------------------
# PGM / PPM views


def _read_pnm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise IngestError(f"{path}: not a binary PGM/PPM file")
    color = raw[:2] == b"P6"
    # header tokens with '#' comments
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise IngestError(f"{path}: only 8-bit (maxval 255) samples supported")
    channels = 3 if color else 1
    need = width * height * channels
    payload = raw[pos : pos + need]
    if len(payload) != need:
        raise IngestError(f"{path}: expected {need} sample bytes, found {len(payload)}")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return img


def write_pgm(path, img: np.ndarray):
    """Write a [H, W] array in [0, 1] as binary 8-bit PGM."""
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim != 2:
        raise InvalidInputError(f"PGM output must be 2D, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        fh.write(arr.tobytes())


def import_views(directory, U: int, V: int) -> LightField:
    """Assemble a light field from ``view_{u}_{v}.pgm`` / ``.ppm`` files."""
    directory = Path(directory)
    views = []
    shape = None
    channels = None
    for u in range(U):
        row = []
        for v in range(V):
            candidates = [directory / f"view_{u}_{v}.pgm", directory / f"view_{u}_{v}.ppm"]
            path = next((p for p in candidates if p.exists()), None)
            if path is None:
                raise IngestError(f"missing view file view_{u}_{v}.pgm/.ppm in {directory}")
            img = _read_pnm(path)
            if shape is None:
                shape = img.shape[:2]
                channels = img.shape[2]
            elif img.shape[:2] != shape or img.shape[2] != channels:
                raise IngestError(
                    f"{path.name}: dimensions {img.shape[:2]} differ from first view {shape}"
                )
            row.append(img)
        views.append(row)
    stack = np.stack([np.stack(r) for r in views])  # [U, V, H, W, C]
    data = stack.transpose(0, 1, 4, 2, 3).astype(np.float32) / 255.0
    return LightField(data, clamp=True)


# ---------------------------------------------------------------------------
# color and slicing


def rgb_to_y(lf: LightField) -> LightField:
    """BT.601 limited-range luma: Y = (65.481 R + 128.553 G + 24.966 B + 16)/255."""
    if lf.C != 3:
        raise InvalidInputError(f"rgb_to_y needs C=3, got C={lf.C}")
    r, g, b = lf.data[:, :, 0], lf.data[:, :, 1], lf.data[:, :, 2]
    y = (_Y_COEF[0] * r + _Y_COEF[1] * g + _Y_COEF[2] * b + _Y_OFFSET) / 255.0
    return LightField(y[:, :, None].astype(lf.data.dtype), clamp=True)


def extract_epi(lf: LightField, orientation: str, fixed: tuple[int, int]) -> EpiImage:
    """Slice an EPI at fixed (u, h) [horizontal] or (v, w) [vertical].

    Color fields are reduced to luma first, so the EPI is always one plane.
    """
    field = rgb_to_y(lf) if lf.C == 3 else lf
    if orientation == "horizontal":
        u, h = fixed
        if not (0 <= u < lf.U and 0 <= h < lf.H):
            raise InvalidInputError(f"fixed (u={u}, h={h}) out of range for {lf!r}")
        pixels = field.data[u, :, 0, h, :].copy()  # [V, W]
    elif orientation == "vertical":
        v, w = fixed
        if not (0 <= v < lf.V and 0 <= w < lf.W):
            raise InvalidInputError(f"fixed (v={v}, w={w}) out of range for {lf!r}")
        pixels = field.data[:, v, 0, :, w].copy()  # [U, H]
    else:
        raise InvalidInputError(f"unknown EPI orientation {orientation!r}")
    return EpiImage(orientation, tuple(fixed), pixels)


# ---------------------------------------------------------------------------
# degradation, patches, augmentation


def degrade_bicubic(hr: LightField, s: int) -> LightField:
    """Per-view bicubic downsampling by 1/s."""
    if s < 1:
        raise InvalidInputError(f"scale must be >= 1, got {s}")
    if hr.H % s or hr.W % s:
        raise InvalidInputError(f"extents {hr.H}x{hr.W} not divisible by s={s}")
    u, v, c, h, w = hr.data.shape
    with no_grad():
        flat = Tensor(hr.data.reshape(u * v * c, h, w))
        out = K.resize(flat, 1.0 / s, "bicubic").data
    return LightField(out.reshape(u, v, c, h // s, w // s), clamp=True)


def extract_patches(pair: SamplePair, lr_patch: int = 32, stride: int = 32) -> list[SamplePair]:
    """Aligned spatial crops keeping the full angular extent."""
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    if lr_patch > pair.lr.H or lr_patch > pair.lr.W:
        raise InvalidInputError(
            f"patch {lr_patch} exceeds low-resolution field {pair.lr.H}x{pair.lr.W}"
        )
    s = pair.scale
    out = []
    for y in range(0, pair.lr.H - lr_patch + 1, stride):
        for x in range(0, pair.lr.W - lr_patch + 1, stride):
            lr_crop = pair.lr.data[:, :, :, y : y + lr_patch, x : x + lr_patch]
            hr_crop = pair.hr.data[
                :, :, :, s * y : s * (y + lr_patch), s * x : s * (x + lr_patch)
            ]
            out.append(
                SamplePair(LightField(lr_crop.copy()), LightField(hr_crop.copy()), s)
            )
    return out


def patch_grid_count(extent: int, patch: int, stride: int) -> int:
    """Closed-form number of crop positions along one axis."""
    return (extent - patch) // stride + 1


def _augment_array(data: np.ndarray, code: int) -> np.ndarray:
    """Joint spatial/angular transform of a [U,V,C,H,W] array.

    bit0: horizontal flip (W and V together); bit1: vertical flip (H and U);
    bit2: 90-degree rotation of both the (H,W) and (U,V) planes.
    """
    out = data
    if code & 1:
        out = np.flip(out, axis=(4, 1))
    if code & 2:
        out = np.flip(out, axis=(3, 0))
    if code & 4:
        out = np.rot90(np.rot90(out, k=1, axes=(3, 4)), k=1, axes=(0, 1))
    return np.ascontiguousarray(out)


def augment(pair: SamplePair, code: int) -> SamplePair:
    """One of 8 joint flip/rotation variants; code 0 is the identity."""
    if not 0 <= code <= 7:
        raise InvalidInputError(f"augmentation code must be in 0..7, got {code}")
    if code & 4:
        for f in (pair.lr, pair.hr):
            if f.H != f.W or f.U != f.V:
                raise InvalidInputError(
                    "rotation requires square spatial and square angular extents, "
                    f"got {f!r}"
                )
    return SamplePair(
        LightField(_augment_array(pair.lr.data, code)),
        LightField(_augment_array(pair.hr.data, code)),
        pair.scale,
    )


def inverse_augment_code(code: int) -> int:
    """The code undoing ``code`` (the 8 codes are closed under inversion)."""
    probe = np.arange(2 * 2 * 1 * 2 * 2, dtype=np.float64).reshape(2, 2, 1, 2, 2)
    fwd = _augment_array(probe, code)
    for candidate in range(8):
        if np.array_equal(_augment_array(fwd, candidate), probe):
            return candidate
    raise RuntimeError(f"no inverse found for code {code}")  # unreachable


# ---------------------------------------------------------------------------
# feature layout


def to_feature_layout(lf: LightField) -> np.ndarray:
    """[U,V,1,H,W] luma field -> [1, U*V, H, W]; view (u,v) at slice u*V+v."""
    if lf.C != 1:
        raise InvalidInputError(f"feature layout needs C=1, got C={lf.C}")
    return np.ascontiguousarray(lf.data.reshape(1, lf.U * lf.V, lf.H, lf.W))


def from_feature_layout(arr: np.ndarray, U: int, V: int) -> LightField:
    """Inverse of :func:`to_feature_layout`."""
    if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[1] != U * V:
        raise ShapeError(f"expected [1, {U * V}, H, W], got {arr.shape}")
    return LightField(arr.reshape(U, V, 1, arr.shape[2], arr.shape[3]).copy())
