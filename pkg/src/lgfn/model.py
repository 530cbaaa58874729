"""The super-resolution network: config, parameters, forward pass, checkpoints.

Architecture: a shallow 1x3x3 convolution lifts the sub-aperture stack to C
feature channels; seven local/global blocks then each run two directional
passes (the angular axis folded into the matching spatial axis) of a
double-gated convolution stage followed by spatial/channel attention; a
1x3x3 fusion convolution and a pixel-shuffle upsampler produce the residual
that is added to a bilinear upscale of the input.

Every learnable tensor is declared once in :func:`conv_defs`; initialization,
parameter counting, checkpoint layout and the forward pass all consume that
single table.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels as K
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, ShapeError
from .lightfield import LightField

CKPT_MAGIC = b"LGFN"
CKPT_VERSION = 1

# fixed attention geometry: stride-2 depthwise 3x3 + 2x2 max pool (1/4 total),
# restored by bilinear upsampling; large-kernel stack = dw5 + dw7(dil 3) + pw
ESAM_DOWNSCALE = 4
LKA_DW_KERNEL = 5
LKA_DIL_KERNEL = 7
LKA_DILATION = 3


@dataclass
class LgfnConfig:
    channels: int = 64
    num_lgfm: int = 7
    scale: int = 4
    angular: int = 5
    dgce_expansion: float = 2.5
    esam_reduction: int = 4
    attention_mode: str = "parallel"
    enable_dgce: bool = True
    enable_esam: bool = True
    enable_ecam: bool = True
    direction_schedule: tuple[str, ...] | None = None

    def schedule(self) -> tuple[str, ...]:
        if self.direction_schedule is not None:
            return tuple(self.direction_schedule)
        return tuple("h" if i % 2 == 0 else "v" for i in range(self.num_lgfm))

    @property
    def dgce_hidden(self) -> int:
        return int(round(self.channels * self.dgce_expansion))

    @property
    def esam_channels(self) -> int:
        return self.channels // self.esam_reduction

    def validate(self):
        if self.channels < 1 or self.num_lgfm < 1:
            raise ConfigError("channels and num_lgfm must be >= 1")
        if self.scale not in (2, 4):
            raise ConfigError(f"scale must be 2 or 4, got {self.scale}")
        if self.angular < 1:
            raise ConfigError("angular extent must be >= 1")
        if self.attention_mode not in ("parallel", "cascade"):
            raise ConfigError(f"unknown attention_mode {self.attention_mode!r}")
        hidden = self.channels * self.dgce_expansion
        if abs(hidden - round(hidden)) > 1e-9 or round(hidden) % 2:
            raise ConfigError(
                f"channels*dgce_expansion must be an even integer, got {hidden}"
            )
        if self.enable_esam and self.channels % self.esam_reduction:
            raise ConfigError(
                f"channels={self.channels} not divisible by esam_reduction="
                f"{self.esam_reduction}"
            )
        if self.enable_ecam and self.channels < 3:
            raise ConfigError("channel attention needs at least 3 channels")
        sched = self.schedule()
        if len(sched) != self.num_lgfm or any(d not in ("h", "v") for d in sched):
            raise ConfigError(f"direction schedule {sched} invalid for {self.num_lgfm} blocks")
        return self


@dataclass(frozen=True)
class ConvDef:
    """One convolution's geometry; the whole model is a list of these."""

    name: str
    group: str
    cin: int
    cout: int
    kh: int
    kw: int
    stride: int = 1
    dilation: int = 1
    groups: int = 1

    @property
    def spec(self) -> K.ConvSpec:
        return K.ConvSpec(self.kh, self.kw, stride=self.stride,
                          dilation=self.dilation, groups=self.groups)

    @property
    def param_count(self) -> int:
        return self.cout * (self.cin // self.groups) * self.kh * self.kw + self.cout


def block_directions(cfg: LgfnConfig, i: int) -> tuple[str, str]:
    """Each block runs its scheduled leading direction, then the other."""
    lead = cfg.schedule()[i]
    return (lead, "v" if lead == "h" else "h")


def conv_defs(cfg: LgfnConfig) -> list[ConvDef]:
    cfg.validate()
    C = cfg.channels
    hid = cfg.dgce_hidden
    half = hid // 2
    cr = cfg.esam_channels if cfg.enable_esam else 0
    defs = [ConvDef("shallow.conv", "shallow", 1, C, 3, 3)]
    for i in range(cfg.num_lgfm):
        for d in block_directions(cfg, i):
            p = f"lgfm{i}.{d}."
            if cfg.enable_dgce:
                defs += [
                    ConvDef(p + "dgce.expand", "dgce", C, hid, 1, 1),
                    ConvDef(p + "dgce.dw_a", "dgce", half, half, 3, 3, groups=half),
                    ConvDef(p + "dgce.dw_b", "dgce", half, half, 3, 3, groups=half),
                    ConvDef(p + "dgce.fuse", "dgce", half, C, 1, 1),
                    ConvDef(p + "dgce.out", "dgce", C, C, 1, 1),
                ]
            if cfg.enable_esam:
                defs += [
                    ConvDef(p + "esam.reduce", "esam", C, cr, 1, 1),
                    ConvDef(p + "esam.down", "esam", cr, cr, 3, 3, stride=2, groups=cr),
                    ConvDef(p + "esam.lka_dw", "esam", cr, cr,
                            LKA_DW_KERNEL, LKA_DW_KERNEL, groups=cr),
                    ConvDef(p + "esam.lka_dil", "esam", cr, cr,
                            LKA_DIL_KERNEL, LKA_DIL_KERNEL,
                            dilation=LKA_DILATION, groups=cr),
                    ConvDef(p + "esam.lka_pw", "esam", cr, cr, 1, 1),
                    ConvDef(p + "esam.expand", "esam", cr, C, 1, 1),
                ]
            if cfg.enable_ecam:
                defs += [
                    ConvDef(p + "ecam.conv_max", "ecam", 1, 1, 1, 3),
                    ConvDef(p + "ecam.conv_avg", "ecam", 1, 1, 1, 3),
                ]
    defs += [
        ConvDef("fusion.conv", "fusion", C, C, 3, 3),
        ConvDef("up.expand", "upsampler", C, C * cfg.scale**2, 1, 1),
        ConvDef("up.final", "upsampler", C, 1, 3, 3),
    ]
    return defs


class ParamStore:
    """Ordered name -> Tensor map of every weight and bias."""

    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def total_scalars(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad = None

    def astype(self, dtype) -> "ParamStore":
        return ParamStore(
            {n: Tensor(t.data.astype(dtype), requires_grad=True)
             for n, t in self._tensors.items()}
        )

    def copy(self) -> "ParamStore":
        return ParamStore(
            {n: Tensor(t.data.copy(), requires_grad=t.requires_grad)
             for n, t in self._tensors.items()}
        )


def init_params(cfg: LgfnConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Fan-in uniform weights, zero biases; deterministic in the seed."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for d in conv_defs(cfg):
        fan_in = (d.cin // d.groups) * d.kh * d.kw
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(d.cout, d.cin // d.groups, d.kh, d.kw))
        tensors[d.name + ".w"] = Tensor(w.astype(dtype), requires_grad=True)
        tensors[d.name + ".b"] = Tensor(np.zeros(d.cout, dtype=dtype), requires_grad=True)
    return ParamStore(tensors)


class ForwardTrace:
    """Named intermediate activations captured during a forward pass."""

    def __init__(self):
        self.entries: dict[str, np.ndarray] = {}

    def add(self, key: str, t: Tensor):
        if key in self.entries:
            raise KeyError(f"trace key {key!r} recorded twice")
        self.entries[key] = t.data.copy()

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __getitem__(self, key: str) -> np.ndarray:
        return self.entries[key]

    def keys(self):
        return self.entries.keys()


# ---------------------------------------------------------------------------
# forward-pass plumbing


def _conv(p: ParamStore, name: str, x5: Tensor, spec: K.ConvSpec) -> Tensor:
    return K.conv3d_1xkxk(x5, p[name + ".w"], p[name + ".b"], spec)


def _merge_depth(x5: Tensor) -> Tensor:
    n, c, d, h, w = x5.data.shape
    return ad.reshape(ad.transpose(x5, (0, 2, 1, 3, 4)), (n * d, c, h, w))


def _unmerge_depth(x4: Tensor, n: int, d: int) -> Tensor:
    nd, c, h, w = x4.data.shape
    return ad.transpose(ad.reshape(x4, (n, d, c, h, w)), (0, 2, 1, 3, 4))


def fold_angular(x5: Tensor, U: int, V: int, direction: str) -> Tensor:
    """[1,C,U*V,H,W] -> [1,C,U,H,V*W] (h) or [1,C,V,U*H,W] (v)."""
    _, c, a, h, w = x5.data.shape
    if a != U * V:
        raise ShapeError(f"angular extent {a} != U*V = {U * V}")
    x6 = ad.reshape(x5, (1, c, U, V, h, w))
    if direction == "h":
        x6 = ad.transpose(x6, (0, 1, 2, 4, 3, 5))  # [1,C,U,H,V,W]
        return ad.reshape(x6, (1, c, U, h, V * w))
    if direction == "v":
        x6 = ad.transpose(x6, (0, 1, 3, 2, 4, 5))  # [1,C,V,U,H,W]
        return ad.reshape(x6, (1, c, V, U * h, w))
    raise ShapeError(f"unknown direction {direction!r}")


def unfold_angular(xf: Tensor, U: int, V: int, direction: str) -> Tensor:
    """Exact inverse of :func:`fold_angular`."""
    _, c, d, hf, wf = xf.data.shape
    if direction == "h":
        h, w = hf, wf // V
        x6 = ad.reshape(xf, (1, c, U, h, V, w))
        x6 = ad.transpose(x6, (0, 1, 2, 4, 3, 5))  # [1,C,U,V,H,W]
    elif direction == "v":
        h, w = hf // U, wf
        x6 = ad.reshape(xf, (1, c, V, U, h, w))
        x6 = ad.transpose(x6, (0, 1, 3, 2, 4, 5))
    else:
        raise ShapeError(f"unknown direction {direction!r}")
    return ad.reshape(x6, (1, c, U * V, h, w))


def dgce_forward(x: Tensor, p: ParamStore, cfg: LgfnConfig,
                 prefix: str = "", trace: ForwardTrace | None = None) -> Tensor:
    """Double-gated convolution stage on a folded [1,C,A,Hf,Wf] tensor."""
    if x.data.shape[1] != cfg.channels:
        raise ShapeError(f"expected {cfg.channels} channels, got {x.data.shape[1]}")
    half = cfg.dgce_hidden // 2
    one = K.ConvSpec(1, 1)
    expanded = _conv(p, prefix + "dgce.expand", x, one)
    f21 = ad.narrow(expanded, 1, 0, half)
    f22 = ad.narrow(expanded, 1, half, half)
    dw = K.ConvSpec(3, 3, groups=half)
    gate_a = ad.gelu(_conv(p, prefix + "dgce.dw_a", f21, dw))
    gate_b = ad.gelu(_conv(p, prefix + "dgce.dw_b", f22, dw))
    f23 = ad.add(ad.mul(gate_a, f22), ad.mul(gate_b, f21))
    fused = _conv(p, prefix + "dgce.fuse", f23, one)
    f24 = _conv(p, prefix + "dgce.out", ad.add(x, fused), one)
    if trace is not None:
        trace.add(prefix + "F_21", f21)
        trace.add(prefix + "F_22", f22)
        trace.add(prefix + "F_23", f23)
        trace.add(prefix + "F_24", f24)
    return f24


def esam_forward(x: Tensor, p: ParamStore, cfg: LgfnConfig,
                 prefix: str = "", trace: ForwardTrace | None = None) -> Tensor:
    """Reduced-channel, downsampled large-kernel spatial gate on [1,C,A,Hf,Wf]."""
    _, c, d, hf, wf = x.data.shape
    if hf % ESAM_DOWNSCALE or wf % ESAM_DOWNSCALE:
        raise ShapeError(
            f"spatial extents {hf}x{wf} must be divisible by {ESAM_DOWNSCALE} "
            "for the attention downscale"
        )
    cr = cfg.esam_channels
    one = K.ConvSpec(1, 1)
    f25 = _conv(p, prefix + "esam.reduce", x, one)
    down = _conv(p, prefix + "esam.down", f25, K.ConvSpec(3, 3, stride=2, groups=cr))
    down4 = _merge_depth(down)
    f26 = _unmerge_depth(K.pool2d(down4, "max", 2, 2), 1, d)
    lka = _conv(p, prefix + "esam.lka_dw", f26,
                K.ConvSpec(LKA_DW_KERNEL, LKA_DW_KERNEL, groups=cr))
    lka = _conv(p, prefix + "esam.lka_dil", lka,
                K.ConvSpec(LKA_DIL_KERNEL, LKA_DIL_KERNEL,
                           dilation=LKA_DILATION, groups=cr))
    lka = _conv(p, prefix + "esam.lka_pw", lka, one)
    f27 = _unmerge_depth(
        K.resize(_merge_depth(lka), float(ESAM_DOWNSCALE), "bilinear"), 1, d
    )
    f28 = _conv(p, prefix + "esam.expand", ad.add(f25, f27), one)
    f29 = ad.mul(ad.sigmoid(f28), x)
    if trace is not None:
        trace.add(prefix + "F_25", f25)
        trace.add(prefix + "F_26", f26)
        trace.add(prefix + "F_27", f27)
        trace.add(prefix + "F_28", f28)
        trace.add(prefix + "F_29", f29)
    return f29


def ecam_forward(x: Tensor, p: ParamStore, cfg: LgfnConfig,
                 prefix: str = "", trace: ForwardTrace | None = None) -> Tensor:
    """Pooled-statistics channel gate: k=3 conv along the channel axis."""
    _, c, d, hf, wf = x.data.shape
    if c < 3:
        raise ConfigError("channel attention needs at least 3 channels")
    x4 = _merge_depth(x)
    spec = K.ConvSpec(1, 3)  # slides over channels laid out on the width axis
    gates = []
    for kind, name in (("max", "ecam.conv_max"), ("avg", "ecam.conv_avg")):
        pooled = K.adaptive_pool2d(x4, kind, 1, 1)        # [D, C, 1, 1]
        lane = ad.reshape(pooled, (d, 1, 1, c))
        conved = K.conv2d(lane, p[prefix + name + ".w"], p[prefix + name + ".b"], spec)
        gates.append(conved)
    f30, f31 = gates
    gate = ad.add(ad.sigmoid(f30), ad.sigmoid(f31))
    gate5 = ad.transpose(ad.reshape(gate, (1, d, c, 1, 1)), (0, 2, 1, 3, 4))
    f32 = ad.mul(gate5, x)
    if trace is not None:
        trace.add(prefix + "F_30", f30)
        trace.add(prefix + "F_31", f31)
        trace.add(prefix + "F_32", f32)
    return f32


def _attention_stage(y: Tensor, p: ParamStore, cfg: LgfnConfig,
                     prefix: str, trace: ForwardTrace | None) -> Tensor:
    if cfg.enable_esam and cfg.enable_ecam:
        if cfg.attention_mode == "cascade":
            return ecam_forward(esam_forward(y, p, cfg, prefix, trace), p, cfg, prefix, trace)
        both = ad.add(
            esam_forward(y, p, cfg, prefix, trace),
            ecam_forward(y, p, cfg, prefix, trace),
        )
        return ad.mul(both, 0.5)
    if cfg.enable_esam:
        return esam_forward(y, p, cfg, prefix, trace)
    if cfg.enable_ecam:
        return ecam_forward(y, p, cfg, prefix, trace)
    return y


def lgfm_forward(x: Tensor, p: ParamStore, cfg: LgfnConfig, U: int, V: int,
                 index: int, direction: str,
                 trace: ForwardTrace | None = None) -> Tensor:
    """One directional pass: fold, extract, gate, unfold, local residual."""
    if not (cfg.enable_dgce or cfg.enable_esam or cfg.enable_ecam):
        return x
    prefix = f"lgfm{index}.{direction}."
    y = fold_angular(x, U, V, direction)
    if cfg.enable_dgce:
        y = dgce_forward(y, p, cfg, prefix, trace)
    y = _attention_stage(y, p, cfg, prefix, trace)
    return ad.add(x, unfold_angular(y, U, V, direction))


def forward_tensor(x0: Tensor, p: ParamStore, cfg: LgfnConfig, U: int, V: int,
                   trace: ForwardTrace | None = None) -> Tensor:
    """Full network on a [1,1,U*V,H,W] tensor; returns [1,1,U*V,sH,sW]."""
    if x0.data.ndim != 5 or x0.data.shape[0] != 1 or x0.data.shape[1] != 1:
        raise ShapeError(f"expected [1,1,A,H,W] input, got {x0.data.shape}")
    _, _, a, h, w = x0.data.shape
    if a != U * V:
        raise ShapeError(f"angular extent {a} != U*V = {U * V}")
    if cfg.enable_esam and (h % ESAM_DOWNSCALE or w % ESAM_DOWNSCALE):
        raise ShapeError(
            f"input {h}x{w} must have extents divisible by {ESAM_DOWNSCALE}"
        )
    s = cfg.scale
    k3 = K.ConvSpec(3, 3)
    f_init = _conv(p, "shallow.conv", x0, k3)
    y = f_init
    for i in range(cfg.num_lgfm):
        for d in block_directions(cfg, i):
            y = lgfm_forward(y, p, cfg, U, V, i, d, trace)
    f_1 = ad.add(y, f_init)
    f_fuse = _conv(p, "fusion.conv", f_1, k3)

    up = _conv(p, "up.expand", f_fuse, K.ConvSpec(1, 1))
    up4 = K.pixel_shuffle(_merge_depth(up), s)
    up4 = ad.leaky_relu(up4)
    out4 = K.conv2d(up4, p["up.final.w"], p["up.final.b"], k3)
    restored = _unmerge_depth(out4, 1, a)

    base4 = K.resize(_merge_depth(x0), float(s), "bilinear")
    residual = _unmerge_depth(base4, 1, a)
    f_hr = ad.add(restored, residual)
    if trace is not None:
        trace.add("F_init", f_init)
        trace.add("F_1", f_1)
        trace.add("F_fuse", f_fuse)
        trace.add("F_HR", f_hr)
    return f_hr


def lgfn_forward(lr: LightField, p: ParamStore, cfg: LgfnConfig,
                 record_trace: bool = False):
    """Super-resolve a luma light field; output is (U, V, 1, sH, sW)."""
    if lr.C != 1:
        raise ShapeError(f"the network consumes luma fields (C=1), got C={lr.C}")
    trace = ForwardTrace() if record_trace else None
    x0 = Tensor(lr.data.reshape(1, 1, lr.U * lr.V, lr.H, lr.W))
    with ad.no_grad():
        out = forward_tensor(x0, p, cfg, lr.U, lr.V, trace)
    s = cfg.scale
    data = out.data.reshape(lr.U, lr.V, 1, s * lr.H, s * lr.W)
    result = LightField(data, clamp=True)
    return (result, trace) if record_trace else result


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_save(p: ParamStore, path):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(p)))
        for name, t in p.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(t.data, dtype="<f4")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def checkpoint_load(path, cfg: LgfnConfig | None = None) -> ParamStore:
    """Read a checkpoint; with a config, validate names and shapes against it."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", raw[pos : pos + 2])
        pos += 2
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        rank = raw[pos]
        pos += 1
        shape = struct.unpack(f"<{rank}I", raw[pos : pos + 4 * rank])
        pos += 4 * rank
        n = int(np.prod(shape))
        payload = raw[pos : pos + 4 * n]
        if len(payload) != 4 * n:
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        pos += 4 * n
        data = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        tensors[name] = Tensor(data, requires_grad=True)
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    store = ParamStore(tensors)
    if cfg is not None:
        expected: list[tuple[str, tuple[int, ...]]] = []
        for d in conv_defs(cfg):
            expected.append((d.name + ".w", (d.cout, d.cin // d.groups, d.kh, d.kw)))
            expected.append((d.name + ".b", (d.cout,)))
        for name, shape in expected:
            if name not in tensors:
                raise CheckpointError(f"{path}: missing tensor {name!r} for this config")
            if tensors[name].data.shape != shape:
                raise CheckpointError(
                    f"{path}: tensor {name!r} has shape {tensors[name].data.shape}, "
                    f"config expects {shape}"
                )
        if len(tensors) != len(expected):
            extra = sorted(set(tensors) - {n for n, _ in expected})
            raise CheckpointError(f"{path}: unexpected tensor {extra[0]!r}")
    return store
