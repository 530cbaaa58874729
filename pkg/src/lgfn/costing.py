"""Closed-form parameter and FLOPs accounting.

MACs are accumulated per convolution as output elements x kernel taps x
in-channels/groups — exactly what the im2col matmul multiplies, so the
analyzer can be checked against the runtime multiply counter to the scalar.
The headline convention is FLOPs = 2 x MACs; elementwise work (activations,
adds, gates, pooling and resampling outputs) is tallied separately and
reported alongside, not folded into the headline number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ESAM_DOWNSCALE, ConvDef, LgfnConfig, block_directions, conv_defs

GROUPS = ("shallow", "dgce", "esam", "ecam", "fusion", "upsampler")


@dataclass
class CostReport:
    params_total: int
    params_by_group: dict[str, int]
    macs_total: int
    elementwise_total: int
    flops_total: int
    input_spec: dict[str, int]
    convention: str = (
        "FLOPs = 2 x MACs; MACs per conv = output elements x kernel taps x "
        "in-channels/groups; elementwise ops reported separately at 1/element"
    )

    def to_dict(self) -> dict:
        return {
            "params_total": self.params_total,
            "params_by_group": dict(self.params_by_group),
            "macs_total": self.macs_total,
            "elementwise_total": self.elementwise_total,
            "flops_total": self.flops_total,
            "input_spec": dict(self.input_spec),
            "convention": self.convention,
        }


def count_params(cfg: LgfnConfig) -> tuple[int, dict[str, int]]:
    """Closed-form per-layer counts (weights + biases), summed by group."""
    by_group = {g: 0 for g in GROUPS}
    for d in conv_defs(cfg):
        by_group[d.group] += d.param_count
    return sum(by_group.values()), by_group


def _folded_dims(U: int, V: int, H: int, W: int, direction: str) -> tuple[int, int, int]:
    return (U, H, V * W) if direction == "h" else (V, U * H, W)


def _strided3_out(n: int) -> int:
    # stride-2 3x3 conv with same padding 1
    return (n - 1) // 2 + 1


def count_flops(cfg: LgfnConfig, U: int | None = None, V: int | None = None,
                H: int = 32, W: int = 32) -> CostReport:
    """Analytic cost of one forward pass at the given input spec."""
    cfg.validate()
    U = cfg.angular if U is None else U
    V = cfg.angular if V is None else V
    C = cfg.channels
    hid = cfg.dgce_hidden
    half = hid // 2
    cr = cfg.esam_channels if cfg.enable_esam else 0
    s = cfg.scale
    A = U * V

    macs = 0
    elem = 0

    # shallow 1x3x3, 1 -> C
    macs += A * C * H * W * 1 * 9

    for i in range(cfg.num_lgfm):
        for d in block_directions(cfg, i):
            if not (cfg.enable_dgce or cfg.enable_esam or cfg.enable_ecam):
                continue
            D, Hf, Wf = _folded_dims(U, V, H, W, d)
            sp = D * Hf * Wf  # spatial cells in the folded tensor
            if cfg.enable_dgce:
                macs += sp * hid * C            # 1x1 expand
                macs += 2 * sp * half * 9       # two depthwise 3x3
                macs += sp * C * half           # 1x1 fuse
                macs += sp * C * C              # 1x1 out
                elem += 2 * sp * half           # gelu
                elem += 2 * sp * half + sp * half  # gates and their sum
                elem += sp * C                  # skip add before the out conv
            if cfg.enable_esam:
                h2, w2 = _strided3_out(Hf), _strided3_out(Wf)
                h4, w4 = (h2 - 2) // 2 + 1, (w2 - 2) // 2 + 1
                macs += sp * cr * C                       # 1x1 reduce
                macs += D * cr * h2 * w2 * 9              # strided depthwise
                macs += D * cr * h4 * w4 * 25             # lka dw5
                macs += D * cr * h4 * w4 * 49             # lka dw7 dil3
                macs += D * cr * h4 * w4 * cr             # lka pw
                macs += sp * C * cr                       # 1x1 expand
                elem += D * cr * h4 * w4                  # max pool outputs
                elem += sp * cr                           # bilinear restore
                elem += sp * cr                           # f25 + f27
                elem += 2 * sp * C                        # sigmoid and gate mul
            if cfg.enable_ecam:
                macs += 2 * D * C * 3                     # two k=3 channel convs
                elem += 2 * D * C                         # adaptive pools
                elem += 3 * D * C                         # sigmoids and their sum
                elem += sp * C                            # gate mul
            if cfg.enable_esam and cfg.enable_ecam and cfg.attention_mode == "parallel":
                elem += 2 * sp * C                        # branch sum and halving
            elem += sp * C                                # block residual add

    # skip connection around the block chain
    elem += A * C * H * W
    # fusion 1x3x3, C -> C
    macs += A * C * H * W * C * 9
    # upsampler: 1x1 C -> C*s^2, shuffle, leaky, 3x3 C -> 1
    macs += A * (C * s * s) * H * W * C
    elem += A * C * (s * H) * (s * W)                     # leaky relu
    macs += A * 1 * (s * H) * (s * W) * C * 9
    # bilinear residual and the final add
    elem += A * (s * H) * (s * W) * 2

    total_params, by_group = count_params(cfg)
    return CostReport(
        params_total=total_params,
        params_by_group=by_group,
        macs_total=macs,
        elementwise_total=elem,
        flops_total=2 * macs,
        input_spec={"U": U, "V": V, "H": H, "W": W, "scale": s},
    )


def ablation_variants(base: LgfnConfig) -> list[tuple[str, LgfnConfig]]:
    """The six standard configurations for the parameter/mode comparison."""
    from dataclasses import replace

    return [
        ("parallel, full", replace(base, attention_mode="parallel")),
        ("cascade, full", replace(base, attention_mode="cascade")),
        ("no channel attention", replace(base, enable_ecam=False)),
        ("no spatial attention", replace(base, enable_esam=False)),
        ("no attention at all", replace(base, enable_esam=False, enable_ecam=False)),
        ("no gated extraction", replace(base, enable_dgce=False)),
    ]
