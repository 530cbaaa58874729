"""Network blocks, full forward, initialization and checkpoints."""

import numpy as np
import pytest

from lgfn import autodiff as ad
from lgfn import kernels as K
from lgfn.autodiff import Tensor, no_grad
from lgfn.errors import CheckpointError, ConfigError, ShapeError
from lgfn.lightfield import LightField
from lgfn.model import (
    ForwardTrace,
    LgfnConfig,
    block_directions,
    checkpoint_load,
    checkpoint_save,
    conv_defs,
    dgce_forward,
    ecam_forward,
    esam_forward,
    fold_angular,
    forward_tensor,
    init_params,
    lgfm_forward,
    lgfn_forward,
    unfold_angular,
)
from lgfn.costing import count_params


def tiny_cfg(**kw):
    base = dict(channels=8, num_lgfm=1, scale=2, angular=2)
    base.update(kw)
    return LgfnConfig(**base)


def tiny_field(rng, U=2, V=2, H=8, W=8):
    return LightField(rng.random((U, V, 1, H, W)).astype(np.float32))


def folded_input(rng, c=8, d=2, h=8, w=16, dtype=np.float64):
    return Tensor(rng.normal(size=(1, c, d, h, w)).astype(dtype) * 0.3)


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    LgfnConfig().validate()
    with pytest.raises(ConfigError):
        LgfnConfig(scale=3).validate()
    with pytest.raises(ConfigError):
        LgfnConfig(channels=10, esam_reduction=4).validate()
    with pytest.raises(ConfigError):
        LgfnConfig(channels=10, dgce_expansion=2.55).validate()
    with pytest.raises(ConfigError):
        LgfnConfig(num_lgfm=2, direction_schedule=("h",)).validate()
    with pytest.raises(ConfigError):
        LgfnConfig(attention_mode="serial").validate()


def test_default_schedule_alternates():
    cfg = LgfnConfig()
    assert cfg.schedule() == ("h", "v", "h", "v", "h", "v", "h")
    assert block_directions(cfg, 0) == ("h", "v")
    assert block_directions(cfg, 1) == ("v", "h")


# ---------------------------------------------------------------------------
# init


def test_init_deterministic_and_seed_sensitive():
    cfg = tiny_cfg()
    a = init_params(cfg, 0)
    b = init_params(cfg, 0)
    c = init_params(cfg, 1)
    assert all(np.array_equal(a[n].data, b[n].data) for n in a.names())
    assert any(not np.array_equal(a[n].data, c[n].data) for n in a.names())


def test_init_total_matches_count_params():
    for cfg in (tiny_cfg(), LgfnConfig()):
        total, _ = count_params(cfg)
        assert init_params(cfg, 0).total_scalars() == total


def test_init_biases_zero():
    p = init_params(tiny_cfg(), 3)
    assert all(
        not np.any(p[n].data) for n in p.names() if n.endswith(".b")
    )


# ---------------------------------------------------------------------------
# folding


def test_fold_unfold_roundtrip_bit_exact():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(1, 3, 6, 4, 5)))  # U=2, V=3
    for d in ("h", "v"):
        back = unfold_angular(fold_angular(x, 2, 3, d), 2, 3, d)
        assert np.array_equal(back.data, x.data)


def test_fold_shapes():
    x = Tensor(np.zeros((1, 4, 6, 5, 7)))
    assert fold_angular(x, 2, 3, "h").data.shape == (1, 4, 2, 5, 21)
    assert fold_angular(x, 2, 3, "v").data.shape == (1, 4, 3, 10, 7)


# ---------------------------------------------------------------------------
# blocks


def test_dgce_zero_input_zero_output():
    cfg = tiny_cfg()
    p = init_params(cfg, 0, dtype=np.float64)  # biases are zero
    x = Tensor(np.zeros((1, 8, 2, 8, 16)))
    out = dgce_forward(x, p, cfg, "lgfm0.h.")
    assert np.max(np.abs(out.data)) == 0.0


def test_dgce_preserves_shape():
    rng = np.random.default_rng(1)
    cfg = tiny_cfg(channels=16)
    p = init_params(cfg, 0, dtype=np.float64)
    x = folded_input(rng, c=16, d=2, h=8, w=8)
    out = dgce_forward(x, p, cfg, "lgfm0.h.")
    assert out.data.shape == x.data.shape


def test_dgce_half_swap_symmetry():
    """Swapping the split halves together with their gate weights fixes F_23."""
    rng = np.random.default_rng(2)
    cfg = tiny_cfg()
    p = init_params(cfg, 5, dtype=np.float64)
    x = folded_input(rng)
    half = cfg.dgce_hidden // 2
    pre = "lgfm0.h."

    tr1 = ForwardTrace()
    dgce_forward(x, p, cfg, pre, tr1)

    swapped = p.copy()
    wexp = swapped[pre + "dgce.expand.w"].data
    wexp[:] = np.concatenate([wexp[half:], wexp[:half]], axis=0)
    bexp = swapped[pre + "dgce.expand.b"].data
    bexp[:] = np.concatenate([bexp[half:], bexp[:half]])
    for suffix in (".w", ".b"):
        a = swapped[pre + "dgce.dw_a" + suffix].data.copy()
        swapped[pre + "dgce.dw_a" + suffix].data = swapped[pre + "dgce.dw_b" + suffix].data
        swapped[pre + "dgce.dw_b" + suffix].data = a
    tr2 = ForwardTrace()
    dgce_forward(x, swapped, cfg, pre, tr2)

    assert np.allclose(tr2[pre + "F_21"], tr1[pre + "F_22"])
    assert np.allclose(tr2[pre + "F_23"], tr1[pre + "F_23"], atol=1e-12)


def test_esam_neutral_gate_is_half():
    cfg = tiny_cfg()
    p = init_params(cfg, 0, dtype=np.float64)
    pre = "lgfm0.h."
    for n in p.names():
        if n.startswith(pre + "esam."):
            p[n].data[:] = 0.0
    rng = np.random.default_rng(3)
    x = folded_input(rng)
    out = esam_forward(x, p, cfg, pre)
    assert np.allclose(out.data, 0.5 * x.data, atol=1e-15)


def test_esam_shape_and_divisibility():
    cfg = tiny_cfg(channels=16)
    p = init_params(cfg, 0, dtype=np.float64)
    rng = np.random.default_rng(4)
    x = folded_input(rng, c=16, d=1, h=16, w=16)
    assert esam_forward(x, p, cfg, "lgfm0.h.").data.shape == x.data.shape
    bad = folded_input(rng, c=16, d=1, h=6, w=16)
    with pytest.raises(ShapeError):
        esam_forward(bad, p, cfg, "lgfm0.h.")


def test_lka_stack_receptive_field_spans_23():
    """Impulse support through dw5 + dw7(dil 3) + pw covers 23 pixels per axis."""
    from lgfn.model import LKA_DILATION, LKA_DIL_KERNEL, LKA_DW_KERNEL

    size = 31
    x = np.zeros((1, 1, size, size))
    x[0, 0, size // 2, size // 2] = 1.0
    t = Tensor(x)
    t = K.conv2d(t, Tensor(np.ones((1, 1, 5, 5))), None, K.ConvSpec(5, 5, groups=1))
    t = K.conv2d(t, Tensor(np.ones((1, 1, 7, 7))), None,
                 K.ConvSpec(7, 7, dilation=3, groups=1))
    t = K.conv2d(t, Tensor(np.ones((1, 1, 1, 1))), None, K.ConvSpec(1, 1))
    rows = np.argwhere(t.data[0, 0].sum(axis=1) > 0).ravel()
    cols = np.argwhere(t.data[0, 0].sum(axis=0) > 0).ravel()
    span = LKA_DW_KERNEL + (LKA_DIL_KERNEL - 1) * LKA_DILATION  # 23
    assert rows.max() - rows.min() + 1 == span
    assert cols.max() - cols.min() + 1 == span


def test_ecam_zero_weights_identity():
    cfg = tiny_cfg()
    p = init_params(cfg, 0, dtype=np.float64)
    pre = "lgfm0.h."
    for n in (pre + "ecam.conv_max", pre + "ecam.conv_avg"):
        p[n + ".w"].data[:] = 0.0
        p[n + ".b"].data[:] = 0.0
    rng = np.random.default_rng(5)
    x = folded_input(rng)
    out = ecam_forward(x, p, cfg, pre)
    assert np.allclose(out.data, x.data, atol=1e-15)


def test_ecam_gate_constant_over_space():
    cfg = tiny_cfg()
    p = init_params(cfg, 7, dtype=np.float64)
    rng = np.random.default_rng(6)
    x = folded_input(rng)
    out = ecam_forward(x, p, cfg, "lgfm0.h.")
    gate = out.data / x.data
    assert np.allclose(gate, gate[:, :, :, :1, :1], atol=1e-10)


def test_ecam_param_count_is_8_per_instance():
    cfg = tiny_cfg()
    ecam_defs = [d for d in conv_defs(cfg) if d.group == "ecam"]
    per_instance = {}
    for d in ecam_defs:
        key = d.name.rsplit(".", 1)[0].rsplit(".", 1)[0]
        per_instance[key] = per_instance.get(key, 0) + d.param_count
    assert all(v == 8 for v in per_instance.values())


def test_ecam_needs_three_channels():
    cfg = LgfnConfig(channels=2, num_lgfm=1, scale=2, angular=1,
                     dgce_expansion=2.0, esam_reduction=2, enable_ecam=False)
    p = init_params(cfg, 0, dtype=np.float64)
    x = Tensor(np.zeros((1, 2, 1, 8, 8)))
    with pytest.raises(ConfigError):
        ecam_forward(x, p, cfg, "lgfm0.h.")


# ---------------------------------------------------------------------------
# block composition


def test_lgfm_all_toggles_off_identity():
    cfg = tiny_cfg(enable_dgce=False, enable_esam=False, enable_ecam=False)
    p = init_params(cfg, 0, dtype=np.float64)
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(1, 8, 4, 8, 8)))
    out = lgfm_forward(x, p, cfg, 2, 2, 0, "h")
    assert out.data is x.data or np.array_equal(out.data, x.data)


def test_lgfm_directions_differ_on_asymmetric_input():
    cfg = tiny_cfg()
    p = init_params(cfg, 0, dtype=np.float64)
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(1, 8, 4, 8, 8)) * 0.2)
    out_h = lgfm_forward(x, p, cfg, 2, 2, 0, "h")
    out_v = lgfm_forward(x, p, cfg, 2, 2, 0, "v")
    assert not np.allclose(out_h.data, out_v.data)


def test_parallel_vs_cascade_differ():
    rng = np.random.default_rng(9)
    lf = tiny_field(rng)
    out = {}
    for mode in ("parallel", "cascade"):
        cfg = tiny_cfg(attention_mode=mode)
        p = init_params(cfg, 0)
        out[mode] = lgfn_forward(lf, p, cfg).data
    assert not np.allclose(out["parallel"], out["cascade"])


# ---------------------------------------------------------------------------
# full forward


def test_forward_shape_contract():
    rng = np.random.default_rng(10)
    for s in (2, 4):
        cfg = tiny_cfg(scale=s, angular=3)
        p = init_params(cfg, 0)
        lf = tiny_field(rng, U=3, V=3, H=8, W=8)
        out = lgfn_forward(lf, p, cfg)
        assert out.data.shape == (3, 3, 1, 8 * s, 8 * s)


def test_forward_residual_identity_bit_exact():
    """Zeroing the final upsampler conv leaves exactly the bilinear path."""
    rng = np.random.default_rng(11)
    cfg = tiny_cfg()
    p = init_params(cfg, 0, dtype=np.float64)
    p["up.final.w"].data[:] = 0.0
    p["up.final.b"].data[:] = 0.0
    lf = LightField(rng.random((2, 2, 1, 8, 8)))
    out = lgfn_forward(lf, p, cfg)
    with no_grad():
        flat = Tensor(lf.data.reshape(4, 8, 8))
        want = K.resize(flat, 2.0, "bilinear").data.reshape(2, 2, 1, 16, 16)
    assert np.array_equal(out.data, want)


def test_forward_trace_complete():
    rng = np.random.default_rng(12)
    cfg = tiny_cfg(num_lgfm=2, direction_schedule=("h", "v"))
    p = init_params(cfg, 0)
    lf = tiny_field(rng)
    _, trace = lgfn_forward(lf, p, cfg, record_trace=True)
    for key in ("F_init", "F_1", "F_fuse", "F_HR"):
        assert key in trace
    for i, lead in enumerate(("h", "v")):
        for d in block_directions(cfg, i):
            for sym in ("F_24", "F_29", "F_32"):
                assert f"lgfm{i}.{d}.{sym}" in trace


def test_forward_pure_and_deterministic():
    rng = np.random.default_rng(13)
    cfg = tiny_cfg()
    p = init_params(cfg, 0)
    lf = tiny_field(rng)
    before = lf.data.copy()
    a = lgfn_forward(lf, p, cfg).data
    b = lgfn_forward(lf, p, cfg).data
    assert np.array_equal(a, b)
    assert np.array_equal(lf.data, before)


def test_forward_rejects_color_and_bad_extents():
    rng = np.random.default_rng(14)
    cfg = tiny_cfg()
    p = init_params(cfg, 0)
    color = LightField(rng.random((2, 2, 3, 8, 8)))
    with pytest.raises(ShapeError):
        lgfn_forward(color, p, cfg)
    ragged = LightField(rng.random((2, 2, 1, 6, 8)))
    with pytest.raises(ShapeError):
        lgfn_forward(ragged, p, cfg)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = tiny_cfg()
    p = init_params(cfg, 42)
    path = tmp_path / "model.ckpt"
    checkpoint_save(p, path)
    back = checkpoint_load(path, cfg)
    assert back.names() == p.names()
    assert all(np.array_equal(back[n].data, p[n].data) for n in p.names())


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        checkpoint_load(path)


def test_checkpoint_mismatched_cfg_names_offender(tmp_path):
    p = init_params(tiny_cfg(), 0)
    path = tmp_path / "tiny.ckpt"
    checkpoint_save(p, path)
    bigger = tiny_cfg(channels=16)
    with pytest.raises(CheckpointError, match="shallow.conv.w"):
        checkpoint_load(path, bigger)


def test_checkpoint_file_size_arithmetic(tmp_path):
    cfg = tiny_cfg()
    p = init_params(cfg, 1)
    path = tmp_path / "sized.ckpt"
    checkpoint_save(p, path)
    expected = 4 + 8  # magic + version/count
    for name, t in p.items():
        expected += 2 + len(name.encode()) + 1 + 4 * t.data.ndim + 4 * t.data.size
    assert path.stat().st_size == expected
