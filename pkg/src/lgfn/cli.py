"""Command-line surface: analyze, gradcheck, train, sr, eval, epi, ablate.

Configuration lives in a strict JSON document with three sections mirroring
the model and training dataclasses plus file paths; unknown keys are
rejected.  Flags override file values.  All randomness funnels through one
``--seed``.  Usage errors exit 2, runtime failures exit 1 with a diagnostic.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .costing import ablation_variants, count_flops, count_params
from .errors import ConfigError
from .lightfield import (
    LightField,
    SamplePair,
    degrade_bicubic,
    extract_epi,
    extract_patches,
    import_views,
    lf_load,
    lf_store,
    rgb_to_y,
    write_pgm,
)
from .metrics import REFERENCE_BASELINES_X4, baseline_sr, evaluate
from .model import LgfnConfig, checkpoint_load, lgfn_forward
from .train import TrainConfig, train_loop

_MODEL_KEYS = {f.name for f in dataclasses.fields(LgfnConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_PATH_KEYS = {"data", "out"}


def load_config(path) -> tuple[LgfnConfig, TrainConfig, dict]:
    """Parse and validate the JSON config; reject any unknown key."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - {"model", "train", "paths"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    sections = []
    for name, allowed in (("model", _MODEL_KEYS), ("train", _TRAIN_KEYS),
                          ("paths", _PATH_KEYS)):
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown keys in config section {name!r}: {sorted(bad)}")
        sections.append(dict(section))
    model_kw, train_kw, paths = sections
    if "direction_schedule" in model_kw and model_kw["direction_schedule"] is not None:
        model_kw["direction_schedule"] = tuple(model_kw["direction_schedule"])
    cfg = LgfnConfig(**model_kw).validate()
    tcfg = TrainConfig(**train_kw).validate()
    return cfg, tcfg, paths


def _apply_flag_overrides(cfg: LgfnConfig, args) -> LgfnConfig:
    changes = {}
    if getattr(args, "scale", None) is not None:
        changes["scale"] = args.scale
    if getattr(args, "mode", None) is not None:
        changes["attention_mode"] = args.mode
    if getattr(args, "no_dgce", False):
        changes["enable_dgce"] = False
    if getattr(args, "no_esam", False):
        changes["enable_esam"] = False
    if getattr(args, "no_ecam", False):
        changes["enable_ecam"] = False
    return dataclasses.replace(cfg, **changes).validate() if changes else cfg


def _configs_from_args(args) -> tuple[LgfnConfig, TrainConfig, dict]:
    if args.config:
        cfg, tcfg, paths = load_config(args.config)
    else:
        cfg, tcfg, paths = LgfnConfig(), TrainConfig(), {}
    cfg = _apply_flag_overrides(cfg, args)
    if getattr(args, "seed", None) is not None:
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
    return cfg, tcfg, paths


def _load_field(path) -> LightField:
    path = Path(path)
    if path.is_dir():
        # view directory: count view_{u}_{v} files to infer the angular grid
        views = sorted(path.glob("view_*_*.p?m"))
        if not views:
            raise ConfigError(f"{path}: no view_*_*.pgm/.ppm files found")
        us = {int(p.stem.split("_")[1]) for p in views}
        vs = {int(p.stem.split("_")[2]) for p in views}
        return import_views(path, max(us) + 1, max(vs) + 1)
    return lf_load(path)


def _as_luma(lf: LightField) -> LightField:
    return rgb_to_y(lf) if lf.C == 3 else lf


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args) -> int:
    cfg, _, _ = _configs_from_args(args)
    report = count_flops(cfg, H=args.input_h, W=args.input_w)
    print(f"parameters: {report.params_total:,}")
    for group, n in report.params_by_group.items():
        print(f"  {group:<10} {n:>10,}")
    spec = report.input_spec
    print(f"input spec: {spec['U']}x{spec['V']} views, {spec['H']}x{spec['W']} px, "
          f"x{spec['scale']} upscale")
    print(f"MACs:  {report.macs_total:,} ({report.macs_total / 1e9:.2f} G)")
    print(f"FLOPs: {report.flops_total:,} ({report.flops_total / 1e9:.2f} G)  "
          f"[{report.convention}]")
    print(f"elementwise: {report.elementwise_total:,}")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2))
        print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(include_end_to_end=not args.kernels_only)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name:<42} max rel err {r.max_rel_error:.3e} "
              f"(tol {r.tolerance:g})")
        failures += not r.passed
    print(f"{len(results) - failures}/{len(results)} gradient checks passed")
    return 1 if failures else 0


def cmd_train(args) -> int:
    cfg, tcfg, paths = _configs_from_args(args)
    data_dir = Path(args.data or paths.get("data", ""))
    out_dir = Path(args.out or paths.get("out", "train_out"))
    if not data_dir or not data_dir.is_dir():
        raise ConfigError(f"training data directory not found: {data_dir!r}")
    scenes = sorted(data_dir.glob("*.lf4"))
    if not scenes:
        raise ConfigError(f"no .lf4 scenes in {data_dir}")
    samples: list[SamplePair] = []
    for scene in scenes:
        hr = _as_luma(lf_load(scene))
        pair = SamplePair(degrade_bicubic(hr, cfg.scale), hr, cfg.scale)
        samples.extend(extract_patches(pair, args.patch, args.patch))
    print(f"{len(scenes)} scenes -> {len(samples)} patch pairs "
          f"({args.patch}x{args.patch} at x{cfg.scale})")
    _, logs = train_loop(samples, cfg, tcfg, out_dir=out_dir)
    if logs:
        print(f"{len(logs)} steps; final loss {logs[-1]['total']:.6f} "
              f"(first {logs[0]['total']:.6f})")
    print(f"wrote {out_dir / 'model_final.ckpt'} and {out_dir / 'metrics.jsonl'}")
    return 0


def cmd_sr(args) -> int:
    cfg, _, _ = _configs_from_args(args)
    params = checkpoint_load(args.checkpoint, cfg)
    lf = _as_luma(_load_field(args.input))
    out = lgfn_forward(lf, params, cfg)
    out_path = Path(args.out or "sr.lf4")
    lf_store(out, out_path)
    print(f"wrote {out_path} ({out.U}x{out.V} views, {out.H}x{out.W} px)")
    if args.views:
        view_dir = out_path.with_suffix("")
        view_dir.mkdir(parents=True, exist_ok=True)
        for u in range(out.U):
            for v in range(out.V):
                write_pgm(view_dir / f"view_{u}_{v}.pgm", out.data[u, v, 0])
        print(f"wrote {out.U * out.V} views under {view_dir}/")
    return 0


def _scene_pairs(sr_path: Path, hr_path: Path) -> tuple[list, list, list]:
    if sr_path.is_dir() != hr_path.is_dir():
        raise ConfigError("sr and hr must both be files or both be directories")
    if sr_path.is_dir():
        names = sorted(p.name for p in sr_path.glob("*.lf4"))
        if not names:
            raise ConfigError(f"no .lf4 scenes in {sr_path}")
        missing = [n for n in names if not (hr_path / n).exists()]
        if missing:
            raise ConfigError(f"hr scene missing for {missing[0]}")
        srs = [_as_luma(lf_load(sr_path / n)) for n in names]
        hrs = [_as_luma(lf_load(hr_path / n)) for n in names]
        ids = [Path(n).stem for n in names]
    else:
        srs = [_as_luma(lf_load(sr_path))]
        hrs = [_as_luma(lf_load(hr_path))]
        ids = [sr_path.stem]
    return srs, hrs, ids


def cmd_eval(args) -> int:
    srs, hrs, ids = _scene_pairs(Path(args.sr), Path(args.hr))
    report = evaluate(srs, hrs, ids)
    print(report.table())
    doc = {"model": report.to_dict()}
    if args.baselines:
        s = args.scale or 4
        rows = {}
        for mode in ("bilinear", "bicubic"):
            ups = [baseline_sr(degrade_bicubic(hr, s), s, mode) for hr in hrs]
            rows[mode] = evaluate(ups, hrs, ids).to_dict()
        if rows["bicubic"]["psnr"] < rows["bilinear"]["psnr"]:
            print("note: bicubic fell below bilinear on this data, which is "
                  "atypical for natural content")
        doc["baselines"] = rows
        doc["reference_x4_benchmark_averages"] = {
            mode: {"psnr": v[0], "ssim": v[1], "note": "published five-dataset "
                   "x4 averages, for manual comparison only"}
            for mode, v in REFERENCE_BASELINES_X4.items()
        }
        print("\nbaselines on this data (degrade then upscale):")
        for mode in ("bilinear", "bicubic"):
            ref = REFERENCE_BASELINES_X4[mode]
            print(f"  {mode:<9} {rows[mode]['psnr']:.2f} / {rows[mode]['ssim']:.4f}   "
                  f"(published x4 benchmark avg: {ref[0]:.2f} / {ref[1]:.4f})")
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2))
        print(f"wrote {args.out}")
    return 0


def cmd_epi(args) -> int:
    lf = _load_field(args.input)
    if args.orientation == "horizontal":
        fixed = (args.u, args.h)
    else:
        fixed = (args.v, args.w)
    epi = extract_epi(lf, args.orientation, fixed)
    out = Path(args.out or f"epi_{args.orientation}.pgm")
    write_pgm(out, epi.pixels)
    print(f"wrote {out} ({epi.pixels.shape[0]}x{epi.pixels.shape[1]}, "
          f"{args.orientation} at {fixed})")
    return 0


def cmd_ablate(args) -> int:
    cfg, _, _ = _configs_from_args(args)
    rows = []
    for name, variant in ablation_variants(cfg):
        total, _ = count_params(variant)
        rows.append((name, variant, total))
    full = rows[0][2]
    print(f"{'variant':<24} {'mode':<10} {'params':>10} {'delta':>10}")
    for name, variant, total in rows:
        mode = variant.attention_mode if (variant.enable_esam and variant.enable_ecam) else "-"
        delta = total - full
        print(f"{name:<24} {mode:<10} {total:>10,} {delta:>+10,}")
    if args.out:
        doc = [
            {"variant": name, "mode": v.attention_mode, "params": t,
             "dgce": v.enable_dgce, "esam": v.enable_esam, "ecam": v.enable_ecam}
            for name, v, t in rows
        ]
        Path(args.out).write_text(json.dumps(doc, indent=2))
        print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgfn",
        description="lightweight light-field super-resolution toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, train_flags=False):
        p.add_argument("--config", help="JSON config file (strict schema)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--scale", type=int, choices=(2, 4), default=None)
        p.add_argument("--mode", choices=("parallel", "cascade"), default=None)
        p.add_argument("--no-dgce", action="store_true")
        p.add_argument("--no-esam", action="store_true")
        p.add_argument("--no-ecam", action="store_true")

    p = sub.add_parser("analyze", help="print the parameter/FLOPs report")
    common(p)
    p.add_argument("--input-h", type=int, default=32)
    p.add_argument("--input-w", type=int, default=32)
    p.add_argument("--out", help="also write the report as JSON")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("gradcheck", help="run the gradient suite (CI gate)")
    p.add_argument("--kernels-only", action="store_true",
                   help="skip the end-to-end network check")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train", help="train on .lf4 scenes in a directory")
    common(p)
    p.add_argument("--data", help="directory of HR .lf4 scenes")
    p.add_argument("--out", help="output directory for checkpoints and logs")
    p.add_argument("--patch", type=int, default=32, help="LR patch size")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sr", help="super-resolve an .lf4 field or view directory")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", help="output .lf4 path")
    p.add_argument("--views", action="store_true", help="also dump per-view PGMs")
    p.set_defaults(fn=cmd_sr)

    p = sub.add_parser("eval", help="score SR output against ground truth")
    p.add_argument("--sr", required=True, help=".lf4 file or directory")
    p.add_argument("--hr", required=True, help=".lf4 file or directory")
    p.add_argument("--scale", type=int, choices=(2, 4), default=None)
    p.add_argument("--baselines", action="store_true",
                   help="also score bilinear/bicubic and print reference averages")
    p.add_argument("--out", help="write the JSON report")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("epi", help="dump an epipolar-plane image")
    p.add_argument("--input", required=True)
    p.add_argument("--orientation", choices=("horizontal", "vertical"),
                   default="horizontal")
    p.add_argument("--u", type=int, default=0)
    p.add_argument("--h", type=int, default=0)
    p.add_argument("--v", type=int, default=0)
    p.add_argument("--w", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_epi)

    p = sub.add_parser("ablate", help="parameter table across module toggles")
    common(p)
    p.add_argument("--out", help="write the table as JSON")
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # runtime failure -> exit 1 with diagnostic
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
