"""Reproducible experiment driver.

    slatpaint <gen-data|train|generate|inpaint|bench|ablate|render>
              --config <path> [--seed N] [--out DIR] [--method NAME]

Every command reads a strict JSON config (unknown keys are rejected), writes
a resolved copy of it next to its outputs before doing any heavy work, and
is a pure function of (config, input files): reruns produce byte-identical
outputs.  The single documented exception is ``runtime.json`` emitted by
``bench``, which records wall-clock seconds per method.

Exit codes: 0 success, 2 config error, 3 runtime error.

Seeds: the global seed is never consumed directly; per-asset and per-run
streams are derived as sha256("{seed}/{purpose}/{index}") (see core.Rng), so
results do not depend on evaluation order.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, flownet, metrics, sampler, seedopt, shapes
from .core import Rng, derive_seed
from .errors import ConfigError, ParameterError, SlatpaintError

__all__ = ["main", "run"]

COMMANDS = ("gen-data", "train", "generate", "inpaint", "bench", "ablate", "render")

_REQUIRED = object()

_SEEDOPT_SCHEMA = {
    "t_opt": (int, 15),
    "lr_sparse": (float, 5.0),
    "lr_slat": (float, 0.01),
    "lambdas": (list, [31.6, 10.0, 3.16, 1.0]),
    "moment_scope": (str, "global"),
    "param_space": (str, "spectral"),
    "probe": (bool, False),
}
_SAMPLER_SCHEMA = {
    "steps": (int, 12),
}
_BASELINE_SCHEMA = {
    "steps": (int, 12),
    "repaint_resamples": (int, 4),
    "sdedit_strength": (float, 0.6),
    "ilvr_cutoff": (float, None),
    "final_overwrite": (bool, False),
}

_SCHEMAS = {
    "gen-data": {
        "count": (int, _REQUIRED),
        "seed": (int, 0),
        "out": (str, _REQUIRED),
        "families": (list, list(shapes.FAMILIES)),
        "side": (int, 16),
    },
    "train": {
        "manifest": (str, _REQUIRED),
        "out": (str, _REQUIRED),
        "seed": (int, 0),
        "stages": (list, ["sparse", "slat"]),
        "steps": (int, 2000),
        "batch": (int, 4),
        "lr": (float, 3e-3),
        "lr_final": (float, None),
        "row_subsample": (int, 1024),
        "resume_from": (str, None),
        "write_resume": (bool, False),
        "side": (int, 16),
    },
    "generate": {
        "checkpoint_sparse": (str, _REQUIRED),
        "checkpoint_slat": (str, _REQUIRED),
        "out": (str, _REQUIRED),
        "seed": (int, 0),
        "count": (int, 5),
        "class_id": (int, None),
        "steps": (int, 12),
        "side": (int, 16),
    },
    "inpaint": {
        "manifest": (str, _REQUIRED),
        "checkpoint_sparse": (str, _REQUIRED),
        "checkpoint_slat": (str, _REQUIRED),
        "out": (str, _REQUIRED),
        "seed": (int, 0),
        "method": (str, "ours"),
        "asset_index": (int, 0),
        "side": (int, 16),
        "seedopt": (dict, None),
        "sampler": (dict, None),
        "baseline": (dict, None),
    },
    "bench": {
        "manifest": (str, _REQUIRED),
        "checkpoint_sparse": (str, _REQUIRED),
        "checkpoint_slat": (str, _REQUIRED),
        "out": (str, _REQUIRED),
        "seed": (int, 0),
        "count": (int, None),
        "methods": (list, ["ours", "repaint", "sdedit", "ilvr"]),
        "side": (int, 16),
        "seedopt": (dict, None),
        "sampler": (dict, None),
        "baseline": (dict, None),
    },
    "ablate": {
        "manifest": (str, _REQUIRED),
        "checkpoint_sparse": (str, _REQUIRED),
        "checkpoint_slat": (str, _REQUIRED),
        "out": (str, _REQUIRED),
        "seed": (int, 0),
        "variants": (list, ["full", "no-spectral", "no-gauss", "lr-sweep"]),
        "n_seeds": (int, 20),
        "asset_index": (int, 0),
        "lr_values": (list, [0.05, 0.5, 5.0]),
        "side": (int, 16),
        "seedopt": (dict, None),
        "sampler": (dict, None),
    },
    "render": {
        "manifest": (str, _REQUIRED),
        "out": (str, _REQUIRED),
        "indices": (list, None),
        "side": (int, 16),
    },
}

_METHODS = ("ours", "repaint", "sdedit", "ilvr")


def _parse_section(obj, schema, where):
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - set(schema)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    out = {}
    for key, (typ, default) in schema.items():
        if key in obj:
            value = obj[key]
            if value is None and default is None:
                out[key] = None
                continue
            if typ is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if typ is int and isinstance(value, bool):
                raise ConfigError(f"{where}.{key}: expected {typ.__name__}")
            if not isinstance(value, typ):
                raise ConfigError(
                    f"{where}.{key}: expected {typ.__name__}, got {type(value).__name__}"
                )
            out[key] = value
        elif default is _REQUIRED:
            raise ConfigError(f"{where}.{key} is required")
        else:
            out[key] = default
    return out


def load_config(command, path, overrides):
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    cfg = _parse_section(raw, _SCHEMAS[command], command)
    for sub, schema in (("seedopt", _SEEDOPT_SCHEMA), ("sampler", _SAMPLER_SCHEMA),
                        ("baseline", _BASELINE_SCHEMA)):
        if sub in cfg:
            cfg[sub] = _parse_section(cfg[sub], schema, f"{command}.{sub}")
    if overrides.get("seed") is not None:
        cfg["seed"] = overrides["seed"]
    if overrides.get("out") is not None:
        cfg["out"] = overrides["out"]
    if overrides.get("method") is not None:
        if command == "bench":
            cfg["methods"] = [overrides["method"]]
        else:
            cfg["method"] = overrides["method"]
    return cfg


def _snapshot(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")
    return out


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[h]) for h in header))
    Path(path).write_text("\n".join(lines) + "\n")


def _seedopt_config(section, seed, probe=False):
    return seedopt.ConfigSeedOpt(
        t_opt=section["t_opt"],
        lr_sparse=section["lr_sparse"],
        lr_slat=section["lr_slat"],
        lambdas=tuple(section["lambdas"]),
        moment_scope=section["moment_scope"],
        param_space=section["param_space"],
        probe=probe or section["probe"],
        seed=seed,
    )


def _baseline_config(section, method, seed):
    return baselines.BaselineConfig(
        method=method,
        steps=section["steps"],
        repaint_resamples=section["repaint_resamples"],
        sdedit_strength=section["sdedit_strength"],
        ilvr_cutoff=section["ilvr_cutoff"],
        final_overwrite=section["final_overwrite"],
        seed=seed,
    )


def _load_nets(cfg):
    net_s = flownet.net_from_checkpoint(flownet.load_checkpoint(cfg["checkpoint_sparse"]))
    net_l = flownet.net_from_checkpoint(flownet.load_checkpoint(cfg["checkpoint_slat"]))
    return net_s, net_l


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg):
    out = _snapshot(cfg, cfg["out"])
    for f in cfg["families"]:
        if f not in shapes.FAMILIES:
            raise ConfigError(f"unknown family {f!r}; pick from {shapes.FAMILIES}")
    records = []
    for i in range(cfg["count"]):
        kind = cfg["families"][i % len(cfg["families"])]
        seed_i = derive_seed(cfg["seed"], f"asset/{i}")
        family = shapes.resolve_family(Rng(seed_i), shapes.ShapeFamily(kind), cfg["side"])
        records.append(shapes.AssetRecord(
            seed=seed_i, family=kind, params=family.params, class_id=family.class_id,
        ))
    shapes.write_manifest(records, out / "manifest.jsonl")
    for i, rec in enumerate(records):
        asset = shapes.asset_from_record(rec, cfg["side"])
        shapes.export_ply(asset, out / f"asset_{i:04d}.ply")
        shapes.export_raw_grid(shapes.encode_sparse_target(asset), out / f"asset_{i:04d}.grid")
    print(f"wrote {len(records)} assets to {out}")
    return 0


def cmd_train(cfg):
    out = _snapshot(cfg, cfg["out"])
    manifest = Path(cfg["manifest"])
    if not manifest.exists():
        raise ConfigError(f"manifest not found: {manifest}")
    records = shapes.read_manifest(manifest)
    if not records:
        raise ConfigError(f"manifest is empty: {manifest}")
    assets = [shapes.asset_from_record(r, cfg["side"]) for r in records]
    mhash = shapes.manifest_hash(manifest)
    stage_names = {"sparse": flownet.STAGE_SPARSE, "slat": flownet.STAGE_SLAT}
    for short in cfg["stages"]:
        if short not in stage_names:
            raise ConfigError(f"unknown stage {short!r}; pick from {sorted(stage_names)}")
        stage = stage_names[short]
        channels = shapes.SPARSE_CHANNELS if short == "sparse" else shapes.SLAT_CHANNELS
        net = flownet.init_net(stage, channels, len(shapes.FAMILIES),
                               Rng(derive_seed(cfg["seed"], f"init/{short}")))
        tc = flownet.TrainConfig(
            steps=cfg["steps"], batch=cfg["batch"], lr=cfg["lr"],
            lr_final=cfg["lr_final"],
            seed=derive_seed(cfg["seed"], f"train/{short}"),
            row_subsample=cfg["row_subsample"],
        )
        resume = None
        if cfg["resume_from"]:
            resume = flownet.load_resume(Path(cfg["resume_from"]) / f"ckpt_{short}.resume.bin")
        ckpt, curve, final = flownet.train(net, assets, tc, resume=resume)
        ckpt.metadata["manifest_hash"] = mhash
        flownet.save_checkpoint(ckpt, out / f"ckpt_{short}.bin")
        if cfg["write_resume"]:
            params, adam, step = final
            flownet.save_resume(out / f"ckpt_{short}.resume.bin", params, adam, step, curve)
        _write_csv(out / f"loss_{short}.csv", ["step", "loss"],
                   [{"step": i, "loss": v} for i, v in enumerate(curve)])
        print(f"{short}: {len(curve)} steps, "
              f"smoothed loss {ckpt.metadata['initial_smoothed_loss']:.4f} -> "
              f"{ckpt.metadata['final_smoothed_loss']:.4f}")
    return 0


def cmd_generate(cfg):
    out = _snapshot(cfg, cfg["out"])
    net_s, net_l = _load_nets(cfg)
    records = []
    for i in range(cfg["count"]):
        class_id = cfg["class_id"] if cfg["class_id"] is not None \
            else i % len(shapes.FAMILIES)
        seed_i = derive_seed(cfg["seed"], f"generate/{i}")
        sc = sampler.SamplerConfig(steps=cfg["steps"], seed=seed_i)
        asset = sampler.generate_asset(net_s, net_l, class_id, sc, cfg["side"])
        shapes.export_ply(asset, out / f"gen_{i:04d}.ply")
        records.append({"index": i, "class_id": class_id, "seed": seed_i,
                        "occupied": asset.count})
    (out / "generated.jsonl").write_text(
        "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    print(f"generated {cfg['count']} assets to {out}")
    return 0


def _bench_setup(cfg):
    manifest = Path(cfg["manifest"])
    if not manifest.exists():
        raise ConfigError(f"manifest not found: {manifest}")
    records = shapes.read_manifest(manifest)
    if not records:
        raise ConfigError(f"manifest is empty: {manifest}")
    return records


def cmd_inpaint(cfg):
    out = _snapshot(cfg, cfg["out"])
    if cfg["method"] not in _METHODS:
        raise ConfigError(f"unknown method {cfg['method']!r}; pick from {_METHODS}")
    records = _bench_setup(cfg)
    if not 0 <= cfg["asset_index"] < len(records):
        raise ConfigError(f"asset_index {cfg['asset_index']} outside manifest")
    net_s, net_l = _load_nets(cfg)
    rec = records[cfg["asset_index"]]
    asset = shapes.asset_from_record(rec, cfg["side"])
    mask = shapes.make_half_mask(Rng(derive_seed(cfg["seed"], "mask")), cfg["side"])
    run_seed = derive_seed(cfg["seed"], f"run/{cfg['method']}")

    if cfg["method"] == "ours":
        so = _seedopt_config(cfg["seedopt"], run_seed, probe=True)
        sc = sampler.SamplerConfig(steps=cfg["sampler"]["steps"], seed=run_seed)
        res = seedopt.inpaint(net_s, net_l, asset, mask, rec.class_id, so, sc)
        result = res.asset
        seedopt.write_step_logs(res.sparse_state.logs, out / "steps_sparse.jsonl")
        seedopt.write_step_logs(res.slat_state.logs, out / "steps_slat.jsonl")
        diagnostics = res.diagnostics
    else:
        bc = _baseline_config(cfg["baseline"], cfg["method"], run_seed)
        res = baselines.inpaint_with_baseline(net_s, net_l, asset, mask,
                                              rec.class_id, bc, collect_logs=True)
        result = res.asset
        seedopt.write_step_logs(res.diagnostics.pop("step_logs"), out / "steps_sparse.jsonl")
        diagnostics = res.diagnostics

    shapes.export_ply(result, out / "result.ply")
    shapes.export_raw_grid(shapes.encode_sparse_target(result), out / "result.grid")
    record = metrics.evaluate_inpaint(result, asset, mask)
    record.update({"method": cfg["method"], "asset_index": cfg["asset_index"]})
    record.update({f"diag_{k}": v for k, v in diagnostics.items()})
    (out / "metrics.json").write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
    print(f"{cfg['method']}: preserved IoU {record['iou_pres']:.3f}, "
          f"F@0.02 {record['fscore_02_pres']:.3f}")
    return 0


def _class_histograms(records, side):
    """Pooled full-asset color histogram per class (the reference the
    inpaint-region colors are compared against)."""
    sums = {}
    for rec in records:
        asset = shapes.asset_from_record(rec, side)
        hist = metrics._color_histogram(asset, np.ones((side,) * 3, dtype=bool))
        sums.setdefault(rec.class_id, []).append(hist)
    return {cid: np.mean(h, axis=0) for cid, h in sums.items()}


_RECON_FIELDS = ("iou_pres", "dice_pres", "cd_l1_x100_pres", "precision_01_pres",
                 "recall_01_pres", "fscore_01_pres", "fscore_02_pres",
                 "psnr_normal_pres", "ssim_normal_pres", "psnr_rgb_pres",
                 "ssim_rgb_pres")
_GEN_FIELDS = ("inpaint_occ_count", "inpaint_occ_ratio", "inpaint_color_hist_l1")


def run_benchmark(cfg):
    """Shared by cmd_bench and the acceptance suite: returns
    (per-method rows, per-method runtimes)."""
    records = _bench_setup(cfg)
    count = cfg["count"] if cfg["count"] is not None else len(records)
    if count > len(records):
        raise ConfigError(f"count {count} exceeds manifest size {len(records)}")
    for m in cfg["methods"]:
        if m not in _METHODS:
            raise ConfigError(f"unknown method {m!r}; pick from {_METHODS}")
    net_s, net_l = _load_nets(cfg)
    hists = _class_histograms(records[:count], cfg["side"])
    rows = {m: [] for m in cfg["methods"]}
    runtimes = {}
    for method in cfg["methods"]:
        start = time.perf_counter()
        for i in range(count):
            rec = records[i]
            asset = shapes.asset_from_record(rec, cfg["side"])
            mask = shapes.make_half_mask(
                Rng(derive_seed(cfg["seed"], f"mask/{i}")), cfg["side"])
            run_seed = derive_seed(cfg["seed"], f"{method}/{i}")
            row = {"asset_id": i, "class_id": rec.class_id, "status": "ok"}
            try:
                if method == "ours":
                    so = _seedopt_config(cfg["seedopt"], run_seed)
                    sc = sampler.SamplerConfig(steps=cfg["sampler"]["steps"], seed=run_seed)
                    result = seedopt.inpaint(net_s, net_l, asset, mask,
                                             rec.class_id, so, sc).asset
                else:
                    bc = _baseline_config(cfg["baseline"], method, run_seed)
                    result = baselines.inpaint_with_baseline(
                        net_s, net_l, asset, mask, rec.class_id, bc).asset
                row.update(metrics.evaluate_inpaint(
                    result, asset, mask, reference_hist=hists.get(rec.class_id)))
            except SlatpaintError as exc:
                row["status"] = type(exc).__name__
                for f in _RECON_FIELDS + _GEN_FIELDS:
                    row[f] = float("nan")
            rows[method].append(row)
        runtimes[method] = time.perf_counter() - start
    return rows, runtimes


def write_bench_tables(rows, runtimes, out):
    out = Path(out)
    summary = []
    for method, method_rows in rows.items():
        _write_csv(out / f"recon_{method}.csv",
                   ["asset_id", "class_id", "status", *_RECON_FIELDS], method_rows)
        _write_csv(out / f"gen_{method}.csv",
                   ["asset_id", "class_id", "status", *_GEN_FIELDS], method_rows)
        ok = [r for r in method_rows if r["status"] == "ok"]
        agg = {"method": method, "n_ok": len(ok), "n_total": len(method_rows)}
        for f in _RECON_FIELDS + _GEN_FIELDS:
            vals = [r[f] for r in ok]
            agg[f"mean_{f}"] = float(np.mean(vals)) if vals else float("nan")
        for f in ("iou_pres", "fscore_02_pres"):
            vals = [r[f] for r in ok]
            agg[f"median_{f}"] = float(np.median(vals)) if vals else float("nan")
        summary.append(agg)
    header = list(summary[0].keys()) if summary else ["method"]
    _write_csv(out / "summary.csv", header, summary)
    (out / "runtime.json").write_text(
        json.dumps({m: round(s, 3) for m, s in runtimes.items()}, sort_keys=True) + "\n")


def cmd_bench(cfg):
    out = _snapshot(cfg, cfg["out"])
    rows, runtimes = run_benchmark(cfg)
    write_bench_tables(rows, runtimes, out)
    for agg_line in Path(out / "summary.csv").read_text().splitlines():
        print(agg_line)
    return 0


def _preserved_iou(result_occ, gt, mask):
    pred = result_occ & mask.preserved
    ref = gt.occupancy & mask.preserved
    union = int((pred | ref).sum())
    inter = int((pred & ref).sum())
    tot = int(pred.sum() + ref.sum())
    return (inter / union if union else 1.0,
            2.0 * inter / tot if tot else 1.0)


def _ablate_variants(cfg):
    for variant in cfg["variants"]:
        if variant == "full":
            yield ("full", "spectral", cfg["seedopt"]["lr_sparse"], tuple(cfg["seedopt"]["lambdas"]))
        elif variant == "no-spectral":
            yield ("no-spectral", "direct", cfg["seedopt"]["lr_sparse"], tuple(cfg["seedopt"]["lambdas"]))
        elif variant == "no-gauss":
            yield ("no-gauss", "spectral", cfg["seedopt"]["lr_sparse"], (0.0, 0.0, 0.0, 0.0))
        elif variant == "lr-sweep":
            for lr in cfg["lr_values"]:
                yield (f"lr-sweep-spectral-{lr:g}", "spectral", float(lr), tuple(cfg["seedopt"]["lambdas"]))
                yield (f"lr-sweep-direct-{lr:g}", "direct", float(lr), tuple(cfg["seedopt"]["lambdas"]))
        else:
            raise ConfigError(f"unknown ablation variant {variant!r}")


def cmd_ablate(cfg):
    out = _snapshot(cfg, cfg["out"])
    records = _bench_setup(cfg)
    if not 0 <= cfg["asset_index"] < len(records):
        raise ConfigError(f"asset_index {cfg['asset_index']} outside manifest")
    net_s, net_l = _load_nets(cfg)
    rec = records[cfg["asset_index"]]
    asset = shapes.asset_from_record(rec, cfg["side"])
    mask = shapes.make_half_mask(Rng(derive_seed(cfg["seed"], "mask")), cfg["side"])
    target = seedopt.ObservationTarget(shapes.encode_sparse_target(asset), mask)
    sc = sampler.SamplerConfig(steps=cfg["sampler"]["steps"], seed=cfg["seed"])

    rows = []
    for variant, space, lr, lambdas in _ablate_variants(cfg):
        for j in range(cfg["n_seeds"]):
            run_seed = derive_seed(cfg["seed"], f"ablate/{j}")
            so = seedopt.ConfigSeedOpt(
                t_opt=cfg["seedopt"]["t_opt"], lr_sparse=lr,
                lr_slat=cfg["seedopt"]["lr_slat"], lambdas=lambdas,
                moment_scope=cfg["seedopt"]["moment_scope"],
                param_space=space, seed=run_seed,
            )
            row = {"variant": variant, "param_space": space, "lr": lr,
                   "seed_index": j, "seed": run_seed, "diverged_step": -1,
                   "final_recon": float("nan"), "final_dist": float("nan"),
                   "sigma_dev": float("nan"), "iou_pres": float("nan"),
                   "dice_pres": float("nan")}
            try:
                state = seedopt.optimize_sparse_seed(net_s, target, so, rec.class_id)
                final = state.logs[-1]
                row["final_recon"] = final["recon_loss"]
                row["final_dist"] = final["dist_loss"]
                row["sigma_dev"] = abs(final["sigma"] - 1.0)
                grid = sampler.euler_sample(net_s, state.grid, rec.class_id, sc)
                pos = shapes.decode_occupancy(grid)
                occ = np.zeros((cfg["side"],) * 3, dtype=bool)
                if pos.size:
                    occ[tuple(pos.T)] = True
                row["iou_pres"], row["dice_pres"] = _preserved_iou(occ, asset, mask)
            except SlatpaintError as exc:
                row["diverged_step"] = getattr(exc, "step", -2)
                row["status"] = type(exc).__name__
            rows.append(row)
    _write_csv(out / "ablate.csv",
               ["variant", "param_space", "lr", "seed_index", "seed", "diverged_step",
                "final_recon", "final_dist", "sigma_dev", "iou_pres", "dice_pres"],
               rows)
    print(f"wrote {len(rows)} ablation rows to {out / 'ablate.csv'}")
    return 0


def cmd_render(cfg):
    out = _snapshot(cfg, cfg["out"])
    records = _bench_setup(cfg)
    indices = cfg["indices"] if cfg["indices"] is not None else list(range(len(records)))
    for i in indices:
        if not 0 <= int(i) < len(records):
            raise ConfigError(f"render index {i} outside manifest")
        asset = shapes.asset_from_record(records[int(i)], cfg["side"])
        asset_id = f"asset_{int(i):04d}"
        shapes.export_ply(asset, out / f"{asset_id}.ply")
        for axis in ("x", "y", "z"):
            for kind in ("depth", "normal", "appearance"):
                image = metrics.render_ortho(asset, axis, kind)
                if kind == "depth":
                    metrics.write_pgm(image, out / f"{asset_id}_{axis}_{kind}.pgm")
                else:
                    metrics.write_ppm(image, out / f"{asset_id}_{axis}_{kind}.ppm")
    print(f"rendered {len(indices)} assets to {out}")
    return 0


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "generate": cmd_generate,
    "inpaint": cmd_inpaint,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "render": cmd_render,
}


def run(command, config_path, seed=None, out=None, method=None) -> int:
    cfg = load_config(command, config_path, {"seed": seed, "out": out, "method": method})
    return _DISPATCH[command](cfg)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="slatpaint",
        description="seed-optimized 3D voxel inpainting experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--method", default=None, help="override method selection")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return run(args.command, args.config, args.seed, args.out, args.method)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SlatpaintError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
