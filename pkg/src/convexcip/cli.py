"""Command line front end.

Subcommands: ``simulate``, ``invert``, ``sweep``, ``render``, ``metrics``.
Every :class:`~convexcip.config.InverseConfig` field is also a flag
(``--lam 2``, ``--phantom SZ``).  Exit status: 0 success, 2 invalid input,
1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, InverseConfig, load_config
from .data import add_noise
from .fieldio import ParseError, read_dataset, read_field, render_field, write_dataset, write_field
from .pipeline import invert, make_phantom, simulate
from .reconstruct import metrics

log = logging.getLogger("convexcip")

SWEEP_AXES = {"Nt": "Nt", "epsilon": "epsilon", "lambda": "lam", "sigma": "sigma",
              "amplitude": "amplitude"}


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file with [problem]/[data]/[forward]/... sections")
    g = p.add_argument_group("configuration overrides")
    for f in dataclasses.fields(InverseConfig):
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", default=None,
                       metavar=f.name.upper())


def _config(args) -> InverseConfig:
    over = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return load_config(args.config, over)


def _snapshot(cfg: InverseConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())


def cmd_simulate(args) -> int:
    cfg = _config(args)
    ds = simulate(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, ds)
    out.with_suffix(".ini").write_text(cfg.to_ini())
    log.info("wrote %s (%d times, g0 range %.3e..%.3e)", out, len(ds.times), ds.g0.min(), ds.g0.max())
    return 0


def _write_result(res, cfg: InverseConfig, out: Path):
    _snapshot(cfg, out)
    grid = make_phantom(cfg).grid
    write_field(out / "a_comp.csv", grid, res.a_comp)
    img = np.maximum(res.a_comp, 0.0) if cfg.clip else res.a_comp
    render_field(out / "a_comp", img)
    res.state.write_log(out / "iterations.csv")
    record = {"metrics": res.metrics.as_dict() if res.metrics else None,
              "diagnostics": res.diagnostics}
    (out / "metrics.json").write_text(json.dumps(record, indent=2, default=float))
    return record


def cmd_invert(args) -> int:
    cfg = _config(args)
    ds = read_dataset(args.dataset)
    res = invert(ds, cfg, make_phantom(cfg))
    record = _write_result(res, cfg, Path(args.out or cfg.output_dir))
    print(json.dumps(record, indent=2, default=float))
    return 0


def _sweep_one(payload):
    cfg_dict, ds_path, out = payload
    cfg = InverseConfig(**cfg_dict)
    try:
        if ds_path is None:
            ds = simulate(cfg)
        else:
            ds = read_dataset(ds_path)
            if cfg.sigma > 0:
                ds = add_noise(ds, cfg.sigma, cfg.seed, cfg.noise_mode)
        res = invert(ds, cfg, make_phantom(cfg))
        rec = _write_result(res, cfg, Path(out))
        return {"status": "ok", **(rec["metrics"] or {}), **rec["diagnostics"]}
    except Exception as exc:  # recorded, sweep continues
        return {"status": f"failed: {type(exc).__name__}: {exc}"}


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep.values", "empty value list")
    field = SWEEP_AXES[args.axis]
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds_path = args.dataset
    if field == "amplitude":
        ds_path = None
    elif ds_path is None:
        clean = simulate(cfg, noisy=False)
        ds_path = out / "dataset_clean.csv"
        write_dataset(ds_path, clean)
    elif field == "sigma" and read_dataset(ds_path).provenance.get("kind") != "clean":
        raise ConfigError("sweep.dataset", "a sigma sweep needs a clean dataset")
    jobs = []
    for v in values:
        run_cfg = load_config(None, {**dataclasses.asdict(cfg), field: v.strip()}, environ={})
        jobs.append((dataclasses.asdict(run_cfg), None if ds_path is None else str(ds_path),
                     str(out / f"{args.axis}_{v.strip()}")))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    keys = ["value", "status", "rel_L2_err", "max_value", "max_value_rel_err",
            "iou_at_half_max", "centroid_offset", "iterations", "grad_norm_final", "wall_s"]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, keys, extrasaction="ignore")
        w.writeheader()
        for v, row in zip(values, rows):
            w.writerow({"value": v.strip(), **row})
    print((out / "summary.csv").read_text(), end="")
    return 0


def cmd_render(args) -> int:
    grid, values, meta = read_field(args.field)
    if meta["kind"] == "stack":
        values = values[args.layer]
    for p in render_field(Path(args.out) if args.out else Path(args.field).with_suffix(""), values):
        print(p)
    return 0


def cmd_metrics(args) -> int:
    cfg = _config(args)
    grid, values, _ = read_field(args.field)
    ph = make_phantom(cfg, grid)
    print(json.dumps(metrics(values, ph, clip=cfg.clip).as_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="convexcip", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate boundary data")
    s.add_argument("--out", required=True, help="dataset file to write")
    _add_config_flags(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("invert", help="reconstruct the potential from a dataset")
    s.add_argument("dataset")
    s.add_argument("--out", help="output directory (default: output_dir)")
    _add_config_flags(s)
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("sweep", help="repeat inversions along one parameter axis")
    s.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--dataset", help="clean dataset to reuse (not for amplitude sweeps)")
    s.add_argument("--out", help="output directory (default: output_dir)")
    _add_config_flags(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("render", help="write a field file as PGM image(s)")
    s.add_argument("field")
    s.add_argument("--out", help="output path prefix")
    s.add_argument("--layer", type=int, default=-1, help="layer of a stack file")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("metrics", help="score a field against the configured phantom")
    s.add_argument("field")
    _add_config_flags(s)
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level report
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
