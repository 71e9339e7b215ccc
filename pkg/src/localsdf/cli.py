"""Command-line driver: ``gen``, ``reconstruct``, ``evaluate``, ``check-init``.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 numerical failure, 5 empty result.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import errors
from .fileio import load_points, save_points
from .losses import LossBreakdown
from .metrics import DEFAULT_SAMPLES, DEFAULT_THRESHOLD, compare_meshes
from .mlp import init_deviation
from .pipeline import mesh_from_model
from .pointcloud import sample_synthetic
from .reconstruct import export_mesh, load_trimesh, worker_count
from .trainer import (TrainingConfig, coerce_field, parse_value, read_config_file, save_model,
                      train)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_EMPTY = 0, 2, 3, 4, 5

GRID_DEFAULTS = {"resolution": 128, "pad": 0.05, "sign_samples": 128}

log = logging.getLogger("localsdf")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def parse_shape(text: str):
    """``sphere:0.5``, ``torus:1,0.25`` or ``box:0.5`` / ``box:0.5,0.3,0.2``."""
    name, _, rest = text.partition(":")
    if not rest:
        raise UsageError(f"shape {text!r} needs parameters, e.g. sphere:0.5")
    try:
        params = [float(v) for v in rest.split(",")]
    except ValueError:
        raise UsageError(f"bad shape parameters in {text!r}") from None
    return name, params


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> int:
    name, params = parse_shape(args.shape)
    try:
        pts = sample_synthetic(name, params, args.n, args.sigma, args.seed)
    except errors.BadShapeParam as exc:
        raise UsageError(str(exc)) from None
    save_points(pts, args.out)
    print(f"n={len(pts)} shape={args.shape} sigma={args.sigma} out={args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- reconstruct

def build_settings(args):
    """Merge profile, config file and ``--set`` overrides into (TrainingConfig, grid dict)."""
    base = TrainingConfig.paper() if args.profile == "paper" else TrainingConfig.desk()
    train_over, grid = {}, dict(GRID_DEFAULTS)
    sections = read_config_file(args.config) if args.config else {}
    unknown_sections = set(sections) - {"train", "grid"}
    if unknown_sections:
        raise UsageError(f"unknown config sections {sorted(unknown_sections)}")
    pairs = list(sections.get("train", {}).items()) + list(sections.get("grid", {}).items())
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        pairs.append((key.strip(), parse_value(value.strip())))
    for key, value in pairs:
        if key in GRID_DEFAULTS:
            grid[key] = type(GRID_DEFAULTS[key])(value)
            continue
        try:
            train_over[key] = coerce_field(TrainingConfig, key, value)
        except (KeyError, ValueError, TypeError) as exc:
            raise UsageError(str(exc)) from None
    if args.seed is not None:
        train_over["seed"] = args.seed
    if args.resolution is not None:
        grid["resolution"] = args.resolution
    try:
        cfg = base.replace(**train_over)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    return cfg, grid


class CsvLog:
    def __init__(self, path):
        self.path = path
        self.rows = []
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(("iteration",) + LossBreakdown.FIELDS)

    def __call__(self, it, b: LossBreakdown):
        self._w.writerow([it] + [repr(v) for v in b.as_row()])
        self.rows.append(dict(iteration=it, **{k: getattr(b, k) for k in LossBreakdown.FIELDS}))
        log.info("iter %d modeling %.4g total %.4g", it, b.modeling, b.total)

    def close(self):
        self._fh.close()


def cmd_reconstruct(args) -> int:
    cfg, grid = build_settings(args)
    try:
        worker_count()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    points = load_points(args.input)
    out = Path(args.out)
    stem = out.with_suffix("")
    ckpt = Path(args.checkpoint) if args.checkpoint else stem.with_suffix(".ckpt")
    log_path = Path(args.log) if args.log else Path(f"{stem}.train.csv")
    sink = CsvLog(log_path)
    t0 = time.time()
    try:
        model = train(points, cfg, sink)
    finally:
        sink.close()
    graph, mesh = mesh_from_model(model, grid["resolution"], grid["sign_samples"], grid["pad"])
    save_model(model, ckpt)
    if args.graph_dump:
        Path(args.graph_dump).write_text(graph.to_json())
    if not args.no_figures:
        from .plotting import plot_training_log
        plot_training_log(sink.rows, log_path.with_suffix(".png"))
    final = sink.rows[-1] if sink.rows else None
    if final:
        print("final " + " ".join(f"{k}={final[k]:.6g}" for k in LossBreakdown.FIELDS))
    flips = int((model.signs < 0).sum())
    if mesh.is_empty:
        print("error: extraction produced an empty mesh", file=sys.stderr)
        return EXIT_EMPTY
    export_mesh(mesh, out)
    print(f"mesh vertices={len(mesh.vertices)} triangles={len(mesh.triangles)} "
          f"euler={mesh.euler_characteristic()} watertight={mesh.is_watertight()} "
          f"flipped_subfields={flips}/{len(model.signs)} seconds={time.time() - t0:.1f}")
    print(f"wrote {out} {ckpt} {log_path}")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args) -> int:
    a = load_trimesh(args.mesh_a)
    b = load_trimesh(args.mesh_b)
    try:
        report = compare_meshes(a, b, args.threshold, args.samples, args.seed)
    except errors.DegenerateMesh as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    w = csv.writer(sys.stdout)
    w.writerow(report.HEADER)
    w.writerow([f"{report.cd:.8g}", f"{report.nc:.8g}", f"{report.fscore:.8g}",
                report.threshold, report.sample_count])
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            cw = csv.writer(fh)
            cw.writerow(report.HEADER)
            cw.writerow([repr(v) for v in report.as_row()])
    return EXIT_OK


# ---------------------------------------------------------------- check-init

def cmd_check_init(args) -> int:
    center = np.array(args.center, dtype=np.float64)
    if center.shape != (3,):
        raise UsageError("--center takes three numbers")
    rows = []
    sweep = args.sweep or []
    try:
        stats = init_deviation(args.widths, args.latent_dim, args.radius, center, args.trials,
                               args.seed, args.sigma_z)
        for width in sweep:
            errs = [init_deviation([width] * len(args.widths), args.latent_dim, args.radius, center,
                                   args.trials, args.seed + run, args.sigma_z)["mean"]
                    for run in range(args.runs)]
            rows.append((width, float(np.median(errs))))
    except (errors.BadArchitecture, errors.BadRadius) as exc:
        raise UsageError(str(exc)) from None
    w = csv.writer(sys.stdout)
    w.writerow(("widths", "mean_abs_error", "max_abs_error", "center_value", "center_error"))
    w.writerow(["x".join(map(str, args.widths)), f"{stats['mean']:.8g}", f"{stats['max']:.8g}",
                repr(stats["center_value"]), repr(stats["center_error"])])
    if rows:
        w.writerow(("sweep_width", f"median_mean_abs_error_over_{args.runs}_runs"))
        for width, err in rows:
            w.writerow((width, f"{err:.8g}"))
    if args.report_dir:
        from .plotting import plot_init_check, plot_width_sweep
        out = Path(args.report_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "check_init.csv", "w", newline="") as fh:
            cw = csv.writer(fh)
            cw.writerow(("distance", "abs_error"))
            cw.writerows(zip(stats["distance"].tolist(), stats["error"].tolist()))
        plot_init_check(stats["distance"], stats["error"], out / "check_init.png", args.radius)
        if rows:
            with open(out / "width_sweep.csv", "w", newline="") as fh:
                cw = csv.writer(fh)
                cw.writerow(("width", "median_mean_abs_error"))
                cw.writerows(rows)
            plot_width_sweep([r[0] for r in rows], [r[1] for r in rows], out / "width_sweep.png")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="localsdf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="sample a synthetic point cloud")
    g.add_argument("--shape", required=True, help="sphere:R | torus:R,r | box:h or box:hx,hy,hz")
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--sigma", type=float, default=0.0, help="Gaussian noise std per coordinate")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("reconstruct", help="reconstruct a mesh from a point cloud")
    r.add_argument("--input", required=True, help="xyz, ply or obj point file")
    r.add_argument("--out", required=True, help="output mesh (.ply or .obj)")
    r.add_argument("--checkpoint", help="model checkpoint path (default: <out>.ckpt)")
    r.add_argument("--log", help="training log CSV (default: <out>.train.csv)")
    r.add_argument("--profile", choices=("desk", "paper"), default="desk")
    r.add_argument("--config", help="INI file with [train] and [grid] sections")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
    r.add_argument("--seed", type=int)
    r.add_argument("--resolution", type=int, help="marching cubes grid resolution per axis")
    r.add_argument("--graph-dump", help="write the sign graph as JSON")
    r.add_argument("--no-figures", action="store_true", help="skip the loss-curve PNG")
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", help="CD / NC / F-score between two meshes")
    e.add_argument("mesh_a")
    e.add_argument("mesh_b")
    e.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    e.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--csv", help="also write the report row to this CSV file")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("check-init", help="measure the geometric initialization against the sphere SDF")
    c.add_argument("--widths", type=_ints, default=[512] * 5, help="hidden widths, e.g. 512,512,512,512,512")
    c.add_argument("--latent-dim", type=int, default=64)
    c.add_argument("--radius", type=float, default=1.0)
    c.add_argument("--center", type=_floats, default=[0.0, 0.0, 0.0])
    c.add_argument("--trials", type=int, default=1000)
    c.add_argument("--sigma-z", type=float, default=1e-3)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--sweep", type=_ints, help="also report widths, e.g. 64,256,1024")
    c.add_argument("--runs", type=int, default=3, help="runs per sweep width (median reported)")
    c.add_argument("--report-dir", help="write CSV samples and PNG figures here")
    c.set_defaults(func=cmd_check_init)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, errors.ParseError, errors.EmptyCloud, errors.VersionMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except errors.NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (errors.CountOutOfRange, errors.AlphaTooSmall) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (errors.DegenerateCloud, errors.SingularFit) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
