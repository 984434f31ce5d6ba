"""Command-line front end: synth, sample, curvature, topo, bench.

Every stochastic choice is funneled through one --seed; per-stage streams
are split from it, so identical invocations give byte-identical outputs.
--threads only changes wall time, never numbers.  Reports are CSV or JSON
(by extension), each with a rendered figure next to it unless --no-figures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import cloud_io, figures, meshgen, synthetic, topology
from . import pipeline as pl
from .errors import GbtopoError

EXIT_BAD_INPUT = 2
EXIT_FAILURE = 1


def _add_pipeline_flags(p):
    p.add_argument("--config", default=None,
                   help="JSON file of flag defaults (explicit flags still win)")
    p.add_argument("--k", type=int, default=20, help="neighborhood size (default 20)")
    p.add_argument("--grid-res", type=int, default=64, help="Voronoi grid resolution per axis")
    p.add_argument("--bbox-scale", type=float, default=1.1, help="tangent bounding-square scale")
    p.add_argument("--solver", choices=["sylvester", "pinv", "det"], default="sylvester")
    p.add_argument("--normals", choices=["auto", "pca", "input"], default="auto",
                   help="normal source: cloud normals when present (auto), PCA, or input only")
    p.add_argument("--orient", choices=["mst_propagation", "from_input", "outward_centroid"],
                   default="mst_propagation", help="PCA normal orientation method")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: GBTOPO_THREADS or 1)")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("GBTOPO_THREADS", "1")))


def _config(args) -> pl.PipelineConfig:
    return pl.PipelineConfig(
        k=args.k,
        grid_resolution=args.grid_res,
        bbox_scale=args.bbox_scale,
        solver=args.solver,
        normals=args.normals,
        orient=args.orient,
        threads=_threads(args),
    )


def _load_input_cloud(args) -> cloud_io.PointCloud:
    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    suffix = path.suffix.lstrip(".").lower()
    if suffix in ("xyz", "ply"):
        try:
            return cloud_io.load_cloud(path)
        except cloud_io.ParseError:
            if suffix != "ply":
                raise
    if suffix in ("obj", "ply"):
        mesh = cloud_io.load_mesh(path)
        n = args.n if getattr(args, "n", None) else 10000
        return cloud_io.sample_mesh(mesh, n, scheme=getattr(args, "scheme", "uniform_area"),
                                    seed=getattr(args, "seed", 0))
    raise cloud_io.ParseError(f"unsupported input format {suffix!r}")


def _write_cloud(cloud, path):
    path = Path(path)
    if path.suffix.lower() == ".xyz":
        cloud_io.save_cloud_xyz(cloud, path)
    else:
        cloud_io.save_cloud_ply(cloud, path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.surface == "ellipsoid":
        spec = synthetic.EllipsoidSpec(args.a, args.b, args.c, args.n,
                                       scheme=args.scheme, seed=args.seed)
        cloud, gt = synthetic.sample_ellipsoid(spec)
    else:
        spec = synthetic.TorusSpec(args.R, args.r, args.n, scheme=args.scheme, seed=args.seed)
        cloud, gt = synthetic.sample_torus(spec)
    _write_cloud(cloud, args.output)
    print(f"wrote {cloud.n} points to {args.output} "
          f"(euler={gt.euler}, area={gt.total_area:.6g})")
    return 0


def cmd_sample(args) -> int:
    mesh = cloud_io.load_mesh(args.input)
    cloud = cloud_io.sample_mesh(mesh, args.n, scheme=args.scheme, seed=args.seed)
    if args.noise > 0:
        cloud = cloud_io.add_noise(cloud, cloud_io.NoiseSpec(sigma_fraction=args.noise,
                                                             seed=args.seed))
    _write_cloud(cloud, args.output)
    print(f"wrote {cloud.n} samples of {args.input} to {args.output} "
          f"(mesh euler={cloud_io.mesh_euler(mesh)})")
    return 0


def _error_rows(cloud, curv, est, name, args, elapsed):
    """Table-shaped rows; error columns present when ground truth channels are."""
    truth = cloud.scalar_channels.get("gaussian_true")
    max_err = mean_err = float("nan")
    if truth is not None:
        good = np.isfinite(curv.gaussian) & (curv.flags == 0)
        err = np.abs(curv.gaussian[good] - truth[good])
        if err.size:
            max_err = float(err.max())
            mean_err = float(err.mean())
    return cloud_io.ReportRow(
        model=name,
        method=args.solver,
        density=cloud.n,
        noise=getattr(args, "noise", 0.0),
        max_abs_err=max_err,
        mean_abs_err=mean_err,
        euler_estimate=est.euler,
        genus=est.genus,
        wall_time_s=elapsed,
    )


def cmd_curvature(args) -> int:
    cloud = _load_input_cloud(args)
    t0 = time.perf_counter()
    state = pl.build_state(cloud, _config(args))
    curv = pl.curvature_of(state)
    est = topology.euler_estimate(curv, state.areas)
    elapsed = time.perf_counter() - t0

    out = Path(args.output)
    row = _error_rows(cloud, curv, est, Path(args.input).stem, args, elapsed)
    fmt = "json" if out.suffix.lower() == ".json" else "csv"
    cloud_io.write_report([row], out, fmt=fmt, timing=not args.no_timing)
    print(f"euler={est.euler:.6g} genus={est.genus} flagged={est.flags}")
    if curv.mean is None:
        print("solver 'det' produces Gaussian curvature only; mean/total omitted")

    if args.colormap_out:
        ch = dict(cloud.scalar_channels)
        ch["gaussian_curvature"] = np.where(np.isfinite(curv.gaussian), curv.gaussian, 0.0)
        if curv.mean is not None:
            ch["mean_curvature"] = np.where(np.isfinite(curv.mean), curv.mean, 0.0)
        colored = cloud_io.PointCloud(cloud.positions, cloud.normals, ch)
        cloud_io.export_colormapped_ply(colored, args.channel, args.colormap_out)
    if not args.no_figures:
        figures.save_curvature_figure(curv, out.with_suffix(".png"),
                                      truth=cloud.scalar_channels.get("gaussian_true"))
    return 0


def cmd_topo(args) -> int:
    cloud = _load_input_cloud(args)
    t0 = time.perf_counter()
    state = pl.build_state(cloud, _config(args))
    cfg = topology.OptimizeConfig(
        steps=args.steps,
        lr=args.lr,
        chi_gt=args.chi_gt,
        loss_weights=(args.w_match, args.w_well),
        refresh_every=args.refresh_every,
        seed=args.seed,
        optimize_positions=args.optimize_positions,
    )
    _, est, trace = topology.self_optimize(state, cfg)
    elapsed = time.perf_counter() - t0

    out = Path(args.output)
    row = cloud_io.ReportRow(
        model=Path(args.input).stem,
        method=args.solver,
        density=cloud.n,
        noise=getattr(args, "noise", 0.0),
        euler_estimate=est.euler,
        genus=est.genus,
        wall_time_s=elapsed,
    )
    fmt = "json" if out.suffix.lower() == ".json" else "csv"
    cloud_io.write_report([row], out, fmt=fmt, timing=not args.no_timing)
    if args.trace_out:
        trace.write_csv(args.trace_out)
        if not args.no_figures and trace.steps:
            figures.save_trace_figure(trace, Path(args.trace_out).with_suffix(".png"),
                                      chi_gt=args.chi_gt)
    print(f"euler={est.euler:.6g} genus_real={est.genus_real:.4g} genus={est.genus} "
          f"steps={len(trace.steps)} flagged={est.flags}")
    return 0


def _bench_cloud(run: dict, seed: int):
    n = int(run["n"])
    scheme = run.get("scheme", "uniform_area")
    if "mesh" in run:
        mesh = cloud_io.load_mesh(run["mesh"])
        cloud = cloud_io.sample_mesh(mesh, n, scheme=scheme, seed=seed)
    elif "synth" in run:
        s = run["synth"]
        surface = s["surface"]
        if surface in ("ellipsoid", "sphere"):
            a = float(s.get("a", 1.0))
            spec = synthetic.EllipsoidSpec(a, float(s.get("b", a)), float(s.get("c", a)),
                                           n, scheme=scheme if scheme != "random" else "parametric",
                                           seed=seed)
            cloud, _ = synthetic.sample_ellipsoid(spec)
        elif surface == "torus":
            spec = synthetic.TorusSpec(float(s["R"]), float(s["r"]), n,
                                       scheme=scheme, seed=seed)
            cloud, _ = synthetic.sample_torus(spec)
        else:
            raise ValueError(f"unknown synth surface {surface!r}")
    else:
        raise ValueError(f"run {run.get('name')!r} needs 'mesh' or 'synth'")
    noise = float(run.get("noise", 0.0))
    if noise > 0:
        cloud = cloud_io.add_noise(cloud, cloud_io.NoiseSpec(sigma_fraction=noise, seed=seed + 1))
    return cloud


def cmd_bench(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    try:
        import jsonschema

        schema_path = Path(__file__).parent / "schemas" / "manifest.schema.json"
        with open(schema_path) as fh:
            jsonschema.validate(manifest, json.load(fh))
    except ImportError:
        pass

    base_seed = int(manifest.get("seed", args.seed))
    threads = _threads(args)
    rows = []
    for ridx, run in enumerate(manifest["runs"]):
        repeats = int(run.get("repeats", 1))
        per_seed = []
        for rep in range(repeats):
            seed = base_seed + 1000 * ridx + rep
            t0 = time.perf_counter()
            try:
                cloud = _bench_cloud(run, seed)
                cfg = pl.PipelineConfig(
                    k=int(run.get("k", 20)),
                    grid_resolution=int(run.get("grid_resolution", 64)),
                    solver=run.get("solver", "sylvester"),
                    threads=threads,
                )
                state = pl.build_state(cloud, cfg)
                opt = topology.OptimizeConfig(
                    steps=int(run.get("steps", 0)),
                    lr=float(run.get("lr", 1e-2)),
                    chi_gt=run.get("chi_gt"),
                )
                _, est, _ = topology.self_optimize(state, opt)
                per_seed.append((est.euler, est.genus, time.perf_counter() - t0, ""))
            except (GbtopoError, ValueError, OSError) as exc:
                per_seed.append((float("nan"), float("nan"), time.perf_counter() - t0, str(exc)))
        eulers = np.array([p[0] for p in per_seed], dtype=float)
        ok = np.isfinite(eulers)
        mean_e = float(np.mean(eulers[ok])) if ok.any() else float("nan")
        std_e = float(np.std(eulers[ok])) if ok.any() else float("nan")
        rows.append(cloud_io.ReportRow(
            model=run.get("name", f"run{ridx}"),
            method=run.get("solver", "sylvester"),
            density=int(run["n"]),
            noise=float(run.get("noise", 0.0)),
            max_abs_err=std_e,  # spread over repeats
            mean_abs_err=mean_e,
            euler_estimate=mean_e,
            genus=per_seed[0][1],
            wall_time_s=float(np.sum([p[2] for p in per_seed])),
            error="; ".join(p[3] for p in per_seed if p[3]),
        ))
    out = Path(args.output)
    fmt = "json" if out.suffix.lower() == ".json" else "csv"
    cloud_io.write_report(rows, out, fmt=fmt, timing=not args.no_timing)
    if not args.no_figures:
        figures.save_bench_figure(rows, out.with_suffix(".png"))
    failures = sum(1 for r in rows if r.error)
    print(f"wrote {len(rows)} rows to {out} ({failures} rows with failures)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="gbtopo",
                                 description="Point-cloud curvature and topology estimation")
    sub = ap.add_subparsers(dest="command", required=True)
    registry = {}

    p = sub.add_parser("synth", help="sample an analytic surface with ground truth")
    surf = p.add_subparsers(dest="surface", required=True)
    pe = surf.add_parser("ellipsoid")
    pe.add_argument("--a", type=float, default=1.0)
    pe.add_argument("--b", type=float, default=1.0)
    pe.add_argument("--c", type=float, default=1.0)
    pt = surf.add_parser("torus")
    pt.add_argument("--R", type=float, default=5.0)
    pt.add_argument("--r", type=float, default=1.0)
    for q in (pe, pt):
        q.add_argument("--n", type=int, required=True)
        q.add_argument("--scheme", choices=["uniform_area", "parametric"], default="uniform_area")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("-o", "--output", required=True)
        q.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="sample a point cloud from a mesh")
    p.add_argument("input")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--scheme", choices=["uniform_area", "random"], default="uniform_area")
    p.add_argument("--noise", type=float, default=0.0,
                   help="Gaussian sigma as a fraction of the bbox diagonal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("curvature", help="curvature field, error report, colormapped cloud")
    p.add_argument("input")
    p.add_argument("--n", type=int, default=None, help="sample count when input is a mesh")
    p.add_argument("--scheme", choices=["uniform_area", "random"], default="uniform_area")
    _add_pipeline_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="report path (.csv or .json)")
    p.add_argument("--colormap-out", default=None, help="write a colormapped PLY here")
    p.add_argument("--channel", default="gaussian_curvature")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--no-timing", action="store_true", help="zero the wall-time column")
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("topo", help="Euler characteristic / genus with optional self-optimization")
    p.add_argument("input")
    p.add_argument("--n", type=int, default=None, help="sample count when input is a mesh")
    p.add_argument("--scheme", choices=["uniform_area", "random"], default="uniform_area")
    _add_pipeline_flags(p)
    p.add_argument("--steps", type=int, default=0, help="gradient-descent steps (0: estimate only)")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--chi-gt", type=float, default=None, help="supervise toward this Euler value")
    p.add_argument("--w-match", type=float, default=1.0)
    p.add_argument("--w-well", type=float, default=1.0)
    p.add_argument("--refresh-every", type=int, default=10)
    p.add_argument("--optimize-positions", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="report path (.csv or .json)")
    p.add_argument("--trace-out", default=None, help="per-step trace CSV")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(func=cmd_topo)

    p = sub.add_parser("bench", help="run a manifest of models/configs into one report")
    p.add_argument("manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(func=cmd_bench)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (GbtopoError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
