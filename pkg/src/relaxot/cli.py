"""
Command-line front end.

Subcommands ``solve``, ``transfer``, ``barycenter`` and ``normalize``. Every
input is read and every parameter checked before the output directory is
touched. Exit codes: 0 success, 1 solver failure, 2 I/O or config error.
"""

import argparse
import hashlib
import json
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .barycenter import BarycenterProblem, bcd_barycenter
from .color import (ImageIOError, NormalizeParams, TransferParams, channel_distance,
                    color_normalize, color_transfer, load_image, save_image, solve_palettes)
from .geometry import read_cloud_csv, write_cloud_csv
from .polytope import RelaxationBounds, coupling_violation, write_coupling_csv
from .regularized import SolverError

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def _floats(text, n=None, name="value"):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{name}: expected comma-separated numbers, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"{name}: expected {n} numbers, got {len(vals)}")
    return vals


def _kappa(text):
    return tuple(_floats(text, 4, "--kappa"))


def _rho(text):
    return _floats(text, None, "--rho")


def _common(p, images):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0,
                   help="regularization weight, sets lambda_x = lambda_y")
    p.add_argument("--reg", choices=("sobolev", "tv"), default="sobolev")
    p.add_argument("--knn", type=int, default=4, help="neighbours of the graphs")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    if images:
        p.add_argument("--clusters", type=int, default=400, help="palette size N")


def _pairwise(p):
    p.add_argument("--kappa", type=_kappa, default=(1.0, 1.0, 1.0, 1.0),
                   help="kx,KX,ky,KY")
    p.add_argument("--mass", type=float, default=None, help="total mass M (default N)")
    p.add_argument("--lambda-x", type=float, default=None)
    p.add_argument("--lambda-y", type=float, default=None)
    p.add_argument("--solver", choices=("flow", "fw", "tv-lp", "pd"), default="fw")
    p.add_argument("--k-cap", type=float, default=None,
                   help="column cap k; sets kappa = (1, 1, 0, k)")


def _group(p):
    p.add_argument("--rho", type=_rho, default=None, help="weights r1,r2,... (default uniform)")
    p.add_argument("--k-cap", type=float, default=1.0, help="column cap k >= 1")
    p.add_argument("--outer-iters", type=int, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="relaxot", description=__doc__.strip().splitlines()[0])
    ap.add_argument("--version", action="version", version=f"relaxot {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="regularized relaxed coupling between two CSV clouds")
    p.add_argument("x", help="CSV point cloud X")
    p.add_argument("y", help="CSV point cloud Y")
    _common(p, False)
    _pairwise(p)

    p = sub.add_parser("transfer", help="color transfer from a target image to a source image")
    p.add_argument("source", help="PNG image to recolor")
    p.add_argument("target", help="PNG image providing the colors")
    _common(p, True)
    _pairwise(p)

    p = sub.add_parser("barycenter", help="regularized relaxed barycenter of CSV clouds")
    p.add_argument("inputs", nargs="+", help="CSV point clouds (at least two)")
    _common(p, False)
    _group(p)

    p = sub.add_parser("normalize", help="color normalization of several images")
    p.add_argument("inputs", nargs="+", help="PNG images (at least two)")
    _common(p, True)
    _group(p)
    p.add_argument("--map-k-cap", type=float, default=None,
                   help="column cap of the per-image maps (default --k-cap)")
    p.add_argument("--map-lambda", type=float, default=None,
                   help="regularization of the per-image maps (default --lambda)")
    return ap


# --- helpers ----------------------------------------------------------------

def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _inputs(paths):
    out = []
    for p in paths:
        path = Path(p)
        if not path.is_file():
            raise ConfigError(f"input file not found: {p}")
        out.append({"path": str(path), "sha256": sha256(path)})
    return out


def _read_cloud(path):
    try:
        return read_cloud_csv(path)
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot read point cloud {path}: {err}")


def _read_image(path):
    try:
        return load_image(path)
    except (ImageIOError, ValueError) as err:
        raise ConfigError(str(err))


def _weights(rho, n):
    if rho is None:
        return np.full(n, 1.0 / n)
    rho = np.asarray(rho, dtype=float)
    if len(rho) != n:
        raise ConfigError(f"--rho has {len(rho)} weights for {n} inputs")
    if np.any(rho < 0) or rho.sum() <= 0:
        raise ConfigError("--rho must be nonnegative with a positive sum")
    if abs(rho.sum() - 1) > 1e-9:
        warnings.warn(f"weights sum to {rho.sum():g}; normalizing to one")
        rho = rho / rho.sum()
    return rho


def _pair_params(args, n):
    kappa = args.kappa
    if args.k_cap is not None:
        kappa = (1.0, 1.0, 0.0, args.k_cap)
    lx = args.lam if args.lambda_x is None else args.lambda_x
    ly = args.lam if args.lambda_y is None else args.lambda_y
    if args.solver == "pd":
        ly = 0.0
    kw = {}
    if args.max_iters is not None:
        kw["max_iter"] = args.max_iters
    if args.tol is not None:
        kw["tol"] = args.tol
    params = TransferParams(n_clusters=n, n_neighbors=args.knn, kappa=tuple(kappa),
                            mass=args.mass, lambda_x=lx, lambda_y=ly, reg=args.reg,
                            solver=args.solver, seed=args.seed, **kw)
    try:
        params.validate()
    except ValueError as err:
        raise ConfigError(str(err))
    return params


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o).__name__)


def _manifest(args, inputs, params, **extra):
    return {"command": args.command, "argv": sys.argv[1:], "version": __version__,
            "python": platform.python_version(), "numpy": np.__version__,
            "inputs": inputs, "params": params, "seed": args.seed, **extra}


def _map_or_nan(Sigma, Y):
    r = Sigma.sum(1)
    Z = np.full((Sigma.shape[0], Y.shape[1]), np.nan)
    ok = r > 1e-12
    Z[ok] = (Sigma[ok] @ Y) / r[ok, None]
    return Z, np.flatnonzero(~ok)


# --- subcommands ------------------------------------------------------------

def cmd_solve(args):
    inputs = _inputs([args.x, args.y])
    X, Y = _read_cloud(args.x), _read_cloud(args.y)
    if X.shape != Y.shape:
        raise ConfigError(f"clouds must share N and d, got {X.shape} and {Y.shape}")
    params = _pair_params(args, len(X))
    out = Path(args.out)
    t0 = time.perf_counter()
    Sigma, report = solve_palettes(X, Y, params)
    wall = 1e3 * (time.perf_counter() - t0)
    bounds = RelaxationBounds.from_kappa(params.kappa, len(X), params.mass)
    Z, empty = _map_or_nan(Sigma, Y)
    out.mkdir(parents=True, exist_ok=True)
    write_coupling_csv(out / "coupling.csv", Sigma)
    write_cloud_csv(out / "map.csv", Z)
    report.to_json(out / "report.json")
    _write_json(out / "manifest.json", _manifest(
        args, inputs, vars(params), energy=report.energy[-1] if report.energy else None,
        bound_violation=coupling_violation(Sigma, bounds), rows_without_mass=empty,
        timings={"solve_ms": wall}))
    return EXIT_OK


def cmd_transfer(args):
    inputs = _inputs([args.source, args.target])
    X0, Y0 = _read_image(args.source), _read_image(args.target)
    n = args.clusters
    if n > min(X0.n_pixels, Y0.n_pixels):
        raise ConfigError(f"--clusters {n} exceeds the number of pixels")
    params = _pair_params(args, n)
    if params.kappa[0] <= 0:
        raise ConfigError("color transfer needs k_X > 0")
    res = color_transfer(X0, Y0, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(res.image, out / "transfer.png")
    write_cloud_csv(out / "palette_source.csv", res.palette_x.centers)
    write_cloud_csv(out / "palette_target.csv", res.palette_y.centers)
    write_coupling_csv(out / "coupling.csv", res.coupling)
    res.report.to_json(out / "report.json")
    _write_json(out / "manifest.json", _manifest(
        args, inputs, vars(params), energy=res.report.energy,
        kmeans_subsampled=[res.palette_x.subsampled, res.palette_y.subsampled],
        n_clamped=res.n_clamped, n_pixels=X0.n_pixels,
        palette_distance={"before": channel_distance(res.palette_x.centers, res.palette_y.centers),
                          "after": channel_distance(res.transfer_map.images, res.palette_y.centers)},
        timings=res.timings))
    return EXIT_OK


def _group_common(args, n_in):
    if n_in < 2:
        raise ConfigError("at least two inputs are required")
    if args.k_cap < 1:
        raise ConfigError("--k-cap must be >= 1")
    return _weights(args.rho, n_in)


def cmd_barycenter(args):
    rho = _group_common(args, len(args.inputs))
    inputs = _inputs(args.inputs)
    clouds = [_read_cloud(p) for p in args.inputs]
    pq = (2, 2) if args.reg == "sobolev" else (1, 1)
    try:
        problem = BarycenterProblem(clouds, rho, args.lam, args.k_cap, pq, args.knn)
    except ValueError as err:
        raise ConfigError(str(err))
    kw = {}
    if args.outer_iters is not None:
        kw["outer_iters"] = args.outer_iters
    if args.max_iters is not None:
        kw["inner_max_iter"] = args.max_iters
    if args.tol is not None:
        kw["tol"] = args.tol
    state = bcd_barycenter(problem, **kw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state.save(out, "barycenter")
    params = {"rho": rho, "lam": args.lam, "k": args.k_cap, "pq": pq, "n_neighbors": args.knn, **kw}
    _write_json(out / "manifest.json", _manifest(
        args, inputs, params, energy=state.energy, converged=state.converged,
        timings={"bcd_ms": state.wall_ms}))
    return EXIT_OK


def cmd_normalize(args):
    rho = _group_common(args, len(args.inputs))
    if args.map_k_cap is not None and args.map_k_cap < 1:
        raise ConfigError("--map-k-cap must be >= 1")
    inputs = _inputs(args.inputs)
    images = [_read_image(p) for p in args.inputs]
    if args.clusters > min(im.n_pixels for im in images):
        raise ConfigError(f"--clusters {args.clusters} exceeds the number of pixels")
    kw = {}
    if args.outer_iters is not None:
        kw["outer_iters"] = args.outer_iters
    if args.max_iters is not None:
        kw["inner_max_iter"] = args.max_iters
    if args.tol is not None:
        kw["outer_tol"] = args.tol
    params = NormalizeParams(n_clusters=args.clusters, n_neighbors=args.knn, k=args.k_cap,
                             lam=args.lam, reg=args.reg, seed=args.seed, map_k=args.map_k_cap,
                             map_lambda=args.map_lambda, **kw)
    res = color_normalize(images, rho, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for r, (path, im) in enumerate(zip(args.inputs, res.images)):
        name = f"normalized_{r}_{Path(path).stem}.png"
        save_image(im, out / name)
        names.append(name)
    res.state.save(out, "barycenter")
    _write_json(out / "manifest.json", _manifest(
        args, inputs, {"rho": rho, **vars(params)}, outputs=names,
        energy=res.state.energy, converged=res.state.converged,
        kmeans_subsampled=[p.subsampled for p in res.palettes], n_clamped=res.n_clamped,
        palette_distance=[{"before": channel_distance(p.centers, res.barycenter),
                           "after": channel_distance(T.images, res.barycenter)}
                          for p, T in zip(res.palettes, res.maps)],
        timings=res.timings))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "transfer": cmd_transfer,
            "barycenter": cmd_barycenter, "normalize": cmd_normalize}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_OK if err.code in (0, None) else EXIT_CONFIG
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
        try:
            return COMMANDS[args.command](args)
        except ConfigError as err:
            print(f"relaxot {args.command}: config error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        except OSError as err:
            print(f"relaxot {args.command}: I/O error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        except (SolverError, RuntimeError, ValueError, np.linalg.LinAlgError) as err:
            print(f"relaxot {args.command}: solver error: {err}", file=sys.stderr)
            return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
