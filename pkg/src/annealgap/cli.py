"""Command-line front end: gap sweeps, anneals, scaling fits, EC3 statistics
and crossing reports, written as CSV/JSON with a config echo."""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    GEOMETRY_LIMIT,
    derive_seed,
    detect_crossings,
    ec3_sat_threshold,
    fit_gap_scaling,
)
from .dynamics import EvolutionError, landau_zener_path, success_curve
from .models import (
    AfmChainModel,
    ClassicalCostFunction,
    EC3Instance,
    LBitPath,
    build_annealing_path,
    ec3_to_cost,
    random_ec3,
    sample_lbit_model,
)
from .spectral import ConvergenceError, gap_sweep, refine_min_gap

MODELS = ("ec3", "ising-file", "afm-chain", "lbit", "lz")
EXIT_FAILURE = 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# formatting and output
# ---------------------------------------------------------------------------


def fmt(x) -> str:
    """17 significant digits for reals (round-trips doubles), plain ints."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


class CsvWriter:
    """Single writer for one CSV file; the first line echoes the run config."""

    def __init__(self, path, config: dict, header: list[str]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="\n", encoding="utf-8")
        self._fh.write("# " + json.dumps(_jsonable(config), sort_keys=True) + "\n")
        self._fh.write(",".join(header) + "\n")
        self._fh.flush()

    def row(self, values):
        self._fh.write(",".join(fmt(v) for v in values) + "\n")
        self._fh.flush()

    def marker(self, text: str):
        self._fh.write(f"# FAILED {text}\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def sidecar_path(out) -> Path:
    return Path(out).with_suffix(".json")


def write_sidecar(out, config: dict, min_gap=None, crossings=(), **extra):
    doc = {
        "config": config,
        "min_gap": {"param": min_gap[0], "gap": min_gap[1]} if min_gap else None,
        "crossings": [c.to_dict() for c in crossings],
        "version": __version__,
    }
    doc.update(extra)
    sidecar_path(out).write_text(dump_json(doc))


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' comments; keys use flag names."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = val
    return values


def run_config(args) -> dict:
    """The resolved RunConfig: every option that shaped the run."""
    skip = {"func", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"range must look like lo:hi, got {text!r}") from exc
    if not lo < hi:
        raise UsageError("range needs lo < hi")
    return lo, hi


def parse_floats(text: str | None) -> list[float]:
    if text is None or not text.strip():
        return []
    return [float(v) for v in text.split(",") if v.strip()]


def parse_ints(text: str | None) -> list[int]:
    return [int(v) for v in parse_floats(text)]


def parse_pairs(text: str) -> list[tuple[int, int]]:
    pairs = []
    for item in text.split(","):
        lo, hi = (int(v) for v in item.split("-"))
        pairs.append((lo, hi))
    return pairs


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------


def build_path(args, size: int | None = None):
    """(path, default range) for the configured model."""
    kind = args.model
    n = size if size is not None else args.n
    if kind == "afm-chain":
        L = size if size is not None else args.L
        if L is None:
            raise UsageError("afm-chain needs --L")
        model = AfmChainModel(L, args.h, args.gamma, periodic=not args.open)
        if args.param == "h":
            return model.path_in_h(), (-0.5, 0.5)
        return model.path_in_gamma(), (0.0, 2.0)
    if kind == "ec3":
        if args.instance:
            inst = EC3Instance.load(args.instance)
        else:
            if n is None:
                raise UsageError("ec3 needs --n or --instance")
            seed = args.seed if size is None else derive_seed(args.seed, n)
            inst = random_ec3(n, args.alpha, seed)
        cost, _ = ec3_to_cost(inst)
        return build_annealing_path(cost), (0.0, 1.0)
    if kind == "ising-file":
        if not args.instance:
            raise UsageError("ising-file needs --instance")
        return build_annealing_path(ClassicalCostFunction.load(args.instance)), (0.0, 1.0)
    if kind == "lbit":
        if n is None:
            raise UsageError("lbit needs --n")
        seed = args.seed if size is None else derive_seed(args.seed, n)
        model = sample_lbit_model(n, seed, series_order=args.series_order,
                                  decay_xi=args.decay_xi, ratio=args.ratio)
        return LBitPath(model, args.delta_lambda), (0.0, 0.5)
    if kind == "lz":
        return landau_zener_path(args.a, args.b), (0.0, 1.0)
    raise UsageError(f"unknown model {kind!r}")


def make_grid(args, default_range) -> np.ndarray:
    lo, hi = parse_range(args.range) if args.range else default_range
    if args.points < 2:
        raise UsageError("--points must be >= 2")
    return np.linspace(lo, hi, args.points)


def _sweep(path, grid, args, keep_vectors=False):
    """gap_sweep returning (profile or None, ConvergenceError or None); on failure the
    profile covers the grid points before the failing one."""
    try:
        prof = gap_sweep(path, grid, args.levels, keep_vectors=keep_vectors, tol=args.tol,
                         max_iter=args.max_iter, seed=args.solver_seed)
        return prof, None
    except ConvergenceError as exc:
        good = grid[grid < exc.param] if exc.param is not None else grid[:0]
        prof = None
        if len(good):
            prof = gap_sweep(path, good, args.levels, keep_vectors=keep_vectors, tol=args.tol,
                             max_iter=args.max_iter, seed=args.solver_seed)
        return prof, exc


def _refined_min(path, prof, args):
    i = int(np.argmin(prof.gaps))
    if 0 < i < len(prof.params) - 1 and prof.gaps[i] < min(prof.gaps[i - 1], prof.gaps[i + 1]):
        try:
            return refine_min_gap(path, prof.params[i - 1:i + 2], args.levels, tol=args.tol,
                                  seed=args.solver_seed)
        except ValueError:
            pass
    return float(prof.params[i]), float(prof.gaps[i])


def _write_profile(out, config, prof, failure, grid, k):
    header = ["param"] + [f"E{j}" for j in range(k)] + ["gap", "v10"]
    with CsvWriter(out, config, header) as w:
        if prof is not None:
            for p in range(len(prof.params)):
                w.row([prof.params[p], *prof.energies[p], prof.gaps[p], prof.v10[p]])
        if failure is not None:
            w.marker(f"param={fmt(failure.param) if failure.param is not None else 'nan'} reason={failure}")
            rest = grid[grid >= failure.param] if failure.param is not None else grid
            for x in rest:
                w.row([x] + [math.nan] * (k + 2))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    config = run_config(args)
    path, default_range = build_path(args)
    grid = make_grid(args, default_range)
    prof, failure = _sweep(path, grid, args)
    _write_profile(args.out, config, prof, failure, grid, args.levels)
    min_gap = _refined_min(path, prof, args) if prof is not None and failure is None else None
    write_sidecar(args.out, config, min_gap,
                  failure=None if failure is None else str(failure))
    if failure is not None:
        print(f"sweep failed: {failure}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


def cmd_crossings(args) -> int:
    config = run_config(args)
    path, default_range = build_path(args)
    grid = make_grid(args, default_range)
    prof, failure = _sweep(path, grid, args, keep_vectors=True)
    _write_profile(args.out, config, prof, failure, grid, args.levels)
    if failure is not None:
        write_sidecar(args.out, config, None, failure=str(failure))
        print(f"crossing scan failed: {failure}", file=sys.stderr)
        return EXIT_FAILURE
    reports = detect_crossings(prof, path, parse_pairs(args.pairs), args.gap_threshold, tol=args.tol)
    write_sidecar(args.out, config, _refined_min(path, prof, args), reports)
    return 0


def cmd_evolve(args) -> int:
    config = run_config(args)
    path, _ = build_path(args)
    if path.parameterization != "s":
        raise UsageError(f"model {args.model!r} has no s-parameterized anneal; use ec3, ising-file or lz")
    Ts = parse_floats(args.T)
    header = ["T", "success_probability", "residual_energy", "norm_drift"]
    status = 0
    with CsvWriter(args.out, config, header) as w:
        for T in Ts:
            try:
                curve = success_curve(path, [T], args.shape, dt_max=args.dt_max, tol=args.step_tol)
            except (EvolutionError, ConvergenceError) as exc:
                w.marker(f"T={fmt(T)} reason={exc}")
                w.row([T, math.nan, math.nan, math.nan])
                status = EXIT_FAILURE
                continue
            r = curve.results[0]
            w.row([r.T, r.success_probability, r.residual_energy, r.norm_drift])
    return status


def _read_gap_table(path) -> tuple[list[int], list[float]]:
    sizes, gaps = [], []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            n, g = int(float(parts[0])), float(parts[1])
        except (ValueError, IndexError):
            if not sizes:
                continue  # header line
            raise UsageError(f"cannot parse gap table line {raw!r}")
        sizes.append(n)
        gaps.append(g)
    return sizes, gaps


def _size_task(item):
    args, size = item
    path, default_range = build_path(args, size)
    grid = make_grid(args, default_range)
    prof, failure = _sweep(path, grid, args)
    if failure is not None:
        return size, None, str(failure)
    x, g = _refined_min(path, prof, args)
    return size, (x, g), None


def cmd_scale(args) -> int:
    config = run_config(args)
    failures = {}
    points = {}
    if args.inject:
        sizes, gaps = _read_gap_table(args.inject)
    else:
        sizes = parse_ints(args.sizes)
        if len(sizes) < 4:
            raise UsageError("--sizes needs at least 4 entries")
        gaps = []
        with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
            results = list(pool.map(_size_task, [(args, s) for s in sizes]))
        sizes_ok = []
        for size, res, err in results:
            if err is not None or res is None or not res[1] > 0:
                failures[str(size)] = err or "zero gap"
                continue
            sizes_ok.append(size)
            gaps.append(res[1])
            points[str(size)] = {"param": res[0], "gap": res[1]}
        sizes = sizes_ok
    doc = {"config": config, "version": __version__, "minima": points, "failures": failures}
    if len(sizes) < 4:
        doc["fit"] = None
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(dump_json(doc))
        print(f"only {len(sizes)} usable sizes; need 4", file=sys.stderr)
        return EXIT_FAILURE
    fit = fit_gap_scaling(sizes, gaps)
    doc["fit"] = fit.to_dict()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(dump_json(doc))
    return 0


def cmd_ec3stats(args) -> int:
    config = run_config(args)
    if args.n > GEOMETRY_LIMIT:
        raise UsageError(f"--n {args.n} exceeds the enumeration budget of {GEOMETRY_LIMIT}")
    alphas = parse_floats(args.alphas)
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        rows = ec3_sat_threshold(args.n, alphas, args.instances, args.seed, map_fn=pool.map)
    with CsvWriter(args.out, config, ["alpha", "P_sat", "stderr", "mean_max_distance_over_N"]) as w:
        for r in rows:
            w.row([r.alpha, r.p_sat, r.stderr, r.mean_max_distance_over_n])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--model", choices=MODELS, default="ec3")
    p.add_argument("--n", type=int, help="number of spins / variables")
    p.add_argument("--L", type=int, help="chain length (afm-chain)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output file")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--levels", type=int, default=2, help="number of levels to track")
    p.add_argument("--tol", type=float, default=1e-9, help="eigensolver residual tolerance")
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--solver-seed", type=int, default=0)
    p.add_argument("--instance", help="EC3 or Ising instance file")
    p.add_argument("--alpha", type=float, default=0.6, help="EC3 clause density")
    p.add_argument("--h", type=float, default=0.0, help="staggered field (afm-chain)")
    p.add_argument("--gamma", type=float, default=0.3, help="transverse field (afm-chain)")
    p.add_argument("--param", choices=("h", "gamma"), default="h", help="swept afm-chain parameter")
    p.add_argument("--open", action="store_true", help="open afm chain instead of a ring")
    p.add_argument("--delta-lambda", type=float, default=0.02, help="transverse probe (lbit)")
    p.add_argument("--series-order", type=int, default=3)
    p.add_argument("--decay-xi", type=float, default=2.0)
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--a", type=float, default=10.0, help="LZ sweep rate")
    p.add_argument("--b", type=float, default=0.2, help="LZ coupling (gap 2b)")
    p.add_argument("--range", help="parameter range lo:hi")
    p.add_argument("--points", type=int, default=101)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="annealgap", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="gap profile along a path")
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("crossings", help="gap profile plus avoided-crossing reports")
    _common(p)
    p.add_argument("--pairs", default="0-1", help="level pairs, e.g. 0-1,1-2")
    p.add_argument("--gap-threshold", type=float, default=math.inf)
    p.set_defaults(func=cmd_crossings)

    p = sub.add_parser("evolve", help="success probability versus anneal time")
    _common(p)
    p.add_argument("--T", default="", help="comma-separated total times (ascending)")
    p.add_argument("--shape", default="linear", help="'linear' or u:s knots, e.g. 0:0,0.5:0.3,1:1")
    p.add_argument("--dt-max", type=float, default=0.25)
    p.add_argument("--step-tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_evolve, model="lz")

    p = sub.add_parser("scale", help="minimum gap versus size and scaling fit")
    _common(p)
    p.add_argument("--sizes", help="comma-separated sizes")
    p.add_argument("--inject", help="gap table (size,gap per line) instead of solving")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("ec3stats", help="EC3 satisfiability and ground-state geometry")
    _common(p)
    p.add_argument("--alphas", default="0.3,0.45,0.62,0.8,1.0")
    p.add_argument("--instances", type=int, default=200)
    p.set_defaults(func=cmd_ec3stats)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    values = read_config_file(known.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices.get(known.command)
    if sp is None:
        return
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, val in values.items():
        if key not in actions or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {known.command}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = val.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = action.type(val) if action.type else val
        action.required = False
    sp.set_defaults(**defaults)


def _glue_negative_values(argv: list[str]) -> list[str]:
    """Turn ``--range -0.5:0.5`` into ``--range=-0.5:0.5`` so argparse accepts it."""
    out = []
    i = 0
    while i < len(argv):
        if argv[i] in ("--range", "--T", "--alphas") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
            continue
        out.append(argv[i])
        i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    argv = _glue_negative_values(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ValueError, OSError) as exc:
        print(f"annealgap: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
