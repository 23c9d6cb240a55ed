"""Command-line entry point: ``gpmsync {generate,solve,phase,converge,bench}``.

Exit codes: 0 on completion, 2 on an invalid configuration, 3 on I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import struct
import sys
from pathlib import Path

from . import harness
from .blockmat import GroupKind, InvalidInputError
from .gpm import write_trace_csv
from .metrics import clustering_error, estimation_error
from .sgbm import SgbmParams, generate, load_instance, save_instance
from .svg import emit_heatmap

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


class ConfigError(Exception):
    pass


def _load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return cfg


def _take(cfg, key, typ, default=None, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing config key '{key}'")
        return default
    try:
        return typ(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for '{key}': {cfg[key]!r}") from exc


def cmd_generate(args) -> int:
    kind = GroupKind.parse(args.group, args.d)
    params = SgbmParams.from_log(args.n, args.k, kind, args.alpha, args.beta)
    truth, A = generate(params, args.seed)
    save_instance(args.out, truth, A)
    print(json.dumps({"out": str(args.out), "n": params.n, "K": params.K, "d": params.d,
                      "group": kind.code, "p": params.p, "q": params.q,
                      "num_edges": A.num_edges}))
    return EXIT_OK


def cmd_solve(args) -> int:
    try:
        truth, A = load_instance(args.inp)
    except (ValueError, struct.error) as exc:
        raise OSError(f"{args.inp}: unreadable instance ({exc})") from exc
    prm = truth.params
    V, trace, warned = harness.solve_instance(A, prm.K, prm.kind, args.init,
                                              pivot_seed=args.pivot_seed, max_iters=args.max_iters,
                                              tol=args.tol, track=truth)
    if args.trace:
        write_trace_csv(trace, args.trace)
    print(json.dumps({
        "epsilon": estimation_error(V, truth, prm.kind),
        "clustering_error": clustering_error(V.labels, truth.labels, prm.K),
        "iterations": trace.iterates_used,
        "converged": trace.converged,
        "eig_warning": warned,
        "degenerate_projections": trace.degenerate_projections,
    }))
    return EXIT_OK


def cmd_phase(args) -> int:
    cfg = _load_config(args.config)
    workers = _take(cfg, "workers", int, 1)
    grid = harness.ExperimentGrid.from_json(cfg)
    grid = grid.full_scale() if args.full else grid.desk_scale()
    result = harness.run_phase(grid, workers=workers)
    harness.write_phase_csv(result, args.out_csv)
    if args.out_svg:
        Path(args.out_svg).write_text(emit_heatmap(result, grid.K, title=f"n={grid.n} K={grid.K} "
                                                   f"{grid.kind}"))
    trend = harness.monotone_trend(result)
    if not all(trend):
        logging.getLogger(__name__).info("rate not monotone in alpha for %d beta columns",
                                         trend.count(False))
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = _load_config(args.config)
    n = _take(cfg, "n", int, required=True)
    K = _take(cfg, "K", int, required=True)
    d = _take(cfg, "d", int, required=True)
    kind = GroupKind.parse(_take(cfg, "group", str, "o"), d)
    params = SgbmParams.from_log(n, K, kind, _take(cfg, "alpha", float, required=True),
                                 _take(cfg, "beta", float, required=True))
    seeds = cfg.get("seeds", list(range(_take(cfg, "num_seeds", int, 10))))
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a list of nonnegative integers")
    traces = harness.run_convergence(params, seeds, max_iters=_take(cfg, "max_iters", int, 100),
                                     tol=_take(cfg, "tol", float, 1e-12),
                                     init=_take(cfg, "init", str, "spectral"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed, rows in traces.items():
        harness.write_convergence_csv(rows, out / f"convergence_seed{seed}.csv")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    sizes = cfg.get("sizes")
    if not isinstance(sizes, list) or not sizes or not all(
            isinstance(s, list) and len(s) == 3 for s in sizes):
        raise ConfigError("sizes must be a nonempty list of [n, alpha, beta]")
    d = _take(cfg, "d", int, 3)
    table = harness.run_timing(sizes, _take(cfg, "reps", int, 5), K=_take(cfg, "K", int, 2),
                               d=d, group=_take(cfg, "group", str, "so"),
                               base_seed=_take(cfg, "base_seed", int, 0))
    harness.write_bench_csv(table, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpmsync", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample an instance and write it to disk")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--group", choices=("o", "so"), default="so")
    g.add_argument("--alpha", type=float, required=True)
    g.add_argument("--beta", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run initialisation and the power iteration on an instance")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--init", choices=("spectral", "identity"), default="spectral")
    s.add_argument("--max-iters", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--pivot-seed", type=int, default=0)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_solve)

    p = sub.add_parser("phase", help="success-rate grid over (alpha, beta)")
    p.add_argument("--config", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-svg")
    p.add_argument("--full", action="store_true", help="use the full-scale grid and trial count")
    p.set_defaults(func=cmd_phase)

    c = sub.add_parser("converge", help="per-seed error traces")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_converge)

    b = sub.add_parser("bench", help="median solve time per problem size")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"gpmsync: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"gpmsync: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
