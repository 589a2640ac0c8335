"""``pmmf`` command line: factorize, compress, solve, bench.

Reports (CSV/JSON) hold only deterministic numbers plus the resolved
configuration; wall-clock timings go to a separate ``*.timings.json``
sidecar so that reruns with the same configuration are byte-identical.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.  Errors
are written to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import os
import sys
import time
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import graphs
from . import io as pio
from . import transform
from .config import ConfigError, RunConfig, read_config_file
from .factorize import FactorizationError, factorize
from .solver import ICBreakdown, random_rhs, run_experiment

__all__ = ["main", "UsageError", "EXIT_OK", "EXIT_USAGE", "EXIT_DATA", "EXIT_NUMERICAL"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _DataFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input")
    g.add_argument("--in", dest="input", metavar="PATH", help="Matrix Market (.mtx) or edge-list file")
    g.add_argument("--graph", metavar="SPEC",
                   help="synthetic input: grid:RxC, regular:N:D, smallworld:N:K:P, poisson:RxC")
    g.add_argument("--format", choices=["matrix_market", "edge_list"])
    g.add_argument("--transform", choices=["none", "laplacian", "symmetrize"])
    g.add_argument("--shift", type=float, help="add shift*I (for positive definite solver inputs)")
    f = p.add_argument_group("factorization")
    f.add_argument("--stages", type=int)
    f.add_argument("--clusters", type=int, help="target number of clusters per stage")
    f.add_argument("--cmin", type=int)
    f.add_argument("--cmax", type=int)
    f.add_argument("--dmax", type=int, help="maximum clustering recursion depth")
    f.add_argument("--bypass", choices=["on", "off"])
    f.add_argument("--eta", type=float, help="compression ratio per stage")
    f.add_argument("--k", type=int, help="rotation order")
    f.add_argument("--core-min", dest="core_min", type=int)
    f.add_argument("--max-core", dest="max_core", type=int)
    f.add_argument("--drop-tol", dest="drop_tol", type=float)
    f.add_argument("--seed", type=int)
    r = p.add_argument_group("run")
    r.add_argument("--threads", type=int)
    r.add_argument("--config", metavar="PATH", help="key = value configuration file")
    r.add_argument("--out", metavar="PATH")
    r.add_argument("--summary", metavar="PATH", help="JSON summary path")
    r.add_argument("--timings", metavar="PATH", help="timing sidecar path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmmf", description="Parallel multiresolution matrix factorization.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("factorize", help="factorize a matrix and write the factorization")
    _add_common(p)

    p = sub.add_parser("compress", help="pMMF vs uniform Nystrom error across core sizes")
    _add_common(p)
    p.add_argument("--cores", help="comma-separated core dimensions")
    p.add_argument("--rank-k", dest="rank_k", type=int,
                   help="rank of the normalizing best approximation (default: the core dimension)")

    p = sub.add_parser("solve", help="CG / preconditioned CG over random right-hand sides")
    _add_common(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--rhs", type=int, help="number of right-hand sides")
    p.add_argument("--precond", help="comma-separated subset of none,jacobi,ssor,ic,pmmf")

    p = sub.add_parser("bench", help="factorization time across a size ladder")
    _add_common(p)
    p.add_argument("--sizes", help="comma-separated graph sizes")
    p.add_argument("--degree", type=int)
    return parser


# ---------------------------------------------------------------------- helpers


def _resolve(args: argparse.Namespace) -> RunConfig:
    flags = {k: v for k, v in vars(args).items() if k != "command"}
    file_values = read_config_file(args.config) if args.config else {}
    return RunConfig.resolve(file_values, flags)


def _load_input(cfg: RunConfig):
    """Returns ``(csr_matrix, dataset_name, metadata)``."""
    if cfg.graph and cfg.input:
        raise UsageError("give either --in or --graph, not both")
    if cfg.graph:
        try:
            m, is_adj = graphs.parse_graph_spec(cfg.graph, cfg.seed)
        except ValueError as err:
            raise UsageError(str(err)) from None
        how = cfg.transform or ("laplacian" if is_adj else "none")
        if how == "laplacian":
            a = graphs.graph_laplacian(m, cfg.shift)
        else:
            a = m + m.T if how == "symmetrize" else m
            if cfg.shift:
                a = a + cfg.shift * sp.eye(a.shape[0])
        a = sp.csr_matrix(a, dtype=float)
        n = a.shape[0]
        meta = {"source": cfg.graph, "transform": how, "shift": cfg.shift, "n": n, "nnz": int(a.nnz),
                "gamma": a.nnz / float(n * n)}
        return a, cfg.graph, meta
    if cfg.input:
        a, src = pio.load_matrix(cfg.input, cfg.format, cfg.transform or "none", cfg.shift)
        return a, os.path.basename(cfg.input), src.metadata()
    raise UsageError("an input is required: --in PATH or --graph SPEC")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, header, rows, cfg: RunConfig) -> None:
    buf = _io.StringIO()
    buf.write(f"# config={cfg.to_json()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    _emit(path, buf.getvalue())


def _emit(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_fmt) + "\n"


def _write_timings(cfg: RunConfig, doc: dict) -> None:
    path = cfg.timings
    if path is None:
        base = cfg.summary or cfg.out
        if base and base != "-":
            path = base + ".timings.json"
    if path is None:
        print(json.dumps({"timings": doc}, sort_keys=True), file=sys.stderr)
    else:
        with open(path, "w") as fh:
            fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _finish(cfg: RunConfig, summary: dict, main_to_file: bool) -> None:
    if cfg.summary:
        _emit(cfg.summary, _json(summary))
    elif main_to_file:
        _emit(None, _json(summary))


# ---------------------------------------------------------------------- commands


def cmd_factorize(cfg: RunConfig) -> None:
    a, name, meta = _load_input(cfg)
    t0 = time.perf_counter()
    f = factorize(a, cfg.factorize_params(), threads=cfg.threads)
    total_ms = 1e3 * (time.perf_counter() - t0)
    if cfg.out:
        pio.save_factorization(f, cfg.out)
    res = transform.residual_frobenius(f)
    norm = float(spla.norm(a)) if a.nnz else 0.0
    summary = {
        "dataset": name,
        "input": meta,
        "n": f.n,
        "nnz": int(a.nnz),
        "gamma": meta["gamma"],
        "stages": len(f.stages),
        "active_sizes": f.active_sizes,
        "rotations": len(f.rotations),
        "core_dim": f.core_dim,
        "residual": res,
        "relative_residual": res / norm if norm else 0.0,
        "config": cfg.to_dict(),
    }
    _emit(cfg.summary, _json(summary))
    _write_timings(cfg, {"phases_ms": {k: 1e3 * v for k, v in f.timings.items()}, "total_ms": total_ms,
                         "threads": cfg.threads})


def cmd_compress(cfg: RunConfig) -> None:
    a, name, _ = _load_input(cfg)
    n = a.shape[0]
    if n > transform.DENSE_CAP:
        raise _DataFailure(f"compress evaluates errors densely; n={n} exceeds {transform.DENSE_CAP}")
    dense = a.toarray()
    rows, times = [], []
    for g in cfg.cores:
        if not 1 <= g <= n:
            raise UsageError(f"core dimension {g} out of range [1, {n}]")
        t0 = time.perf_counter()
        f = factorize(a, cfg.factorize_params(core_min=g), threads=cfg.threads)
        t1 = time.perf_counter()
        core = f.core_dim
        err_nys, _ = transform.nystrom_uniform(dense, core, seed=cfg.seed)
        t2 = time.perf_counter()
        ref = transform.best_rank_k_error(dense, cfg.rank_k if cfg.rank_k is not None else core)
        err_mmf = transform.residual_frobenius(f)
        for method, err, ms in (("pmmf", err_mmf, 1e3 * (t1 - t0)), ("nystrom", err_nys, 1e3 * (t2 - t1))):
            rows.append([name, n, core, method, err, err / ref if ref > 0 else math.nan])
            times.append({"dataset": name, "n": n, "core_dim": core, "method": method, "wall_time_ms": ms})
    _write_csv(cfg.out, ["dataset", "n", "core_dim", "method", "frobenius_error", "normalized_error"], rows, cfg)
    summary = {"dataset": name, "n": n, "rows": len(rows), "config": cfg.to_dict()}
    _finish(cfg, summary, bool(cfg.out))
    _write_timings(cfg, {"rows": times, "threads": cfg.threads})


def cmd_solve(cfg: RunConfig) -> None:
    a, name, _ = _load_input(cfg)
    n = a.shape[0]
    b = random_rhs(n, cfg.rhs, cfg.seed)
    rows, methods, times = [], [], []
    for pc in cfg.precond:
        rep = run_experiment(a, cfg.solve_config(pc), threads=cfg.threads, b=b)
        for k, (mu, sd, cnt) in enumerate(zip(rep.mean_residual, rep.std_residual, rep.counts)):
            rows.append([pc, k, mu, sd, int(cnt)])
        methods.append({
            "method": pc,
            "iterations": rep.iterations,
            "mean_iterations": float(np.mean(rep.iterations)),
            "converged": all(rep.converged),
            "converged_runs": int(sum(rep.converged)),
            "final_mean_residual": float(rep.mean_residual[-1]),
            "note": rep.note,
        })
        solve_ms = float(np.mean(rep.solve_ms))
        its = max(1.0, float(np.mean(rep.iterations)))
        times.append({"method": pc, "setup_ms": rep.setup_ms, "wall_ms": solve_ms,
                      "per_iteration_ms": solve_ms / its, "solve_ms": rep.solve_ms})
    _write_csv(cfg.out, ["method", "iteration", "mean_residual", "std_residual", "runs"], rows, cfg)
    summary = {"dataset": name, "n": n, "nnz": int(a.nnz), "methods": methods, "config": cfg.to_dict()}
    _finish(cfg, summary, bool(cfg.out))
    _write_timings(cfg, {"methods": times, "threads": cfg.threads})


def scaling_exponent(nnz, wall) -> float:
    """Least-squares slope of ``log(wall)`` against ``log(nnz)``."""
    x, y = np.log(np.asarray(nnz, dtype=float)), np.log(np.asarray(wall, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def cmd_bench(cfg: RunConfig) -> None:
    if cfg.input or cfg.graph:
        a, name, _ = _load_input(cfg)
        ladder = [(name, a)]
    else:
        ladder = []
        for n in cfg.sizes:
            sub_seed = int(np.random.SeedSequence([cfg.seed, n]).generate_state(1)[0])
            try:
                adj = graphs.random_regular_adjacency(n, cfg.degree, sub_seed)
            except Exception as err:
                raise UsageError(f"cannot build a {cfg.degree}-regular graph on {n} nodes: {err}") from None
            ladder.append((f"regular:{n}:{cfg.degree}", graphs.graph_laplacian(adj, cfg.shift)))
    rows, times = [], []
    for name, a in ladder:
        t0 = time.perf_counter()
        f = factorize(a, cfg.factorize_params(), threads=cfg.threads)
        ms = 1e3 * (time.perf_counter() - t0)
        rows.append([name, a.shape[0], int(a.nnz), f.core_dim, transform.residual_frobenius(f)])
        times.append({"dataset": name, "n": a.shape[0], "nnz": int(a.nnz), "wall_ms": ms,
                      "phases_ms": {k: 1e3 * v for k, v in f.timings.items()}})
    _write_csv(cfg.out, ["dataset", "n", "nnz", "core_dim", "residual"], rows, cfg)
    doc = {"rows": times, "threads": cfg.threads}
    if len(times) >= 2:
        doc["exponent"] = scaling_exponent([t["nnz"] for t in times], [t["wall_ms"] for t in times])
    summary = {"sizes": [r[1] for r in rows], "config": cfg.to_dict()}
    _finish(cfg, summary, bool(cfg.out))
    _write_timings(cfg, doc)


COMMANDS = {"factorize": cmd_factorize, "compress": cmd_compress, "solve": cmd_solve, "bench": cmd_bench}


def _report(kind: str, code: int, message: str) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "message": " ".join(str(message).split())}),
          file=sys.stderr)
    return code


def _one_line_warning(message, category, filename, lineno, file=None, line=None):
    print(json.dumps({"warning": category.__name__, "message": str(message)}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
    except (UsageError, ConfigError) as err:
        return _report("usage", EXIT_USAGE, str(err))
    old_show = warnings.showwarning
    warnings.showwarning = _one_line_warning
    try:
        COMMANDS[args.command](cfg)
    except (UsageError, ConfigError) as err:
        return _report("usage", EXIT_USAGE, str(err))
    except (pio.DataError, _DataFailure, OSError) as err:
        return _report("data", EXIT_DATA, str(err))
    except (FactorizationError, ICBreakdown, np.linalg.LinAlgError, FloatingPointError,
            ArithmeticError) as err:
        return _report("numerical", EXIT_NUMERICAL, str(err))
    except ValueError as err:
        return _report("data", EXIT_DATA, str(err))
    finally:
        warnings.showwarning = old_show
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
