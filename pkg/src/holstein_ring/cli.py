"""Command-line entry point: ``holstein-ring {run,scan,compare,accept}``.

The numerical modules are imported only after the arguments are parsed,
so a bad command line fails fast.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="holstein-ring",
                                description="Polaron dynamics on a driven ring: experiments and checks.")
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps (default 1)")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded linear algebra for bitwise-reproducible output")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run the experiment described by a config file"),
                       ("scan", "relative-deviation scan over M_list with a power-law fit"),
                       ("compare", "variational run against the HEOM (and Fock) references")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config", help="path of a key = value config file")
        if name == "compare":
            s.add_argument("--l-check", type=float, default=0.0,
                           help="window (output time units) of the depth L+2 check; 0 skips it")
    a = sub.add_parser("accept", help="run the acceptance suite (pytest)")
    a.add_argument("pytest_args", nargs="*", help="extra arguments passed to pytest")
    return p


def _configure_threads(args) -> None:
    """Pin the linear-algebra backend to one thread per process.

    Sweeps get their parallelism from ``--threads`` worker processes, so
    nested backend threading would only oversubscribe the cores. The
    environment variables are inherited by the workers; the runtime limit
    covers libraries already loaded in this process.
    """
    if args.threads < 1:
        raise SystemExit("--threads must be >= 1")
    if args.deterministic or args.threads > 1:
        for var in _THREAD_VARS:
            os.environ[var] = "1"
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=1)


def _find_acceptance() -> Path | None:
    here = Path(__file__).resolve()
    for parent in here.parents:
        cand = parent / "tests" / "test_acceptance.py"
        if cand.exists():
            return cand
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _configure_threads(args)

    if args.command == "accept":
        import pytest

        path = _find_acceptance()
        if path is None:
            print("error: tests/test_acceptance.py not found (run from a source checkout)", file=sys.stderr)
            return 2
        return int(pytest.main([str(path), "-s", *args.pytest_args]))

    from .config import ConfigError, load_config
    from .experiments import compare_solvers, run_experiment, sigma_scan
    from .heom import HeomError
    from .propagator import PropagationError

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path(cfg.out)

    try:
        if args.command == "run":
            bundle = run_experiment(cfg, out, workers=args.threads)
            for k, v in bundle.summary.items():
                print(f"{k} = {v}")
            print(f"status = {bundle.status}; outputs in {bundle.directory}")
            return 0 if bundle.ok else 1
        if args.command == "scan":
            res = sigma_scan(cfg, workers=args.threads, out_dir=out)
            for m, s in zip(res.M, res.sigma):
                print(f"M = {m}: Sigma = {s:.6e}")
            print(f"mu = {res.fit.mu:.4f} +/- {res.fit.mu_err:.4f}; strictly decreasing: {res.decreasing}")
            return 0
        if args.command == "compare":
            rep = compare_solvers(cfg, l_check_time=args.l_check, out_dir=out)
            print(f"max |dP| variational vs HEOM (L={rep.heom_L}) = {rep.max_dP_heom:.3e}, "
                  f"mean = {rep.mean_dP_heom:.3e}")
            if rep.P_fock is not None:
                print(f"max |dP| variational vs Fock = {rep.max_dP_fock:.3e}")
            if rep.l_delta == rep.l_delta:
                print(f"L -> L+2 change = {rep.l_delta:.3e}")
            return 0
    except (PropagationError, HeomError) as exc:
        print(f"error: solver aborted: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
