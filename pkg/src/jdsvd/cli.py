"""Command-line entry point: ``jdsvd solve | mimic | verify``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .correction import NumericFailure
from .driver import HARMONIC, INEXACT, ITER_EXACT, REFINED, SolverConfig, solve, write_results_csv, write_vectors
from .sparse import MatrixMarketError, load_matrix_market

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FAILED = 2
EXIT_NUMERIC = 3

MIMIC_MODES = (("1e-3", INEXACT, 1e-3), ("1e-4", INEXACT, 1e-4), ("exact", ITER_EXACT, 1e-3))


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; parse errors map to 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return x


def _positive_int(text):
    x = int(text)
    if x < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return x


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--matrix", required=True, help="MatrixMarket file")
    common.add_argument("--tau", type=_positive_float, required=True, help="target")
    common.add_argument("--num", type=_positive_int, default=1, help="number of triplets")
    common.add_argument("--variant", choices=(HARMONIC, REFINED), default=REFINED)
    common.add_argument("--eps-tilde", type=float, default=1e-3)
    common.add_argument("--tol", type=_positive_float, default=1e-10)
    common.add_argument("--max-dim", type=_positive_int, default=20)
    common.add_argument("--restart-keep", type=_positive_int, default=3)
    common.add_argument("--inner-mode", choices=(INEXACT, ITER_EXACT), default=INEXACT)
    common.add_argument("--max-inner", type=_positive_int, default=None)
    common.add_argument("--max-outer", type=_positive_int, default=3000)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--history-out", default=None, help="history CSV path")
    common.add_argument("--result-out", default=None, help="triplet CSV path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="jdsvd", description="Interior singular triplets by inexact JDSVD.", allow_abbrev=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("solve", parents=[common], help="compute triplets closest to tau", allow_abbrev=False)
    s.add_argument("--vectors-out", default=None, help="binary dump of singular vectors")
    m = sub.add_parser("mimic", parents=[common], help="compare inexact and iterative-exact runs", allow_abbrev=False)
    m.add_argument("--concurrent", action="store_true", help="run the three modes on threads")
    v = sub.add_parser("verify", parents=[common], help="instrumented desk-scale run", allow_abbrev=False)
    v.add_argument("--verify-out", default=None, help="verification CSV path")
    return p


def _config(args) -> SolverConfig:
    kw = dict(
        tau=args.tau,
        num=args.num,
        variant=args.variant,
        eps_tilde=args.eps_tilde,
        tol=args.tol,
        max_dim=args.max_dim,
        restart_keep=args.restart_keep,
        inner_mode=args.inner_mode,
        max_inner=args.max_inner,
        max_outer=args.max_outer,
    )
    if args.seed is not None:
        kw["seed"] = args.seed
    return SolverConfig(**kw)


def _label(config):
    return ("HJDSVD" if config.variant == HARMONIC else "RHJDSVD") + (
        "(exact)" if config.inner_mode == ITER_EXACT else f"({config.eps_tilde:g})"
    )


def _summary(res, config):
    print(f"{_label(config)}: I_out = {res.outer_iterations}, I_in = {res.inner_iterations}, T_cpu = {res.seconds:.2f} s")
    for i, t in enumerate(res.triplets, 1):
        print(f"  {i}: theta = {t.theta:.15g}  ||r|| = {t.resnorm:.3e}")
    if not res.converged:
        print(f"not converged: {res.message}", file=sys.stderr)


def cmd_solve(args, A) -> int:
    config = _config(args)
    res = solve(A, config)
    _summary(res, config)
    if args.history_out:
        res.history.to_csv(args.history_out)
    if args.result_out:
        write_results_csv(args.result_out, res.triplets)
    if args.vectors_out:
        write_vectors(args.vectors_out, res.triplets)
    return EXIT_OK if res.converged else EXIT_FAILED


def cmd_mimic(args, A) -> int:
    base = _config(args)
    configs = [(name, replace(base, inner_mode=mode, eps_tilde=eps)) for name, mode, eps in MIMIC_MODES]
    if args.concurrent:
        with ThreadPoolExecutor(max_workers=len(configs)) as pool:
            results = list(pool.map(lambda c: solve(A, c[1]), configs))
    else:
        results = [solve(A, c) for _, c in configs]
    exact = results[-1]
    print(f"{'mode':<16}{'I_out':>8}{'I_in':>10}{'T_cpu':>9}{'I_out/ex':>10}{'I_in/ex':>9}")
    for (name, cfg), res in zip(configs, results):
        ro = res.outer_iterations / max(exact.outer_iterations, 1)
        ri = res.inner_iterations / max(exact.inner_iterations, 1)
        print(f"{_label(cfg):<16}{res.outer_iterations:>8}{res.inner_iterations:>10}{res.seconds:>9.2f}{ro:>10.3f}{ri:>9.3f}")
        if args.history_out:
            stem, dot, ext = args.history_out.rpartition(".")
            path = f"{stem}_{name}.{ext}" if dot else f"{args.history_out}_{name}"
            res.history.to_csv(path)
    if args.result_out:
        write_results_csv(args.result_out, exact.triplets)
    return EXIT_OK if all(r.converged for r in results) else EXIT_FAILED


def cmd_verify(args, A) -> int:
    from .diagnostics import DESK_CAP, alpha_slope, verify_run, write_verification_csv

    if max(A.shape) > DESK_CAP:
        print(f"refusing to verify a {A.shape[0]}x{A.shape[1]} matrix: desk-scale cap is {DESK_CAP}", file=sys.stderr)
        return EXIT_INPUT
    config = _config(args)
    rep = verify_run(A, config)
    _summary(rep.result, config)
    if args.verify_out:
        write_verification_csv(args.verify_out, rep.rows)
    if args.history_out:
        rep.result.history.to_csv(args.history_out)
    if args.result_out:
        write_results_csv(args.result_out, rep.result.triplets)
    names = sorted({r.name for r in rep.rows})
    for name in names:
        rows = [r for r in rep.rows if r.name == name]
        checked = [r for r in rows if r.hypothesis_met]
        bad = sum(not r.passed for r in checked)
        print(f"  {name:<22} checked {len(checked):>4} / {len(rows):<4} failed {bad}")
    slope, npts = alpha_slope(rep.records)
    print(f"  alpha slope {slope:.3f} over {npts} points; {rep.skipped} iterations skipped")
    if not rep.ok:
        f = rep.first_failure()
        print(f"assertion failed: {f.name} at outer iteration {f.iteration} (lhs={f.lhs:.6g}, rhs={f.rhs:.6g})", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK if rep.result.converged else EXIT_FAILED


COMMANDS = {"solve": cmd_solve, "mimic": cmd_mimic, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        _config(args)
    except ValueError as exc:
        print(f"jdsvd: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        A = load_matrix_market(args.matrix)
    except FileNotFoundError:
        print(f"jdsvd: no such file: {args.matrix}", file=sys.stderr)
        return EXIT_INPUT
    except (MatrixMarketError, OSError) as exc:
        print(f"jdsvd: cannot read matrix: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args, A)
    except NumericFailure as exc:
        print(f"jdsvd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"jdsvd: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
