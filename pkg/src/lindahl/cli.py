"""Command-line interface: ``lindahl <command> ...``.

Exit codes: 0 success, 2 unreadable or invalid input, 3 infeasible instance,
4 non-convergence or a failing certificate, 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fixtures
from .capped import recover_prices_capped, solve_capped_native
from .dynamics import DEFAULT_MAX_ITERS as PR_MAX_ITERS
from .dynamics import recover_prices_uncapped, run_pr
from .errors import InstanceError, LindahlError, ParseError
from .jsonio import (dumps, instance_from_json, instance_to_json, load_candidate,
                     splc_from_json)
from .model import DEFAULT_RESCALE_TARGET, Instance, rescale_valuations
from .pabulib import read_pabulib, to_instance
from .splc import check_well_behaved, lift_allocation, reduce_splc
from .verify import audit_core, check_pareto, verify_lindahl

log = logging.getLogger("lindahl")

EXIT_OK, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_CONVERGENCE, EXIT_INTERNAL = 0, 2, 3, 4, 5
SOLVE_MODES = ("capped-native", "uncapped-pr", "capped-conic")


@dataclass
class RunConfig:
    command: str
    mode: str | None = None
    tol: float = 1e-6
    max_iters: int | None = None
    rescale_target: float = DEFAULT_RESCALE_TARGET
    out: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InstanceError("--tol must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise InstanceError("--max-iters must be at least 1")
        if not self.rescale_target > 1:
            raise InstanceError("--rescale-target must exceed 1")


def load_instance(source: str, dedup: bool = False, rescale_target: float | None = None) -> Instance:
    """Read ``fixture:NAME``, a Pabulib file (``.pb``) or a native JSON instance."""
    if source.startswith("fixture:"):
        name = source.split(":", 1)[1]
        if name not in fixtures.ALL:
            raise ParseError(f"unknown fixture {name!r}; choose from {', '.join(fixtures.ALL)}")
        return fixtures.ALL[name]()
    if source.endswith(".pb"):
        return to_instance(read_pabulib(source), rescale_target=rescale_target, dedup=dedup)
    return instance_from_json(source)


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _contributions(inst, b):
    return [{"agent": inst.agent_ids[i], "project": inst.project_ids[j], "value": float(v)}
            for i, j, v in zip(inst.rows, inst.cols, b) if v > 0]


# -- commands ---------------------------------------------------------------------------


def cmd_solve(args, cfg: RunConfig) -> int:
    inst = load_instance(args.instance, args.dedup, cfg.rescale_target)
    t0 = time.perf_counter()
    result = {"mode": cfg.mode, "instance": inst.summary(),
              "agents": list(inst.agent_ids), "projects": list(inst.project_ids)}
    if cfg.mode == "uncapped-pr":
        res = run_pr(inst, max_iters=cfg.max_iters or PR_MAX_ITERS, record_trace=False)
        work = inst.uncapped_copy()
        x, b = res.x, res.b.values
        prices = recover_prices_uncapped(work, x)
        cert = verify_lindahl(work, x, prices, cfg.tol)
        result.update(status=res.status, iterations=res.iterations, gap_bound=res.gap_bound)
        converged = res.converged
    else:
        inst = rescale_valuations(inst, cfg.rescale_target)
        if cfg.mode == "capped-conic":
            from .conic import emit_conic, solution_from_values, solve_conic

            sol = solution_from_values(inst, solve_conic(emit_conic(inst)))
        else:
            kw = {"max_iters": cfg.max_iters} if cfg.max_iters else {}
            sol = solve_capped_native(inst, **kw)
        x, b = sol.x, sol.b.values
        prices = recover_prices_capped(inst, sol)
        cert = verify_lindahl(inst, x, prices, cfg.tol)
        cert.multipliers = {"lambda": sol.lambdas, "mu": sol.mus}
        result.update(status=sol.status, iterations=sol.iterations, objective=sol.objective,
                      kkt_residuals=sol.residuals, notes=sol.notes)
        converged = sol.ok or cfg.mode == "capped-conic"
    result.update(
        seconds=time.perf_counter() - t0,
        x=x,
        contributions=_contributions(inst, b),
        prices=np.asarray(prices.p),
        certificate=cert.to_dict(),
    )
    _emit(dumps(result), cfg.out)
    if not cert.passed or not converged:
        log.error("certificate failed or solver did not converge (status %s)", result["status"])
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    inst = load_instance(args.instance, args.dedup, cfg.rescale_target)
    x, p = load_candidate(args.candidate, inst)
    if p is None:
        raise ParseError("verify needs prices in the candidate file")
    cert = verify_lindahl(inst, x, p, cfg.tol)
    out = cert.to_dict()
    out["pareto"] = check_pareto(inst, x).to_dict()
    _emit(dumps(out), cfg.out)
    return EXIT_OK if cert.lindahl else EXIT_CONVERGENCE


def cmd_audit(args, cfg: RunConfig) -> int:
    inst = load_instance(args.instance, args.dedup, cfg.rescale_target)
    x, _ = load_candidate(args.candidate, inst)
    report = audit_core(inst, x, args.max_size, cfg.mode or "strong", tol=args.core_tol,
                        samples=args.samples, seed=cfg.seed)
    out = report.to_dict()
    if report.blocked:
        out["found_blocking"]["agent_ids"] = [inst.agent_ids[i]
                                              for i in report.found_blocking.coalition]
    _emit(dumps(out), cfg.out)
    return EXIT_OK


def cmd_trace(args, cfg: RunConfig) -> int:
    inst = load_instance(args.instance, args.dedup, cfg.rescale_target)
    res = run_pr(inst, max_iters=cfg.max_iters or PR_MAX_ITERS)
    _emit(res.trace.to_csv(), cfg.out)
    return EXIT_OK


def cmd_reduce_splc(args, cfg: RunConfig) -> int:
    splc = splc_from_json(args.instance)
    reduced = reduce_splc(splc, cfg.rescale_target)
    wb = check_well_behaved(splc)
    out = {
        "instance": instance_to_json(reduced.instance),
        "column_map": [{"project": splc.project_ids[j], "segment": t + 1}
                       for j, t in reduced.column_map],
        "well_behaved": wb.ok,
        "positive_length_condition": wb.positive_length_ok,
    }
    code = EXIT_OK
    if args.solve:
        sol = solve_capped_native(reduced.instance)
        x = lift_allocation(reduced, sol.x)
        prices = recover_prices_capped(reduced.instance, sol)
        cert = verify_lindahl(reduced.instance, sol.x, prices, cfg.tol)
        out.update(status=sol.status, x_derived=sol.x, x=x, utilities=splc.utilities(x),
                   certificate=cert.to_dict())
        if not (sol.ok and cert.passed):
            code = EXIT_CONVERGENCE
    _emit(dumps(out), cfg.out)
    return code


def cmd_emit_conic(args, cfg: RunConfig) -> int:
    from .conic import emit_conic, solve_conic

    inst = rescale_valuations(load_instance(args.instance, args.dedup, cfg.rescale_target),
                              cfg.rescale_target)
    prog = emit_conic(inst)
    if args.solve:
        values = solve_conic(prog)
        _emit(dumps(values), cfg.out)
    elif args.format == "json":
        _emit(dumps(prog.to_dict()), cfg.out)
    else:
        _emit(prog.to_text(), cfg.out)
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    files = sorted(Path(args.directory).glob("*.pb"))
    if not files:
        raise ParseError(f"no .pb files in {args.directory}")
    rows = []
    for path in files:
        try:
            t0 = time.perf_counter()
            inst = to_instance(read_pabulib(path), rescale_target=cfg.rescale_target,
                               dedup=not args.no_dedup)
            kw = {"max_iters": cfg.max_iters} if cfg.max_iters else {}
            sol = solve_capped_native(inst, **kw)
            seconds = time.perf_counter() - t0
        except LindahlError as exc:
            log.warning("%s: %s", path.name, exc)
            continue
        rows.append([path.name, inst.meta.get("voters", inst.n), inst.n, inst.m,
                     repr(seconds), sol.status])
    fh = open(cfg.out, "w", newline="", encoding="utf-8") if cfg.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "voters", "agents", "projects", "seconds", "status"])
        w.writerows(rows)
    finally:
        if cfg.out:
            fh.close()
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lindahl", description="Compute Lindahl equilibria for public goods and check them.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, instance_help="instance: JSON file, Pabulib .pb file, or fixture:NAME"):
        p.add_argument("instance", help=instance_help)
        p.add_argument("--out", help="write output here instead of stdout")
        p.add_argument("--rescale-target", type=float, default=DEFAULT_RESCALE_TARGET,
                       help="smallest positive valuation after rescaling (default e)")
        p.add_argument("--dedup", action="store_true", help="merge identical Pabulib ballots")
        p.add_argument("--tol", type=float, default=1e-6, help="certificate tolerance")

    p = sub.add_parser("solve", help="compute an equilibrium and its certificate")
    common(p)
    p.add_argument("--mode", choices=SOLVE_MODES, default="capped-native")
    p.add_argument("--max-iters", type=int)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="certify a given allocation and prices")
    common(p)
    p.add_argument("candidate", help='JSON with "x" and "prices" (solve output works)')
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("audit", help="search for a blocking coalition")
    common(p)
    p.add_argument("candidate", help='JSON with "x"')
    p.add_argument("--mode", choices=("weak", "strong"), default="strong")
    p.add_argument("--max-size", type=int, help="largest coalition size (default: all agents)")
    p.add_argument("--samples", type=int, help="check this many random coalitions instead")
    p.add_argument("--seed", type=int, default=0, help="seed for coalition sampling")
    p.add_argument("--core-tol", type=float, help="blocking threshold (default 1e-7 * B)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("trace", help="CSV convergence trace of proportional response")
    common(p)
    p.add_argument("--max-iters", type=int)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("reduce-splc", help="reduce an SPLC instance to a capped linear one")
    common(p, "SPLC instance JSON")
    p.add_argument("--solve", action="store_true", help="also solve, lift and certify")
    p.set_defaults(func=cmd_reduce_splc)

    p = sub.add_parser("emit-conic", help="write the exponential-cone program")
    common(p)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--solve", action="store_true",
                   help="solve with cvxpy and print the variable values")
    p.set_defaults(func=cmd_emit_conic)

    p = sub.add_parser("bench", help="time the capped solver on a directory of .pb files")
    p.add_argument("directory")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--rescale-target", type=float, default=DEFAULT_RESCALE_TARGET)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--no-dedup", action="store_true", help="keep duplicate ballots as separate agents")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(args.command, getattr(args, "mode", None), getattr(args, "tol", 1e-6),
                        getattr(args, "max_iters", None), args.rescale_target, args.out,
                        getattr(args, "seed", 0))
        return args.func(args, cfg)
    except LindahlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
