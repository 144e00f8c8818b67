"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 contract violation. Errors are also
written to stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, approx, dualcert
from .data import DataFormatError, all_marginals, iter_queries_jsonl, load_csv, load_queries_jsonl, true_answer
from .mwidc import MistakeBudgetExceeded
from .privrelease import (
    InsufficientDataError,
    NotConverged,
    QueryBudgetExhausted,
    build_mechanism,
    release_summary,
    run_pass,
)

APPROX_SCHEMA = "privmarg.approx/1"
INGEST_SCHEMA = "privmarg.ingest/1"
CERT_SCHEMA = "privmarg.certificate/1"
BENCH_SCHEMA = "privmarg.bench/1"

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT = 0, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def _release_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="database CSV")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-6)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--queries-budget", type=int, default=None, help="total queries l (default: one pass)")
    p.add_argument("--mistake-budget", type=int, default=None)
    p.add_argument("--noise", choices=("laplace", "off"), default="laplace")
    p.add_argument("--amplifier", choices=("auto", "interpolation", "chebyshev"), default="auto")
    p.add_argument("--block-count", type=int, default=None)
    p.add_argument("--weight-cap", type=float, default=None)
    p.add_argument("--on-budget-exhausted", choices=("raise", "guess"), default="raise")
    p.add_argument("--max-entries", type=int, default=2 ** 26, help="cap on the MW vector length")
    p.add_argument("--force", action="store_true", help="run even if n is below the required size")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="privmarg", description="Private k-way marginal release via low-weight OR approximations.")
    parser.add_argument("--version", action="version", version=f"privmarg {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key=value file; command-line flags take precedence")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest-check", parents=[common], help="validate a database and optional query file")
    p.add_argument("--data", required=True)
    p.add_argument("--queries")
    p.add_argument("--k", type=int, default=None)

    p = sub.add_parser("build-approx", parents=[common], help="build and verify an OR approximation")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, default=None, help="Hamming radius; omit for a global approximation")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--m", type=int, default=None, help="block count (default: chosen by scan)")
    p.add_argument("--amplifier", choices=("auto", "interpolation", "chebyshev"), default=None)
    p.add_argument("--weight-cap", type=float, default=None)
    p.add_argument("--expand", action="store_true", help="also print the expanded polynomial")
    p.add_argument("--expansion-budget", type=int, default=approx.DEFAULT_EXPANSION_BUDGET)
    p.add_argument("--enumeration-budget", type=int, default=approx.DEFAULT_ENUMERATION_BUDGET)

    p = sub.add_parser("release-offline", parents=[common], help="answer every k-way marginal")
    _release_flags(p)
    p.add_argument("--queries", help="query JSONL (default: all marginals of arity <= k)")
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--report", help="write the run report here instead of stdout")

    p = sub.add_parser("serve-online", parents=[common], help="answer query JSONL from stdin")
    _release_flags(p)

    p = sub.add_parser("summary", parents=[common], help="release a sampled polynomial summary")
    _release_flags(p)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--max-passes", type=int, default=100)

    p = sub.add_parser("certify-lb", parents=[common], help="certify a weight-degree lower bound")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--gamma", type=float, default=1 / 6)
    p.add_argument("--W", type=float, default=None, help="weight to certify against (default: cutoff)")
    p.add_argument("--degree", type=int, default=1, help="s; a pass certifies degree >= s + 1")
    p.add_argument("--outer-degree", type=int, default=None)
    p.add_argument("--no-primal", action="store_true")

    p = sub.add_parser("bench", parents=[common], help="per-query cost across block counts")
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--block-counts", default=None, help="comma-separated m values over the 2d columns")
    p.add_argument("--max-entries", type=int, default=2 ** 22)
    return parser


def _read_config(path: str) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    # required flags can come from the file, so read it before argparse checks them
    path = _config_path(argv)
    subs = parser._subparsers._group_actions[0].choices if parser._subparsers else {}
    command = next((tok for tok in argv if tok in subs), None)
    if path is None or command is None:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no subcommand given")
        return args
    args = argparse.Namespace(command=command, config=path)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in _read_config(args.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except ValueError:
            raise UsageError(f"config key {key!r}: bad value {raw!r}") from None
        if action.choices and value not in action.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
        defaults[key] = value
    subparser.set_defaults(**defaults)
    # required flags may now come from the file
    for a in subparser._actions:
        if a.dest in defaults:
            a.required = False
    return parser.parse_args(argv)


def _mechanism(args, D):
    queries = args.queries_budget
    if queries is None:
        from .data import count_marginals
        queries = count_marginals(D.d, args.k) * max(1, getattr(args, "passes", 1))
    return build_mechanism(
        D, args.k, epsilon=args.eps, delta=args.delta, alpha=args.alpha, beta=args.beta,
        queries=queries, mistake_budget=args.mistake_budget, noise=args.noise,
        amplifier=args.amplifier, block_count=args.block_count, weight_cap=args.weight_cap,
        on_budget_exhausted=args.on_budget_exhausted, force=args.force, seed=args.seed,
        max_entries=args.max_entries,
    )


def cmd_ingest_check(args, out) -> int:
    D = load_csv(args.data)
    report = {"schema": INGEST_SCHEMA, "n": D.n, "d": D.d, "columns": list(D.columns)}
    if args.queries:
        qs = load_queries_jsonl(args.queries, D)
        if args.k is not None:
            for q in qs:
                if q.arity > args.k:
                    raise DataFormatError(f"query {q.id!r} has arity {q.arity} > k={args.k}")
        report.update(queries=len(qs), max_arity=qs.max_arity,
                      kinds=sorted({q.kind for q in qs}))
    out.write(_dump(report) + "\n")
    return EXIT_OK


def cmd_build_approx(args, out) -> int:
    mode = "global" if args.k is None else "restricted"
    if args.m is None:
        choice = approx.choose_block_count(args.d, args.k, args.gamma, mode, args.weight_cap,
                                           args.amplifier, args.expansion_budget)
        spec = choice.spec
    elif mode == "global":
        spec = approx.build_global_approx(args.d, args.m, args.gamma, args.amplifier or "chebyshev")
    else:
        spec = approx.build_restricted_approx(args.d, args.k, args.m, args.gamma, args.amplifier or "auto")
    radius = args.d if args.k is None else args.k
    rep = approx.verify_on_ball(spec, radius, args.gamma, expand_poly=args.expand,
                                enumeration_budget=args.enumeration_budget,
                                expansion_budget=args.expansion_budget)
    report = {
        "schema": APPROX_SCHEMA, "d": args.d, "k": args.k, "m": spec.block_count, "gamma": args.gamma,
        "mode": mode, "amplifier": spec.amplifier_kind, "amplifier_degree": spec.amplifier.degree,
        "degree": spec.degree_bound, "weight_bound": spec.weight_bound, "max_error": rep.max_error,
        "points": rep.points, "passed": rep.passed,
    }
    if args.expand:
        report["realized_weight"] = rep.realized_weight
        report["realized_degree"] = rep.realized_degree
    out.write(_dump(report) + "\n")
    if args.expand:
        out.write(approx.expand(spec, args.expansion_budget).to_text())
    return EXIT_OK if rep.passed else EXIT_CONTRACT


def _answer_line(qid, value, mode) -> str:
    return _dump({"id": qid, "answer": value, "mode": mode}) + "\n"


def cmd_release_offline(args, out) -> int:
    D = load_csv(args.data)
    queries = list(load_queries_jsonl(args.queries, D)) if args.queries else all_marginals(D.d, args.k)
    mech = _mechanism(args, D)
    if args.passes < 1:
        raise UsageError("--passes must be at least 1")
    table = {}
    passes = 0
    for _ in range(args.passes):
        before = mech.mistakes
        table = {}
        for q in queries:
            table[q.id] = mech.answer(q)
        passes += 1
        if mech.mistakes == before or mech.halted:
            break
    for q in queries:
        value, mode = table[q.id]
        out.write(_answer_line(q.id, value, mode))
    report = mech.report()
    report["passes"] = passes
    report["converged"] = mech.mistakes == before
    text = _dump(report) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


def cmd_serve_online(args, out, stdin=None) -> int:
    D = load_csv(args.data)
    mech = _mechanism(args, D)
    for q in iter_queries_jsonl(stdin or sys.stdin, D):
        value, mode = mech.answer(q)
        out.write(_answer_line(q.id, value, mode))
        out.flush()
    return EXIT_OK


def cmd_summary(args, out) -> int:
    D = load_csv(args.data)
    if args.queries_budget is None:
        from .data import count_marginals
        args.queries_budget = count_marginals(D.d, args.k) * args.max_passes
    mech = _mechanism(args, D)
    s = release_summary(mech, args.samples, args.max_passes)
    out.write(s.poly.to_text())
    return EXIT_OK


def cmd_certify_lb(args, out) -> int:
    cert = dualcert.lower_bound_certificate(args.d, args.k, args.gamma, args.W, args.degree,
                                            D=args.outer_degree, check_primal=not args.no_primal)
    cert = {"schema": CERT_SCHEMA,
            "conditions": {"normalised": cert["normalised"], "margin_positive": cert["margin"] > 0,
                           "support_in_ball": True},
            "margins": {"correlation": cert["correlation"], "max_character": cert["max_character"],
                        "margin": cert["margin"], "flip_W": cert["flip_W"]},
            **cert}
    out.write(_dump(cert) + "\n")
    return EXIT_OK


def cmd_bench(args, out, err) -> int:
    from .data import Database
    from .privrelease import PrivacyParams, Mechanism, plan_family
    rng = np.random.default_rng(args.seed)
    bits = (rng.random((args.n, args.d)) < rng.random(args.d)).astype(np.uint8)
    D = Database(bits)
    pool = all_marginals(D.d, args.k)
    picks = rng.integers(0, len(pool), size=args.queries)
    queries = [pool[i] for i in picks]
    dim = 2 * args.d
    ms = ([int(s) for s in args.block_counts.split(",")] if args.block_counts
          else range(args.k, dim + 1))
    rows = []
    for m in ms:
        try:
            plan = plan_family(args.d, args.k, args.alpha, block_count=m)
            params = PrivacyParams(1.0, 1e-6, args.alpha, 0.05, args.queries, D.n)
            mech = Mechanism(D, args.k, params, plan, noise="off", seed=args.seed,
                             max_entries=args.max_entries)
        except MemoryError:
            continue
        t0 = time.perf_counter()
        worst = 0.0
        for q in queries:
            value, _ = mech.answer(q)
            worst = max(worst, abs(value - true_answer(D, q)))
        per_query = (time.perf_counter() - t0) / len(queries)
        row = {"m": plan.m, "degree": plan.degree, "W": plan.W, "vector_length": plan.vector_length,
               "mistakes": mech.mistakes, "max_error": worst}
        rows.append(row)
        # wall time varies run to run; keep it off stdout so stdout stays reproducible
        err.write(_dump({"m": plan.m, "vector_length": plan.vector_length, "seconds_per_query": per_query}) + "\n")
    out.write(_dump({"schema": BENCH_SCHEMA, "d": args.d, "k": args.k, "alpha": args.alpha,
                     "queries": args.queries, "rows": rows}) + "\n")
    return EXIT_OK


def _set_threads(n: int) -> None:
    if n < 1:
        raise UsageError("--threads must be at least 1")
    dualcert.set_threads(n)


def main(argv=None, stdout=None, stderr=None, stdin=None) -> int:
    out = stdout or sys.stdout
    err = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        _set_threads(args.threads)
    except UsageError as exc:
        err.write(_dump({"error": "usage", "message": str(exc)}) + "\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    handlers = {
        "ingest-check": lambda: cmd_ingest_check(args, out),
        "build-approx": lambda: cmd_build_approx(args, out),
        "release-offline": lambda: cmd_release_offline(args, out),
        "serve-online": lambda: cmd_serve_online(args, out, stdin),
        "summary": lambda: cmd_summary(args, out),
        "certify-lb": lambda: cmd_certify_lb(args, out),
        "bench": lambda: cmd_bench(args, out, err),
    }
    try:
        return handlers[args.command]()
    except FileNotFoundError as exc:
        err.write(_dump({"error": "missing_file", "message": f"{exc.filename}: not found"}) + "\n")
        return EXIT_USAGE
    except (DataFormatError, InsufficientDataError, MistakeBudgetExceeded, QueryBudgetExhausted,
            NotConverged, dualcert.EnumerationBudgetExceeded, dualcert.WitnessError,
            approx.ExpansionBudgetExceeded, MemoryError, ValueError) as exc:
        err.write(_dump({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
