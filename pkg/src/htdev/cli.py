"""Command-line interface: ``htdev {validate,delta,submersion,certify,scan}``.

Exit codes: 0 success, 1 validation failure, 2 usage or parse error,
3 solver did not converge (the result is still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .algebra import AlgebraError, VerticalMetric, VerticalSemimetric
from .deviation import (
    OuterOptions,
    SolverOptions,
    deviation_given_metric,
    deviation_given_semimetric,
    optimize_metric,
)
from .rigidity import RigidityOptions, rigidity_check
from .submersion import (
    SubmersionError,
    bound_via_submersion,
    build_submersion_to_h1,
    counterexample_f22n_to_hn,
    verify_submersion,
)
from .zoo import PAPER, closed_form_delta, random_algebra

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_NOCONV = 0, 1, 2, 3

log = logging.getLogger("htdev")


class UsageError(Exception):
    pass


def _source(args):
    """(GroupFile, StepTwoAlgebra, FamilyDescriptor | None) from a path or --family."""
    if getattr(args, "family", None) and getattr(args, "path", None):
        raise UsageError("give a group file or --family, not both")
    if getattr(args, "family", None):
        gf = io.GroupFile(family=args.family)
        try:
            io.GroupFile.from_dict(gf.to_dict())
        except io.GroupFileError as exc:
            raise UsageError(str(exc)) from None
    elif getattr(args, "path", None):
        gf = io.GroupFile.load(args.path)
    else:
        raise UsageError("need a group file or --family")
    rep = gf.validate()
    if not rep:
        raise AlgebraError(rep.reason)
    return gf, gf.algebra(), gf.descriptor()


def _parse_Q(text, p: int):
    """``identity``, ``diag:a,b,...`` (Gram entries) or a JSON file holding a matrix."""
    if text is None:
        return None
    if text == "identity":
        return np.eye(p)
    if text.startswith("diag:"):
        try:
            vals = [float(v) for v in text[5:].split(",")]
        except ValueError:
            raise UsageError(f"cannot parse {text!r}") from None
        if len(vals) != p:
            raise UsageError(f"diag metric needs {p} entries, got {len(vals)}")
        return np.diag(vals)
    path = Path(text)
    if not path.exists():
        raise UsageError(f"metric {text!r} is neither identity, diag:..., nor a file")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid metric file: {exc}") from None
    if isinstance(doc, dict):
        doc = doc.get("vertical_metric", doc.get("Q"))
    Q = np.asarray(doc, dtype=float)
    if Q.shape != (p, p):
        raise UsageError(f"metric must be {p}x{p}, got {Q.shape}")
    return Q


def _solver_opts(args) -> SolverOptions:
    return SolverOptions(n_starts=args.starts, max_iter=args.max_iter, tol=args.tol, seed=args.seed)


def _emit(args, result: dict) -> None:
    text = io.dump_result(result, getattr(args, "output", None))
    print(text)


def _echo(gf: io.GroupFile, args) -> dict:
    return {"group": gf.to_dict(), "argv": list(getattr(args, "argv", []))}


# ---------------------------------------------------------------- validate
def cmd_validate(args) -> int:
    gf = io.GroupFile.load(args.path)
    rep = gf.validate()
    out = {"command": "validate", "path": str(args.path), "ok": rep.ok}
    if not rep:
        out["reason"] = rep.reason
        if rep.offending is not None:
            out["offending"] = list(rep.offending)
    else:
        G = gf.algebra()
        out.update(m=G.m, p=G.p)
    _emit(args, out)
    return EXIT_OK if rep else EXIT_INVALID


# ------------------------------------------------------------------- delta
def _quaternionic_formula(Q):
    d = np.diag(Q)
    if np.allclose(Q, np.diag(d)) and np.all(d > 0):
        return float(np.max(np.abs(1.0 - d)))
    return None


def cmd_delta(args) -> int:
    gf, G, fam = _source(args)
    Q = _parse_Q(args.Q, G.p)
    if Q is None and gf.vertical_metric is not None:
        Q = np.asarray(gf.vertical_metric)
    inner = _solver_opts(args)
    out = {"command": "delta", **_echo(gf, args), "metric_mode": args.metric}

    if args.metric == "optimize":
        initial = ()
        if Q is not None:
            sm = VerticalSemimetric(Q)
            if sm.rank < G.p:
                raise UsageError("a semimetric cannot seed --metric optimize; the search runs over metrics")
            initial = (Q,)
        opts = OuterOptions(outer_iters=args.outer_iters, restarts=args.restarts,
                            seed=args.seed, inner=inner)
        res = optimize_metric(G, opts, initial_metrics=initial, family=fam)
        out.update(
            delta=res.value,
            Q_best=res.Q_best,
            witness_t=res.inner.witness_t,
            converged=res.converged,
            diagnostics=dict(evaluations=res.evaluations, starts=res.inner.n_starts,
                             iterations=res.inner.iterations, grad_norm=res.inner.grad_norm,
                             seed=args.seed, outer_iters=args.outer_iters, restarts=args.restarts),
        )
        converged = res.converged
        if fam is not None:
            try:
                val, tag = closed_form_delta(fam)
                out["closed_form"] = {"value": val, "provenance": tag,
                                      "abs_diff": abs(res.value - val)}
            except AlgebraError:
                pass
    else:
        if Q is None:
            Q = np.eye(G.p)
        sm = VerticalSemimetric(Q)
        if sm.rank == G.p:
            res = deviation_given_metric(G, VerticalMetric(Q).Q, inner)
            out["path"] = "metric"
        else:
            res = deviation_given_semimetric(G, sm.Q, inner)
            out["path"] = f"semimetric (rank {sm.rank})"
        out.update(
            delta=res.value,
            Q=Q,
            witness_t=res.witness_t,
            converged=res.converged,
            diagnostics=dict(starts=res.n_starts, iterations=res.iterations,
                             grad_norm=res.grad_norm, seed=args.seed),
        )
        converged = res.converged
        if fam is not None and fam.tag == "quaternionic":
            val = _quaternionic_formula(Q)
            if val is not None:
                out["closed_form"] = {"value": val, "provenance": PAPER,
                                      "abs_diff": abs(res.value - val)}
    _emit(args, out)
    return EXIT_OK if converged else EXIT_NOCONV


# -------------------------------------------------------------- submersion
def _report_dict(rep) -> dict:
    return {
        name: {"passed": c.passed, "residual": c.residual, "detail": c.detail}
        for name, c in [("1_homomorphism", rep.homomorphism), ("2_surjective", rep.surjective),
                        ("3_isometry", rep.isometry), ("4_isomorphism_W2", rep.isomorphism_w2),
                        ("direct_sum", rep.direct_sum)]
    }


def cmd_submersion(args) -> int:
    if args.counterexample:
        tag, _, n = args.counterexample.partition(":")
        if tag != "f22n" or not n.isdigit():
            raise UsageError("--counterexample expects f22n:<n>")
        F, rep, G = counterexample_f22n_to_hn(int(n))
        out = {"command": "submersion", "counterexample": args.counterexample,
               "conditions": _report_dict(rep), "failed": rep.failed(), "all_passed": rep.ok}
        _emit(args, out)
        return EXIT_OK if rep.ok else EXIT_INVALID

    gf, G, _ = _source(args)
    if args.pair == "auto":
        pair = ("auto", "auto")
    else:
        try:
            j, k = (int(v) - 1 for v in args.pair.split(","))
        except ValueError:
            raise UsageError("--pair expects j,k (1-based) or auto") from None
        pair = (j, k)
    out = {"command": "submersion", **_echo(gf, args), "pair": args.pair}
    try:
        F = build_submersion_to_h1(G, *pair)
    except SubmersionError as exc:
        out.update(all_passed=False, error=str(exc))
        _emit(args, out)
        return EXIT_INVALID
    rep = verify_submersion(F, G)
    out.update(
        chosen_pair=None if F.pair is None else [F.pair[0] + 1, F.pair[1] + 1],
        construction=F.note,
        F1=F.F1, F2=F.F2,
        conditions=_report_dict(rep),
        failed=rep.failed(),
        all_passed=rep.ok,
    )
    if args.epsilons:
        eps = [float(v) for v in args.epsilons.split(",")]
        table = bound_via_submersion(G, eps, pair, _solver_opts(args))
        out["epsilon_table"] = [{"eps": e, "delta": d} for e, d in table]
    _emit(args, out)
    return EXIT_OK if rep.ok else EXIT_INVALID


# ----------------------------------------------------------------- certify
def cmd_certify(args) -> int:
    gf, G, _ = _source(args)
    if args.metric is None:
        Q = np.asarray(gf.vertical_metric) if gf.vertical_metric is not None else np.eye(G.p)
    else:
        Q = _parse_Q(args.metric, G.p)
    opts = RigidityOptions(n_starts=args.starts, n_samples=args.samples, seed=args.seed)
    chk = rigidity_check(G, Q, opts, _solver_opts(args))
    r = chk.report
    out = {
        "command": "certify", **_echo(gf, args),
        "Q": Q,
        "A": r.A, "B": r.B,
        "witness_X_A": r.witness_X_A, "witness_X_B": r.witness_X_B,
        "rank_deficient": r.rank_deficient,
        "algebraic_htype": r.algebraic_htype,
        "algebraic_reason": r.reason,
        "min_pth_sv": r.min_pth_sv,
        "delta": chk.delta.value,
        "delta0": r.threshold,
        "lower_inequality": {"holds": chk.lower_ok, "margin": chk.lower_margin},
        "upper_inequality": {"holds": chk.upper_ok, "margin": chk.upper_margin},
        "delta_below_threshold": chk.below_threshold,
        "implication_holds": chk.implication_ok,
        "tol": chk.tol,
        "seed": args.seed,
    }
    _emit(args, out)
    ok = chk.lower_ok and chk.upper_ok and chk.implication_ok is not False
    return EXIT_OK if ok else EXIT_INVALID


# -------------------------------------------------------------------- scan
def instance_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint64)[0] >> 1)


def cmd_scan(args) -> int:
    m, p = args.m, args.p
    if m < 2 or not 1 <= p <= m * (m - 1) // 2:
        raise UsageError(f"need m >= 2 and 1 <= p <= {m * (m - 1) // 2}")
    conj = math.sqrt((m - 2) / m)
    slack = 1e-2
    opts = OuterOptions(outer_iters=args.outer_iters, restarts=args.restarts, seed=args.seed,
                        inner=_solver_opts(args))
    rows = []
    print(f"{'idx':>4} {'seed':>20} {'delta':>12} {'conj':>10} {'>1':>4} {'>conj':>6}")
    for i in range(args.count):
        s = instance_seed(args.seed, i)
        G = random_algebra(m, p, s)
        res = optimize_metric(G, opts)
        over1 = res.value > 1 + slack
        overc = res.value > conj + slack
        rows.append({"index": i, "seed": s, "delta": res.value, "conjecture": conj,
                     "exceeds_1": over1, "exceeds_conjecture": overc, "converged": res.converged})
        print(f"{i:>4} {s:>20} {res.value:>12.8f} {conj:>10.6f} {'!' if over1 else '':>4} "
              f"{'*' if overc else '':>6}")
    out = {"command": "scan", "m": m, "p": p, "count": args.count, "seed": args.seed,
           "rows": rows, "any_exceeds_1": any(r["exceeds_1"] for r in rows),
           "any_exceeds_conjecture": any(r["exceeds_conjecture"] for r in rows)}
    if args.output:
        io.dump_result(out, args.output)
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="htdev", description="H-type deviation of step-two Carnot groups.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def solver(p, starts=32):
        p.add_argument("--starts", type=int, default=starts, help="quasi-random starts (default %(default)s)")
        p.add_argument("--max-iter", type=int, default=500)
        p.add_argument("--tol", type=float, default=1e-9, help="inner gradient-norm tolerance")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--output", "-o", help="write the JSON result here too")

    def source(p):
        p.add_argument("path", nargs="?", help="group file (JSON)")
        p.add_argument("--family", help="compact family spec, e.g. free:3 or product:1,2")

    p = sub.add_parser("validate", help="check a group file")
    p.add_argument("path")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("delta", help="deviation for a given metric or optimized over metrics")
    source(p)
    p.add_argument("--metric", choices=("given", "optimize"), default="given")
    p.add_argument("--Q", help="identity | diag:q1,...,qp (Gram diagonal) | path to JSON matrix")
    p.add_argument("--outer-iters", type=int, default=400)
    p.add_argument("--restarts", type=int, default=3)
    solver(p)
    p.set_defaults(func=cmd_delta)

    p = sub.add_parser("submersion", help="build and verify a submersion onto H^1")
    source(p)
    p.add_argument("--pair", default="auto", help="j,k (1-based) or auto")
    p.add_argument("--epsilons", help="comma-separated eps values for the degenerating metrics")
    p.add_argument("--counterexample", help="f22n:<n> for the map F_2,2n -> H^n")
    solver(p)
    p.set_defaults(func=cmd_submersion)

    p = sub.add_parser("certify", help="(A,B) constants, algebraic H-type and rigidity inequalities")
    source(p)
    p.add_argument("--metric", help="identity | diag:... | path to JSON matrix (default: file or identity)")
    p.add_argument("--samples", type=int, default=256)
    solver(p, starts=16)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("scan", help="optimize random algebras and tabulate against the bounds")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--outer-iters", type=int, default=400)
    p.add_argument("--restarts", type=int, default=3)
    solver(p)
    p.set_defaults(func=cmd_scan)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    args.argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, io.GroupFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AlgebraError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
