"""Command-line entry point.

Every command writes JSON lines: a run record first, then results, then a
summary line. Exit codes: 0 pass, 1 certified failure, 2 inconclusive or an
uncertified failure, 3 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import approx as ap
from . import category as cat
from . import convergence as cv
from . import gallery as gal
from . import io as mio
from . import weaklimit as wl
from .mmspace import PointMap, validate_space
from .report import Verdict, dumps

EXIT_PASS, EXIT_FAIL, EXIT_UNSURE, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser, top: bool):
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=d(0), help="search seed")
    g.add_argument("--depth", type=int, default=d(3), help="test-function family depth")
    g.add_argument("--budget", type=int, default=d(10000), help="local-search attempts per net")
    g.add_argument("--tol", type=float, default=d(1e-9), help="numerical tolerance")
    g.add_argument("--grid", type=float, nargs=3, metavar=("START", "FLOOR", "RATIO"), default=d(None),
                   help="eps grid for approximation search")
    g.add_argument("--out", default=d(None), help="write the report (or generated document) here")
    g.add_argument("--csv", default=d(None), help="write plot data as CSV here")
    g.add_argument("--family-cache", default=d(None), help="directory for cached test-function families")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmlimit", description="Limits of pointed metric measure spaces.")
    _common(p, True)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(parent, name, help):
        q = parent.add_parser(name, help=help)
        _common(q, False)
        return q

    q = cmd(sub, "validate", "check the axioms of a space document")
    q.add_argument("space")
    q.add_argument("--limit", type=int, default=None, help="stop after this many violations")

    gen = sub.add_parser("gen", help="generate gallery examples").add_subparsers(dest="what", required=True,
                                                                                 parser_class=_Parser)
    q = cmd(gen, "simplex", "uniform simplex (or the sequence 1..i with --sequence)")
    q.add_argument("--i", type=int, required=True)
    q.add_argument("--sequence", action="store_true")
    q = cmd(gen, "inverse-example", "inverse system of scaled basis vectors")
    q.add_argument("--i-max", type=int, required=True)
    q.add_argument("--K", type=int, required=True)
    q.add_argument("--basepoint", choices=["bond", "growing"], default="bond")
    q = cmd(gen, "prokhorov", "host space and measure sequence without tightness")
    q.add_argument("--J", type=int, required=True)
    q.add_argument("--N", type=int, required=True)
    q = cmd(gen, "grid", "evenly spaced line grid")
    q.add_argument("--points", type=int, required=True)
    q.add_argument("--extent", type=float, default=1.0)
    q = cmd(gen, "merging-chain", "direct system of halving line grids")
    q.add_argument("--levels", type=int, default=6)

    apx = sub.add_parser("approx", help="approximations between spaces").add_subparsers(
        dest="what", required=True, parser_class=_Parser)
    for name, help in [("verify", "verify a map"), ("invert", "rough inverse of a map"),
                       ("glue", "glue two spaces along a weak approximation")]:
        q = cmd(apx, name, help)
        q.add_argument("source")
        q.add_argument("target")
        q.add_argument("--map", required=True, help="map document ({img, good, R, eps} or {img})")
        q.add_argument("--strict", action="store_true", help="treat the map as an (R, eps)-approximation")
        q.add_argument("--R", type=float, default=None)
        q.add_argument("--eps", type=float, default=None)
    q = cmd(apx, "search", "search for a weak approximation")
    q.add_argument("source")
    q.add_argument("target")
    q.add_argument("--R", type=float, required=True)
    q.add_argument("--trace", default=None, help="JSON-lines search trace")

    ms = sub.add_parser("measures", help="weak convergence of measures").add_subparsers(
        dest="what", required=True, parser_class=_Parser)
    q = cmd(ms, "delta", "delta distance between two measures on a host")
    q.add_argument("host")
    q.add_argument("--mu", required=True)
    q.add_argument("--nu", required=True)
    q = cmd(ms, "cauchy", "asymptotic Cauchy check of a measure sequence")
    q.add_argument("sequence")
    q.add_argument("--schedule", type=float, nargs="+", required=True)
    q = cmd(ms, "limit", "weak limit of a measure sequence")
    q.add_argument("sequence")
    q = cmd(ms, "tight", "tightness of a measure sequence")
    q.add_argument("sequence")
    q.add_argument("--eps", type=float, required=True)
    q.add_argument("--radius", type=float, default=None)
    q = cmd(ms, "lift", "lift a target measure along approximations")
    q.add_argument("manifest", help='{"target": space, "measure": [...], "approximations": [...]}')

    sq = sub.add_parser("seq", help="sequences of spaces").add_subparsers(dest="what", required=True,
                                                                          parser_class=_Parser)
    q = cmd(sq, "ubf", "base-ball mass profile")
    q.add_argument("manifest")
    q.add_argument("--R", type=float, nargs="+", required=True)
    q = cmd(sq, "bmttb", "uniform covering check")
    q.add_argument("manifest")
    q.add_argument("--triple", type=float, nargs=3, action="append", required=True, metavar=("R", "r", "EPS"))
    q = cmd(sq, "wpmgh", "weak approximations towards a candidate limit")
    q.add_argument("manifest")
    q.add_argument("--limit", required=True, dest="limit_space")
    q.add_argument("--schedule", type=float, nargs="+", required=True, help="R_1 eps_1 R_2 eps_2 ...")
    q = cmd(sq, "tangent", "rescaled copies of a space at a point")
    q.add_argument("space")
    q.add_argument("--point", type=int, required=True)
    q.add_argument("--scales", type=float, nargs="+", required=True)
    q.add_argument("--triple", type=float, nargs=3, action="append", default=None, metavar=("R", "r", "EPS"))

    lim = sub.add_parser("limit", help="stage-N limits of systems").add_subparsers(
        dest="what", required=True, parser_class=_Parser)
    q = cmd(lim, "direct", "direct limit at a stage")
    q.add_argument("manifest")
    q.add_argument("--stage", type=int, required=True)
    q.add_argument("--R", type=float, nargs="+", default=None)
    q = cmd(lim, "inverse", "inverse limit at a stage")
    q.add_argument("manifest")
    q.add_argument("--stage", type=int, required=True)
    q.add_argument("--r", type=float, nargs="+", default=None)
    q.add_argument("--threads", action="store_true", help="list every thread")
    return p


# ---------------------------------------------------------------------------


class Run:
    def __init__(self, args, argv):
        self.args = args
        self.lines: list[str] = []
        inputs = {}
        for key in ("space", "source", "target", "host", "sequence", "manifest", "map", "mu", "nu", "limit_space"):
            path = getattr(args, key, None)
            if isinstance(path, str) and Path(path).is_file():
                inputs[path] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
        self.emit({"event": "run", "argv": list(argv), "config": config, "inputs": inputs,
                   "threads": os.environ.get("MMLIMIT_THREADS", "1")})

    def emit(self, obj):
        self.lines.append(dumps(obj))

    def finish(self, command: str, verdict: Verdict | None, certified_fail: bool = False) -> int:
        if verdict is None:
            status, code = "pass", EXIT_PASS
            self.emit({"event": "summary", "command": command, "status": status})
        else:
            if verdict.ok:
                code = EXIT_PASS
            elif verdict.status == "fail" and (verdict.certified or certified_fail):
                code = EXIT_FAIL
            else:
                code = EXIT_UNSURE
            self.emit({"event": "summary", "command": command, "status": verdict.status,
                       "certified": bool(verdict.certified or (certified_fail and verdict.status == "fail")),
                       "reason": verdict.reason})
        text = "\n".join(self.lines) + "\n"
        if self.args.out and command.split()[0] != "gen":
            Path(self.args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return code


def _grid(args):
    if args.grid is None:
        return None
    start, floor, ratio = args.grid
    return ap.eps_grid(start, floor, ratio)


def _family(args, host):
    if args.family_cache:
        return wl.load_or_build_family(host, args.depth, args.family_cache)
    return wl.build_test_family(host, args.depth)


def _write_csv(args, text):
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")


def cmd_validate(args, run):
    s = mio.load_space(args.space)
    rep = validate_space(s, args.limit)
    for v in rep.violations:
        run.emit({"violation": v.kind, "indices": list(v.indices), "message": v.message})
    verdict = Verdict.passed() if rep.ok else Verdict.failed(f"{len(rep.violations)} violation(s)", certified=True)
    return run.finish("validate", verdict)


def _gen_write(args, run, doc, extra=None):
    if not args.out:
        raise UsageError("gen needs --out")
    out = Path(args.out)
    spaces = doc.get("spaces") if isinstance(doc, dict) else None
    if spaces is not None:
        names = []
        for k, sdoc in enumerate(spaces):
            name = f"{out.stem}.stage{k + 1}.json"
            mio.save_json(sdoc, out.parent / name)
            names.append(name)
        doc = dict(doc, spaces=names)
    mio.save_json(doc, out)
    run.emit(dict({"generated": str(out), "sha256": mio.doc_hash(doc)}, **(extra or {})))
    return run.finish(f"gen {args.what}", None)


def cmd_gen(args, run):
    w = args.what
    if w == "simplex":
        if args.sequence:
            doc = {"spaces": [mio.space_to_doc(s) for s in gal.gen_simplex_sequence(args.i)]}
        else:
            doc = mio.space_to_doc(gal.gen_uniform_simplex(args.i))
        return _gen_write(args, run, doc)
    if w == "inverse-example":
        sysm = gal.gen_inverse_example(args.i_max, args.K, args.basepoint)
        return _gen_write(args, run, mio.system_to_docs(sysm))
    if w == "prokhorov":
        host, seq = gal.gen_prokhorov_sharp(args.J, args.N)
        doc = {"host": mio.space_to_doc(host), "measures": seq.weights.tolist()}
        return _gen_write(args, run, doc)
    if w == "grid":
        return _gen_write(args, run, mio.space_to_doc(gal.gen_doubling_grid(args.points, args.extent)))
    if w == "merging-chain":
        return _gen_write(args, run, mio.system_to_docs(gal.gen_merging_chain(args.levels)))
    raise UsageError(f"unknown generator {w}")


def _load_map(args, X, Y):
    doc = mio.load_json(args.map)
    if "approx" in doc:
        doc = doc["approx"]
    f = PointMap(X, Y, doc["img"])
    if args.strict:
        R = args.R if args.R is not None else doc.get("R")
        eps = args.eps if args.eps is not None else doc.get("eps")
        if R is None or eps is None:
            raise UsageError("strict maps need --R and --eps")
        return f, float(R), float(eps), None
    return f, float(doc["R"]), float(doc["eps"]), ap.WeakApprox(f, np.asarray(doc["good"]), float(doc["R"]),
                                                                  float(doc["eps"]))


def cmd_approx(args, run):
    X = mio.load_space(args.source)
    Y = mio.load_space(args.target)
    w = args.what
    if w == "search":
        trace_lines = []
        tr = (lambda ev: trace_lines.append(dumps(ev))) if args.trace else None
        res = ap.search_weak_approximation(X, Y, args.R, args.budget, args.seed, _grid(args), trace=tr)
        if args.trace:
            Path(args.trace).write_text("\n".join(trace_lines) + ("\n" if trace_lines else ""), encoding="utf-8")
        run.emit({"approx": res.approx.to_dict(), "achieved_eps": res.achieved_eps,
                  "evaluated": res.evaluated, "accepted_swaps": res.accepted_swaps})
        return run.finish("approx search", res.verdict)
    f, R, eps, weak = _load_map(args, X, Y)
    if w == "verify":
        v = ap.verify_approximation(f, R, eps) if weak is None else ap.verify_weak_approximation(weak)
        run.emit({"verdict": v.to_dict()})
        return run.finish("approx verify", v, certified_fail=True)
    if w == "invert":
        if weak is None:
            phi = ap.quasi_inverse(f, R, eps)
            run.emit({"inverse": {"img": phi.img.tolist(), "R": R, "eps": eps}})
        else:
            inv = ap.rough_inverse_weak(weak)
            run.emit({"inverse": inv.to_dict()})
        return run.finish("approx invert", None)
    if w == "glue":
        if weak is None:
            raise UsageError("glue needs a weak approximation document")
        G, ex, ey = ap.glue(X, Y, weak)
        run.emit({"space": mio.space_to_doc(G), "embed_source": ex.img.tolist(), "embed_target": ey.img.tolist()})
        return run.finish("approx glue", None)
    raise UsageError(f"unknown approx command {w}")


def cmd_measures(args, run):
    w = args.what
    if w == "delta":
        host = mio.load_space(args.host)
        mu, nu = mio.load_measure(args.mu, host), mio.load_measure(args.nu, host)
        fam = _family(args, host)
        run.emit({"delta": wl.delta_metric(mu, nu, fam), "family_size": len(fam),
                  "truncation_error": fam.truncation_error})
        return run.finish("measures delta", None)
    if w == "lift":
        return _lift(args, run)
    seq = mio.load_measure_sequence(args.sequence)
    if w == "cauchy":
        v = wl.is_asymptotically_cauchy(seq, _family(args, seq.host), args.schedule)
        run.emit({"verdict": v.to_dict()})
        return run.finish("measures cauchy", v)
    if w == "limit":
        rep = wl.weak_limit(seq, _family(args, seq.host), tol=args.tol)
        run.emit({"limit": None if rep.limit is None else rep.limit.weight.tolist(),
                  "oscillation": rep.oscillation, "rows": [r.__dict__ for r in rep.rows]})
        return run.finish("measures limit", rep.verdict)
    if w == "tight":
        rep = wl.prokhorov_tightness(seq, args.eps, args.radius)
        run.emit({"T": list(map(int, rep.T)), "centers": list(map(int, rep.centers)), "residual": rep.residual,
                  "limsup": rep.limsup})
        return run.finish("measures tight", rep.verdict)
    raise UsageError(f"unknown measures command {w}")


def _lift(args, run):
    root = Path(args.manifest).parent
    doc = mio.load_json(args.manifest)
    Y = mio.space_from_doc(mio._resolve(doc["target"], root))
    target = np.asarray(doc.get("measure", Y.weight.tolist()), dtype=float)
    approxs = []
    for a in doc["approximations"]:
        X = mio.space_from_doc(mio._resolve(a["source"], root))
        approxs.append((PointMap(X, Y, a["img"]), float(a["R"]), float(a["eps"])))
    from .mmspace import Measure

    res = wl.lift_measure(approxs, Measure(Y, target))
    run.emit({"measures": [m.weight.tolist() for m in res.measures], "J": res.J,
              "representatives": res.representatives, "c": res.c, "entry_stage": res.entry_stage,
              "missing": res.missing})
    return run.finish("measures lift", res.verdict)


def cmd_seq(args, run):
    w = args.what
    if w == "tangent":
        s = mio.load_space(args.space)
        params = [tuple(t) for t in args.triple] if args.triple else [(1.0, 0.25, 0.0)]
        res = cv.tangent_sequence(s, args.point, args.scales, params)
        for b in res.bmttb:
            run.emit({"bmttb": b.to_dict()})
        run.emit({"doubling": res.doubling.to_dict()})
        _write_csv(args, cv.doubling_csv(res.doubling))
        return run.finish("seq tangent", _worst([b.verdict for b in res.bmttb]))
    spaces = mio.load_spaces(args.manifest)
    if w == "ubf":
        prof = cv.uniform_bounded_finiteness(spaces, args.R)
        run.emit({"ubf": prof.to_dict()})
        return run.finish("seq ubf", None)
    if w == "bmttb":
        results = cv.bmttb_check(spaces, [tuple(t) for t in args.triple])
        for b in results:
            run.emit({"bmttb": b.to_dict()})
        _write_csv(args, cv.cover_csv(results))
        return run.finish("seq bmttb", _worst([b.verdict for b in results]))
    if w == "wpmgh":
        limit = mio.load_space(args.limit_space)
        sch = args.schedule
        if len(sch) != 2 * len(spaces):
            raise UsageError("schedule needs one (R, eps) pair per space")
        pairs = list(zip(sch[0::2], sch[1::2]))
        v = cv.wpmgh_sequence_check(spaces, limit, pairs, args.depth, args.tol, args.budget, args.seed)
        run.emit({"verdict": v.to_dict()})
        return run.finish("seq wpmgh", v)
    raise UsageError(f"unknown seq command {w}")


def _worst(vs: list[Verdict]) -> Verdict:
    for v in vs:
        if v.status == "fail" and v.certified:
            return v
    for v in vs:
        if not v.ok:
            return v
    return vs[0] if vs else Verdict.passed()


def cmd_limit(args, run):
    sysm = mio.load_system(args.manifest)
    if args.what == "direct":
        if sysm.kind != "direct":
            raise UsageError("manifest is not a direct system")
        res = cat.direct_limit_stage(sysm, args.stage, 0.0, args.R)
        run.emit({"limit": res.to_dict(), "space": mio.space_to_doc(res.space)})
        return run.finish("limit direct", res.verdict)
    if sysm.kind != "inverse":
        raise UsageError("manifest is not an inverse system")
    env = sysm.meta.get("envelope")
    res = cat.inverse_limit_stage(sysm, args.stage, args.tol, args.r,
                                  None if env is None else cat.Envelope.from_doc(env))
    out = {"limit": res.to_dict(), "threads": len(res.threads)}
    if args.threads:
        out["thread_table"] = res.threads.stages.T.tolist()
    run.emit(out)
    return run.finish("limit inverse", res.verdict)


COMMANDS = {"validate": cmd_validate, "gen": cmd_gen, "approx": cmd_approx, "measures": cmd_measures,
            "seq": cmd_seq, "limit": cmd_limit}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    try:
        run = Run(args, argv)
        return COMMANDS[args.command](args, run)
    except (UsageError, ValueError, KeyError, IndexError, OSError, json.JSONDecodeError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        sys.stderr.write(f"mmlimit: error: {msg}\n")
        return EXIT_USAGE
    except Exception as e:  # malformed documents can fail deep inside numpy
        sys.stderr.write(f"mmlimit: error: {type(e).__name__}: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
