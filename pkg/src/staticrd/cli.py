"""Command-line entry point: ``staticrd synth|unroll|predict|oracle|hitrate|compare|bench``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import statistics
import sys
import tempfile
import time
from pathlib import Path

from .cache import PAPER_CACHES, CacheConfig, hit_rate
from .errors import CapExceeded, EmptyHistogram, InputError, StaticRDError
from .loopnest import LoopNestSpec, count_accesses, load_spec, resolve, synth_annotated, unroll
from .merge import CROSS_MODES, ProgramProfile
from .multilinear import MAX_DEPTH, term_name
from .oracle import COLD, ReuseHistogram
from .pipeline import oracle_spec, predict_spec, predict_trace
from .report import DEFAULT_MIN_FREQ, ComparisonReport
from .trace import parse_trace, serialize_trace

EXIT_OK, EXIT_USAGE = 0, 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------------- io helpers

def write_atomic(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    if str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _read_text(path) -> str:
    if str(path) == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text ({exc.reason})") from None


def _parse_params(items) -> dict[str, int]:
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise InputError(f"--param expects NAME=VALUE, got {item!r}")
        try:
            out[name.strip()] = int(value)
        except ValueError:
            raise InputError(f"--param {name}: {value!r} is not an integer") from None
    return out


def _load_spec(args) -> LoopNestSpec:
    return resolve(load_spec(args.spec), _parse_params(args.param), args.dataset)


def _is_spec_file(path, text: str) -> bool:
    return str(path).endswith(".json") or text.lstrip().startswith("{")


def _load_histogram(path) -> ReuseHistogram:
    text = _read_text(path)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a profile JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(obj, dict) or "bins" not in obj:
        raise InputError(f"{path}: profile JSON needs a 'bins' object")
    return ReuseHistogram.from_json(obj)


def _caches(args) -> list[CacheConfig]:
    sizes = args.capacity or [c.label for c in PAPER_CACHES]
    return [CacheConfig.parse(s, args.line, args.assoc, args.elem) for s in sizes]


def _histogram_summary(hist: ReuseHistogram, top: int = 10) -> str:
    lines = [f"total refs   {hist.total}", f"cold misses  {hist.cold}", f"bins         {len(hist.bins)}"]
    best = sorted(((f, d) for d, f in hist.bins.items() if d != COLD), key=lambda x: (-x[0], x[1]))[:top]
    if best:
        lines.append(f"top {len(best)} bins (distance: freq)")
        lines.extend(f"  {d}: {f}" for f, d in best)
    return "\n".join(lines) + "\n"


def _coefficients_csv(profile: ProgramProfile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block", "class", "quantity", "term", "coefficient", "variables", "base"])
    for block in profile.per_block:
        for fit in block.classes:
            names = fit.variables or tuple(f"x{k}" for k in range(fit.freq.depth))
            tail = [" ".join(names), " ".join(map(str, fit.base))]
            label = fit.key.label()
            for quantity, model in [("freq", fit.freq), ("dist", fit.dist)] + [
                    (f"slope{t}", m) for t, m in fit.slopes]:
                for mask, c in enumerate(model.coeffs):
                    dims = [k for k in range(model.depth) if mask >> k & 1]
                    w.writerow([block.block_ordinal, label, quantity, term_name(dims, names), c] + tail)
    return buf.getvalue()


# ----------------------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    write_atomic(args.output, serialize_trace(synth_annotated(_load_spec(args))) + "\n")
    return EXIT_OK


def cmd_unroll(args) -> int:
    spec = _load_spec(args)
    buf = io.StringIO()
    for ev in unroll(spec, cap=args.cap):
        name, idx = ev.location
        buf.write(f"{ev.seq}\t{ev.site}\t{name}{''.join(f'[{i}]' for i in idx)}\n")
    write_atomic(args.output, buf.getvalue())
    return EXIT_OK


def cmd_predict(args) -> int:
    text = _read_text(args.input)
    opts = dict(signature=not args.rank_classes, max_depth=args.max_depth, cross=args.cross)
    if _is_spec_file(args.input, text):
        spec = resolve(load_spec(args.input), _parse_params(args.param), args.dataset)
        profile = predict_spec(spec, iterator_refs=args.iterator_refs, **opts)
        expected = count_accesses(spec)
        if profile.histogram.total != expected:
            raise StaticRDError(f"predicted total {profile.histogram.total} != closed-form {expected}")
    else:
        if args.param or args.dataset:
            raise InputError("--param/--dataset only apply to spec files")
        profile = predict_trace(parse_trace(text), iterator_refs=args.iterator_refs, **opts)
    if args.output:
        write_atomic(args.output, profile.dumps())
    if args.dump_coeffs:
        write_atomic(args.dump_coeffs, _coefficients_csv(profile))
    if args.output != "-":
        sys.stdout.write(_histogram_summary(profile.histogram))
        for w in profile.warnings:
            print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_oracle(args) -> int:
    profile = oracle_spec(_load_spec(args), cap=args.cap)
    if args.output:
        write_atomic(args.output, profile.dumps())
    if args.output != "-":
        sys.stdout.write(_histogram_summary(profile.histogram))
    return EXIT_OK


def cmd_hitrate(args) -> int:
    hist = _load_histogram(args.profile)
    for cfg in _caches(args):
        try:
            rate = f"{hit_rate(hist, cfg):.6f}"
        except EmptyHistogram:
            rate = "n/a"
        print(f"{cfg.label}\t{cfg.associativity}-way\t{cfg.line_bytes}B\t{rate}")
    return EXIT_OK


def cmd_compare(args) -> int:
    caches = _caches(args)
    if args.spec:
        if args.profiles:
            raise InputError("give either two profiles or --spec, not both")
        spec = _load_spec(args)
        t0 = time.perf_counter()
        static = predict_spec(spec)
        t1 = time.perf_counter()
        oracle = oracle_spec(spec, cap=args.cap)
        t2 = time.perf_counter()
        report = ComparisonReport.build(static.histogram, oracle.histogram, caches,
                                        timings={"predict": t1 - t0, "oracle": t2 - t1},
                                        warnings=static.warnings)
    else:
        if len(args.profiles) != 2:
            raise InputError("compare needs two profile files (or --spec)")
        a, b = (_load_histogram(p) for p in args.profiles)
        report = ComparisonReport.build(a, b, caches, label_a=args.labels[0], label_b=args.labels[1])
    if args.csv:
        write_atomic(args.csv, report.to_csv())
    if args.svg:
        write_atomic(args.svg, report.to_svg(args.min_freq))
    if args.json:
        write_atomic(args.json, report.dumps())
    sys.stdout.write(report.summary())
    return EXIT_OK


def cmd_bench(args) -> int:
    base = load_spec(args.spec)
    names = args.dataset or list(base.datasets)
    if not names:
        raise InputError(f"{args.spec}: no datasets to bench; add --dataset")
    params = _parse_params(args.param)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "accesses", "predict_s", "oracle_s", "speedup", "status"])
    for name in names:
        spec = resolve(base, params, name)
        n = count_accesses(spec)
        pt = []
        for _ in range(args.repeats):
            t = time.perf_counter()
            predict_spec(spec)
            pt.append(time.perf_counter() - t)
        p_med = statistics.median(pt)
        status, o_med = "ok", None
        if args.no_oracle:
            status = "skipped"
        else:
            ot = []
            try:
                for _ in range(args.repeats):
                    t = time.perf_counter()
                    oracle_spec(spec, cap=args.cap)
                    ot.append(time.perf_counter() - t)
                o_med = statistics.median(ot)
            except CapExceeded:
                status = "cap-exceeded"
        speed = "" if o_med is None else f"{o_med / p_med:.2f}"
        w.writerow([name, n, f"{p_med:.6f}", "" if o_med is None else f"{o_med:.6f}", speed, status])
    write_atomic(args.output, buf.getvalue())
    return EXIT_OK


# ----------------------------------------------------------------------------- parser

def _spec_args(p, positional: bool = True, multi: bool = False):
    if positional:
        p.add_argument("spec", help="loop-nest spec (JSON)")
    if multi:
        p.add_argument("--dataset", action="append", help="dataset to time (repeatable; default all)")
    else:
        p.add_argument("--dataset", help="named parameter set from the spec")
    p.add_argument("--param", action="append", metavar="NAME=VALUE", help="override a bound parameter")


def _cache_args(p):
    p.add_argument("--capacity", action="append", metavar="SIZE",
                   help="cache capacity, e.g. 32K (repeatable; default 32K, 256K, 1M)")
    p.add_argument("--line", type=int, default=64, help="line size in bytes")
    p.add_argument("--assoc", type=int, default=8, help="associativity")
    p.add_argument("--elem", type=int, default=8, help="bytes per array element")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="staticrd", description="Static reuse-distance and cache hit-rate prediction.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write the loop-annotated trace of a spec")
    _spec_args(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("unroll", help="list the concrete access stream of a spec")
    _spec_args(p)
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--cap", type=int, help="maximum events (default RS_UNROLL_CAP or 1e8)")
    p.set_defaults(func=cmd_unroll)

    p = sub.add_parser("predict", help="static reuse profile of a trace or spec")
    p.add_argument("input", help="annotated trace or spec (JSON)")
    _spec_args(p, positional=False)
    p.add_argument("-o", "--output", help="profile JSON path ('-' for stdout)")
    p.add_argument("--dump-coeffs", metavar="CSV", help="write fitted coefficients per class")
    p.add_argument("--rank-classes", action="store_true", help="key classes by distance rank instead of position")
    p.add_argument("--cross", choices=CROSS_MODES, default="sampled", help="cross-block distance model")
    p.add_argument("--max-depth", type=int, default=MAX_DEPTH, help="largest sampled loop depth")
    p.add_argument("--iterator-refs", action="store_true", help="count loop-iterator scalar tokens as accesses")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("oracle", help="exact reuse profile of a spec")
    _spec_args(p)
    p.add_argument("-o", "--output", help="profile JSON path ('-' for stdout)")
    p.add_argument("--cap", type=int, help="maximum events (default RS_UNROLL_CAP or 1e8)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("hitrate", help="cache hit rate of a profile")
    p.add_argument("profile", help="profile or histogram JSON")
    _cache_args(p)
    p.set_defaults(func=cmd_hitrate)

    p = sub.add_parser("compare", help="compare two profiles, or static vs oracle for a spec")
    p.add_argument("profiles", nargs="*", help="two profile JSON files")
    p.add_argument("--spec", help="run both pipelines on this spec instead")
    _spec_args(p, positional=False)
    p.add_argument("--labels", nargs=2, default=["a", "b"], metavar=("A", "B"))
    p.add_argument("--csv", help="per-bin table")
    p.add_argument("--svg", help="bar chart")
    p.add_argument("--json", help="full report")
    p.add_argument("--min-freq", type=int, default=DEFAULT_MIN_FREQ, help="chart only bins above this frequency")
    p.add_argument("--cap", type=int)
    _cache_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="time predict and oracle per dataset")
    _spec_args(p, multi=True)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--no-oracle", action="store_true")
    p.add_argument("--cap", type=int)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except StaticRDError as exc:
        print(f"staticrd: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        where = f"{exc.filename}: " if exc.filename else ""
        print(f"staticrd: {where}{exc.strerror or exc}", file=sys.stderr)
        return InputError.exit_code
    except (ValueError, KeyError, AssertionError) as exc:
        print(f"staticrd: internal error: {exc!r}", file=sys.stderr)
        return StaticRDError.exit_code


if __name__ == "__main__":
    sys.exit(main())
