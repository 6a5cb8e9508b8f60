"""Command-line entry points.

    imptrace analyze PROGRAM            fixpoint run, imprecise-call table
    imptrace trace PROGRAM --watch ...  halt on watched imprecision, emit the
                                        tracing graph (DOT/JSON) and findings
    imptrace trials PROGRAM --watch ... iterative refinement loop
    imptrace dump-cfg PROGRAM           CFG in DOT
    imptrace corpus [DIR]               labeled-corpus runner with summary

Exit codes: 0 success/clean; 1 parse or usage errors; 2 timeout or budget
exceeded; 3 no imprecision observed (trace); 4 refinement stalled with
imprecision left (trials).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import cfg as C
from . import corelang as cl
from . import patterns as P
from . import refine as R
from . import tracer as T
from .analyzer import AnalysisConfig, Analyzer, imprecise_calls
from .checker import PrecisionChecker, WatchSet, WatchError

log = logging.getLogger(__name__)


def _load_program(path: str) -> C.StaticCfg:
    source = Path(path).read_text(encoding="utf-8")
    program = cl.parse(source, path)
    return C.build(cl.desugar(program))


def _config_from(args) -> AnalysisConfig:
    config = AnalysisConfig.load(args.config) if args.config else AnalysisConfig()
    if getattr(args, "timeout_ms", None):
        config.timeout_ms = args.timeout_ms
    if getattr(args, "kset", None):
        config.kset = args.kset
    return config


def _watch_from(args, cfg: C.StaticCfg) -> WatchSet:
    if args.watch_callees:
        return WatchSet.callees(cfg)
    if args.watch:
        return WatchSet.from_specs(cfg, args.watch)
    raise WatchError("this command needs --watch LINE:VAR or --watch-callees")


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _ic_table(ics) -> str:
    if not ics:
        return "no imprecise calls\n"
    lines = ["line  callees", "----  -------"]
    for node, count in ics:
        lines.append(f"{node.line:>4}  {count}")
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    cfg = _load_program(args.program)
    analyzer = Analyzer(cfg, _config_from(args))
    result = analyzer.solve()
    ics = imprecise_calls(result.summary, result.call_graph)
    reachable = len({f.node_id for f in result.summary.states})
    print(f"reachable nodes: {reachable} / {len(cfg.node_by_id)}")
    print(f"imprecise calls: {len(ics)}")
    sys.stdout.write(_ic_table(ics))
    if args.debug_trace:
        from . import oracle as O
        trace = O.run(cfg, seed=args.seed)
        out = _out_dir(args)
        _dump_json(out / f"{Path(args.program).stem}.concrete.json",
                   O.trace_to_json(trace, cfg))
    if result.timed_out:
        print("analysis timed out; results are partial", file=sys.stderr)
        return 2
    return 0


def cmd_trace(args) -> int:
    cfg = _load_program(args.program)
    config = _config_from(args)
    watch = _watch_from(args, cfg)
    analyzer = Analyzer(cfg, config)
    result = analyzer.solve(PrecisionChecker(watch))
    if result.halt is None:
        print("no imprecision observed")
        return 3
    graph = T.generate_graph(result.halt.impre_vars, result.summary,
                             result.call_graph)
    findings = P.report(graph, result.summary, result.call_graph)
    out = _out_dir(args)
    stem = Path(args.program).stem
    if args.format in ("dot", None):
        (out / f"{stem}.trace.dot").write_text(
            T.graph_to_dot(graph, findings.findings), encoding="utf-8")
    if args.format in ("json", None):
        _dump_json(out / f"{stem}.trace.json",
                   T.graph_to_json(graph, findings.findings))
    _dump_json(out / f"{stem}.findings.json",
               {"schema": 1, "findings": findings.to_json()})
    for f in sorted(findings.findings, key=lambda f: (f.node.line, f.pattern)):
        targets = ",".join(str(t) for t in f.hint.targets)
        print(f"{f.pattern}: line {f.node.line} subject {f.node.subject_str()} "
              f"-> {f.hint.kind}[{targets}]")
    if not findings.findings:
        flagged = [t for t in graph.all_nodes() if t.flags]
        for t in flagged:
            print(f"no pattern: line {t.line} subject {t.subject_str()} "
                  f"({','.join(sorted(t.flags))})")
    print(f"tracing graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges")
    return 0


def cmd_trials(args) -> int:
    cfg = _load_program(args.program)
    config = _config_from(args)
    watch = _watch_from(args, cfg)
    budget = R.Budget(max_trials=args.max_trials)
    report = R.run_trials(cfg, watch, config, budget)
    out = _out_dir(args)
    stem = Path(args.program).stem
    _dump_json(out / f"{stem}.trials.json", report.to_json())
    _print_trial_table(args.program, report)
    if report.outcome == R.CLEAN:
        return 0
    if report.outcome == R.NO_NEW_INFO:
        last = report.trials[-1]
        for leaf in last.flagged_leaves:
            print(f"stalled: line {leaf['line']} subject {leaf['subject']} "
                  f"({','.join(leaf['flags'])})")
        print("refinement stalled: imprecision remains but no pattern applies")
        return 4
    return 2


def _print_trial_table(name: str, report: R.TrialReport) -> None:
    final = report.trials[-1]
    print(f"{'target':<22} {'time(s)':>8} {'IC':>4} {'Trial':>6} {'a.time(s)':>10} outcome")
    total = sum(t.elapsed_ms for t in report.trials) / 1000.0
    print(f"{Path(name).name:<22} {final.elapsed_ms / 1000.0:>8.2f} "
          f"{final.ic_count:>4} {len(report.trials):>6} {total:>10.2f} {report.outcome}")
    for t in report.trials:
        pats = ",".join(sorted({f.pattern for f in t.findings.findings})) \
            if t.findings and t.findings.findings else "-"
        print(f"  trial {t.index}: halted={t.halted} findings=[{pats}] "
              f"ICs={t.ic_count} graph={t.graph_nodes}")


def cmd_dump_cfg(args) -> int:
    cfg = _load_program(args.program)
    analyzer = Analyzer(cfg, _config_from(args))
    result = analyzer.solve()
    call_edges = sorted({(e.call.node_id,
                          cfg.functions[e.callee].entry.node_id)
                         for e in result.call_graph.edges})
    dot = C.to_dot(cfg, call_edges)
    if args.out:
        out = _out_dir(args)
        (out / f"{Path(args.program).stem}.cfg.dot").write_text(dot, encoding="utf-8")
    else:
        sys.stdout.write(dot)
    return 0


def run_corpus(corpus_dir: Path, max_trials: int = 10) -> dict:
    """Run the trial loop on every labeled corpus program, collecting the
    cost/precision summary, tracing-graph statistics, and detection recall."""
    labels = json.loads((corpus_dir / "labels.json").read_text(encoding="utf-8"))
    rows = []
    node_counts = []
    build_times = []
    for name in sorted(labels):
        label = labels[name]
        cfg = _load_program(str(corpus_dir / name))
        watch = WatchSet.callees(cfg) if label["watch"] == "callees" \
            else WatchSet.from_specs(cfg, label["watch"])

        base_t0 = time.monotonic()
        base = Analyzer(cfg, AnalysisConfig())
        base_result = base.solve()
        base_time = time.monotonic() - base_t0
        base_ics = imprecise_calls(base_result.summary, base_result.call_graph)

        report = R.run_trials(cfg, watch, AnalysisConfig(),
                              R.Budget(max_trials=max_trials))
        final = report.trials[-1]
        found = set()
        for t in report.trials:
            if t.findings:
                found |= {f.pattern for f in t.findings.findings}
            if t.graph is not None:
                node_counts.append(len(t.graph.nodes))
                build_times.append(t.graph_build_ms)
        want = set(label["causes"])
        final_solver = Analyzer(cfg, report.final_config())
        final_result = final_solver.solve()
        final_ics = imprecise_calls(final_result.summary, final_result.call_graph)
        rows.append({
            "name": name,
            "base_time_s": round(base_time, 3),
            "base_ic": len(base_ics),
            "final_ic": len(final_ics),
            "trials": len(report.trials),
            "accumulated_time_s": round(report.total_ms / 1000.0, 3),
            "outcome": report.outcome,
            "expected_outcome": label["outcome"],
            "planted": sorted(want),
            "found": sorted(found),
            "recall_ok": want <= found,
            "outcome_ok": report.outcome == label["outcome"],
        })
    summary = {
        "schema": 1,
        "targets": rows,
        "graph_stats": {
            "count": len(node_counts),
            "min_nodes": min(node_counts) if node_counts else 0,
            "max_nodes": max(node_counts) if node_counts else 0,
            "avg_nodes": round(sum(node_counts) / len(node_counts), 1)
            if node_counts else 0,
        },
        "timing": {
            "avg_graph_build_ms": round(sum(build_times) / len(build_times), 3)
            if build_times else 0.0,
            "max_graph_build_ms": round(max(build_times), 3) if build_times else 0.0,
        },
        "recall": {
            "planted": sum(len(r["planted"]) for r in rows),
            "found": sum(len(set(r["planted"]) & set(r["found"])) for r in rows),
        },
    }
    return summary


def cmd_corpus(args) -> int:
    corpus_dir = Path(args.dir)
    summary = run_corpus(corpus_dir, max_trials=args.max_trials)
    out = _out_dir(args)
    _dump_json(out / "corpus.report.json", summary)
    print(f"{'target':<22} {'time(s)':>8} {'IC':>4} {'->IC':>5} {'Trial':>6} "
          f"{'a.time(s)':>10} outcome")
    ok = True
    for r in summary["targets"]:
        print(f"{r['name']:<22} {r['base_time_s']:>8.2f} {r['base_ic']:>4} "
              f"{r['final_ic']:>5} {r['trials']:>6} {r['accumulated_time_s']:>10.2f} "
              f"{r['outcome']}")
        ok = ok and r["recall_ok"] and r["outcome_ok"]
    g = summary["graph_stats"]
    print(f"tracing graphs: {g['count']} built, nodes min/max/avg = "
          f"{g['min_nodes']}/{g['max_nodes']}/{g['avg_nodes']}, "
          f"avg build {summary['timing']['avg_graph_build_ms']:.1f} ms")
    rec = summary["recall"]
    print(f"detection recall: {rec['found']}/{rec['planted']}")
    return 0 if ok else 4


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imptrace",
        description="Imprecision-tracing static analyzer for a JS-like core language")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_watch=False):
        p.add_argument("program")
        p.add_argument("--config", help="analysis configuration JSON")
        p.add_argument("--timeout-ms", type=int, default=None)
        p.add_argument("--kset", type=int, default=None)
        p.add_argument("--out", help="output directory (default: .)")
        if needs_watch:
            p.add_argument("--watch", action="append", default=[],
                           metavar="LINE:VAR")
            p.add_argument("--watch-callees", action="store_true")

    p = sub.add_parser("analyze", help="run to fixpoint and report imprecise calls")
    common(p)
    p.add_argument("--debug-trace", action="store_true",
                   help="also dump one concrete execution trace as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("trace", help="halt on watched imprecision and emit the tracing graph")
    common(p, needs_watch=True)
    p.add_argument("--format", choices=["dot", "json"], default=None,
                   help="graph format (default: both)")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("trials", help="iterative configuration refinement")
    common(p, needs_watch=True)
    p.add_argument("--max-trials", type=int, default=10)
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("dump-cfg", help="emit the CFG in DOT")
    common(p)
    p.set_defaults(func=cmd_dump_cfg)

    p = sub.add_parser("corpus", help="run the labeled corpus end to end")
    p.add_argument("dir", nargs="?", default="corpus")
    p.add_argument("--max-trials", type=int, default=10)
    p.add_argument("--out", help="output directory (default: .)")
    p.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (cl.SyntaxError_, WatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
