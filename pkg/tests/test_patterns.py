from __future__ import annotations

from imptrace import cfg as C
from imptrace import domains as D
from imptrace import patterns as P
from imptrace.analyzer import AnalysisConfig, Analyzer, FlowNode
from imptrace.checker import PrecisionChecker, WatchSet
from imptrace.domains import CTX0
from imptrace.tracer import (IMPRECISE_PROP, IMPRECISE_VAR, PRECISE_PROP,
                             PRECISE_VAR, TraceGraph, TraceNode, generate_graph)

from conftest import build


def _trace(cfg, watch):
    result = Analyzer(cfg, AnalysisConfig()).solve(PrecisionChecker(watch))
    assert result.halt is not None
    graph = generate_graph(result.halt.impre_vars, result.summary,
                           result.call_graph)
    return result, graph


def _find(report, pattern):
    return [f for f in report.findings if f.pattern == pattern]


def test_fig2_graph_yields_function_and_loop(corpus_cfgs):
    cfg = corpus_cfgs["each.js"]
    result, graph = _trace(cfg, WatchSet.from_specs(cfg, ["15:name"]))
    report = P.report(graph, result.summary, result.call_graph)
    assert report.patterns() == {P.FUNCTION, P.LOOP}
    fn = _find(report, P.FUNCTION)[0]
    assert cfg.node(fn.node.at.node_id).instr.kind == "entry"
    assert fn.hint.kind == "kcfa"
    assert {cfg.node(s).line for s in fn.hint.targets} == {11, 14}
    loop = _find(report, P.LOOP)[0]
    assert loop.node.at.node_id in cfg.loop_heads
    assert loop.hint.kind == "lsa"


def test_heapclone_alloc_variant(corpus_cfgs):
    cfg = corpus_cfgs["heapclone2.js"]
    # context sensitivity from the first refinement exposes the alloc merge
    calls = {n.node_id: 1 for n in cfg.node_by_id
             if n.instr.kind == "call" and n.line in (6, 7)}
    result = Analyzer(cfg, AnalysisConfig(kcfa_sites=calls)).solve(
        PrecisionChecker(WatchSet.callees(cfg)))
    graph = generate_graph(result.halt.impre_vars, result.summary,
                           result.call_graph)
    report = P.report(graph, result.summary, result.call_graph)
    hc = _find(report, P.HEAP_CLONE)
    assert hc
    assert cfg.node(hc[0].node.at.node_id).instr.kind == "alloc"
    assert hc[0].hint.kind == "clone"
    assert cfg.node(hc[0].hint.targets[0]).instr.kind == "alloc"


def test_model_builtin_variant(corpus_cfgs):
    cfg = corpus_cfgs["model_random.js"]
    result, graph = _trace(cfg, WatchSet.callees(cfg))
    report = P.report(graph, result.summary, result.call_graph)
    m = _find(report, P.MODEL)
    assert m
    assert cfg.node(m[0].node.at.node_id).instr.kind == "builtin"
    assert m[0].hint == P.Hint("model", ("Math.random",))


def test_model_initial_heap_variant(corpus_cfgs):
    cfg = corpus_cfgs["model_useragent.js"]
    result, graph = _trace(cfg, WatchSet.callees(cfg))
    report = P.report(graph, result.summary, result.call_graph)
    m = _find(report, P.MODEL)
    assert m
    node = cfg.node(m[0].node.at.node_id)
    assert node.instr.kind == "entry" and node.fn == C.GLOBAL_FID
    assert m[0].hint == P.Hint("model", ("navigator.userAgent",))
    assert graph.successors(m[0].node) == []


def test_mixed_successors_at_skip_is_unknown():
    cfg = build("""
var r = Math.random();
var s = Math.random();
var x = 0;
if (r < 0.5) { x = s; } else { x = 2; }
print(x);
""")
    result, graph = _trace(cfg, WatchSet.from_specs(cfg, ["6:x"]))
    report = P.report(graph, result.summary, result.call_graph)
    joins = [t for t in graph.all_nodes()
             if cfg.node(t.at.node_id).instr.kind == "skip"]
    classified = {f.node for f in report.findings}
    assert joins and not (set(joins) & classified)


# ── synthetic graphs: rule order and guards ───────────────────────────

def _synth(cfg_src: str):
    """A tiny program supplying real static nodes for synthetic graphs."""
    cfg = build(cfg_src)
    result = Analyzer(cfg, AnalysisConfig()).solve()
    return cfg, result


def _tn(kind, node, subject, graph=None, succs=()):
    t = TraceNode(kind, FlowNode(node.node_id, CTX0), subject, node.line)
    if graph is not None:
        t = graph.add_node(t)
        for s in succs:
            graph.add_edge(t, s)
    return t


def test_function_rule_requires_nonempty_precise_call_successors():
    cfg, result = _synth("function f(a) { return a; }\nvar x = f(1);\n")
    f = next(fn for fn in cfg.functions.values() if fn.name == "f")
    call = next(n for n in cfg.node_by_id if n.instr.kind == "call")
    graph = TraceGraph()
    # entry node with no successors: dead end, not Function
    lone = _tn(IMPRECISE_VAR, f.entry, ("var", "a"), graph)
    assert P.classify(lone, graph, cfg) == P.UNKNOWN
    # entry node with one precise call successor: Function
    graph2 = TraceGraph()
    pre = _tn(PRECISE_VAR, call, ("var", "x"), graph2)
    ent = _tn(IMPRECISE_VAR, f.entry, ("var", "a"), graph2, [pre])
    assert P.classify(ent, graph2, cfg) == P.FUNCTION
    # an imprecise successor breaks the rule
    graph3 = TraceGraph()
    imp = _tn(IMPRECISE_VAR, call, ("var", "x"), graph3)
    ent3 = _tn(IMPRECISE_VAR, f.entry, ("var", "a"), graph3, [imp])
    assert P.classify(ent3, graph3, cfg) == P.UNKNOWN


def test_loop_rule_needs_cycle_and_precise_successor():
    cfg, result = _synth("var i = 0;\nwhile (i < 3) { i = i + 1; }\n")
    head = next(n for n in cfg.node_by_id if n.node_id in cfg.loop_heads)
    init = next(n for n in cfg.node_by_id if n.instr.kind == "write-var"
                and n.instr.target == "i" and n.line == 1)
    body = next(n for n in cfg.node_by_id if n.instr.kind == "write-var"
                and n.instr.target == "i" and n.line == 2)
    graph = TraceGraph()
    pre = _tn(PRECISE_VAR, init, ("var", "i"), graph)
    mid = _tn(IMPRECISE_VAR, body, ("var", "i"), graph)
    t = _tn(IMPRECISE_VAR, head, ("var", "i"), graph, [pre, mid])
    graph.add_edge(mid, t)  # cycle t -> mid -> t
    assert P.classify(t, graph, cfg) == P.LOOP
    # without the cycle: Unknown
    graph2 = TraceGraph()
    pre2 = _tn(PRECISE_VAR, init, ("var", "i"), graph2)
    t2 = _tn(IMPRECISE_VAR, head, ("var", "i"), graph2, [pre2])
    assert P.classify(t2, graph2, cfg) == P.UNKNOWN
    # a different subject does not match the cond operands
    graph3 = TraceGraph()
    pre3 = _tn(PRECISE_VAR, init, ("var", "z"), graph3)
    mid3 = _tn(IMPRECISE_VAR, body, ("var", "z"), graph3)
    t3 = _tn(IMPRECISE_VAR, head, ("var", "z"), graph3, [pre3, mid3])
    graph3.add_edge(mid3, t3)
    assert P.classify(t3, graph3, cfg) == P.UNKNOWN


def test_rule_order_function_beats_heapclone_and_loop():
    # A node satisfying several guards classifies by the first rule.
    cfg, result = _synth("function f(a) { return a; }\nvar x = f(1);\n")
    f = next(fn for fn in cfg.functions.values() if fn.name == "f")
    call = next(n for n in cfg.node_by_id if n.instr.kind == "call")
    loc = D.AbsLoc(99)
    graph = TraceGraph()
    pre = _tn(PRECISE_PROP, call, ("prop", loc, "p"), graph)
    ent = _tn(IMPRECISE_PROP, f.entry, ("prop", loc, "p"), graph, [pre])
    # guard for Function (entry + precise call succs) holds; the node is no
    # write-prop/alloc so HeapClone cannot apply; Model-2 requires the global
    # entry with no successors.  First match: Function.
    assert P.classify(ent, graph, cfg) == P.FUNCTION


def test_heapclone_all_precise_guard():
    cfg, result = _synth("var o = {};\no.a = 1;\n")
    wp = next(n for n in cfg.node_by_id if n.instr.kind == "write-prop")
    alloc = next(n for n in cfg.node_by_id if n.instr.kind == "alloc")
    loc = D.AbsLoc(alloc.node_id)
    graph = TraceGraph()
    pre = _tn(PRECISE_PROP, alloc, ("prop", loc, "a"), graph)
    t = _tn(IMPRECISE_PROP, wp, ("prop", loc, "a"), graph, [pre])
    assert P.classify(t, graph, cfg) == P.HEAP_CLONE
    graph2 = TraceGraph()
    imp = _tn(IMPRECISE_PROP, alloc, ("prop", loc, "a"), graph2)
    t2 = _tn(IMPRECISE_PROP, wp, ("prop", loc, "a"), graph2, [imp])
    assert P.classify(t2, graph2, cfg) == P.UNKNOWN


def test_model_rule_suppressed_by_imprecise_argument():
    cfg, result = _synth("var r = Math.random();\n")
    bfid = cfg.builtin_fids["Math.random"]
    bnode = next(n for n in cfg.functions[bfid].nodes
                 if n.instr.kind == "builtin")
    graph = TraceGraph()
    imp_arg = _tn(IMPRECISE_VAR, bnode, ("var", "arguments"), graph)
    t = _tn(IMPRECISE_VAR, bnode, ("var", D.RET_PROP), graph, [imp_arg])
    assert P.classify(t, graph, cfg) == P.UNKNOWN


def test_hint_soundness_targets_named_points(corpus_cfgs):
    from imptrace import refine as R
    for name in ("each.js", "heapclone1.js", "model_random.js"):
        cfg = corpus_cfgs[name]
        watch = WatchSet.callees(cfg) if name != "each.js" \
            else WatchSet.from_specs(cfg, ["15:name"])
        result, graph = _trace(cfg, watch)
        report = P.report(graph, result.summary, result.call_graph)
        base = AnalysisConfig()
        after = R.delta(report, base)
        named_sites = set()
        named_models = set()
        for f in report.findings:
            if f.hint.kind in ("kcfa", "lsa", "clone"):
                named_sites |= set(f.hint.targets)
            else:
                named_models |= set(f.hint.targets)
        assert set(after.kcfa_sites) <= named_sites
        assert set(after.lsa_loops) <= named_sites
        assert set(after.clone_sites) <= named_sites
        assert set(after.model_overrides) <= named_models


def test_findings_json_shape(corpus_cfgs):
    cfg = corpus_cfgs["model_random.js"]
    result, graph = _trace(cfg, WatchSet.callees(cfg))
    report = P.report(graph, result.summary, result.call_graph)
    data = report.to_json()
    assert data and all({"pattern", "line", "subject", "hintKind",
                         "hintTargets"} <= set(d) for d in data)
