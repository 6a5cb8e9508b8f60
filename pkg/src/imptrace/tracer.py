"""Backtracks imprecision from the halt point through intra- and
inter-procedural flows, producing a tracing graph.

Nodes mark a variable or an object property as precise or imprecise at a
context-qualified CFG node; edges point from an imprecise value toward the
places it came from.  Generation is a worklist loop: an imprecise node at an
entry or after-call instruction is expanded inter-procedurally (through the
resolved call graph), anything else intra-procedurally.  Precise nodes are
leaves and never expanded.

Intra tracing walks the immediate-dominator chain from the node, skipping
instructions that cannot affect the subject, and stops at the first of:

* the subject's defining instruction (rules for constants, copies, loads
  with the precise-operands / imprecise-operands priority, operators with
  a flagged domain-loss dead end, allocations);
* a merge point, expanding to the subject at every predecessor plus the
  branch condition's operands when the merge sits under a cond;
* a call boundary that changed the subject's value (descends into callees);
* the function entry, handing over to inter tracing (parameters map to
  argument-array slots, `this` to the call's receiver temp, non-locals to
  the *scope property of the callee's function object at each caller, and
  a property subject walks into each caller).

A node is evaluated in the post-state of its instruction when the
instruction writes the subject, in the pre-state otherwise; node kinds
always agree with that evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import cfg as C
from . import domains as D
from .analyzer import (Analyzer, CallGraph, FlowNode, Summary,
                       subject_imprecise, writes_subject)
from .cfg import EAtom, EBinOp, ELoad, StaticNode

log = logging.getLogger(__name__)

PRECISE_VAR = "pre_var"
IMPRECISE_VAR = "impre_var"
PRECISE_PROP = "pre_prop"
IMPRECISE_PROP = "impre_prop"

DEAD_END = "dead-end"
DOMAIN_LOSS = "domain-loss"


def _kind_for(subject, imprecise: bool) -> str:
    if subject[0] == "var":
        return IMPRECISE_VAR if imprecise else PRECISE_VAR
    return IMPRECISE_PROP if imprecise else PRECISE_PROP


@dataclass
class TraceNode:
    kind: str
    at: FlowNode
    subject: tuple                  # ("var", name) | ("prop", AbsLoc, name)
    line: int
    flags: set = field(default_factory=set)

    def key(self):
        return (self.kind, self.at.key(), _subject_key(self.subject))

    def sort_key(self):
        return (self.at.key(), _subject_key(self.subject), self.kind)

    def is_imprecise(self) -> bool:
        return self.kind in (IMPRECISE_VAR, IMPRECISE_PROP)

    def is_var(self) -> bool:
        return self.subject[0] == "var"

    def subject_str(self) -> str:
        if self.subject[0] == "var":
            return self.subject[1]
        _, loc, name = self.subject
        return f"{loc}.{name}"

    def __hash__(self):
        return hash(self.key())

    def __eq__(self, other):
        return isinstance(other, TraceNode) and self.key() == other.key()

    def __repr__(self):
        mark = "!" if self.is_imprecise() else "."
        return f"<{mark}{self.subject_str()}@{self.at}:{self.line}>"


def _subject_key(subject):
    if subject[0] == "var":
        return ("var", subject[1])
    _, loc, name = subject
    return ("prop", loc.site, loc.tag, name)


@dataclass
class TraceGraph:
    nodes: dict = field(default_factory=dict)      # key -> TraceNode
    edges: list = field(default_factory=list)      # (TraceNode, TraceNode)
    _succ: dict = field(default_factory=dict)      # key -> [TraceNode]
    _edge_set: set = field(default_factory=set)

    def add_node(self, t: TraceNode) -> TraceNode:
        existing = self.nodes.get(t.key())
        if existing is not None:
            return existing
        self.nodes[t.key()] = t
        return t

    def add_edge(self, a: TraceNode, b: TraceNode):
        if (a.key(), b.key()) in self._edge_set:
            return
        self._edge_set.add((a.key(), b.key()))
        self.edges.append((a, b))
        self._succ.setdefault(a.key(), []).append(b)

    def successors(self, t: TraceNode) -> list:
        return list(self._succ.get(t.key(), ()))

    def all_nodes(self) -> list:
        return sorted(self.nodes.values(), key=lambda t: t.sort_key())

    def reaches(self, a: TraceNode, b: TraceNode) -> bool:
        """Path of length >= 1 from a to b."""
        stack = [s for s in self.successors(a)]
        seen = set()
        while stack:
            t = stack.pop()
            if t == b:
                return True
            if t.key() in seen:
                continue
            seen.add(t.key())
            stack.extend(self.successors(t))
        return False

    def leaves(self) -> list:
        return [t for t in self.all_nodes() if not self.successors(t)]


class Tracer:
    def __init__(self, summary: Summary, call_graph: CallGraph):
        self.summary = summary
        self.analyzer: Analyzer = summary.analyzer
        self.cfg = summary.cfg
        self.call_graph = call_graph

    # -- node construction ----------------------------------------------

    def make_node(self, fnode: FlowNode, subject) -> TraceNode:
        imprecise = subject_imprecise(self.summary, fnode, subject)
        line = self.cfg.node(fnode.node_id).line
        return TraceNode(_kind_for(subject, imprecise), fnode, subject, line)

    # -- flow-level graph navigation --------------------------------------

    def _restrict_ctx(self, ctx: D.Context, node: StaticNode) -> D.Context:
        """Drop loop entries of this function whose body does not contain
        the node (used when the dominator walk leaves a loop)."""
        loops = list(ctx.loop_string)
        while loops:
            loop_id, _ = loops[-1]
            head = self.cfg.node(loop_id)
            if head.fn != node.fn:
                break
            if node.idx in self.analyzer._loop_bodies.get(loop_id, ()):
                break
            loops.pop()
        return D.Context(ctx.call_string, tuple(loops))

    def _flow_at(self, node: StaticNode, ctx: D.Context) -> FlowNode:
        return FlowNode(node.node_id, self._restrict_ctx(ctx, node))

    def flow_preds(self, fnode: FlowNode) -> list[FlowNode]:
        """Reachable flow-level intra predecessors: static predecessors in
        contexts whose edge transition lands on this flow node."""
        node = self.cfg.node(fnode.node_id)
        preds = []
        for p in self.cfg.intra_preds(node):
            for ctx in self.summary.contexts_of(p.node_id):
                if self.analyzer.edge_ctx(ctx, p, node) == fnode.ctx:
                    preds.append(FlowNode(p.node_id, ctx))
        return sorted(set(preds), key=lambda f: f.key())

    def merged_at(self, fnode: FlowNode, subject) -> bool:
        """The subject's value at the node strictly exceeds what flows out
        of at least one of its (two or more) predecessors."""
        preds = self.flow_preds(fnode)
        if len(preds) < 2:
            return False
        v = self.summary.value(fnode, subject)
        if v.is_bot():
            return False
        for p in preds:
            out = self.summary.value_after(p, subject, toward=fnode)
            if out != v and D.leq(out, v):
                return True
        return False

    # -- intra tracing ---------------------------------------------------

    def trace_intra(self, t: TraceNode) -> list[TraceNode]:
        fnode, subject = t.at, t.subject
        if writes_subject(self.cfg, self.analyzer, self.summary, fnode, subject):
            return self._writer_rules(t)
        if self.merged_at(fnode, subject):
            return self._merge_expansion(t)
        return self._walk_back(t)

    def _merge_expansion(self, t: TraceNode) -> list[TraceNode]:
        """Subject merged at t's node: one node per predecessor, plus the
        condition operands when the merge sits under a cond."""
        fnode, subject = t.at, t.subject
        out = []
        for p in self.flow_preds(fnode):
            v = self.summary.value_after(p, subject, toward=fnode)
            node = TraceNode(_kind_for(subject, D.is_imprecise_value(v)), p, subject,
                             self.cfg.node(p.node_id).line)
            out.append(node)
        static = self.cfg.node(fnode.node_id)
        if static.instr.kind != "entry":
            idom = self.cfg.idom(static)
            if idom.instr.kind == "cond":
                idom_flow = self._flow_at(idom, fnode.ctx)
                for atom in (idom.instr.left, idom.instr.right):
                    if atom.is_var():
                        out.append(self.make_node(idom_flow, ("var", atom.value)))
        return _dedup(out)

    def _walk_back(self, t: TraceNode) -> list[TraceNode]:
        """Walk the dominator chain until a definition, merge, relevant call
        boundary, or the function entry."""
        subject = t.subject
        cur = self.cfg.node(t.at.node_id)
        ctx = t.at.ctx
        cur_flow = t.at
        for _ in range(len(self.cfg.node_by_id) * 4):
            if cur.instr.kind == "entry":
                return [self.make_node(cur_flow, subject)]
            a = self.cfg.idom(cur)
            a_flow = self._flow_at(a, ctx)
            if writes_subject(self.cfg, self.analyzer, self.summary, a_flow, subject):
                return [self.make_node(a_flow, subject)]
            if a.instr.kind == "after-call" and self._changed_across_call(a_flow, subject):
                return [self.make_node(a_flow, subject)]
            if self.merged_at(a_flow, subject):
                return [self.make_node(a_flow, subject)]
            cur, ctx, cur_flow = a, a_flow.ctx, a_flow
        raise AssertionError("dominator walk did not terminate")

    def _changed_across_call(self, after_flow: FlowNode, subject) -> bool:
        after = self.cfg.node(after_flow.node_id)
        call_id = self.cfg.after_to_call[after.node_id]
        call_flow = FlowNode(call_id, after_flow.ctx)
        before = self.summary.value(call_flow, subject)
        at_after = self.summary.value(after_flow, subject)
        return before != at_after

    def _writer_rules(self, t: TraceNode) -> list[TraceNode]:
        """t sits at the instruction that wrote its subject."""
        fnode, subject = t.at, t.subject
        node = self.cfg.node(fnode.node_id)
        instr = node.instr
        if subject[0] == "var":
            if instr.kind in ("alloc", "function"):
                return []  # a fresh singleton location: nothing further to blame
            if instr.kind == "write-var":
                return self._def_expr_rules(t, instr.expr)
            if instr.kind == "return":
                return self._def_expr_rules(t, EAtom(instr.value))
            if instr.kind == "builtin":
                return _dedup([self.make_node(fnode, ("var", "this")),
                               self.make_node(fnode, ("var", "arguments"))])
            if instr.kind == "after-call":
                # Dispatched inter-procedurally by the generator loop.
                return self._after_call_result(t)
            raise AssertionError(f"unexpected var writer {instr.kind}")
        # property subject
        _, loc, name = subject
        if instr.kind in ("alloc", "function"):
            return [self._old_value_node(fnode, subject)]
        assert instr.kind == "write-prop"
        base_nodes = []
        imprecise_operand = False
        for atom in (instr.base, instr.key):
            if atom.is_var():
                n = self.make_node(fnode, ("var", atom.value))
                base_nodes.append(n)
                imprecise_operand |= n.is_imprecise()
        if imprecise_operand:
            return _dedup(base_nodes)
        out = []
        if instr.value.is_var():
            out.append(self.make_node(fnode, ("var", instr.value.value)))
        out.append(self._old_value_node(fnode, subject))
        return _dedup(out)

    def _old_value_node(self, fnode: FlowNode, subject) -> TraceNode:
        """The subject one node earlier (its value before this write)."""
        node = self.cfg.node(fnode.node_id)
        idom = self.cfg.idom(node)
        return self.make_node(self._flow_at(idom, fnode.ctx), subject)

    def _def_expr_rules(self, t: TraceNode, expr) -> list[TraceNode]:
        fnode = t.at
        if isinstance(expr, EAtom):
            if expr.atom.is_var():
                return [self.make_node(fnode, ("var", expr.atom.value))]
            # Defined by a constant: a precise terminal at the definition.
            node = self.make_node(fnode, t.subject)
            if node.is_imprecise():
                node.flags.add(DEAD_END)
            return [node]
        if isinstance(expr, ELoad):
            operand_nodes = [self.make_node(fnode, ("var", a.value))
                             for a in (expr.base, expr.key) if a.is_var()]
            if any(n.is_imprecise() for n in operand_nodes):
                return _dedup(operand_nodes)
            base_v = self.summary.value(fnode, ("var", expr.base.value)) \
                if expr.base.is_var() else None
            if base_v is None:
                base_v = _atom_value(self.analyzer, expr.base)
            key_v = self.summary.value(fnode, ("var", expr.key.value)) \
                if expr.key.is_var() else _atom_value(self.analyzer, expr.key)
            keys = D.concrete_keys(key_v)
            if len(base_v.locs) == 1 and keys is not D.TOP and len(keys) == 1:
                loc = next(iter(base_v.locs))
                return [self.make_node(fnode, ("prop", loc, keys[0]))]
            t.flags.add(DEAD_END)
            log.info("load with precise operands but no singleton location/key "
                     "at line %d", t.line)
            return []
        if isinstance(expr, EBinOp):
            operand_nodes = [self.make_node(fnode, ("var", a.value))
                             for a in (expr.left, expr.right) if a.is_var()]
            if any(n.is_imprecise() for n in operand_nodes):
                return _dedup(operand_nodes)
            t.flags.add(DOMAIN_LOSS)
            t.flags.add(DEAD_END)
            log.info("operator result imprecise with precise operands at line %d "
                     "(abstract-domain loss)", t.line)
            return []
        raise AssertionError(f"bad expr {expr!r}")

    # -- inter tracing -----------------------------------------------------

    def trace_inter(self, t: TraceNode) -> list[TraceNode]:
        node = self.cfg.node(t.at.node_id)
        if node.instr.kind == "after-call":
            return self._after_call_result(t)
        assert node.instr.kind == "entry"
        return self._entry_rules(t)

    def _after_call_result(self, t: TraceNode) -> list[TraceNode]:
        node = self.cfg.node(t.at.node_id)
        call_id = self.cfg.after_to_call[node.node_id]
        call_flow = FlowNode(call_id, t.at.ctx)
        edges = self.call_graph.callees_of(call_flow)
        if not edges:
            t.flags.add(DEAD_END)
            return []
        out = []
        for edge in sorted(edges, key=lambda e: (e.callee, e.callee_ctx.key())):
            callee = self.cfg.functions[edge.callee]
            exit_flow = FlowNode(callee.exit.node_id, edge.callee_ctx)
            if t.subject == ("var", node.instr.target):
                out.append(self.make_node(exit_flow, ("var", D.RET_PROP)))
            else:
                out.append(self.make_node(exit_flow, t.subject))
        return _dedup(out)

    def _entry_rules(self, t: TraceNode) -> list[TraceNode]:
        node = self.cfg.node(t.at.node_id)
        fid = node.fn
        fn = self.cfg.functions[fid]
        callers = self.call_graph.callers_of(fid, t.at.ctx)
        if fid == C.GLOBAL_FID:
            return []  # imprecision at the global entry is a legitimate leaf
        if not callers:
            t.flags.add(DEAD_END)
            return []
        callers = sorted(callers, key=lambda e: e.call.key())
        out = []
        if t.subject[0] == "prop":
            for edge in callers:
                out.append(self.make_node(edge.call, t.subject))
            return _dedup(out)
        _, name = t.subject
        params = node.instr.params
        for edge in callers:
            call_node = self.cfg.node(edge.call.node_id)
            if name == "this":
                out.append(self.make_node(edge.call, ("var", call_node.instr.this)))
            elif name == "arguments":
                out.append(self.make_node(edge.call, ("var", call_node.instr.args)))
            elif name in params:
                slot = str(params.index(name))
                args_v = self.summary.value(edge.call, ("var", call_node.instr.args))
                for loc in sorted(args_v.locs):
                    out.append(self.make_node(edge.call, ("prop", loc, slot)))
            else:
                out.extend(self._non_local_at_caller(edge, name, fid))
        if not out:
            t.flags.add(DEAD_END)
        return _dedup(out)

    def _non_local_at_caller(self, edge, name: str, fid: int) -> list[TraceNode]:
        """Imprecise lexical-scope information first, the variable itself
        otherwise, evaluated in the caller's state."""
        call_node = self.cfg.node(edge.call.node_id)
        callee_v = self.summary.value(edge.call, ("var", call_node.instr.callee))
        out = []
        scope_imprecise = False
        state = self.summary.state(edge.call)
        for loc in sorted(callee_v.locs):
            obj = state.heap.get(loc) if state is not None else None
            if obj is None or fid not in obj.fids:
                continue
            if subject_imprecise(self.summary, edge.call, ("prop", loc, D.SCOPE_PROP)):
                out.append(self.make_node(edge.call, ("prop", loc, D.SCOPE_PROP)))
                scope_imprecise = True
        if not scope_imprecise:
            out.append(self.make_node(edge.call, ("var", name)))
        return out


def _atom_value(analyzer, atom):
    from .analyzer import atom_const_value
    return atom_const_value(atom)


def _dedup(nodes: list[TraceNode]) -> list[TraceNode]:
    seen = set()
    out = []
    for n in sorted(nodes, key=lambda t: t.sort_key()):
        if n.key() not in seen:
            seen.add(n.key())
            out.append(n)
    return out


def generate_graph(impre_vars, summary: Summary, call_graph: CallGraph,
                   max_steps: int = 200_000) -> TraceGraph:
    """Worklist expansion from the halt-time imprecise watched variables.
    Only imprecise nodes not already in the graph are expanded; precise
    nodes are terminal."""
    tracer = Tracer(summary, call_graph)
    graph = TraceGraph()
    worklist = []
    for t in sorted(impre_vars, key=lambda t: t.sort_key()):
        t = graph.add_node(t)
        if t.is_imprecise():
            worklist.append(t)
    steps = 0
    while worklist:
        steps += 1
        if steps > max_steps:
            raise RuntimeError("tracing graph generation exceeded its step bound")
        t = worklist.pop(0)
        instr_kind = tracer.cfg.node(t.at.node_id).instr.kind
        if instr_kind in ("entry", "after-call"):
            ts = tracer.trace_inter(t)
        else:
            ts = tracer.trace_intra(t)
        for succ in ts:
            existing = succ.key() in graph.nodes
            succ = graph.add_node(succ)
            graph.add_edge(t, succ)
            if succ.is_imprecise() and not existing and not succ.flags & {DEAD_END}:
                worklist.append(succ)
    return graph


# ── Serialization ─────────────────────────────────────────────────────

def graph_to_json(graph: TraceGraph, findings=None) -> dict:
    """Stable JSON form; see docs/tracegraph.md."""
    nodes = graph.all_nodes()
    index = {t.key(): i for i, t in enumerate(nodes)}
    patterns = {}
    for f in findings or ():
        patterns[f.node.key()] = f.pattern
    out_nodes = []
    for t in nodes:
        subject = {"kind": "var", "name": t.subject[1]} if t.is_var() else {
            "kind": "prop", "site": t.subject[1].site,
            "tag": _tag_json(t.subject[1].tag), "name": t.subject[2]}
        entry = {
            "id": index[t.key()],
            "precision": "imprecise" if t.is_imprecise() else "precise",
            "node": t.at.node_id,
            "ctx": _ctx_json(t.at.ctx),
            "subject": subject,
            "line": t.line,
        }
        if t.flags:
            entry["flags"] = sorted(t.flags)
        if t.key() in patterns:
            entry["pattern"] = patterns[t.key()]
        out_nodes.append(entry)
    out_edges = [[index[a.key()], index[b.key()]] for a, b in graph.edges]
    out_edges.sort()
    return {"schema": 1, "nodes": out_nodes, "edges": out_edges}


def _ctx_json(ctx: D.Context):
    return {"calls": list(ctx.call_string),
            "loops": [[l, i] for l, i in ctx.loop_string]}


def _tag_json(tag):
    if not tag:
        return None
    return {"calls": list(tag[0]), "loops": [[l, i] for l, i in tag[1]]}


def graph_to_dot(graph: TraceGraph, findings=None) -> str:
    """DOT rendering; nodes that are part of a detected pattern are shaded."""
    nodes = graph.all_nodes()
    index = {t.key(): i for i, t in enumerate(nodes)}
    shaded = {f.node.key(): f.pattern for f in findings or ()}
    lines = ["digraph tracing {", "  node [shape=box, fontsize=10];"]
    for t in nodes:
        precision = "imprecise" if t.is_imprecise() else "precise"
        label = f"{t.line} / {t.subject_str()} / {precision}"
        if t.flags:
            label += " / " + ",".join(sorted(t.flags))
        attrs = f'label="{label}"'
        if t.key() in shaded:
            attrs += f', style=filled, fillcolor=lightgrey, xlabel="{shaded[t.key()]}"'
        lines.append(f"  t{index[t.key()]} [{attrs}];")
    for a, b in sorted(graph.edges, key=lambda e: (index[e[0].key()], index[e[1].key()])):
        lines.append(f"  t{index[a.key()]} -> t{index[b.key()]};")
    lines.append("}")
    return "\n".join(lines) + "\n"
