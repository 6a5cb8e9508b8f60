"""Classifies tracing-graph nodes against the four common imprecision
patterns and derives per-finding remediation hints.

Rules are checked in order; the first match wins:

Function   imprecise value at a function entry whose successors are all
           precise nodes at call instructions (precise caller values merged
           at the entry).
Loop       imprecise variable at a loop-head cond over that variable, on a
           cycle back to itself, with a precise successor for the same
           variable (iteration values merged at the head).
HeapClone  imprecise object property at a property write or an allocation
           whose successors are all precise (weak update on a summary
           object merged across contexts).
Model      imprecise builtin result whose inputs are precise, or an
           imprecise property at the global-scope entry with no successors
           (imprecise model of a builtin function / initial-heap object).

An imprecise successor suppresses the builtin Model rule (the cause then
lies upstream, not in the model).
"""

from __future__ import annotations

from dataclasses import dataclass

from . import cfg as C
from . import domains as D
from .analyzer import CallGraph, Summary
from .tracer import (IMPRECISE_PROP, IMPRECISE_VAR, PRECISE_PROP, PRECISE_VAR,
                     TraceGraph, TraceNode)

FUNCTION = "Function"
LOOP = "Loop"
HEAP_CLONE = "HeapClone"
MODEL = "Model"
UNKNOWN = "Unknown"

# Documented override constants applied by the Model remedy.
MODEL_CONSTANTS = {
    "Math.random": 0.0,
    "Date.now": 0.0,
    "navigator.userAgent": "Mozilla/5.0",
}

_INITIAL_OBJECT_NAMES = {}


def _initial_object_names():
    if not _INITIAL_OBJECT_NAMES:
        from . import analyzer as A
        _INITIAL_OBJECT_NAMES.update({
            A.L_MATH: "Math",
            A.L_DATE: "Date",
            A.L_NAVIGATOR: "navigator",
        })
    return _INITIAL_OBJECT_NAMES


@dataclass(frozen=True)
class Hint:
    kind: str          # kcfa | lsa | clone | model
    targets: tuple     # call sites / loop ids / (alloc site, caller sites) / model names


@dataclass(frozen=True)
class Finding:
    node: TraceNode
    pattern: str
    hint: Hint

    def line(self) -> int:
        return self.node.line


@dataclass
class PatternReport:
    findings: list

    def patterns(self) -> set:
        return {f.pattern for f in self.findings}

    def to_json(self) -> list:
        out = []
        for f in sorted(self.findings, key=lambda f: (f.pattern, f.node.sort_key())):
            out.append({
                "pattern": f.pattern,
                "line": f.node.line,
                "subject": f.node.subject_str(),
                "hintKind": f.hint.kind,
                "hintTargets": list(f.hint.targets),
            })
        return out


def classify(t: TraceNode, graph: TraceGraph, cfg: C.StaticCfg) -> str:
    """Pattern kind of one tracing node, by the first matching rule."""
    node = cfg.node(t.at.node_id)
    instr = node.instr
    succs = graph.successors(t)

    def all_precise_at_calls():
        return succs and all(
            s.kind in (PRECISE_VAR, PRECISE_PROP)
            and cfg.node(s.at.node_id).instr.kind == "call"
            for s in succs)

    if t.is_imprecise() and instr.kind == "entry" and all_precise_at_calls():
        return FUNCTION

    if (t.kind == IMPRECISE_VAR and instr.kind == "cond"
            and ("var", t.subject[1]) in (("var", a.value) for a in
                                          (instr.left, instr.right) if a.is_var())
            and graph.reaches(t, t)
            and any(s.kind == PRECISE_VAR and s.subject == t.subject
                    for s in succs)):
        return LOOP

    if (t.kind == IMPRECISE_PROP and instr.kind in ("write-prop", "alloc")
            and succs
            and all(s.kind in (PRECISE_VAR, PRECISE_PROP) for s in succs)):
        return HEAP_CLONE

    if (t.kind == IMPRECISE_VAR and instr.kind == "builtin"
            and t.subject == ("var", D.RET_PROP)
            and succs
            and all(s.kind == PRECISE_VAR for s in succs)):
        return MODEL
    if (t.kind == IMPRECISE_PROP and instr.kind == "entry"
            and node.fn == C.GLOBAL_FID and not succs):
        return MODEL

    return UNKNOWN


def report(graph: TraceGraph, summary: Summary, call_graph: CallGraph) -> PatternReport:
    """Classify every node, dropping Unknown, and attach remediation hints."""
    cfg = summary.cfg
    findings = []
    for t in graph.all_nodes():
        pattern = classify(t, graph, cfg)
        if pattern == UNKNOWN:
            continue
        findings.append(Finding(t, pattern, _hint(t, pattern, graph, summary,
                                                  call_graph)))
    return PatternReport(findings)


def _hint(t: TraceNode, pattern: str, graph: TraceGraph, summary: Summary,
          call_graph: CallGraph) -> Hint:
    cfg = summary.cfg
    if pattern == FUNCTION:
        sites = sorted({s.at.node_id for s in graph.successors(t)})
        return Hint("kcfa", tuple(sites))
    if pattern == LOOP:
        return Hint("lsa", (t.at.node_id,))
    if pattern == HEAP_CLONE:
        # Remedy targets the allocation site of the imprecise property's
        # location.  Cloning separates per-context allocations, which takes
        # effect only when the allocating function's calling contexts are
        # distinguished, so the callers of its enclosing function are named
        # alongside the site.
        loc = t.subject[1]
        site = loc.site
        enclosing = cfg.node(site).fn
        callers = sorted({e.call.node_id for e in call_graph.edges
                          if e.callee == enclosing})
        return Hint("clone", (site,) + tuple(callers))
    if pattern == MODEL:
        node = cfg.node(t.at.node_id)
        if node.instr.kind == "builtin":
            return Hint("model", (node.instr.bkind,))
        _, loc, prop = t.subject
        base = _initial_object_names().get(loc, f"l{loc.site}")
        return Hint("model", (f"{base}.{prop}",))
    raise AssertionError(pattern)
