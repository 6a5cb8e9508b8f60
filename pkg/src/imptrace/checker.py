"""Precision checker: watches selected variables during the fixpoint and
halts the analysis the first time any of them approximates two or more
concrete values."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .analyzer import HaltInfo, Summary
from .cfg import StaticCfg, StaticNode

log = logging.getLogger(__name__)


class WatchError(Exception):
    pass


@dataclass(frozen=True)
class WatchEntry:
    node_id: int
    var: str


@dataclass
class WatchSet:
    entries: tuple

    @classmethod
    def from_specs(cls, cfg: StaticCfg, specs: list[str]) -> "WatchSet":
        """Resolve `LINE:VAR` specs to the nearest instruction reading (or
        failing that, writing) the variable on that source line."""
        entries = []
        for spec in specs:
            try:
                line_s, var = spec.split(":", 1)
                line = int(line_s)
            except ValueError:
                raise WatchError(f"bad watch spec {spec!r}; expected LINE:VAR")
            node = _resolve_watch(cfg, line, var)
            if node is None:
                raise WatchError(f"no instruction on line {line} mentions {var!r}")
            entries.append(WatchEntry(node.node_id, var))
        return cls(tuple(entries))

    @classmethod
    def callees(cls, cfg: StaticCfg) -> "WatchSet":
        """Watch the callee temp of every call site."""
        entries = [WatchEntry(n.node_id, n.instr.callee)
                   for n in cfg.node_by_id if n.instr.kind == "call"]
        return cls(tuple(entries))

    def node_ids(self) -> set:
        return {e.node_id for e in self.entries}


def _instr_reads(node: StaticNode) -> set:
    from .cfg import EAtom, EBinOp, ELoad
    i = node.instr
    names = set()
    for atom in (i.base, i.key, i.value, i.left, i.right):
        if atom is not None and atom.is_var():
            names.add(atom.value)
    for v in (i.callee, i.this, i.args):
        if v:
            names.add(v)
    e = i.expr
    if isinstance(e, EAtom) and e.atom.is_var():
        names.add(e.atom.value)
    elif isinstance(e, ELoad):
        names.update(a.value for a in (e.base, e.key) if a.is_var())
    elif isinstance(e, EBinOp):
        names.update(a.value for a in (e.left, e.right) if a.is_var())
    return names


def _resolve_watch(cfg: StaticCfg, line: int, var: str):
    reads, writes = [], []
    for node in cfg.find_nodes(line):
        if var in _instr_reads(node):
            reads.append(node)
        elif node.instr.target == var:
            writes.append(node)
    for bucket in (reads, writes):
        if bucket:
            return min(bucket, key=lambda n: n.node_id)
    return None


class PrecisionChecker:
    """Installed into the solver; consulted after every state update to a
    watched node.  On the first imprecise watched entry it reports every
    watched entry that is imprecise at that moment, across all contexts."""

    def __init__(self, watch: WatchSet):
        self.watch = watch
        self._node_ids = watch.node_ids()
        self._vars_at: dict[int, list[str]] = {}
        for e in watch.entries:
            self._vars_at.setdefault(e.node_id, []).append(e.var)

    def watches_node(self, node_id: int) -> bool:
        return node_id in self._node_ids

    def check(self, summary: Summary, changed, iteration: int):
        triggered = False
        for fnode in changed:
            for var in self._vars_at.get(fnode.node_id, ()):
                if summary.is_imprecise(fnode, ("var", var)):
                    triggered = True
                    break
            if triggered:
                break
        if not triggered:
            return None
        from .tracer import TraceNode, IMPRECISE_VAR
        impre = []
        for entry in self.watch.entries:
            for fnode in summary.flow_nodes_of(entry.node_id):
                if summary.is_imprecise(fnode, ("var", entry.var)):
                    node = summary.cfg.node(entry.node_id)
                    impre.append(TraceNode(IMPRECISE_VAR, fnode,
                                           ("var", entry.var), node.line))
        impre.sort(key=lambda t: t.sort_key())
        log.info("halting at iteration %d with %d imprecise watched entries",
                 iteration, len(impre))
        return HaltInfo(impre, iteration)
