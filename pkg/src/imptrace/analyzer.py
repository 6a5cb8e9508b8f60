"""Flow-sensitive worklist fixpoint over context-qualified CFG nodes.

A FlowNode pairs a static CFG node with an analysis context (call string +
loop-iteration string).  The solver propagates abstract states along intra
edges and along call/return edges resolved on the fly, producing a summary
table (state before each reachable FlowNode), the resolved call graph, and,
when a precision checker is installed, an early halt with the imprecise
watched variables.

Scope handling: each function invocation target (callee function id plus
callee context) gets one scope object, allocated by the call transfer at a
location derived from the callee entry node and context.  Scope objects are
strong-updatable by construction; merging across callers happens through
the state join at the callee entry.  Variables resolve statically (local /
outer-by-depth / global) and read or write scope-object properties through
the *outer chain.

Sensitivity knobs (AnalysisConfig): per-call-site k for the call string,
per-loop iteration contexts with saturation, per-allocation-site heap
cloning (context-tagged locations), and model overrides for builtins and
initial-heap properties.  Callees inherit the caller's loop string, so loop
iteration contexts flow into callbacks invoked from the loop body.

Definite branch outcomes prune the infeasible cond edge.  There is no
variable refinement on branches.
"""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

from . import cfg as C
from . import domains as D
from .cfg import Atom, EAtom, EBinOp, ELoad, StaticCfg, StaticNode
from .domains import (AbsHeap, AbsLoc, AbsObject, AbsState, AbsValue, BOT,
                      Context, CTX0, PropSlot, UNDEF, join)

log = logging.getLogger(__name__)

# Synthetic allocation sites for the initial heap.
L_MATH = AbsLoc(-101)
L_DATE = AbsLoc(-102)
L_NAVIGATOR = AbsLoc(-103)
L_RANDOM_FN = AbsLoc(-111)
L_NOW_FN = AbsLoc(-112)
L_PRINT_FN = AbsLoc(-113)

INITIAL_PROP_MODELS = ("navigator.userAgent",)

MODEL_DEFAULT_OVERRIDES = {
    "Math.random": 0.0,
    "Date.now": 0.0,
    "navigator.userAgent": "Mozilla/5.0",
}


@dataclass(frozen=True)
class FlowNode:
    node_id: int
    ctx: Context

    def key(self):
        return (self.node_id, self.ctx.key())

    def __str__(self):
        return f"n{self.node_id}{self.ctx}"


@dataclass
class AnalysisConfig:
    kcfa_sites: dict[int, int] = field(default_factory=dict)
    lsa_loops: dict[int, tuple[int, int]] = field(default_factory=dict)  # loop -> (max_iter, max_depth)
    clone_sites: frozenset = frozenset()
    model_overrides: dict[str, object] = field(default_factory=dict)
    kset: int = D.DEFAULT_KSET
    timeout_ms: int = 10_000

    def copy(self) -> "AnalysisConfig":
        return AnalysisConfig(dict(self.kcfa_sites), dict(self.lsa_loops),
                              frozenset(self.clone_sites),
                              dict(self.model_overrides), self.kset,
                              self.timeout_ms)

    def to_json(self) -> dict:
        return {
            "kcfa": {str(k): v for k, v in sorted(self.kcfa_sites.items())},
            "lsa": [{"loop": l, "maxIter": mi, "maxDepth": md}
                    for l, (mi, md) in sorted(self.lsa_loops.items())],
            "clone": sorted(self.clone_sites),
            "models": {k: self.model_overrides[k]
                       for k in sorted(self.model_overrides)},
            "kset": self.kset,
            "timeout_ms": self.timeout_ms,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AnalysisConfig":
        return cls(
            kcfa_sites={int(k): int(v) for k, v in data.get("kcfa", {}).items()},
            lsa_loops={int(e["loop"]): (int(e.get("maxIter", 10)),
                                        int(e.get("maxDepth", 3)))
                       for e in data.get("lsa", [])},
            clone_sites=frozenset(int(s) for s in data.get("clone", [])),
            model_overrides=dict(data.get("models", {})),
            kset=int(data.get("kset", D.DEFAULT_KSET)),
            timeout_ms=int(data.get("timeout_ms", 10_000)),
        )

    @classmethod
    def load(cls, path: str) -> "AnalysisConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))


@dataclass(frozen=True)
class CallEdge:
    call: FlowNode
    callee: int
    callee_ctx: Context
    caller_scope: AbsLoc


@dataclass
class CallGraph:
    edges: list = field(default_factory=list)
    _by_target: dict = field(default_factory=dict)   # (fid, ctx) -> [CallEdge]
    _by_call: dict = field(default_factory=dict)     # FlowNode -> [CallEdge]

    def add(self, edge: CallEdge) -> bool:
        key = (edge.callee, edge.callee_ctx)
        if edge in self._by_call.get(edge.call, ()):
            return False
        self.edges.append(edge)
        self._by_target.setdefault(key, []).append(edge)
        self._by_call.setdefault(edge.call, []).append(edge)
        return True

    def callers_of(self, fid: int, ctx: Context) -> list:
        return list(self._by_target.get((fid, ctx), ()))

    def callees_of(self, call: FlowNode) -> list:
        return list(self._by_call.get(call, ()))

    def callee_fids(self, call: FlowNode) -> set:
        return {e.callee for e in self._by_call.get(call, ())}


@dataclass
class HaltInfo:
    impre_vars: list          # list of tracer.TraceNode (imprecise-variable kind)
    iteration: int


@dataclass
class SolveResult:
    summary: "Summary"
    call_graph: CallGraph
    halt: Optional[HaltInfo]
    timed_out: bool
    steps: int


# ── Abstract operator semantics ───────────────────────────────────────

def _num_binop(op: str, a: float, b: float):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b if b != 0 else None
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    raise AssertionError(op)


def abstract_binop(op: str, a: AbsValue, b: AbsValue, kset: int) -> AbsValue:
    out = BOT
    if op in ("+", "-", "*", "/"):
        if a.nums is D.TOP or b.nums is D.TOP:
            if (a.nums is D.TOP or a.nums) and (b.nums is D.TOP or b.nums):
                out = join(out, D.NUM_TOP, kset)
        elif a.nums and b.nums:
            if op == "/" and 0.0 in b.nums:
                # Division by a possibly-zero divisor is not tracked by the
                # constant domain (infinities/NaN are unrepresentable).
                out = join(out, D.NUM_TOP, kset)
            else:
                vals = {_num_binop(op, x, y) for x in a.nums for y in b.nums}
                out = join(out, D.value_num(*vals), kset)
        if op == "+":
            if a.strs is D.TOP or b.strs is D.TOP:
                if (a.strs is D.TOP or a.strs) and (b.strs is D.TOP or b.strs):
                    out = join(out, D.STR_TOP, kset)
            elif a.strs and b.strs:
                out = join(out, D.value_str(*(x + y for x in a.strs for y in b.strs)),
                           kset)
        return out
    if op in ("<", "<="):
        if a.nums is D.TOP or b.nums is D.TOP:
            if (a.nums is D.TOP or a.nums) and (b.nums is D.TOP or b.nums):
                return D.BOOL_TOP
            return BOT
        if a.nums and b.nums:
            vals = {_num_binop(op, x, y) for x in a.nums for y in b.nums}
            return D.value_bool(*vals)
        return BOT
    if op in ("==", "!="):
        outcomes = _equality_outcomes(a, b)
        if op == "!=":
            outcomes = {not o for o in outcomes}
        return D.value_bool(*outcomes) if outcomes else BOT
    raise AssertionError(f"unknown operator {op}")


def _equality_outcomes(a: AbsValue, b: AbsValue) -> set:
    """Possible results of strict equality between concretizations."""
    outcomes: set = set()

    def kinds(v: AbsValue):
        ks = []
        if v.undef:
            ks.append(("undef", None))
        if v.null:
            ks.append(("null", None))
        ks.extend(("bool", x) for x in v.bools)
        if v.nums is D.TOP:
            ks.append(("num", D.TOP))
        else:
            ks.extend(("num", x) for x in v.nums)
        if v.strs is D.TOP:
            ks.append(("str", D.TOP))
        else:
            ks.extend(("str", x) for x in v.strs)
        if v.locs:
            ks.append(("obj", v.locs))
        return ks

    for ka, va in kinds(a):
        for kb, vb in kinds(b):
            if ka != kb:
                outcomes.add(False)
            elif ka in ("undef", "null"):
                outcomes.add(True)
            elif ka == "obj":
                # Reference identity through abstract locations is unknown;
                # disjoint location sets are definitely different objects.
                outcomes.update((True, False) if (va & vb) else (False,))
            elif va is D.TOP or vb is D.TOP:
                outcomes.update((True, False))
            else:
                outcomes.add(va == vb)
            if len(outcomes) == 2:
                return outcomes
    return outcomes


def const_value(v: object) -> AbsValue:
    if v is None:
        return D.NULL
    if isinstance(v, bool):
        return D.value_bool(v)
    if isinstance(v, float) or isinstance(v, int):
        return D.value_num(float(v))
    if isinstance(v, str):
        return D.value_str(v)
    raise AssertionError(f"bad constant {v!r}")


def atom_const_value(atom: Atom) -> AbsValue:
    if atom.kind == "num":
        return D.value_num(atom.value)
    if atom.kind == "str":
        return D.value_str(atom.value)
    if atom.kind == "bool":
        return D.value_bool(atom.value)
    if atom.kind == "null":
        return D.NULL
    if atom.kind == "undef":
        return UNDEF
    raise AssertionError(f"not a constant atom: {atom}")


# ── The analyzer ──────────────────────────────────────────────────────

class Analyzer:
    def __init__(self, cfg: StaticCfg, config: AnalysisConfig):
        self.cfg = cfg
        self.config = config
        self.kset = config.kset
        self.global_scope_loc = AbsLoc(cfg.functions[C.GLOBAL_FID].entry.node_id)
        self.call_graph = CallGraph()
        self.states: dict[FlowNode, AbsState] = {}
        self._reevaluating = False  # side-effect-free transfer re-runs
        self._loop_bodies: dict[int, set] = {}
        for loop_id in config.lsa_loops:
            self._loop_bodies[loop_id] = self._natural_loop_body(loop_id)

    # -- static helpers ------------------------------------------------

    def _natural_loop_body(self, loop_id: int) -> set:
        """Natural loop of a head: the head plus everything that reaches a
        back-edge source without passing through the head."""
        head = self.cfg.node(loop_id)
        fn = self.cfg.functions[head.fn]
        sources = [p.idx for p in self.cfg.intra_preds(head)
                   if self._dominates(fn, head.idx, p.idx)]
        body = {head.idx}
        stack = list(sources)
        while stack:
            n = stack.pop()
            if n in body:
                continue
            body.add(n)
            for p in fn.pred.get(n, []):
                if p not in body:
                    stack.append(p)
        return body

    def _dominates(self, fn: C.FunctionCfg, a: int, b: int) -> bool:
        cur = b
        while True:
            if cur == a:
                return True
            if cur == 0:
                return False
            cur = fn.idom_map.get(cur, 0)

    def scope_loc_for(self, fid: int, ctx: Context) -> AbsLoc:
        if fid == C.GLOBAL_FID:
            return self.global_scope_loc
        return AbsLoc(self.cfg.functions[fid].entry.node_id, ctx.key())

    def flow(self, node: StaticNode, ctx: Context) -> FlowNode:
        return FlowNode(node.node_id, ctx)

    # -- initial state ---------------------------------------------------

    def initial_state(self) -> AbsState:
        kset = self.kset
        heap = D.EMPTY_HEAP
        overrides = self.config.model_overrides

        def closure(loc: AbsLoc, kind: str) -> AbsHeap:
            fid = self.cfg.builtin_fids[kind]
            obj = AbsObject(fids=frozenset((fid,)),
                            props=((D.SCOPE_PROP,
                                    PropSlot(D.value_locs(self.global_scope_loc))),))
            return heap.with_obj(loc, obj)

        heap = closure(L_RANDOM_FN, "Math.random")
        heap = closure(L_NOW_FN, "Date.now")
        heap = closure(L_PRINT_FN, "print")
        math_obj = D.EMPTY_OBJECT.with_prop("random", PropSlot(D.value_locs(L_RANDOM_FN)))
        date_obj = D.EMPTY_OBJECT.with_prop("now", PropSlot(D.value_locs(L_NOW_FN)))
        ua = overrides.get("navigator.userAgent")
        ua_value = const_value(ua) if ua is not None else D.STR_TOP
        nav_obj = D.EMPTY_OBJECT.with_prop("userAgent", PropSlot(ua_value))
        heap = heap.with_obj(L_MATH, math_obj)
        heap = heap.with_obj(L_DATE, date_obj)
        heap = heap.with_obj(L_NAVIGATOR, nav_obj)

        scope = D.EMPTY_OBJECT
        scope = scope.with_prop("Math", PropSlot(D.value_locs(L_MATH)))
        scope = scope.with_prop("Date", PropSlot(D.value_locs(L_DATE)))
        scope = scope.with_prop("navigator", PropSlot(D.value_locs(L_NAVIGATOR)))
        scope = scope.with_prop("print", PropSlot(D.value_locs(L_PRINT_FN)))
        scope = scope.with_prop("this", PropSlot(UNDEF))
        scope = scope.with_prop("arguments", PropSlot(UNDEF))
        builtin_names = {"Math", "Date", "navigator", "print"}
        for name in sorted(self.cfg.functions[C.GLOBAL_FID].scope.locals):
            if name not in builtin_names:
                scope = scope.with_prop(name, PropSlot(UNDEF))
        heap = heap.with_obj(self.global_scope_loc, scope)
        return AbsState(heap, self.global_scope_loc)

    # -- variable access -------------------------------------------------

    def _scope_locs_at_depth(self, state: AbsState, depth: int) -> frozenset:
        locs = frozenset((state.scope_loc,))
        for _ in range(depth):
            nxt = frozenset()
            for loc in locs:
                obj = state.heap.get(loc)
                if obj is None:
                    continue
                slot = obj.get(D.OUTER_PROP)
                if slot is not None:
                    nxt |= slot.value.locs
            locs = nxt
        return locs

    def _resolve_var(self, fn: C.FunctionCfg, name: str):
        res = fn.scope.resolution.get(name, "global") if fn.scope else "global"
        if name in ("*ret", "arguments", "this"):
            return "local"
        return res

    def var_target_locs(self, state: AbsState, fn: C.FunctionCfg, name: str) -> frozenset:
        res = self._resolve_var(fn, name)
        if res == "local":
            return frozenset((state.scope_loc,))
        if res == "global":
            return frozenset((self.global_scope_loc,))
        _, depth = res
        return self._scope_locs_at_depth(state, depth)

    def lookup_var(self, state: AbsState, fn: C.FunctionCfg, name: str) -> AbsValue:
        out = BOT
        for loc in sorted(self.var_target_locs(state, fn, name)):
            obj = state.heap.get(loc)
            if obj is None:
                continue
            slot = obj.get(name)
            if slot is None:
                log.debug("unresolved variable %r in %s", name, fn.name)
                out = join(out, UNDEF, self.kset)
            else:
                out = join(out, slot.read(self.kset), self.kset)
        return out

    def write_var(self, state: AbsState, fn: C.FunctionCfg, name: str,
                  v: AbsValue) -> AbsState:
        """Scope-chain variable update.  Strong only for the executing
        function's own scope or the global scope (exactly one concrete
        activation per flow point); writes through *outer links are weak,
        since the enclosing function may have several live activations
        merged into one scope object."""
        locs = self.var_target_locs(state, fn, name)
        heap = state.heap
        strong = (len(locs) == 1
                  and next(iter(locs)) in (state.scope_loc, self.global_scope_loc))
        for loc in sorted(locs):
            obj = heap.get(loc)
            if obj is None:
                obj = D.EMPTY_OBJECT
            old = obj.get(name)
            if strong:
                obj = obj.with_prop(name, PropSlot(v, False))
            elif old is None:
                obj = obj.with_prop(name, PropSlot(v, True))
            else:
                obj = obj.with_prop(name, PropSlot(join(old.value, v, self.kset),
                                                   old.maybe_absent))
            heap = heap.with_obj(loc, obj)
        return AbsState(heap, state.scope_loc)

    def eval_atom(self, state: AbsState, fn: C.FunctionCfg, atom: Atom) -> AbsValue:
        if atom.is_var():
            return self.lookup_var(state, fn, atom.value)
        return atom_const_value(atom)

    def eval_expr(self, state: AbsState, fn: C.FunctionCfg, expr) -> AbsValue:
        if isinstance(expr, EAtom):
            return self.eval_atom(state, fn, expr.atom)
        if isinstance(expr, ELoad):
            base = self.eval_atom(state, fn, expr.base)
            key = self.eval_atom(state, fn, expr.key)
            return D.load_prop(state.heap, base, key, self.kset)
        if isinstance(expr, EBinOp):
            left = self.eval_atom(state, fn, expr.left)
            right = self.eval_atom(state, fn, expr.right)
            return abstract_binop(expr.op, left, right, self.kset)
        raise AssertionError(f"bad expr {expr!r}")

    # -- context transitions ----------------------------------------------

    def edge_ctx(self, ctx: Context, src: StaticNode, dst: StaticNode) -> Context:
        """Loop-string maintenance along an intra edge."""
        loops = list(ctx.loop_string)
        # Leave loops of this function whose body no longer contains dst.
        while loops:
            loop_id, _ = loops[-1]
            head = self.cfg.node(loop_id)
            if head.fn != dst.fn:
                break  # inherited from a caller; keep
            if dst.idx in self._loop_bodies.get(loop_id, ()):
                break
            loops.pop()
        if dst.node_id in self.cfg.loop_heads and dst.node_id in self.config.lsa_loops:
            max_iter, max_depth = self.config.lsa_loops[dst.node_id]
            own_depth = sum(1 for l, _ in loops if self.cfg.node(l).fn == dst.fn)
            if loops and loops[-1][0] == dst.node_id:
                loop_id, it = loops[-1]
                loops[-1] = (loop_id, min(it + 1, max_iter))
            elif own_depth < max_depth:
                loops.append((dst.node_id, 1))
        return Context(ctx.call_string, tuple(loops))

    # -- transfer ---------------------------------------------------------

    def transfer(self, fnode: FlowNode, state: AbsState):
        """Abstract semantics of one instruction.

        Returns (targets, call_edges) where targets is a list of
        (FlowNode, AbsState) propagations and call_edges the inter edges
        discovered at a call node.
        """
        node = self.cfg.node(fnode.node_id)
        fn = self.cfg.functions[node.fn]
        kind = node.instr.kind
        kset = self.kset
        targets: list[tuple[FlowNode, AbsState]] = []
        call_edges: list[CallEdge] = []

        def intra(out_state: AbsState):
            for succ, label in self.cfg.succs(node):
                ctx2 = self.edge_ctx(fnode.ctx, node, succ)
                targets.append((self.flow(succ, ctx2), out_state))

        if kind in ("entry", "skip"):
            intra(state)
        elif kind == "exit":
            self._flow_exit(node, fnode.ctx, state, targets)
        elif kind == "alloc":
            loc = self._alloc_loc(node, fnode.ctx)
            heap = state.heap.alloc(loc, D.EMPTY_OBJECT, kset)
            out = self.write_var(AbsState(heap, state.scope_loc), fn,
                                 node.instr.target, D.value_locs(loc))
            intra(out)
        elif kind == "function":
            loc = self._alloc_loc(node, fnode.ctx)
            obj = AbsObject(fids=frozenset((node.instr.fid,)),
                            props=((D.SCOPE_PROP,
                                    PropSlot(D.value_locs(state.scope_loc))),))
            heap = state.heap.alloc(loc, obj, kset)
            out = self.write_var(AbsState(heap, state.scope_loc), fn,
                                 node.instr.target, D.value_locs(loc))
            intra(out)
        elif kind == "write-var":
            v = self.eval_expr(state, fn, node.instr.expr)
            intra(self.write_var(state, fn, node.instr.target, v))
        elif kind == "write-prop":
            base = self.eval_atom(state, fn, node.instr.base)
            key = self.eval_atom(state, fn, node.instr.key)
            v = self.eval_atom(state, fn, node.instr.value)
            heap = D.store_prop(state.heap, base, key, v, kset)
            intra(AbsState(heap, state.scope_loc))
        elif kind == "return":
            v = self.eval_atom(state, fn, node.instr.value)
            out = self.write_var(state, fn, D.RET_PROP, v)
            for succ, _ in self.cfg.succs(node):
                ctx2 = self.edge_ctx(fnode.ctx, node, succ)
                targets.append((self.flow(succ, ctx2), out))
        elif kind == "cond":
            left = self.eval_atom(state, fn, node.instr.left)
            right = self.eval_atom(state, fn, node.instr.right)
            res = abstract_binop(node.instr.op, left, right, kset)
            feasible = set(res.bools)
            for succ, label in self.cfg.succs(node):
                wanted = label != "false"
                if wanted in feasible:
                    ctx2 = self.edge_ctx(fnode.ctx, node, succ)
                    targets.append((self.flow(succ, ctx2), state))
        elif kind == "builtin":
            v = self._builtin_result(node.instr.bkind, state, fn)
            intra(self.write_var(state, fn, D.RET_PROP, v))
        elif kind == "call":
            call_edges.extend(self._flow_call(node, fnode, state, targets))
        elif kind == "after-call":
            v = self.lookup_var(state, fn, D.RET_PROP)
            intra(self.write_var(state, fn, node.instr.target, v))
        else:
            raise AssertionError(f"unhandled instruction kind {kind}")
        targets.sort(key=lambda t: t[0].key())
        return targets, call_edges

    def _alloc_loc(self, node: StaticNode, ctx: Context) -> AbsLoc:
        # Argument arrays model per-activation argument records and are
        # context-qualified unconditionally; other sites clone on request.
        if node.node_id in self.config.clone_sites or node.instr.note == "args":
            return AbsLoc(node.node_id, ctx.key())
        return AbsLoc(node.node_id)

    def _builtin_result(self, bkind: str, state: AbsState, fn: C.FunctionCfg) -> AbsValue:
        override = self.config.model_overrides.get(bkind)
        if override is not None:
            return const_value(override)
        if bkind in ("Math.random", "Date.now"):
            return D.NUM_TOP
        if bkind == "print":
            return UNDEF
        raise AssertionError(f"unknown builtin {bkind}")

    def _callee_fids(self, state: AbsState, callee_v: AbsValue) -> list[int]:
        fids: set[int] = set()
        for loc in callee_v.locs:
            obj = state.heap.get(loc)
            if obj is not None:
                fids |= obj.fids
        return sorted(fids)

    def callee_scope_value(self, state: AbsState, callee_v: AbsValue, fid: int) -> AbsValue:
        """Join of *scope over the function objects carrying this fid."""
        out = BOT
        for loc in sorted(callee_v.locs):
            obj = state.heap.get(loc)
            if obj is None or fid not in obj.fids:
                continue
            slot = obj.get(D.SCOPE_PROP)
            if slot is not None:
                out = join(out, slot.value, self.kset)
        return out

    def _flow_call(self, node: StaticNode, fnode: FlowNode, state: AbsState,
                   targets) -> list[CallEdge]:
        fn = self.cfg.functions[node.fn]
        kset = self.kset
        callee_v = self.lookup_var(state, fn, node.instr.callee)
        this_v = self.lookup_var(state, fn, node.instr.this)
        args_v = self.lookup_var(state, fn, node.instr.args)
        fids = self._callee_fids(state, callee_v)
        if not fids:
            if not self._reevaluating:
                log.warning("call at line %d resolves no callees (value %s)",
                            node.line, callee_v)
            return []
        edges = []
        k = self.config.kcfa_sites.get(node.node_id, 0)
        for fid in fids:
            callee = self.cfg.functions[fid]
            cs = (fnode.ctx.call_string + (node.node_id,))[-k:] if k > 0 else ()
            callee_ctx = Context(tuple(cs), fnode.ctx.loop_string)
            scope_loc = self.scope_loc_for(fid, callee_ctx)
            params = callee.entry.instr.params
            scope = D.EMPTY_OBJECT
            scope = scope.with_prop(D.OUTER_PROP,
                                    PropSlot(self.callee_scope_value(state, callee_v, fid)))
            scope = scope.with_prop("this", PropSlot(this_v))
            scope = scope.with_prop("arguments", PropSlot(args_v))
            scope = scope.with_prop(D.RET_PROP, PropSlot(UNDEF))
            for name in sorted(callee.scope.locals if callee.scope else ()):
                if name not in params:
                    scope = scope.with_prop(name, PropSlot(UNDEF))
            for i, param in enumerate(params):
                pv = D.load_prop(state.heap, args_v, D.value_str(str(i)), kset)
                scope = scope.with_prop(param, PropSlot(pv))
            heap = state.heap.with_obj(scope_loc, scope)
            entry_flow = self.flow(callee.entry, callee_ctx)
            targets.append((entry_flow, AbsState(heap, scope_loc)))
            edges.append(CallEdge(fnode, fid, callee_ctx, state.scope_loc))
        return edges

    def _flow_exit(self, node: StaticNode, ctx: Context, state: AbsState, targets):
        for edge in self.call_graph.callers_of(node.fn, ctx):
            targets.append(self._return_propagation(edge, state))

    def _return_propagation(self, edge: CallEdge, exit_state: AbsState):
        ret_slot = None
        scope_obj = exit_state.heap.get(exit_state.scope_loc)
        if scope_obj is not None:
            ret_slot = scope_obj.get(D.RET_PROP)
        ret_v = ret_slot.read(self.kset) if ret_slot is not None else UNDEF
        call_node = self.cfg.node(edge.call.node_id)
        caller_fn = self.cfg.functions[call_node.fn]
        after = self.cfg.node(self.cfg.call_to_after[call_node.node_id])
        caller_state = AbsState(exit_state.heap, edge.caller_scope)
        caller_state = self.write_var(caller_state, caller_fn, D.RET_PROP, ret_v)
        return (self.flow(after, edge.call.ctx), caller_state)

    # -- the worklist -------------------------------------------------------

    def solve(self, checker=None) -> SolveResult:
        t0 = time.monotonic()
        deadline = t0 + self.config.timeout_ms / 1000.0
        entry_fn = self.cfg.functions[C.GLOBAL_FID]
        start = self.flow(entry_fn.entry, CTX0)
        self.states = {start: self.initial_state()}
        worklist: deque[FlowNode] = deque([start])
        queued = {start}
        steps = 0
        timed_out = False
        halt: Optional[HaltInfo] = None

        while worklist:
            steps += 1
            if steps % 256 == 0 and time.monotonic() > deadline:
                timed_out = True
                break
            fnode = worklist.popleft()
            queued.discard(fnode)
            state = self.states.get(fnode)
            if state is None:
                continue
            targets, new_edges = self.transfer(fnode, state)
            for edge in new_edges:
                if self.call_graph.add(edge):
                    # A freshly discovered edge must see the callee's current
                    # exit state, which may already be final.
                    callee = self.cfg.functions[edge.callee]
                    exit_flow = self.flow(callee.exit, edge.callee_ctx)
                    exit_state = self.states.get(exit_flow)
                    if exit_state is not None:
                        targets.append(self._return_propagation(edge, exit_state))
            changed_watch = []
            for target, new_state in targets:
                old = self.states.get(target)
                if old is None:
                    merged = new_state
                elif new_state.leq(old):
                    continue
                else:
                    merged = old.join(new_state, self.kset)
                    if merged == old:
                        continue
                self.states[target] = merged
                if target not in queued:
                    queued.add(target)
                    worklist.append(target)
                if checker is not None and checker.watches_node(target.node_id):
                    changed_watch.append(target)
            if checker is not None and changed_watch:
                halt = checker.check(self.summary(), changed_watch, steps)
                if halt is not None:
                    break

        return SolveResult(self.summary(), self.call_graph, halt, timed_out, steps)

    def summary(self) -> "Summary":
        return Summary(self)


# ── The summary table ─────────────────────────────────────────────────

Subject = Union[tuple]  # ("var", name) | ("load", Atom, Atom) | ("prop", AbsLoc, name)


class Summary:
    """Query interface over the (possibly intermediate) state table: the
    abstract value of a variable, property load, or object property before
    a node's instruction, evaluated without side effects."""

    def __init__(self, analyzer: Analyzer):
        self.analyzer = analyzer
        self.cfg = analyzer.cfg

    @property
    def states(self):
        return self.analyzer.states

    def state(self, fnode: FlowNode) -> Optional[AbsState]:
        return self.analyzer.states.get(fnode)

    def contexts_of(self, node_id: int) -> list[Context]:
        return sorted((f.ctx for f in self.analyzer.states if f.node_id == node_id),
                      key=lambda c: c.key())

    def flow_nodes_of(self, node_id: int) -> list[FlowNode]:
        return [FlowNode(node_id, c) for c in self.contexts_of(node_id)]

    def value(self, fnode: FlowNode, subject) -> AbsValue:
        state = self.state(fnode)
        if state is None:
            return BOT
        return self.value_in(state, fnode, subject)

    def value_in(self, state: AbsState, fnode: FlowNode, subject) -> AbsValue:
        a = self.analyzer
        node = self.cfg.node(fnode.node_id)
        fn = self.cfg.functions[node.fn]
        tag, *rest = subject
        if tag == "var":
            return a.lookup_var(state, fn, rest[0])
        if tag == "load":
            base, key = rest
            return D.load_prop(state.heap,
                               a.eval_atom(state, fn, base),
                               a.eval_atom(state, fn, key), a.kset)
        if tag == "prop":
            loc, name = rest
            obj = state.heap.get(loc)
            if obj is None:
                return BOT
            slot = obj.get(name)
            if slot is None:
                slot = obj.default
            if slot is None:
                return BOT
            return slot.read(a.kset)
        raise AssertionError(f"bad subject {subject!r}")

    def is_imprecise(self, fnode: FlowNode, subject) -> bool:
        """True iff the subject approximates two or more concrete values at
        the node (location sets counted by identity); unresolvable subjects
        count as zero, hence precise."""
        return D.is_imprecise_value(self.value(fnode, subject))

    def value_after(self, fnode: FlowNode, subject,
                    toward: Optional[FlowNode] = None) -> AbsValue:
        """The subject's value in the state flowing out of the node, as
        propagated toward `toward` (or the first propagation)."""
        state = self.state(fnode)
        if state is None:
            return BOT
        self.analyzer._reevaluating = True
        try:
            targets, _ = self.analyzer.transfer(fnode, state)
        finally:
            self.analyzer._reevaluating = False
        if not targets:
            return self.value_in(state, fnode, subject)
        chosen = None
        if toward is not None:
            for t, s in targets:
                if t == toward:
                    chosen = (t, s)
                    break
        if chosen is None:
            chosen = targets[0]
        t, out_state = chosen
        return self.value_in(out_state, t, subject)


def writes_subject(cfg: StaticCfg, analyzer: Analyzer, summary: Summary,
                   fnode: FlowNode, subject) -> bool:
    """Whether this node's instruction writes the subject (used to decide
    pre- vs post-state evaluation for tracing nodes)."""
    node = cfg.node(fnode.node_id)
    instr = node.instr
    tag, *rest = subject
    if tag == "var":
        name = rest[0]
        if instr.kind in ("alloc", "function", "write-var", "after-call"):
            return instr.target == name
        if instr.kind == "return":
            return name == D.RET_PROP
        if instr.kind == "builtin":
            return name == D.RET_PROP
        return False
    if tag == "prop":
        loc, name = rest
        state = summary.state(fnode)
        if state is None:
            return False
        fn = cfg.functions[node.fn]
        if instr.kind in ("alloc", "function"):
            return analyzer._alloc_loc(node, fnode.ctx) == loc
        if instr.kind == "write-prop":
            base = analyzer.eval_atom(state, fn, instr.base)
            if loc not in base.locs:
                return False
            keys = D.concrete_keys(analyzer.eval_atom(state, fn, instr.key))
            return keys is D.TOP or name in keys
        return False
    return False


def eval_subject(summary: Summary, fnode: FlowNode, subject) -> AbsValue:
    """Canonical tracing-time evaluation: the post-state value when the
    node's instruction writes the subject, the pre-state value otherwise."""
    a = summary.analyzer
    if writes_subject(summary.cfg, a, summary, fnode, subject):
        return summary.value_after(fnode, subject)
    return summary.value(fnode, subject)


def subject_imprecise(summary: Summary, fnode: FlowNode, subject) -> bool:
    return D.is_imprecise_value(eval_subject(summary, fnode, subject))


# ── Imprecise calls ───────────────────────────────────────────────────

def imprecise_calls(summary: Summary, call_graph: CallGraph):
    """Reachable call sites where some context resolves two or more callee
    function ids.  Counted per context: a site whose contexts each resolve a
    single callee is precise even if different contexts differ."""
    by_site: dict[int, int] = {}
    per_flow: dict[FlowNode, set] = {}
    for edge in call_graph.edges:
        per_flow.setdefault(edge.call, set()).add(edge.callee)
    for fnode, fids in per_flow.items():
        if len(fids) >= 2:
            cur = by_site.get(fnode.node_id, 0)
            by_site[fnode.node_id] = max(cur, len(fids))
    cfg = summary.cfg
    return sorted(((cfg.node(nid), count) for nid, count in by_site.items()),
                  key=lambda t: t[0].node_id)
