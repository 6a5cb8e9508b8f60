"""Concrete interpreter over the same static CFG the analyzer uses, serving
as the independent oracle for soundness tests and derived expected values.

Builtin nondeterminism (Math.random, Date.now, the initial
navigator.userAgent) draws from a seeded generator, so equal seeds produce
equal traces.  The trace records, for every node visit, the concrete values
of the variables resolvable at that node (objects as their allocation
site), which is exactly what the soundness check needs to test membership
in the abstract concretization.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Optional

from . import cfg as C
from .cfg import Atom, EAtom, EBinOp, ELoad, StaticCfg, StaticNode
from .checker import WatchSet
from .corelang import num_to_key

log = logging.getLogger(__name__)

UNDEFINED = ("undefined",)
NULL = ("null",)

USER_AGENTS = ["Mozilla/5.0", "Opera/9.80", "curl/8.4"]


class RuntimeFault(Exception):
    """Concrete runtime type error, with source position."""

    def __init__(self, message: str, node: StaticNode):
        super().__init__(f"line {node.line}: {message}")
        self.node = node


@dataclass
class ConcreteObject:
    oid: int
    site: int                      # allocation node id (negative: initial heap)
    props: dict = field(default_factory=dict)
    fid: Optional[int] = None
    scope_oid: Optional[int] = None   # defining scope for closures


@dataclass
class Visit:
    node_id: int
    values: dict                   # var -> descriptor


@dataclass
class ExecutionTrace:
    visits: list = field(default_factory=list)
    truncated: bool = False
    fault: Optional[str] = None
    prints: list = field(default_factory=list)
    callees: dict = field(default_factory=dict)   # call node_id -> set of fid
    seed: int = 0

    def values_of(self, node_id: int, var: str) -> list:
        return [v.values[var] for v in self.visits
                if v.node_id == node_id and var in v.values]


def describe(value, interp: "Interpreter"):
    """Immutable descriptor of a concrete value for the trace."""
    if value is UNDEFINED:
        return ("undef",)
    if value is NULL:
        return ("null",)
    if isinstance(value, bool):
        return ("bool", value)
    if isinstance(value, float):
        return ("num", value)
    if isinstance(value, str):
        return ("str", value)
    if isinstance(value, int):  # object id
        return ("obj", interp.objects[value].site)
    raise AssertionError(f"bad concrete value {value!r}")


class Interpreter:
    def __init__(self, cfg: StaticCfg, seed: int = 0, step_limit: int = 100_000):
        self.cfg = cfg
        self.rng = random.Random(seed)
        self.seed = seed
        self.step_limit = step_limit
        self.objects: dict[int, ConcreteObject] = {}
        self.next_oid = 1
        self.trace = ExecutionTrace(seed=seed)

    # -- object helpers ----------------------------------------------------

    def new_object(self, site: int, fid=None, scope_oid=None) -> int:
        oid = self.next_oid
        self.next_oid += 1
        self.objects[oid] = ConcreteObject(oid, site, {}, fid, scope_oid)
        return oid

    def _init_globals(self) -> int:
        g = self.new_object(site=self.cfg.functions[C.GLOBAL_FID].entry.node_id)
        math = self.new_object(site=-101)
        date = self.new_object(site=-102)
        nav = self.new_object(site=-103)
        rand_fn = self.new_object(site=-111, fid=self.cfg.builtin_fids["Math.random"],
                                  scope_oid=g)
        now_fn = self.new_object(site=-112, fid=self.cfg.builtin_fids["Date.now"],
                                 scope_oid=g)
        print_fn = self.new_object(site=-113, fid=self.cfg.builtin_fids["print"],
                                   scope_oid=g)
        self.objects[math].props["random"] = rand_fn
        self.objects[date].props["now"] = now_fn
        self.objects[nav].props["userAgent"] = self.rng.choice(USER_AGENTS)
        gobj = self.objects[g]
        gobj.props.update({"Math": math, "Date": date, "navigator": nav,
                           "print": print_fn, "this": UNDEFINED,
                           "arguments": UNDEFINED})
        scope = self.cfg.functions[C.GLOBAL_FID].scope
        for name in sorted(scope.locals if scope else ()):
            gobj.props.setdefault(name, UNDEFINED)
        return g

    # -- variable access ----------------------------------------------------

    def _scope_for(self, fn: C.FunctionCfg, scope_oid: int, name: str) -> int:
        res = fn.scope.resolution.get(name, "global") if fn.scope else "global"
        if name in ("*ret", "this", "arguments"):
            res = "local"
        if res == "local":
            return scope_oid
        if res == "global":
            return self.global_oid
        _, depth = res
        cur = scope_oid
        for _ in range(depth):
            cur = self.objects[cur].props["*outer"]
        return cur

    def read_var(self, fn, scope_oid: int, name: str, node: StaticNode):
        holder = self.objects[self._scope_for(fn, scope_oid, name)]
        if name not in holder.props:
            return UNDEFINED
        return holder.props[name]

    def write_var(self, fn, scope_oid: int, name: str, value):
        holder = self.objects[self._scope_for(fn, scope_oid, name)]
        holder.props[name] = value

    def eval_atom(self, fn, scope_oid: int, atom: Atom, node: StaticNode):
        if atom.is_var():
            return self.read_var(fn, scope_oid, atom.value, node)
        if atom.kind == "num":
            return float(atom.value)
        if atom.kind == "str":
            return atom.value
        if atom.kind == "bool":
            return bool(atom.value)
        if atom.kind == "null":
            return NULL
        return UNDEFINED

    def to_key(self, value, node: StaticNode) -> str:
        if isinstance(value, str):
            return value
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return num_to_key(value)
        if value is NULL:
            return "null"
        if value is UNDEFINED:
            return "undefined"
        raise RuntimeFault("object used as a property key", node)

    def load_prop(self, base, key, node: StaticNode):
        if not isinstance(base, int):
            raise RuntimeFault(f"loading property from a non-object", node)
        return self.objects[base].props.get(self.to_key(key, node), UNDEFINED)

    def binop(self, op: str, a, b, node: StaticNode):
        if op == "==":
            return self._strict_eq(a, b)
        if op == "!=":
            return not self._strict_eq(a, b)
        if op in ("<", "<="):
            if not (isinstance(a, float) and not isinstance(a, bool)
                    and isinstance(b, float)):
                raise RuntimeFault(f"'{op}' needs numbers", node)
            return a < b if op == "<" else a <= b
        if op == "+":
            if isinstance(a, float) and isinstance(b, float) and \
                    not isinstance(a, bool) and not isinstance(b, bool):
                return a + b
            if isinstance(a, str) and isinstance(b, str):
                return a + b
            raise RuntimeFault("'+' needs two numbers or two strings", node)
        if op in ("-", "*", "/"):
            if not (isinstance(a, float) and isinstance(b, float)):
                raise RuntimeFault(f"'{op}' needs numbers", node)
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if b == 0.0:
                if a == 0.0:
                    return float("nan")
                return float("inf") if a > 0 else float("-inf")
            return a / b
        raise AssertionError(op)

    def _strict_eq(self, a, b) -> bool:
        if isinstance(a, bool) != isinstance(b, bool):
            return False
        return type(a) == type(b) and a == b

    # -- builtins ------------------------------------------------------------

    def run_builtin(self, kind: str, scope_oid: int, node: StaticNode):
        if kind == "Math.random":
            return self.rng.random()
        if kind == "Date.now":
            return float(self.rng.randrange(10 ** 12))
        if kind == "print":
            args_oid = self.objects[scope_oid].props.get("arguments")
            shown = []
            if isinstance(args_oid, int):
                obj = self.objects[args_oid]
                n = int(obj.props.get("length", 0.0) or 0.0)
                shown = [obj.props.get(str(i), UNDEFINED) for i in range(n)]
            self.trace.prints.append(shown)
            return UNDEFINED
        raise AssertionError(kind)

    # -- main loop -------------------------------------------------------------

    def run(self) -> ExecutionTrace:
        cfg = self.cfg
        self.global_oid = self._init_globals()
        gfn = cfg.functions[C.GLOBAL_FID]
        frames = [(gfn, self.global_oid, None)]  # (fn, scope_oid, after node)
        node = gfn.entry
        steps = 0
        try:
            while True:
                steps += 1
                if steps > self.step_limit:
                    self.trace.truncated = True
                    break
                fn, scope_oid, _ = frames[-1]
                self._record(fn, scope_oid, node)
                nxt = self._step(fn, scope_oid, node, frames)
                if nxt is None:
                    break
                node = nxt
        except RuntimeFault as e:
            self.trace.fault = str(e)
            log.debug("concrete run aborted: %s", e)
        return self.trace

    def _record(self, fn, scope_oid, node: StaticNode):
        values = {}
        names = set(fn.scope.resolution) if fn.scope else set()
        names.update(fn.params)
        for name in sorted(names):
            holder = self.objects[self._scope_for(fn, scope_oid, name)]
            if name in holder.props:
                values[name] = describe(holder.props[name], self)
        self.trace.visits.append(Visit(node.node_id, values))

    def _intra_next(self, node: StaticNode, label_wanted=None) -> Optional[StaticNode]:
        for succ, label in self.cfg.succs(node):
            if label_wanted is None:
                if succ.instr.kind == "after-call" and node.instr.kind == "call":
                    continue
                return succ
            if (label == "true") == label_wanted and label in ("true", "false"):
                return succ
        return None

    def _step(self, fn, scope_oid, node: StaticNode, frames):
        instr = node.instr
        kind = instr.kind

        if kind in ("entry", "skip"):
            return self._intra_next(node)
        if kind == "exit":
            popped = frames.pop()
            if not frames:
                return None
            ret = self.objects[scope_oid].props.get("*ret", UNDEFINED)
            _, caller_scope, _ = frames[-1]
            self.objects[caller_scope].props["*ret"] = ret
            return popped[2]
        if kind == "alloc":
            oid = self.new_object(node.node_id)
            self.write_var(fn, scope_oid, instr.target, oid)
            return self._intra_next(node)
        if kind == "function":
            oid = self.new_object(node.node_id, fid=instr.fid, scope_oid=scope_oid)
            self.write_var(fn, scope_oid, instr.target, oid)
            return self._intra_next(node)
        if kind == "write-var":
            self.write_var(fn, scope_oid, instr.target,
                           self._eval_expr(fn, scope_oid, instr.expr, node))
            return self._intra_next(node)
        if kind == "write-prop":
            base = self.eval_atom(fn, scope_oid, instr.base, node)
            if not isinstance(base, int):
                raise RuntimeFault("writing property on a non-object", node)
            key = self.to_key(self.eval_atom(fn, scope_oid, instr.key, node), node)
            self.objects[base].props[key] = self.eval_atom(fn, scope_oid,
                                                           instr.value, node)
            return self._intra_next(node)
        if kind == "return":
            self.objects[scope_oid].props["*ret"] = \
                self.eval_atom(fn, scope_oid, instr.value, node)
            return self.cfg.functions[node.fn].exit
        if kind == "cond":
            a = self.eval_atom(fn, scope_oid, instr.left, node)
            b = self.eval_atom(fn, scope_oid, instr.right, node)
            result = self.binop(instr.op, a, b, node)
            return self._intra_next(node, label_wanted=bool(result))
        if kind == "builtin":
            self.objects[scope_oid].props["*ret"] = \
                self.run_builtin(instr.bkind, scope_oid, node)
            return self._intra_next(node)
        if kind == "call":
            callee = self.read_var(fn, scope_oid, instr.callee, node)
            if not isinstance(callee, int) or self.objects[callee].fid is None:
                raise RuntimeFault("calling a non-function value", node)
            fobj = self.objects[callee]
            self.trace.callees.setdefault(node.node_id, set()).add(fobj.fid)
            callee_fn = self.cfg.functions[fobj.fid]
            this_v = self.read_var(fn, scope_oid, instr.this, node)
            args_v = self.read_var(fn, scope_oid, instr.args, node)
            new_scope = self.new_object(site=callee_fn.entry.node_id)
            sobj = self.objects[new_scope]
            sobj.props["*outer"] = fobj.scope_oid
            sobj.props["this"] = this_v
            sobj.props["arguments"] = args_v
            sobj.props["*ret"] = UNDEFINED
            params = callee_fn.entry.instr.params
            for name in sorted(callee_fn.scope.locals if callee_fn.scope else ()):
                if name not in params:
                    sobj.props[name] = UNDEFINED
            for i, p in enumerate(params):
                pv = UNDEFINED
                if isinstance(args_v, int):
                    pv = self.objects[args_v].props.get(str(i), UNDEFINED)
                sobj.props[p] = pv
            after = self.cfg.node(self.cfg.call_to_after[node.node_id])
            frames.append((callee_fn, new_scope, after))
            return callee_fn.entry
        if kind == "after-call":
            ret = self.objects[scope_oid].props.get("*ret", UNDEFINED)
            self.write_var(fn, scope_oid, instr.target, ret)
            return self._intra_next(node)
        raise AssertionError(kind)

    def _eval_expr(self, fn, scope_oid, expr, node: StaticNode):
        if isinstance(expr, EAtom):
            return self.eval_atom(fn, scope_oid, expr.atom, node)
        if isinstance(expr, ELoad):
            base = self.eval_atom(fn, scope_oid, expr.base, node)
            key = self.eval_atom(fn, scope_oid, expr.key, node)
            return self.load_prop(base, key, node)
        if isinstance(expr, EBinOp):
            a = self.eval_atom(fn, scope_oid, expr.left, node)
            b = self.eval_atom(fn, scope_oid, expr.right, node)
            return self.binop(expr.op, a, b, node)
        raise AssertionError(expr)


def run(cfg: StaticCfg, seed: int = 0, step_limit: int = 100_000) -> ExecutionTrace:
    """Execute the program once; deterministic for a given seed."""
    return Interpreter(cfg, seed, step_limit).run()


def trace_to_json(trace: ExecutionTrace, cfg: StaticCfg) -> dict:
    """Debug dump of one concrete run."""
    return {
        "schema": 1,
        "seed": trace.seed,
        "truncated": trace.truncated,
        "fault": trace.fault,
        "prints": [[_desc_json(v) for v in shown] for shown in trace.prints],
        "visits": [{"node": v.node_id, "line": cfg.node(v.node_id).line,
                    "values": {name: list(desc) for name, desc in
                               sorted(v.values.items())}}
                   for v in trace.visits],
        "callees": {str(k): sorted(v) for k, v in sorted(trace.callees.items())},
    }


def _desc_json(value):
    if value is UNDEFINED:
        return ["undef"]
    if value is NULL:
        return ["null"]
    if isinstance(value, (bool, float, str)):
        return [type(value).__name__, value]
    return ["obj", value]


# ── Soundness checking ────────────────────────────────────────────────

@dataclass
class Verdict:
    sound: bool
    witness: Optional[str] = None


def _member(desc, value, kset_irrelevant=None) -> bool:
    from . import domains as D
    tag = desc[0]
    if tag == "undef":
        return value.undef
    if tag == "null":
        return value.null
    if tag == "bool":
        return desc[1] in value.bools
    if tag == "num":
        return value.nums is D.TOP or desc[1] in value.nums
    if tag == "str":
        return value.strs is D.TOP or desc[1] in value.strs
    if tag == "obj":
        return any(loc.site == desc[1] for loc in value.locs)
    raise AssertionError(desc)


def check_soundness(trace: ExecutionTrace, summary, watch: WatchSet) -> Verdict:
    """Every concrete value a watched variable took at a watched node must
    lie in the concretization of the abstract value joined over contexts."""
    from . import domains as D
    for entry in watch.entries:
        flow_nodes = summary.flow_nodes_of(entry.node_id)
        joined = D.BOT
        for fnode in flow_nodes:
            joined = D.join(joined, summary.value(fnode, ("var", entry.var)),
                            summary.analyzer.kset)
        for desc in trace.values_of(entry.node_id, entry.var):
            if not _member(desc, joined):
                node = summary.cfg.node(entry.node_id)
                return Verdict(False,
                               f"line {node.line}: {entry.var} took {desc} "
                               f"outside abstract {joined}")
    return Verdict(True)


def check_call_soundness(trace: ExecutionTrace, call_graph, cfg: StaticCfg) -> Verdict:
    """Every concretely invoked callee must appear in the abstract call
    graph at its call site."""
    abstract: dict[int, set] = {}
    for edge in call_graph.edges:
        abstract.setdefault(edge.call.node_id, set()).add(edge.callee)
    for node_id, fids in sorted(trace.callees.items()):
        missing = fids - abstract.get(node_id, set())
        if missing:
            node = cfg.node(node_id)
            return Verdict(False, f"line {node.line}: concrete callees {missing} "
                                  f"missing from the abstract call graph")
    return Verdict(True)
