"""Control-flow-graph IR, its construction from desugared ASTs, dominators,
and predecessor queries.

The graph is context-free: one static subgraph per function, plus synthetic
subgraphs for modeled builtins (``entry -> builtin -> exit``).  Analysis
contexts are attached later by the analyzer.  Instruction kinds:

    entry[x..] | exit | alloc[x] | function[x, f] | write-var[x, e]
    | write-prop[x1[x2], x3] | call[xf, xthis, xargs] | after-call[x]
    | return[x] | cond[x op x] | builtin[c] | skip

Join points after branches are explicit ``skip`` nodes; loop re-entry merges
happen at the loop's ``cond`` node, which is recorded in ``loop_heads``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from . import corelang as cl


GLOBAL_FID = 0

BUILTIN_KINDS = ("Math.random", "Date.now", "print")


# ── Atoms and flat expressions ────────────────────────────────────────

@dataclass(frozen=True)
class Atom:
    kind: str  # var | num | str | bool | null | undef
    value: object = None

    def is_var(self) -> bool:
        return self.kind == "var"

    def __str__(self) -> str:
        if self.kind == "var":
            return str(self.value)
        if self.kind == "str":
            return f'"{self.value}"'
        if self.kind == "num":
            return cl.num_to_key(self.value)
        if self.kind == "bool":
            return "true" if self.value else "false"
        return self.kind


def var_atom(name: str) -> Atom:
    return Atom("var", name)


def atom_of(e: cl.Expr) -> Atom:
    if isinstance(e, cl.Var):
        return Atom("var", e.name)
    if isinstance(e, cl.Num):
        return Atom("num", e.value)
    if isinstance(e, cl.Str):
        return Atom("str", e.value)
    if isinstance(e, cl.Bool):
        return Atom("bool", e.value)
    if isinstance(e, cl.Null):
        return Atom("null")
    if isinstance(e, cl.Undefined):
        return Atom("undef")
    raise AssertionError(f"not an atom: {e!r}")


@dataclass(frozen=True)
class EAtom:
    atom: Atom


@dataclass(frozen=True)
class ELoad:
    base: Atom
    key: Atom


@dataclass(frozen=True)
class EBinOp:
    op: str
    left: Atom
    right: Atom


FlatExpr = Union[EAtom, ELoad, EBinOp]


# ── Instructions and nodes ────────────────────────────────────────────

@dataclass(frozen=True)
class Instr:
    kind: str
    params: tuple[str, ...] = ()          # entry
    target: Optional[str] = None          # alloc / function / write-var / after-call
    fid: Optional[int] = None             # function
    expr: Optional[FlatExpr] = None       # write-var
    base: Optional[Atom] = None           # write-prop
    key: Optional[Atom] = None            # write-prop
    value: Optional[Atom] = None          # write-prop / return
    callee: Optional[str] = None          # call
    this: Optional[str] = None            # call
    args: Optional[str] = None            # call
    op: Optional[str] = None              # cond
    left: Optional[Atom] = None           # cond
    right: Optional[Atom] = None          # cond
    bkind: Optional[str] = None           # builtin
    note: str = ""                        # skip

    def __str__(self) -> str:
        k = self.kind
        if k == "entry":
            return f"entry[{', '.join(self.params)}]"
        if k == "exit":
            return "exit"
        if k == "alloc":
            return f"alloc[{self.target}]"
        if k == "function":
            return f"function[{self.target}, f{self.fid}]"
        if k == "write-var":
            e = self.expr
            if isinstance(e, EAtom):
                rhs = str(e.atom)
            elif isinstance(e, ELoad):
                rhs = f"{e.base}[{e.key}]"
            else:
                rhs = f"{e.left} {e.op} {e.right}"
            return f"write-var[{self.target}, {rhs}]"
        if k == "write-prop":
            return f"write-prop[{self.base}[{self.key}], {self.value}]"
        if k == "call":
            return f"call[{self.callee}, {self.this}, {self.args}]"
        if k == "after-call":
            return f"after-call[{self.target}]"
        if k == "return":
            return f"return[{self.value}]"
        if k == "cond":
            return f"cond[{self.left} {self.op} {self.right}]"
        if k == "builtin":
            return f"builtin[{self.bkind}]"
        return "skip" + (f"({self.note})" if self.note else "")


@dataclass
class StaticNode:
    fn: int
    idx: int
    instr: Instr
    line: int
    node_id: int = -1  # global id, assigned when the cfg is sealed

    def __hash__(self):
        return hash((self.fn, self.idx))

    def __eq__(self, other):
        return isinstance(other, StaticNode) and (self.fn, self.idx) == (other.fn, other.idx)

    def __repr__(self):
        return f"<n{self.node_id} f{self.fn}:{self.idx} {self.instr} @{self.line}>"


@dataclass
class FunctionCfg:
    fid: int
    name: str
    params: list[str]
    nodes: list[StaticNode] = field(default_factory=list)
    succ: dict[int, list[tuple[int, str]]] = field(default_factory=dict)  # idx -> [(idx, label)]
    pred: dict[int, list[int]] = field(default_factory=dict)
    idom_map: dict[int, int] = field(default_factory=dict)
    scope: Optional[cl.ScopeInfo] = None
    is_builtin: bool = False
    decl_line: int = 0

    @property
    def entry(self) -> StaticNode:
        return self.nodes[0]

    @property
    def exit(self) -> StaticNode:
        return self.nodes[-1]


class ContractViolation(Exception):
    pass


@dataclass
class StaticCfg:
    functions: dict[int, FunctionCfg]
    node_by_id: list[StaticNode]
    loop_heads: dict[int, int]            # node_id of loop cond -> loop id (== node_id)
    call_to_after: dict[int, int]         # call node_id -> after-call node_id
    after_to_call: dict[int, int]
    builtin_fids: dict[str, int]
    fid_decl_site: dict[int, int]         # fid -> node_id of its function[x, f] instr
    source_name: str = "<input>"

    def node(self, node_id: int) -> StaticNode:
        return self.node_by_id[node_id]

    def fn_of(self, node: StaticNode) -> FunctionCfg:
        return self.functions[node.fn]

    def succs(self, node: StaticNode) -> list[tuple[StaticNode, str]]:
        f = self.functions[node.fn]
        return [(f.nodes[i], label) for i, label in f.succ.get(node.idx, [])]

    def intra_preds(self, node: StaticNode) -> list[StaticNode]:
        f = self.functions[node.fn]
        return [f.nodes[i] for i in f.pred.get(node.idx, [])]

    def idom(self, node: StaticNode) -> StaticNode:
        if node.instr.kind == "entry":
            raise ContractViolation("entry nodes have no immediate dominator")
        f = self.functions[node.fn]
        return f.nodes[f.idom_map[node.idx]]

    def get_preds(self, node: StaticNode, kind: str = "intra", call_graph=None):
        """Intra CFG predecessors, or inter predecessors via the resolved
        call graph (call nodes for an entry; callee exits for an after-call)."""
        if kind == "intra":
            return self.intra_preds(node)
        if kind != "inter":
            raise ContractViolation(f"unknown predecessor kind {kind!r}")
        if node.instr.kind not in ("entry", "after-call"):
            raise ContractViolation("inter predecessors exist only for entry/after-call nodes")
        if call_graph is None:
            raise ContractViolation("inter predecessors require a call graph")
        if node.instr.kind == "entry":
            return sorted({self.node(e.call.node_id) for e in call_graph.edges
                           if e.callee == node.fn},
                          key=lambda n: (n.fn, n.idx))
        call_id = self.after_to_call[node.node_id]
        return sorted({self.functions[e.callee].exit for e in call_graph.edges
                       if e.call.node_id == call_id},
                      key=lambda n: (n.fn, n.idx))

    def find_nodes(self, line: int) -> list[StaticNode]:
        return [n for n in self.node_by_id if n.line == line]


# ── Construction ──────────────────────────────────────────────────────

def _hoist_decls(body: list[cl.Stmt]):
    """Function declarations anywhere in the statement tree (not inside
    nested functions), in source order, plus the tree without them."""
    decls: list[cl.FuncDecl] = []

    def walk(stmts):
        out = []
        for s in stmts:
            if isinstance(s, cl.FuncDecl):
                decls.append(s)
                continue
            if isinstance(s, cl.If):
                s = cl.If(s.cond, walk(s.then), walk(s.els), line=s.line, col=s.col)
            elif isinstance(s, cl.While):
                s = cl.While(s.cond, walk(s.body), line=s.line, col=s.col)
            out.append(s)
        return out

    rest = walk(body)
    return decls, rest


class _FnBuilder:
    def __init__(self, fid: int, name: str, params: list[str], decl_line: int):
        self.cfg = FunctionCfg(fid, name, params, decl_line=decl_line)
        self.nodes: list[tuple[Instr, int]] = []
        self.edges: list[tuple[int, int, str]] = []

    def emit(self, instr: Instr, line: int) -> int:
        self.nodes.append((instr, line))
        return len(self.nodes) - 1

    def edge(self, a: int, b: int, label: str = ""):
        self.edges.append((a, b, label))


class _Builder:
    def __init__(self, program: cl.Program):
        self.program = program
        self.functions: dict[int, FunctionCfg] = {}
        self.next_fid = GLOBAL_FID + 1
        self.scopes: dict[int, cl.ScopeInfo] = {}
        self.parent: dict[int, int] = {}

    def build(self) -> StaticCfg:
        self._build_function(GLOBAL_FID, "<global>", [], self.program.body, None, 0)
        builtin_fids = {}
        for kind in BUILTIN_KINDS:
            builtin_fids[kind] = self._build_builtin(kind)
        return self._seal(builtin_fids)

    def _build_builtin(self, kind: str) -> int:
        fid = self.next_fid
        self.next_fid += 1
        b = _FnBuilder(fid, kind, [], 0)
        e = b.emit(Instr("entry", params=()), 0)
        m = b.emit(Instr("builtin", bkind=kind), 0)
        x = b.emit(Instr("exit"), 0)
        b.edge(e, m)
        b.edge(m, x)
        fn = self._finish(b)
        fn.is_builtin = True
        fn.scope = cl.ScopeInfo(params=[], locals=set(), resolution={})
        self.functions[fid] = fn
        return fid

    def _build_function(self, fid: int, name: str, params: list[str],
                        body: list[cl.Stmt], parent_fid: Optional[int],
                        decl_line: int) -> int:
        b = _FnBuilder(fid, name, params, decl_line)
        entry = b.emit(Instr("entry", params=tuple(params)), decl_line)
        if parent_fid is not None:
            self.parent[fid] = parent_fid

        # Hoist function declarations (including ones nested in branches or
        # loops) ahead of the body.
        decls, rest = _hoist_decls(body)
        cur: Optional[int] = entry
        for s in decls:
            sub = self._alloc_fid()
            self._build_function(sub, s.name, s.params, s.body, fid, s.line)
            n = b.emit(Instr("function", target=s.name, fid=sub), s.line)
            b.edge(cur, n)
            cur = n
        cur = self._stmts(b, rest, cur, fid)

        exit_idx = b.emit(Instr("exit"), decl_line)
        if cur is not None:
            b.edge(cur, exit_idx)
        fn = self._finish(b)
        self.functions[fid] = fn
        self.scopes[fid] = cl.ScopeInfo(params=list(params),
                                        locals=cl.collect_locals(body))
        return fid

    def _alloc_fid(self) -> int:
        fid = self.next_fid
        self.next_fid += 1
        return fid

    def _stmts(self, b: _FnBuilder, stmts: list[cl.Stmt],
               cur: Optional[int], fid: int) -> Optional[int]:
        for s in stmts:
            if cur is None:
                break  # unreachable code after return: dropped
            cur = self._stmt(b, s, cur, fid)
        return cur

    def _stmt(self, b: _FnBuilder, s: cl.Stmt, cur: int, fid: int) -> Optional[int]:
        def chain(instr: Instr, line: int) -> int:
            nonlocal cur
            n = b.emit(instr, line)
            b.edge(cur, n)
            cur = n
            return n

        if isinstance(s, cl.VarDecl):
            if s.init is None:
                return cur  # hoisted binding only
            return self._assign_var(b, s.name, s.init, s.line, chain, fid)
        if isinstance(s, cl.Assign):
            if isinstance(s.target, cl.Var):
                return self._assign_var(b, s.target.name, s.value, s.line, chain, fid)
            assert isinstance(s.target, cl.Index), "desugared property writes use Index"
            return chain(Instr("write-prop", base=atom_of(s.target.obj),
                               key=atom_of(s.target.key), value=atom_of(s.value)), s.line)
        if isinstance(s, cl.CallStmt):
            call = chain(Instr("call", callee=s.callee, this=s.this, args=s.args), s.line)
            after = b.emit(Instr("after-call", target=s.target), s.line)
            b.edge(call, after)
            return after
        if isinstance(s, cl.Return):
            chain(Instr("return", value=atom_of(s.value)), s.line)
            return None  # edge to exit is added when the function is sealed
        if isinstance(s, cl.If):
            cond = chain(Instr("cond", op=s.cond.op, left=atom_of(s.cond.left),
                               right=atom_of(s.cond.right)), s.line)
            then_end = self._branch(b, s.then, cond, "true", fid)
            els_end = self._branch(b, s.els, cond, "false", fid)
            if then_end is None and els_end is None:
                return None
            join = b.emit(Instr("skip", note="join"), s.line)
            for end in (then_end, els_end):
                if end is not None:
                    b.edge(end, join)
            return join
        if isinstance(s, cl.While):
            cond = chain(Instr("cond", op=s.cond.op, left=atom_of(s.cond.left),
                               right=atom_of(s.cond.right)), s.line)
            body_end = self._branch(b, s.body, cond, "true", fid)
            if body_end is not None:
                b.edge(body_end, cond)  # back-edge
            out = b.emit(Instr("skip", note="loop-exit"), s.line)
            b.edge(cond, out, "false")
            return out
        if isinstance(s, cl.FuncDecl):
            raise AssertionError("function declarations are hoisted before _stmts")
        raise AssertionError(f"unhandled desugared statement {s!r}")

    def _branch(self, b: _FnBuilder, stmts: list[cl.Stmt], cond: int,
                label: str, fid: int) -> Optional[int]:
        if not stmts:
            marker = b.emit(Instr("skip", note=f"{label}-arm"), b.nodes[cond][1])
            b.edge(cond, marker, label)
            return marker
        start = len(b.nodes)
        cur = self._stmts_fresh(b, stmts, fid)
        b.edge(cond, start, label)
        return cur

    def _stmts_fresh(self, b: _FnBuilder, stmts: list[cl.Stmt], fid: int) -> Optional[int]:
        # Emit the first statement without a predecessor edge; the caller
        # connects the branch edge to the first emitted node.
        first = stmts[0]
        head = len(b.nodes)
        cur: Optional[int] = self._emit_headless(b, first, fid)
        if cur is not None:
            cur = self._stmts(b, stmts[1:], cur, fid)
        return cur

    def _emit_headless(self, b: _FnBuilder, s: cl.Stmt, fid: int) -> Optional[int]:
        anchor = b.emit(Instr("skip", note="arm"), s.line)
        out = self._stmt(b, s, anchor, fid)
        return out

    def _assign_var(self, b: _FnBuilder, name: str, rhs: cl.Expr, line: int,
                    chain, fid: int) -> int:
        if isinstance(rhs, cl.AllocExpr):
            return chain(Instr("alloc", target=name,
                               note="args" if rhs.args else ""), line)
        if isinstance(rhs, cl.FuncExpr):
            sub = self._alloc_fid()
            self._build_function(sub, rhs.name or f"<fn@{line}>", rhs.params,
                                 rhs.body, fid, rhs.line or line)
            return chain(Instr("function", target=name, fid=sub), line)
        if isinstance(rhs, cl.Index):
            return chain(Instr("write-var", target=name,
                               expr=ELoad(atom_of(rhs.obj), atom_of(rhs.key))), line)
        if isinstance(rhs, cl.BinOp):
            return chain(Instr("write-var", target=name,
                               expr=EBinOp(rhs.op, atom_of(rhs.left), atom_of(rhs.right))),
                         line)
        return chain(Instr("write-var", target=name, expr=EAtom(atom_of(rhs))), line)

    def _finish(self, b: _FnBuilder) -> FunctionCfg:
        fn = b.cfg
        exit_idx = len(b.nodes) - 1
        assert b.nodes[exit_idx][0].kind == "exit"
        edges = list(b.edges)
        for i, (instr, _) in enumerate(b.nodes):
            if instr.kind == "return":
                edges.append((i, exit_idx, ""))

        # Drop unreachable nodes (e.g. joins where both arms returned).
        succ: dict[int, list[tuple[int, str]]] = {}
        for a, t, label in edges:
            succ.setdefault(a, []).append((t, label))
        reachable = {0}
        stack = [0]
        while stack:
            n = stack.pop()
            for t, _ in succ.get(n, []):
                if t not in reachable:
                    reachable.add(t)
                    stack.append(t)
        reachable.add(exit_idx)
        keep = sorted(reachable)
        remap = {old: new for new, old in enumerate(keep)}
        for old in keep:
            instr, line = b.nodes[old]
            fn.nodes.append(StaticNode(fn.fid, remap[old], instr, line))
        seen = set()
        for a, t, label in edges:
            if a in remap and t in remap and (remap[a], remap[t], label) not in seen:
                seen.add((remap[a], remap[t], label))
                fn.succ.setdefault(remap[a], []).append((remap[t], label))
                fn.pred.setdefault(remap[t], []).append(remap[a])
        for lst in fn.succ.values():
            lst.sort()
        for lst in fn.pred.values():
            lst.sort()
        fn.idom_map = _compute_idoms(fn)
        return fn

    def _seal(self, builtin_fids: dict[str, int]) -> StaticCfg:
        node_by_id: list[StaticNode] = []
        for fid in sorted(self.functions):
            for n in self.functions[fid].nodes:
                n.node_id = len(node_by_id)
                node_by_id.append(n)
        loop_heads: dict[int, int] = {}
        call_to_after: dict[int, int] = {}
        after_to_call: dict[int, int] = {}
        for fid in sorted(self.functions):
            fn = self.functions[fid]
            back_targets = _back_edge_targets(fn)
            for n in fn.nodes:
                if n.instr.kind == "cond" and n.idx in back_targets:
                    loop_heads[n.node_id] = n.node_id
                if n.instr.kind == "call":
                    after = next(fn.nodes[t] for t, _ in fn.succ[n.idx]
                                 if fn.nodes[t].instr.kind == "after-call")
                    call_to_after[n.node_id] = after.node_id
                    after_to_call[after.node_id] = n.node_id
        fid_decl_site = {}
        for n in node_by_id:
            if n.instr.kind == "function":
                fid_decl_site[n.instr.fid] = n.node_id
        self._resolve_scopes()
        return StaticCfg(functions=self.functions, node_by_id=node_by_id,
                         loop_heads=loop_heads, call_to_after=call_to_after,
                         after_to_call=after_to_call, builtin_fids=builtin_fids,
                         fid_decl_site=fid_decl_site,
                         source_name=self.program.source_name)

    def _resolve_scopes(self):
        for fid, fn in self.functions.items():
            if fn.is_builtin:
                continue
            info = self.scopes[fid]
            names = _referenced_names(fn)
            for name in sorted(names):
                info.resolution[name] = self._resolve(fid, name)
            fn.scope = info

    def _resolve(self, fid: int, name: str):
        if name in self.scopes[fid].params or name in self.scopes[fid].locals \
                or name == "this":
            return "local"
        depth = 0
        cur = fid
        while cur in self.parent:
            cur = self.parent[cur]
            depth += 1
            scope = self.scopes[cur]
            if name in scope.params or name in scope.locals:
                if cur == GLOBAL_FID:
                    return "global"
                return ("outer", depth)
        return "global"


def _referenced_names(fn: FunctionCfg) -> set[str]:
    names: set[str] = set(fn.params)
    for n in fn.nodes:
        i = n.instr
        for atom in (i.base, i.key, i.value, i.left, i.right):
            if atom is not None and atom.is_var():
                names.add(atom.value)
        if i.target:
            names.add(i.target)
        for v in (i.callee, i.this, i.args):
            if v:
                names.add(v)
        if isinstance(i.expr, EAtom) and i.expr.atom.is_var():
            names.add(i.expr.atom.value)
        elif isinstance(i.expr, ELoad):
            for atom in (i.expr.base, i.expr.key):
                if atom.is_var():
                    names.add(atom.value)
        elif isinstance(i.expr, EBinOp):
            for atom in (i.expr.left, i.expr.right):
                if atom.is_var():
                    names.add(atom.value)
    return names


def _back_edge_targets(fn: FunctionCfg) -> set[int]:
    """Targets of intra back-edges, by DFS."""
    color: dict[int, int] = {}
    targets: set[int] = set()

    def dfs(u: int):
        color[u] = 1
        for v, _ in fn.succ.get(u, []):
            if color.get(v, 0) == 1:
                targets.add(v)
            elif color.get(v, 0) == 0:
                dfs(v)
        color[u] = 2

    import sys
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, len(fn.nodes) * 4 + 100))
    try:
        dfs(0)
    finally:
        sys.setrecursionlimit(old)
    return targets


def _compute_idoms(fn: FunctionCfg) -> dict[int, int]:
    """Iterative dataflow dominators over reverse postorder."""
    order: list[int] = []
    seen = {0}
    stack: list[tuple[int, Iterable]] = [(0, iter(sorted(t for t, _ in fn.succ.get(0, []))))]
    while stack:
        u, it = stack[-1]
        advanced = False
        for v in it:
            if v not in seen:
                seen.add(v)
                stack.append((v, iter(sorted(t for t, _ in fn.succ.get(v, [])))))
                advanced = True
                break
        if not advanced:
            order.append(u)
            stack.pop()
    rpo = list(reversed(order))
    rpo_index = {n: i for i, n in enumerate(rpo)}
    idom: dict[int, int] = {0: 0}

    def intersect(a: int, b: int) -> int:
        while a != b:
            while rpo_index[a] > rpo_index[b]:
                a = idom[a]
            while rpo_index[b] > rpo_index[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for n in rpo:
            if n == 0:
                continue
            preds = [p for p in fn.pred.get(n, []) if p in idom]
            if not preds:
                continue
            new = preds[0]
            for p in preds[1:]:
                new = intersect(new, p)
            if idom.get(n) != new:
                idom[n] = new
                changed = True
    idom.pop(0, None)
    return idom


def build(program: cl.Program) -> StaticCfg:
    """Build the static CFG of a desugared Program."""
    assert program.desugared, "build() expects a desugared Program"
    return _Builder(program).build()


def build_source(source: str, source_name: str = "<input>") -> StaticCfg:
    return build(cl.desugar(cl.parse(source, source_name)))


# ── DOT export ────────────────────────────────────────────────────────

def to_dot(cfg: StaticCfg, call_edges: Optional[Iterable[tuple[int, int]]] = None) -> str:
    """DOT rendering: one cluster per function, call edges dashed."""
    out = ["digraph cfg {", "  node [shape=box, fontsize=10];"]
    for fid in sorted(cfg.functions):
        fn = cfg.functions[fid]
        out.append(f"  subgraph cluster_f{fid} {{")
        out.append(f'    label="f{fid} {fn.name}";')
        for n in fn.nodes:
            label = f"{n.node_id}: {n.instr}\\nline {n.line}"
            out.append(f'    n{n.node_id} [label="{label}"];')
        for a, targets in sorted(fn.succ.items()):
            for t, lab in targets:
                attr = f' [label="{lab}"]' if lab else ""
                out.append(f"    n{fn.nodes[a].node_id} -> n{fn.nodes[t].node_id}{attr};")
        out.append("  }")
    for a, b in sorted(call_edges or []):
        out.append(f"  n{a} -> n{b} [style=dashed];")
    out.append("}")
    return "\n".join(out) + "\n"
