"""Surface syntax for the JavaScript-like core language.

The language is a small JS subset: first-class functions with lexical
closures, objects with computed property access, arrays as objects with
numeric-string keys, ``while``/``for``/``if``, ``return``, and the binary
operators ``+ - * / < <= == !=``.  Equality is strict; conditions are
boolean-tested (a bare ``if (e)`` compares ``e == true``).  The grammar is
documented in ``docs/grammar.md``.

``parse`` produces an AST with source positions.  ``desugar`` rewrites the
AST so that every operand position holds a variable or a constant: method
calls become receiver-temp / callee-load / argument-array / call / result
shapes, literals become an allocation plus property writes, and compound
expressions are flattened through fresh ``%tN`` temporaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union


class SyntaxError_(Exception):
    """Parse failure with position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


# ── Tokens ────────────────────────────────────────────────────────────

KEYWORDS = {
    "var", "function", "if", "else", "while", "for", "return",
    "true", "false", "null", "undefined",
}

PUNCT = [
    "==", "!=", "<=", "++",
    "(", ")", "{", "}", "[", "]", ";", ",", ".", "=", "<", "+", "-", "*", "/", ":",
]


@dataclass
class Token:
    kind: str  # num | str | ident | keyword | punct | eof
    text: str
    line: int
    col: int
    value: object = None


def tokenize(source: str) -> list[Token]:
    toks: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def err(msg):
        raise SyntaxError_(msg, line, col)

    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                i += 1
            continue
        if source.startswith("/*", i):
            end = source.find("*/", i + 2)
            if end < 0:
                err("unterminated comment")
            skipped = source[i:end + 2]
            line += skipped.count("\n")
            col = (len(skipped) - skipped.rfind("\n")) if "\n" in skipped else col + len(skipped)
            i = end + 2
            continue
        start_line, start_col = line, col
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                err(f"bad number literal {text!r}")
            toks.append(Token("num", text, start_line, start_col, value))
            col += j - i
            i = j
            continue
        if ch in "'\"":
            quote = ch
            j = i + 1
            buf = []
            while j < n and source[j] != quote:
                if source[j] == "\n":
                    err("unterminated string")
                if source[j] == "\\" and j + 1 < n:
                    esc = source[j + 1]
                    buf.append({"n": "\n", "t": "\t", "\\": "\\", quote: quote}.get(esc, esc))
                    j += 2
                else:
                    buf.append(source[j])
                    j += 1
            if j >= n:
                err("unterminated string")
            toks.append(Token("str", source[i:j + 1], start_line, start_col, "".join(buf)))
            col += j + 1 - i
            i = j + 1
            continue
        if ch.isalpha() or ch == "_" or ch == "%" or ch == "$":
            j = i + 1
            while j < n and (source[j].isalnum() or source[j] in "_$"):
                j += 1
            text = source[i:j]
            kind = "keyword" if text in KEYWORDS else "ident"
            toks.append(Token(kind, text, start_line, start_col))
            col += j - i
            i = j
            continue
        for p in PUNCT:
            if source.startswith(p, i):
                toks.append(Token("punct", p, start_line, start_col))
                i += len(p)
                col += len(p)
                break
        else:
            err(f"unexpected character {ch!r}")
    toks.append(Token("eof", "", line, col))
    return toks


# ── AST ───────────────────────────────────────────────────────────────
# Every node carries (line, col).  After desugaring, expression operands
# are restricted to Var/constants and statements come from the flat subset
# (see is_atom / Program.desugared).

@dataclass
class Node:
    line: int = field(default=0, kw_only=True)
    col: int = field(default=0, kw_only=True)


# Expressions
@dataclass
class Num(Node):
    value: float


@dataclass
class Str(Node):
    value: str


@dataclass
class Bool(Node):
    value: bool


@dataclass
class Null(Node):
    pass


@dataclass
class Undefined(Node):
    pass


@dataclass
class Var(Node):
    name: str


@dataclass
class Index(Node):
    obj: "Expr"
    key: "Expr"


@dataclass
class Member(Node):
    obj: "Expr"
    name: str


@dataclass
class BinOp(Node):
    op: str
    left: "Expr"
    right: "Expr"


@dataclass
class FuncExpr(Node):
    name: Optional[str]
    params: list[str]
    body: list["Stmt"]


@dataclass
class ObjectLit(Node):
    props: list[tuple[str, "Expr"]]


@dataclass
class ArrayLit(Node):
    items: list["Expr"]


@dataclass
class Call(Node):
    callee: "Expr"
    args: list["Expr"]


@dataclass
class MethodCall(Node):
    obj: "Expr"
    name: str
    args: list["Expr"]


Expr = Union[Num, Str, Bool, Null, Undefined, Var, Index, Member, BinOp,
             FuncExpr, ObjectLit, ArrayLit, Call, MethodCall]

Const = (Num, Str, Bool, Null, Undefined)


# Statements
@dataclass
class VarDecl(Node):
    name: str
    init: Optional[Expr]


@dataclass
class Assign(Node):
    target: Union[Var, Index, Member]
    value: Expr


@dataclass
class ExprStmt(Node):
    expr: Expr


@dataclass
class If(Node):
    cond: Expr
    then: list["Stmt"]
    els: list["Stmt"]


@dataclass
class While(Node):
    cond: Expr
    body: list["Stmt"]


@dataclass
class For(Node):
    init: Optional["Stmt"]
    cond: Optional[Expr]
    update: Optional["Stmt"]
    body: list["Stmt"]


@dataclass
class Return(Node):
    value: Optional[Expr]


@dataclass
class FuncDecl(Node):
    name: str
    params: list[str]
    body: list["Stmt"]


@dataclass
class PostIncr(Node):
    name: str


# Desugared-only statement: a flattened call `target = callee(this, args)`
# where callee/this/args are variables holding already-evaluated values.
@dataclass
class CallStmt(Node):
    target: str
    callee: str
    this: str
    args: str


# Desugared-only RHS markers used inside Assign/VarDecl values.
@dataclass
class AllocExpr(Node):
    args: bool = False  # allocation of a call's argument array


Stmt = Union[VarDecl, Assign, ExprStmt, If, While, For, Return, FuncDecl,
             PostIncr, CallStmt]


@dataclass
class Program:
    body: list[Stmt]
    source_name: str = "<input>"
    desugared: bool = False


# ── Parser (recursive descent) ────────────────────────────────────────

class _Parser:
    def __init__(self, tokens: list[Token], allow_temps: bool):
        self.toks = tokens
        self.pos = 0
        self.allow_temps = allow_temps

    def peek(self) -> Token:
        return self.toks[self.pos]

    def next(self) -> Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def err(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.peek()
        raise SyntaxError_(msg, tok.line, tok.col)

    def expect(self, text: str) -> Token:
        t = self.peek()
        if (t.kind in ("punct", "keyword") and t.text == text):
            return self.next()
        self.err(f"expected {text!r}, found {t.text or t.kind!r}")

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind in ("punct", "keyword") and t.text == text

    def ident(self) -> Token:
        t = self.peek()
        if t.kind != "ident":
            self.err(f"expected identifier, found {t.text or t.kind!r}")
        if t.text.startswith("%") and not self.allow_temps:
            self.err(f"identifier {t.text!r} uses the reserved temporary namespace")
        return self.next()

    # statements --------------------------------------------------------
    def program(self) -> list[Stmt]:
        body = []
        while self.peek().kind != "eof":
            body.append(self.statement())
        return body

    def block(self) -> list[Stmt]:
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.peek().kind == "eof":
                self.err("unterminated block")
            stmts.append(self.statement())
        self.expect("}")
        return stmts

    def statement(self) -> Stmt:
        t = self.peek()
        if self.at("var"):
            s = self.var_decl()
            self.expect(";")
            return s
        if self.at("function"):
            self.next()
            name = self.ident().text
            params = self.params()
            body = self.block()
            return FuncDecl(name, params, body, line=t.line, col=t.col)
        if self.at("if"):
            self.next()
            self.expect("(")
            cond = self.expression()
            self.expect(")")
            then = self.stmt_as_block()
            els: list[Stmt] = []
            if self.at("else"):
                self.next()
                els = self.stmt_as_block()
            return If(cond, then, els, line=t.line, col=t.col)
        if self.at("while"):
            self.next()
            self.expect("(")
            cond = self.expression()
            self.expect(")")
            return While(cond, self.stmt_as_block(), line=t.line, col=t.col)
        if self.at("for"):
            self.next()
            self.expect("(")
            init = None
            if not self.at(";"):
                init = self.var_decl() if self.at("var") else self.simple_stmt()
            self.expect(";")
            cond = None if self.at(";") else self.expression()
            self.expect(";")
            update = None if self.at(")") else self.simple_stmt()
            self.expect(")")
            return For(init, cond, update, self.stmt_as_block(), line=t.line, col=t.col)
        if self.at("return"):
            self.next()
            value = None if self.at(";") else self.expression()
            self.expect(";")
            return Return(value, line=t.line, col=t.col)
        if self.at("{"):
            # Bare blocks introduce no scope; splice them where they appear.
            return _Splice(self.block(), line=t.line, col=t.col)
        s = self.simple_stmt()
        self.expect(";")
        return s

    def stmt_as_block(self) -> list[Stmt]:
        if self.at("{"):
            return self.block()
        return [self.statement()]

    def var_decl(self) -> VarDecl:
        t = self.expect("var")
        name = self.ident()
        init = None
        if self.at("="):
            self.next()
            init = self.expression()
        return VarDecl(name.text, init, line=t.line, col=t.col)

    def simple_stmt(self) -> Stmt:
        t = self.peek()
        expr = self.expression()
        if self.at("="):
            self.next()
            if not isinstance(expr, (Var, Index, Member)):
                self.err("invalid assignment target", t)
            value = self.expression()
            return Assign(expr, value, line=t.line, col=t.col)
        if self.at("++"):
            self.next()
            if not isinstance(expr, Var):
                self.err("'++' applies to a variable", t)
            return PostIncr(expr.name, line=t.line, col=t.col)
        return ExprStmt(expr, line=t.line, col=t.col)

    def params(self) -> list[str]:
        self.expect("(")
        out = []
        while not self.at(")"):
            out.append(self.ident().text)
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        return out

    # expressions -------------------------------------------------------
    def expression(self) -> Expr:
        return self.equality()

    def _binop_level(self, sub, ops) -> Expr:
        left = sub()
        while self.peek().kind == "punct" and self.peek().text in ops:
            op = self.next()
            right = sub()
            left = BinOp(op.text, left, right, line=op.line, col=op.col)
        return left

    def equality(self) -> Expr:
        return self._binop_level(self.relational, ("==", "!="))

    def relational(self) -> Expr:
        return self._binop_level(self.additive, ("<", "<="))

    def additive(self) -> Expr:
        return self._binop_level(self.multiplicative, ("+", "-"))

    def multiplicative(self) -> Expr:
        return self._binop_level(self.unary, ("*", "/"))

    def unary(self) -> Expr:
        if self.at("-"):
            t = self.next()
            operand = self.unary()
            if isinstance(operand, Num):
                return Num(-operand.value, line=t.line, col=t.col)
            return BinOp("-", Num(0.0, line=t.line, col=t.col), operand, line=t.line, col=t.col)
        return self.postfix()

    def postfix(self) -> Expr:
        expr = self.primary()
        while True:
            t = self.peek()
            if self.at("."):
                self.next()
                name = self.ident()
                expr = Member(expr, name.text, line=t.line, col=t.col)
            elif self.at("["):
                self.next()
                key = self.expression()
                self.expect("]")
                expr = Index(expr, key, line=t.line, col=t.col)
            elif self.at("("):
                args = self.args()
                if isinstance(expr, Member):
                    expr = MethodCall(expr.obj, expr.name, args, line=t.line, col=t.col)
                else:
                    expr = Call(expr, args, line=t.line, col=t.col)
            else:
                return expr

    def args(self) -> list[Expr]:
        self.expect("(")
        out = []
        while not self.at(")"):
            out.append(self.expression())
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        return out

    def primary(self) -> Expr:
        t = self.peek()
        if t.kind == "num":
            self.next()
            return Num(t.value, line=t.line, col=t.col)
        if t.kind == "str":
            self.next()
            return Str(t.value, line=t.line, col=t.col)
        if self.at("true") or self.at("false"):
            self.next()
            return Bool(t.text == "true", line=t.line, col=t.col)
        if self.at("null"):
            self.next()
            return Null(line=t.line, col=t.col)
        if self.at("undefined"):
            self.next()
            return Undefined(line=t.line, col=t.col)
        if self.at("function"):
            self.next()
            name = self.ident().text if self.peek().kind == "ident" else None
            params = self.params()
            body = self.block()
            return FuncExpr(name, params, body, line=t.line, col=t.col)
        if self.at("{"):
            self.next()
            props = []
            while not self.at("}"):
                key = self.peek()
                if key.kind in ("ident", "str", "keyword"):
                    self.next()
                    key_name = key.value if key.kind == "str" else key.text
                elif key.kind == "num":
                    self.next()
                    key_name = num_to_key(key.value)
                else:
                    self.err("expected property name")
                self.expect(":")
                props.append((key_name, self.expression()))
                if not self.at("}"):
                    self.expect(",")
            self.expect("}")
            return ObjectLit(props, line=t.line, col=t.col)
        if self.at("["):
            self.next()
            items = []
            while not self.at("]"):
                items.append(self.expression())
                if not self.at("]"):
                    self.expect(",")
            self.expect("]")
            return ArrayLit(items, line=t.line, col=t.col)
        if self.at("("):
            self.next()
            e = self.expression()
            self.expect(")")
            return e
        if t.kind == "ident":
            self.next()
            if t.text.startswith("%") and not self.allow_temps:
                self.err(f"identifier {t.text!r} uses the reserved temporary namespace", t)
            return Var(t.text, line=t.line, col=t.col)
        self.err(f"expected expression, found {t.text or t.kind!r}")


@dataclass
class _Splice(Node):
    """Parser-internal: a bare block, flattened into the enclosing list."""
    stmts: list[Stmt]


def _flatten_splices(stmts: list[Stmt]) -> list[Stmt]:
    out: list[Stmt] = []
    for s in stmts:
        if isinstance(s, _Splice):
            out.extend(_flatten_splices(s.stmts))
            continue
        if isinstance(s, If):
            s = replace(s, then=_flatten_splices(s.then), els=_flatten_splices(s.els))
        elif isinstance(s, While):
            s = replace(s, body=_flatten_splices(s.body))
        elif isinstance(s, For):
            s = replace(s, body=_flatten_splices(s.body))
        elif isinstance(s, FuncDecl):
            s = replace(s, body=_flatten_splices(s.body))
        s = _flatten_fn_bodies(s)
        out.append(s)
    return out


def _flatten_fn_bodies(s: Stmt) -> Stmt:
    def walk_expr(e: Expr) -> Expr:
        if isinstance(e, FuncExpr):
            return replace(e, body=_flatten_splices(e.body))
        if isinstance(e, Index):
            return replace(e, obj=walk_expr(e.obj), key=walk_expr(e.key))
        if isinstance(e, Member):
            return replace(e, obj=walk_expr(e.obj))
        if isinstance(e, BinOp):
            return replace(e, left=walk_expr(e.left), right=walk_expr(e.right))
        if isinstance(e, ObjectLit):
            return replace(e, props=[(k, walk_expr(v)) for k, v in e.props])
        if isinstance(e, ArrayLit):
            return replace(e, items=[walk_expr(i) for i in e.items])
        if isinstance(e, Call):
            return replace(e, callee=walk_expr(e.callee), args=[walk_expr(a) for a in e.args])
        if isinstance(e, MethodCall):
            return replace(e, obj=walk_expr(e.obj), args=[walk_expr(a) for a in e.args])
        return e

    if isinstance(s, VarDecl) and s.init is not None:
        return replace(s, init=walk_expr(s.init))
    if isinstance(s, Assign):
        return replace(s, target=walk_expr(s.target), value=walk_expr(s.value))
    if isinstance(s, ExprStmt):
        return replace(s, expr=walk_expr(s.expr))
    if isinstance(s, Return) and s.value is not None:
        return replace(s, value=walk_expr(s.value))
    if isinstance(s, If):
        return replace(s, cond=walk_expr(s.cond))
    if isinstance(s, While):
        return replace(s, cond=walk_expr(s.cond))
    if isinstance(s, For):
        return replace(s, cond=walk_expr(s.cond) if s.cond else None)
    return s


def parse(source: str, source_name: str = "<input>", allow_temps: bool = False) -> Program:
    """Parse UTF-8 source into a Program; raises SyntaxError_ on failure."""
    toks = tokenize(source)
    parser = _Parser(toks, allow_temps)
    body = parser.program()
    return Program(_flatten_splices(body), source_name=source_name)


# ── Desugaring ────────────────────────────────────────────────────────

def num_to_key(v: float) -> str:
    """Canonical property key for a number (shared with the interpreters)."""
    if v == int(v) and not (v == 0 and str(v)[0] == "-"):
        return str(int(v))
    return repr(v)


def is_atom(e: Expr) -> bool:
    return isinstance(e, (Var,) + Const)


class _Desugarer:
    def __init__(self):
        self.counter = 0

    def temp(self) -> str:
        name = f"%t{self.counter}"
        self.counter += 1
        return name

    def stmts(self, body: list[Stmt]) -> list[Stmt]:
        out: list[Stmt] = []
        for s in body:
            out.extend(self.stmt(s))
        return out

    def stmt(self, s: Stmt) -> list[Stmt]:
        out: list[Stmt] = []
        if isinstance(s, VarDecl):
            if s.init is None:
                out.append(s)
            else:
                v = self.rhs(s.init, out, s.line)
                out.append(VarDecl(s.name, v, line=s.line, col=s.col))
        elif isinstance(s, Assign):
            if isinstance(s.target, Var):
                v = self.rhs(s.value, out, s.line)
                out.append(Assign(s.target, v, line=s.line, col=s.col))
            else:
                obj, key = self.prop_target(s.target, out, s.line)
                v = self.atom(s.value, out, s.line)
                out.append(Assign(Index(obj, key, line=s.line, col=s.col), v,
                                  line=s.line, col=s.col))
        elif isinstance(s, PostIncr):
            t = self.temp()
            one = Num(1.0, line=s.line, col=s.col)
            out.append(VarDecl(t, BinOp("+", Var(s.name, line=s.line, col=s.col), one,
                                        line=s.line, col=s.col), line=s.line, col=s.col))
            out.append(Assign(Var(s.name, line=s.line, col=s.col),
                              Var(t, line=s.line, col=s.col), line=s.line, col=s.col))
        elif isinstance(s, ExprStmt):
            if isinstance(s.expr, (Call, MethodCall)):
                t = self.temp()
                out.append(VarDecl(t, None, line=s.line, col=s.col))
                self.call_into(s.expr, t, out, s.line)
            else:
                # Effect-free expression statement: still evaluate loads.
                self.atom(s.expr, out, s.line)
        elif isinstance(s, If):
            cond = self.cond_binop(s.cond, out, s.line)
            out.append(If(cond, self.stmts(s.then), self.stmts(s.els),
                          line=s.line, col=s.col))
        elif isinstance(s, While):
            body = self.stmts(s.body)
            out.extend(self.while_loop(s.cond, body, s.line, s.col))
        elif isinstance(s, For):
            if s.init is not None:
                out.extend(self.stmt(s.init))
            cond = s.cond if s.cond is not None else Bool(True, line=s.line, col=s.col)
            body = self.stmts(s.body)
            if s.update is not None:
                body.extend(self.stmt(s.update))
            out.extend(self.while_loop(cond, body, s.line, s.col))
        elif isinstance(s, Return):
            v = self.atom(s.value, out, s.line) if s.value is not None \
                else Undefined(line=s.line, col=s.col)
            out.append(Return(v, line=s.line, col=s.col))
        elif isinstance(s, FuncDecl):
            out.append(FuncDecl(s.name, s.params, self.stmts(s.body),
                                line=s.line, col=s.col))
        elif isinstance(s, CallStmt):
            out.append(s)
        else:
            raise AssertionError(f"unhandled statement {s!r}")
        return out

    def while_loop(self, cond: Expr, body: list[Stmt], line: int, col: int):
        # Condition operands are re-evaluated each iteration: flatten them
        # into the preheader and repeat the same evaluation at the body tail.
        pre: list[Stmt] = []
        cond_flat = self.cond_binop(cond, pre, line)
        loop_body = body + [_clone_stmt(p) for p in pre]
        return pre + [While(cond_flat, loop_body, line=line, col=col)]

    def cond_binop(self, cond: Expr, out: list[Stmt], line: int) -> BinOp:
        if isinstance(cond, BinOp):
            left = self.atom(cond.left, out, line)
            right = self.atom(cond.right, out, line)
            return BinOp(cond.op, left, right, line=cond.line or line, col=cond.col)
        atom = self.atom(cond, out, line)
        return BinOp("==", atom, Bool(True, line=line, col=0), line=line, col=0)

    def prop_target(self, target: Union[Index, Member], out: list[Stmt], line: int):
        if isinstance(target, Member):
            obj = self.atom(target.obj, out, line)
            key = Str(target.name, line=target.line, col=target.col)
        else:
            obj = self.atom(target.obj, out, line)
            key = self.atom(target.key, out, line)
        return obj, key

    def rhs(self, e: Expr, out: list[Stmt], line: int) -> Expr:
        """Desugar an assignment RHS; compound loads/ops stay one level deep."""
        line = e.line or line
        if is_atom(e):
            return e
        if isinstance(e, Member):
            obj = self.atom(e.obj, out, line)
            return Index(obj, Str(e.name, line=line, col=e.col), line=line, col=e.col)
        if isinstance(e, Index):
            obj = self.atom(e.obj, out, line)
            key = self.atom(e.key, out, line)
            return Index(obj, key, line=line, col=e.col)
        if isinstance(e, BinOp):
            left = self.atom(e.left, out, line)
            right = self.atom(e.right, out, line)
            return BinOp(e.op, left, right, line=line, col=e.col)
        if isinstance(e, FuncExpr):
            return FuncExpr(e.name, e.params, self.stmts(e.body), line=line, col=e.col)
        if isinstance(e, AllocExpr):
            return e
        if isinstance(e, (Call, MethodCall, ObjectLit, ArrayLit)):
            return self.atom(e, out, line)
        raise AssertionError(f"unhandled expression {e!r}")

    def atom(self, e: Expr, out: list[Stmt], line: int) -> Expr:
        """Reduce an arbitrary expression to a Var or constant atom."""
        line = e.line or line
        if is_atom(e):
            return e
        t = self.temp()
        tv = Var(t, line=line, col=e.col)
        if isinstance(e, (Member, Index, BinOp)):
            out.append(VarDecl(t, self.rhs(e, out, line), line=line, col=e.col))
            return tv
        if isinstance(e, FuncExpr):
            out.append(VarDecl(t, FuncExpr(e.name, e.params, self.stmts(e.body),
                                           line=line, col=e.col), line=line, col=e.col))
            return tv
        if isinstance(e, AllocExpr):
            out.append(VarDecl(t, e, line=line, col=e.col))
            return tv
        if isinstance(e, ObjectLit):
            out.append(VarDecl(t, AllocExpr(line=line, col=e.col), line=line, col=e.col))
            for key, val in e.props:
                v = self.atom(val, out, line)
                out.append(Assign(Index(tv, Str(key, line=line, col=0), line=line, col=0),
                                  v, line=line, col=0))
            return tv
        if isinstance(e, ArrayLit):
            out.append(VarDecl(t, AllocExpr(line=line, col=e.col), line=line, col=e.col))
            for i, item in enumerate(e.items):
                v = self.atom(item, out, line)
                out.append(Assign(Index(tv, Str(num_to_key(float(i)), line=line, col=0),
                                        line=line, col=0), v, line=line, col=0))
            out.append(Assign(Index(tv, Str("length", line=line, col=0), line=line, col=0),
                              Num(float(len(e.items)), line=line, col=0), line=line, col=0))
            return tv
        if isinstance(e, (Call, MethodCall)):
            out.append(VarDecl(t, None, line=line, col=e.col))
            self.call_into(e, t, out, line)
            return tv
        raise AssertionError(f"unhandled expression {e!r}")

    def call_into(self, e: Union[Call, MethodCall], target: str,
                  out: list[Stmt], line: int) -> None:
        """Lower a call to the receiver/callee/arguments-array/call shape."""
        line = e.line or line

        def temp_assign(value: Expr) -> str:
            t = self.temp()
            out.append(VarDecl(t, value, line=line, col=0))
            return t

        if isinstance(e, MethodCall) and e.name == "call" and len(e.args) >= 1:
            # Explicit-receiver invocation sugar: f.call(this, a...) invokes f.
            f_atom = self.atom(e.obj, out, line)
            f = f_atom.name if isinstance(f_atom, Var) else temp_assign(f_atom)
            this_atom = self.atom(e.args[0], out, line)
            this = this_atom.name if isinstance(this_atom, Var) else temp_assign(this_atom)
            call_args = e.args[1:]
        elif isinstance(e, MethodCall):
            this_atom = self.atom(e.obj, out, line)
            this = this_atom.name if isinstance(this_atom, Var) else temp_assign(this_atom)
            f = temp_assign(Index(Var(this, line=line, col=0),
                                  Str(e.name, line=line, col=0), line=line, col=0))
            call_args = e.args
        else:
            f_atom = self.atom(e.callee, out, line)
            f = f_atom.name if isinstance(f_atom, Var) else temp_assign(f_atom)
            this = temp_assign(Undefined(line=line, col=0))
            call_args = e.args

        args_var = temp_assign(AllocExpr(args=True, line=line, col=0))
        for i, a in enumerate(call_args):
            v = self.atom(a, out, line)
            out.append(Assign(Index(Var(args_var, line=line, col=0),
                                    Str(num_to_key(float(i)), line=line, col=0),
                                    line=line, col=0), v, line=line, col=0))
        out.append(Assign(Index(Var(args_var, line=line, col=0),
                                Str("length", line=line, col=0), line=line, col=0),
                          Num(float(len(call_args)), line=line, col=0), line=line, col=0))
        out.append(CallStmt(target, f, this, args_var, line=line, col=0))


def _clone_stmt(s: Stmt) -> Stmt:
    if isinstance(s, VarDecl):
        return replace(s)
    if isinstance(s, Assign):
        return replace(s)
    if isinstance(s, CallStmt):
        return replace(s)
    return replace(s)


def desugar(p: Program) -> Program:
    """Flatten compound operands; total on parsed programs."""
    if p.desugared:
        return p
    d = _Desugarer()
    return Program(d.stmts(p.body), source_name=p.source_name, desugared=True)


# ── Scope resolution ──────────────────────────────────────────────────

@dataclass
class ScopeInfo:
    """Static name resolution for one function: params, hoisted locals, and
    per-name resolution ('local', ('outer', depth), or 'global')."""
    params: list[str]
    locals: set[str]
    resolution: dict[str, object] = field(default_factory=dict)


def collect_locals(body: list[Stmt]) -> set[str]:
    """Hoisted var/function-decl names, not descending into nested functions."""
    names: set[str] = set()

    def walk(stmts: list[Stmt]):
        for s in stmts:
            if isinstance(s, VarDecl):
                names.add(s.name)
            elif isinstance(s, FuncDecl):
                names.add(s.name)
            elif isinstance(s, If):
                walk(s.then)
                walk(s.els)
            elif isinstance(s, (While,)):
                walk(s.body)
            elif isinstance(s, For):
                if s.init is not None:
                    walk([s.init])
                walk(s.body)
    walk(body)
    return names


# ── Pretty printer ────────────────────────────────────────────────────

def _pp_expr(e: Expr) -> str:
    if isinstance(e, Num):
        return num_to_key(e.value) if e.value == int(e.value) else repr(e.value)
    if isinstance(e, Str):
        escaped = e.value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return f'"{escaped}"'
    if isinstance(e, Bool):
        return "true" if e.value else "false"
    if isinstance(e, Null):
        return "null"
    if isinstance(e, Undefined):
        return "undefined"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Index):
        return f"{_pp_expr(e.obj)}[{_pp_expr(e.key)}]"
    if isinstance(e, Member):
        return f"{_pp_expr(e.obj)}.{e.name}"
    if isinstance(e, BinOp):
        return f"{_pp_expr(e.left)} {e.op} {_pp_expr(e.right)}"
    if isinstance(e, AllocExpr):
        return "{}"
    if isinstance(e, FuncExpr):
        name = f" {e.name}" if e.name else ""
        return f"function{name}({', '.join(e.params)}) {{\n" + \
            _pp_stmts(e.body, "  ") + "}"
    raise AssertionError(f"cannot print {e!r}")


def _pp_stmts(stmts: list[Stmt], indent: str) -> str:
    return "".join(_pp_stmt(s, indent) for s in stmts)


def _pp_stmt(s: Stmt, indent: str) -> str:
    if isinstance(s, VarDecl):
        if s.init is None:
            return f"{indent}var {s.name};\n"
        return f"{indent}var {s.name} = {_pp_expr(s.init)};\n"
    if isinstance(s, Assign):
        return f"{indent}{_pp_expr(s.target)} = {_pp_expr(s.value)};\n"
    if isinstance(s, CallStmt):
        return f"{indent}{s.target} = %call({s.callee}, {s.this}, {s.args});\n"
    if isinstance(s, Return):
        return f"{indent}return {_pp_expr(s.value)};\n"
    if isinstance(s, If):
        head = f"{indent}if ({_pp_expr(s.cond)}) {{\n{_pp_stmts(s.then, indent + '  ')}{indent}}}"
        if s.els:
            head += f" else {{\n{_pp_stmts(s.els, indent + '  ')}{indent}}}"
        return head + "\n"
    if isinstance(s, While):
        return f"{indent}while ({_pp_expr(s.cond)}) {{\n{_pp_stmts(s.body, indent + '  ')}{indent}}}\n"
    if isinstance(s, FuncDecl):
        return f"{indent}function {s.name}({', '.join(s.params)}) {{\n" + \
            _pp_stmts(s.body, indent + "  ") + f"{indent}}}\n"
    raise AssertionError(f"cannot print {s!r} (not desugared?)")


def pretty(p: Program) -> str:
    """Print a desugared Program as parseable source (allow_temps=True)."""
    return _pp_stmts(p.body, "")


def parse_pretty(text: str, source_name: str = "<pretty>") -> Program:
    """Re-parse pretty-printed output, accepting temps and %call forms."""
    prog = parse(_rewrite_call_syntax(text), source_name, allow_temps=True)
    return Program(_restore_calls(prog.body), source_name=source_name, desugared=True)


def _rewrite_call_syntax(text: str) -> str:
    # `%call(f, this, args)` round-trips through a method-call spelling the
    # parser accepts; _restore_calls rebuilds CallStmt nodes.
    return text.replace("%call(", "%CALLMARK(")


def _restore_desugared_expr(e: Optional[Expr]) -> Optional[Expr]:
    # `{}` prints identically for AllocExpr and an empty object literal;
    # desugared programs only contain the former.
    if isinstance(e, ObjectLit) and not e.props:
        return AllocExpr(line=e.line, col=e.col)
    if isinstance(e, FuncExpr):
        return replace(e, body=_restore_calls(e.body))
    return e


def _restore_calls(stmts: list[Stmt]) -> list[Stmt]:
    out = []
    for s in stmts:
        if isinstance(s, Assign) and isinstance(s.value, Call) and \
                isinstance(s.value.callee, Var) and s.value.callee.name == "%CALLMARK":
            f, this, args = s.value.args
            out.append(CallStmt(s.target.name, f.name, this.name, args.name,
                                line=s.line, col=s.col))
            continue
        if isinstance(s, VarDecl) and isinstance(s.init, Call) and \
                isinstance(s.init.callee, Var) and s.init.callee.name == "%CALLMARK":
            f, this, args = s.init.args
            out.append(CallStmt(s.name, f.name, this.name, args.name,
                                line=s.line, col=s.col))
            continue
        if isinstance(s, If):
            s = replace(s, then=_restore_calls(s.then), els=_restore_calls(s.els))
        elif isinstance(s, While):
            s = replace(s, body=_restore_calls(s.body))
        elif isinstance(s, FuncDecl):
            s = replace(s, body=_restore_calls(s.body))
        elif isinstance(s, VarDecl):
            s = replace(s, init=_restore_desugared_expr(s.init))
        elif isinstance(s, Assign):
            s = replace(s, value=_restore_desugared_expr(s.value))
        out.append(s)
    return out


def structurally_equal(a: Program, b: Program) -> bool:
    return _strip(a.body) == _strip(b.body)


def _strip(x):
    """Statement structure with positions and metadata flags removed, for
    structural comparison."""
    if isinstance(x, list):
        return [_strip(i) for i in x]
    if isinstance(x, tuple):
        return tuple(_strip(i) for i in x)
    if isinstance(x, Node):
        fields = {k: _strip(v) for k, v in vars(x).items()
                  if k not in ("line", "col", "args")}
        return (type(x).__name__, tuple(fields.items()))
    return x
