from __future__ import annotations

import pytest

from imptrace import corelang as cl
from imptrace import cfg as C
from imptrace import oracle as O

from conftest import EACH_SRC, build


def test_parse_minimal_program():
    p = cl.parse("var x = 1;")
    assert len(p.body) == 1
    decl = p.body[0]
    assert isinstance(decl, cl.VarDecl)
    assert decl.name == "x"
    assert isinstance(decl.init, cl.Num) and decl.init.value == 1.0
    assert (decl.line, decl.col) == (1, 1)


def test_parse_each_analog():
    p = cl.parse(EACH_SRC, "each.js")
    # `each` is installed as a function-valued property write.
    each = [s for s in p.body
            if isinstance(s, cl.Assign) and isinstance(s.target, cl.Member)
            and s.target.name == "each"]
    assert len(each) == 1
    assert isinstance(each[0].value, cl.FuncExpr)
    # Two call statements at distinct lines.
    calls = [s for s in p.body
             if isinstance(s, cl.ExprStmt) and isinstance(s.expr, cl.MethodCall)]
    assert len(calls) == 2
    assert calls[0].line != calls[1].line
    assert {calls[0].line, calls[1].line} == {11, 14}


def test_parse_error_position():
    with pytest.raises(cl.SyntaxError_) as exc:
        cl.parse("var x = ;")
    assert exc.value.line == 1
    assert exc.value.col == 9


def test_parse_rejects_reserved_temporaries():
    with pytest.raises(cl.SyntaxError_):
        cl.parse("var %t1 = 2;")


def test_desugar_method_call_shape():
    # y = e.foo(x): receiver temp, callee-load temp, arguments array, call.
    p = cl.desugar(cl.parse("var e = {};\ne.foo = print;\nvar x = 1;\nvar y = e.foo(x);"))
    call = [s for s in p.body if isinstance(s, cl.CallStmt)][-1]
    by_name = {s.name: s for s in p.body if isinstance(s, cl.VarDecl) and s.init}
    # The callee temp loads the property from the receiver.
    callee_def = by_name[call.callee]
    assert isinstance(callee_def.init, cl.Index)
    assert callee_def.init.key.value == "foo"
    assert callee_def.init.obj.name == call.this
    # The arguments array is an allocation plus slot writes.
    args_def = by_name[call.args]
    assert isinstance(args_def.init, cl.AllocExpr) and args_def.init.args
    writes = [s for s in p.body if isinstance(s, cl.Assign)
              and isinstance(s.target, cl.Index)
              and s.target.obj.name == call.args]
    keys = {w.target.key.value for w in writes}
    assert keys == {"0", "length"}
    # The call result lands in y.
    assigns = [s for s in p.body if isinstance(s, cl.VarDecl) and s.name == "y"]
    assert assigns and assigns[0].init.name == call.target


def test_desugar_plain_copy_adds_no_temps():
    p = cl.desugar(cl.parse("var x = 1;\nvar y = x;"))
    assert all(not isinstance(s, cl.VarDecl) or not s.name.startswith("%")
               for s in p.body)
    assert isinstance(p.body[1].init, cl.Var)


def test_desugar_array_literal_matches_concrete_evaluation():
    # Oracle cross-check: evaluating the desugared form equals direct
    # literal evaluation ("a" at "0", "b" at "1", length 2).
    cfg = build('var a = ["a", "b"];')
    trace = O.run(cfg, seed=0)
    assert trace.fault is None
    interp = O.Interpreter(cfg, seed=0)
    t = interp.run()
    arr = [o for o in interp.objects.values() if "0" in o.props]
    assert len(arr) == 1
    obj = arr[0]
    assert obj.props["0"] == "a"
    assert obj.props["1"] == "b"
    assert obj.props["length"] == 2.0


def test_round_trip_desugared_program():
    for src in (EACH_SRC,
                "var a = 1 + 2 * 3;\nwhile (a < 10) { a = a + 1; }\n",
                "function f(x) { if (x < 1) { return 0; } return f(x - 1); }\nvar r = f(3);"):
        d = cl.desugar(cl.parse(src))
        again = cl.parse_pretty(cl.pretty(d))
        assert cl.structurally_equal(d, again)


def _operand_positions_flat(p: cl.Program) -> bool:
    def atom_ok(e):
        return cl.is_atom(e)

    def expr_ok(e):
        if cl.is_atom(e) or isinstance(e, cl.AllocExpr):
            return True
        if isinstance(e, cl.Index):
            return atom_ok(e.obj) and atom_ok(e.key)
        if isinstance(e, cl.BinOp):
            return atom_ok(e.left) and atom_ok(e.right)
        if isinstance(e, cl.FuncExpr):
            return stmts_ok(e.body)
        return False

    def stmts_ok(stmts):
        for s in stmts:
            if isinstance(s, cl.VarDecl):
                if s.init is not None and not expr_ok(s.init):
                    return False
            elif isinstance(s, cl.Assign):
                if isinstance(s.target, cl.Index):
                    if not (atom_ok(s.target.obj) and atom_ok(s.target.key)
                            and atom_ok(s.value)):
                        return False
                elif not expr_ok(s.value):
                    return False
            elif isinstance(s, cl.CallStmt):
                pass  # operands are variable names by construction
            elif isinstance(s, cl.Return):
                if not atom_ok(s.value):
                    return False
            elif isinstance(s, cl.If):
                if not (atom_ok(s.cond.left) and atom_ok(s.cond.right)
                        and stmts_ok(s.then) and stmts_ok(s.els)):
                    return False
            elif isinstance(s, cl.While):
                if not (atom_ok(s.cond.left) and atom_ok(s.cond.right)
                        and stmts_ok(s.body)):
                    return False
            elif isinstance(s, cl.FuncDecl):
                if not stmts_ok(s.body):
                    return False
            else:
                return False
        return True

    return stmts_ok(p.body)


def test_no_compound_operands_after_desugar():
    for src in (EACH_SRC,
                'var o = { a: { b: [1, 2] } };\nvar z = o.a.b[0] + o["a"]["b"][1];',
                'var r = print(print(1), 2 + 3 * 4, [{ "a": 1 }, 2]);'):
        assert _operand_positions_flat(cl.desugar(cl.parse(src)))


def test_positions_survive_desugaring():
    d = cl.desugar(cl.parse(EACH_SRC, "each.js"))
    lines = {s.line for s in _walk_stmts(d.body)}
    assert lines and all(1 <= l <= 16 for l in lines)
    cfg = C.build(d)
    for node in cfg.node_by_id:
        fn = cfg.functions[node.fn]
        if fn.is_builtin or node.instr.kind in ("entry", "exit"):
            continue
        assert node.line >= 1


def _walk_stmts(stmts):
    for s in stmts:
        yield s
        for attr in ("then", "els", "body"):
            sub = getattr(s, attr, None)
            if isinstance(sub, list):
                yield from _walk_stmts(sub)
        init = getattr(s, "init", None)
        if isinstance(init, cl.FuncExpr):
            yield from _walk_stmts(init.body)
