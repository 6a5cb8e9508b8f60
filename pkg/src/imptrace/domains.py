"""Abstract values, objects, heaps, scopes, contexts, and the precision
predicates.

Values combine per-type components (undefined/null presence, boolean set,
finite number and string constant sets capped at ``kset`` before widening to
top) with a set of abstract object locations.  Two counting notions coexist:

* ``concrete_count`` counts concretizations: a ``summary``-multiplicity
  location stands for two or more concrete objects and counts as many.
* ``imprecision_count`` is the predicate the checker and tracer use: a
  location set counts by its size, so a variable pointing at exactly one
  allocation site is treated as precise even when that site is a summary.
  Property-level imprecision then surfaces through the property chain
  itself, which is what the heap-clone diagnosis needs.

A property read of a maybe-absent slot joins ``undefined``; a single string
joined with that possible ``undefined`` counts as two concretes (imprecise).

All values are immutable; joins produce new values.  Heaps and objects are
treated as immutable: every mutation helper returns a fresh structure.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

from .corelang import num_to_key

DEFAULT_KSET = 8

# Reserved property names; never mixed into unknown-key reads or writes.
SCOPE_PROP = "*scope"
OUTER_PROP = "*outer"
RET_PROP = "*ret"


class _Top:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "TOP"


TOP = _Top()


@dataclass(frozen=True, order=True)
class AbsLoc:
    """An abstract object location: allocation site (global node id) plus an
    optional context digest present only when the site is heap-cloned."""
    site: int
    tag: tuple = ()

    def __str__(self):
        if self.tag:
            return f"l{self.site}@{_ctx_tag_str(self.tag)}"
        return f"l{self.site}"


def _ctx_tag_str(tag: tuple) -> str:
    calls, loops = tag
    parts = [",".join(str(c) for c in calls)]
    if loops:
        parts.append(";".join(f"{l}#{i}" for l, i in loops))
    return "[" + "|".join(p for p in parts if p) + "]"


@dataclass(frozen=True)
class AbsValue:
    undef: bool = False
    null: bool = False
    bools: frozenset = frozenset()
    nums: Union[frozenset, _Top] = frozenset()
    strs: Union[frozenset, _Top] = frozenset()
    locs: frozenset = frozenset()

    def is_bot(self) -> bool:
        return self == BOT

    def __str__(self):
        parts = []
        if self.undef:
            parts.append("undefined")
        if self.null:
            parts.append("null")
        parts.extend("true" if b else "false" for b in sorted(self.bools))
        if self.nums is TOP:
            parts.append("num⊤")
        else:
            parts.extend(num_to_key(n) for n in sorted(self.nums))
        if self.strs is TOP:
            parts.append("str⊤")
        else:
            parts.extend(f'"{s}"' for s in sorted(self.strs))
        parts.extend(str(l) for l in sorted(self.locs))
        return "{" + ", ".join(parts) + "}" if parts else "⊥"


BOT = AbsValue()
UNDEF = AbsValue(undef=True)
NULL = AbsValue(null=True)


def value_num(*vals: float) -> AbsValue:
    return AbsValue(nums=frozenset(float(v) for v in vals))


def value_str(*vals: str) -> AbsValue:
    return AbsValue(strs=frozenset(vals))


def value_bool(*vals: bool) -> AbsValue:
    return AbsValue(bools=frozenset(vals))


def value_locs(*locs: AbsLoc) -> AbsValue:
    return AbsValue(locs=frozenset(locs))


NUM_TOP = AbsValue(nums=TOP)
STR_TOP = AbsValue(strs=TOP)
BOOL_TOP = AbsValue(bools=frozenset((True, False)))


def _join_set(a, b, kset: int):
    if a is TOP or b is TOP:
        return TOP
    u = a | b
    return TOP if len(u) > kset else u


def join(a: AbsValue, b: AbsValue, kset: int = DEFAULT_KSET) -> AbsValue:
    """Componentwise least upper bound; set overflow widens to top."""
    return AbsValue(
        undef=a.undef or b.undef,
        null=a.null or b.null,
        bools=a.bools | b.bools,
        nums=_join_set(a.nums, b.nums, kset),
        strs=_join_set(a.strs, b.strs, kset),
        locs=a.locs | b.locs,
    )


def join_all(vals, kset: int = DEFAULT_KSET) -> AbsValue:
    out = BOT
    for v in vals:
        out = join(out, v, kset)
    return out


def _leq_set(a, b) -> bool:
    if b is TOP:
        return True
    if a is TOP:
        return False
    return a <= b


def leq(a: AbsValue, b: AbsValue) -> bool:
    return (a.undef <= b.undef and a.null <= b.null and a.bools <= b.bools
            and _leq_set(a.nums, b.nums) and _leq_set(a.strs, b.strs)
            and a.locs <= b.locs)


def _prim_count(v: AbsValue) -> Union[int, _Top]:
    if v.nums is TOP or v.strs is TOP:
        return TOP
    return (int(v.undef) + int(v.null) + len(v.bools) + len(v.nums) + len(v.strs))


def concrete_count(v: AbsValue, heap: Optional["AbsHeap"] = None) -> str:
    """'zero' | 'one' | 'many' over full concretizations: a summary location
    abstracts at least two concrete objects."""
    c = _prim_count(v)
    if c is TOP:
        return "many"
    for loc in v.locs:
        if heap is not None and heap.is_summary(loc):
            c += 2
        else:
            c += 1
        if c >= 2:
            return "many"
    return "zero" if c == 0 else ("one" if c == 1 else "many")


def imprecision_count(v: AbsValue) -> str:
    """Like concrete_count, but locations count by identity (set size)."""
    c = _prim_count(v)
    if c is TOP:
        return "many"
    c += len(v.locs)
    return "zero" if c == 0 else ("one" if c == 1 else "many")


def is_imprecise_value(v: AbsValue) -> bool:
    return imprecision_count(v) == "many"


# ── Objects and heap ──────────────────────────────────────────────────

@dataclass(frozen=True)
class PropSlot:
    value: AbsValue
    maybe_absent: bool = False

    def join(self, other: "PropSlot", kset: int) -> "PropSlot":
        return PropSlot(join(self.value, other.value, kset),
                        self.maybe_absent or other.maybe_absent)

    def read(self, kset: int = DEFAULT_KSET) -> AbsValue:
        """Slot value as observed by a load: absence reads as undefined."""
        return join(self.value, UNDEF, kset) if self.maybe_absent else self.value


@dataclass(frozen=True)
class AbsObject:
    props: tuple = ()                      # sorted tuple of (name, PropSlot)
    fids: frozenset = frozenset()          # nonempty iff callable
    default: Optional[PropSlot] = None     # unknown-key writes land here

    def prop_map(self) -> dict:
        return dict(self.props)

    def get(self, name: str) -> Optional[PropSlot]:
        for n, slot in self.props:
            if n == name:
                return slot
        return None

    def with_prop(self, name: str, slot: PropSlot) -> "AbsObject":
        m = self.prop_map()
        m[name] = slot
        return replace(self, props=tuple(sorted(m.items())))

    def join(self, other: "AbsObject", kset: int) -> "AbsObject":
        """Object join: a property present on one side only may be absent."""
        a, b = self.prop_map(), other.prop_map()
        out = {}
        for name in sorted(set(a) | set(b)):
            if name in a and name in b:
                out[name] = a[name].join(b[name], kset)
            else:
                slot = a.get(name) or b[name]
                out[name] = PropSlot(slot.value, True)
        default = self.default
        if other.default is not None:
            default = other.default if default is None \
                else default.join(other.default, kset)
        return AbsObject(props=tuple(out.items()), fids=self.fids | other.fids,
                         default=default)

    def leq(self, other: "AbsObject") -> bool:
        """Consistent with join: a ⊑ b iff a.join(b, ·) == b."""
        b = other.prop_map()
        for name, slot in self.props:
            if name not in b:
                return False
            o = b[name]
            if not leq(slot.value, o.value) or slot.maybe_absent > o.maybe_absent:
                return False
        mine = {n for n, _ in self.props}
        for name, slot in other.props:
            if name not in mine and not slot.maybe_absent:
                return False  # definite presence there, absent here
        if self.default is not None:
            if other.default is None:
                return False
            if not leq(self.default.value, other.default.value) or \
                    self.default.maybe_absent > other.default.maybe_absent:
                return False
        return self.fids <= other.fids


EMPTY_OBJECT = AbsObject()


@dataclass(frozen=True)
class AbsHeap:
    store: tuple = ()        # sorted tuple of (AbsLoc, AbsObject)
    summaries: frozenset = frozenset()

    def store_map(self) -> dict:
        return dict(self.store)

    def get(self, loc: AbsLoc) -> Optional[AbsObject]:
        for l, obj in self.store:
            if l == loc:
                return obj
        return None

    def has(self, loc: AbsLoc) -> bool:
        return self.get(loc) is not None

    def is_summary(self, loc: AbsLoc) -> bool:
        return loc in self.summaries

    def with_obj(self, loc: AbsLoc, obj: AbsObject) -> "AbsHeap":
        m = self.store_map()
        m[loc] = obj
        return replace(self, store=tuple(sorted(m.items(), key=lambda kv: kv[0])))

    def alloc(self, loc: AbsLoc, obj: AbsObject = EMPTY_OBJECT, kset: int = DEFAULT_KSET) -> "AbsHeap":
        """Allocate at loc.  Re-allocation at a live location flips it to a
        summary and joins the fresh object in (existing props become
        maybe-absent: the new concrete object lacks them)."""
        existing = self.get(loc)
        if existing is None:
            return self.with_obj(loc, obj)
        merged = existing.join(obj, kset)
        h = self.with_obj(loc, merged)
        return replace(h, summaries=h.summaries | {loc})

    def join(self, other: "AbsHeap", kset: int = DEFAULT_KSET) -> "AbsHeap":
        a, b = self.store_map(), other.store_map()
        out = {}
        for loc in set(a) | set(b):
            if loc in a and loc in b:
                out[loc] = a[loc].join(b[loc], kset) if a[loc] != b[loc] else a[loc]
            else:
                out[loc] = a.get(loc) or b[loc]
        return AbsHeap(store=tuple(sorted(out.items(), key=lambda kv: kv[0])),
                       summaries=self.summaries | other.summaries)

    def leq(self, other: "AbsHeap") -> bool:
        b = other.store_map()
        for loc, obj in self.store:
            if loc not in b or not obj.leq(b[loc]):
                return False
        return self.summaries <= other.summaries


EMPTY_HEAP = AbsHeap()


def concrete_keys(key: AbsValue):
    """Concretizable property-name strings of a key value, or TOP."""
    if key.nums is TOP or key.strs is TOP:
        return TOP
    keys = set(key.strs)
    keys.update(num_to_key(n) for n in key.nums)
    keys.update("true" if b else "false" for b in key.bools)
    if key.null:
        keys.add("null")
    if key.undef:
        keys.add("undefined")
    return sorted(keys)


def load_prop(heap: AbsHeap, base: AbsValue, key: AbsValue,
              kset: int = DEFAULT_KSET) -> AbsValue:
    """Join of slot reads over every (location, concretizable key) pair;
    a top key reads every named property plus the unknown-key slot."""
    if not base.locs:
        return UNDEF
    keys = concrete_keys(key)
    out = BOT
    for loc in sorted(base.locs):
        obj = heap.get(loc)
        if obj is None:
            out = join(out, UNDEF, kset)
            continue
        if keys is TOP:
            out = join(out, UNDEF, kset)  # some key misses every prop
            for name, slot in obj.props:
                if not name.startswith("*") and name != "this":
                    out = join(out, slot.read(kset), kset)
            if obj.default is not None:
                out = join(out, obj.default.read(kset), kset)
            continue
        for s in keys:
            slot = obj.get(s)
            if slot is None:
                slot = obj.default
            if slot is None:
                out = join(out, UNDEF, kset)
            else:
                out = join(out, slot.read(kset), kset)
    return out


def store_prop(heap: AbsHeap, base: AbsValue, key: AbsValue, v: AbsValue,
               kset: int = DEFAULT_KSET) -> AbsHeap:
    """Strong update only for a singleton single-multiplicity location with
    one concrete key; weak (joining) update otherwise."""
    keys = concrete_keys(key)
    h = heap
    strong = (len(base.locs) == 1 and keys is not TOP and len(keys) == 1
              and not heap.is_summary(next(iter(base.locs))))
    for loc in sorted(base.locs):
        obj = h.get(loc)
        if obj is None:
            obj = EMPTY_OBJECT
        if keys is TOP:
            new_props = []
            for name, slot in obj.props:
                if name.startswith("*") or name == "this":
                    new_props.append((name, slot))
                else:
                    new_props.append((name, PropSlot(join(slot.value, v, kset),
                                                     slot.maybe_absent)))
            default = obj.default.join(PropSlot(v, True), kset) \
                if obj.default is not None else PropSlot(v, True)
            obj = replace(obj, props=tuple(new_props), default=default)
        else:
            for s in keys:
                old = obj.get(s)
                if strong:
                    obj = obj.with_prop(s, PropSlot(v, False))
                elif old is not None:
                    obj = obj.with_prop(s, PropSlot(join(old.value, v, kset),
                                                    old.maybe_absent))
                else:
                    obj = obj.with_prop(s, PropSlot(v, True))
        h = h.with_obj(loc, obj)
    return h


# ── Contexts ──────────────────────────────────────────────────────────

@dataclass(frozen=True, order=True)
class Context:
    """Call-string plus loop-iteration context.  The call string holds the
    most recent call-site node ids (bounded per callee by its k); the loop
    string is a stack of (loop id, iteration) pairs with iteration counts
    saturating at the loop's max."""
    call_string: tuple = ()
    loop_string: tuple = ()

    def push_call(self, site: int, k: int) -> "Context":
        if k <= 0:
            return Context((), ())
        cs = (self.call_string + (site,))[-k:]
        return Context(cs, ())

    def key(self) -> tuple:
        return (self.call_string, self.loop_string)

    def __str__(self):
        return _ctx_tag_str(self.key())


CTX0 = Context()


# ── Per-node analysis state ───────────────────────────────────────────

@dataclass(frozen=True)
class AbsState:
    """Heap plus the current scope-object location.  Variable lookup walks
    the scope chain through *outer links; the global scope object sits at a
    fixed location derived from the global entry node."""
    heap: AbsHeap
    scope_loc: AbsLoc

    def join(self, other: "AbsState", kset: int = DEFAULT_KSET) -> "AbsState":
        assert self.scope_loc == other.scope_loc, \
            "states joined at a node must share its scope location"
        return AbsState(self.heap.join(other.heap, kset), self.scope_loc)

    def leq(self, other: "AbsState") -> bool:
        return self.scope_loc == other.scope_loc and self.heap.leq(other.heap)
