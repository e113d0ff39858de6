"""Assertion language: symbolic heaps with resource annotations, and goals.

An assertion is a disjunction of clauses ``exists xs. Pi ; Sigma ; Theta``:
pure equalities/disequalities, spatial atoms (points-to, resource-carrying
list segments and trees), and a resource expression.  Goals extend clauses
with the connectives the weakest-precondition generator needs (``*``,
``-*``, conjunction, pure implication, quantifiers).

Also here: capture-avoiding substitution, a union-find decision procedure
for the pure fragment, the text parser, and a bounded model checker used as
an independent oracle by the test suite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

from .resources import ResourceExpr, parse_rational

# ---------------------------------------------------------------------------
# terms


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class IntLit:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class NullTerm:
    def __str__(self) -> str:
        return "null"


NULL = NullTerm()
RET = Var("ret")

Term = object  # Var | IntLit | NullTerm (plus prover-internal unification vars)


def is_literal(t: Term) -> bool:
    return isinstance(t, (IntLit, NullTerm))


# ---------------------------------------------------------------------------
# atoms, clauses, goals


@dataclass(frozen=True)
class PureAtom:
    lhs: Term
    op: str  # "=" or "!="
    rhs: Term

    def __str__(self) -> str:
        return f"{self.lhs} {self.op} {self.rhs}"

    def negated(self) -> "PureAtom":
        return PureAtom(self.lhs, "!=" if self.op == "=" else "=", self.rhs)


@dataclass(frozen=True)
class PointsTo:
    obj: Term
    field: str
    value: Term

    def __str__(self) -> str:
        return f"pt({self.obj}, {self.field}, {self.value})"


@dataclass(frozen=True)
class ListSeg:
    ann: ResourceExpr
    start: Term
    end: Term

    def __str__(self) -> str:
        return f"lseg({self.ann}, {self.start}, {self.end})"


@dataclass(frozen=True)
class TreeSeg:
    ann: ResourceExpr
    root: Term

    def __str__(self) -> str:
        return f"tree({self.ann}, {self.root})"


HeapAtom = object  # PointsTo | ListSeg | TreeSeg

# field names the inductive predicates are defined over
LSEG_NEXT = "next"
LSEG_DATA = "data"
TREE_LEFT = "left"
TREE_RIGHT = "right"


@dataclass(frozen=True)
class Clause:
    exists: tuple[str, ...] = ()
    pure: tuple[PureAtom, ...] = ()
    heap: tuple[HeapAtom, ...] = ()
    resource: ResourceExpr = ResourceExpr()

    def is_emp(self) -> bool:
        return not (self.exists or self.pure or self.heap) and self.resource.is_zero()

    def __str__(self) -> str:
        if self.is_emp():
            return "emp"
        head = f"exists {', '.join(self.exists)}. " if self.exists else ""
        pure = ", ".join(str(a) for a in self.pure)
        heap = ", ".join(str(a) for a in self.heap)
        return f"{head}{pure} ; {heap} ; {self.resource}"


Assertion = tuple  # tuple[Clause, ...], nonempty


def assertion_str(a: Sequence[Clause]) -> str:
    return r" \/ ".join(str(c) for c in a)


EMP = (Clause(),)


class Goal:
    pass


@dataclass(frozen=True)
class Leaf(Goal):
    parts: Assertion

    def __str__(self):
        return f"[{assertion_str(self.parts)}]"


@dataclass(frozen=True)
class Star(Goal):
    parts: Assertion
    rest: Goal

    def __str__(self):
        return f"({assertion_str(self.parts)}) * {self.rest}"


@dataclass(frozen=True)
class Wand(Goal):
    parts: Assertion
    rest: Goal

    def __str__(self):
        return f"(({assertion_str(self.parts)}) -* {self.rest})"


@dataclass(frozen=True)
class And(Goal):
    left: Goal
    right: Goal

    def __str__(self):
        return f"({self.left} /\\ {self.right})"


@dataclass(frozen=True)
class Implies(Goal):
    cond: PureAtom
    rest: Goal

    def __str__(self):
        return f"({self.cond} -> {self.rest})"


@dataclass(frozen=True)
class Forall(Goal):
    var: str
    rest: Goal

    def __str__(self):
        return f"(forall {self.var}. {self.rest})"


@dataclass(frozen=True)
class Exists(Goal):
    var: str
    rest: Goal

    def __str__(self):
        return f"(exists {self.var}. {self.rest})"


# ---------------------------------------------------------------------------
# free variables and substitution


def term_vars(t: Term) -> set[str]:
    return {t.name} if isinstance(t, Var) else set()


def atom_vars(a) -> set[str]:
    if isinstance(a, PureAtom):
        return term_vars(a.lhs) | term_vars(a.rhs)
    if isinstance(a, PointsTo):
        return term_vars(a.obj) | term_vars(a.value)
    if isinstance(a, ListSeg):
        return term_vars(a.start) | term_vars(a.end)
    if isinstance(a, TreeSeg):
        return term_vars(a.root)
    raise TypeError(a)


def clause_free_vars(c: Clause) -> set[str]:
    out: set[str] = set()
    for a in c.pure:
        out |= atom_vars(a)
    for a in c.heap:
        out |= atom_vars(a)
    return out - set(c.exists)


def assertion_free_vars(a: Sequence[Clause]) -> set[str]:
    out: set[str] = set()
    for c in a:
        out |= clause_free_vars(c)
    return out


def goal_free_vars(g: Goal) -> set[str]:
    if isinstance(g, Leaf):
        return assertion_free_vars(g.parts)
    if isinstance(g, (Star, Wand)):
        return assertion_free_vars(g.parts) | goal_free_vars(g.rest)
    if isinstance(g, And):
        return goal_free_vars(g.left) | goal_free_vars(g.right)
    if isinstance(g, Implies):
        return atom_vars(g.cond) | goal_free_vars(g.rest)
    if isinstance(g, (Forall, Exists)):
        return goal_free_vars(g.rest) - {g.var}
    raise TypeError(g)


def subst_term(t: Term, sub: Mapping[str, Term]) -> Term:
    if isinstance(t, Var) and t.name in sub:
        return sub[t.name]
    return t


def subst_atom(a, sub: Mapping[str, Term]):
    if isinstance(a, PureAtom):
        return PureAtom(subst_term(a.lhs, sub), a.op, subst_term(a.rhs, sub))
    if isinstance(a, PointsTo):
        return PointsTo(subst_term(a.obj, sub), a.field, subst_term(a.value, sub))
    if isinstance(a, ListSeg):
        return ListSeg(a.ann, subst_term(a.start, sub), subst_term(a.end, sub))
    if isinstance(a, TreeSeg):
        return TreeSeg(a.ann, subst_term(a.root, sub))
    raise TypeError(a)


def _fresh_name(base: str, avoid: set[str]) -> str:
    if base not in avoid:
        return base
    i = 1
    while f"{base}~{i}" in avoid:
        i += 1
    return f"{base}~{i}"


def subst_clause(c: Clause, sub: Mapping[str, Term]) -> Clause:
    """Substitute free occurrences, renaming existentials to avoid capture."""
    live = {k: v for k, v in sub.items() if k not in c.exists}
    if not live:
        return c
    incoming = set().union(*(term_vars(v) for v in live.values())) if live else set()
    exists = list(c.exists)
    if incoming & set(exists):
        avoid = incoming | clause_free_vars(c) | set(exists) | set(live)
        rename: dict[str, Term] = {}
        for i, x in enumerate(exists):
            if x in incoming:
                fresh = _fresh_name(x, avoid)
                avoid.add(fresh)
                rename[x] = Var(fresh)
                exists[i] = fresh
        c = Clause(
            tuple(exists),
            tuple(subst_atom(a, rename) for a in c.pure),
            tuple(subst_atom(a, rename) for a in c.heap),
            c.resource,
        )
    return Clause(
        c.exists,
        tuple(subst_atom(a, live) for a in c.pure),
        tuple(subst_atom(a, live) for a in c.heap),
        c.resource,
    )


def subst_assertion(a: Sequence[Clause], sub: Mapping[str, Term]) -> Assertion:
    return tuple(subst_clause(c, sub) for c in a)


def subst_goal(g: Goal, sub: Mapping[str, Term]) -> Goal:
    if not sub:
        return g
    if isinstance(g, Leaf):
        return Leaf(subst_assertion(g.parts, sub))
    if isinstance(g, Star):
        return Star(subst_assertion(g.parts, sub), subst_goal(g.rest, sub))
    if isinstance(g, Wand):
        return Wand(subst_assertion(g.parts, sub), subst_goal(g.rest, sub))
    if isinstance(g, And):
        return And(subst_goal(g.left, sub), subst_goal(g.right, sub))
    if isinstance(g, Implies):
        return Implies(subst_atom(g.cond, sub), subst_goal(g.rest, sub))
    if isinstance(g, (Forall, Exists)):
        live = {k: v for k, v in sub.items() if k != g.var}
        if not live:
            return g
        incoming = set().union(*(term_vars(v) for v in live.values()))
        var = g.var
        rest = g.rest
        if var in incoming:
            fresh = _fresh_name(var, incoming | goal_free_vars(rest) | set(live))
            rest = subst_goal(rest, {var: Var(fresh)})
            var = fresh
        rest = subst_goal(rest, live)
        return Forall(var, rest) if isinstance(g, Forall) else Exists(var, rest)
    raise TypeError(g)


# ---------------------------------------------------------------------------
# pure reasoning: union-find with disequalities and distinct literals


class PureContext:
    """Congruence over equality atoms; decides = and != queries.

    Complete for this fragment: no function symbols, so a query t1 = t2
    holds iff forced by the equalities, and t1 != t2 holds iff asserted on
    representatives or the classes contain distinct literals (two unequal
    integers, or an integer vs null).
    """

    def __init__(self, atoms: Iterable[PureAtom] = ()):
        self._parent: dict = {}
        self._diseq: list[tuple] = []
        self._contradiction = False
        for a in atoms:
            self.add(a)

    def _find(self, t):
        self._parent.setdefault(t, t)
        root = t
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[t] != root:
            self._parent[t], t = root, self._parent[t]
        return root

    def _union(self, a, b):
        ra, rb = self._find(a), self._find(b)
        if ra == rb:
            return
        # keep literals as representatives so class literals are easy to read
        if is_literal(ra):
            ra, rb = rb, ra
        if is_literal(ra) and is_literal(rb) and ra != rb:
            self._contradiction = True
        self._parent[ra] = rb

    def add(self, atom: PureAtom) -> None:
        if atom.op == "=":
            self._union(atom.lhs, atom.rhs)
        else:
            self._diseq.append((atom.lhs, atom.rhs))

    def contradictory(self) -> bool:
        if self._contradiction:
            return True
        for a, b in self._diseq:
            if self._find(a) == self._find(b):
                return True
        return False

    def equal(self, t1, t2) -> bool:
        return self._find(t1) == self._find(t2)

    def unequal(self, t1, t2) -> bool:
        r1, r2 = self._find(t1), self._find(t2)
        if r1 == r2:
            return False
        if is_literal(r1) and is_literal(r2):
            return True
        for a, b in self._diseq:
            ra, rb = self._find(a), self._find(b)
            if {ra, rb} == {r1, r2}:
                return True
        return False

    def entails(self, atom: PureAtom) -> bool:
        if self.contradictory():
            return True
        if atom.op == "=":
            return self.equal(atom.lhs, atom.rhs)
        return self.unequal(atom.lhs, atom.rhs)

    def terms(self) -> list:
        return list(self._parent)


def pure_entails(atoms: Sequence[PureAtom], query: PureAtom) -> bool:
    return PureContext(atoms).entails(query)


def pure_contradiction(atoms: Sequence[PureAtom]) -> bool:
    return PureContext(atoms).contradictory()


# ---------------------------------------------------------------------------
# parser


class AssertionParseError(ValueError):
    def __init__(self, msg: str, pos: int = 0):
        super().__init__(msg)
        self.pos = pos


_SYMBOLS = ("\\/", "!=", "=", ";", ",", ".", "(", ")", "+", "*", "/", "$")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "#":
            break
        for sym in _SYMBOLS:
            if text.startswith(sym, i):
                toks.append(("sym", sym, i))
                i += len(sym)
                break
        else:
            if ch.isdigit() or (ch == "-" and i + 1 < n and text[i + 1].isdigit()):
                j = i + 1
                while j < n and text[j].isdigit():
                    j += 1
                toks.append(("int", text[i:j], i))
                i = j
            elif ch.isalpha() or ch == "_":
                j = i + 1
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                toks.append(("name", text[i:j], i))
                i = j
            else:
                raise AssertionParseError(f"unexpected character {ch!r}", i)
    return toks


class _TokStream:
    def __init__(self, toks, text):
        self.toks = toks
        self.text = text
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("eof", "", len(self.text))

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def accept(self, kind, value=None):
        k, v, _ = self.peek()
        if k == kind and (value is None or v == value):
            self.i += 1
            return v
        return None

    def expect(self, kind, value=None):
        k, v, pos = self.peek()
        if k != kind or (value is not None and v != value):
            want = value or kind
            raise AssertionParseError(f"expected {want!r}, found {v or 'end of input'!r}", pos)
        self.i += 1
        return v


def _parse_term(ts: _TokStream) -> Term:
    k, v, pos = ts.peek()
    if k == "int":
        ts.next()
        return IntLit(int(v))
    if k == "name":
        ts.next()
        return NULL if v == "null" else Var(v)
    raise AssertionParseError(f"expected a term, found {v!r}", pos)


def _parse_resexpr(ts: _TokStream) -> ResourceExpr:
    const = Fraction(0)
    terms: dict[str, Fraction] = {}

    def one():
        nonlocal const
        k, v, pos = ts.peek()
        if k == "sym" and v == "$":
            ts.next()
            name = ts.expect("name")
            terms[name] = terms.get(name, Fraction(0)) + 1
            return
        if k == "int":
            if v.startswith("-"):
                raise AssertionParseError("resource expressions must be nonnegative", pos)
            ts.next()
            num = Fraction(int(v))
            if ts.accept("sym", "/"):
                den = int(ts.expect("int"))
                if den <= 0:
                    raise AssertionParseError("denominator must be positive", pos)
                num = Fraction(int(v), den)
            if ts.accept("sym", "*"):
                ts.expect("sym", "$")
                name = ts.expect("name")
                terms[name] = terms.get(name, Fraction(0)) + num
            else:
                const += num
            return
        raise AssertionParseError(f"expected a resource expression, found {v!r}", pos)

    one()
    while ts.accept("sym", "+"):
        one()
    return ResourceExpr.make(const, terms)


def _parse_heap_atom(ts: _TokStream):
    k, v, pos = ts.peek()
    if k != "name":
        raise AssertionParseError(f"expected a heap atom, found {v!r}", pos)
    if v == "emp":
        ts.next()
        return None
    if v == "pt":
        ts.next()
        ts.expect("sym", "(")
        obj = _parse_term(ts)
        ts.expect("sym", ",")
        field = ts.expect("name")
        ts.expect("sym", ",")
        val = _parse_term(ts)
        ts.expect("sym", ")")
        return PointsTo(obj, field, val)
    if v == "lseg":
        ts.next()
        ts.expect("sym", "(")
        ann = _parse_resexpr(ts)
        ts.expect("sym", ",")
        start = _parse_term(ts)
        ts.expect("sym", ",")
        end = _parse_term(ts)
        ts.expect("sym", ")")
        return ListSeg(ann, start, end)
    if v == "tree":
        ts.next()
        ts.expect("sym", "(")
        ann = _parse_resexpr(ts)
        ts.expect("sym", ",")
        root = _parse_term(ts)
        ts.expect("sym", ")")
        return TreeSeg(ann, root)
    raise AssertionParseError(f"unknown heap atom {v!r}", pos)


def _parse_clause(ts: _TokStream) -> Clause:
    # bare `emp` may stand for the empty clause
    k, v, _ = ts.peek()
    if k == "name" and v == "emp":
        nk, nv, _ = ts.toks[ts.i + 1] if ts.i + 1 < len(ts.toks) else ("eof", "", 0)
        if (nk, nv) in (("eof", ""), ("sym", "\\/")):
            ts.next()
            return Clause()
    exists: list[str] = []
    if k == "name" and v == "exists":
        ts.next()
        exists.append(ts.expect("name"))
        while ts.accept("sym", ","):
            exists.append(ts.expect("name"))
        # also allow space-separated binders up to the dot
        while ts.peek()[0] == "name":
            exists.append(ts.next()[1])
        ts.expect("sym", ".")
    pure: list[PureAtom] = []
    if not (ts.peek()[0] == "sym" and ts.peek()[1] == ";"):
        while True:
            lhs = _parse_term(ts)
            op = "=" if ts.accept("sym", "=") else ("!=" if ts.accept("sym", "!=") else None)
            if op is None:
                raise AssertionParseError("expected '=' or '!=' in pure atom", ts.peek()[2])
            rhs = _parse_term(ts)
            pure.append(PureAtom(lhs, op, rhs))
            if not ts.accept("sym", ","):
                break
    ts.expect("sym", ";")
    heap: list = []
    if not (ts.peek()[0] == "sym" and ts.peek()[1] == ";"):
        while True:
            atom = _parse_heap_atom(ts)
            if atom is not None:
                heap.append(atom)
            if not ts.accept("sym", ","):
                break
    ts.expect("sym", ";")
    res = _parse_resexpr(ts)
    clause = Clause(tuple(exists), tuple(pure), tuple(heap), res)
    bound = set(exists)
    for atom in clause.heap:
        if isinstance(atom, (ListSeg, TreeSeg)):
            if bound & set(atom.ann.variables):
                raise AssertionParseError("resource variable under quantifier")
    if bound & set(res.variables):
        raise AssertionParseError("resource variable under quantifier")
    return clause


def parse_assertion(text: str) -> Assertion:
    ts = _TokStream(_tokenize(text), text)
    clauses = [_parse_clause(ts)]
    while ts.accept("sym", "\\/"):
        clauses.append(_parse_clause(ts))
    k, v, pos = ts.peek()
    if k != "eof":
        raise AssertionParseError(f"trailing input {v!r}", pos)
    return tuple(clauses)


# ---------------------------------------------------------------------------
# bounded model checking (test oracle)
#
# Concrete values mirror the VM: Python int, vm.Addr, or None for null.


def _denote(term: Term, env: Mapping[str, object]):
    if isinstance(term, Var):
        if term.name not in env:
            raise KeyError(f"unbound variable {term.name} in model")
        return env[term.name]
    if isinstance(term, IntLit):
        return term.value
    if isinstance(term, NullTerm):
        return None
    raise TypeError(term)


def _atom_layouts(atom, env, heap, valuation) -> Iterator[tuple[frozenset, Fraction]]:
    """Yield (cells, resource need) ways the atom can hold in `heap`."""
    if isinstance(atom, PointsTo):
        a = _denote(atom.obj, env)
        v = _denote(atom.value, env)
        cell = (a, atom.field)
        if a is not None and not isinstance(a, int) and cell in heap and heap[cell] == v:
            yield frozenset([cell]), Fraction(0)
        return
    if isinstance(atom, ListSeg):
        per = atom.ann.eval(valuation)
        if per < 0:
            return
        start = _denote(atom.start, env)
        end = _denote(atom.end, env)

        def walk(cur, used):
            if cur == end:
                yield used, Fraction(0)
            if cur is None or isinstance(cur, int):
                return
            nc, dc = (cur, LSEG_NEXT), (cur, LSEG_DATA)
            if nc in heap and dc in heap and nc not in used:
                nxt = heap[nc]
                for cells, need in walk(nxt, used | {nc, dc}):
                    yield cells, need + per

        yield from walk(start, frozenset())
        return
    if isinstance(atom, TreeSeg):
        per = atom.ann.eval(valuation)
        if per < 0:
            return
        root = _denote(atom.root, env)

        def grow(node, used):
            if node is None:
                yield used, Fraction(0)
                return
            if isinstance(node, int):
                return
            lc, rc = (node, TREE_LEFT), (node, TREE_RIGHT)
            if lc in heap and rc in heap and lc not in used:
                for cells_l, need_l in grow(heap[lc], used | {lc, rc}):
                    for cells_r, need_r in grow(heap[rc], cells_l):
                        yield cells_r, need_l + need_r + per

        yield from grow(root, frozenset())
        return
    raise TypeError(atom)


def _clause_layouts(clause: Clause, env, heap, valuation) -> Iterator[tuple[frozenset, Fraction]]:
    """Yield (cells, need) for the spatial part of a clause, existentials solved."""
    universe = _model_universe(heap, clause)

    def assign(binders, e):
        if not binders:
            pure_ok = True
            for a in clause.pure:
                lv, rv = _denote(a.lhs, e), _denote(a.rhs, e)
                holds = lv == rv if a.op == "=" else lv != rv
                if not holds:
                    pure_ok = False
                    break
            if not pure_ok:
                return

            def match(atoms, used, need):
                if not atoms:
                    yield used, need
                    return
                for cells, n in _atom_layouts(atoms[0], e, heap, valuation):
                    if cells & used:
                        continue
                    yield from match(atoms[1:], used | cells, need + n)

            yield from match(list(clause.heap), frozenset(), Fraction(0))
            return
        for v in universe:
            yield from assign(binders[1:], {**e, binders[0]: v})

    yield from assign(list(clause.exists), dict(env))


def _model_universe(heap, clause: Clause | None = None) -> list:
    addrs = sorted({a for (a, _) in heap}, key=lambda x: getattr(x, "index", 0))
    ints = sorted({v for v in heap.values() if isinstance(v, int)})
    extra: list = []
    if clause is not None:
        for a in clause.pure:
            for t in (a.lhs, a.rhs):
                if isinstance(t, IntLit) and t.value not in ints:
                    extra.append(t.value)
    return [None] + addrs + ints + extra


def model_check(
    assertion: Sequence[Clause],
    env: Mapping[str, object],
    heap: Mapping,
    resource: Fraction,
    valuation: Mapping[str, Fraction] | None = None,
) -> bool:
    """Does (env, heap, resource) satisfy the assertion?  Exact heap coverage.

    Intended for small models (a handful of cells); existentials range over
    the addresses and integers present in the model.
    """
    valuation = valuation or {}
    heap = dict(heap)
    all_cells = frozenset(heap)
    for clause in assertion:
        base = clause.resource.eval(valuation)
        if base < 0:
            continue
        for cells, need in _clause_layouts(clause, env, heap, valuation):
            if cells == all_cells and need + base <= resource:
                return True
    return False


# goal-level checking, used by the VC soundness oracle ----------------------


class _FreshAddrs:
    def __init__(self, pool):
        self.pool = list(pool)

    def take(self, n):
        return self.pool[:n]


def _clause_extensions(clause, env, heap, valuation, pool, max_seg=2):
    """Enumerate concrete disjoint extensions (cells dict, need) satisfying a clause.

    Used for the -* connective: builds small fresh models of the clause.
    Segment/tree sizes are bounded by max_seg; data fields take value 0.
    """
    universe = _model_universe(heap) + pool

    def assign(binders, e):
        if binders:
            for v in universe:
                yield from assign(binders[1:], {**e, binders[0]: v})
            return
        ok = True
        for a in clause.pure:
            try:
                lv, rv = _denote(a.lhs, e), _denote(a.rhs, e)
            except KeyError:
                ok = False
                break
            if (lv == rv) != (a.op == "="):
                ok = False
                break
        if not ok:
            return

        def build(atoms, cells, need, fresh_i):
            if not atoms:
                yield dict(cells), need
                return
            atom, rest = atoms[0], atoms[1:]
            if isinstance(atom, PointsTo):
                try:
                    a, v = _denote(atom.obj, e), _denote(atom.value, e)
                except KeyError:
                    return
                if a is None or isinstance(a, int):
                    return
                cell = (a, atom.field)
                if cell in heap or cell in cells:
                    return
                yield from build(rest, {**cells, cell: v}, need, fresh_i)
            elif isinstance(atom, ListSeg):
                per = atom.ann.eval(valuation)
                try:
                    start, end = _denote(atom.start, e), _denote(atom.end, e)
                except KeyError:
                    return
                if start == end:
                    yield from build(rest, cells, need, fresh_i)
                # chains of fresh nodes from start
                for length in range(1, max_seg + 1):
                    nodes = pool[fresh_i : fresh_i + length]
                    if len(nodes) < length or start is None or isinstance(start, int):
                        break
                    chain = [start] + nodes[1:] if length > 1 else [start]
                    if start in pool[:fresh_i] or start in nodes[1:]:
                        break
                    new = {}
                    okc = True
                    for i, nd in enumerate(chain):
                        nxt = chain[i + 1] if i + 1 < len(chain) else end
                        for cell, val in (((nd, LSEG_NEXT), nxt), ((nd, LSEG_DATA), 0)):
                            if cell in heap or cell in cells or cell in new:
                                okc = False
                            new[cell] = val
                    if okc:
                        yield from build(rest, {**cells, **new}, need + per * length, fresh_i + length)
            elif isinstance(atom, TreeSeg):
                per = atom.ann.eval(valuation)
                try:
                    root = _denote(atom.root, e)
                except KeyError:
                    return
                if root is None:
                    yield from build(rest, cells, need, fresh_i)
                    return
                if isinstance(root, int):
                    return
                # leaf-only tree of one node, or one node with one fresh child
                for shape in ([(root, None, None)],):
                    new = {}
                    okc = True
                    for nd, l, r in shape:
                        for cell, val in (((nd, TREE_LEFT), l), ((nd, TREE_RIGHT), r)):
                            if cell in heap or cell in cells or cell in new:
                                okc = False
                            new[cell] = val
                    if okc:
                        yield from build(rest, {**cells, **new}, need + per, fresh_i)
            else:
                raise TypeError(atom)

        yield from build(list(clause.heap), {}, Fraction(0), 0)

    yield from assign(list(clause.exists), dict(env))


def goal_holds(
    goal: Goal,
    env: Mapping[str, object],
    heap: Mapping,
    resource: Fraction,
    valuation: Mapping[str, Fraction] | None = None,
    pool: Sequence | None = None,
) -> bool:
    """Bounded truth of a goal in a concrete model (test oracle).

    Quantifiers range over the model universe plus a small pool of fresh
    addresses; -* extensions are drawn from the pool with segment sizes <= 2.
    """
    valuation = valuation or {}
    pool = list(pool or [])
    heap = dict(heap)

    if isinstance(goal, Leaf):
        return model_check(goal.parts, env, heap, resource, valuation)
    if isinstance(goal, Star):
        all_cells = frozenset(heap)
        for clause in goal.parts:
            base = clause.resource.eval(valuation)
            if base < 0:
                continue
            for cells, need in _clause_layouts(clause, env, heap, valuation):
                take = need + base
                if take > resource:
                    continue
                rest_heap = {c: v for c, v in heap.items() if c not in cells}
                if goal_holds(goal.rest, env, rest_heap, resource - take, valuation, pool):
                    return True
        return False
    if isinstance(goal, Wand):
        for clause in goal.parts:
            base = clause.resource.eval(valuation)
            for cells, need in _clause_extensions(clause, env, heap, valuation, pool):
                bigger = dict(heap)
                bigger.update(cells)
                if not goal_holds(goal.rest, env, bigger, resource + need + base, valuation, pool):
                    return False
        return True
    if isinstance(goal, And):
        return goal_holds(goal.left, env, heap, resource, valuation, pool) and goal_holds(
            goal.right, env, heap, resource, valuation, pool
        )
    if isinstance(goal, Implies):
        try:
            lv, rv = _denote(goal.cond.lhs, env), _denote(goal.cond.rhs, env)
        except KeyError:
            return True
        holds = lv == rv if goal.cond.op == "=" else lv != rv
        if not holds:
            return True
        return goal_holds(goal.rest, env, heap, resource, valuation, pool)
    if isinstance(goal, Forall):
        for v in _model_universe(heap) + pool[:1]:
            if not goal_holds(goal.rest, {**env, goal.var: v}, heap, resource, valuation, pool):
                return False
        return True
    if isinstance(goal, Exists):
        for v in _model_universe(heap) + pool[:1]:
            if goal_holds(goal.rest, {**env, goal.var: v}, heap, resource, valuation, pool):
                return True
        return False
    raise TypeError(goal)
