"""Proof search for entailments between resource-annotated symbolic heaps.

The prover discharges the verification conditions produced by
:mod:`amort.vcgen`.  A proof context holds pure facts, a symbolic heap and a
resource pool; the search is goal-directed and collects linear inequalities
over annotation metavariables as it pays for resource-carrying predicates.
The inequalities — not the proof tree — are the interesting output: feeding
them to the LP solver yields concrete per-element annotations.

Search structure:

* ``saturate`` moves information between the pure and spatial parts of a
  context: cells imply non-nullness and pairwise distinctness of their
  addresses, and list segments whose head pointer is decided by the pure
  facts get unfolded (possibly splitting the context into case branches).
* matching covers each heap atom demanded by a goal clause using a cell or
  segment from the context, paying per-element resource along the way.
* goal dispatch walks the goal connectives, backtracking over disjunct and
  instantiation choices.

The search always terminates: besides the structural arguments, a depth cap
and a global work budget turn any runaway exploration into an ordinary
failure with diagnostics.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Mapping, Optional, Sequence

from .assertions import (
    NULL,
    And,
    Clause,
    Exists,
    Forall,
    Goal,
    Implies,
    Leaf,
    ListSeg,
    LSEG_DATA,
    LSEG_NEXT,
    PointsTo,
    PureAtom,
    PureContext,
    Star,
    Term,
    TREE_LEFT,
    TREE_RIGHT,
    TreeSeg,
    Var,
    Wand,
    subst_clause,
    subst_goal,
)
from .resources import ResourceExpr

ZERO_EXPR = ResourceExpr()


# ---------------------------------------------------------------------------
# constraints


@dataclass(frozen=True)
class Constraint:
    """A linear inequality ``lhs >= rhs`` over annotation metavariables."""

    lhs: ResourceExpr
    rhs: ResourceExpr

    def diff(self) -> ResourceExpr:
        """The expression ``lhs - rhs``, which the constraint requires >= 0."""
        return self.lhs - self.rhs

    def is_trivial(self) -> bool:
        d = self.diff()
        return d.is_constant() and d.constant >= 0

    def __str__(self) -> str:
        return f"{self.lhs} >= {self.rhs}"


ConstraintSet = tuple  # tuple[Constraint, ...], deduplicated, insertion order


def merge_constraints(*sets: Sequence[Constraint]) -> ConstraintSet:
    out: dict[Constraint, None] = {}
    for s in sets:
        for c in s:
            out[c] = None
    return tuple(out)


# ---------------------------------------------------------------------------
# unification variables

# The assertion language only has rigid terms.  During matching the prover
# introduces unification variables for a clause's existentials; they are a
# separate term kind so they can never be confused with program variables.


@dataclass(frozen=True)
class EVar:
    name: str
    birth: int = 0  # rigid variables born later than this may not be bound

    def __str__(self) -> str:
        return f"?{self.name}"


Subst = dict  # dict[EVar, Term]


def resolve(t: Term, theta: Mapping) -> Term:
    while isinstance(t, EVar) and t in theta:
        t = theta[t]
    return t


def _resolve_heap_atom(a, theta):
    if isinstance(a, PointsTo):
        return PointsTo(resolve(a.obj, theta), a.field, resolve(a.value, theta))
    if isinstance(a, ListSeg):
        return ListSeg(a.ann, resolve(a.start, theta), resolve(a.end, theta))
    if isinstance(a, TreeSeg):
        return TreeSeg(a.ann, resolve(a.root, theta))
    raise TypeError(a)


def _resolve_pure_atom(a: PureAtom, theta) -> PureAtom:
    return PureAtom(resolve(a.lhs, theta), a.op, resolve(a.rhs, theta))


def _resolve_clause(c: Clause, theta) -> Clause:
    return Clause(
        c.exists,
        tuple(_resolve_pure_atom(a, theta) for a in c.pure),
        tuple(_resolve_heap_atom(a, theta) for a in c.heap),
        c.resource,
    )


def _resolve_goal(g: Goal, theta) -> Goal:
    if not theta:
        return g
    if isinstance(g, Leaf):
        return Leaf(tuple(_resolve_clause(c, theta) for c in g.parts))
    if isinstance(g, Star):
        return Star(
            tuple(_resolve_clause(c, theta) for c in g.parts),
            _resolve_goal(g.rest, theta),
        )
    if isinstance(g, Wand):
        return Wand(
            tuple(_resolve_clause(c, theta) for c in g.parts),
            _resolve_goal(g.rest, theta),
        )
    if isinstance(g, And):
        return And(_resolve_goal(g.left, theta), _resolve_goal(g.right, theta))
    if isinstance(g, Implies):
        return Implies(_resolve_pure_atom(g.cond, theta), _resolve_goal(g.rest, theta))
    if isinstance(g, Forall):
        return Forall(g.var, _resolve_goal(g.rest, theta))
    if isinstance(g, Exists):
        return Exists(g.var, _resolve_goal(g.rest, theta))
    raise TypeError(g)


def _term_evars(t: Term, theta) -> set:
    t = resolve(t, theta)
    return {t} if isinstance(t, EVar) else set()


def _atom_evars(a, theta) -> set:
    if isinstance(a, PureAtom):
        return _term_evars(a.lhs, theta) | _term_evars(a.rhs, theta)
    if isinstance(a, PointsTo):
        return _term_evars(a.obj, theta) | _term_evars(a.value, theta)
    if isinstance(a, ListSeg):
        return _term_evars(a.start, theta) | _term_evars(a.end, theta)
    if isinstance(a, TreeSeg):
        return _term_evars(a.root, theta)
    raise TypeError(a)


# ---------------------------------------------------------------------------
# proof contexts


class FreshNames:
    """Shared counter so every context derived from one root names apart."""

    __slots__ = ("n",)

    def __init__(self) -> None:
        self.n = 0

    def next(self, base: str) -> str:
        self.n += 1
        return f"{base}!{self.n}"


class ProofContext:
    """Pure facts, symbolic heap and resource pool threaded by the search.

    Instances are treated as immutable; ``updated`` derives a new context
    sharing the fresh-name counter.  The pure part is kept as the original
    atom tuple, with a congruence closure built lazily on first query.
    """

    __slots__ = ("pure", "heap", "resource", "names", "_pc")

    def __init__(
        self,
        pure: Sequence[PureAtom] = (),
        heap: Sequence = (),
        resource: ResourceExpr = ZERO_EXPR,
        names: Optional[FreshNames] = None,
    ):
        self.pure = tuple(pure)
        self.heap = tuple(heap)
        self.resource = resource
        self.names = names if names is not None else FreshNames()
        self._pc: Optional[PureContext] = None

    @property
    def pc(self) -> PureContext:
        if self._pc is None:
            self._pc = PureContext(self.pure)
        return self._pc

    def updated(self, pure=None, heap=None, resource=None) -> "ProofContext":
        return ProofContext(
            self.pure if pure is None else pure,
            self.heap if heap is None else heap,
            self.resource if resource is None else resource,
            self.names,
        )

    def without_atom(self, index: int) -> tuple:
        return self.heap[:index] + self.heap[index + 1 :]

    def __str__(self) -> str:
        pure = ", ".join(str(a) for a in self.pure)
        heap = ", ".join(str(a) for a in self.heap) or "emp"
        return f"{pure} | {heap} | {self.resource}"


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class ProofFailure:
    message: str
    depth: int
    vc_id: Optional[str] = None

    def __str__(self) -> str:
        where = f"{self.vc_id}: " if self.vc_id else ""
        return f"{where}{self.message}"


@dataclass(frozen=True)
class ProofResult:
    ok: bool
    constraints: ConstraintSet = ()
    failure: Optional[ProofFailure] = None


class _SearchBound(Exception):
    """Raised internally when the depth cap or work budget is exhausted."""


def match_resource(avail: ResourceExpr, want: ResourceExpr):
    """Pay ``want`` out of ``avail``: signed remainder plus the constraint
    that the pool really covered the payment.  Never fails; an impossible
    payment surfaces as an unsatisfiable constraint at LP time."""
    return avail - want, (Constraint(avail, want),)


def _goal_size(g: Goal) -> int:
    if isinstance(g, Leaf):
        return 1 + sum(len(c.heap) + len(c.pure) + 1 for c in g.parts)
    if isinstance(g, (Star, Wand)):
        return 1 + sum(len(c.heap) + len(c.pure) + 1 for c in g.parts) + _goal_size(g.rest)
    if isinstance(g, And):
        return 1 + _goal_size(g.left) + _goal_size(g.right)
    if isinstance(g, (Implies, Forall, Exists)):
        return 1 + _goal_size(g.rest)
    raise TypeError(g)


# ---------------------------------------------------------------------------
# the prover


class Prover:
    """One proof search instance.

    A ``Prover`` carries the backtracking state for a single entailment:
    fresh-name clock for rigid variables, the work budget, and the deepest
    failure seen (for diagnostics).  Proving different conditions with
    different instances keeps results independent and reproducible.
    """

    def __init__(self, max_depth: int = 64, max_work: int = 200_000):
        self.max_depth = max_depth
        self.max_work = max_work
        self._work = max_work
        self._depth_cap = max_depth
        self._clock = 0
        self._rigid_birth: dict[str, int] = {}
        self._best_fail: Optional[tuple[int, str]] = None

    # -- public entry points ------------------------------------------------

    def prove(self, ctx: ProofContext, goal: Goal) -> ProofResult:
        self._work = self.max_work
        self._depth_cap = max(self.max_depth, len(ctx.heap) + _goal_size(goal))
        self._best_fail = None
        try:
            cons = self._go_saturated(ctx, goal, 0)
        except _SearchBound as e:
            return ProofResult(False, (), ProofFailure(f"search bound exceeded ({e})", 0))
        if cons is None:
            depth, msg = self._best_fail or (0, "no applicable rule")
            return ProofResult(False, (), ProofFailure(msg, depth))
        return ProofResult(True, cons, None)

    def prove_vc(self, vc) -> ProofResult:
        """Prove antecedent |- consequent; every antecedent disjunct must
        entail the goal, and the constraint sets are unioned."""
        all_cons: ConstraintSet = ()
        for clause in vc.antecedent:
            ctx = self._context_of_clause(clause)
            res = self.prove(ctx, vc.consequent)
            if not res.ok:
                fail = res.failure
                return ProofResult(
                    False,
                    (),
                    ProofFailure(fail.message, fail.depth, getattr(vc, "vc_id", None)),
                )
            all_cons = merge_constraints(all_cons, res.constraints)
        return ProofResult(True, all_cons, None)

    def _context_of_clause(self, clause: Clause) -> ProofContext:
        # Antecedent existentials denote some fixed unknown values: introduce
        # them as rigid variables that anything may later be equated with.
        names = FreshNames()
        if clause.exists:
            sub = {x: Var(names.next(x)) for x in clause.exists}
            clause = subst_clause(
                Clause((), clause.pure, clause.heap, clause.resource), sub
            )
        return ProofContext(clause.pure, clause.heap, clause.resource, names)

    # -- bookkeeping ----------------------------------------------------------

    def _tick(self, depth: int) -> None:
        self._work -= 1
        if self._work < 0:
            raise _SearchBound(f"work budget {self.max_work}")
        if depth > self._depth_cap:
            raise _SearchBound(f"depth cap {self._depth_cap}")

    def _note_fail(self, depth: int, msg: str) -> None:
        if self._best_fail is None or depth >= self._best_fail[0]:
            self._best_fail = (depth, msg)

    def _fresh_rigid(self, ctx: ProofContext, base: str) -> Var:
        name = ctx.names.next(base)
        self._clock += 1
        self._rigid_birth[name] = self._clock
        return Var(name)

    def _fresh_evar(self, ctx: ProofContext, base: str) -> EVar:
        return EVar(ctx.names.next(base), self._clock)

    def _bind(self, e: EVar, t: Term, theta: Subst) -> Optional[Subst]:
        t = resolve(t, theta)
        if t == e:
            return theta
        if isinstance(t, EVar):
            # orient towards the younger variable so scopes stay respected
            if t.birth > e.birth:
                e, t = t, e
        elif isinstance(t, Var):
            if self._rigid_birth.get(t.name, 0) > e.birth:
                return None  # rigid variable introduced after the choice point
        out = dict(theta)
        out[e] = t
        return out

    def _unify(self, ctx: ProofContext, goal_t: Term, ctx_t: Term, theta: Subst):
        """Match a goal term against a (rigid) context term."""
        goal_t = resolve(goal_t, theta)
        if isinstance(goal_t, EVar):
            return self._bind(goal_t, ctx_t, theta)
        return theta if ctx.pc.equal(goal_t, ctx_t) else None

    def _candidates(self, ctx: ProofContext) -> list:
        """Instantiation candidates: null plus one representative per
        equivalence class of the terms mentioned by the context."""
        seen = []
        reps = set()
        pc = ctx.pc
        pool = [NULL]
        for a in ctx.pure:
            pool.extend((a.lhs, a.rhs))
        for a in ctx.heap:
            if isinstance(a, PointsTo):
                pool.extend((a.obj, a.value))
            elif isinstance(a, ListSeg):
                pool.extend((a.start, a.end))
            elif isinstance(a, TreeSeg):
                pool.append(a.root)
        for t in pool:
            if isinstance(t, EVar):
                continue
            r = pc._find(t)
            if r not in reps:
                reps.add(r)
                seen.append(t)
        return seen

    # -- saturation -----------------------------------------------------------

    def saturate(self, ctx: ProofContext) -> list[ProofContext]:
        """Close the context under cell facts and decided segment unfoldings.

        Returns the list of surviving case branches; contradictory branches
        are pruned (a contradictory context proves anything, contributing no
        constraints).  An empty result therefore means vacuous success.
        """
        out: list[ProofContext] = []
        queue = [ctx]
        while queue:
            self._tick(0)
            c = queue.pop(0)
            c = self._pure_closure(c)
            if c.pc.contradictory():
                continue
            step = self._unfold_step(c)
            if step is None:
                out.append(c)
            else:
                queue[:0] = step
        return out

    def _pure_closure(self, ctx: ProofContext) -> ProofContext:
        pc = ctx.pc
        added = []
        cells = [a for a in ctx.heap if isinstance(a, PointsTo)]
        for cell in cells:
            atom = PureAtom(cell.obj, "!=", NULL)
            if not pc.entails(atom):
                added.append(atom)
                pc.add(atom)
        for a, b in itertools.combinations(cells, 2):
            if a.field != b.field:
                continue
            atom = PureAtom(a.obj, "!=", b.obj)
            if not pc.entails(atom):
                added.append(atom)
                pc.add(atom)
        if not added:
            return ctx
        # pc was grown in place; rebuild the context so pure/pc agree
        return ctx.updated(pure=ctx.pure + tuple(added))

    def _unfold_step(self, ctx: ProofContext) -> Optional[list[ProofContext]]:
        """Apply the first decided unfolding, if any.  Returns the branches
        to requeue, or None when the context is fully saturated."""
        pc = ctx.pc
        for i, atom in enumerate(ctx.heap):
            if isinstance(atom, ListSeg):
                rest = ctx.without_atom(i)
                if pc.equal(atom.start, atom.end):
                    return [ctx.updated(heap=rest)]
                if pc.equal(atom.start, NULL):
                    eq = PureAtom(atom.end, "=", NULL)
                    return [ctx.updated(pure=ctx.pure + (eq,), heap=rest)]
                if pc.unequal(atom.start, atom.end):
                    # a segment with distinct endpoints must be non-empty,
                    # whether or not the head's null-ness is known yet
                    return [self._unfold_lseg_cons(ctx, i)]
                if pc.unequal(atom.start, NULL):
                    cons = self._unfold_lseg_cons(ctx, i)
                    empty = ctx.updated(
                        pure=ctx.pure + (PureAtom(atom.start, "=", atom.end),),
                        heap=rest,
                    )
                    return [empty, cons]
            elif isinstance(atom, TreeSeg):
                rest = ctx.without_atom(i)
                if pc.equal(atom.root, NULL):
                    return [ctx.updated(heap=rest)]
                if pc.unequal(atom.root, NULL):
                    return [self._unfold_tree_cons(ctx, i)]
        return None

    def _unfold_lseg_cons(self, ctx: ProofContext, i: int) -> ProofContext:
        seg = ctx.heap[i]
        nxt = Var(ctx.names.next("n"))
        dat = Var(ctx.names.next("d"))
        cells = (
            PointsTo(seg.start, LSEG_NEXT, nxt),
            PointsTo(seg.start, LSEG_DATA, dat),
            ListSeg(seg.ann, nxt, seg.end),
        )
        return ctx.updated(
            heap=ctx.without_atom(i) + cells,
            resource=ctx.resource + seg.ann,
        )

    def _unfold_tree_cons(self, ctx: ProofContext, i: int) -> ProofContext:
        seg = ctx.heap[i]
        left = Var(ctx.names.next("l"))
        right = Var(ctx.names.next("r"))
        cells = (
            PointsTo(seg.root, TREE_LEFT, left),
            PointsTo(seg.root, TREE_RIGHT, right),
            TreeSeg(seg.ann, left),
            TreeSeg(seg.ann, right),
        )
        return ctx.updated(
            heap=ctx.without_atom(i) + cells,
            resource=ctx.resource + seg.ann,
        )

    # -- goal dispatch ----------------------------------------------------------

    def _go_saturated(self, ctx, goal, depth) -> Optional[ConstraintSet]:
        """Saturate, then prove the goal in every surviving branch."""
        cons: ConstraintSet = ()
        for branch in self.saturate(ctx):
            sub = self._go(branch, goal, depth)
            if sub is None:
                return None
            cons = merge_constraints(cons, sub)
        return cons

    def _go(self, ctx: ProofContext, goal: Goal, depth: int) -> Optional[ConstraintSet]:
        self._tick(depth)
        if isinstance(goal, Leaf):
            return self._go_leaf(ctx, goal, depth)
        if isinstance(goal, Star):
            return self._go_star(ctx, goal, depth)
        if isinstance(goal, Wand):
            return self._go_wand(ctx, goal, depth)
        if isinstance(goal, And):
            left = self._go(ctx, goal.left, depth + 1)
            if left is None:
                return None
            right = self._go(ctx, goal.right, depth + 1)
            if right is None:
                return None
            return merge_constraints(left, right)
        if isinstance(goal, Implies):
            return self._go_implies(ctx, goal, depth)
        if isinstance(goal, Forall):
            v = self._fresh_rigid(ctx, goal.var)
            return self._go(ctx, subst_goal(goal.rest, {goal.var: v}), depth + 1)
        if isinstance(goal, Exists):
            return self._go_exists(ctx, goal, depth)
        raise TypeError(goal)

    def _go_leaf(self, ctx, goal: Leaf, depth) -> Optional[ConstraintSet]:
        for clause in goal.parts:
            for ctx2, theta, cons in self._match_clause(ctx, clause, depth):
                if ctx2.heap:
                    leak = ", ".join(str(a) for a in ctx2.heap)
                    self._note_fail(depth, f"leftover heap after match: {leak}")
                    continue
                return cons
        return None

    def _go_star(self, ctx, goal: Star, depth) -> Optional[ConstraintSet]:
        for clause in goal.parts:
            for ctx2, theta, cons in self._match_clause(ctx, clause, depth):
                rest = _resolve_goal(goal.rest, theta)
                sub = self._go(ctx2, rest, depth + 1)
                if sub is not None:
                    return merge_constraints(cons, sub)
        return None

    def _go_wand(self, ctx, goal: Wand, depth) -> Optional[ConstraintSet]:
        # Assume the hypothesis in every one of its disjuncts; the
        # continuation must hold under each.
        cons: ConstraintSet = ()
        for clause in goal.parts:
            evars = set()
            for a in clause.pure + clause.heap:
                evars |= _atom_evars(a, {})
            if evars:
                names = ", ".join(sorted(str(e) for e in evars))
                self._note_fail(depth, f"unresolved existential {names} entering context")
                return None
            body = clause
            if clause.exists:
                sub = {x: self._fresh_rigid(ctx, x) for x in clause.exists}
                body = subst_clause(Clause((), clause.pure, clause.heap, clause.resource), sub)
            grown = ctx.updated(
                pure=ctx.pure + body.pure,
                heap=ctx.heap + body.heap,
                resource=ctx.resource + body.resource,
            )
            sub_cons = self._go_saturated(grown, goal.rest, depth + 1)
            if sub_cons is None:
                return None
            cons = merge_constraints(cons, sub_cons)
        return cons

    def _go_implies(self, ctx, goal: Implies, depth) -> Optional[ConstraintSet]:
        if _atom_evars(goal.cond, {}):
            self._note_fail(depth, f"unresolved existential in guard {goal.cond}")
            return None
        grown = ctx.updated(pure=ctx.pure + (goal.cond,))
        return self._go_saturated(grown, goal.rest, depth + 1)

    def _go_exists(self, ctx, goal: Exists, depth) -> Optional[ConstraintSet]:
        # Unification first: let matching discover the witness.
        e = self._fresh_evar(ctx, goal.var)
        res = self._go(ctx, subst_goal(goal.rest, {goal.var: e}), depth + 1)
        if res is not None:
            return res
        # Fall back to enumerating context terms (never fresh integers).
        for cand in self._candidates(ctx):
            res = self._go(ctx, subst_goal(goal.rest, {goal.var: cand}), depth + 1)
            if res is not None:
                return res
        return None

    # -- clause and heap matching ------------------------------------------------

    def _match_clause(
        self, ctx: ProofContext, clause: Clause, depth: int
    ) -> Iterator[tuple[ProofContext, Subst, ConstraintSet]]:
        """Match one disjunct: cover its heap atoms, check its pure part,
        pay its resource.  Yields every way of doing so."""
        body = clause
        theta0: Subst = {}
        if clause.exists:
            evs = {x: self._fresh_evar(ctx, x) for x in clause.exists}
            body = subst_clause(Clause((), clause.pure, clause.heap, clause.resource), evs)
        for ctx2, theta, cons in self._match_atoms(ctx, body.heap, theta0, (), depth):
            for theta2 in self._solve_pures(ctx2, body.pure, theta, depth):
                rem, rcons = match_resource(ctx2.resource, body.resource)
                yield (
                    ctx2.updated(resource=rem),
                    theta2,
                    merge_constraints(cons, rcons),
                )

    def _match_atoms(
        self, ctx: ProofContext, goal_atoms: tuple, theta: Subst, cons: ConstraintSet, depth: int
    ) -> Iterator[tuple[ProofContext, Subst, ConstraintSet]]:
        if not goal_atoms:
            yield ctx, theta, cons
            return
        self._tick(depth)
        head = _resolve_heap_atom(goal_atoms[0], theta)
        tail = goal_atoms[1:]
        matched = False
        if isinstance(head, PointsTo):
            for out in self._match_pt(ctx, head, tail, theta, cons, depth):
                matched = True
                yield out
        elif isinstance(head, ListSeg):
            for out in self._match_lseg(ctx, head, tail, theta, cons, depth):
                matched = True
                yield out
        elif isinstance(head, TreeSeg):
            for out in self._match_tree(ctx, head, tail, theta, cons, depth):
                matched = True
                yield out
        else:
            raise TypeError(head)
        if not matched:
            self._note_fail(depth, f"no match for {head} in heap [{', '.join(str(a) for a in ctx.heap)}]")

    def _match_pt(self, ctx, goal: PointsTo, tail, theta, cons, depth):
        for i, cell in enumerate(ctx.heap):
            if not isinstance(cell, PointsTo) or cell.field != goal.field:
                continue
            t1 = self._unify(ctx, goal.obj, cell.obj, theta)
            if t1 is None:
                continue
            t2 = self._unify(ctx, goal.value, cell.value, t1)
            if t2 is None:
                continue
            yield from self._match_atoms(ctx.updated(heap=ctx.without_atom(i)), tail, t2, cons, depth)

    def _match_lseg(self, ctx, goal: ListSeg, tail, theta, cons, depth):
        # endpoints equal: the empty segment costs nothing
        start = resolve(goal.start, theta)
        end = resolve(goal.end, theta)
        if isinstance(start, EVar) or isinstance(end, EVar):
            t2 = (
                self._bind(start, end, theta)
                if isinstance(start, EVar)
                else self._bind(end, start, theta)
            )
            if t2 is not None:
                yield from self._match_atoms(ctx, tail, t2, cons, depth)
        elif ctx.pc.equal(start, end):
            yield from self._match_atoms(ctx, tail, theta, cons, depth)

        # peel one exposed cell, paying the per-element annotation
        for i, cell in enumerate(ctx.heap):
            if not isinstance(cell, PointsTo) or cell.field != LSEG_NEXT:
                continue
            t1 = self._unify(ctx, start, cell.obj, theta)
            if t1 is None:
                continue
            for j, dcell in enumerate(ctx.heap):
                if j == i or not isinstance(dcell, PointsTo) or dcell.field != LSEG_DATA:
                    continue
                if not ctx.pc.equal(dcell.obj, cell.obj):
                    continue
                rem, rcons = match_resource(ctx.resource, goal.ann)
                smaller = ctx.updated(
                    heap=tuple(a for k, a in enumerate(ctx.heap) if k not in (i, j)),
                    resource=rem,
                )
                rest = (ListSeg(goal.ann, cell.value, goal.end),) + tail
                yield from self._match_atoms(smaller, rest, t1, merge_constraints(cons, rcons), depth)
                break  # data cells at one address are interchangeable

        # absorb a whole context segment starting at the same head
        for i, seg in enumerate(ctx.heap):
            if not isinstance(seg, ListSeg):
                continue
            t1 = self._unify(ctx, start, seg.start, theta)
            if t1 is None:
                continue
            if seg.ann == goal.ann:
                extra: ConstraintSet = ()
            else:
                # differing annotations: per-element weakening is sound
                # because segment resources are lower bounds
                extra = (Constraint(seg.ann, goal.ann),)
            rest = (ListSeg(goal.ann, seg.end, goal.end),) + tail
            yield from self._match_atoms(
                ctx.updated(heap=ctx.without_atom(i)), rest, t1, merge_constraints(cons, extra), depth
            )

    def _match_tree(self, ctx, goal: TreeSeg, tail, theta, cons, depth):
        root = resolve(goal.root, theta)
        # the empty tree: root is null
        if isinstance(root, EVar):
            t2 = self._bind(root, NULL, theta)
            if t2 is not None:
                yield from self._match_atoms(ctx, tail, t2, cons, depth)
        elif ctx.pc.equal(root, NULL):
            yield from self._match_atoms(ctx, tail, theta, cons, depth)

        # peel the root cell pair, recursing into both subtrees
        for i, cell in enumerate(ctx.heap):
            if not isinstance(cell, PointsTo) or cell.field != TREE_LEFT:
                continue
            t1 = self._unify(ctx, root, cell.obj, theta)
            if t1 is None:
                continue
            for j, rcell in enumerate(ctx.heap):
                if j == i or not isinstance(rcell, PointsTo) or rcell.field != TREE_RIGHT:
                    continue
                if not ctx.pc.equal(rcell.obj, cell.obj):
                    continue
                rem, rcons = match_resource(ctx.resource, goal.ann)
                smaller = ctx.updated(
                    heap=tuple(a for k, a in enumerate(ctx.heap) if k not in (i, j)),
                    resource=rem,
                )
                rest = (TreeSeg(goal.ann, cell.value), TreeSeg(goal.ann, rcell.value)) + tail
                yield from self._match_atoms(smaller, rest, t1, merge_constraints(cons, rcons), depth)
                break

        # absorb a whole context tree at the same root
        for i, seg in enumerate(ctx.heap):
            if not isinstance(seg, TreeSeg):
                continue
            t1 = self._unify(ctx, root, seg.root, theta)
            if t1 is None:
                continue
            extra = () if seg.ann == goal.ann else (Constraint(seg.ann, goal.ann),)
            yield from self._match_atoms(
                ctx.updated(heap=ctx.without_atom(i)), tail, t1, merge_constraints(cons, extra), depth
            )

    def _solve_pures(self, ctx, atoms: tuple, theta: Subst, depth: int) -> Iterator[Subst]:
        """Check the clause's pure atoms, solving for leftover existentials
        by unification against equalities, then by candidate enumeration."""
        if not atoms:
            yield theta
            return
        head = _resolve_pure_atom(atoms[0], theta)
        tail = atoms[1:]
        lhs_e = isinstance(head.lhs, EVar)
        rhs_e = isinstance(head.rhs, EVar)
        if not lhs_e and not rhs_e:
            if ctx.pc.entails(head):
                yield from self._solve_pures(ctx, tail, theta, depth)
            else:
                self._note_fail(depth, f"pure fact not entailed: {head}")
            return
        if head.op == "=":
            e, t = (head.lhs, head.rhs) if lhs_e else (head.rhs, head.lhs)
            t2 = self._bind(e, t, theta)
            if t2 is not None:
                yield from self._solve_pures(ctx, tail, t2, depth)
            return
        # disequality on an existential (or two existentials): enumerate
        e = head.lhs if lhs_e else head.rhs
        for cand in self._candidates(ctx):
            t2 = self._bind(e, cand, theta)
            if t2 is None:
                continue
            yield from self._solve_pures(ctx, atoms, t2, depth)


# ---------------------------------------------------------------------------
# module-level conveniences (one throwaway search instance each)


def saturate(ctx: ProofContext) -> list[ProofContext]:
    return Prover().saturate(ctx)


def match_heap(ctx: ProofContext, goal_sigma: Sequence) -> Iterator[tuple[ProofContext, ConstraintSet, Subst]]:
    """Enumerate ways of covering ``goal_sigma`` with the context's heap,
    yielding the remaining context, collected constraints, and the bindings
    chosen for any unification variables in the goal atoms."""
    p = Prover()
    for ctx2, theta, cons in p._match_atoms(ctx, tuple(goal_sigma), {}, (), 0):
        yield ctx2, cons, theta


def prove(ctx: ProofContext, goal: Goal, max_depth: int = 64, max_work: int = 200_000) -> ProofResult:
    return Prover(max_depth, max_work).prove(ctx, goal)


def prove_vc(vc, max_depth: int = 64, max_work: int = 200_000) -> ProofResult:
    return Prover(max_depth, max_work).prove_vc(vc)
