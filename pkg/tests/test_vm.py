"""Interpreter semantics: rule-level unit tests and whole-run behaviour."""

from fractions import Fraction

import pytest

from amort.bytecode import FieldDescriptor, Instr, parse_program
from amort.vm import (
    ALWAYS_DENY,
    ALWAYS_GRANT,
    AcquisitionPolicy,
    Addr,
    BudgetViolation,
    Frame,
    FuelExhausted,
    Halt,
    MachineState,
    Stuck,
    VmError,
    initial_state,
    parse_policy,
    run,
    step,
    step_frame,
    step_mut,
)

PAIR = FieldDescriptor((("data", "int"), ("next", "ref")))


def frame(stack=(), locals_=None, pc=0):
    return Frame(proc="f", stack=tuple(stack), locals=dict(locals_ or {}), pc=pc)


class TestStepFrame:
    def test_iconst_pushes(self):
        f = step_frame(frame(stack=[7]), Instr("iconst", value=5))
        assert f.stack == (5, 7)
        assert f.pc == 1

    def test_ifnull_taken_pops(self):
        f = step_frame(frame(stack=[None, 3]), Instr("ifnull", target=9))
        assert f.pc == 9
        assert f.stack == (3,)

    def test_ifnull_not_taken(self):
        f = step_frame(frame(stack=[Addr(1)]), Instr("ifnull", target=9))
        assert f.pc == 1
        assert f.stack == ()

    def test_ibinop_type_mismatch_sticks(self):
        from amort.vm import _StuckSignal

        with pytest.raises(_StuckSignal):
            step_frame(frame(stack=[Addr(1), 1]), Instr("ibinop", alu="add"))

    def test_ibinop_operand_order(self):
        # top of stack is the left operand
        f = step_frame(frame(stack=[7, 3]), Instr("ibinop", alu="sub"))
        assert f.stack == (4,)

    def test_div_truncates_toward_zero(self):
        f = step_frame(frame(stack=[-7, 2]), Instr("ibinop", alu="div"))
        assert f.stack == (-3,)
        f = step_frame(frame(stack=[-7, 2]), Instr("ibinop", alu="rem"))
        assert f.stack == (-1,)

    def test_binarycmp_compares_top_to_second(self):
        f = step_frame(frame(stack=[1, 2]), Instr("binarycmp", cmp="lt", target=5))
        assert f.pc == 5  # 1 < 2: taken
        f = step_frame(frame(stack=[2, 1]), Instr("binarycmp", cmp="lt", target=5))
        assert f.pc == 1

    def test_binarycmp_refs_eq(self):
        a = Addr(3)
        f = step_frame(frame(stack=[a, a]), Instr("binarycmp", cmp="eq", target=5))
        assert f.pc == 5
        f = step_frame(frame(stack=[a, None]), Instr("binarycmp", cmp="ne", target=5))
        assert f.pc == 5

    def test_binarycmp_refs_order_sticks(self):
        from amort.vm import _StuckSignal

        with pytest.raises(_StuckSignal):
            step_frame(frame(stack=[Addr(1), Addr(2)]), Instr("binarycmp", cmp="lt", target=5))

    def test_unarycmp_against_zero(self):
        f = step_frame(frame(stack=[0]), Instr("unarycmp", cmp="eq", target=4))
        assert f.pc == 4
        f = step_frame(frame(stack=[-2]), Instr("unarycmp", cmp="ge", target=4))
        assert f.pc == 1

    def test_load_uninitialised_sticks(self):
        from amort.vm import _StuckSignal

        with pytest.raises(_StuckSignal, match="uninitialised local 2"):
            step_frame(frame(), Instr("load", slot=2))

    def test_store_then_load(self):
        f = step_frame(frame(stack=[41]), Instr("store", slot=1))
        assert f.locals[1] == 41
        f2 = step_frame(f, Instr("load", slot=1))
        assert f2.stack == (41,)


class TestStepMut:
    def test_new_defaults_and_freshness(self):
        f, heap, consumed, acquired, req, nxt = step_mut(frame(), {}, Instr("new", desc=PAIR), 0)
        a = f.stack[0]
        assert isinstance(a, Addr)
        assert heap == {(a, "data"): 0, (a, "next"): None}
        assert consumed == 0 and acquired == 0 and req is None
        assert nxt == 1

    def test_putfield_requires_cell(self):
        from amort.vm import _StuckSignal

        a = Addr(0)
        heap = {(a, "data"): 0}
        f, heap2, *_ = step_mut(frame(stack=[a, 3]), heap, Instr("putfield", field="data"), 1)
        assert heap2[(a, "data")] == 3
        assert heap[(a, "data")] == 0  # input heap untouched
        with pytest.raises(_StuckSignal, match="cell absent"):
            step_mut(frame(stack=[a, 3]), heap, Instr("putfield", field="next"), 1)

    def test_getfield(self):
        a = Addr(0)
        heap = {(a, "next"): None}
        f, *_ = step_mut(frame(stack=[a]), heap, Instr("getfield", field="next"), 1)
        assert f.stack == (None,)

    def test_free_removes_descriptor_fields(self):
        a = Addr(0)
        heap = {(a, "data"): 1, (a, "next"): None, (Addr(1), "data"): 2}
        f, heap2, *_ = step_mut(frame(stack=[a]), heap, Instr("free", desc=PAIR), 2)
        assert heap2 == {(Addr(1), "data"): 2}

    def test_free_partial_sticks(self):
        from amort.vm import _StuckSignal

        a = Addr(0)
        with pytest.raises(_StuckSignal, match="absent"):
            step_mut(frame(stack=[a]), {(a, "data"): 1}, Instr("free", desc=PAIR), 1)

    def test_consume_reports_amount(self):
        *_, consumed, acquired, req, _ = step_mut(frame(), {}, Instr("consume", amount=Fraction(2)), 0)
        assert consumed == 2 and acquired == 0

    def test_consume_dyn_clamps(self):
        f, _, consumed, *_ = step_mut(frame(stack=[-4]), {}, Instr("consume_dyn"), 0)
        assert consumed == 0
        f, _, consumed, *_ = step_mut(frame(stack=[4]), {}, Instr("consume_dyn"), 0)
        assert consumed == 4

    def test_acquire_deny_pushes_zero(self):
        f, _, consumed, acquired, req, _ = step_mut(frame(stack=[4]), {}, Instr("acquire"), 0, grant=False)
        assert f.stack == (0,)
        assert (consumed, acquired, req) == (0, 0, 4)

    def test_acquire_grant_pushes_one(self):
        f, _, consumed, acquired, req, _ = step_mut(frame(stack=[4]), {}, Instr("acquire"), 0, grant=True)
        assert f.stack == (1,)
        assert (consumed, acquired, req) == (0, 4, 4)


def parse(src):
    return parse_program(src)


class TestRun:
    def test_empty_body_budget_zero(self):
        prog = parse("proc main() {\n 0: iconst 0\n 1: return\n}\nentry main")
        res = run(prog, [], budget=Fraction(0))
        assert isinstance(res.outcome, Halt)
        assert res.outcome.consumed == 0
        assert res.outcome.value == 0

    def test_return_halts_with_five_components(self):
        prog = parse("proc main() {\n 0: consume 3\n 1: iconst 7\n 2: return\n}\nentry main")
        res = run(prog, [], budget=Fraction(10))
        h = res.outcome
        assert isinstance(h, Halt)
        assert (h.consumed, h.total, h.value) == (3, 10, 7)

    def test_budget_violation_at_boundary(self):
        prog = parse("proc main() {\n 0: consume 2\n 1: iconst 0\n 2: return\n}\nentry main")
        ok = run(prog, [], budget=Fraction(2))
        assert isinstance(ok.outcome, Halt)
        bad = run(prog, [], budget=Fraction(19, 10))
        assert isinstance(bad.outcome, BudgetViolation)
        assert bad.outcome.pc == 0

    def test_fractional_budget(self):
        prog = parse("proc main() {\n 0: consume 1/2\n 1: consume 1/2\n 2: iconst 0\n 3: return\n}\nentry main")
        res = run(prog, [], budget=Fraction(1))
        assert isinstance(res.outcome, Halt)

    def test_fuel_exhaustion(self):
        prog = parse("proc main() {\n invariant 0: emp\n 0: goto 0\n}\nentry main")
        res = run(prog, [], budget=Fraction(0), fuel=50)
        assert isinstance(res.outcome, FuelExhausted)
        assert res.steps == 50

    def test_stuck_reports_location(self):
        prog = parse("proc main() {\n 0: aconst_null\n 1: getfield data\n 2: return\n}\nentry main")
        res = run(prog, [], budget=Fraction(0))
        assert isinstance(res.outcome, Stuck)
        assert res.outcome.pc == 1

    def test_div_by_zero_sticks(self):
        prog = parse(
            "proc main() {\n 0: iconst 0\n 1: iconst 1\n 2: ibinop div\n 3: return\n}\nentry main"
        )
        res = run(prog, [], budget=Fraction(0))
        # top of stack is 1, second is 0: computes 1 div 0
        assert isinstance(res.outcome, Stuck)
        assert "zero" in res.outcome.reason

    def test_call_passes_args_top_first(self):
        src = """
proc snd(a:int, b:int) {
  0: load b
  1: return
}
proc main() {
  0: iconst 20     # pushed first, becomes b
  1: iconst 10     # top of stack at call, becomes a
  2: call snd
  3: return
}
entry main
"""
        res = run(parse(src), [], budget=Fraction(0))
        assert isinstance(res.outcome, Halt)
        assert res.outcome.value == 20

    def test_return_resumes_caller(self):
        src = """
proc one() {
  0: iconst 1
  1: return
}
proc main() {
  0: call one
  1: iconst 2
  2: ibinop add
  3: return
}
entry main
"""
        res = run(parse(src), [], budget=Fraction(0))
        assert res.outcome.value == 3

    def test_entry_args_become_locals(self):
        src = "proc main(x:int, y:int) {\n 0: load y\n 1: return\n}\nentry main"
        res = run(parse(src), [4, 9], budget=Fraction(0))
        assert res.outcome.value == 9

    def test_arity_mismatch_raises(self):
        src = "proc main(x:int) {\n 0: load x\n 1: return\n}\nentry main"
        with pytest.raises(VmError):
            run(parse(src), [], budget=Fraction(0))


ACQUIRE_LOOP = """
proc main() {
  0: iconst 3
  1: acquire
  2: unarycmp eq 6     # denied: skip the consume
  3: consume 3
  4: iconst 1
  5: return
  6: iconst 0
  7: return
}
entry main
"""


class TestAcquire:
    def test_grant_raises_total(self):
        res = run(parse(ACQUIRE_LOOP), [], budget=Fraction(0), policy=ALWAYS_GRANT)
        assert isinstance(res.outcome, Halt)
        assert res.outcome.value == 1
        assert res.outcome.total == 3
        assert res.outcome.consumed == 3

    def test_deny_keeps_total(self):
        res = run(parse(ACQUIRE_LOOP), [], budget=Fraction(0), policy=ALWAYS_DENY)
        assert isinstance(res.outcome, Halt)
        assert res.outcome.value == 0
        assert res.outcome.total == 0
        assert res.outcome.consumed == 0

    def test_script_cycles(self):
        src = """
proc main() {
  0: iconst 1
  1: acquire
  2: iconst 1
  3: acquire
  4: iconst 1
  5: acquire
  6: ibinop add
  7: ibinop add
  8: return
}
entry main
"""
        res = run(parse(src), [], budget=Fraction(0), policy=parse_policy("grant,deny"))
        # grants: yes, no, yes (cycled) -> 1 + 0 + 1
        assert res.outcome.value == 2
        assert res.outcome.total == 2

    def test_seeded_policy_deterministic(self):
        r1 = run(parse(ACQUIRE_LOOP), [], budget=Fraction(0), policy=AcquisitionPolicy.seeded(11))
        r2 = run(parse(ACQUIRE_LOOP), [], budget=Fraction(0), policy=AcquisitionPolicy.seeded(11))
        assert r1.outcome == r2.outcome

    def test_policy_parse_rejects_garbage(self):
        with pytest.raises(VmError):
            parse_policy("grant,sometimes")


class TestProperties:
    def test_determinism(self):
        src = """
proc main(n:int) locals i:int {
  invariant 3: emp
  0: iconst 0
  1: store i
  2: goto 3
  3: load i
  4: load n
  5: binarycmp ge 12
  6: consume 1
  7: load i
  8: iconst 1
  9: ibinop add
  10: store i
  11: goto 3
  12: iconst 0
  13: return
}
entry main
"""
        prog = parse(src)
        runs = [run(prog, [6], budget=Fraction(6), trace=True) for _ in range(2)]
        assert runs[0].outcome == runs[1].outcome
        assert runs[0].steps == runs[1].steps
        assert [s.consumed for s in runs[0].states] == [s.consumed for s in runs[1].states]

    def test_consumed_monotone_and_total_constant_without_acquire(self):
        src = "proc main() {\n 0: consume 1\n 1: consume 1/2\n 2: iconst 0\n 3: return\n}\nentry main"
        res = run(parse(src), [], budget=Fraction(5), trace=True)
        consumed = [s.consumed for s in res.states]
        assert consumed == sorted(consumed)
        assert {s.total_allowed for s in res.states} == {Fraction(5)}

    def test_frame_locality_of_mutation(self):
        # a putfield touches exactly the named cell
        src = """
proc main() locals a:ref, b:ref {
  0: new {data:int, next:ref}
  1: store a
  2: new {data:int, next:ref}
  3: store b
  4: iconst 5
  5: load a
  6: putfield data
  7: iconst 0
  8: return
}
entry main
"""
        res = run(parse(src), [], budget=Fraction(0), trace=True)
        assert isinstance(res.outcome, Halt)
        before = res.states[6].heap  # state just before the putfield
        after = res.states[7].heap
        changed = {c for c in before if before[c] != after.get(c, object())}
        a = res.states[6].frames[0].stack[0]
        assert changed == {(a, "data")}
        assert set(before) == set(after)

    def test_new_never_reuses_addresses(self):
        src = """
proc main() locals a:ref {
  0: new {data:int, next:ref}
  1: store a
  2: load a
  3: free {data:int, next:ref}
  4: new {data:int, next:ref}
  5: store a
  6: iconst 0
  7: return
}
entry main
"""
        res = run(parse(src), [], budget=Fraction(0), trace=True)
        first = res.states[1].frames[0].stack[0]
        final = res.states[6].frames[0].locals[0]
        assert first != final
