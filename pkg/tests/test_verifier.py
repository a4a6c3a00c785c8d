"""Static checker: what must load, what must not, and why."""

import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blegate.policies import default_rules
from blegate.vm import isa
from blegate.vm.ctx import CTX_DC_BASE, CTX_MAX_SIZE
from blegate.vm.isa import Asm, Label
from blegate.vm.verifier import VerifierError, verify_bytecode


def _verify(code: bytes):
    return verify_bytecode(code)


def _expect(code: bytes, fragment: str):
    with pytest.raises(VerifierError) as err:
        _verify(code)
    assert fragment in str(err.value), str(err.value)


def _trivial(verdict: int = 0) -> Asm:
    a = Asm()
    a.mov_imm(0, verdict)
    a.exit_()
    return a


def test_trivial_pass_program():
    analysis = _verify(_trivial().assemble())
    assert analysis.worst_case_instructions == 2
    assert analysis.loop_bounds == {}


def test_every_shipped_rule_verifies():
    for program in default_rules():
        analysis = verify_bytecode(program.bytecode)
        assert analysis.worst_case_instructions <= isa.EXECUTION_BUDGET


def test_counted_loop_is_accepted_with_exact_bound():
    # oracle: counter 0, +1 per pass, continue while < 10  =>  body runs 10x;
    # 3 straight-line instructions + 10 passes x 2-instruction span = 23
    a = Asm()
    a.mov_imm(0, 0)
    a.mov_imm(1, 0)
    top = a.label(Label("top"))
    a.alu_imm(isa.ALU_ADD, 1, 1)
    a.jmp_imm(isa.JMP_JLT, 1, 10, top)
    a.exit_()
    analysis = _verify(a.assemble())
    assert analysis.loop_bounds == {(2, 3): 10}
    assert analysis.worst_case_instructions == 23


def test_loop_budget_overflow_rejected():
    a = Asm()
    a.mov_imm(0, 0)
    a.mov_imm(1, 0)
    top = a.label(Label("top"))
    a.alu_imm(isa.ALU_ADD, 1, 1)
    a.jmp_imm(isa.JMP_JLT, 1, 40000, top)   # 80k instructions, budget is 65536
    a.exit_()
    _expect(a.assemble(), "budget")


def test_unconditional_back_edge_rejected():
    a = Asm()
    a.mov_imm(0, 0)
    top = a.label(Label("top"))
    a.alu_imm(isa.ALU_ADD, 0, 1)
    a.ja(top)
    a.exit_()
    _expect(a.assemble(), "unbounded loop")


def test_register_bound_loop_rejected():
    a = Asm()
    a.mov_imm(0, 0)
    a.mov_imm(1, 0)
    a.mov_imm(2, 10)
    top = a.label(Label("top"))
    a.alu_imm(isa.ALU_ADD, 1, 1)
    a.jmp_reg(isa.JMP_JLT, 1, 2, top)       # bound lives in a register
    a.exit_()
    _expect(a.assemble(), "unbounded loop")


def test_counter_written_twice_rejected():
    a = Asm()
    a.mov_imm(0, 0)
    a.mov_imm(1, 0)
    top = a.label(Label("top"))
    a.alu_imm(isa.ALU_ADD, 1, 1)
    a.alu_imm(isa.ALU_SUB, 1, 1)
    a.jmp_imm(isa.JMP_JLT, 1, 10, top)
    a.exit_()
    _expect(a.assemble(), "unbounded loop")


def test_jne_needs_divisible_stride():
    a = Asm()
    a.mov_imm(0, 0)
    a.mov_imm(1, 0)
    top = a.label(Label("top"))
    a.alu_imm(isa.ALU_ADD, 1, 3)
    a.jmp_imm(isa.JMP_JNE, 1, 10, top)      # 3 never lands exactly on 10
    a.exit_()
    _expect(a.assemble(), "unbounded loop")
    b = Asm()
    b.mov_imm(0, 0)
    b.mov_imm(1, 0)
    top = b.label(Label("top"))
    b.alu_imm(isa.ALU_ADD, 1, 2)
    b.jmp_imm(isa.JMP_JNE, 1, 10, top)      # exact landing: 5 passes
    b.exit_()
    assert _verify(b.assemble()).loop_bounds == {(2, 3): 5}


def test_fall_off_the_end_rejected():
    a = Asm()
    a.mov_imm(0, 0)
    _expect(a.assemble(), "fall off the end")


def test_exit_with_uninitialized_r0_rejected():
    a = Asm()
    a.exit_()
    _expect(a.assemble(), "r0 uninitialized")


def test_read_of_uninitialized_register_rejected():
    a = Asm()
    a.mov_reg(0, 3)
    a.exit_()
    _expect(a.assemble(), "read before initialization")


def test_r10_is_read_only():
    a = Asm()
    a.mov_imm(0, 0)
    a.mov_imm(10, 4)
    a.exit_()
    _expect(a.assemble(), "r10 is read-only")


def test_store_into_context_rejected():
    a = Asm()
    a.st_imm(isa.SZ_DW, 1, 0, 7)            # r1 is the context pointer
    a.mov_imm(0, 0)
    a.exit_()
    _expect(a.assemble(), "read-only context")


def test_context_read_out_of_bounds():
    a = Asm()
    a.ldx(isa.SZ_DW, 0, 1, CTX_MAX_SIZE)    # one past the end
    a.exit_()
    _expect(a.assemble(), "out of bounds")


def test_context_read_in_bounds_accepted():
    a = Asm()
    a.ldx(isa.SZ_DW, 0, 1, CTX_DC_BASE + 8)
    a.exit_()
    assert _verify(a.assemble()).worst_case_instructions == 2


def test_stack_access_bounds():
    good = Asm()
    good.mov_imm(0, 0)
    good.stx(isa.SZ_DW, 10, -8, 0)
    good.ldx(isa.SZ_DW, 0, 10, -512)
    good.exit_()
    # reading uninitialized stack is allowed (zeroed), bounds are what matter
    _verify(good.assemble())

    bad = Asm()
    bad.mov_imm(0, 0)
    bad.stx(isa.SZ_DW, 10, -520, 0)
    bad.exit_()
    _expect(bad.assemble(), "stack access")

    positive = Asm()
    positive.mov_imm(0, 0)
    positive.stx(isa.SZ_DW, 10, 0, 0)       # at or above the frame top
    positive.exit_()
    _expect(positive.assemble(), "stack access")


def test_pointer_with_unknown_offset_rejected():
    a = Asm()
    a.ldx(isa.SZ_DW, 2, 1, 0x10)            # scalar with unknown runtime value
    a.alu_reg(isa.ALU_ADD, 1, 2)            # ctx + unknown
    a.ldx(isa.SZ_B, 0, 1, 0)
    a.exit_()
    _expect(a.assemble(), "not statically provable")


def test_unknown_helper_rejected():
    a = Asm()
    a.mov_imm(1, 0)
    a.call(99)
    a.exit_()
    _expect(a.assemble(), "not allowlisted")


def test_jump_out_of_range_rejected():
    ins = struct.pack("<BBhi", isa.CLS_JMP | isa.JMP_JA, 0, 40, 0)
    tail = Asm()
    tail.mov_imm(0, 0)
    tail.exit_()
    _expect(ins + tail.assemble(), "outside program")


def test_misaligned_program_rejected():
    _expect(_trivial().assemble() + b"\x00\x01\x02", "multiple of 8")


def test_empty_program_rejected():
    _expect(b"", "empty program")


def test_too_many_instructions_rejected():
    body = struct.pack("<BBhi", isa.CLS_ALU64 | isa.SRC_K | isa.ALU_MOV, 0, 0, 0)
    _expect(body * 4097, "limit")


def test_no_reachable_exit_rejected():
    a = Asm()
    top = a.label(Label("top"))
    a.ja(top)
    _expect(a.assemble(), "unbounded loop")


def test_nonzero_fields_rejected():
    # an immediate ALU whose src nibble is set smells like a different encoding
    ins = struct.pack("<BBhi", isa.CLS_ALU64 | isa.SRC_K | isa.ALU_MOV, 0x10, 0, 1)
    tail = struct.pack("<BBhi", isa.CLS_JMP | isa.JMP_EXIT, 0, 0, 0)
    _expect(ins + tail, "names a source register")


def test_call_clobbers_caller_saved_registers():
    a = Asm()
    a.mov_imm(1, 1)                          # helper argument
    a.call(isa.HELPER_SESSION_TICK)
    a.mov_reg(2, 1)                          # r1 died at the call site
    a.exit_()
    _expect(a.assemble(), "read before initialization")


@given(st.binary(min_size=0, max_size=512))
@settings(max_examples=400)
def test_verifier_is_total(blob):
    """Random bytes either produce an Analysis or a VerifierError."""
    try:
        analysis = verify_bytecode(blob)
    except VerifierError:
        return
    assert analysis.worst_case_instructions >= 1


@given(st.integers(1, 200), st.integers(1, 8))
@settings(max_examples=120)
def test_counted_loops_bound_matches_oracle(bound, step):
    """Iteration counts agree with direct simulation of the counter."""
    a = Asm()
    a.mov_imm(0, 0)
    a.mov_imm(1, 0)
    top = a.label(Label("top"))
    a.alu_imm(isa.ALU_ADD, 1, step)
    a.jmp_imm(isa.JMP_JLT, 1, bound, top)
    a.exit_()
    counter, iters = 0, 0
    while True:
        counter += step
        iters += 1
        if not counter < bound:
            break
    analysis = verify_bytecode(a.assemble())
    assert analysis.loop_bounds == {(2, 3): iters}
    assert analysis.worst_case_instructions == 3 + 2 * iters
