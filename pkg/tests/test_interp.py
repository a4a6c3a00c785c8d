"""Execution semantics, backend parity, and runtime containment."""

import random
import struct

import pytest

from blegate.vm import BACKEND, available_backends, interp, isa, run_with_backend
from blegate.vm.ctx import CTX_PKT_BASE, build_context
from blegate.vm.isa import Asm, Label
from blegate.vm.maps import MapSet
from blegate.vm.runtime import RuntimeFault, VmHelpers

_HAS_NATIVE = "native" in available_backends()


def _run(code: bytes, ctx: bytes = b"", helpers=None, budget: int = 65536):
    return interp.run(code, ctx, helpers or VmHelpers(), budget)


def _run_native(code: bytes, ctx: bytes = b"", helpers=None, budget: int = 65536):
    return run_with_backend("native", code, ctx, helpers or VmHelpers(), budget)


def _both(code: bytes, ctx: bytes = b"", budget: int = 65536):
    """Run on every backend; fault reasons and results must agree."""
    outcomes = []
    for backend in available_backends():
        try:
            r0, executed = run_with_backend(backend, code, ctx, VmHelpers(), budget)
            outcomes.append(("ok", r0, executed))
        except RuntimeFault as fault:
            outcomes.append(("fault", fault.reason, None))
    assert all(o == outcomes[0] for o in outcomes), outcomes
    return outcomes[0]


def _ok(code: bytes, ctx: bytes = b"", budget: int = 65536):
    kind, r0, executed = _both(code, ctx, budget)
    assert kind == "ok", r0
    return r0, executed


def _program(build) -> bytes:
    a = Asm()
    build(a)
    a.exit_()
    return a.assemble()


# -- arithmetic golden values -------------------------------------------------------

U64 = 2 ** 64


@pytest.mark.parametrize("op,lhs,rhs,expected", [
    (isa.ALU_ADD, 7, 5, 12),
    (isa.ALU_ADD, U64 - 1, 2, 1),                      # wraps
    (isa.ALU_SUB, 3, 5, U64 - 2),
    (isa.ALU_MUL, 0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFE00000001),
    (isa.ALU_DIV, 100, 7, 14),
    (isa.ALU_DIV, 100, 0, 0),                          # division by zero yields 0
    (isa.ALU_MOD, 100, 7, 2),
    (isa.ALU_MOD, 100, 0, 100),                        # modulo zero keeps the dividend
    (isa.ALU_OR, 0xF0, 0x0F, 0xFF),
    (isa.ALU_AND, 0xFF, 0x0F, 0x0F),
    (isa.ALU_XOR, 0xFF, 0x0F, 0xF0),
    (isa.ALU_LSH, 1, 63, 1 << 63),
    (isa.ALU_LSH, 1, 64, 1),                           # shift masked to 6 bits
    (isa.ALU_RSH, 1 << 63, 63, 1),
    (isa.ALU_ARSH, U64 - 8, 2, U64 - 2),               # sign-preserving
])
def test_alu64_semantics(op, lhs, rhs, expected):
    def build(a: Asm):
        _load_const(a, 0, lhs)
        _load_const(a, 1, rhs)
        a.alu_reg(op, 0, 1)
    r0, _ = _ok(_program(build))
    assert r0 == expected


def _load_const(a: Asm, reg: int, value: int) -> None:
    """Build an arbitrary u64 from 16-bit chunks (no wide-immediate form)."""
    a.mov_imm(reg, 0)
    for shift in (48, 32, 16, 0):
        chunk = (value >> shift) & 0xFFFF
        a.alu_imm(isa.ALU_LSH, reg, 16)
        if chunk:
            a.alu_imm(isa.ALU_OR, reg, chunk)


def test_mov_imm_sign_extends():
    def build(a: Asm):
        a.mov_imm(0, -1)
    r0, _ = _ok(_program(build))
    assert r0 == U64 - 1


def test_alu32_zero_extends():
    def build(a: Asm):
        a.mov_imm(0, -1)                      # all ones
        a._emit(isa.CLS_ALU | isa.SRC_K | isa.ALU_ADD, 0, imm=1)   # 32-bit add
    r0, _ = _ok(_program(build))
    assert r0 == 0                            # low word wrapped, high cleared


def test_alu32_mod_zero_zero_extends_dividend():
    def build(a: Asm):
        a.mov_imm(0, -1)
        a._emit(isa.CLS_ALU | isa.SRC_K | isa.ALU_MOD, 0, imm=0)
    r0, _ = _ok(_program(build))
    assert r0 == 0xFFFFFFFF


def test_neg64():
    def build(a: Asm):
        a.mov_imm(0, 5)
        a._emit(isa.CLS_ALU64 | isa.ALU_NEG, 0)
    r0, _ = _ok(_program(build))
    assert r0 == U64 - 5


# -- control flow ---------------------------------------------------------------------

def test_jset_taken_and_not_taken():
    def build(taken: bool):
        def _b(a: Asm):
            a.mov_imm(0, 0)
            a.mov_imm(1, 0b1010)
            done = Label("done")
            a.jmp_imm(isa.JMP_JSET, 1, 0b0010 if taken else 0b0101, done)
            a.mov_imm(0, 7)
            a.label(done)
        return _b
    assert _ok(_program(build(True)))[0] == 0
    assert _ok(_program(build(False)))[0] == 7


def test_signed_compare_on_negative():
    def build(a: Asm):
        a.mov_imm(0, 0)
        a.mov_imm(1, -5)
        neg = Label("neg")
        a.jmp_imm(isa.JMP_JSGT, 1, -10, neg)   # -5 > -10 signed: taken
        a.mov_imm(0, 1)
        a.label(neg)
    assert _ok(_program(build))[0] == 0


def test_unsigned_compare_sees_negative_as_huge():
    def build(a: Asm):
        a.mov_imm(0, 0)
        a.mov_imm(1, -5)                        # 0xFFFF...FFFB
        big = Label("big")
        a.jmp_imm(isa.JMP_JGT, 1, 100, big)     # unsigned: taken
        a.mov_imm(0, 1)
        a.label(big)
    assert _ok(_program(build))[0] == 0


def test_loop_execution_count_matches_verifier_worst_case():
    from blegate.vm.verifier import verify_bytecode
    a = Asm()
    a.mov_imm(0, 0)
    a.mov_imm(1, 0)
    top = a.label(Label("top"))
    a.alu_imm(isa.ALU_ADD, 1, 1)
    a.jmp_imm(isa.JMP_JLT, 1, 10, top)
    a.exit_()
    code = a.assemble()
    analysis = verify_bytecode(code)
    _, executed = _ok(code)
    # 3 straight-line + 10 passes x 2: the static bound is exact here
    assert executed == analysis.worst_case_instructions == 23


# -- memory ----------------------------------------------------------------------------

def test_context_loads_all_sizes():
    ctx = build_context(0x1122, 0x33, b"\xAA\xBB\xCC\xDD", {0: 0x0123456789ABCDEF})
    cases = [
        (isa.SZ_DW, 0x18, 0x0123456789ABCDEF),
        (isa.SZ_W, 0x18, 0x89ABCDEF),
        (isa.SZ_H, 0x18, 0xCDEF),
        (isa.SZ_B, 0x18, 0xEF),
        (isa.SZ_W, CTX_PKT_BASE, 0xDDCCBBAA),
    ]
    for size, off, expected in cases:
        def build(a: Asm, size=size, off=off):
            a.ldx(size, 0, 1, off)
        r0, _ = _ok(_program(build), ctx)
        assert r0 == expected, (size, off)


def test_stack_store_load_round_trip():
    def build(a: Asm):
        a.mov_imm(0, -2)
        a.stx(isa.SZ_DW, 10, -16, 0)
        a.mov_imm(0, 0)
        a.ldx(isa.SZ_DW, 0, 10, -16)
    r0, _ = _ok(_program(build))
    assert r0 == U64 - 2


def test_st_imm_to_stack():
    def build(a: Asm):
        a.st_imm(isa.SZ_W, 10, -4, 0x11223344)
        a.ldx(isa.SZ_W, 0, 10, -4)
    r0, _ = _ok(_program(build))
    assert r0 == 0x11223344


def test_out_of_bounds_reads_fault_identically():
    for off in (-1, 10_000, -600):
        def build(a: Asm, off=off):
            a.ldx(isa.SZ_DW, 0, 1, off)
        kind, detail, _ = _both(_program(build), b"\x00" * 16)
        assert kind == "fault"
        assert "out-of-bounds read" in detail


def test_stack_overflow_write_faults():
    def build(a: Asm):
        a.mov_imm(0, 1)
        a.stx(isa.SZ_DW, 10, -520, 0)
    kind, detail, _ = _both(_program(build))
    assert kind == "fault" and "out-of-bounds write" in detail


def test_pointer_escape_via_arithmetic_is_contained():
    """ctx pointer plus a huge offset must fault, not read host memory."""
    def build(a: Asm):
        a.mov_imm(2, 0x7FFFFFFF)
        a.alu_reg(isa.ALU_ADD, 1, 2)
        a.alu_reg(isa.ALU_ADD, 1, 2)
        a.ldx(isa.SZ_DW, 0, 1, 0)
    kind, detail, _ = _both(_program(build), b"\x00" * 32)
    assert kind == "fault" and "out-of-bounds read" in detail


# -- faults and containment --------------------------------------------------------------

def test_budget_exhaustion():
    def build(a: Asm):
        a.mov_imm(0, 0)
        top = a.label(Label("top"))
        a.alu_imm(isa.ALU_ADD, 0, 1)
        a.ja(top)
    kind, detail, _ = _both(_program(build), budget=1000)
    assert kind == "fault" and "budget" in detail


def test_fall_off_end_faults_at_runtime():
    code = _program(lambda a: a.mov_imm(0, 0))[:-8]   # strip the exit
    kind, detail, _ = _both(code)
    assert kind == "fault" and "out of bounds" in detail


def test_illegal_opcode_faults():
    # 0xD7 sits in the ALU64 class beyond the last assigned operation
    code = struct.pack("<BBhi", 0xD7, 0, 0, 0)
    kind, detail, _ = _both(code)
    assert kind == "fault" and "illegal instruction" in detail


def test_high_register_nibbles_do_not_crash():
    # unverified bytecode may name r11..r15; execution must stay contained
    for dst in range(11, 16):
        code = struct.pack("<BBhi", isa.CLS_ALU64 | isa.SRC_K | isa.ALU_MOV, dst, 0, 1)
        code += struct.pack("<BBhi", isa.CLS_JMP | isa.JMP_EXIT, 0, 0, 0)
        _both(code)   # parity is the assertion


def test_misaligned_code_rejected_before_execution():
    with pytest.raises(ValueError):
        interp.run(b"\x00" * 9, b"", VmHelpers(), 100)
    if _HAS_NATIVE:
        with pytest.raises(ValueError):
            _run_native(b"\x00" * 9)


# -- helpers ------------------------------------------------------------------------------

def _scratch_helpers() -> VmHelpers:
    maps = MapSet()
    maps.create("scratch", 2, max_entries=8)
    return VmHelpers(maps)


def test_map_put_get_delete_round_trip():
    def build(a: Asm):
        a.mov_imm(1, 2)         # map id
        a.mov_imm(2, 41)        # key
        a.mov_imm(3, 1234)      # value
        a.call(isa.HELPER_MAP_PUT)
        a.mov_imm(1, 2)
        a.mov_imm(2, 41)
        a.call(isa.HELPER_MAP_GET)
    for backend in available_backends():
        r0, _ = run_with_backend(backend, _program(build), b"", _scratch_helpers(), 1000)
        assert r0 == 1234, backend


def test_map_get_absent_yields_zero_and_delete_reports():
    def build(a: Asm):
        a.mov_imm(1, 2)
        a.mov_imm(2, 99)
        a.call(isa.HELPER_MAP_GET)
        a.mov_reg(6, 0)
        a.mov_imm(1, 2)
        a.mov_imm(2, 99)
        a.call(isa.HELPER_MAP_DELETE)
        a.alu_reg(isa.ALU_ADD, 0, 6)
    for backend in available_backends():
        r0, _ = run_with_backend(backend, _program(build), b"", _scratch_helpers(), 1000)
        assert r0 == 1, backend             # get -> 0, delete absent -> 1


def test_helper_call_zeroes_argument_registers():
    def build(a: Asm):
        a.mov_imm(1, 7)
        a.mov_imm(2, 7)
        a.call(isa.HELPER_SESSION_TICK)
        a.alu_reg(isa.ALU_ADD, 0, 1)        # r1..r5 were cleared by the call
        a.alu_reg(isa.ALU_ADD, 0, 2)
    for backend in available_backends():
        r0, _ = run_with_backend(backend, _program(build), b"", _scratch_helpers(), 1000)
        assert r0 == 1, backend             # first tick only


def test_session_tick_monotonic():
    def build(a: Asm):
        a.call(isa.HELPER_SESSION_TICK)
        a.call(isa.HELPER_SESSION_TICK)
        a.call(isa.HELPER_SESSION_TICK)
    r0, _ = _run(_program(build), helpers=_scratch_helpers())
    assert r0 == 3


def test_helper_fault_surfaces_as_runtime_fault():
    def build(a: Asm):
        a.mov_imm(1, 42)                     # no such map id
        a.mov_imm(2, 0)
        a.call(isa.HELPER_MAP_GET)
    for backend in available_backends():
        with pytest.raises(RuntimeFault) as err:
            run_with_backend(backend, _program(build), b"", _scratch_helpers(), 1000)
        assert "helper" in err.value.reason


# -- differential fuzzing -------------------------------------------------------------------

@pytest.mark.skipif(not _HAS_NATIVE, reason="single backend; nothing to compare")
def test_backend_parity_on_random_bytecode():
    rng = random.Random(0xB1E)
    ctx = build_context(3, 7, bytes(range(40)), {i: i * 3 for i in range(32)})
    for _ in range(3000):
        n = rng.randrange(1, 12)
        code = bytes(rng.getrandbits(8) for _ in range(8 * n))
        results = []
        for backend in available_backends():
            try:
                r0, executed = run_with_backend(backend, code, ctx, VmHelpers(), 400)
                results.append(("ok", r0, executed))
            except RuntimeFault as fault:
                results.append(("fault", fault.reason, fault.pc))
        assert results[0] == results[1], (code.hex(), results)
