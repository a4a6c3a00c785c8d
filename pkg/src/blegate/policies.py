"""Default detection rules and attack paths, expressed as deployable
policy containers.

Each rule is a tiny fail-closed program: a chain of guards that jumps
to PASS the moment the packet stops matching, with REJECT as the fall
through.  Rules read only the context block, the engine owns all state
derivation, so a rule can be hot-swapped without touching the engine.
"""

from __future__ import annotations

from pathlib import Path

from .fsm import MaliciousPath, SessionState, format_path, parse_path
from .vm import Hook, PolicyProgram, Slot
from .vm import isa
from .vm.ctx import CTX_DC_BASE, KEY_FLAG_AUTHENTICATED, STATE_ANY
from .vm.store import CONTAINER_SUFFIX

__all__ = ["default_rules", "default_paths", "write_policies", "load_paths",
           "PATH_SUFFIX"]

PATH_SUFFIX = ".path"

_KIND_CONNECT_IND = 4
_KIND_CONN_PARAM_REQ = 5
_KIND_FEATURE_REQ = 6
_KIND_LENGTH_REQ = 7
_KIND_SCAN_REQ = 2
_KIND_DATA_L2CAP = 11
_SMP_PAIRING_REQUEST = 1
_SMP_CONFIRM = 3
_SMP_RANDOM = 4
_SMP_PUBLIC_KEY = 0x0C
_ATT_READ_REQUEST = 0x0A
_ATT_WRITE_REQUEST = 0x12
_SCAN_FLOOD_AT = 8


class _Rule:
    """Assembler wrapper with slot loads and a shared PASS tail."""

    def __init__(self):
        self.asm = isa.Asm()
        self.pass_lbl = isa.Label("pass")

    def load(self, reg: int, slot: Slot) -> None:
        self.asm.ldx(isa.SZ_DW, reg, 1, CTX_DC_BASE + 8 * int(slot))

    def pass_if(self, op: int, reg: int, imm: int) -> None:
        self.asm.jmp_imm(op, reg, imm, self.pass_lbl)

    def finish_reject(self) -> bytes:
        """Fall-through rejects; the PASS label accepts."""
        self.asm.mov_imm(0, isa.VERDICT_REJECT)
        self.asm.exit_()
        self.asm.label(self.pass_lbl)
        self.asm.mov_imm(0, isa.VERDICT_PASS)
        self.asm.exit_()
        return self.asm.assemble()

    def repeat_guard(self, threshold_slot: bool = True, at: int = 0) -> None:
        """PASS while occurrences (prior + this one) stay under threshold."""
        self.load(3, Slot.REPEAT_COUNT)
        self.asm.alu_imm(isa.ALU_ADD, 3, 1)
        if threshold_slot:
            self.load(4, Slot.REPEAT_THRESHOLD)
            self.asm.jmp_reg(isa.JMP_JLT, 3, 4, self.pass_lbl)
        else:
            self.pass_if(isa.JMP_JLT, 3, at)


def _interval_zero() -> bytes:
    r = _Rule()
    r.load(2, Slot.PKT_KIND)
    r.pass_if(isa.JMP_JNE, 2, _KIND_CONNECT_IND)
    r.load(2, Slot.DECODE_ERROR)
    r.pass_if(isa.JMP_JNE, 2, 0)
    r.load(2, Slot.INTERVAL)
    r.pass_if(isa.JMP_JNE, 2, 0)
    return r.finish_reject()


def _malformed() -> bytes:
    r = _Rule()
    r.load(2, Slot.DECODE_ERROR)
    r.pass_if(isa.JMP_JEQ, 2, 0)
    return r.finish_reject()


def _invalid_cid() -> bytes:
    r = _Rule()
    r.load(2, Slot.DECODE_ERROR)
    r.pass_if(isa.JMP_JNE, 2, 0)
    r.load(2, Slot.PKT_KIND)
    r.pass_if(isa.JMP_JNE, 2, _KIND_DATA_L2CAP)
    r.load(2, Slot.L2CAP_CID)
    r.pass_if(isa.JMP_JNE, 2, 0)
    return r.finish_reject()


def _dup_ctrl(kind: int) -> bytes:
    r = _Rule()
    r.load(2, Slot.PKT_KIND)
    r.pass_if(isa.JMP_JNE, 2, kind)
    r.load(2, Slot.DECODE_ERROR)
    r.pass_if(isa.JMP_JNE, 2, 0)
    r.repeat_guard()
    return r.finish_reject()


def _scan_flood() -> bytes:
    r = _Rule()
    r.load(2, Slot.PKT_KIND)
    r.pass_if(isa.JMP_JNE, 2, _KIND_SCAN_REQ)
    r.repeat_guard(threshold_slot=False, at=_SCAN_FLOOD_AT)
    return r.finish_reject()


def _pairing_replay() -> bytes:
    r = _Rule()
    r.load(2, Slot.SMP_OPCODE)
    reject_check = isa.Label("check")
    r.asm.jmp_imm(isa.JMP_JEQ, 2, _SMP_CONFIRM, reject_check)
    r.pass_if(isa.JMP_JNE, 2, _SMP_RANDOM)
    r.asm.label(reject_check)
    r.repeat_guard()
    return r.finish_reject()


def _seq_public_keys() -> bytes:
    r = _Rule()
    r.load(2, Slot.SMP_OPCODE)
    r.pass_if(isa.JMP_JNE, 2, _SMP_PUBLIC_KEY)
    r.load(2, Slot.PUBKEY_COUNT)
    r.pass_if(isa.JMP_JLT, 2, 2)
    return r.finish_reject()


def _keysize_history() -> bytes:
    r = _Rule()
    r.load(2, Slot.SMP_OPCODE)
    r.pass_if(isa.JMP_JNE, 2, _SMP_PAIRING_REQUEST)
    r.load(2, Slot.PEER_BONDED)
    r.pass_if(isa.JMP_JEQ, 2, 0)
    reject = isa.Label("reject")
    r.load(2, Slot.SMP_ENC_SIZE)
    r.load(3, Slot.SMP_ENC_SIZE_PREV)
    r.asm.jmp_reg(isa.JMP_JLT, 2, 3, reject)
    r.load(4, Slot.STRICT_KEYSIZE)
    r.pass_if(isa.JMP_JEQ, 4, 0)
    r.asm.jmp_reg(isa.JMP_JEQ, 2, 3, r.pass_lbl)
    r.asm.label(reject)
    return r.finish_reject()


def _method_downgrade() -> bytes:
    r = _Rule()
    r.load(2, Slot.SMP_OPCODE)
    r.pass_if(isa.JMP_JNE, 2, _SMP_PAIRING_REQUEST)
    r.load(2, Slot.PEER_BONDED)
    r.pass_if(isa.JMP_JEQ, 2, 0)
    r.load(2, Slot.SMP_KEYS_FLAGS)
    r.asm.alu_imm(isa.ALU_AND, 2, KEY_FLAG_AUTHENTICATED)
    r.pass_if(isa.JMP_JEQ, 2, 0)
    r.load(2, Slot.SMP_METHOD)
    r.pass_if(isa.JMP_JNE, 2, 0)  # only a fall to Just Works is a downgrade
    return r.finish_reject()


def _reflection_guard() -> bytes:
    r = _Rule()
    r.load(2, Slot.REFLECTED)
    r.pass_if(isa.JMP_JEQ, 2, 0)
    return r.finish_reject()


def _attr_level_history() -> bytes:
    r = _Rule()
    r.load(2, Slot.PEER_BONDED)
    r.pass_if(isa.JMP_JEQ, 2, 0)
    check = isa.Label("check")
    r.load(2, Slot.ATT_OPCODE)
    r.asm.jmp_imm(isa.JMP_JEQ, 2, _ATT_READ_REQUEST, check)
    r.pass_if(isa.JMP_JNE, 2, _ATT_WRITE_REQUEST)
    r.asm.label(check)
    r.load(2, Slot.ATTR_SEC_LEVEL)
    r.load(3, Slot.ATTR_SEC_LEVEL_PREV)
    r.asm.jmp_reg(isa.JMP_JGE, 2, 3, r.pass_lbl)
    return r.finish_reject()


def _pin_key_missing_rw() -> bytes:
    r = _Rule()
    r.load(2, Slot.PIN_KEY_MISSING)
    r.pass_if(isa.JMP_JEQ, 2, 0)
    check = isa.Label("check")
    r.load(2, Slot.ATT_OPCODE)
    r.asm.jmp_imm(isa.JMP_JEQ, 2, _ATT_READ_REQUEST, check)
    r.pass_if(isa.JMP_JNE, 2, _ATT_WRITE_REQUEST)
    r.asm.label(check)
    return r.finish_reject()


def default_rules() -> list:
    """The shipped rule set; every entry passes the verifier."""
    ks = int(SessionState.KEY_SHARING)
    conn = int(SessionState.LL_CONNECTION)
    disco = int(SessionState.DISCOVERY)
    return [
        PolicyProgram("interval-zero", Hook.LL_RX_CTRL, _interval_zero()),
        PolicyProgram("malformed-ctrl", Hook.LL_RX_CTRL, _malformed()),
        PolicyProgram("malformed-data", Hook.LL_RX_DATA, _malformed()),
        PolicyProgram("invalid-cid", Hook.LL_RX_DATA, _invalid_cid()),
        PolicyProgram("dup-feature-req", Hook.LL_RX_CTRL,
                      _dup_ctrl(_KIND_FEATURE_REQ), state=conn),
        PolicyProgram("dup-conn-param", Hook.LL_RX_CTRL,
                      _dup_ctrl(_KIND_CONN_PARAM_REQ), state=conn),
        PolicyProgram("dup-length-req", Hook.LL_RX_CTRL,
                      _dup_ctrl(_KIND_LENGTH_REQ), state=conn),
        PolicyProgram("scan-flood", Hook.LL_RX_CTRL, _scan_flood(), state=disco),
        PolicyProgram("pairing-replay", Hook.SMP_RX, _pairing_replay(), state=ks),
        PolicyProgram("seq-public-keys", Hook.SMP_RX, _seq_public_keys(), state=ks),
        PolicyProgram("keysize-history", Hook.SMP_RX, _keysize_history(), state=ks),
        PolicyProgram("method-downgrade", Hook.SMP_RX, _method_downgrade(), state=ks),
        PolicyProgram("reflection-guard", Hook.SMP_RX, _reflection_guard(), state=ks),
        PolicyProgram("attr-level-hist", Hook.LL_RX_DATA, _attr_level_history()),
        PolicyProgram("pin-key-miss-rw", Hook.LL_RX_DATA, _pin_key_missing_rw(),
                      state=ks),
    ]


_KNOB_PATH = """\
id knob-weak-key
sink PAIRING_EXPLOITATION
step STANDBY session_init
step DISCOVERY ADVERTISING_STARTED
step LL_CONNECTION bonded_peer
step KEY_SHARING keysize_reduction
step KEY_SHARING PAIRING_STARTED
"""

_ENC_SKIP_DHKEY_PATH = """\
id enc-skip-dhkey
sink PAIRING_EXPLOITATION
step KEY_SHARING PAIRING_STARTED
step KEY_SHARING smp_public_key
step DATA_EXCHANGE enc_before_dhkey
"""


def default_paths() -> list:
    return [parse_path(_KNOB_PATH, name="knob-weak-key"),
            parse_path(_ENC_SKIP_DHKEY_PATH, name="enc-skip-dhkey")]


def write_policies(directory) -> list:
    """Write the default rules and paths as loadable files; returns paths."""
    from .vm.program import encode_container

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for program in default_rules():
        target = directory / f"{program.program_id}{CONTAINER_SUFFIX}"
        target.write_bytes(encode_container(program))
        written.append(target)
    for path in default_paths():
        target = directory / f"{path.path_id}{PATH_SUFFIX}"
        target.write_text(format_path(path), encoding="utf-8")
        written.append(target)
    return written


def load_paths(directory) -> list:
    """Parse every attack-path file under `directory`."""
    paths = []
    for entry in sorted(Path(directory).glob(f"*{PATH_SUFFIX}")):
        paths.append(parse_path(entry.read_text(encoding="utf-8"), name=entry.name))
    return paths
