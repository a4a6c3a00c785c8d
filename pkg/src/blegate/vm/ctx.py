"""Context block ABI.

The engine flattens everything a policy program may inspect into one
read-only buffer handed to the VM in r1:

    0x000  current_state   u64   (effective session state)
    0x008  event_kind      u64
    0x010  pkt_len         u64
    0x018  dc_param[32]    u64 each, slot indices below
    0x118  pkt bytes       raw PDU as seen at the hook, pkt_len bytes

All u64 little-endian.  Programs address dc_param as
``ctx + 0x18 + 8*slot``; slots an engine build does not populate read
as zero, which is also the documented missing-value default in the
rule language.  The slot table is a wire ABI shared with the external
toolchain; append only, never renumber.
"""

from __future__ import annotations

import enum
import struct

CTX_STATE = 0x00
CTX_EVENT = 0x08
CTX_PKT_LEN = 0x10
CTX_DC_BASE = 0x18
NUM_DC_SLOTS = 32
CTX_PKT_BASE = CTX_DC_BASE + 8 * NUM_DC_SLOTS
MAX_PKT_BYTES = 260
CTX_MAX_SIZE = CTX_PKT_BASE + MAX_PKT_BYTES


class Hook(enum.IntEnum):
    """Mediation points a policy program can attach to."""

    LL_RX_CTRL = 0   # advertising PDUs pre-connection, LL control PDUs after
    LL_RX_DATA = 1   # inbound data-channel L2CAP traffic
    LL_TX = 2        # outbound traffic of any kind
    SMP_RX = 3       # inbound pairing-protocol PDUs (decoded from L2CAP)
    SMP_TX = 4       # outbound pairing-protocol PDUs

    @classmethod
    def parse(cls, text: str) -> "Hook":
        return cls[text.upper()] if not text.isdigit() else cls(int(text))


HOOK_ANY = 0xFF
EVENT_ANY = 0xFF
STATE_ANY = 0xFF


class Slot(enum.IntEnum):
    """dc_param slot indices."""

    SMP_KEYS = 0              # recorded bond key-type flags
    SMP_KEYS_FLAGS = 1        # recorded bond property flags (AUTHENTICATED)
    SMP_ENC_SIZE = 2          # key size claimed by the pairing in progress
    SMP_ENC_SIZE_PREV = 3     # key size recorded in the bond
    SMP_METHOD = 4            # association method in progress
    SMP_METHOD_PREV = 5       # association method recorded in the bond
    PEER_BONDED = 6
    ATTR_SEC_LEVEL = 7        # security level of the attribute access in flight
    ATTR_SEC_LEVEL_PREV = 8   # level recorded for that handle in the bond
    REPEAT_COUNT = 9          # prior byte-identical sightings this window
    INTERVAL = 10
    CHANNEL_MAP_POPCOUNT = 11
    HOP = 12
    PKT_KIND = 13             # LlKind code (header-derived, survives decode errors)
    SMP_OPCODE = 14
    DECODE_ERROR = 15         # 0 ok / 1 truncated / 2 oversized / 3 illegal field
    REPEAT_THRESHOLD = 16     # config: occurrences at which repeats reject
    STRICT_KEYSIZE = 17       # config: reject any keysize change, not just cuts
    PUBKEY_COUNT = 18         # public-key PDUs seen this window
    DHKEY_COUNT = 19          # DH-key checks seen this window
    PIN_KEY_MISSING = 20      # peer claimed "PIN or key missing" this window
    ATT_OPCODE = 21
    ATT_HANDLE = 22
    REFLECTED = 23            # payload mirrors our own last TX of same opcode
    L2CAP_CID = 24
    HOOK = 25


# key-type flag values kept compatible with the recorded-bond checks the
# shipped policies encode (LTK bit 2, LTK_P256 bit 5, AUTHENTICATED bit 0)
KEY_FLAG_AUTHENTICATED = 0x01
KEY_TYPE_LTK = 0x04
KEY_TYPE_LTK_P256 = 0x20


def build_context(state: int, event: int, pkt: bytes, dc: dict) -> bytes:
    """Pack one context block; `dc` maps Slot (or int) to value."""
    if len(pkt) > MAX_PKT_BYTES:
        pkt = pkt[:MAX_PKT_BYTES]
    buf = bytearray(CTX_PKT_BASE + len(pkt))
    struct.pack_into("<QQQ", buf, 0, state, event, len(pkt))
    for slot, value in dc.items():
        struct.pack_into("<Q", buf, CTX_DC_BASE + 8 * int(slot), int(value) & (2**64 - 1))
    buf[CTX_PKT_BASE:] = pkt
    return bytes(buf)


def read_slot(ctx: bytes, slot: int) -> int:
    return struct.unpack_from("<Q", ctx, CTX_DC_BASE + 8 * int(slot))[0]
