"""Live policy updates over a framed management channel.

Frames are self-describing and integrity-checked, so a trailing
garbage byte or a flipped bit fails loudly instead of installing a
half-parsed program.  Program installation reuses the store's
all-or-nothing batch semantics: a batch that fails verification leaves
the running policy set untouched, byte for byte.

The transport is a Unix domain socket carrying one request frame per
connection.  Nothing here authenticates the peer beyond filesystem
permissions on the socket path; see the README for that caveat.
"""

from __future__ import annotations

import enum
import json
import socket
import socketserver
import struct
import zlib
from typing import Tuple

from .vm.maps import MapError
from .vm.program import ContainerError, decode_containers
from .vm.store import PolicyStore, StoreError

MAGIC = b"IFP1"
_HEAD = struct.Struct("<4sBI")
_CRC = struct.Struct("<I")

#: sanity cap; a policy batch is a few KiB, not megabytes
MAX_BODY = 1 << 20

RESPONSE_FLAG = 0x80


class PatchOp(enum.IntEnum):
    INSTALL_PROGRAM = 0x01
    REMOVE_PROGRAM = 0x02
    MAP_PUT = 0x03
    MAP_DELETE = 0x04
    LIST = 0x05
    PING = 0x06


class PatchStatus(enum.IntEnum):
    OK = 0x00
    BAD_FRAME = 0x01
    REJECTED = 0x02        # verifier or store refused the batch
    UNKNOWN_PROGRAM = 0x03
    MAP_ERROR = 0x04


class PatchError(Exception):
    """Malformed frame or a transport-level failure."""


def encode_frame(op: int, body: bytes = b"") -> bytes:
    if len(body) > MAX_BODY:
        raise PatchError(f"body of {len(body)} bytes exceeds {MAX_BODY}")
    head = _HEAD.pack(MAGIC, op, len(body))
    return head + body + _CRC.pack(zlib.crc32(head + body))


def decode_frame(buf: bytes) -> Tuple[int, bytes]:
    if len(buf) < _HEAD.size + _CRC.size:
        raise PatchError(f"frame of {len(buf)} bytes is shorter than the envelope")
    magic, op, body_len = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise PatchError("bad frame magic")
    if body_len > MAX_BODY:
        raise PatchError(f"declared body of {body_len} bytes exceeds {MAX_BODY}")
    end = _HEAD.size + body_len
    if len(buf) != end + _CRC.size:
        raise PatchError(f"frame declares {body_len} body bytes, carries {len(buf) - _HEAD.size - _CRC.size}")
    (stored,) = _CRC.unpack_from(buf, end)
    computed = zlib.crc32(buf[:end])
    if stored != computed:
        raise PatchError(f"frame CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")
    return op, buf[_HEAD.size:end]


# -- map argument packing ----------------------------------------------------------

_MAP_HEAD = struct.Struct("<BH")


def pack_map_put(map_id: int, key: bytes, value: bytes) -> bytes:
    return (_MAP_HEAD.pack(map_id, len(key)) + key
            + struct.pack("<H", len(value)) + value)


def pack_map_delete(map_id: int, key: bytes) -> bytes:
    return _MAP_HEAD.pack(map_id, len(key)) + key


def _unpack_map_body(body: bytes, with_value: bool):
    if len(body) < _MAP_HEAD.size:
        raise PatchError("map request body truncated")
    map_id, key_len = _MAP_HEAD.unpack_from(body)
    off = _MAP_HEAD.size
    key = body[off:off + key_len]
    if len(key) != key_len:
        raise PatchError("map key truncated")
    off += key_len
    if not with_value:
        if off != len(body):
            raise PatchError("trailing bytes after map key")
        return map_id, key, None
    if len(body) < off + 2:
        raise PatchError("map value length missing")
    (value_len,) = struct.unpack_from("<H", body, off)
    off += 2
    value = body[off:off + value_len]
    if len(value) != value_len or off + value_len != len(body):
        raise PatchError("map value truncated")
    return map_id, key, value


# -- request handling --------------------------------------------------------------

def handle_request(store: PolicyStore, op: int, body: bytes) -> Tuple[PatchStatus, bytes]:
    """Apply one management operation; never raises for bad input."""
    try:
        if op == PatchOp.INSTALL_PROGRAM:
            programs = decode_containers(body)
            store.install(programs)
            listing = json.dumps({"installed": [p.program_id for p in programs]})
            return PatchStatus.OK, listing.encode()
        if op == PatchOp.REMOVE_PROGRAM:
            program_id = body.decode("utf-8", errors="strict")
            if store.get(program_id) is None:
                return PatchStatus.UNKNOWN_PROGRAM, f"no program {program_id!r}".encode()
            store.remove(program_id)
            return PatchStatus.OK, b""
        if op == PatchOp.MAP_PUT:
            map_id, key, value = _unpack_map_body(body, with_value=True)
            store.maps.by_id(map_id).put(key, value)
            return PatchStatus.OK, b""
        if op == PatchOp.MAP_DELETE:
            map_id, key, _ = _unpack_map_body(body, with_value=False)
            found = store.maps.by_id(map_id).delete(key)
            return (PatchStatus.OK, b"") if found else (
                PatchStatus.MAP_ERROR, b"no such key")
        if op == PatchOp.LIST:
            listing = {
                "digest": store.digest(),
                "programs": [
                    {
                        "id": vp.program_id,
                        "hook": vp.program.hook,
                        "event": vp.program.event,
                        "state": vp.program.state,
                        "bytecode_len": len(vp.program.bytecode),
                        "worst_case_instructions": vp.worst_case_instructions,
                    }
                    for vp in store.dispatch().programs
                ],
            }
            return PatchStatus.OK, json.dumps(listing, sort_keys=True).encode()
        if op == PatchOp.PING:
            return PatchStatus.OK, body
        return PatchStatus.BAD_FRAME, f"unknown op {op:#04x}".encode()
    except (ContainerError, StoreError) as exc:
        return PatchStatus.REJECTED, str(exc).encode()
    except PatchError as exc:
        return PatchStatus.BAD_FRAME, str(exc).encode()
    except (MapError, KeyError, ValueError, UnicodeDecodeError) as exc:
        return PatchStatus.MAP_ERROR, str(exc).encode()


def handle_frame(store: PolicyStore, frame: bytes) -> bytes:
    """Frame-in, frame-out convenience used by both the server and tests."""
    try:
        op, body = decode_frame(frame)
    except PatchError as exc:
        return encode_frame(RESPONSE_FLAG, bytes([PatchStatus.BAD_FRAME]) + str(exc).encode())
    status, payload = handle_request(store, op, body)
    return encode_frame(op | RESPONSE_FLAG, bytes([status]) + payload)


# -- socket transport ---------------------------------------------------------------

def _read_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise PatchError(f"peer closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _read_frame(sock: socket.socket) -> bytes:
    head = _read_exact(sock, _HEAD.size)
    magic, _, body_len = _HEAD.unpack(head)
    if magic != MAGIC:
        raise PatchError("bad frame magic")
    if body_len > MAX_BODY:
        raise PatchError(f"declared body of {body_len} bytes exceeds {MAX_BODY}")
    return head + _read_exact(sock, body_len + _CRC.size)


class PatchServer(socketserver.ThreadingUnixStreamServer):
    """One request frame per connection against a shared policy store."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, socket_path: str, store: PolicyStore):
        self.store = store
        super().__init__(socket_path, _PatchHandler)


class _PatchHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        try:
            frame = _read_frame(self.request)
        except (PatchError, OSError) as exc:
            try:
                self.request.sendall(encode_frame(
                    RESPONSE_FLAG, bytes([PatchStatus.BAD_FRAME]) + str(exc).encode()))
            except OSError:
                pass
            return
        self.request.sendall(handle_frame(self.server.store, frame))


class PatchClient:
    """Blocking client for the management socket."""

    def __init__(self, socket_path: str, timeout: float = 5.0):
        self.socket_path = socket_path
        self.timeout = timeout

    def request(self, op: int, body: bytes = b"") -> Tuple[PatchStatus, bytes]:
        with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
            sock.settimeout(self.timeout)
            sock.connect(self.socket_path)
            sock.sendall(encode_frame(op, body))
            response = _read_frame(sock)
        rop, rbody = decode_frame(response)
        if not rop & RESPONSE_FLAG:
            raise PatchError(f"peer answered with a request opcode {rop:#04x}")
        if not rbody:
            raise PatchError("empty response body")
        return PatchStatus(rbody[0]), rbody[1:]

    def install(self, containers: bytes) -> Tuple[PatchStatus, bytes]:
        return self.request(PatchOp.INSTALL_PROGRAM, containers)

    def remove(self, program_id: str) -> Tuple[PatchStatus, bytes]:
        return self.request(PatchOp.REMOVE_PROGRAM, program_id.encode())

    def map_put(self, map_id: int, key: bytes, value: bytes) -> Tuple[PatchStatus, bytes]:
        return self.request(PatchOp.MAP_PUT, pack_map_put(map_id, key, value))

    def map_delete(self, map_id: int, key: bytes) -> Tuple[PatchStatus, bytes]:
        return self.request(PatchOp.MAP_DELETE, pack_map_delete(map_id, key))

    def list_programs(self) -> dict:
        status, payload = self.request(PatchOp.LIST)
        if status is not PatchStatus.OK:
            raise PatchError(payload.decode(errors="replace"))
        return json.loads(payload)

    def ping(self, payload: bytes = b"hello") -> bool:
        status, echoed = self.request(PatchOp.PING, payload)
        return status is PatchStatus.OK and echoed == payload
