"""Bond database: what we remember about previously paired peers.

The security history drives the downgrade checks: key size, association
method, key-type flags, and the security level at which each attribute
handle was last served.  Persisted as one text line per peer so test
fixtures and operators can read and edit it:

    <addr> <enc_key_size> <method> <flags-hex> [<handle-hex>:<level> ...]

Addresses are 12 lowercase hex digits; colons are accepted on input.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .vm.ctx import KEY_FLAG_AUTHENTICATED

__all__ = ["BondRecord", "BondStore", "BondFormatError", "normalize_address"]


class BondFormatError(ValueError):
    pass


def normalize_address(address) -> str:
    if isinstance(address, (bytes, bytearray)):
        text = bytes(address).hex()
    else:
        text = str(address).replace(":", "").strip().lower()
    if len(text) != 12 or any(c not in "0123456789abcdef" for c in text):
        raise BondFormatError(f"bad device address {address!r}")
    return text


@dataclass
class BondRecord:
    address: str
    enc_key_size: int = 0
    method: int = 0
    flags: int = 0
    attr_levels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.address = normalize_address(self.address)

    @property
    def authenticated(self) -> bool:
        return bool(self.flags & KEY_FLAG_AUTHENTICATED)

    def level_for(self, handle: int) -> int:
        return self.attr_levels.get(handle, 0)

    def record_access(self, handle: int, level: int) -> None:
        if level > self.attr_levels.get(handle, 0):
            self.attr_levels[handle] = level


class BondStore:
    def __init__(self, records=()):
        self._records: dict = {}
        for record in records:
            self.put(record)

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, address) -> bool:
        return normalize_address(address) in self._records

    def get(self, address) -> BondRecord | None:
        return self._records.get(normalize_address(address))

    def put(self, record: BondRecord) -> None:
        self._records[record.address] = record

    def remove(self, address) -> bool:
        return self._records.pop(normalize_address(address), None) is not None

    def records(self) -> list:
        return [self._records[a] for a in sorted(self._records)]

    # -- persistence ---------------------------------------------------------

    @classmethod
    def load(cls, path) -> "BondStore":
        store = cls()
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) < 4:
                raise BondFormatError(f"{path}:{lineno}: want at least 4 fields, got {len(fields)}")
            try:
                record = BondRecord(
                    fields[0],
                    enc_key_size=int(fields[1]),
                    method=int(fields[2]),
                    flags=int(fields[3], 16),
                )
                for pair in fields[4:]:
                    handle, level = pair.split(":")
                    record.attr_levels[int(handle, 16)] = int(level)
            except ValueError as exc:
                raise BondFormatError(f"{path}:{lineno}: {exc}") from None
            store.put(record)
        return store

    def save(self, path) -> None:
        """Write atomically: full temp file, then rename over the target."""
        path = Path(path)
        lines = []
        for record in self.records():
            parts = [record.address, str(record.enc_key_size), str(record.method),
                     f"{record.flags:#04x}"]
            parts += [f"{handle:#06x}:{level}"
                      for handle, level in sorted(record.attr_levels.items())]
            lines.append(" ".join(parts))
        payload = "\n".join(lines) + ("\n" if lines else "")
        fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
