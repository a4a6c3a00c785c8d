"""Bounded key/value maps shared between policies, engine and patch channel.

Operations are linearizable at map-op granularity: every mutation happens
under the owning store's lock, and programs see map state only through
the helper calls.  Keys and values are fixed-size byte strings; the
VM-facing helpers additionally require the 8/8 shape so a u64 register
can carry them.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class MapError(Exception):
    """Base class for map-op failures."""


class UnknownMap(MapError):
    pass


class MapFull(MapError):
    pass


class BadMapValue(MapError):
    """Key or value of the wrong size for this map."""


@dataclass
class VmMap:
    name: str
    map_id: int
    key_size: int = 8
    value_size: int = 8
    max_entries: int = 64
    entries: dict = field(default_factory=dict)

    def _check_key(self, key: bytes) -> bytes:
        key = bytes(key)
        if len(key) != self.key_size:
            raise BadMapValue(f"{self.name}: key must be {self.key_size} bytes, got {len(key)}")
        return key

    def get(self, key: bytes) -> bytes | None:
        return self.entries.get(self._check_key(key))

    def put(self, key: bytes, value: bytes) -> None:
        key = self._check_key(key)
        value = bytes(value)
        if len(value) != self.value_size:
            raise BadMapValue(
                f"{self.name}: value must be {self.value_size} bytes, got {len(value)}")
        if key not in self.entries and len(self.entries) >= self.max_entries:
            raise MapFull(f"{self.name}: capacity {self.max_entries} reached")
        self.entries[key] = value

    def delete(self, key: bytes) -> bool:
        return self.entries.pop(self._check_key(key), None) is not None

    def items(self):
        return list(self.entries.items())

    def vm_accessible(self) -> bool:
        return self.key_size == 8 and self.value_size == 8


class MapSet:
    """Maps addressable by name (management plane) and id (VM plane)."""

    def __init__(self):
        self._by_name: dict = {}
        self._by_id: dict = {}

    def create(self, name: str, map_id: int, **kwargs) -> VmMap:
        if name in self._by_name or map_id in self._by_id:
            raise MapError(f"map {name!r}/{map_id} already exists")
        m = VmMap(name, map_id, **kwargs)
        self._by_name[name] = m
        self._by_id[map_id] = m
        return m

    def by_name(self, name: str) -> VmMap:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownMap(f"no map named {name!r}") from None

    def by_id(self, map_id: int) -> VmMap:
        try:
            return self._by_id[map_id]
        except KeyError:
            raise UnknownMap(f"no map with id {map_id}") from None

    def names(self):
        return sorted(self._by_name)
