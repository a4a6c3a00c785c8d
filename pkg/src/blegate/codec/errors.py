"""Codec error classes.

Decode failures never abort inspection: the engine maps them onto an
UNKNOWN-kind PDU carrying an error code so policies can still see (and
reject) malformed traffic.
"""


class CodecError(Exception):
    """Base class for codec failures."""


class DecodeError(CodecError):
    """Raised when raw bytes cannot be decoded as claimed."""

    #: stable numeric code surfaced to policy programs
    code = 0


class TruncatedPdu(DecodeError):
    """Input is shorter than its header or declared length requires."""

    code = 1


class OversizedPdu(DecodeError):
    """Payload exceeds the protocol maximum (251 bytes on-air)."""

    code = 2


class IllegalFieldValue(DecodeError):
    """A structurally present field has a value the protocol forbids."""

    code = 3


class InvariantViolation(CodecError):
    """Raised when encoding is asked to produce an illegal PDU."""
