"""Wire codecs for the traffic the inspection engine mediates."""

from .att import ATT_ERROR_PIN_OR_KEY_MISSING, AttOpcode, AttPdu, decode_att, encode_att
from .errors import (
    CodecError,
    DecodeError,
    IllegalFieldValue,
    InvariantViolation,
    OversizedPdu,
    TruncatedPdu,
)
from .ll import (
    L2CAP_CID_ATT,
    L2CAP_CID_SMP,
    MAX_PAYLOAD,
    AdvPdu,
    Channel,
    ConnectInd,
    L2capFrame,
    LinkLayerPdu,
    LlCtrlPdu,
    LlKind,
    ScanReq,
    decode_ll,
    encode_ll,
    header_kind,
)
from .smp import (
    MAX_ENC_KEY_SIZE,
    MIN_ENC_KEY_SIZE,
    AssociationMethod,
    AuthReq,
    IoCapability,
    PairingFeatures,
    SmpOpcode,
    SmpPdu,
    association_method,
    decode_smp,
    encode_smp,
)

__all__ = [
    "ATT_ERROR_PIN_OR_KEY_MISSING", "AttOpcode", "AttPdu", "decode_att", "encode_att",
    "CodecError", "DecodeError", "IllegalFieldValue", "InvariantViolation",
    "OversizedPdu", "TruncatedPdu",
    "L2CAP_CID_ATT", "L2CAP_CID_SMP", "MAX_PAYLOAD",
    "AdvPdu", "Channel", "ConnectInd", "L2capFrame", "LinkLayerPdu", "LlCtrlPdu",
    "LlKind", "ScanReq", "decode_ll", "encode_ll", "header_kind",
    "MAX_ENC_KEY_SIZE", "MIN_ENC_KEY_SIZE", "AssociationMethod", "AuthReq",
    "IoCapability", "PairingFeatures", "SmpOpcode", "SmpPdu",
    "association_method", "decode_smp", "encode_smp",
]
