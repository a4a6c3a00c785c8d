/**
 * Wire ABI shared with the inspection engine.
 *
 * The context block handed to a program in r1 is `state u64 | event u64 |
 * pkt_len u64 | dc_param[32] u64 | pkt bytes`, all little-endian; the
 * slot table below is append-only and must never be renumbered.  The
 * hook/event/state tables name the attachment filters a container
 * carries.  Everything here duplicates the engine's own tables on
 * purpose: the files that travel between the two sides are binary, and
 * both ends must agree on the numbers without importing each other.
 */

export const CTX_STATE = 0x00;
export const CTX_EVENT = 0x08;
export const CTX_PKT_LEN = 0x10;
export const CTX_DC_BASE = 0x18;
export const NUM_DC_SLOTS = 32;

/** Wildcard for the event/state attachment filters. */
export const ANY = 0xff;

export const HOOKS: Record<string, number> = {
  ll_rx_ctrl: 0,
  ll_rx_data: 1,
  ll_tx: 2,
  smp_rx: 3,
  smp_tx: 4,
};

export const EVENTS: Record<string, number> = {
  advertising_started: 0,
  connection_established: 1,
  pairing_started: 2,
  encryption_started: 3,
  plaintext_data_started: 4,
  session_finished: 5,
  alert: 6,
  packet_observed: 7,
};

export const STATES: Record<string, number> = {
  standby: 0,
  discovery: 1,
  ll_connection: 2,
  key_sharing: 3,
  data_exchange: 4,
  discovery_error: 5,
  connection_break: 6,
  pairing_exploitation: 7,
  encryption_failure: 8,
};

/** dc_param slot indices (context offset = CTX_DC_BASE + 8 * slot). */
export const SLOTS: Record<string, number> = {
  SMP_KEYS: 0,
  SMP_KEYS_FLAGS: 1,
  SMP_ENC_SIZE: 2,
  SMP_ENC_SIZE_PREV: 3,
  SMP_METHOD: 4,
  SMP_METHOD_PREV: 5,
  PEER_BONDED: 6,
  ATTR_SEC_LEVEL: 7,
  ATTR_SEC_LEVEL_PREV: 8,
  REPEAT_COUNT: 9,
  INTERVAL: 10,
  CHANNEL_MAP_POPCOUNT: 11,
  HOP: 12,
  PKT_KIND: 13,
  SMP_OPCODE: 14,
  DECODE_ERROR: 15,
  REPEAT_THRESHOLD: 16,
  STRICT_KEYSIZE: 17,
  PUBKEY_COUNT: 18,
  DHKEY_COUNT: 19,
  PIN_KEY_MISSING: 20,
  ATT_OPCODE: 21,
  ATT_HANDLE: 22,
  REFLECTED: 23,
  L2CAP_CID: 24,
  HOOK: 25,
};

/** Named constants available to rule scripts (bond key flags). */
export const CONSTANTS: Record<string, bigint> = {
  KEYS_AUTHENTICATED: 0x01n,
  KEYS_LTK: 0x04n,
  KEYS_LTK_P256: 0x20n,
};

/** Association-method codes; string enum literals in scripts resolve here. */
export const METHODS: Record<string, bigint> = {
  JUST_WORKS: 0n,
  PASSKEY_ENTRY: 1n,
  NUMERIC_COMPARISON: 2n,
  OOB: 3n,
};

/** Container attachment filters: where a program runs. */
export interface Attach {
  hook: number;
  event: number;
  state: number;
}

function parseField(text: string, names: Record<string, number>, allowAny: boolean): number {
  const key = text.toLowerCase();
  if (allowAny && key === "any") {
    return ANY;
  }
  if (key in names) {
    return names[key];
  }
  const value = /^(0x[0-9a-f]+|\d+)$/.test(key) ? Number(key) : NaN;
  if (!Number.isInteger(value) || value < 0 || value > 0xff) {
    throw new Error(`unknown attach field '${text}'`);
  }
  return value;
}

/** Parse `<hook>:<event>:<state>`; names, decimals, and `any` accepted. */
export function parseAttach(spec: string): Attach {
  const parts = spec.split(":");
  if (parts.length !== 3) {
    throw new Error(`attach spec '${spec}' must be <hook>:<event>:<state>`);
  }
  return {
    hook: parseField(parts[0], HOOKS, false),
    event: parseField(parts[1], EVENTS, true),
    state: parseField(parts[2], STATES, true),
  };
}

function formatField(value: number, names: Record<string, number>): string {
  if (value === ANY) {
    return "any";
  }
  for (const [name, v] of Object.entries(names)) {
    if (v === value) {
      return name;
    }
  }
  return String(value);
}

export function formatAttach(attach: Attach): string {
  return [
    formatField(attach.hook, HOOKS),
    formatField(attach.event, EVENTS),
    formatField(attach.state, STATES),
  ].join(":");
}
