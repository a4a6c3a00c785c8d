/**
 * Policy container format.
 *
 * A policy travels as a self-describing binary container:
 *
 *     offset  size  field
 *     0       4     magic "IFW1"
 *     4       1     format version (1)
 *     5       1     id_len (1..16)
 *     6       n     program id, UTF-8
 *     +0      1     hook
 *     +1      1     event filter (0xFF = any)
 *     +2      1     state filter (0xFF = any)
 *     +3      1     reserved, must be zero
 *     +4      4     bytecode length, u32 LE
 *     +8      m     bytecode
 *     +8+m    4     CRC-32 (IEEE) over every preceding byte, u32 LE
 *
 * Containers concatenate; a file may carry a batch.  The encoding is
 * bit-exact with what the engine's store loads, which is the whole
 * point of this toolchain.
 */

import { crc32 } from "./crc32";
import { Attach } from "./abi";

export const MAGIC = Buffer.from("IFW1", "ascii");
export const FORMAT_VERSION = 1;
export const MAX_ID_BYTES = 16;

export class ContainerError extends Error {}

/** One deployable rule: bytecode plus its attachment filters. */
export interface PolicyContainer extends Attach {
  id: string;
  bytecode: Buffer;
}

export function encodeContainer(container: PolicyContainer): Buffer {
  const ident = Buffer.from(container.id, "utf-8");
  if (ident.length < 1 || ident.length > MAX_ID_BYTES) {
    throw new ContainerError(
      `program id must encode to 1..${MAX_ID_BYTES} bytes, got ${ident.length}`,
    );
  }
  for (const field of ["hook", "event", "state"] as const) {
    const value = container[field];
    if (!Number.isInteger(value) || value < 0 || value > 0xff) {
      throw new ContainerError(`${field} ${value} outside one byte`);
    }
  }
  const head = Buffer.alloc(8);
  head.writeUInt8(container.hook, 0);
  head.writeUInt8(container.event, 1);
  head.writeUInt8(container.state, 2);
  head.writeUInt8(0, 3);
  head.writeUInt32LE(container.bytecode.length, 4);
  const body = Buffer.concat([
    MAGIC,
    Buffer.from([FORMAT_VERSION, ident.length]),
    ident,
    head,
    container.bytecode,
  ]);
  const crc = Buffer.alloc(4);
  crc.writeUInt32LE(crc32(body), 0);
  return Buffer.concat([body, crc]);
}

/** Decode one container at `offset`; returns the container and the next offset. */
export function decodeContainer(buf: Buffer, offset = 0): [PolicyContainer, number] {
  if (buf.length - offset < 6) {
    throw new ContainerError("container truncated before header");
  }
  if (!buf.subarray(offset, offset + 4).equals(MAGIC)) {
    throw new ContainerError("bad container magic");
  }
  const version = buf.readUInt8(offset + 4);
  if (version !== FORMAT_VERSION) {
    throw new ContainerError(`unsupported container version ${version}`);
  }
  const idLen = buf.readUInt8(offset + 5);
  if (idLen < 1 || idLen > MAX_ID_BYTES) {
    throw new ContainerError(`program id length ${idLen} outside 1..${MAX_ID_BYTES}`);
  }
  const headAt = offset + 6 + idLen;
  if (buf.length < headAt + 8) {
    throw new ContainerError("container truncated inside header");
  }
  const identRaw = buf.subarray(offset + 6, headAt);
  const id = identRaw.toString("utf-8");
  if (!Buffer.from(id, "utf-8").equals(identRaw)) {
    throw new ContainerError("program id is not UTF-8");
  }
  const hook = buf.readUInt8(headAt);
  const event = buf.readUInt8(headAt + 1);
  const state = buf.readUInt8(headAt + 2);
  const reserved = buf.readUInt8(headAt + 3);
  if (reserved !== 0) {
    throw new ContainerError(`reserved byte 0x${reserved.toString(16).padStart(2, "0")} must be zero`);
  }
  const codeLen = buf.readUInt32LE(headAt + 4);
  const codeAt = headAt + 8;
  const crcAt = codeAt + codeLen;
  if (buf.length < crcAt + 4) {
    throw new ContainerError("container truncated inside bytecode");
  }
  const stored = buf.readUInt32LE(crcAt);
  const actual = crc32(buf.subarray(offset, crcAt));
  if (stored !== actual) {
    throw new ContainerError(
      `container CRC mismatch: stored 0x${stored.toString(16).padStart(8, "0")}, ` +
        `computed 0x${actual.toString(16).padStart(8, "0")}`,
    );
  }
  const bytecode = Buffer.from(buf.subarray(codeAt, crcAt));
  return [{ id, hook, event, state, bytecode }, crcAt + 4];
}

/** Decode a concatenated batch; all-or-nothing. */
export function decodeContainers(buf: Buffer): PolicyContainer[] {
  const containers: PolicyContainer[] = [];
  let offset = 0;
  while (offset < buf.length) {
    const [container, next] = decodeContainer(buf, offset);
    containers.push(container);
    offset = next;
  }
  if (containers.length === 0) {
    throw new ContainerError("empty container batch");
  }
  return containers;
}
