// Binary session protocol, mirroring the server's wire layout bit for bit.
//
// magic "SNAV" | version u8 | kind u8 | timestamp u64 LE (us) |
// payload length u32 LE | payload
//
// Frame payload:   pose 7 x f64 (qw qx qy qz tx ty tz), dims 3 x u16,
//                  voxel size 3 x f32, raw 8-bit voxels.
// Tracker payload: pose 7 x f64, quality f32, dropout u8.
// Control payload: UTF-8 "key=value" lines, first line "event=<name>".
// A pose of seven zeros means "pose missing" (tracker dropout).

export const MAGIC = 0x534e4156; // "SNAV" big-endian read of the 4 magic bytes
export const PROTOCOL_VERSION = 1;
export const HEADER_SIZE = 18;
export const MAX_PAYLOAD = 256 * 1024 * 1024;

export interface Pose {
  quaternion: [number, number, number, number];
  translation: [number, number, number];
}

export interface FrameMessage {
  kind: "frame";
  timestampUs: number;
  pose: Pose | null;
  dims: [number, number, number];
  voxelSize: [number, number, number];
  voxels: Uint8Array;
}

export interface TrackerMessage {
  kind: "tracker";
  timestampUs: number;
  pose: Pose | null;
  quality: number;
  dropout: boolean;
}

export interface ControlMessage {
  kind: "control";
  timestampUs: number;
  event: string;
  params: Array<[string, string]>;
}

export type Message = FrameMessage | TrackerMessage | ControlMessage;

export class CodecError extends Error {}

const KIND_FRAME = 1;
const KIND_TRACKER = 2;
const KIND_CONTROL = 3;

function writePose(view: DataView, offset: number, pose: Pose | null): number {
  const vals = pose
    ? [...pose.quaternion, ...pose.translation]
    : [0, 0, 0, 0, 0, 0, 0];
  for (const v of vals) {
    view.setFloat64(offset, v, true);
    offset += 8;
  }
  return offset;
}

function readPose(view: DataView, offset: number): Pose | null {
  const vals: number[] = [];
  for (let i = 0; i < 7; i++) {
    vals.push(view.getFloat64(offset + 8 * i, true));
  }
  if (vals.every((v) => v === 0)) {
    return null;
  }
  const q = vals.slice(0, 4);
  const norm = Math.hypot(q[0], q[1], q[2], q[3]);
  if (!isFinite(norm) || Math.abs(norm - 1) > 1e-9) {
    throw new CodecError("malformed pose quaternion");
  }
  return {
    quaternion: [vals[0], vals[1], vals[2], vals[3]],
    translation: [vals[4], vals[5], vals[6]],
  };
}

export function encodeMessage(msg: Message): Uint8Array {
  let payload: Uint8Array;
  let kind: number;
  if (msg.kind === "frame") {
    kind = KIND_FRAME;
    const n = msg.dims[0] * msg.dims[1] * msg.dims[2];
    if (msg.voxels.length !== n) {
      throw new CodecError("voxel count does not match dims");
    }
    payload = new Uint8Array(56 + 6 + 12 + n);
    const view = new DataView(payload.buffer);
    let off = writePose(view, 0, msg.pose);
    for (const d of msg.dims) {
      view.setUint16(off, d, true);
      off += 2;
    }
    for (const s of msg.voxelSize) {
      view.setFloat32(off, s, true);
      off += 4;
    }
    payload.set(msg.voxels, off);
  } else if (msg.kind === "tracker") {
    kind = KIND_TRACKER;
    payload = new Uint8Array(56 + 5);
    const view = new DataView(payload.buffer);
    const off = writePose(view, 0, msg.pose);
    view.setFloat32(off, Math.fround(msg.quality), true);
    view.setUint8(off + 4, msg.dropout ? 1 : 0);
  } else {
    kind = KIND_CONTROL;
    const lines = [`event=${msg.event}`, ...msg.params.map(([k, v]) => `${k}=${v}`)];
    payload = new TextEncoder().encode(lines.join("\n"));
  }
  if (payload.length > MAX_PAYLOAD) {
    throw new CodecError("payload exceeds size limit");
  }
  const out = new Uint8Array(HEADER_SIZE + payload.length);
  const view = new DataView(out.buffer);
  out.set([0x53, 0x4e, 0x41, 0x56], 0); // "SNAV"
  view.setUint8(4, PROTOCOL_VERSION);
  view.setUint8(5, kind);
  view.setBigUint64(6, BigInt(msg.timestampUs), true);
  view.setUint32(14, payload.length, true);
  out.set(payload, HEADER_SIZE);
  return out;
}

export function decodeMessage(data: Uint8Array): Message {
  const [msg] = decodeAt(data, 0);
  return msg;
}

function decodeAt(data: Uint8Array, offset: number): [Message, number] {
  if (data.length - offset < HEADER_SIZE) {
    throw new CodecError("truncated header");
  }
  if (
    data[offset] !== 0x53 ||
    data[offset + 1] !== 0x4e ||
    data[offset + 2] !== 0x41 ||
    data[offset + 3] !== 0x56
  ) {
    throw new CodecError("bad magic");
  }
  const view = new DataView(data.buffer, data.byteOffset);
  const version = view.getUint8(offset + 4);
  if (version !== PROTOCOL_VERSION) {
    throw new CodecError(`unsupported protocol version ${version}`);
  }
  const kind = view.getUint8(offset + 5);
  const timestampUs = Number(view.getBigUint64(offset + 6, true));
  const length = view.getUint32(offset + 14, true);
  if (length > MAX_PAYLOAD) {
    throw new CodecError("declared payload too large");
  }
  const start = offset + HEADER_SIZE;
  if (data.length - start < length) {
    throw new CodecError("truncated payload");
  }
  const payload = data.subarray(start, start + length);
  const pview = new DataView(data.buffer, data.byteOffset + start, length);
  const end = start + length;

  if (kind === KIND_FRAME) {
    if (length < 74) {
      throw new CodecError("frame payload too short");
    }
    const pose = readPose(pview, 0);
    const dims: [number, number, number] = [
      pview.getUint16(56, true),
      pview.getUint16(58, true),
      pview.getUint16(60, true),
    ];
    const voxelSize: [number, number, number] = [
      pview.getFloat32(62, true),
      pview.getFloat32(66, true),
      pview.getFloat32(70, true),
    ];
    const n = dims[0] * dims[1] * dims[2];
    if (length !== 74 + n) {
      throw new CodecError("frame payload length does not match dims");
    }
    return [
      { kind: "frame", timestampUs, pose, dims, voxelSize, voxels: payload.slice(74) },
      end,
    ];
  }
  if (kind === KIND_TRACKER) {
    if (length !== 61) {
      throw new CodecError("tracker payload has wrong length");
    }
    const pose = readPose(pview, 0);
    const quality = pview.getFloat32(56, true);
    const dropout = pview.getUint8(60);
    if (dropout !== 0 && dropout !== 1) {
      throw new CodecError("bad dropout flag");
    }
    if (!dropout && pose === null) {
      throw new CodecError("tracker message without pose");
    }
    return [{ kind: "tracker", timestampUs, pose, quality, dropout: dropout === 1 }, end];
  }
  if (kind === KIND_CONTROL) {
    let text: string;
    try {
      text = new TextDecoder("utf-8", { fatal: true }).decode(payload);
    } catch {
      throw new CodecError("control payload is not UTF-8");
    }
    const lines = text.split("\n");
    const pairs: Array<[string, string]> = [];
    for (const line of lines) {
      const eq = line.indexOf("=");
      if (eq < 0) {
        throw new CodecError("control line without '='");
      }
      pairs.push([line.slice(0, eq), line.slice(eq + 1)]);
    }
    if (pairs.length === 0 || pairs[0][0] !== "event") {
      throw new CodecError("control payload must start with event=");
    }
    return [
      { kind: "control", timestampUs, event: pairs[0][1], params: pairs.slice(1) },
      end,
    ];
  }
  throw new CodecError(`unknown message kind ${kind}`);
}

/** Incremental decoder for WebSocket/TCP chunks with magic resync. */
export class StreamDecoder {
  private buf = new Uint8Array(0);
  errors = 0;

  feed(chunk: Uint8Array): Message[] {
    const joined = new Uint8Array(this.buf.length + chunk.length);
    joined.set(this.buf, 0);
    joined.set(chunk, this.buf.length);
    this.buf = joined;
    const out: Message[] = [];
    for (;;) {
      const start = this.findMagic();
      if (start < 0) {
        const keep = Math.min(this.buf.length, 3);
        this.buf = this.buf.slice(this.buf.length - keep);
        return out;
      }
      if (start > 0) {
        this.errors += 1;
        this.buf = this.buf.slice(start);
      }
      if (this.buf.length < HEADER_SIZE) {
        return out;
      }
      const view = new DataView(this.buf.buffer, this.buf.byteOffset);
      const length = view.getUint32(14, true);
      if (view.getUint8(4) !== PROTOCOL_VERSION || length > MAX_PAYLOAD) {
        this.errors += 1;
        this.buf = this.buf.slice(1);
        continue;
      }
      const total = HEADER_SIZE + length;
      if (this.buf.length < total) {
        return out;
      }
      try {
        const [msg] = decodeAt(this.buf.subarray(0, total), 0);
        out.push(msg);
        this.buf = this.buf.slice(total);
      } catch {
        this.errors += 1;
        this.buf = this.buf.slice(1);
      }
    }
  }

  private findMagic(): number {
    for (let i = 0; i + 3 < this.buf.length; i++) {
      if (
        this.buf[i] === 0x53 &&
        this.buf[i + 1] === 0x4e &&
        this.buf[i + 2] === 0x41 &&
        this.buf[i + 3] === 0x56
      ) {
        return i;
      }
    }
    return -1;
  }
}
