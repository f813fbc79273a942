import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import {
  CodecError,
  decodeMessage,
  encodeMessage,
  StreamDecoder,
  type Message,
} from "../src/codec.js";

const messageCases = JSON.parse(
  readFileSync(new URL("./fixtures/messages.json", import.meta.url), "utf-8")
) as Array<{ name: string; b64: string; expected: Record<string, unknown> }>;

const sessionBlob = new Uint8Array(
  readFileSync(new URL("./fixtures/session.bin", import.meta.url))
);
const sessionMeta = JSON.parse(
  readFileSync(new URL("./fixtures/session.json", import.meta.url), "utf-8")
);

function fromB64(b64: string): Uint8Array {
  return new Uint8Array(Buffer.from(b64, "base64"));
}

describe("cross-language decoding of backend-encoded fixtures", () => {
  for (const testCase of messageCases) {
    it(`decodes ${testCase.name}`, () => {
      const msg = decodeMessage(fromB64(testCase.b64));
      const expected = testCase.expected;
      expect(msg.kind).toBe(expected.kind);
      expect(msg.timestampUs).toBe(expected.timestampUs);
      if (msg.kind === "frame") {
        expect(msg.dims).toEqual(expected.dims);
        expect(msg.voxelSize).toEqual(expected.voxelSize);
        expect(Array.from(msg.voxels)).toEqual(expected.voxels);
      }
      if (msg.kind === "tracker") {
        expect(msg.quality).toBeCloseTo(expected.quality as number, 7);
        expect(msg.dropout).toBe(expected.dropout);
      }
      if (msg.kind === "control") {
        expect(msg.event).toBe(expected.event);
        expect(msg.params).toEqual(expected.params);
      }
      const pose = (expected as { pose: null | { quaternion: number[]; translation: number[] } })
        .pose;
      if ("pose" in expected) {
        if (pose === null) {
          expect((msg as { pose: unknown }).pose).toBeNull();
        } else {
          const got = (msg as { pose: { quaternion: number[]; translation: number[] } }).pose;
          expect(got.quaternion).toEqual(pose.quaternion);
          expect(got.translation).toEqual(pose.translation);
        }
      }
    });
  }

  it("re-encodes fixtures to the identical bytes", () => {
    for (const testCase of messageCases) {
      const raw = fromB64(testCase.b64);
      const msg = decodeMessage(raw);
      expect(Buffer.from(encodeMessage(msg)).equals(Buffer.from(raw))).toBe(true);
    }
  });
});

describe("round trips and stream decoding", () => {
  it("encode/decode identity for locally built messages", () => {
    const messages: Message[] = [
      {
        kind: "tracker",
        timestampUs: 123456,
        pose: { quaternion: [1, 0, 0, 0], translation: [3, 4, 0] },
        quality: 0.5,
        dropout: false,
      },
      { kind: "tracker", timestampUs: 123457, pose: null, quality: 0, dropout: true },
      { kind: "control", timestampUs: 9, event: "flash", params: [] },
      {
        kind: "frame",
        timestampUs: 10,
        pose: null,
        dims: [2, 3, 2],
        voxelSize: [1, 1, 1],
        voxels: new Uint8Array([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
      },
    ];
    for (const msg of messages) {
      expect(decodeMessage(encodeMessage(msg))).toEqual(msg);
    }
  });

  it("control flash payload is the exact ASCII bytes", () => {
    const data = encodeMessage({ kind: "control", timestampUs: 0, event: "flash", params: [] });
    expect(Buffer.from(data.subarray(18)).toString("utf-8")).toBe("event=flash");
  });

  it("decodes the full recorded session in arbitrary chunks", () => {
    const whole = new StreamDecoder().feed(sessionBlob);
    expect(whole.length).toBe(sessionMeta.n_messages);

    const chunked = new StreamDecoder();
    const out: Message[] = [];
    let offset = 0;
    let step = 1;
    while (offset < sessionBlob.length) {
      const next = Math.min(sessionBlob.length, offset + step);
      out.push(...chunked.feed(sessionBlob.subarray(offset, next)));
      offset = next;
      step = (step * 7 + 3) % 4096 || 1;
    }
    expect(out.length).toBe(whole.length);
    expect(out).toEqual(whole);
  });

  it("resynchronizes after garbage", () => {
    const dec = new StreamDecoder();
    const garbage = new Uint8Array([1, 2, 3, 4, 5, 6, 7, 8, 9]);
    const msg = encodeMessage({ kind: "control", timestampUs: 1, event: "flash", params: [] });
    const out = [...dec.feed(garbage), ...dec.feed(msg)];
    expect(out.length).toBe(1);
    expect(out[0].kind).toBe("control");
  });

  it("rejects malformed input with CodecError", () => {
    expect(() => decodeMessage(new Uint8Array([0, 1, 2]))).toThrow(CodecError);
    const msg = encodeMessage({ kind: "control", timestampUs: 1, event: "flash", params: [] });
    const bad = msg.slice();
    bad[0] = 0x58;
    expect(() => decodeMessage(bad)).toThrow(CodecError);
    expect(() => decodeMessage(msg.subarray(0, msg.length - 1))).toThrow(CodecError);
  });
});
