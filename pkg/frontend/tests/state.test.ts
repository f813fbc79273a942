import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import type { Message, TrackerMessage } from "../src/codec.js";
import { StreamDecoder } from "../src/codec.js";
import { displacementMm } from "../src/geometry.js";
import {
  applyAll,
  applyStreamEvent,
  captureReference,
  defaultConfig,
  initialState,
  type ConsoleConfig,
} from "../src/state.js";

const sessionBlob = new Uint8Array(
  readFileSync(new URL("./fixtures/session.bin", import.meta.url))
);
const sessionMeta = JSON.parse(
  readFileSync(new URL("./fixtures/session.json", import.meta.url), "utf-8")
);

const sessionMessages: Message[] = new StreamDecoder().feed(sessionBlob);

const sessionConfig: ConsoleConfig = {
  ...defaultConfig,
  voi: {
    centerMm: sessionMeta.voi.center_mm,
    radiiMm: sessionMeta.voi.radii_mm,
  },
  dynamicRangeDb: sessionMeta.dynamic_range_db,
};

function tracker(timestampUs: number, translation: [number, number, number]): TrackerMessage {
  return {
    kind: "tracker",
    timestampUs,
    pose: { quaternion: [1, 0, 0, 0], translation },
    quality: 0,
    dropout: false,
  };
}

describe("console state is a pure fold over the stream", () => {
  it("replay reproduces the identical final state", () => {
    const once = applyAll(initialState(), sessionMessages, sessionConfig);
    let chunked = initialState();
    for (let i = 0; i < sessionMessages.length; i += 7) {
      chunked = applyAll(chunked, sessionMessages.slice(i, i + 7), sessionConfig);
    }
    expect(JSON.stringify(chunked)).toBe(JSON.stringify(once));
  });

  it("final displacement matches the backend displacement formula", () => {
    const final = applyAll(initialState(), sessionMessages, sessionConfig);
    expect(final.displacementMm).not.toBeNull();
    expect(Math.abs((final.displacementMm as number) - sessionMeta.final_displacement_mm)).toBeLessThan(0.1);
  });

  it("flash markers and mode arrive from the stream", () => {
    const final = applyAll(initialState(), sessionMessages, sessionConfig);
    expect(final.flashTimes).toEqual(sessionMeta.flash_times_s);
    expect(final.feedbackMode).toBe(sessionMeta.feedback_mode);
    expect(final.tic.times.length).toBeGreaterThan(10);
    expect(final.referencePose).not.toBeNull();
  });
});

describe("capture reference semantics", () => {
  it("capture sets the reference and zeroes the displacement", () => {
    let state = initialState();
    state = applyStreamEvent(state, tracker(0, [10, 0, 0]));
    expect(state.displacementMm).toBeNull(); // no reference yet
    state = captureReference(state);
    expect(state.referencePose).toEqual(state.livePose);
    expect(state.displacementMm).toBe(0);
  });

  it("moving after capture shows the metric displacement", () => {
    let state = initialState();
    state = applyStreamEvent(state, tracker(0, [0, 0, 0]));
    state = captureReference(state);
    state = applyStreamEvent(state, tracker(1_000_000, [3, 4, 0]));
    expect(state.displacementMm).toBeCloseTo(5.0, 9);
    expect(state.displacementMm).toBeCloseTo(
      displacementMm(state.livePose!, state.referencePose!),
      12
    );
  });

  it("a second capture replaces the reference", () => {
    let state = initialState();
    state = applyStreamEvent(state, tracker(0, [0, 0, 0]));
    state = captureReference(state);
    state = applyStreamEvent(state, tracker(1_000_000, [5, 0, 0]));
    state = captureReference(state);
    expect(state.referencePose!.translation).toEqual([5, 0, 0]);
    expect(state.displacementMm).toBe(0);
  });

  it("capture without a live pose is a no-op", () => {
    const state = captureReference(initialState());
    expect(state.referencePose).toBeNull();
  });
});

describe("dropouts and staleness", () => {
  it("keeps the last pose and flags stale after 0.5 s of dropouts", () => {
    let state = initialState();
    state = applyStreamEvent(state, tracker(0, [1, 2, 3]));
    expect(state.stale).toBe(false);
    const dropout: TrackerMessage = {
      kind: "tracker",
      timestampUs: 400_000,
      pose: null,
      quality: 0,
      dropout: true,
    };
    state = applyStreamEvent(state, dropout);
    expect(state.stale).toBe(false); // only 0.4 s yet
    state = applyStreamEvent(state, { ...dropout, timestampUs: 700_000 });
    expect(state.stale).toBe(true);
    expect(state.livePose!.translation).toEqual([1, 2, 3]);
    state = applyStreamEvent(state, tracker(800_000, [1, 2, 3]));
    expect(state.stale).toBe(false);
  });
});

describe("blind mode and controls", () => {
  it("mode switch keeps the TIC flowing", () => {
    let state = applyAll(initialState(), sessionMessages.slice(0, 80), sessionConfig);
    state = applyStreamEvent(
      state,
      { kind: "control", timestampUs: state.lastEventUs, event: "feedback_mode", params: [["mode", "blind"]] },
      sessionConfig
    );
    const before = state.tic.times.length;
    state = applyAll(state, sessionMessages.slice(80, 160), sessionConfig);
    expect(state.feedbackMode).toBe("blind");
    expect(state.tic.times.length).toBeGreaterThan(before);
  });

  it("flash resets the steady indicator segment", () => {
    const state = applyAll(initialState(), sessionMessages, sessionConfig);
    // samples arriving after the flash control (>= its timestamp) remain
    const afterFlashSamples = state.ticSinceFlash.times.every(
      (t) => t >= sessionMeta.flash_times_s[0]
    );
    expect(afterFlashSamples).toBe(true);
    expect(state.ticSinceFlash.times.length).toBeLessThan(state.tic.times.length);
  });
});

describe("latency budget proxies", () => {
  it("applies a tracker message in well under 100 ms", () => {
    let state = applyAll(initialState(), sessionMessages.slice(0, 50), sessionConfig);
    const t0 = performance.now();
    for (let i = 0; i < 100; i++) {
      state = applyStreamEvent(state, tracker(i, [i, 0, 0]), sessionConfig);
    }
    const perMessageMs = (performance.now() - t0) / 100;
    expect(perMessageMs).toBeLessThan(100);
  });

  it("folds a frame into the TIC in well under 250 ms", () => {
    const frames = sessionMessages.filter((m) => m.kind === "frame");
    let state = applyAll(initialState(), sessionMessages.slice(0, 20), sessionConfig);
    const t0 = performance.now();
    for (const frame of frames.slice(0, 10)) {
      state = applyStreamEvent(state, frame, sessionConfig);
    }
    const perFrameMs = (performance.now() - t0) / 10;
    expect(perFrameMs).toBeLessThan(250);
  });
});
