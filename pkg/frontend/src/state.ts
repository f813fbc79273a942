// Console state as a pure fold over the message stream: replaying a recorded
// session reproduces the identical final state as live streaming it.

import type { ControlMessage, Message, Pose } from "./codec.js";
import { displacementMm } from "./geometry.js";
import type { EllipsoidVoi, SteadyStatus, Tic } from "./quant.js";
import { steadyStatus, ticSample } from "./quant.js";

export type FeedbackMode = "bmode" | "tracked" | "blind";
export type Connection = "connected" | "reconnecting" | "closed";

export interface ConsoleConfig {
  voi: EllipsoidVoi | null;
  dynamicRangeDb: number;
  steadyWindowS: number;
  steadySlopeTolerance: number;
  staleAfterS: number;
  ticHorizonS: number;
  centerOffsetMm: [number, number, number];
}

export const defaultConfig: ConsoleConfig = {
  voi: null,
  dynamicRangeDb: 60,
  steadyWindowS: 20,
  steadySlopeTolerance: 0.005,
  staleAfterS: 0.5,
  ticHorizonS: 180,
  centerOffsetMm: [0, 0, 0],
};

export interface ConsoleState {
  livePose: Pose | null;
  referencePose: Pose | null;
  feedbackMode: FeedbackMode;
  tic: Tic;
  ticSinceFlash: Tic;
  steady: SteadyStatus;
  displacementMm: number | null;
  flashTimes: number[];
  infusionStartS: number | null;
  connection: Connection;
  lastEventUs: number;
  lastTrackerOkUs: number | null;
  stale: boolean;
  lastFrameQuality: number;
}

export function initialState(): ConsoleState {
  return {
    livePose: null,
    referencePose: null,
    feedbackMode: "tracked",
    tic: { times: [], values: [] },
    ticSinceFlash: { times: [], values: [] },
    steady: "unknown",
    displacementMm: null,
    flashTimes: [],
    infusionStartS: null,
    connection: "closed",
    lastEventUs: 0,
    lastTrackerOkUs: null,
    stale: false,
    lastFrameQuality: 0,
  };
}

function withDisplacement(state: ConsoleState, config: ConsoleConfig): ConsoleState {
  const displacement =
    state.livePose && state.referencePose
      ? displacementMm(state.livePose, state.referencePose, config.centerOffsetMm)
      : null;
  return { ...state, displacementMm: displacement };
}

function refreshStale(state: ConsoleState, config: ConsoleConfig): ConsoleState {
  const stale =
    state.lastTrackerOkUs === null ||
    (state.lastEventUs - state.lastTrackerOkUs) / 1e6 > config.staleAfterS;
  return { ...state, stale };
}

function pushTic(tic: Tic, time: number, value: number, horizonS: number): Tic {
  const times = [...tic.times, time];
  const values = [...tic.values, value];
  let drop = 0;
  while (times[times.length - 1] - times[drop] > horizonS) {
    drop += 1;
  }
  return { times: times.slice(drop), values: values.slice(drop) };
}

function applyControl(
  state: ConsoleState,
  msg: ControlMessage,
  config: ConsoleConfig
): ConsoleState {
  const t = msg.timestampUs / 1e6;
  switch (msg.event) {
    case "capture_reference":
      return withDisplacement({ ...state, referencePose: state.livePose }, config);
    case "flash":
      return {
        ...state,
        flashTimes: [...state.flashTimes, t],
        ticSinceFlash: { times: [], values: [] },
        steady: "unknown",
      };
    case "infusion_start":
      return { ...state, infusionStartS: t };
    case "feedback_mode": {
      const mode = msg.params.find(([k]) => k === "mode")?.[1];
      if (mode === "bmode" || mode === "tracked" || mode === "blind") {
        return { ...state, feedbackMode: mode };
      }
      return state;
    }
    default:
      return state;
  }
}

/** Fold one decoded message into the console state (pure). */
export function applyStreamEvent(
  state: ConsoleState,
  msg: Message,
  config: ConsoleConfig = defaultConfig
): ConsoleState {
  let next: ConsoleState = { ...state, lastEventUs: msg.timestampUs };
  if (msg.kind === "tracker") {
    if (!msg.dropout && msg.pose) {
      next = withDisplacement(
        { ...next, livePose: msg.pose, lastTrackerOkUs: msg.timestampUs, lastFrameQuality: msg.quality },
        config
      );
    }
    return refreshStale(next, config);
  }
  if (msg.kind === "frame") {
    if (config.voi) {
      const value = ticSample(msg, config.voi, config.dynamicRangeDb);
      if (value !== null) {
        const t = msg.timestampUs / 1e6;
        next = {
          ...next,
          tic: pushTic(next.tic, t, value, config.ticHorizonS),
          ticSinceFlash: pushTic(next.ticSinceFlash, t, value, Number.POSITIVE_INFINITY),
        };
        next = {
          ...next,
          steady: steadyStatus(next.ticSinceFlash, config.steadyWindowS, config.steadySlopeTolerance),
        };
      }
    }
    return refreshStale(next, config);
  }
  return refreshStale(applyControl(next, msg, config), config);
}

export function applyAll(
  state: ConsoleState,
  messages: Message[],
  config: ConsoleConfig = defaultConfig
): ConsoleState {
  let s = state;
  for (const msg of messages) {
    s = applyStreamEvent(s, msg, config);
  }
  return s;
}

/** Local capture action: applied immediately and echoed by the server. */
export function captureReference(state: ConsoleState, config: ConsoleConfig = defaultConfig): ConsoleState {
  if (!state.livePose) {
    return state;
  }
  return withDisplacement({ ...state, referencePose: state.livePose }, config);
}

export function setConnection(state: ConsoleState, connection: Connection): ConsoleState {
  return { ...state, connection };
}
