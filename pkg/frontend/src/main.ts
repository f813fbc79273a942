// Console wiring: pick the first session from the service, stream it, fold
// messages into state, render at display refresh, send operator controls.

import type { FrameMessage, Message } from "./codec.js";
import { SessionClient, listSessions } from "./client.js";
import { drawScene, drawSlice, drawTic } from "./render.js";
import type { ConsoleConfig, ConsoleState } from "./state.js";
import { applyStreamEvent, captureReference, defaultConfig, initialState, setConnection } from "./state.js";

const baseUrl = `${location.protocol}//${location.host}`;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

async function start(): Promise<void> {
  const sessions = await listSessions(baseUrl);
  const status = el<HTMLSpanElement>("status");
  if (sessions.length === 0) {
    status.textContent = "no active sessions";
    return;
  }
  const session = sessions[0];
  const config: ConsoleConfig = {
    ...defaultConfig,
    voi: session.voi
      ? {
          centerMm: session.voi.center_mm as [number, number, number],
          radiiMm: session.voi.radii_mm as [number, number, number],
        }
      : null,
    dynamicRangeDb: session.dynamic_range_db,
    steadyWindowS: session.steady_window_s,
    steadySlopeTolerance: session.steady_slope_tolerance,
  };

  let state: ConsoleState = initialState();
  let lastFrame: FrameMessage | null = null;
  let dirty = true;

  const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/sessions/${session.id}/stream`;
  const client = new SessionClient(
    wsUrl,
    (msg: Message) => {
      state = applyStreamEvent(state, msg, config);
      if (msg.kind === "frame") {
        lastFrame = msg;
      }
      dirty = true;
    },
    (connection) => {
      state = setConnection(state, connection);
      dirty = true;
    }
  );
  client.connect();

  el<HTMLButtonElement>("capture").onclick = () => {
    state = captureReference(state, config);
    client.sendControl("capture_reference");
    dirty = true;
  };
  el<HTMLButtonElement>("flash").onclick = () => {
    client.sendControl("flash");
  };
  el<HTMLSelectElement>("mode").onchange = (event) => {
    const mode = (event.target as HTMLSelectElement).value;
    client.sendControl("feedback_mode", [["mode", mode]]);
  };

  const scene = el<HTMLCanvasElement>("scene");
  const slice = el<HTMLCanvasElement>("slice");
  const tic = el<HTMLCanvasElement>("tic");
  const displacement = el<HTMLSpanElement>("displacement");
  const flashButton = el<HTMLButtonElement>("flash");

  function render(): void {
    if (dirty) {
      dirty = false;
      drawScene(scene, state);
      drawSlice(slice, lastFrame, state.feedbackMode === "bmode");
      drawTic(tic, state);
      displacement.textContent =
        state.displacementMm === null ? "--" : `${state.displacementMm.toFixed(1)} mm`;
      status.textContent = `${state.connection} | mode ${state.feedbackMode} | steady: ${state.steady}`;
      flashButton.classList.toggle("warn", state.steady !== "steady");
    }
    requestAnimationFrame(render);
  }
  requestAnimationFrame(render);
}

window.addEventListener("load", () => {
  start().catch((err) => {
    el<HTMLSpanElement>("status").textContent = `error: ${err}`;
  });
});
